import numpy as np
import pytest

from alc.synth import SynthSpec, generate, generate_cache


def pamap2_line(timestamp=8.38, activity=1, heart_rate="NaN", fill="0.0", overrides=None):
    """A 54-token PAMAP2 row; ``overrides`` maps column index -> token."""
    tokens = [repr(timestamp), str(activity), str(heart_rate)] + [fill] * 51
    for col, tok in (overrides or {}).items():
        tokens[col] = tok
    return " ".join(tokens)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synth():
    return generate(SynthSpec(n_subjects=3, windows_per_class_per_subject=6, channels=18,
                              window_length=200, noise_std=0.3, seed=7))


@pytest.fixture
def synth_cache(tmp_path):
    path = tmp_path / "synth.bin"
    generate_cache(SynthSpec(n_subjects=3, windows_per_class_per_subject=8, channels=18,
                             noise_std=0.3, seed=3), path)
    return path


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
