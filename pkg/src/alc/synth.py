"""Synthetic labeled IMU-like windows for exercising the pipeline without PAMAP2.

Intensity is encoded in movement energy: Low windows are flat, Medium
windows carry a slow unit-amplitude sinusoid and High windows a fast
sinusoid three times larger.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParamError
from .pamap2_io import IntensityLevel
from .preprocess import DEFAULT_WINDOW, WindowSet, write_cache

SAMPLE_RATE = 100.0


@dataclass(frozen=True)
class SynthSpec:
    n_subjects: int = 6
    windows_per_class_per_subject: int = 40
    channels: int = 3
    window_length: int = DEFAULT_WINDOW
    noise_std: float = 0.3
    seed: int = 0

    def __post_init__(self):
        for name in ("n_subjects", "windows_per_class_per_subject", "channels", "window_length"):
            if getattr(self, name) < 1:
                raise ParamError(f"{name} must be >= 1")
        if self.n_subjects > 0xFFFF:
            raise ParamError("too many subjects for a 16-bit subject index")
        if self.noise_std < 0:
            raise ParamError("noise_std must be >= 0")


def _subject(spec: SynthSpec, subject: int):
    rng = np.random.default_rng([spec.seed, subject])
    scale = rng.uniform(0.8, 1.2)
    n, C, L = spec.windows_per_class_per_subject, spec.channels, spec.window_length
    t = np.arange(L) / SAMPLE_RATE
    X = np.empty((3 * n, C, L))
    y = np.repeat([int(level) for level in IntensityLevel], n)
    for i, level in enumerate(y):
        if level == IntensityLevel.LOW:
            signal = np.broadcast_to(rng.normal(0.0, 0.1, size=(C, 1)), (C, L))
        elif level == IntensityLevel.MEDIUM:
            freq = rng.uniform(1.0, 2.0)
            signal = np.broadcast_to(np.sin(2 * np.pi * freq * t), (C, L))
        else:
            freq = rng.uniform(4.0, 6.0)
            phase = rng.uniform(0, 2 * np.pi)
            signal = np.broadcast_to(3.0 * np.sin(2 * np.pi * freq * t + phase), (C, L))
        X[i] = scale * signal
        if spec.noise_std > 0:
            X[i] += rng.normal(0.0, spec.noise_std, size=(C, L))
    return X, y


def generate(spec: SynthSpec) -> WindowSet:
    """Balanced windows for subjects ``0 .. n_subjects-1``; deterministic in ``spec.seed``."""
    parts = [_subject(spec, s) for s in range(spec.n_subjects)]
    X = np.concatenate([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    subjects = np.repeat(np.arange(spec.n_subjects), 3 * spec.windows_per_class_per_subject)
    return WindowSet(X, y, subjects)


def generate_cache(spec: SynthSpec, path) -> WindowSet:
    windows = generate(spec)
    write_cache(path, windows)
    return windows
