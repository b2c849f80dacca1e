"""Command line interface: ``alc {prepare,synth,train,evaluate,compare,sweep}``.

Exit codes: 0 on success, 1 on internal failure, 2 on usage or input errors.
The environment variable ``ALC_SEED`` overrides the master seed.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import AlcError, InputError, ParamError
from .model_zoo import ModelKind, ModelSpec, build, load_checkpoint, save_checkpoint
from .pamap2_io import MetTable, load_subject
from .preprocess import (
    DEFAULT_MAX_GAP,
    DEFAULT_STRIDE,
    DEFAULT_WINDOW,
    ChannelStats,
    SensorConfig,
    WindowSet,
    apply_normalizer,
    file_digest,
    fit_normalizer,
    read_cache,
    split_random,
    subject_windows,
    write_cache,
)
from .stats import compare_pairs, write_comparison_csv
from .synth import SynthSpec, generate_cache
from .train_eval import (
    CLASS_NAMES,
    PROTOCOLS,
    RESULTS_HEADER,
    EvalResult,
    Hyperparams,
    derive_seed,
    evaluate,
    read_results_csv,
    results_rows,
    run_experiment,
    train,
    write_confusion_csv,
    write_manifest,
)

log = logging.getLogger("alc")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(InputError):
    pass


def master_seed(default: int) -> int:
    env = os.environ.get("ALC_SEED")
    if env is None or env == "":
        return default
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"ALC_SEED must be an integer, got {env!r}") from None


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


# --- prepare -------------------------------------------------------------------

def _subject_index(path: Path, fallback: int) -> int:
    digits = re.findall(r"\d+", path.stem)
    return int(digits[-1]) if digits else fallback


def prepare(raw_dir, out_path, met_table=None, window_length=DEFAULT_WINDOW,
            stride=DEFAULT_STRIDE, max_gap=DEFAULT_MAX_GAP) -> WindowSet:
    raw_dir = Path(raw_dir)
    if not raw_dir.is_dir():
        raise UsageError(f"raw data directory not found: {raw_dir}")
    files = sorted(raw_dir.glob("*.dat"))
    if not files:
        raise UsageError(f"no .dat subject files in {raw_dir}")
    table = MetTable.read(met_table)
    parts = []
    for i, f in enumerate(files):
        sid = _subject_index(f, i)
        records = load_subject(f, sid)
        parts.append(subject_windows(records, table, sid, window_length, stride, max_gap))
        log.info("%s: %d records, %d windows", f.name, len(records), len(parts[-1]))
    windows = WindowSet.concat(parts)
    write_cache(out_path, windows)
    return windows


def _print_counts(windows: WindowSet, out=None):
    out = out or sys.stdout
    counts = windows.class_counts()
    print(f"windows: {len(windows)}  channels: {windows.channels}  "
          f"length: {windows.window_length}  subjects: {len(windows.subject_ids())}", file=out)
    for name, c in zip(CLASS_NAMES, counts):
        print(f"  {name}: {c}", file=out)


def cmd_prepare(args) -> int:
    windows = prepare(args.raw_dir, args.out, args.met_table, args.window, args.stride,
                      args.max_gap)
    _print_counts(windows)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SynthSpec(args.subjects, args.per_class, args.channels, args.window, args.noise,
                     master_seed(args.seed))
    windows = generate_cache(spec, args.out)
    _print_counts(windows)
    return EXIT_OK


# --- train / evaluate ------------------------------------------------------------

def _hp_from_args(args) -> Hyperparams:
    return Hyperparams(args.lr, args.epochs, args.batch_size, args.momentum,
                       master_seed(args.seed))


def _subset(windows: WindowSet, subset: str, ratio: float, seed: int) -> WindowSet:
    if subset == "all":
        return windows
    train_set, test_set = split_random(windows, ratio, derive_seed(seed, "split"))
    return train_set if subset == "train" else test_set


def train_checkpoint(cache, config: SensorConfig, kind: ModelKind, hp: Hyperparams, out_dir,
                     subset="train", ratio=0.8):
    """Train on a cache and write ``model.ckpt``, ``history.csv`` and ``manifest.json``."""
    cache = _require_file(cache, "window cache")
    windows = read_cache(cache).for_config(config)
    train_set = _subset(windows, subset, ratio, hp.seed)
    stats = fit_normalizer(train_set)
    model = build(ModelSpec(kind, windows.channels, windows.window_length),
                  seed=derive_seed(hp.seed, "init", kind.value, "all"))
    history = train(model, apply_normalizer(stats, train_set),
                    dataclasses.replace(hp, seed=derive_seed(hp.seed, "shuffle", kind.value,
                                                             "all")))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"config": config.value, "split_seed": hp.seed, "ratio": ratio, "subset": subset}
    save_checkpoint(out_dir / "model.ckpt", model,
                    extras={"norm_mean": stats.mean, "norm_std": stats.std}, meta=meta)
    with open(out_dir / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(history.epoch_loss, start=1):
            w.writerow([i, repr(loss)])
    write_manifest(out_dir / "manifest.json", hp, file_digest(cache),
                   command="train", model=kind.value, **meta)
    return model, history


def cmd_train(args) -> int:
    _, history = train_checkpoint(args.cache, SensorConfig.parse(args.config),
                                  ModelKind.parse(args.model), _hp_from_args(args), args.out,
                                  args.subset, args.ratio)
    print(f"trained {args.model} on {args.config}: final loss "
          f"{history.epoch_loss[-1] if history.epoch_loss else float('nan'):.5f}")
    return EXIT_OK


def evaluate_checkpoint(checkpoint, cache, out_dir, subset=None) -> EvalResult:
    model, extras, header = load_checkpoint(_require_file(checkpoint, "checkpoint"))
    windows = read_cache(_require_file(cache, "window cache"))
    config = SensorConfig(header.get("config", "W18"))
    try:
        windows = windows.for_config(config)
    except ParamError as exc:
        raise UsageError(str(exc)) from None
    if (windows.channels, windows.window_length) != (model.spec.in_channels,
                                                      model.spec.window_length):
        raise UsageError(f"checkpoint expects {model.spec.in_channels} channels x "
                         f"{model.spec.window_length} samples, cache has {windows.channels} x "
                         f"{windows.window_length}")
    if subset is None:
        subset = "test" if header.get("subset") == "train" else "all"
    test_set = _subset(windows, subset, header.get("ratio", 0.8), header.get("split_seed", 0))
    stats = ChannelStats(extras["norm_mean"], extras["norm_std"])
    result = evaluate(model, apply_normalizer(stats, test_set))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "eval.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config", "model", "subset", "n", "accuracy", "macro_f1",
                    "recall_low", "recall_medium", "recall_high"])
        w.writerow([config.value, model.kind.value, subset, len(test_set),
                    repr(result.accuracy), repr(result.macro_f1),
                    *[repr(float(r)) for r in result.per_class_recall]])
    write_confusion_csv(out_dir / "confusion.csv", result.confusion)
    write_confusion_csv(out_dir / "confusion_percent.csv", result.confusion, percent=True)
    return result


def cmd_evaluate(args) -> int:
    result = evaluate_checkpoint(args.checkpoint, args.cache, args.out, args.subset)
    print(f"accuracy {result.accuracy:.4f}  macro-F1 {result.macro_f1:.4f}")
    return EXIT_OK


# --- compare ---------------------------------------------------------------------

def scores_from_results(rows, model=None, protocol=None, metric="macro_f1"):
    """Group results rows into ``{config: {(subject, repeat): score}}`` for one model."""
    models = sorted({r["model"] for r in rows})
    if model is None:
        if len(models) != 1:
            raise UsageError(f"results hold several models {models}; pick one with --model")
        model = models[0]
    out: dict[str, dict] = {}
    for r in rows:
        if r["model"] != model or (protocol and r["protocol"] != protocol):
            continue
        out.setdefault(r["config"], {})[(r["subject"], r["repeat"])] = r[metric]
    return out


def _parse_pairs(text):
    if not text:
        return None
    pairs = []
    for item in text.split(","):
        a, sep, b = item.strip().partition("-")
        if not sep:
            raise UsageError(f"bad pair {item!r}; expected e.g. WO-WA")
        pairs.append((SensorConfig.parse(a).value, SensorConfig.parse(b).value))
    return pairs


def compare_results(result_files, out_path, model=None, protocol=None, pairs=None, alpha=0.05):
    rows = []
    for f in result_files:
        rows.extend(read_results_csv(_require_file(f, "results file")))
    scores = scores_from_results(rows, model, protocol)
    try:
        report = compare_pairs(scores, pairs, alpha)
    except ParamError as exc:
        raise UsageError(str(exc)) from None
    write_comparison_csv(out_path, report)
    return report


def cmd_compare(args) -> int:
    report = compare_results(args.results, args.out, args.model, args.protocol,
                             _parse_pairs(args.pairs), args.alpha)
    for r in report:
        verdict = "significant" if r.significant else "not significant"
        print(f"{r.pair}: W={r.statistic:g} p={r.p_value:.5g} ({r.method}) -> {verdict} "
              f"at {r.threshold:.4g}")
    return EXIT_OK


# --- sweep -----------------------------------------------------------------------

@dataclass
class RunConfig:
    dataset: str | None = None  # window cache file or raw PAMAP2 directory
    synth: dict | None = None
    configs: list = field(default_factory=lambda: [c.value for c in SensorConfig])
    models: list = field(default_factory=lambda: [k.value for k in ModelKind])
    hyperparams: dict = field(default_factory=lambda: asdict(Hyperparams()))
    protocol: str = "random80_20"
    repeats: int = 2
    output_dir: str = "runs/sweep"
    met_table: str | None = None
    workers: int = 1

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        doc = json.loads(_require_file(path, "run config").read_text())
        unknown = set(doc) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise UsageError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**doc)

    def validate(self) -> "RunConfig":
        if not self.configs or not self.models:
            raise UsageError("select at least one sensor config and one model")
        self.configs = [SensorConfig.parse(c).value for c in self.configs]
        self.models = [ModelKind.parse(m).value for m in self.models]
        if self.protocol not in PROTOCOLS:
            raise UsageError(f"protocol must be one of {PROTOCOLS}")
        if self.dataset is None and self.synth is None:
            raise UsageError("run config needs a dataset path or a synth spec")
        self.hyperparams = asdict(Hyperparams(**{**asdict(Hyperparams()), **self.hyperparams}))
        if self.repeats < 1:
            raise UsageError("repeats must be >= 1")
        return self


def _cell_digest(rc: RunConfig, config: str, model: str, dataset_digest: str) -> str:
    doc = {"config": config, "model": model, "protocol": rc.protocol, "repeats": rc.repeats,
           "hyperparams": rc.hyperparams, "dataset": dataset_digest, "version": __version__}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _run_cell(job):
    cache, cell_dir, config, model, hp, protocol, repeats, digest = job
    windows = read_cache(cache)
    exp = run_experiment(SensorConfig(config), ModelKind(model), windows, Hyperparams(**hp),
                         protocol, repeats)
    cell_dir = Path(cell_dir)
    cell_dir.mkdir(parents=True, exist_ok=True)
    with open(cell_dir / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        w.writerows(results_rows(exp))
    write_confusion_csv(cell_dir / "confusion.csv", exp.result.confusion)
    write_confusion_csv(cell_dir / "confusion_percent.csv", exp.result.confusion, percent=True)
    summary = {"digest": digest, "config": config, "model": model,
               "accuracy": exp.result.accuracy, "macro_f1": exp.result.macro_f1,
               "per_class_recall": exp.result.per_class_recall.tolist(),
               "confusion": exp.result.confusion.tolist(), "loss_history": exp.histories}
    # written last: its presence marks the cell complete
    (cell_dir / "cell.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return config, model


def _cell_done(cell_dir: Path, digest: str) -> bool:
    f = cell_dir / "cell.json"
    if not f.is_file() or not (cell_dir / "results.csv").is_file():
        return False
    try:
        return json.loads(f.read_text()).get("digest") == digest
    except json.JSONDecodeError:
        return False


def sweep(rc: RunConfig):
    """Run every (config, model) cell and write the aggregate reports.

    Returns ``(computed, skipped)`` lists of cell names. Cells whose stored
    digest matches are not recomputed.
    """
    rc.validate()
    out = Path(rc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if rc.synth is not None and rc.dataset is None:
        cache = out / "windows.bin"
        generate_cache(SynthSpec(**rc.synth), cache)
    elif Path(rc.dataset).is_dir():
        cache = out / "windows.bin"
        if not cache.is_file():
            prepare(rc.dataset, cache, rc.met_table)
    else:
        cache = _require_file(rc.dataset, "dataset")
    digest = file_digest(cache)
    (out / "run_config.json").write_text(json.dumps(asdict(rc), indent=2, sort_keys=True) + "\n")
    write_manifest(out / "manifest.json", Hyperparams(**rc.hyperparams), digest,
                   command="sweep", protocol=rc.protocol, repeats=rc.repeats,
                   configs=rc.configs, models=rc.models, master_seed=rc.hyperparams["seed"])

    jobs, skipped, cells = [], [], []
    for model in rc.models:
        for config in rc.configs:
            name = f"{config}__{model}"
            cell_dir = out / "cells" / name
            d = _cell_digest(rc, config, model, digest)
            cells.append((config, model, cell_dir))
            if _cell_done(cell_dir, d):
                skipped.append(name)
                log.info("skip %s (complete)", name)
                continue
            jobs.append((str(cache), str(cell_dir), config, model, rc.hyperparams,
                         rc.protocol, rc.repeats, d))
    if rc.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=rc.workers) as pool:
            done = list(pool.map(_run_cell, jobs))
    else:
        done = [_run_cell(j) for j in jobs]
    computed = [f"{c}__{m}" for c, m in done]
    _write_reports(out, rc, cells)
    return computed, skipped


def _write_reports(out: Path, rc: RunConfig, cells):
    summaries = {}
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for config, model, cell_dir in cells:
            with open(cell_dir / "results.csv", newline="") as cf:
                w.writerows(list(csv.reader(cf))[1:])
            summaries[(config, model)] = json.loads((cell_dir / "cell.json").read_text())
    with open(out / "cells.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config", "model", "protocol", "accuracy", "macro_f1",
                    "recall_low", "recall_medium", "recall_high"])
        for config, model, _ in cells:
            s = summaries[(config, model)]
            w.writerow([config, model, rc.protocol, repr(s["accuracy"]), repr(s["macro_f1"]),
                        *[repr(r) for r in s["per_class_recall"]]])
    for metric, fname in (("accuracy", "table_accuracy.csv"), ("macro_f1", "table_f1.csv")):
        with open(out / fname, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", *rc.configs])
            for model in rc.models:
                w.writerow([model, *[f"{summaries[(c, model)][metric]:.4f}" for c in rc.configs]])
    if len(rc.configs) >= 2:
        rows = read_results_csv(out / "results.csv")
        for model in rc.models:
            report = compare_pairs(scores_from_results(rows, model, rc.protocol))
            write_comparison_csv(out / f"comparison_{model}.csv", report)


def cmd_sweep(args) -> int:
    rc = RunConfig.from_json(args.run_config) if args.run_config else RunConfig()
    if args.dataset:
        rc.dataset, rc.synth = args.dataset, None
    if args.configs:
        rc.configs = args.configs.split(",")
    if args.models:
        rc.models = args.models.split(",")
    if args.protocol:
        rc.protocol = args.protocol
    if args.repeats is not None:
        rc.repeats = args.repeats
    if args.out:
        rc.output_dir = args.out
    if args.workers is not None:
        rc.workers = args.workers
    if args.epochs is not None:
        rc.hyperparams = {**rc.hyperparams, "epochs": args.epochs}
    rc.hyperparams = {**rc.hyperparams,
                      "seed": master_seed(rc.hyperparams.get("seed", 0))}
    computed, skipped = sweep(rc)
    print(f"sweep: {len(computed)} cells computed, {len(skipped)} skipped -> {rc.output_dir}")
    return EXIT_OK


# --- entry point -------------------------------------------------------------------

def _add_hp(p):
    hp = Hyperparams()
    p.add_argument("--lr", type=float, default=hp.learning_rate)
    p.add_argument("--epochs", type=int, default=hp.epochs)
    p.add_argument("--batch-size", type=int, default=hp.batch_size)
    p.add_argument("--momentum", type=float, default=hp.momentum)
    p.add_argument("--seed", type=int, default=hp.seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="window PAMAP2 subject files into a cache")
    p.add_argument("raw_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--met-table")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.add_argument("--stride", type=int, default=DEFAULT_STRIDE)
    p.add_argument("--max-gap", type=int, default=DEFAULT_MAX_GAP)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="write a synthetic window cache")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=6)
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--channels", type=int, default=18)
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model on one sensor configuration")
    p.add_argument("--cache", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subset", choices=("train", "all"), default="train")
    p.add_argument("--ratio", type=float, default=0.8)
    _add_hp(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a cache")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subset", choices=("test", "train", "all"))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="Wilcoxon/Bonferroni comparison of configurations")
    p.add_argument("results", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--model")
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--pairs", help="comma-separated, e.g. WO-WA,WO-W18,WA-W18")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="run the configuration x model grid")
    p.add_argument("--run-config")
    p.add_argument("--dataset")
    p.add_argument("--configs")
    p.add_argument("--models")
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--repeats", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"alc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AlcError as exc:
        print(f"alc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as exc:  # noqa: BLE001
        log.exception("internal failure")
        print(f"alc {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
