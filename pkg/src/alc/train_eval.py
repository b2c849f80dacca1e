"""Training loop, evaluation metrics and the per-configuration experiment."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff_nn as nn
from .errors import EmptySetError, ParamError
from .model_zoo import Model, ModelKind, ModelSpec, build
from .preprocess import (
    SensorConfig,
    WindowSet,
    apply_normalizer,
    fit_normalizer,
    loso_folds,
    split_random,
)

log = logging.getLogger(__name__)

CLASS_NAMES = ("Low", "Medium", "High")
N_CLASSES = len(CLASS_NAMES)
PROTOCOLS = ("random80_20", "loso")


@dataclass
class Hyperparams:
    learning_rate: float = 0.01
    epochs: int = 15
    batch_size: int = 10
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParamError("learning_rate must be positive")
        if self.epochs < 0:
            raise ParamError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ParamError("batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ParamError("momentum must lie in [0, 1)")


def derive_seed(master: int, *keys) -> int:
    """Stable 32-bit child seed for a tuple of string/int keys."""
    ints = [int(k) if isinstance(k, (int, np.integer)) else
            int.from_bytes(str(k).encode(), "little") % (2 ** 32) for k in keys]
    return int(np.random.SeedSequence([int(master) % (2 ** 32), *ints]).generate_state(1)[0])


# --- metrics ----------------------------------------------------------------

def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def accuracy(cm) -> float:
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise EmptySetError("empty confusion matrix")
    return float(np.trace(cm) / total)


def per_class_recall(cm) -> np.ndarray:
    cm = np.asarray(cm, dtype=np.float64)
    support = cm.sum(axis=1)
    return np.divide(np.diag(cm), support, out=np.zeros(len(cm)), where=support > 0)


def per_class_f1(cm) -> np.ndarray:
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    # F1 = 2TP / (2TP + FP + FN); zero when the class never occurs or is never predicted
    denom = cm.sum(axis=0) + cm.sum(axis=1)
    return np.divide(2 * tp, denom, out=np.zeros(len(cm)), where=denom > 0)


def macro_f1(cm) -> float:
    return float(per_class_f1(cm).mean())


def row_normalize(cm) -> np.ndarray:
    """Rows scaled to percentages; empty rows stay zero."""
    cm = np.asarray(cm, dtype=np.float64)
    rows = cm.sum(axis=1, keepdims=True)
    return np.divide(100.0 * cm, rows, out=np.zeros_like(cm), where=rows > 0)


@dataclass
class EvalResult:
    confusion: np.ndarray
    accuracy: float
    macro_f1: float
    per_class_recall: np.ndarray

    @classmethod
    def from_confusion(cls, cm) -> "EvalResult":
        cm = np.asarray(cm, dtype=np.int64)
        return cls(cm, accuracy(cm), macro_f1(cm), per_class_recall(cm))


# --- training ---------------------------------------------------------------

@dataclass
class TrainHistory:
    epoch_loss: list = field(default_factory=list)


def train(model: Model, train_set: WindowSet, hp: Hyperparams) -> TrainHistory:
    """Mini-batch SGD with momentum over shuffled epochs.

    The last partial batch of each epoch is kept. Returns the mean training
    loss of each epoch.
    """
    if len(train_set) == 0:
        raise EmptySetError("training set is empty")
    rng = np.random.default_rng(hp.seed)
    params = model.parameters()
    opt = nn.SGD(params, lr=hp.learning_rate, momentum=hp.momentum)
    history = TrainHistory()
    model.train()
    n = len(train_set)
    for epoch in range(hp.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hp.batch_size):
            idx = order[start:start + hp.batch_size]
            opt.zero_grad()
            with nn.Tape():
                loss = nn.softmax_cross_entropy(model(train_set.X[idx]), train_set.y[idx])
            nn.backward(loss)
            opt.step()
            total += float(loss.data) * len(idx)
        history.epoch_loss.append(total / n)
        log.debug("epoch %d loss %.5f", epoch + 1, history.epoch_loss[-1])
    model.eval()
    return history


def predict_logits(model: Model, X, batch_size: int = 256) -> np.ndarray:
    model.eval()
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        return np.zeros((0, model.spec.n_classes))
    return np.concatenate([model(X[i:i + batch_size]).data
                           for i in range(0, len(X), batch_size)])


def predict(model: Model, X, batch_size: int = 256) -> np.ndarray:
    """Class predictions; ties resolve to the lowest class index."""
    return predict_logits(model, X, batch_size).argmax(axis=1)


def evaluate(model: Model, test_set: WindowSet) -> EvalResult:
    if len(test_set) == 0:
        raise EmptySetError("test set is empty")
    pred = predict(model, test_set.X)
    return EvalResult.from_confusion(confusion_matrix(test_set.y, pred, model.spec.n_classes))


# --- experiments --------------------------------------------------------------

@dataclass
class SubjectScore:
    subject: int
    repeat: int
    accuracy: float
    macro_f1: float


@dataclass
class ExperimentResult:
    config: SensorConfig
    kind: ModelKind
    protocol: str
    result: EvalResult
    subject_scores: list
    histories: list


def _subject_scores(y_true, y_pred, subjects, repeats, master_seed, frac=0.8):
    scores = []
    for s in sorted(set(subjects.tolist())):
        idx = np.flatnonzero(subjects == s)
        take = max(1, int(np.floor(frac * len(idx) + 0.5)))
        for r in range(repeats):
            rng = np.random.default_rng(derive_seed(master_seed, "eval", s, r))
            sub = np.sort(rng.choice(idx, size=take, replace=False))
            cm = confusion_matrix(y_true[sub], y_pred[sub])
            scores.append(SubjectScore(int(s), r, accuracy(cm), macro_f1(cm)))
    return scores


def split_by_subject(data: WindowSet, ratio: float, seed: int):
    """Random ``ratio`` split made separately inside each subject's windows,
    so every subject contributes test windows."""
    parts = [split_random(data[data.subjects == s], ratio, derive_seed(seed, s))
             for s in data.subject_ids()]
    return (WindowSet.concat(p[0] for p in parts), WindowSet.concat(p[1] for p in parts))


def run_experiment(config: SensorConfig, kind: ModelKind, dataset: WindowSet, hp: Hyperparams,
                   protocol: str = "random80_20", repeats_per_subject: int = 2,
                   ratio: float = 0.8) -> ExperimentResult:
    """Train and evaluate one (configuration, architecture) cell.

    ``dataset`` holds raw (unnormalized) windows with either 18 channels or
    exactly the configuration's channels. Normalization statistics are fit
    on each training fold only. The random protocol splits each subject's
    windows 80/20 on its own. Per-subject scores come from
    ``repeats_per_subject`` independently seeded 80% subsamples of that
    subject's test windows, ordered by (subject, repeat).
    """
    if protocol not in PROTOCOLS:
        raise ParamError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")
    if repeats_per_subject < 1:
        raise ParamError("repeats_per_subject must be >= 1")
    data = dataset.for_config(config)
    if protocol == "random80_20":
        train_set, test_set = split_by_subject(data, ratio, derive_seed(hp.seed, "split"))
        folds = [(None, train_set, test_set)]
    else:
        folds = loso_folds(data)

    y_true, y_pred, subj, histories = [], [], [], []
    for held, train_set, test_set in folds:
        if len(test_set) == 0:
            raise EmptySetError("test fold is empty")
        stats = fit_normalizer(train_set)
        train_set = apply_normalizer(stats, train_set)
        test_set = apply_normalizer(stats, test_set)
        fold_key = "all" if held is None else held
        spec = ModelSpec(kind, data.channels, data.window_length)
        model = build(spec, seed=derive_seed(hp.seed, "init", kind.value, fold_key))
        fold_hp = Hyperparams(hp.learning_rate, hp.epochs, hp.batch_size, hp.momentum,
                              derive_seed(hp.seed, "shuffle", kind.value, fold_key))
        histories.append(train(model, train_set, fold_hp).epoch_loss)
        y_true.append(test_set.y)
        y_pred.append(predict(model, test_set.X))
        subj.append(test_set.subjects)
    y_true, y_pred, subj = map(np.concatenate, (y_true, y_pred, subj))
    result = EvalResult.from_confusion(confusion_matrix(y_true, y_pred))
    scores = _subject_scores(y_true, y_pred, subj, repeats_per_subject, hp.seed)
    return ExperimentResult(config, kind, protocol, result, scores, histories)


# --- report files -------------------------------------------------------------

RESULTS_HEADER = ["config", "model", "protocol", "subject", "repeat", "accuracy", "macro_f1"]


def _fmt(x: float) -> str:
    return repr(float(x))


def results_rows(exp: ExperimentResult):
    for s in exp.subject_scores:
        yield [exp.config.value, exp.kind.value, exp.protocol, s.subject, s.repeat,
               _fmt(s.accuracy), _fmt(s.macro_f1)]


def write_results_csv(path, experiments) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for exp in experiments:
            w.writerows(results_rows(exp))


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(RESULTS_HEADER) - set(rows[0]):
        raise ParamError(f"{path}: missing columns {sorted(set(RESULTS_HEADER) - set(rows[0]))}")
    for r in rows:
        r["subject"] = int(r["subject"])
        r["repeat"] = int(r["repeat"])
        r["accuracy"] = float(r["accuracy"])
        r["macro_f1"] = float(r["macro_f1"])
    return rows


def write_confusion_csv(path, cm, percent: bool = False) -> None:
    """3x3 block with a header row of predicted classes and true-class row labels."""
    values = row_normalize(cm) if percent else np.asarray(cm)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *CLASS_NAMES])
        for name, row in zip(CLASS_NAMES, values):
            w.writerow([name, *[(f"{v:.4f}" if percent else int(v)) for v in row]])


def read_confusion_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(v) for v in r[1:]] for r in rows])


def write_manifest(path, hp: Hyperparams, dataset_digest: str, **extra) -> None:
    doc = {"hyperparams": asdict(hp), "dataset_sha256": dataset_digest, **extra}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
