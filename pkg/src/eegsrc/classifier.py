"""Minimum-residual classification over per-class dictionaries.

A model holds one learned dictionary per class, all with the same atom
count regardless of class size.  An unlabeled signal is coded against every
class dictionary and assigned the class whose reconstruction has the
smallest squared residual (ties to the lowest class index).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import EpochMatrix, LabeledDataset
from .dict_learning import LearnConfig, LearnError, train_cbwrlsu, train_mod
from .sparse_coding import (
    CodingConfig,
    CodingError,
    Dictionary,
    SparseCode,
    code_transposed,
    load_dictionary,
    save_dictionary,
)

ALGORITHMS = ("cbwrlsu", "mod")


@dataclass
class SrcModel:
    """One dictionary per class plus the shared coding configuration."""

    dictionaries: tuple[Dictionary, ...]
    coding: CodingConfig
    class_names: tuple[str, ...]
    case_id: str | None = None

    def __post_init__(self):
        dicts = tuple(self.dictionaries)
        if len(dicts) < 2:
            raise CodingError("a model needs at least two classes")
        if len(self.class_names) != len(dicts):
            raise CodingError("class_names length must match dictionary count")
        lens = {d.signal_len for d in dicts}
        if len(lens) != 1:
            raise CodingError(f"dictionaries disagree on signal_len: {sorted(lens)}")
        for i, d in enumerate(dicts):
            if d.class_tag is not None and d.class_tag != i:
                raise CodingError(f"dictionary {i} carries class_tag {d.class_tag}")
        object.__setattr__(self, "dictionaries", dicts)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def n_classes(self) -> int:
        return len(self.dictionaries)

    @property
    def signal_len(self) -> int:
        return self.dictionaries[0].signal_len


@dataclass(frozen=True)
class ClassificationResult:
    """Assigned label with the per-class residuals and codes behind it."""

    label: int
    residuals: np.ndarray
    codes: tuple[SparseCode, ...] = field(repr=False, default=())

    def __post_init__(self):
        residuals = np.asarray(self.residuals, dtype=np.float64)
        residuals.setflags(write=False)
        object.__setattr__(self, "residuals", residuals)


def train_model(
    train: LabeledDataset,
    learn: LearnConfig,
    algorithm: str = "cbwrlsu",
    mod_iters: int = 20,
) -> SrcModel:
    """Train one dictionary per class on that class's epochs only.

    Every class gets the same LearnConfig (and therefore the same atom
    count), independent of class population.
    """
    if algorithm not in ALGORITHMS:
        raise LearnError(f"unknown algorithm {algorithm!r}")
    dictionaries = []
    for cls in range(train.n_classes):
        members = train.class_indices(cls)
        if len(members) == 0:
            raise LearnError(f"class {cls} ({train.class_names[cls]}) has no epochs")
        class_epochs = train.epochs.take(members)
        if algorithm == "cbwrlsu":
            d = train_cbwrlsu(class_epochs, learn)
        else:
            d = train_mod(class_epochs, learn, iters=mod_iters)
        meta = dict(d.learn_meta)
        meta["class_name"] = train.class_names[cls]
        dictionaries.append(Dictionary(atoms=d.atoms, class_tag=cls, learn_meta=meta))
    return SrcModel(
        dictionaries=tuple(dictionaries),
        coding=learn.coding,
        class_names=train.class_names,
        case_id=train.case_id,
    )


def _residuals(model: SrcModel, y: np.ndarray):
    codes = []
    residuals = np.empty(model.n_classes)
    for i, d in enumerate(model.dictionaries):
        code = code_transposed(d.atoms_transposed(), y, model.coding)
        approx = d.atoms[:, code.support] @ code.values if code.sparsity else 0.0
        r = y - approx
        residuals[i] = float(r @ r)
        codes.append(code)
    return residuals, tuple(codes)


def _check_signal(model: SrcModel, signal) -> np.ndarray:
    y = np.ascontiguousarray(signal, dtype=np.float64)
    if y.shape != (model.signal_len,):
        raise CodingError(
            f"signal shape {y.shape} does not match model signal_len {model.signal_len}"
        )
    return y


def classify(model: SrcModel, signal) -> ClassificationResult:
    """Label = argmin over classes of the squared coding residual."""
    y = _check_signal(model, signal)
    residuals, codes = _residuals(model, y)
    return ClassificationResult(
        label=int(np.argmin(residuals)), residuals=residuals, codes=codes
    )


def classify_batch(model: SrcModel, epochs: EpochMatrix, joint: bool = False):
    """Element-wise classification, or one joint label for the whole matrix.

    Joint mode assigns the class minimizing the Frobenius-norm residual of
    coding every epoch, which equals the argmin of the summed per-epoch
    squared residuals.
    """
    if joint:
        if epochs.n_epochs == 0:
            raise CodingError("joint classification of an empty matrix is undefined")
        total = np.zeros(model.n_classes)
        for row in epochs.data:
            residuals, _ = _residuals(model, _check_signal(model, row))
            total += residuals
        return ClassificationResult(label=int(np.argmin(total)), residuals=total)
    return [classify(model, row) for row in epochs.data]


def residual_profile(model: SrcModel, signal) -> np.ndarray:
    """Per-class (squared residual, normalized error) without committing to
    a label; rows follow class order."""
    y = _check_signal(model, signal)
    residuals, _ = _residuals(model, y)
    ynorm = float(np.linalg.norm(y))
    out = np.empty((model.n_classes, 2))
    out[:, 0] = residuals
    if ynorm == 0.0:
        out[:, 1] = np.nan
    else:
        out[:, 1] = np.sqrt(residuals) / ynorm
    return out


# ---------------------------------------------------------------------------
# model bundle: model.json + one dictionary pair of files per class


def save_model(model: SrcModel, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    refs = []
    for i, d in enumerate(model.dictionaries):
        stem = directory / f"class{i}"
        save_dictionary(d, stem)
        refs.append({"class_index": i, "stem": stem.name})
    meta = {
        "class_names": list(model.class_names),
        "case_id": model.case_id,
        "coding": {
            "max_sparsity": model.coding.max_sparsity,
            "residual_tol": model.coding.residual_tol,
            "stop_rule": model.coding.stop_rule,
        },
        "dictionaries": refs,
    }
    (directory / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_model(directory) -> SrcModel:
    directory = Path(directory)
    meta = json.loads((directory / "model.json").read_text())
    dictionaries = [
        load_dictionary(directory / ref["stem"]) for ref in meta["dictionaries"]
    ]
    coding = CodingConfig(
        max_sparsity=meta["coding"]["max_sparsity"],
        residual_tol=meta["coding"]["residual_tol"],
        stop_rule=meta["coding"]["stop_rule"],
    )
    return SrcModel(
        dictionaries=tuple(dictionaries),
        coding=coding,
        class_names=tuple(meta["class_names"]),
        case_id=meta["case_id"],
    )
