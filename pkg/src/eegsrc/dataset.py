"""Bonn-format EEG ingestion, scenario assembly, cross-validation splits,
noise injection, and synthetic sparse-synthesis data for oracle tests.

The five subsets are single-channel collections of 100 epochs x 4097
samples recorded at 173.61 Hz.  Files are plain text, one integer sample
per line, named <prefix><3-digit index>.txt with the subset-to-prefix map
A->Z, B->O, C->N, D->F, E->S.  The nine classification scenarios are fixed
compositions of those subsets; the class containing subset E, when E
participates, is always class 0.

All randomness uses numpy's default PCG64 generator seeded explicitly, so
every operation is reproducible from its arguments.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

SUBSET_IDS = ("A", "B", "C", "D", "E")
BONN_PREFIX = {"A": "Z", "B": "O", "C": "N", "D": "F", "E": "S"}
DEFAULT_SEGMENT_LEN = 4097
EPOCHS_PER_SUBSET = 100
SAMPLE_RATE_HZ = 173.61

# class compositions per scenario; tuples of subset groups, one group per
# class, with the group containing E listed first whenever E participates
CASE_COMPOSITIONS: dict[str, tuple[tuple[str, ...], ...]] = {
    "I": (("E",), ("A",)),
    "II": (("E",), ("B",)),
    "III": (("E",), ("B",), ("D",)),
    "IV": (("E",), ("C",)),
    "V": (("E",), ("D",)),
    "VI": (("E",), ("A", "B")),
    "VII": (("E",), ("C", "D")),
    "VIII": (("A", "B"), ("C", "D")),
    "IX": (("E",), ("A", "B", "C", "D")),
}
CASE_IDS = tuple(CASE_COMPOSITIONS)


class DatasetError(ValueError):
    """Raised for ingestion failures and invalid dataset arguments."""


@dataclass(frozen=True)
class Epoch:
    """One signal segment with its subset provenance."""

    samples: np.ndarray
    subset_id: str | None = None
    source_index: int | None = None
    sample_rate_hz: float = SAMPLE_RATE_HZ

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DatasetError("epoch samples must be 1-D")
        if self.subset_id is not None and self.subset_id not in SUBSET_IDS:
            raise DatasetError(f"unknown subset_id {self.subset_id!r}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)


@dataclass(frozen=True)
class EpochMatrix:
    """Equal-length epochs stacked row-wise, with optional provenance."""

    data: np.ndarray
    subset_ids: tuple | None = None
    source_indices: tuple | None = None
    sample_rate_hz: float = SAMPLE_RATE_HZ

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DatasetError("epoch matrix must be 2-D (n_epochs, segment_len)")
        for name in ("subset_ids", "source_indices"):
            val = getattr(self, name)
            if val is not None:
                val = tuple(val)
                if len(val) != data.shape[0]:
                    raise DatasetError(f"{name} length does not match epoch count")
                object.__setattr__(self, name, val)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n_epochs(self) -> int:
        return self.data.shape[0]

    @property
    def segment_len(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.n_epochs

    def epoch(self, i: int) -> Epoch:
        return Epoch(
            samples=self.data[i],
            subset_id=self.subset_ids[i] if self.subset_ids else None,
            source_index=self.source_indices[i] if self.source_indices else None,
            sample_rate_hz=self.sample_rate_hz,
        )

    def take(self, indices) -> "EpochMatrix":
        idx = np.asarray(indices, dtype=np.int64)
        return EpochMatrix(
            data=self.data[idx],
            subset_ids=tuple(self.subset_ids[i] for i in idx) if self.subset_ids else None,
            source_indices=tuple(self.source_indices[i] for i in idx)
            if self.source_indices
            else None,
            sample_rate_hz=self.sample_rate_hz,
        )


@dataclass(frozen=True)
class LabeledDataset:
    """Epochs paired with class labels for one scenario."""

    epochs: EpochMatrix
    labels: np.ndarray
    case_id: str
    class_names: tuple[str, ...]

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (self.epochs.n_epochs,):
            raise DatasetError("labels length must equal epoch count")
        if len(labels) and (labels.min() < 0 or labels.max() >= len(self.class_names)):
            raise DatasetError("label out of range for class_names")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            epochs=self.epochs.take(idx),
            labels=self.labels[idx],
            case_id=self.case_id,
            class_names=self.class_names,
        )

    def export_csv(self, path) -> None:
        """Flat rows: epoch_index, case_id, class_index, subset_id, source_index."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["epoch_index", "case_id", "class_index", "subset_id", "source_index"]
            )
            for i in range(self.epochs.n_epochs):
                ep = self.epochs.epoch(i)
                writer.writerow(
                    [
                        i,
                        self.case_id,
                        int(self.labels[i]),
                        ep.subset_id if ep.subset_id is not None else "",
                        ep.source_index if ep.source_index is not None else "",
                    ]
                )


@dataclass(frozen=True)
class FoldSplit:
    """Disjoint train/test index sets covering a dataset exactly once."""

    train_indices: np.ndarray
    test_indices: np.ndarray

    def __post_init__(self):
        for name in ("train_indices", "test_indices"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


# ---------------------------------------------------------------------------
# Bonn-format I/O


def _subset_dir(directory: Path, subset_id: str) -> Path:
    prefix = BONN_PREFIX[subset_id]
    probe = f"{prefix}000.txt"
    for cand in (directory, directory / prefix, directory / subset_id):
        if (cand / probe).is_file():
            return cand
    return directory


def load_bonn_subset(
    directory,
    subset_id: str,
    segment_len: int = DEFAULT_SEGMENT_LEN,
    manifest: Mapping | None = None,
) -> EpochMatrix:
    """Load the 100 text epochs of one subset from `directory`.

    Files may live in `directory` itself or in a `<prefix>/` or
    `<subset_id>/` subdirectory.  Raises DatasetError naming the offending
    file (and line, for parse failures).
    """
    if subset_id not in SUBSET_IDS:
        raise DatasetError(f"unknown subset_id {subset_id!r}")
    directory = Path(directory)
    base = _subset_dir(directory, subset_id)
    prefix = BONN_PREFIX[subset_id]
    expected_hashes = {}
    if manifest is not None:
        expected_hashes = manifest.get("subsets", {}).get(subset_id, {}).get("files", {})
    rows = np.empty((EPOCHS_PER_SUBSET, segment_len))
    for i in range(EPOCHS_PER_SUBSET):
        name = f"{prefix}{i:03d}.txt"
        path = base / name
        if not path.is_file():
            raise DatasetError(f"missing Bonn file {name} in {base}")
        raw = path.read_bytes()
        if name in expected_hashes:
            digest = hashlib.sha256(raw).hexdigest()
            if digest != expected_hashes[name]:
                raise DatasetError(f"checksum mismatch for {name}")
        lines = raw.decode("ascii").splitlines()
        if len(lines) != segment_len:
            raise DatasetError(
                f"{name}: expected {segment_len} samples, found {len(lines)}"
            )
        for lineno, text in enumerate(lines, start=1):
            try:
                rows[i, lineno - 1] = float(text.strip())
            except ValueError:
                raise DatasetError(
                    f"{name}: line {lineno}: not a number: {text.strip()!r}"
                ) from None
    return EpochMatrix(
        data=rows,
        subset_ids=(subset_id,) * EPOCHS_PER_SUBSET,
        source_indices=tuple(range(EPOCHS_PER_SUBSET)),
    )


def write_bonn_subset(epochs: EpochMatrix, directory, subset_id: str) -> None:
    """Write epochs back in Bonn format (one sample per line, LF endings).

    Integer-valued samples round-trip byte-for-byte through
    load_bonn_subset.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    prefix = BONN_PREFIX[subset_id]
    for i in range(epochs.n_epochs):
        lines = []
        for v in epochs.data[i]:
            lines.append(str(int(v)) if float(v).is_integer() else repr(float(v)))
        (directory / f"{prefix}{i:03d}.txt").write_bytes(
            ("\n".join(lines) + "\n").encode("ascii")
        )


def build_manifest(data_dir, subset_ids=SUBSET_IDS) -> dict:
    """SHA-256 manifest of the Bonn files found under `data_dir`."""
    data_dir = Path(data_dir)
    manifest = {"subsets": {}}
    for sid in subset_ids:
        base = _subset_dir(data_dir, sid)
        prefix = BONN_PREFIX[sid]
        files = {}
        for i in range(EPOCHS_PER_SUBSET):
            name = f"{prefix}{i:03d}.txt"
            path = base / name
            if path.is_file():
                files[name] = hashlib.sha256(path.read_bytes()).hexdigest()
        manifest["subsets"][sid] = {"dir": str(base), "files": files}
    return manifest


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# transforms


def decimate(epochs: EpochMatrix, factor: int) -> EpochMatrix:
    """Block-mean decimation by `factor`; the trailing remainder is dropped.

    No anti-alias filter is applied; this is a lossy desk-scale reduction.
    """
    if factor < 1:
        raise DatasetError("decimation factor must be >= 1")
    if factor == 1:
        return epochs
    if epochs.segment_len < factor:
        raise DatasetError("segment shorter than decimation factor")
    out_len = epochs.segment_len // factor
    trimmed = epochs.data[:, : out_len * factor]
    data = trimmed.reshape(epochs.n_epochs, out_len, factor).mean(axis=2)
    return EpochMatrix(
        data=data,
        subset_ids=epochs.subset_ids,
        source_indices=epochs.source_indices,
        sample_rate_hz=epochs.sample_rate_hz / factor,
    )


def zero_mean(epochs: EpochMatrix) -> EpochMatrix:
    """Optional preprocessing: remove each epoch's mean."""
    data = epochs.data - epochs.data.mean(axis=1, keepdims=True)
    return EpochMatrix(
        data=data,
        subset_ids=epochs.subset_ids,
        source_indices=epochs.source_indices,
        sample_rate_hz=epochs.sample_rate_hz,
    )


def assemble_scenario(case_id: str, subsets: Mapping[str, EpochMatrix]) -> LabeledDataset:
    """Build the labeled dataset for one of the nine scenarios.

    Merged subsets form one class with concatenated epochs; the class
    containing subset E is class 0 whenever E participates.
    """
    if case_id not in CASE_COMPOSITIONS:
        raise DatasetError(f"unknown case_id {case_id!r}")
    composition = CASE_COMPOSITIONS[case_id]
    needed = [sid for group in composition for sid in group]
    for sid in needed:
        if sid not in subsets:
            raise DatasetError(f"case {case_id} requires subset {sid}")
    seg_lens = {subsets[sid].segment_len for sid in needed}
    if len(seg_lens) != 1:
        raise DatasetError(f"segment_len mismatch across subsets: {sorted(seg_lens)}")
    blocks, labels, subset_ids, source_indices = [], [], [], []
    for class_index, group in enumerate(composition):
        for sid in group:
            em = subsets[sid]
            blocks.append(em.data)
            labels.extend([class_index] * em.n_epochs)
            subset_ids.extend(em.subset_ids or (sid,) * em.n_epochs)
            source_indices.extend(em.source_indices or range(em.n_epochs))
    epochs = EpochMatrix(
        data=np.vstack(blocks),
        subset_ids=tuple(subset_ids),
        source_indices=tuple(source_indices),
        sample_rate_hz=subsets[needed[0]].sample_rate_hz,
    )
    class_names = tuple("".join(group) for group in composition)
    return LabeledDataset(
        epochs=epochs, labels=np.asarray(labels), case_id=case_id, class_names=class_names
    )


def stratified_kfold(dataset: LabeledDataset, k: int, seed: int) -> list[FoldSplit]:
    """k stratified splits whose test sets partition the index range."""
    if k < 2:
        raise DatasetError("k must be >= 2")
    rng = np.random.default_rng(seed)
    fold_members: list[list[int]] = [[] for _ in range(k)]
    for label in range(dataset.n_classes):
        members = dataset.class_indices(label)
        if len(members) < k:
            raise DatasetError(
                f"class {label} has {len(members)} members, fewer than k={k}"
            )
        order = rng.permutation(len(members))
        for pos, idx in enumerate(members[order]):
            fold_members[pos % k].append(int(idx))
    all_indices = np.arange(dataset.epochs.n_epochs)
    splits = []
    for f in range(k):
        test = np.sort(np.asarray(fold_members[f], dtype=np.int64))
        mask = np.ones(len(all_indices), dtype=bool)
        mask[test] = False
        splits.append(FoldSplit(train_indices=all_indices[mask], test_indices=test))
    return splits


def add_awgn(epochs: EpochMatrix, snr_db: float, seed: int) -> EpochMatrix:
    """Add zero-mean white Gaussian noise at the given SNR to every epoch.

    Noise variance per epoch is its mean-square power divided by
    10^(snr_db/10); draws depend only on (seed, epoch index).  An infinite
    snr_db is the clean sentinel and returns the input unchanged.
    """
    if not np.isfinite(snr_db):
        if snr_db > 0:
            return epochs
        raise DatasetError("snr_db must be finite or the +inf clean sentinel")
    power = np.mean(epochs.data**2, axis=1)
    if np.any(power == 0.0):
        raise DatasetError("zero-power epoch cannot receive calibrated noise")
    noisy = np.empty_like(epochs.data)
    factor = 10.0 ** (snr_db / 10.0)
    for i in range(epochs.n_epochs):
        rng = np.random.default_rng((int(seed), i))
        sigma = np.sqrt(power[i] / factor)
        noisy[i] = epochs.data[i] + rng.normal(0.0, sigma, size=epochs.segment_len)
    return EpochMatrix(
        data=noisy,
        subset_ids=epochs.subset_ids,
        source_indices=epochs.source_indices,
        sample_rate_hz=epochs.sample_rate_hz,
    )


# ---------------------------------------------------------------------------
# synthetic sparse-synthesis data for oracle tests


def _random_unit_atoms(rng, signal_len: int, n_atoms: int) -> np.ndarray:
    atoms = rng.normal(size=(signal_len, n_atoms))
    atoms /= np.linalg.norm(atoms, axis=0, keepdims=True)
    return atoms


def generate_synthetic_dataset(
    n_classes: int,
    signal_len: int,
    n_atoms: int,
    sparsity: int,
    n_train: int,
    n_test: int,
    seed: int,
):
    """Planted-dictionary data: per class, unit-norm Gaussian atoms and
    exact k-sparse synthesized signals.

    Returns (train, test, truth) where truth is one ground-truth atom
    matrix per class.  Every signal satisfies y = atoms @ x exactly.
    """
    if sparsity > n_atoms:
        raise DatasetError("sparsity cannot exceed n_atoms")
    if signal_len < 1:
        raise DatasetError("signal_len must be >= 1")
    rng = np.random.default_rng(seed)
    truth = [_random_unit_atoms(rng, signal_len, n_atoms) for _ in range(n_classes)]

    def synthesize(count: int):
        data = np.empty((count * n_classes, signal_len))
        labels = np.empty(count * n_classes, dtype=np.int64)
        row = 0
        for cls in range(n_classes):
            for _ in range(count):
                support = rng.choice(n_atoms, size=sparsity, replace=False)
                coeffs = rng.normal(size=sparsity)
                data[row] = truth[cls][:, support] @ coeffs
                labels[row] = cls
                row += 1
        return data, labels

    class_names = tuple(f"class{c}" for c in range(n_classes))
    train_data, train_labels = synthesize(n_train)
    test_data, test_labels = synthesize(n_test)
    train = LabeledDataset(
        epochs=EpochMatrix(data=train_data, sample_rate_hz=1.0),
        labels=train_labels,
        case_id="SYNTH",
        class_names=class_names,
    )
    test = LabeledDataset(
        epochs=EpochMatrix(data=test_data, sample_rate_hz=1.0),
        labels=test_labels,
        case_id="SYNTH",
        class_names=class_names,
    )
    return train, test, truth
