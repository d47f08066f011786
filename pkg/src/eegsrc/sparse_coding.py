"""Sparse coding against a fixed dictionary: greedy pursuit, reconstruction,
and reconstruction-error measures.

A dictionary is a matrix of unit-norm column atoms.  Coding is orthogonal
matching pursuit with a fixed sparsity budget (optionally an additional
residual-norm stop for noisy measurements).  Classification elsewhere in the
package is built entirely on the squared reconstruction residual computed
here.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

UNIT_NORM_TOL = 1e-9


class CodingError(ValueError):
    """Raised for dimension mismatches and invalid coding configuration."""


@dataclass(frozen=True)
class CodingConfig:
    """Pursuit stopping parameters.

    max_sparsity: atom budget per signal.
    residual_tol: residual 2-norm threshold, used by the "residual_or_k"
        stop rule to terminate before the atom budget is exhausted.
    stop_rule: "fixed_k" (budget only) or "residual_or_k".
    """

    max_sparsity: int = 10
    residual_tol: float = 0.0
    stop_rule: str = "fixed_k"

    def __post_init__(self):
        if self.max_sparsity < 1:
            raise CodingError("max_sparsity must be >= 1")
        if self.residual_tol < 0:
            raise CodingError("residual_tol must be >= 0")
        if self.stop_rule not in ("fixed_k", "residual_or_k"):
            raise CodingError(f"unknown stop_rule {self.stop_rule!r}")


@dataclass
class Dictionary:
    """Column-atom dictionary with unit-norm atoms.

    atoms: (signal_len, n_atoms) float64; every column has unit 2-norm.
    class_tag: class index this dictionary represents, if any.
    learn_meta: training provenance (algorithm, passes, seeds, logs).
    """

    atoms: np.ndarray
    class_tag: int | None = None
    learn_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        atoms = np.ascontiguousarray(self.atoms, dtype=np.float64)
        if atoms.ndim != 2 or atoms.shape[1] < 1:
            raise CodingError("atoms must be a 2-D matrix with >= 1 column")
        norms = np.linalg.norm(atoms, axis=0)
        bad = np.abs(norms - 1.0) > UNIT_NORM_TOL
        if np.any(bad):
            raise CodingError(
                f"{int(bad.sum())} atom(s) deviate from unit norm "
                f"(max deviation {float(np.abs(norms - 1.0).max()):.3e})"
            )
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "_atoms_t", None)

    @property
    def signal_len(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]

    def atoms_transposed(self) -> np.ndarray:
        """C-contiguous (n_atoms, signal_len) view for the pursuit kernels."""
        cached = getattr(self, "_atoms_t", None)
        if cached is None:
            cached = np.ascontiguousarray(self.atoms.T)
            cached.setflags(write=False)
            object.__setattr__(self, "_atoms_t", cached)
        return cached


@dataclass(frozen=True)
class SparseCode:
    """Sparse coefficient vector: distinct atom indices and aligned values."""

    support: np.ndarray
    values: np.ndarray
    n_atoms: int
    degenerate: bool = False

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if support.shape != values.shape or support.ndim != 1:
            raise CodingError("support and values must be aligned 1-D arrays")
        if len(np.unique(support)) != len(support):
            raise CodingError("support indices must be distinct")
        if len(support) and (support.min() < 0 or support.max() >= self.n_atoms):
            raise CodingError("support index out of range")
        support.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "values", values)

    @property
    def sparsity(self) -> int:
        return len(self.support)

    def dense(self) -> np.ndarray:
        x = np.zeros(self.n_atoms)
        x[self.support] = self.values
        return x


def _as_signal(signal, signal_len: int) -> np.ndarray:
    y = np.ascontiguousarray(signal, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != signal_len:
        raise CodingError(
            f"signal length {y.shape} does not match dictionary signal_len {signal_len}"
        )
    return y


def _stop_norm(y: np.ndarray, cfg: CodingConfig) -> float:
    # scale-relative floor keeps supports invariant under y -> c*y and stops
    # the pursuit once a signal is reconstructed to machine precision
    stop = kernels._RESIDUAL_REL_FLOOR * math.sqrt(float(y @ y))
    if cfg.stop_rule == "residual_or_k":
        stop = max(stop, cfg.residual_tol)
    return stop


def code_transposed(atoms_t: np.ndarray, y: np.ndarray, cfg: CodingConfig) -> SparseCode:
    """Pursuit against a row-major transposed atom matrix (no validation).

    Hot-path entry used by the dictionary trainer; `omp` is the checked
    public wrapper.
    """
    if cfg.max_sparsity > atoms_t.shape[0]:
        raise CodingError(
            f"max_sparsity {cfg.max_sparsity} exceeds n_atoms {atoms_t.shape[0]}"
        )
    support, values, _, degenerate = kernels.omp_kernel(
        atoms_t, y, cfg.max_sparsity, _stop_norm(y, cfg)
    )
    return SparseCode(support, values, atoms_t.shape[0], degenerate)


def omp(dictionary: Dictionary, signal, cfg: CodingConfig) -> SparseCode:
    """Greedy pursuit of `signal` against `dictionary` under `cfg`.

    At each step the atom with maximum absolute correlation with the current
    residual is selected (ties to the lowest index), all selected
    coefficients are re-solved by least squares, and the residual updated.
    Stops at the sparsity budget, at zero correlation, at the residual
    tolerance ("residual_or_k"), or when a numerically collinear atom would
    enter the support (dropped and flagged via SparseCode.degenerate).
    """
    y = _as_signal(signal, dictionary.signal_len)
    return code_transposed(dictionary.atoms_transposed(), y, cfg)


def reconstruct(dictionary: Dictionary, code: SparseCode) -> np.ndarray:
    """Synthesis: sum of selected atoms weighted by their coefficients."""
    if code.n_atoms != dictionary.n_atoms:
        raise CodingError(
            f"code refers to {code.n_atoms} atoms, dictionary has {dictionary.n_atoms}"
        )
    if code.sparsity == 0:
        return np.zeros(dictionary.signal_len)
    return dictionary.atoms[:, code.support] @ code.values


def reconstruction_error(signal, dictionary: Dictionary, code: SparseCode) -> float:
    """Squared 2-norm of the reconstruction residual."""
    y = _as_signal(signal, dictionary.signal_len)
    r = y - reconstruct(dictionary, code)
    return float(r @ r)


def normalized_error(signal, approx) -> float:
    """Relative reconstruction error ||y - approx|| / ||y||."""
    y = np.asarray(signal, dtype=np.float64)
    a = np.asarray(approx, dtype=np.float64)
    if y.shape != a.shape:
        raise CodingError("signal and approximation shapes differ")
    ynorm = float(np.linalg.norm(y))
    if ynorm == 0.0:
        raise CodingError("normalized_error undefined for a zero-norm signal")
    return float(np.linalg.norm(y - a)) / ynorm


def batch_code(dictionary: Dictionary, epochs, cfg: CodingConfig) -> list[SparseCode]:
    """Element-wise omp over every epoch, order-preserving."""
    data = getattr(epochs, "data", None)
    if data is None:
        data = np.asarray(epochs, dtype=np.float64)
    return [omp(dictionary, row, cfg) for row in data]


# ---------------------------------------------------------------------------
# serialization: <stem>.json metadata + <stem>.bin raw atoms
# (64-bit little-endian floats, column-major)


def save_dictionary(dictionary: Dictionary, stem) -> None:
    stem = Path(stem)
    raw = dictionary.atoms.astype("<f8").tobytes(order="F")
    stem.with_suffix(".bin").write_bytes(raw)
    meta = {
        "signal_len": dictionary.signal_len,
        "n_atoms": dictionary.n_atoms,
        "class_tag": dictionary.class_tag,
        "learn_meta": dictionary.learn_meta,
        "dtype": "<f8",
        "order": "F",
        "checksum_sha256": hashlib.sha256(raw).hexdigest(),
    }
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_dictionary(stem) -> Dictionary:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    raw = stem.with_suffix(".bin").read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    if digest != meta["checksum_sha256"]:
        raise CodingError(f"checksum mismatch for {stem.with_suffix('.bin')}")
    atoms = np.frombuffer(raw, dtype="<f8").reshape(
        (meta["signal_len"], meta["n_atoms"]), order="F"
    )
    return Dictionary(
        atoms=atoms.astype(np.float64),
        class_tag=meta["class_tag"],
        learn_meta=meta["learn_meta"],
    )
