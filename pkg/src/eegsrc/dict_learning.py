"""Per-class sparsifying-dictionary training.

Two trainers are provided:

* an online correlation-weighted recursive-least-squares update that, for
  each incoming signal, replays the correlated part of the history against
  the sub-dictionary of active atoms and leaves every other atom untouched;
* a batch method-of-optimal-directions baseline alternating pursuit with the
  closed-form least-squares dictionary update.

The online trainer maintains the inverse of the accumulated weighted
coefficient Gram restricted to the current active atom set.  Bookkeeping:

* ``gram`` accumulates every processed weighted coefficient outer product
  over the full atom range (each contribution is a small dense patch, at
  most sparsity^2 entries);
* the per-step working inverse is ``inv(delta*I + gram[A, A])`` for active
  set A, maintained across the step's replay sweep by rank-one
  (Sherman-Morrison) downdates;
* a cache keyed by active-set tuples avoids re-inverting when a step's
  active set repeats or is exactly composable from disjoint cached blocks
  plus data-free atoms, so the matrix actually inverted never exceeds the
  active set.

History is keyed by signal id: re-presenting a signal (multiple passes)
replaces its stored code rather than growing the history, and the signal
never replays against itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import EpochMatrix
from .sparse_coding import (
    CodingConfig,
    CodingError,
    Dictionary,
    SparseCode,
    code_transposed,
)


class LearnError(ValueError):
    """Raised for invalid training configuration or inputs."""


@dataclass(frozen=True)
class LearnConfig:
    """Dictionary-training parameters.

    n_atoms: dictionary width (equal for every class regardless of size).
    coding: pursuit configuration shared by training and classification.
    passes: sweeps over the training set (seeded-shuffled order per pass).
    init_strategy: "data_columns" (normalized training signals, Gaussian
        fill beyond the training count) or "gaussian".
    init_seed: drives initialization and the per-pass shuffle.
    c_inverse_init_scale: diagonal loading delta of the accumulated Gram.
    weight_floor: lower clamp for the correlation correction weight.
    recode_every: if > 0, re-code the whole stored history every that many
        steps (experimentation flag; stored codes are otherwise left stale).
    """

    n_atoms: int
    coding: CodingConfig = field(default_factory=CodingConfig)
    passes: int = 3
    init_strategy: str = "data_columns"
    init_seed: int = 0
    c_inverse_init_scale: float = 1e-2
    weight_floor: float = 0.0
    recode_every: int = 0

    def __post_init__(self):
        if self.n_atoms < self.coding.max_sparsity:
            raise LearnError("n_atoms must be >= coding.max_sparsity")
        if self.passes < 1:
            raise LearnError("passes must be >= 1")
        if self.init_strategy not in ("data_columns", "gaussian"):
            raise LearnError(f"unknown init_strategy {self.init_strategy!r}")
        if not (0.0 <= self.weight_floor <= 1.0):
            raise LearnError("weight_floor must lie in [0, 1]")
        if self.c_inverse_init_scale <= 0.0:
            raise LearnError("c_inverse_init_scale must be positive")


def init_dictionary(train: EpochMatrix, cfg: LearnConfig) -> Dictionary:
    """Seeded initial dictionary per cfg.init_strategy."""
    if train.n_epochs == 0:
        raise LearnError("cannot initialize from an empty training set")
    rng = np.random.default_rng(cfg.init_seed)
    signal_len = train.segment_len
    atoms = np.empty((signal_len, cfg.n_atoms))
    if cfg.init_strategy == "gaussian":
        n_data = 0
    else:
        n_data = min(cfg.n_atoms, train.n_epochs)
        picks = rng.integers(0, train.n_epochs, size=n_data)
        for col, row in enumerate(picks):
            atoms[:, col] = train.data[row]
    for col in range(cfg.n_atoms):
        if col >= n_data:
            atoms[:, col] = rng.normal(size=signal_len)
        norm = np.linalg.norm(atoms[:, col])
        while norm < 1e-12:
            atoms[:, col] = rng.normal(size=signal_len)
            norm = np.linalg.norm(atoms[:, col])
        atoms[:, col] /= norm
    return Dictionary(
        atoms=atoms,
        learn_meta={"init_strategy": cfg.init_strategy, "init_seed": cfg.init_seed},
    )


class LearnerState:
    """Mutable online-training state (single writer).

    Exposes, after every step: ``codes`` / ``usage`` (the stored sparse
    history and its atom-to-signal inverse map), ``gram`` (accumulated
    weighted coefficient outer products), ``inverse_cache``, and the last
    step's active set, maintained inverse, and replayed pair list for
    verification against direct inversion.
    """

    def __init__(self, dictionary: Dictionary, cfg: LearnConfig):
        if cfg.n_atoms != dictionary.n_atoms:
            raise LearnError("cfg.n_atoms does not match the dictionary")
        self.cfg = cfg
        self.atoms_t = np.ascontiguousarray(dictionary.atoms.T)
        self.signal_len = dictionary.signal_len
        self.codes: dict[int, SparseCode] = {}
        self.signals: dict[int, np.ndarray] = {}
        self.unit_signals: dict[int, np.ndarray | None] = {}
        self.usage: dict[int, set[int]] = {}
        self.gram = np.zeros((cfg.n_atoms, cfg.n_atoms))
        self.inverse_cache: dict[tuple[int, ...], np.ndarray] = {}
        self._atom_block: dict[int, tuple[int, ...]] = {}
        self.seen_count = 0
        self.reset_count = 0
        self.materialized_count = 0
        self.cache_hits = 0
        self.active_set_sizes: list[int] = []
        self.last_active_set: np.ndarray | None = None
        self.last_inverse: np.ndarray | None = None
        self.last_pairs: list[tuple[float, np.ndarray, np.ndarray]] = []
        self._next_auto_id = 0

    def to_dictionary(self, class_tag=None, learn_meta=None) -> Dictionary:
        return Dictionary(
            atoms=self.atoms_t.T.copy(),
            class_tag=class_tag,
            learn_meta=dict(learn_meta or {}),
        )

    def rebuild_usage(self) -> dict[int, set[int]]:
        """Usage map recomputed from stored codes (consistency check hook)."""
        usage: dict[int, set[int]] = {}
        for sid, code in self.codes.items():
            for atom in code.support:
                usage.setdefault(int(atom), set()).add(sid)
        return usage


def correction_weight(state: LearnerState, new_signal, old_index: int) -> float:
    """Absolute cosine similarity between the new signal and a stored one,
    clamped below by cfg.weight_floor."""
    if old_index not in state.signals:
        raise LearnError(f"signal id {old_index} is not in the history")
    y = np.asarray(new_signal, dtype=np.float64)
    norm = float(np.linalg.norm(y))
    if norm == 0.0:
        raise LearnError("correction weight undefined for a zero-norm signal")
    old_unit = state.unit_signals[old_index]
    if old_unit is None:
        raise LearnError("correction weight undefined for a zero-norm stored signal")
    return max(state.cfg.weight_floor, abs(float(y @ old_unit)) / norm)


def find_correlated(state: LearnerState, support, exclude: int | None = None):
    """Correlated history for a new support.

    Returns (omega, active): omega are the stored signal ids whose support
    intersects the new support (ascending, minus `exclude`); active is the
    sorted union of the new support with those signals' supports.
    """
    support_set = {int(a) for a in support}
    omega: set[int] = set()
    for atom in support_set:
        omega |= state.usage.get(atom, set())
    if exclude is not None:
        omega.discard(exclude)
    active = set(support_set)
    for sid in omega:
        active.update(int(a) for a in state.codes[sid].support)
    return (
        np.array(sorted(omega), dtype=np.int64),
        np.array(sorted(active), dtype=np.int64),
    )


def _assemble_inverse(state: LearnerState, active: np.ndarray) -> np.ndarray:
    """Inverse of delta*I + gram[active, active] at sweep start.

    Reuses the cache on an exact active-set repeat, composes block-diagonally
    from disjoint cached blocks when the uncovered cross entries are
    verifiably zero, and otherwise inverts directly (counted).
    """
    delta = state.cfg.c_inverse_init_scale
    key = tuple(int(a) for a in active)
    cached = state.inverse_cache.get(key)
    if cached is not None:
        state.cache_hits += 1
        return cached
    n = len(active)
    g = state.gram[np.ix_(active, active)].copy()
    g[np.diag_indices(n)] += delta
    pos_of = {int(a): i for i, a in enumerate(active)}
    pieces = []
    seen_keys: set[tuple[int, ...]] = set()
    for atom in key:
        block = state._atom_block.get(atom)
        if block is None or block in seen_keys:
            continue
        seen_keys.add(block)
        if all(a in pos_of for a in block):
            pieces.append(block)
    if pieces:
        check = np.zeros((n, n))
        check[np.diag_indices(n)] = delta
        for block in pieces:
            idx = [pos_of[a] for a in block]
            grid = np.ix_(idx, idx)
            blk = state.gram[np.ix_(block, block)].copy()
            blk[np.diag_indices(len(block))] += delta
            check[grid] = blk
        if np.array_equal(check, g):
            h = np.zeros((n, n))
            h[np.diag_indices(n)] = 1.0 / delta
            for block in pieces:
                idx = [pos_of[a] for a in block]
                h[np.ix_(idx, idx)] = state.inverse_cache[block]
            state.cache_hits += 1
            return h
    state.materialized_count += 1
    return np.linalg.inv(g)


def _store_code(state: LearnerState, signal_id: int, code: SparseCode) -> None:
    old = state.codes.get(signal_id)
    if old is not None:
        for atom in old.support:
            users = state.usage.get(int(atom))
            if users is not None:
                users.discard(signal_id)
                if not users:
                    del state.usage[int(atom)]
    state.codes[signal_id] = code
    for atom in code.support:
        state.usage.setdefault(int(atom), set()).add(signal_id)


def _recode_history(state: LearnerState) -> None:
    for sid in list(state.codes):
        code = code_transposed(state.atoms_t, state.signals[sid], state.cfg.coding)
        _store_code(state, sid, code)


def cbwrlsu_step(state: LearnerState, y, signal_id: int | None = None) -> LearnerState:
    """Present one training signal to the online learner.

    Codes the signal, gathers the correlated history and its active atom
    set, runs one weighted recursive-least-squares sweep (correlated pairs
    first, the new signal last) against the active sub-dictionary,
    renormalizes the touched atoms, and re-codes the signal against the
    updated dictionary for storage.  Atoms outside the active set are not
    modified.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.shape != (state.signal_len,):
        raise CodingError(
            f"signal length {y.shape} does not match dictionary signal_len "
            f"{state.signal_len}"
        )
    if signal_id is None:
        while state._next_auto_id in state.codes:
            state._next_auto_id += 1
        signal_id = state._next_auto_id
    cfg = state.cfg
    code = code_transposed(state.atoms_t, y, cfg.coding)
    omega, active = find_correlated(state, code.support, exclude=signal_id)
    state.last_pairs = []
    if len(active):
        y_norm = float(np.linalg.norm(y))
        y_unit = y / y_norm if y_norm > 0 else None
        h = _assemble_inverse(state, active)
        phi = state.atoms_t[active, :].copy()
        pre_sweep = phi.copy()
        pairs = []
        for sid in omega:
            old_unit = state.unit_signals[sid]
            if y_unit is None or old_unit is None:
                continue
            w = max(cfg.weight_floor, abs(float(y_unit @ old_unit)))
            if w == 0.0:
                continue
            pairs.append((w, state.signals[sid], state.codes[sid]))
        pairs.append((1.0, y, code))
        pos_lookup = {int(a): i for i, a in enumerate(active)}
        for w, sig, pair_code in pairs:
            spos = np.fromiter(
                (pos_lookup[int(a)] for a in pair_code.support),
                dtype=np.int64,
                count=pair_code.sparsity,
            )
            sq = math.sqrt(w)
            xv = sq * pair_code.values
            u = h[:, spos] @ xv
            denom = 1.0 + float(xv @ u[spos])
            if not np.isfinite(denom) or denom <= 0.0 or not np.all(np.isfinite(u)):
                # numerical breakdown: rebuild the inverse for this block
                # from the accumulated Gram and redo the pair
                state.reset_count += 1
                g = state.gram[np.ix_(active, active)].copy()
                g[np.diag_indices(len(active))] += cfg.c_inverse_init_scale
                h = np.linalg.inv(g)
                u = h[:, spos] @ xv
                denom = 1.0 + float(xv @ u[spos])
            beta = 1.0 / denom
            err = sq * sig - xv @ phi[spos]
            phi += beta * np.outer(u, err)
            h -= beta * np.outer(u, u)
            patch = np.ix_(pair_code.support, pair_code.support)
            state.gram[patch] += w * np.outer(pair_code.values, pair_code.values)
            state.last_pairs.append((w, pair_code.support.copy(), pair_code.values.copy()))
        norms = np.linalg.norm(phi, axis=1)
        dead = norms < 1e-12
        if np.any(dead):
            phi[dead] = pre_sweep[dead]
            norms[dead] = np.linalg.norm(phi[dead], axis=1)
        phi /= norms[:, None]
        state.atoms_t[active, :] = phi
        active_set = set(active.tolist())
        stale = [b for b in state.inverse_cache if not active_set.isdisjoint(b)]
        for blk in stale:
            for atom in blk:
                state._atom_block.pop(atom, None)
            del state.inverse_cache[blk]
        key = tuple(int(a) for a in active)
        state.inverse_cache[key] = h
        for atom in key:
            state._atom_block[atom] = key
        state.last_active_set = active
        state.last_inverse = h
        code = code_transposed(state.atoms_t, y, cfg.coding)
    else:
        state.last_active_set = active
        state.last_inverse = None
    state.signals[signal_id] = y.copy()
    norm = float(np.linalg.norm(y))
    state.unit_signals[signal_id] = (y / norm) if norm > 0 else None
    _store_code(state, signal_id, code)
    state.active_set_sizes.append(int(len(active)))
    state.seen_count += 1
    if cfg.recode_every > 0 and state.seen_count % cfg.recode_every == 0:
        _recode_history(state)
    return state


def _mean_normalized_error(atoms_t: np.ndarray, data: np.ndarray, coding: CodingConfig) -> float:
    total = 0.0
    count = 0
    for row in data:
        norm = float(np.linalg.norm(row))
        if norm == 0.0:
            continue
        code = code_transposed(atoms_t, row, coding)
        approx = code.values @ atoms_t[code.support] if code.sparsity else 0.0
        total += float(np.linalg.norm(row - approx)) / norm
        count += 1
    return total / max(count, 1)


def train_cbwrlsu(
    train: EpochMatrix, cfg: LearnConfig, init: Dictionary | None = None
) -> Dictionary:
    """Online training: seeded init, then cfg.passes shuffled sweeps.

    `init` overrides the built-in initialization (diagnostics and planted-
    dictionary experiments)."""
    if train.n_epochs == 0:
        raise LearnError("training set is empty")
    if init is None:
        init = init_dictionary(train, cfg)
    state = LearnerState(init, cfg)
    pass_errors = []
    for p in range(cfg.passes):
        order = np.random.default_rng((cfg.init_seed, p)).permutation(train.n_epochs)
        for idx in order:
            cbwrlsu_step(state, train.data[idx], signal_id=int(idx))
        pass_errors.append(_mean_normalized_error(state.atoms_t, train.data, cfg.coding))
    sizes = np.asarray(state.active_set_sizes)
    hist_edges = [0, 1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 1 << 30]
    histogram = {}
    for lo, hi in zip(hist_edges[:-1], hist_edges[1:]):
        n = int(np.sum((sizes >= lo) & (sizes < hi)))
        if n:
            histogram[f"[{lo},{hi})"] = n
    meta = {
        "algorithm": "cbwrlsu",
        "n_atoms": cfg.n_atoms,
        "passes": cfg.passes,
        "init_strategy": cfg.init_strategy,
        "init_seed": cfg.init_seed,
        "c_inverse_init_scale": cfg.c_inverse_init_scale,
        "weight_floor": cfg.weight_floor,
        "coding": {
            "max_sparsity": cfg.coding.max_sparsity,
            "residual_tol": cfg.coding.residual_tol,
            "stop_rule": cfg.coding.stop_rule,
        },
        "pass_mean_normalized_error": pass_errors,
        "active_set_size_histogram": histogram,
        "reset_count": state.reset_count,
        "inverse_materializations": state.materialized_count,
        "inverse_cache_hits": state.cache_hits,
        "train_count": train.n_epochs,
    }
    return state.to_dictionary(learn_meta=meta)


def mod_update(data: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Closed-form dictionary update for fixed codes, transposed layout.

    Solves min_phi ||Y - phi X||_F with a small ridge
    (1e-6 * trace(X X^T) / n_atoms) for invertibility; rows are atoms.
    Returns the updated atom rows, or None when the codes are all zero.
    The caller renormalizes.
    """
    xxt = codes @ codes.T
    trace = float(np.trace(xxt))
    if trace == 0.0:
        return None
    xxt[np.diag_indices(codes.shape[0])] += 1e-6 * trace / codes.shape[0]
    return np.linalg.solve(xxt, codes @ data)


def train_mod(
    train: EpochMatrix,
    cfg: LearnConfig,
    iters: int = 20,
    init: Dictionary | None = None,
) -> Dictionary:
    """Batch baseline: alternate pursuit with the ridge-regularized
    least-squares dictionary update, renormalizing columns each iteration."""
    if train.n_epochs == 0:
        raise LearnError("training set is empty")
    if iters < 1:
        raise LearnError("iters must be >= 1")
    if init is None:
        init = init_dictionary(train, cfg)
    atoms_t = np.ascontiguousarray(init.atoms.T)
    data = train.data
    iter_errors = []
    for _ in range(iters):
        x = np.zeros((cfg.n_atoms, train.n_epochs))
        for col, row in enumerate(data):
            code = code_transposed(atoms_t, row, cfg.coding)
            x[code.support, col] = code.values
        new_atoms_t = mod_update(data, x)
        if new_atoms_t is None:
            iter_errors.append(_mean_normalized_error(atoms_t, data, cfg.coding))
            break
        norms = np.linalg.norm(new_atoms_t, axis=1)
        keep = norms < 1e-12
        new_atoms_t[keep] = atoms_t[keep]
        norms[keep] = 1.0
        atoms_t = np.ascontiguousarray(new_atoms_t / norms[:, None])
        iter_errors.append(_mean_normalized_error(atoms_t, data, cfg.coding))
    meta = {
        "algorithm": "mod",
        "n_atoms": cfg.n_atoms,
        "iters": iters,
        "init_strategy": cfg.init_strategy,
        "init_seed": cfg.init_seed,
        "coding": {
            "max_sparsity": cfg.coding.max_sparsity,
            "residual_tol": cfg.coding.residual_tol,
            "stop_rule": cfg.coding.stop_rule,
        },
        "iter_mean_normalized_error": iter_errors,
        "train_count": train.n_epochs,
    }
    return Dictionary(atoms=atoms_t.T.copy(), learn_meta=meta)
