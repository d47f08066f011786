"""Shared test fixtures: random dictionaries, exact-sparse synthesis, and a
Bonn-layout surrogate dataset with EEG-like per-subset structure."""

from __future__ import annotations

import numpy as np

from eegsrc.dataset import EpochMatrix, write_bonn_subset


def unit_dictionary(rng, signal_len, n_atoms):
    atoms = rng.normal(size=(signal_len, n_atoms))
    atoms /= np.linalg.norm(atoms, axis=0, keepdims=True)
    return atoms


def sparse_signal(rng, atoms, sparsity):
    """Exact k-sparse synthesis; returns (signal, support, values)."""
    n_atoms = atoms.shape[1]
    support = np.sort(rng.choice(n_atoms, size=sparsity, replace=False))
    values = rng.normal(size=sparsity)
    return atoms[:, support] @ values, support, values


def _ar2(rng, n, freq_hz, rate_hz, bandwidth, scale):
    """Resonant AR(2) process: a crude rhythmic-signal generator."""
    r = np.exp(-bandwidth / rate_hz)
    theta = 2.0 * np.pi * freq_hz / rate_hz
    a1, a2 = 2.0 * r * np.cos(theta), -(r * r)
    x = np.zeros(n + 200)
    e = rng.normal(size=n + 200)
    for t in range(2, n + 200):
        x[t] = a1 * x[t - 1] + a2 * x[t - 2] + e[t]
    x = x[200:]
    return scale * x / (np.std(x) + 1e-12)


def surrogate_subsets(
    segment_len=512, n_epochs=100, rate_hz=173.61, seed=7
) -> dict[str, EpochMatrix]:
    """Five synthetic subsets with Bonn-like qualitative structure.

    A/B: low-amplitude alpha-band rhythms; C/D: mid-amplitude slow mixtures;
    E: high-amplitude low-frequency spiking.  Integer-valued, so the files
    round-trip through the Bonn text format.
    """
    rng = np.random.default_rng(seed)
    profiles = {
        "A": dict(freq=10.0, bw=8.0, scale=40.0, spikes=0.0),
        "B": dict(freq=11.5, bw=10.0, scale=45.0, spikes=0.0),
        "C": dict(freq=5.0, bw=4.0, scale=70.0, spikes=0.2),
        "D": dict(freq=3.5, bw=3.0, scale=85.0, spikes=0.35),
        "E": dict(freq=4.5, bw=1.5, scale=600.0, spikes=3.0),
    }
    subsets = {}
    for sid, p in profiles.items():
        data = np.empty((n_epochs, segment_len))
        for i in range(n_epochs):
            x = _ar2(rng, segment_len, p["freq"], rate_hz, p["bw"], p["scale"])
            if p["spikes"]:
                n_spikes = rng.poisson(p["spikes"] * segment_len / 256)
                for pos in rng.integers(10, segment_len - 10, size=n_spikes):
                    width = int(rng.integers(3, 9))
                    amp = p["scale"] * rng.uniform(1.5, 3.0) * rng.choice([-1, 1])
                    pulse = amp * np.hanning(2 * width + 1)
                    data_slice = slice(pos - width, pos + width + 1)
                    x[data_slice] += pulse
            data[i] = np.round(x)
        subsets[sid] = EpochMatrix(
            data=data,
            subset_ids=(sid,) * n_epochs,
            source_indices=tuple(range(n_epochs)),
            sample_rate_hz=rate_hz,
        )
    return subsets


def write_surrogate_tree(root, subsets) -> None:
    for sid, em in subsets.items():
        write_bonn_subset(em, root, sid)
