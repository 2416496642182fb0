"""Seedable Gaussian simulation on a grid.

Streams are Philox generators keyed by (master seed, stream id), so any
stream can be regenerated independently. :func:`joint_sample` draws grid
increments together with exact Wiener integrals I(f_i): the conditional part
Σ_k avg_k(f_i) Δ_kW plus an independent residual with the residual Gram as
covariance.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .fnspace import (
    DEFAULT_QUAD,
    Func1D,
    GridSpec,
    QuadSpec,
    cell_integrals,
    residual_gram,
)

__all__ = [
    "PathSample",
    "stream",
    "sample_increments",
    "conditional_integral",
    "JointSampler",
    "joint_sample",
    "MCResult",
    "mc_mean",
]

_CLAMP = 1e-13
_BATCH = 50_000


def stream(master_seed: int, stream_id: int = 0) -> np.random.Generator:
    """Independent generator for (master_seed, stream_id)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(master_seed), int(stream_id)])))


@dataclass(frozen=True)
class PathSample:
    """Grid increments, shape (n,) or (N, n), with optional exact integrals (K,) or (N, K)."""

    grid: GridSpec
    increments: np.ndarray
    exact_integrals: np.ndarray | None = None
    conditional: np.ndarray | None = None

    @property
    def batched(self) -> bool:
        return self.increments.ndim == 2


def sample_increments(grid: GridSpec, rng: np.random.Generator, size: int | None = None) -> PathSample:
    shape = (grid.n,) if size is None else (int(size), grid.n)
    return PathSample(grid, rng.standard_normal(shape) * math.sqrt(grid.delta))


def conditional_integral(f: Func1D, sample: PathSample, quad: QuadSpec = DEFAULT_QUAD):
    """Σ_k avg_k(f) Δ_kW, the value of E[I(f) | grid increments]."""
    avg = cell_integrals(f, sample.grid, quad) / sample.grid.delta
    out = sample.increments @ avg
    return out if np.ndim(out) else float(out)


class JointSampler:
    """Precomputed cell averages and residual factor for a list of functions."""

    def __init__(self, funcs: Sequence[Func1D], grid: GridSpec, quad: QuadSpec = DEFAULT_QUAD):
        self.grid = grid
        self.funcs = tuple(funcs)
        K = len(self.funcs)
        self.averages = np.array([cell_integrals(f, grid, quad) / grid.delta for f in self.funcs]).reshape(K, grid.n)
        R = np.empty((K, K))
        for i in range(K):
            for j in range(i, K):
                R[i, j] = R[j, i] = residual_gram(self.funcs[i], self.funcs[j], grid, quad)
        self.residual_cov = R
        self.factor = _psd_factor(R)

    def draw(self, rng: np.random.Generator, size: int | None = None) -> PathSample:
        inc = sample_increments(self.grid, rng, size).increments
        cond = inc @ self.averages.T
        K = len(self.funcs)
        z = rng.standard_normal((K,) if size is None else (int(size), K))
        exact = cond + z @ self.factor.T
        return PathSample(self.grid, inc, exact, cond)


def _psd_factor(R: np.ndarray) -> np.ndarray:
    """L with L Lᵀ = R via eigh; tiny negative eigenvalues are clamped."""
    if R.size == 0:
        return R
    lam, Q = np.linalg.eigh(0.5 * (R + R.T))
    scale = max(1.0, float(np.max(np.abs(lam))))
    if lam.min() < -_CLAMP * scale:
        raise np.linalg.LinAlgError(f"residual Gram is not positive semidefinite (eigenvalue {lam.min():.3e})")
    if lam.min() < 0:
        warnings.warn(f"clamped residual Gram eigenvalue {lam.min():.3e} to zero", RuntimeWarning, stacklevel=3)
        lam = np.clip(lam, 0.0, None)
    return Q * np.sqrt(lam)


def joint_sample(
    funcs: Sequence[Func1D], grid: GridSpec, rng: np.random.Generator, size: int | None = None
) -> PathSample:
    return JointSampler(funcs, grid).draw(rng, size)


@dataclass(frozen=True)
class MCResult:
    mean: float
    stderr: float
    count: int


def _stream_stats(stat: Callable[[np.random.Generator, int], np.ndarray], seed: int, sid: int, count: int):
    rng = stream(seed, sid)
    n_tot, mean, m2 = 0, 0.0, 0.0
    left = count
    while left > 0:
        b = min(_BATCH, left)
        x = np.asarray(stat(rng, b), dtype=float)
        bm = float(np.mean(x))
        bm2 = float(np.sum((x - bm) ** 2))
        n_new = n_tot + b
        d = bm - mean
        mean += d * b / n_new
        m2 += bm2 + d * d * n_tot * b / n_new
        n_tot = n_new
        left -= b
    return n_tot, mean, m2


def mc_mean(
    stat: Callable[[np.random.Generator, int], np.ndarray],
    samples: int,
    master_seed: int,
    streams: int = 4,
    sequential: bool = False,
) -> MCResult:
    """Mean and standard error of ``stat(rng, batch)`` over ``samples`` draws.

    Samples are split over ``streams`` generators. Each stream's statistics
    are combined in stream order, so the result does not depend on whether
    streams ran in threads.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    streams = max(1, min(int(streams), samples))
    counts = [samples // streams + (1 if i < samples % streams else 0) for i in range(streams)]
    if sequential or streams == 1:
        parts = [_stream_stats(stat, master_seed, i, c) for i, c in enumerate(counts)]
    else:
        with ThreadPoolExecutor(max_workers=min(streams, os.cpu_count() or 1)) as pool:
            parts = list(pool.map(lambda ic: _stream_stats(stat, master_seed, ic[0], ic[1]), enumerate(counts)))
    n_tot, mean, m2 = 0, 0.0, 0.0
    for n_i, mean_i, m2_i in parts:
        n_new = n_tot + n_i
        d = mean_i - mean
        mean += d * n_i / n_new
        m2 += m2_i + d * d * n_tot * n_i / n_new
        n_tot = n_new
    var = m2 / (n_tot - 1)
    return MCResult(mean, math.sqrt(var / n_tot), n_tot)
