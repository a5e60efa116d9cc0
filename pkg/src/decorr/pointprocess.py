"""Sub-cube arrays, independence of local statistics, and eigenvalue multiplicity.

``Λ_L`` is covered by ``N_L = ⌊(2L+1)/(2ℓ+1)⌋^d`` disjoint cubes of side
``2ℓ+1``.  Each cube gets its own local Hamiltonian built only from the
disorder inside it, so counts in different cubes are independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from .model_builder import (
    DisorderSpec,
    LatticeBox,
    ModelSpec,
    POLYMER,
    batch_potentials,
    disorder_slices,
    sample_disorder_batch,
)
from .montecarlo import (
    MeanEstimate,
    ProbabilityEstimate,
    check_regime,
    covariance_samples,
    run_trials,
)
from .spectral import EnergyWindow, batch_counts, batch_eigenvalues


@dataclass(frozen=True)
class SubcubeLayout:
    big: LatticeBox
    sub: LatticeBox
    per_axis: int

    @property
    def count(self) -> int:
        return self.per_axis**self.big.d

    def slices(self, model: ModelSpec) -> list[tuple[slice, ...]]:
        """Sub-grid of the big box's disorder array feeding each sub-cube."""
        unit = model.block if model.kind == POLYMER else 1
        return disorder_slices(model.disorder_shape(self.big), self.sub.side // unit, self.per_axis)

    def corners(self) -> np.ndarray:
        """Lowest-coordinate site of each sub-cube, in row-major order."""
        grid = np.indices((self.per_axis,) * self.big.d).reshape(self.big.d, -1).T
        return grid * self.sub.side - self.big.L


def subcube_layout(model: ModelSpec, d: int, L: int, ell: int) -> SubcubeLayout:
    if 2 * ell + 1 > 2 * L + 1:
        raise ValueError("sub-cubes larger than the big box")
    big, sub = model.box_for(d, L), model.box_for(d, ell)
    return SubcubeLayout(big, sub, big.side // sub.side)


@dataclass
class SubcubeArray:
    layout: SubcubeLayout
    counts: np.ndarray  # (N_L, n_windows)

    @property
    def zeta(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def subcube_potentials(model: ModelSpec, layout: SubcubeLayout, omegas: np.ndarray) -> np.ndarray:
    """``(T, N_L, n_coords)`` local potentials from ``(T, n_disorder(big))`` disorder."""
    omegas = np.atleast_2d(omegas)
    T = omegas.shape[0]
    grid = omegas.reshape((T,) + model.disorder_shape(layout.big))
    out = []
    for sl in layout.slices(model):
        local = grid[(slice(None),) + sl].reshape(T, -1)
        out.append(batch_potentials(layout.sub, model, local))
    return np.stack(out, axis=1)


def build_array(
    model: ModelSpec,
    d: int,
    L: int,
    ell: int,
    windows: Sequence[EnergyWindow],
    omega: np.ndarray,
) -> SubcubeArray:
    """Counts ``η_p`` of every sub-cube for one disorder realization on ``Λ_L``."""
    layout = subcube_layout(model, d, L, ell)
    V = subcube_potentials(model, layout, omega)[0]
    return SubcubeArray(layout, batch_counts(model, layout.sub, V, list(windows)))


def _array_chunk(model, layout, dist, windows, stream, seed, start, stop):
    omegas = sample_disorder_batch(dist, model.n_disorder(layout.big), seed, range(start, stop), stream)
    V = subcube_potentials(model, layout, omegas)
    T, N, n = V.shape
    counts = batch_counts(model, layout.sub, V.reshape(T * N, n), windows)
    return {"eta": counts.reshape(T, N, len(windows))}


def simulate_array(model, dist, d, L, ell, windows, trials, seed, stream=0, workers=None):
    """``(trials, N_L, n_windows)`` sub-cube counts."""
    layout = subcube_layout(model, d, L, ell)
    fn = partial(_array_chunk, model, layout, dist, list(windows), stream)
    chunk = max(1, 200_000 // layout.count)
    return layout, run_trials(fn, trials, seed, workers, chunk=chunk)["eta"]


@dataclass
class IndependencePoint:
    L: int
    ell: int
    n_cubes: int
    joint: ProbabilityEstimate
    product: float
    double_sum: float
    error: MeanEstimate
    correlation: float
    cross_covariance: MeanEstimate
    eta: np.ndarray = field(repr=False)

    @property
    def cross_z(self) -> float:
        c = self.cross_covariance
        return c.mean / c.stderr if c.stderr > 0 else 0.0


def diagonal_error_samples(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Per-trial summands whose mean estimates ``Σ_p [P(A_p ∧ B_p) - P(A_p)P(B_p)]``.

    ``A`` and ``B`` are ``(T, N_L)`` indicator arrays.  The same draws feed
    the joint and product terms (common random numbers).
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    return ((A - A.mean(axis=0)) * (B - B.mean(axis=0))).sum(axis=1)


def independence_point(L: int, ell: int, eta: np.ndarray, pair: tuple[int, int] = (0, -1)) -> IndependencePoint:
    """Summaries of ``(trials, N_L, 2)`` sub-cube counts at energies ``E`` and ``E'``."""
    A, B = eta[:, :, 0] >= 1, eta[:, :, 1] >= 1
    zE, zEp = eta[:, :, 0].sum(axis=1), eta[:, :, 1].sum(axis=1)
    pA, pB = A.mean(axis=0), B.mean(axis=0)
    both = (A[:, :, None] & B[:, None, :]).mean(axis=0)
    if np.std(zE) > 0 and np.std(zEp) > 0:
        corr = float(np.corrcoef(zE, zEp)[0, 1])
    else:
        corr = 0.0
    p, pp = pair
    return IndependencePoint(
        L=L,
        ell=ell,
        n_cubes=eta.shape[1],
        joint=ProbabilityEstimate.from_indicator((zE >= 1) & (zEp >= 1)),
        product=float((zE >= 1).mean() * (zEp >= 1).mean()),
        double_sum=float(both.sum()),
        error=MeanEstimate.from_samples(diagonal_error_samples(A, B)),
        correlation=corr,
        cross_covariance=MeanEstimate.from_samples(covariance_samples(eta[:, p, 0], eta[:, pp, 1])),
        eta=eta,
    )


def independence_test(
    model: ModelSpec,
    dist: DisorderSpec,
    d: int,
    E: float,
    Ep: float,
    I: tuple[float, float],
    J: tuple[float, float],
    alpha: float,
    Ls: Sequence[int],
    trials: int,
    seed: int,
    strict: bool = False,
    workers: int | None = None,
) -> list[IndependencePoint]:
    """Array statistics at ``E`` and ``E'`` along a ladder of ``L`` with ``ℓ = ⌊L^α⌋``."""
    check_regime(E, Ep, d, strict)
    out = []
    for k, L in enumerate(Ls):
        ell = int(math.floor(L**alpha))
        wins = [EnergyWindow.scaled(E, I, L, d), EnergyWindow.scaled(Ep, J, L, d)]
        _, eta = simulate_array(model, dist, d, L, ell, wins, trials, seed, stream=k, workers=workers)
        out.append(independence_point(L, ell, eta))
    return out


def error_magnitude_decreasing(points: Sequence[IndependencePoint]) -> bool:
    """``|𝓔_L|`` strictly decreasing and first/last 95% intervals disjoint."""
    mags = [abs(p.error.mean) for p in points]
    strict = all(b < a for a, b in zip(mags, mags[1:]))
    lo0, hi0 = points[0].error.interval
    lo1, hi1 = points[-1].error.interval
    if points[0].error.mean < 0:
        lo0, hi0 = -hi0, -lo0
        lo1, hi1 = -hi1, -lo1
    return strict and hi1 < lo0


@dataclass(frozen=True)
class CompoundPoissonSummary:
    pmf: dict[int, float]
    fraction_above_rank: float
    max_count: int
    factorial_moments: tuple[float, ...]
    within_bound: bool


def compound_poisson_diagnostics(
    eta: np.ndarray, rank: int, cube_coords: int, moments: int = 3
) -> CompoundPoissonSummary:
    """Empirical law of per-cube counts and factorial moments of their total.

    ``eta`` is ``(trials, N_L)`` counts for one window; ``cube_coords`` is
    the number of coordinates in a sub-cube (the largest possible count).
    """
    eta = np.asarray(eta)
    vals, freq = np.unique(eta, return_counts=True)
    zeta = eta.sum(axis=1).astype(float)
    fm = []
    for r in range(1, moments + 1):
        prod = np.ones_like(zeta)
        for i in range(r):
            prod *= zeta - i
        fm.append(float(prod.mean()))
    return CompoundPoissonSummary(
        pmf={int(v): float(f / eta.size) for v, f in zip(vals, freq)},
        fraction_above_rank=float((eta > rank).mean()),
        max_count=int(eta.max(initial=0)),
        factorial_moments=tuple(fm),
        within_bound=bool(eta.min(initial=0) >= 0 and eta.max(initial=0) <= cube_coords),
    )


@dataclass(frozen=True)
class TruncationReport:
    residuals: np.ndarray
    norms: np.ndarray
    max_overlap: float


def restriction_indices(big: LatticeBox, L_sub: int, fiber: int = 1) -> np.ndarray:
    """Coordinates of ``Λ_{L_sub}`` (centered) inside ``big``."""
    keep = np.all(np.abs(big.sites) <= L_sub, axis=1)
    sites = np.flatnonzero(keep)
    return (sites[:, None] * fiber + np.arange(fiber)).ravel()


def truncation_residual(
    H: np.ndarray, big: LatticeBox, vectors: np.ndarray, energies: Sequence[float], L_sub: int
) -> TruncationReport:
    """Approximate-eigenvector quality of eigenvectors restricted to a smaller box.

    ``vectors`` holds eigenvectors of ``H`` (on ``big``) as columns.  Each
    is restricted to ``Λ_{L_sub}`` and tested against ``χ H χ`` there:
    ``|(H_sub - E) φ| / |φ|``.  Also returns the restricted norms and the
    largest pairwise overlap.
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float).T).T
    fiber = H.shape[0] // big.n_sites
    idx = restriction_indices(big, L_sub, fiber)
    Hs = H[np.ix_(idx, idx)]
    phis = vectors[idx]
    norms = np.linalg.norm(phis, axis=0)
    if np.any(norms == 0):
        raise ValueError("restricted vector vanishes")
    res = np.linalg.norm(Hs @ phis - phis * np.asarray(energies), axis=0) / norms
    G = phis.T @ phis
    off = np.abs(G - np.diag(np.diag(G)))
    return TruncationReport(res, norms, float(off.max(initial=0.0)))


def cluster_sizes(eigenvalues: np.ndarray, resolution: float) -> np.ndarray:
    """Sizes of maximal runs of sorted eigenvalues with consecutive gaps ``< resolution``."""
    ev = np.sort(np.asarray(eigenvalues, dtype=float))
    if ev.size == 0:
        return np.zeros(0, dtype=int)
    breaks = np.flatnonzero(np.diff(ev) >= resolution)
    edges = np.concatenate([[0], breaks + 1, [ev.size]])
    return np.diff(edges)


def subinterval_cover(I: EnergyWindow, L: float, q: float) -> int:
    """Number of length-``2L^{-q}`` intervals used to cover ``I``."""
    return 2 * (int(L**q * I.width / 2) + 1)


def _multiplicity_chunk(model, box, dist, window, resolution, stream, seed, start, stop):
    omegas = sample_disorder_batch(dist, model.n_disorder(box), seed, range(start, stop), stream)
    ev = batch_eigenvalues(model, box, batch_potentials(box, model, omegas))
    out = np.zeros(stop - start, dtype=np.int64)
    for t, row in enumerate(ev):
        sizes = cluster_sizes(row[window.contains(row)], resolution)
        out[t] = sizes.max(initial=0)
    return {"max_cluster": out}


@dataclass
class MultiplicityPoint:
    L: int
    resolution: float
    estimate: ProbabilityEstimate
    max_cluster: np.ndarray = field(repr=False)


def multiplicity_scan(
    model: ModelSpec,
    dist: DisorderSpec,
    d: int,
    window: EnergyWindow,
    q: float,
    Ls: Sequence[int],
    trials: int,
    seed: int,
    rank: int | None = None,
    workers: int | None = None,
) -> list[MultiplicityPoint]:
    """Per ``L``, how often a cluster at resolution ``L^{-q}`` holds more than ``m_k`` eigenvalues."""
    if q <= 2 * d:
        raise ValueError(f"q = {q} <= 2d = {2 * d}: outside lemma hypothesis")
    m = model.rank(d) if rank is None else rank
    out = []
    for k, L in enumerate(Ls):
        res = float(L) ** (-q)
        fn = partial(_multiplicity_chunk, model, model.box_for(d, L), dist, window, res, k)
        mc = run_trials(fn, trials, seed, workers, chunk=500)["max_cluster"]
        out.append(MultiplicityPoint(L, res, ProbabilityEstimate.from_indicator(mc > m), mc))
    return out


def frequencies_nonincreasing(points: Sequence[MultiplicityPoint]) -> bool:
    f = [p.estimate.point for p in points]
    return all(b <= a for a, b in zip(f, f[1:]))
