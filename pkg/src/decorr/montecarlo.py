"""Seeded Monte Carlo estimation of eigenvalue-count events and scaling fits.

Trials are split into fixed chunks of consecutive indices.  Each chunk is
a pure function of ``(seed, trial range)`` and chunks are concatenated in
index order, so results never depend on the number of workers.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .eigstats import (
    gradient_from_density,
    jacobian_matrix,
    klopp_determinant_bound,
)
from .model_builder import (
    DisorderSpec,
    LatticeBox,
    ModelSpec,
    batch_potentials,
    build_hamiltonian,
    sample_disorder_batch,
)
from .spectral import (
    EnergyWindow,
    batch_counts,
    cluster_gap,
    eigendecompose,
    window_indices,
)

log = logging.getLogger(__name__)

CHUNK = 2000
WORKERS_ENV = "DECORR_WORKERS"


def default_workers() -> int:
    return int(os.environ.get(WORKERS_ENV, "1"))


def run_trials(
    chunk_fn: Callable[[int, int, int], dict],
    trials: int,
    seed: int,
    workers: int | None = None,
    chunk: int = CHUNK,
) -> dict[str, np.ndarray]:
    """Evaluate ``chunk_fn(seed, start, stop)`` over all trials and concatenate in order.

    ``chunk_fn`` must be picklable when ``workers > 1``.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    workers = default_workers() if workers is None else workers
    bounds = [(s, min(s + chunk, trials)) for s in range(0, trials, chunk)]
    if workers > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(chunk_fn, [seed] * len(bounds), *zip(*bounds)))
    else:
        parts = [chunk_fn(seed, a, b) for a, b in bounds]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


@dataclass(frozen=True)
class ProbabilityEstimate:
    successes: int
    trials: int

    @property
    def point(self) -> float:
        return self.successes / self.trials

    @property
    def interval(self) -> tuple[float, float]:
        """Wilson score interval at 95%."""
        ci = stats.binomtest(self.successes, self.trials).proportion_ci(0.95, method="wilson")
        return float(ci.low), float(ci.high)

    @property
    def stderr(self) -> float:
        p = self.point
        return math.sqrt(p * (1 - p) / self.trials)

    @classmethod
    def from_indicator(cls, x: np.ndarray) -> "ProbabilityEstimate":
        x = np.asarray(x, dtype=bool)
        return cls(int(x.sum()), int(x.size))


@dataclass(frozen=True)
class MeanEstimate:
    """Sample mean with a normal-approximation 95% interval."""

    mean: float
    stderr: float
    trials: int

    @property
    def interval(self) -> tuple[float, float]:
        return self.mean - 1.96 * self.stderr, self.mean + 1.96 * self.stderr

    @classmethod
    def from_samples(cls, x: np.ndarray) -> "MeanEstimate":
        x = np.asarray(x, dtype=float)
        se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")
        return cls(float(x.mean()), se, int(x.size))


@dataclass(frozen=True)
class ScalingFit:
    sizes: np.ndarray
    estimates: np.ndarray
    slope: float
    stderr: float
    intercept: float
    used: np.ndarray

    def within(self, target: float, tol: float) -> bool:
        return abs(self.slope - target) <= tol


def scaling_fit(
    sizes: Sequence[float],
    estimates: Sequence[float],
    successes: Sequence[int] | None = None,
    weighted: bool = False,
    min_successes: int = 5,
) -> ScalingFit:
    """Least-squares slope of ``log(estimate)`` against ``log(size)``.

    Points with a non-positive estimate, or fewer than ``min_successes``
    successes when counts are given, are dropped.  With ``weighted`` the
    points get inverse-variance weights ``successes`` (the binomial
    variance of ``log p̂`` is about ``1/successes`` for rare events).
    """
    sizes = np.asarray(sizes, dtype=float)
    est = np.asarray(estimates, dtype=float)
    if np.any(np.diff(sizes) <= 0):
        raise ValueError("sizes must be strictly increasing")
    used = est > 0
    if successes is not None:
        used &= np.asarray(successes) >= min_successes
    if used.sum() < 3:
        raise ValueError(f"need at least 3 usable points, have {int(used.sum())}")
    x, y = np.log(sizes[used]), np.log(est[used])
    w = np.asarray(successes, dtype=float)[used] if weighted and successes is not None else np.ones(x.size)
    X = np.column_stack([np.ones_like(x), x])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    resid = y - X @ coef
    dof = x.size - 2
    sigma2 = float((w * resid**2).sum() / dof) if dof > 0 else 0.0
    cov = sigma2 * np.linalg.inv((X * w[:, None]).T @ X)
    return ScalingFit(sizes, est, float(coef[1]), float(math.sqrt(max(cov[1, 1], 0.0))), float(coef[0]), used)


@dataclass
class TrialBatch:
    """Per-trial records of one scan point."""

    config_hash: str
    seed: int
    trials: int
    records: dict[str, np.ndarray] = field(default_factory=dict)


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# Chunk workers (module level so they pickle).

def _count_chunk(model, box, dist, windows, stream, seed, start, stop):
    omegas = sample_disorder_batch(dist, model.n_disorder(box), seed, range(start, stop), stream)
    V = batch_potentials(box, model, omegas)
    return {"counts": batch_counts(model, box, V, windows)}


def simulate_counts(
    model: ModelSpec,
    box: LatticeBox,
    dist: DisorderSpec,
    windows: Sequence[EnergyWindow],
    trials: int,
    seed: int,
    stream: int = 0,
    workers: int | None = None,
) -> np.ndarray:
    """``(trials, len(windows))`` eigenvalue counts over iid disorder draws."""
    fn = partial(_count_chunk, model, box, dist, list(windows), stream)
    return run_trials(fn, trials, seed, workers)["counts"]


def estimate_event(
    model: ModelSpec,
    box: LatticeBox,
    dist: DisorderSpec,
    windows: Sequence[EnergyWindow],
    predicate: Callable[[np.ndarray], np.ndarray],
    trials: int,
    seed: int,
    workers: int | None = None,
) -> ProbabilityEstimate:
    """Frequency of ``predicate(counts)``; ``counts`` has one column per window."""
    counts = simulate_counts(model, box, dist, windows, trials, seed, workers=workers)
    return ProbabilityEstimate.from_indicator(predicate(counts))


@dataclass
class LadderPoint:
    size: float
    estimate: ProbabilityEstimate


@dataclass
class WegnerResult:
    points: list[LadderPoint]
    fit: ScalingFit | None
    expected: float

    @property
    def deviation(self) -> float:
        return abs(self.fit.slope - self.expected) if self.fit else float("nan")


def wegner_scan(
    model: ModelSpec,
    dist: DisorderSpec,
    d: int,
    E: float,
    I: tuple[float, float],
    ells: Sequence[int],
    L: float,
    trials: int,
    seed: int,
    workers: int | None = None,
) -> WegnerResult:
    """``P{X_ℓ(I_L(E)) >= 1}`` along a ladder of ℓ at fixed ``L``; expected slope ``d``."""
    if I[1] <= I[0]:
        return WegnerResult([LadderPoint(ell, ProbabilityEstimate(0, trials)) for ell in ells], None, d)
    w = EnergyWindow.scaled(E, I, L, d)
    points = []
    for k, ell in enumerate(ells):
        X = simulate_counts(model, model.box_for(d, ell), dist, [w], trials, seed, stream=k, workers=workers)[:, 0]
        points.append(LadderPoint(ell, ProbabilityEstimate.from_indicator(X >= 1)))
        log.info("wegner ell=%d p=%.3g", ell, points[-1].estimate.point)
    return WegnerResult(points, _ladder_fit(points, np.asarray(ells, float)), d)


def _ladder_fit(points, sizes, weighted=True) -> ScalingFit | None:
    try:
        return scaling_fit(
            sizes,
            [p.estimate.point for p in points],
            [p.estimate.successes for p in points],
            weighted=weighted,
        )
    except ValueError:
        return None


def minami_statistic(X: np.ndarray, m: int) -> np.ndarray:
    """``1{X >= m+1} X (X - m)`` per trial."""
    X = np.asarray(X)
    return np.where(X >= m + 1, X * (X - m), 0)


@dataclass
class MinamiPoint:
    size: float
    estimate: ProbabilityEstimate
    statistic: MeanEstimate


@dataclass
class MinamiResult:
    points: list[MinamiPoint]
    rank: int
    prob_fit: ScalingFit | None
    stat_fit: ScalingFit | None
    expected: float


def minami_scan(
    model: ModelSpec,
    dist: DisorderSpec,
    d: int,
    E: float,
    I: tuple[float, float],
    ells: Sequence[int],
    L: float,
    trials: int,
    seed: int,
    workers: int | None = None,
) -> MinamiResult:
    """``P{X > m_k}`` and ``E{1{X > m_k} X (X - m_k)}`` along a ladder; expected slope ``2d``.

    Slopes are taken against ``log(ℓ/L)``, which at fixed ``L`` equals
    the slope against ``log ℓ``.
    """
    m = model.rank(d)
    w = EnergyWindow.scaled(E, I, L, d)
    points = []
    for k, ell in enumerate(ells):
        X = simulate_counts(model, model.box_for(d, ell), dist, [w], trials, seed, stream=k, workers=workers)[:, 0]
        points.append(
            MinamiPoint(ell / L, ProbabilityEstimate.from_indicator(X > m), MeanEstimate.from_samples(minami_statistic(X, m)))
        )
    sizes = np.asarray(ells, float) / L
    succ = [p.estimate.successes for p in points]
    prob_fit = _ladder_fit([LadderPoint(s, p.estimate) for s, p in zip(sizes, points)], sizes)
    try:
        stat_fit = scaling_fit(sizes, [p.statistic.mean for p in points], succ, weighted=True)
    except ValueError:
        stat_fit = None
    return MinamiResult(points, m, prob_fit, stat_fit, 2 * d)


@dataclass
class DecorrelationPoint:
    L: int
    ell: int
    joint: ProbabilityEstimate
    marginal_E: ProbabilityEstimate
    marginal_Ep: ProbabilityEstimate
    difference: MeanEstimate

    @property
    def product(self) -> float:
        return self.marginal_E.point * self.marginal_Ep.point


@dataclass
class DecorrelationResult:
    points: list[DecorrelationPoint]
    fit: ScalingFit | None
    log_scale: list[DecorrelationPoint] = field(default_factory=list)
    in_regime: bool = True


class RegimeError(ValueError):
    pass


def check_regime(E: float, Ep: float, d: int, strict: bool = False) -> bool:
    ok = abs(E - Ep) > 4 * d
    if not ok:
        msg = f"|E-E'| = {abs(E - Ep):g} <= 4d = {4 * d}: outside the theorem's regime"
        if strict:
            raise RegimeError(msg)
        warnings.warn(msg)
    return ok


def covariance_samples(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-trial products of centered indicators; their mean is the sample covariance."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return (a - a.mean()) * (b - b.mean())


def _joint_point(L, ell, X1, X2) -> DecorrelationPoint:
    A, B = X1 >= 1, X2 >= 1
    return DecorrelationPoint(
        L=L,
        ell=ell,
        joint=ProbabilityEstimate.from_indicator(A & B),
        marginal_E=ProbabilityEstimate.from_indicator(A),
        marginal_Ep=ProbabilityEstimate.from_indicator(B),
        difference=MeanEstimate.from_samples(covariance_samples(A, B)),
    )


def decorrelation_scan(
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
    log_scale_C: float | None = None,
    strict: bool = False,
    workers: int | None = None,
) -> DecorrelationResult:
    """Joint versus product probabilities of eigenvalues near ``E`` and ``E'`` at scale ``ℓ = ⌊L^α⌋``.

    With ``log_scale_C`` the scan is repeated on boxes of radius
    ``⌈C log L⌉``.
    """
    in_regime = check_regime(E, Ep, d, strict)
    points, small = [], []
    for k, L in enumerate(Ls):
        ell = int(math.floor(L**alpha))
        wins = [EnergyWindow.scaled(E, I, L, d), EnergyWindow.scaled(Ep, J, L, d)]
        X = simulate_counts(model, model.box_for(d, ell), dist, wins, trials, seed, stream=k, workers=workers)
        points.append(_joint_point(L, ell, X[:, 0], X[:, 1]))
        log.info("decorrelate L=%d ell=%d joint=%.3g", L, ell, points[-1].joint.point)
        if log_scale_C is not None:
            lt = max(1, math.ceil(log_scale_C * math.log(L)))
            X = simulate_counts(model, model.box_for(d, lt), dist, wins, trials, seed, stream=1000 + k, workers=workers)
            small.append(_joint_point(L, lt, X[:, 0], X[:, 1]))
    try:
        fit = scaling_fit(
            [p.L for p in points], [p.joint.point for p in points], [p.joint.successes for p in points], weighted=True
        )
    except ValueError:
        fit = None
    return DecorrelationResult(points, fit, small, in_regime)


def _jacobian_chunk(model, box, dist, w1, w2, gap_tol, seed, start, stop):
    rows = {k: [] for k in ("qualifies", "k1", "k2", "max_jacobian", "collinearity", "klopp_det_sq", "klopp_bound")}
    for t in range(start, stop):
        omega = sample_disorder_batch(dist, model.n_disorder(box), seed, range(t, t + 1))[0]
        spec = eigendecompose(build_hamiltonian(box, model, omega))
        i1, i2 = window_indices(spec, w1), window_indices(spec, w2)
        ok = i1.size > 0 and i2.size > 0 and min(cluster_gap(spec, w1), cluster_gap(spec, w2)) >= gap_tol
        vals = (np.nan,) * 4
        if ok:
            u = gradient_from_density(box, model, (spec.eigenvectors[:, i1] ** 2).sum(axis=1) / i1.size)
            v = gradient_from_density(box, model, (spec.eigenvectors[:, i2] ** 2).sum(axis=1) / i2.size)
            u, v = u / np.abs(u).sum(), v / np.abs(v).sum()
            J = np.abs(jacobian_matrix(u, v)).max() if u.size > 1 else 0.0
            coll = np.abs(u - v).sum()
            if (u >= -1e-12).all() and (v >= -1e-12).all() and u.size > 1:
                kb = klopp_determinant_bound(np.clip(u, 0, None), np.clip(v, 0, None), atol=1e-8)
                kd, kl = kb.max_det_sq, kb.lower_bound
            else:
                kd = kl = np.nan
            vals = (J, coll, kd, kl)
        rows["qualifies"].append(ok)
        rows["k1"].append(i1.size)
        rows["k2"].append(i2.size)
        for key, val in zip(("max_jacobian", "collinearity", "klopp_det_sq", "klopp_bound"), vals):
            rows[key].append(val)
    return {k: np.asarray(v) for k, v in rows.items()}


@dataclass
class JacobianResult:
    qualifying: int
    trials: int
    threshold: float
    event: ProbabilityEstimate | None
    klopp_violations: int
    klopp_checked: int
    records: dict[str, np.ndarray]

    @property
    def collinearity_margins(self) -> np.ndarray:
        return self.records["collinearity"][self.records["qualifies"]]


def jacobian_event_scan(
    model: ModelSpec,
    dist: DisorderSpec,
    box: LatticeBox,
    w1: EnergyWindow,
    w2: EnergyWindow,
    threshold: float,
    trials: int,
    seed: int,
    gap_tol: float = 0.0,
    workers: int | None = None,
) -> JacobianResult:
    """Frequency of ``max_{i≠j} |J_ij| >= threshold`` among trials with both windows occupied.

    Gradients are l1-normalized before forming Jacobians; every qualifying
    trial also gets the determinant lower-bound check on that pair.
    """
    fn = partial(_jacobian_chunk, model, box, dist, w1, w2, gap_tol)
    rec = run_trials(fn, trials, seed, workers, chunk=200)
    q = rec["qualifies"].astype(bool)
    checked = q & ~np.isnan(rec["klopp_det_sq"])
    slack = (4 * np.finfo(float).eps) ** 2
    bad = checked & (rec["klopp_det_sq"] < rec["klopp_bound"] * (1 - 1e-12) - slack)
    event = ProbabilityEstimate.from_indicator(rec["max_jacobian"][q] >= threshold) if q.any() else None
    return JacobianResult(int(q.sum()), trials, threshold, event, int(bad.sum()), int(checked.sum()), rec)
