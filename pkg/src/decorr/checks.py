"""Per-trial deterministic sweeps: gradient agreement, the alloy gradient lemma, tensor averages."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .eigstats import (
    alloy_gradient_lemma_check,
    finite_difference_gradient,
    tensor_average_check,
    trace_gradient,
)
from .model_builder import (
    AlloyParameters,
    DisorderSpec,
    LatticeBox,
    ModelSpec,
    alloy_adjoint,
    build_hamiltonian,
    sample_disorder,
)
from .montecarlo import run_trials
from .rng import trial_rng
from .spectral import EnergyWindow, edge_clearance, eigendecompose


def security_window(eigenvalues: np.ndarray, j: int, zone: float) -> EnergyWindow:
    lam = eigenvalues[j]
    return EnergyWindow(lam - zone, lam + zone, center=float(lam))


def _gradcheck_chunk(model, box, dist, zone, h, seed, start, stop):
    rows = {"flagged": [], "k": [], "rel_error": []}
    for t in range(start, stop):
        omega = sample_disorder(dist, box, model, seed, t)
        spec = eigendecompose(build_hamiltonian(box, model, omega))
        j = int(trial_rng(seed, t, stream=1).integers(spec.order))
        w = security_window(spec.eigenvalues, j, zone)
        flagged = edge_clearance(spec, w) < zone / 4
        err = np.nan
        k = int(w.contains(spec.eigenvalues).sum())
        if not flagged:
            an = trace_gradient(spec, w, box, model).components
            fd = finite_difference_gradient(box, model, omega, w, h)
            flagged = fd.flagged
            err = float(np.linalg.norm(an - fd.components) / np.linalg.norm(an))
        rows["flagged"].append(flagged)
        rows["k"].append(k)
        rows["rel_error"].append(err)
    return {key: np.asarray(v) for key, v in rows.items()}


@dataclass
class GradcheckResult:
    kind: str
    trials: int
    records: dict[str, np.ndarray] = field(repr=False)

    @property
    def checked(self) -> int:
        return int((~self.records["flagged"]).sum())

    @property
    def max_rel_error(self) -> float:
        errs = self.records["rel_error"][~self.records["flagged"]]
        return float(errs.max()) if errs.size else float("nan")


def gradcheck_sweep(
    model: ModelSpec,
    dist: DisorderSpec,
    box: LatticeBox,
    trials: int,
    seed: int,
    zone: float | None = None,
    h: float = 1e-5,
    workers: int | None = None,
) -> GradcheckResult:
    """Analytic versus central-difference gradients around a random eigenvalue per trial.

    The window is ``λ_j ± zone`` with ``zone = L^{-d}/2`` by default; a
    trial is skipped (flagged) when an eigenvalue sits within ``zone/4``
    of a window edge, because then the finite difference can cross it.
    """
    zone = 0.5 * box.L ** (-box.d) if zone is None else zone
    fn = partial(_gradcheck_chunk, model, box, dist, zone, h)
    return GradcheckResult(model.kind, trials, run_trials(fn, trials, seed, workers, chunk=50))


def admissible_pair(eigenvalues: np.ndarray, d: int, L: int) -> bool:
    """Lowest and highest eigenvalue far apart (> 4d) and both simple with room to spare."""
    ev = eigenvalues
    if ev.size < 3:
        return False
    sep = (L * math.log(L)) ** (-d)
    return bool(ev[-1] - ev[0] > 4 * d and ev[1] - ev[0] >= sep and ev[-1] - ev[-2] >= sep)


def _alloy_chunk(model, box, dist, params, seed, start, stop):
    a0 = model.profile[(0,) * box.d]
    keys = ("admissible", "norm_j", "norm_k", "difference", "sum", "passed")
    rows = {k: [] for k in keys}
    for t in range(start, stop):
        omega = sample_disorder(dist, box, model, seed, t)
        spec = eigendecompose(build_hamiltonian(box, model, omega))
        ok = admissible_pair(spec.eigenvalues, box.d, box.L)
        vals = (np.nan,) * 4 + (False,)
        if ok:
            V = spec.eigenvectors
            gj = alloy_adjoint(box, model.profile, V[:, 0] ** 2)
            gk = alloy_adjoint(box, model.profile, V[:, -1] ** 2)
            rep = alloy_gradient_lemma_check(gj, gk, a0, params)
            vals = (rep.norm_j, rep.norm_k, rep.normalized_difference, rep.normalized_sum, rep.passed)
        rows["admissible"].append(ok)
        for key, val in zip(keys[1:], vals):
            rows[key].append(val)
    return {k: np.asarray(v) for k, v in rows.items()}


@dataclass
class AlloyLemmaResult:
    params: AlloyParameters
    a0: float
    trials: int
    records: dict[str, np.ndarray] = field(repr=False)

    @property
    def admissible(self) -> int:
        return int(self.records["admissible"].sum())

    @property
    def violations(self) -> int:
        r = self.records
        return int((r["admissible"] & ~r["passed"]).sum())

    def _adm(self, key):
        return self.records[key][self.records["admissible"]]

    @property
    def min_difference(self) -> float:
        x = self._adm("difference")
        return float(x.min()) if x.size else float("nan")

    @property
    def min_sum(self) -> float:
        x = self._adm("sum")
        return float(x.min()) if x.size else float("nan")


def alloy_lemma_scan(
    model: ModelSpec,
    dist: DisorderSpec,
    box: LatticeBox,
    params: AlloyParameters,
    trials: int,
    seed: int,
    workers: int | None = None,
) -> AlloyLemmaResult:
    """Gradient norm bounds and normalized separation for the extreme alloy eigenvalues."""
    fn = partial(_alloy_chunk, model, box, dist, params)
    a0 = model.profile[(0,) * box.d]
    return AlloyLemmaResult(params, a0, trials, run_trials(fn, trials, seed, workers, chunk=250))


def _tensor_chunk(seed, start, stop):
    rows = {"n": [], "k": [], "residual": []}
    for t in range(start, stop):
        rng = trial_rng(seed, t)
        n = int(rng.integers(2, 5))
        k = int(rng.integers(1, 3))
        A = rng.normal(size=(n, n))
        H = (A + A.T) / 2
        spec = eigendecompose(H)
        ev = spec.eigenvalues
        # window holding the k lowest eigenvalues, edges halfway into the gaps
        hi = (ev[k - 1] + ev[k]) / 2 if k < n else ev[-1] + 1
        w = EnergyWindow(ev[0] - 1, hi)
        rows["n"].append(n)
        rows["k"].append(int(w.contains(ev).sum()))
        rows["residual"].append(tensor_average_check(spec, w, H))
    return {key: np.asarray(v) for key, v in rows.items()}


def tensor_sweep(trials: int, seed: int, workers: int | None = None) -> dict[str, np.ndarray]:
    """Random symmetric ``H`` of order 2..4 with a window over its 1 or 2 lowest eigenvalues."""
    return run_trials(_tensor_chunk, trials, seed, workers, chunk=500)
