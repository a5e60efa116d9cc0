"""Weighted eigenvalue traces and their gradients with respect to the disorder.

The weighted trace of a window is the mean of the eigenvalues it holds.
Its gradient follows from Feynman-Hellmann: for a projection model the
component along ``omega_j`` is ``Tr(P_E P_j) / k``, for the alloy model it
is ``Tr(P_E A_j) / k`` with ``A_j = diag(a_{x-j})``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model_builder import (
    ALLOY,
    AlloyParameters,
    LatticeBox,
    ModelSpec,
    alloy_adjoint,
    build_hamiltonian,
    build_laplacian,
    build_projection_family,
    MATRIX_VALUED,
)
from .spectral import (
    EnergyWindow,
    Spectrum,
    cluster_gap,
    count_in_window,
    eigendecompose,
    spectral_projector,
    window_indices,
)


class EmptyWindowError(ValueError):
    pass


@dataclass(frozen=True)
class WeightedTrace:
    value: float
    count: int
    window: EnergyWindow


@dataclass(frozen=True)
class TraceGradient:
    components: np.ndarray
    kind: str
    flagged: bool = False
    reason: str = ""

    @property
    def l1(self) -> float:
        return float(np.abs(self.components).sum())

    def normalized(self) -> np.ndarray:
        return self.components / self.l1


def weighted_trace(spec: Spectrum, w: EnergyWindow) -> WeightedTrace:
    idx = window_indices(spec, w)
    if idx.size == 0:
        raise EmptyWindowError("no eigenvalues in window")
    return WeightedTrace(float(spec.eigenvalues[idx].mean()), int(idx.size), w)


def default_gap_tol(H: np.ndarray) -> float:
    return 1e-8 * max(1.0, float(np.linalg.norm(H)))


def window_density(spec: Spectrum, w: EnergyWindow) -> np.ndarray:
    """Per-coordinate weight ``sum_{λ in w} |v(c)|^2 / k`` (the diagonal of ``P_E / k``)."""
    V = spec.eigenvectors[:, window_indices(spec, w)]
    if V.shape[1] == 0:
        raise EmptyWindowError("no eigenvalues in window")
    return (V**2).sum(axis=1) / V.shape[1]


def gradient_from_density(box: LatticeBox, model: ModelSpec, density: np.ndarray) -> np.ndarray:
    """Map per-coordinate weights to per-disorder-variable gradient components."""
    if model.kind == ALLOY:
        return alloy_adjoint(box, model.profile, density)
    return np.array([density[p].sum() for p in build_projection_family(box, model)])


def trace_gradient(
    spec: Spectrum,
    w: EnergyWindow,
    box: LatticeBox,
    model: ModelSpec,
    gap_tol: float = 0.0,
) -> TraceGradient:
    """Analytic gradient of the weighted trace of ``w``.

    When the eigenvalues in ``w`` are closer than ``gap_tol`` to the rest
    of the spectrum the result carries ``flagged=True`` (crossing risk).
    """
    g = gradient_from_density(box, model, window_density(spec, w))
    gap = cluster_gap(spec, w)
    if gap < gap_tol:
        return TraceGradient(g, model.kind, True, "crossing-risk")
    return TraceGradient(g, model.kind)


def finite_difference_gradient(
    box: LatticeBox,
    model: ModelSpec,
    omega: np.ndarray,
    w: EnergyWindow,
    h: float = 1e-5,
) -> TraceGradient:
    """Central differences of the weighted trace, one disorder variable at a time.

    The cluster is re-resolved by the window after each perturbation; if
    its size changes the result is flagged rather than chased.
    """
    omega = np.asarray(omega, dtype=float)
    k0 = count_in_window(eigendecompose(build_hamiltonian(box, model, omega)), w)
    if k0 == 0:
        raise EmptyWindowError("no eigenvalues in window")
    g = np.empty(omega.size)
    flagged = False
    for j in range(omega.size):
        vals = []
        for step in (h, -h):
            shifted = omega.copy()
            shifted[j] += step
            ev = np.linalg.eigvalsh(build_hamiltonian(box, model, shifted))
            inside = ev[w.contains(ev)]
            if inside.size != k0:
                flagged = True
            vals.append(inside.mean() if inside.size else np.nan)
        g[j] = (vals[0] - vals[1]) / (2 * h)
    return TraceGradient(g, model.kind, flagged, "cluster-size-changed" if flagged else "")


def directional_identity_check(
    box: LatticeBox,
    model: ModelSpec,
    omega: np.ndarray,
    w1: EnergyWindow,
    w2: EnergyWindow,
) -> float:
    """Residual of ``ω·∇(T - T')`` against its trace expansion in ``H`` and the Laplacian."""
    omega = np.asarray(omega, dtype=float)
    H = build_hamiltonian(box, model, omega)
    lap = build_laplacian(box, model.fiber if model.kind == MATRIX_VALUED else None)
    spec = eigendecompose(H)
    g1 = trace_gradient(spec, w1, box, model).components
    g2 = trace_gradient(spec, w2, box, model).components
    k1, k2 = count_in_window(spec, w1), count_in_window(spec, w2)
    P1, P2 = spectral_projector(spec, w1), spectral_projector(spec, w2)
    lhs = omega @ (g1 - g2)
    rhs = (
        np.sum(P1 * H) / k1
        - np.sum(P2 * H) / k2
        - np.sum(P1 * lap) / k1
        + np.sum(P2 * lap) / k2
    )
    return float(abs(lhs - rhs))


@dataclass(frozen=True)
class SeparationReport:
    l1_norm: float
    l2_norm: float
    l1_bound: float
    l2_bound: float

    @property
    def l1_margin(self) -> float:
        return self.l1_norm - self.l1_bound

    @property
    def l2_margin(self) -> float:
        return self.l2_norm - self.l2_bound

    @property
    def passed(self) -> bool:
        return self.l1_margin >= -1e-12 and self.l2_margin >= -1e-12


def separation_bounds_check(
    t1: WeightedTrace,
    g1: TraceGradient,
    t2: WeightedTrace,
    g2: TraceGradient,
    delta_E: float,
    M: float,
    box: LatticeBox,
    laplacian_bound: float | None = None,
) -> SeparationReport:
    """Lower bounds on ``∇(T - T')`` implied by a separation ``|T - T'| >= ΔE``.

    ``l1 >= (ΔE - 2·lap)/M`` and ``l2 >= (ΔE - 2·lap)/(M sqrt(n))`` where
    ``lap`` bounds the Laplacian (``2d`` by default) and ``n`` is the
    number of sites.
    """
    if t1.window.overlaps(t2.window):
        raise ValueError("the two windows overlap; need two distinct clusters")
    if abs(t1.value - t2.value) < delta_E:
        raise ValueError("precondition |T - T'| >= ΔE does not hold")
    lap = 2 * box.d if laplacian_bound is None else laplacian_bound
    diff = g1.components - g2.components
    l1_bound = (delta_E - 2 * lap) / M
    return SeparationReport(
        l1_norm=float(np.abs(diff).sum()),
        l2_norm=float(np.linalg.norm(diff)),
        l1_bound=l1_bound,
        l2_bound=l1_bound / math.sqrt(box.n_sites),
    )


def jacobian_2x2(g: TraceGradient | np.ndarray, gp: TraceGradient | np.ndarray, i: int, j: int) -> float:
    if i == j:
        raise ValueError("Jacobian needs two distinct indices")
    u = getattr(g, "components", g)
    v = getattr(gp, "components", gp)
    return float(u[i] * v[j] - u[j] * v[i])


def jacobian_matrix(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """All 2x2 determinants ``u_i v_j - u_j v_i`` at once."""
    return np.outer(u, v) - np.outer(v, u)


def max_abs_jacobian(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.abs(jacobian_matrix(u, v)).max()) if len(u) > 1 else 0.0


@dataclass(frozen=True)
class KloppBound:
    max_det_sq: float
    lower_bound: float

    @property
    def holds(self) -> bool:
        # each determinant carries rounding error up to ~4 eps (entries are <= 1)
        slack = (4 * np.finfo(float).eps) ** 2
        return self.max_det_sq >= self.lower_bound * (1 - 1e-12) - slack


def klopp_determinant_bound(u, v, atol: float = 1e-9) -> KloppBound:
    """``max_{j≠k} det[[u_j, u_k], [v_j, v_k]]^2`` versus ``|u - v|_1^2 / (4 n^5)``.

    ``u`` and ``v`` must be non-negative with unit l1 norm.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n = u.size
    if n < 2 or v.size != n:
        raise ValueError("need two vectors of equal length n >= 2")
    if (u < -atol).any() or (v < -atol).any():
        raise ValueError("vectors must be non-negative")
    if abs(u.sum() - 1) > atol or abs(v.sum() - 1) > atol:
        raise ValueError("vectors must have unit l1 norm")
    return KloppBound(
        max_det_sq=max_abs_jacobian(u, v) ** 2,
        lower_bound=float(np.abs(u - v).sum() ** 2 / (4 * n**5)),
    )


def jacobian_threshold(delta_E: float, d: int, K: float, beta: float, L: float, C: float = 1.0) -> float:
    """``λ(L) = (ΔE - 4d) / (K (C log L)^{βd})``."""
    return (delta_E - 4 * d) / (K * (C * math.log(L)) ** (beta * d))


def tensor_average_check(spec: Spectrum, w: EnergyWindow, H: np.ndarray, cap: int = 4096) -> float:
    """``|H^(k) φ - T φ|`` for the tensor-averaged Hamiltonian and product eigenvector.

    ``H^(k) = (1/k) sum_j I ⊗ .. ⊗ H ⊗ .. ⊗ I`` with ``H`` in slot ``j`` and
    ``φ`` the tensor product of the ``k`` eigenvectors in ``w``.
    """
    idx = window_indices(spec, w)
    k, n = idx.size, spec.order
    if k == 0:
        raise EmptyWindowError("no eigenvalues in window")
    if n**k > cap:
        raise ValueError(f"tensor dimension {n}^{k} exceeds cap {cap}")
    eye = np.eye(n)
    Hk = np.zeros((n**k, n**k))
    for slot in range(k):
        term = np.ones((1, 1))
        for pos in range(k):
            term = np.kron(term, H if pos == slot else eye)
        Hk += term
    Hk /= k
    phi = np.ones(1)
    for j in idx:
        phi = np.kron(phi, spec.eigenvectors[:, j])
    T = spec.eigenvalues[idx].mean()
    return float(np.linalg.norm(Hk @ phi - T * phi))


@dataclass(frozen=True)
class AlloyLemmaReport:
    norm_j: float
    norm_k: float
    norm_lower: float
    norm_upper: float
    normalized_difference: float
    normalized_sum: float
    K: float

    @property
    def norms_ok(self) -> bool:
        tol = 1e-12
        return all(
            self.norm_lower - tol <= x <= self.norm_upper + tol for x in (self.norm_j, self.norm_k)
        )

    @property
    def difference_ok(self) -> bool:
        return self.normalized_difference >= self.K

    @property
    def sum_ok(self) -> bool:
        return self.normalized_sum >= 2 - 1e-8

    @property
    def passed(self) -> bool:
        return self.norms_ok and self.difference_ok and self.sum_ok


def alloy_gradient_lemma_check(
    g_j: TraceGradient | np.ndarray,
    g_k: TraceGradient | np.ndarray,
    a0: float,
    params: AlloyParameters,
) -> AlloyLemmaReport:
    """Norm bounds and normalized-gradient separation for two alloy eigenvalues."""
    u = np.asarray(getattr(g_j, "components", g_j), dtype=float)
    v = np.asarray(getattr(g_k, "components", g_k), dtype=float)
    nu, nv = np.abs(u).sum(), np.abs(v).sum()
    uh, vh = u / nu, v / nv
    return AlloyLemmaReport(
        norm_j=float(nu),
        norm_k=float(nv),
        norm_lower=a0 * (1 - params.delta),
        norm_upper=a0 * (1 + params.delta),
        normalized_difference=float(np.abs(uh - vh).sum()),
        normalized_sum=float(np.abs(uh + vh).sum()),
        K=params.K,
    )
