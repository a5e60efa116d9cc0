"""Eigendecomposition, window counts, spectral projectors and localization diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model_builder import LatticeBox, ModelSpec, build_laplacian, MATRIX_VALUED


class SpectralError(RuntimeError):
    pass


@dataclass(frozen=True)
class Spectrum:
    """Ascending eigenvalues with orthonormal eigenvectors as columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def order(self) -> int:
        return self.eigenvalues.size


@dataclass(frozen=True)
class EnergyWindow:
    """Half-open interval ``[lo, hi)``; see :meth:`scaled` for ``L^{-d} I + E``."""

    lo: float
    hi: float
    center: float | None = None
    base: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty window [{self.lo}, {self.hi})")

    @classmethod
    def scaled(cls, E: float, base: tuple[float, float], L: float, d: int) -> "EnergyWindow":
        s = float(L) ** (-d)
        return cls(E + s * base[0], E + s * base[1], center=E, base=tuple(base))

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x)
        return (x >= self.lo) & (x < self.hi)

    def overlaps(self, other: "EnergyWindow") -> bool:
        return self.lo < other.hi and other.lo < self.hi


def eigendecompose(H: np.ndarray) -> Spectrum:
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise SpectralError("matrix must be square")
    if not np.array_equal(H, H.T):
        raise SpectralError("matrix is not symmetric")
    try:
        w, v = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"eigensolver did not converge for matrix of order {H.shape[0]}") from exc
    return Spectrum(w, v)


def count_in_window(spec: Spectrum | np.ndarray, w: EnergyWindow) -> int:
    ev = spec.eigenvalues if isinstance(spec, Spectrum) else np.asarray(spec)
    return int(np.count_nonzero(w.contains(ev)))


def window_indices(spec: Spectrum, w: EnergyWindow) -> np.ndarray:
    return np.flatnonzero(w.contains(spec.eigenvalues))


def spectral_projector(spec: Spectrum, w: EnergyWindow) -> np.ndarray:
    V = spec.eigenvectors[:, window_indices(spec, w)]
    P = V @ V.T
    return (P + P.T) / 2


def cluster_gap(spec: Spectrum, w: EnergyWindow) -> float:
    """Distance between the eigenvalues inside ``w`` and those outside (inf if either is empty)."""
    inside = w.contains(spec.eigenvalues)
    if not inside.any() or inside.all():
        return np.inf
    ins, out = spec.eigenvalues[inside], spec.eigenvalues[~inside]
    return float(min(abs(out[out < ins[0]] - ins[0]).min(initial=np.inf),
                     abs(out[out > ins[-1]] - ins[-1]).min(initial=np.inf)))


def edge_clearance(spec: Spectrum, w: EnergyWindow) -> float:
    """Distance from the window edges to the nearest eigenvalue on either side of each edge."""
    ev = spec.eigenvalues
    return float(min(np.abs(ev - w.lo).min(), np.abs(ev - w.hi).min()))


@dataclass(frozen=True)
class LocalizationProfile:
    index: int
    center: tuple[int, ...]
    max_amplitude: float
    decay_rate: float
    passes: bool | None


def localization_diagnostics(
    spec: Spectrum,
    box: LatticeBox,
    w: EnergyWindow | None = None,
    fit: bool = True,
    q: float | None = None,
    nu: float | None = None,
) -> list[LocalizationProfile]:
    """Localization center, peak amplitude and fitted decay rate per eigenvector in ``w``.

    The center is the site of largest amplitude (first in lexicographic
    order on ties).  The decay rate is minus the least-squares slope of
    ``log|φ|`` against distance from the center over sites with
    ``|φ| > 1e-12``.  With ``q`` and ``nu`` given, ``passes`` reports
    whether ``|φ(x)| <= L^q exp(-nu |x - center|)`` holds on every site.
    """
    idx = np.arange(spec.order) if w is None else window_indices(spec, w)
    fiber = spec.eigenvectors.shape[0] // box.n_sites
    out = []
    for j in idx:
        phi = spec.eigenvectors[:, j].reshape(box.n_sites, fiber)
        amp = np.sqrt((phi**2).sum(axis=1))
        if not amp.any():
            raise SpectralError("zero eigenvector")
        c = int(np.argmax(amp))
        dist = np.linalg.norm(box.sites - box.sites[c], axis=1)
        rate = np.nan
        if fit:
            keep = amp > 1e-12
            if np.unique(dist[keep]).size >= 2:
                rate = -float(np.polyfit(dist[keep], np.log(amp[keep]), 1)[0])
        passes = None
        if q is not None and nu is not None:
            scale = max(box.L, 1) ** q
            passes = bool(np.all(amp <= scale * np.exp(-nu * dist) + 1e-15))
        out.append(LocalizationProfile(int(j), box.coord(c), float(amp[c]), rate, passes))
    return out


def amplitude_decay_rate(phi: np.ndarray, box: LatticeBox) -> float:
    """Fitted decay rate of one vector; shortcut around :func:`localization_diagnostics`."""
    spec = Spectrum(np.zeros(1), np.asarray(phi, dtype=float).reshape(-1, 1))
    return localization_diagnostics(spec, box)[0].decay_rate


# Batched spectra for Monte Carlo loops.  In d = 1 without a fiber the
# Hamiltonian is tridiagonal with unit hopping; counts there use Sturm
# sequences, which are exact and vectorise across trials.

def is_chain(spec: ModelSpec, box: LatticeBox) -> bool:
    return box.d == 1 and spec.kind != MATRIX_VALUED


def sturm_count(diag: np.ndarray, x) -> np.ndarray:
    """Number of eigenvalues ``< x`` of each unit-hopping tridiagonal matrix.

    ``diag`` has shape ``(T, n)``; ``x`` is a scalar or a ``(T,)`` array.
    """
    diag = np.atleast_2d(diag)
    x = np.broadcast_to(np.asarray(x, dtype=float), diag.shape[:1])
    pivmin = 1e-290
    count = np.zeros(diag.shape[0], dtype=np.int64)
    q = diag[:, 0] - x
    for i in range(diag.shape[1]):
        if i:
            q = diag[:, i] - x - 1.0 / q
        q = np.where(np.abs(q) < pivmin, -pivmin, q)
        count += q < 0
    return count


def batch_counts(
    spec: ModelSpec, box: LatticeBox, potentials: np.ndarray, windows: list[EnergyWindow]
) -> np.ndarray:
    """``(T, len(windows))`` eigenvalue counts for a stack of diagonal potentials."""
    potentials = np.atleast_2d(potentials)
    out = np.empty((potentials.shape[0], len(windows)), dtype=np.int64)
    if is_chain(spec, box):
        for k, w in enumerate(windows):
            out[:, k] = sturm_count(potentials, w.hi) - sturm_count(potentials, w.lo)
        return out
    ev = batch_eigenvalues(spec, box, potentials)
    for k, w in enumerate(windows):
        out[:, k] = np.count_nonzero(w.contains(ev), axis=1)
    return out


def batch_eigenvalues(spec: ModelSpec, box: LatticeBox, potentials: np.ndarray) -> np.ndarray:
    """Sorted eigenvalues of every Hamiltonian in the stack, shape ``(T, n)``."""
    potentials = np.atleast_2d(potentials)
    T, n = potentials.shape
    if is_chain(spec, box):
        off = np.ones(n - 1)
        out = np.empty((T, n))
        for t in range(T):
            if n == 1:
                out[t] = potentials[t]
            else:
                out[t] = scipy.linalg.eigvalsh_tridiagonal(
                    potentials[t], off, check_finite=False, lapack_driver="stev"
                )
        return out
    lap = build_laplacian(box, spec.fiber if spec.kind == MATRIX_VALUED else None)
    out = np.empty((T, n))
    step = max(1, 2_000_000 // (n * n))
    di = np.arange(n)
    for s in range(0, T, step):
        chunk = np.repeat(lap[None], min(step, T - s), axis=0)
        chunk[:, di, di] += potentials[s : s + step]
        out[s : s + step] = np.linalg.eigvalsh(chunk)
    return out
