"""Lattice boxes, random operator families and finite-volume Hamiltonians.

All four families share one structure: a (possibly fibered) adjacency
Laplacian plus a random potential that is diagonal in the coordinate
basis.  For the projection families every projection is a set of
coordinates, so the potential is ``omega`` expanded over those sets.  For
the alloy family the potential is the truncated convolution of ``omega``
with the single-site profile.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .rng import trial_rng

RANK_ONE = "rank_one"
POLYMER = "polymer"
MATRIX_VALUED = "matrix_valued"
ALLOY = "alloy"
KINDS = (RANK_ONE, POLYMER, MATRIX_VALUED, ALLOY)


class ModelError(ValueError):
    """Invalid lattice, model or disorder specification."""


@dataclass(frozen=True)
class LatticeBox:
    """Cube ``{-L, ..., -L + side - 1}^d`` in Z^d.

    ``side`` defaults to ``2L + 1`` (the centered box).  Sites are indexed
    in row-major order of their coordinates, so index order is the
    lexicographic order of coordinates.
    """

    d: int
    L: int
    side: int | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ModelError(f"dimension must be positive, got {self.d}")
        if self.side is None:
            object.__setattr__(self, "side", 2 * self.L + 1)
        if self.side < 1:
            raise ModelError(f"box has no sites (side={self.side})")

    @classmethod
    def aligned(cls, d: int, L: int, block: int) -> "LatticeBox":
        """Largest box inside the centered ``Λ_L`` whose side is a multiple of ``block``."""
        side = block * ((2 * L + 1) // block)
        if side < 1:
            raise ModelError(f"block side {block} does not fit in a box of radius {L}")
        return cls(d, L, side)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.d

    @property
    def n_sites(self) -> int:
        return self.side**self.d

    @cached_property
    def sites(self) -> np.ndarray:
        """``(n_sites, d)`` integer coordinates in index order."""
        grid = np.indices(self.shape).reshape(self.d, -1).T
        return grid - self.L

    def index(self, coord: Sequence[int]) -> int:
        local = [c + self.L for c in coord]
        if any(x < 0 or x >= self.side for x in local):
            raise ModelError(f"site {tuple(coord)} lies outside the box")
        return int(np.ravel_multi_index(local, self.shape))

    def coord(self, index: int) -> tuple[int, ...]:
        return tuple(int(x) - self.L for x in np.unravel_index(index, self.shape))

    def neighbors(self, index: int) -> list[int]:
        c = np.unravel_index(index, self.shape)
        out = []
        for axis in range(self.d):
            for step in (-1, 1):
                x = list(c)
                x[axis] += step
                if 0 <= x[axis] < self.side:
                    out.append(int(np.ravel_multi_index(x, self.shape)))
        return out


@dataclass(frozen=True)
class ModelSpec:
    """Which random operator family, with its structural parameters.

    Use the constructors :meth:`rank_one`, :meth:`polymer`,
    :meth:`matrix_valued` and :meth:`alloy` rather than building one by
    hand.
    """

    kind: str
    block: int = 1
    fiber: np.ndarray | None = field(default=None, compare=False)
    profile: Mapping[tuple[int, ...], float] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        if self.kind == POLYMER and self.block < 1:
            raise ModelError("polymer block side must be positive")
        if self.kind == MATRIX_VALUED:
            A = np.asarray(self.fiber, dtype=float)
            if A.ndim != 2 or A.shape[0] != A.shape[1]:
                raise ModelError("fiber matrix must be square")
            if not np.array_equal(A, A.T):
                raise ModelError("fiber matrix must be symmetric")
            if np.linalg.eigvalsh(A).min() <= 0:
                raise ModelError("fiber matrix must be positive definite")
        if self.kind == ALLOY:
            if not self.profile:
                raise ModelError("alloy model needs a single-site profile")
            dims = {len(k) for k in self.profile}
            if len(dims) != 1:
                raise ModelError("profile offsets must all have the same dimension")
            origin = (0,) * dims.pop()
            if self.profile.get(origin, 0.0) <= 0:
                raise ModelError("single-site profile needs a_0 > 0")

    @classmethod
    def rank_one(cls) -> "ModelSpec":
        return cls(RANK_ONE)

    @classmethod
    def polymer(cls, k: int | None = None, block: int | None = None) -> "ModelSpec":
        """Polymer blocks given either by radius ``k`` (side ``2k+1``) or by side."""
        if (k is None) == (block is None):
            raise ModelError("give exactly one of k or block")
        return cls(POLYMER, block=2 * k + 1 if k is not None else block)

    @classmethod
    def matrix_valued(cls, m: int = 2, fiber: np.ndarray | None = None) -> "ModelSpec":
        A = np.eye(m) if fiber is None else np.array(fiber, dtype=float)
        return cls(MATRIX_VALUED, fiber=A)

    @classmethod
    def alloy(cls, profile: Mapping) -> "ModelSpec":
        return cls(ALLOY, profile=normalize_profile(profile))

    @property
    def fiber_dim(self) -> int:
        return self.fiber.shape[0] if self.kind == MATRIX_VALUED else 1

    def rank(self, d: int) -> int:
        """Rank ``m_k`` of each projection (1 for the alloy model's Minami count)."""
        if self.kind == POLYMER:
            return self.block**d
        if self.kind == MATRIX_VALUED:
            return self.fiber_dim
        return 1

    @property
    def support_size(self) -> int:
        return len(self.profile) if self.kind == ALLOY else 1

    def laplacian_norm(self, d: int) -> float:
        """Upper bound on the operator norm of the kinetic term."""
        scale = np.linalg.norm(self.fiber, 2) if self.kind == MATRIX_VALUED else 1.0
        return 2 * d * float(scale)

    def box_for(self, d: int, L: int) -> LatticeBox:
        """The radius-``L`` box used for this model (block-aligned for polymers)."""
        if self.kind == POLYMER:
            return LatticeBox.aligned(d, L, self.block)
        return LatticeBox(d, L)

    def n_disorder(self, box: LatticeBox) -> int:
        if self.kind == POLYMER:
            _check_tiling(box, self.block)
            return (box.side // self.block) ** box.d
        return box.n_sites

    def disorder_shape(self, box: LatticeBox) -> tuple[int, ...]:
        """Grid shape of the disorder variables (blocks for polymers, sites otherwise)."""
        if self.kind == POLYMER:
            _check_tiling(box, self.block)
            return (box.side // self.block,) * box.d
        return box.shape

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind == POLYMER:
            out["block"] = self.block
        elif self.kind == MATRIX_VALUED:
            out["fiber"] = self.fiber.tolist()
        elif self.kind == ALLOY:
            out["profile"] = {",".join(map(str, k)): v for k, v in sorted(self.profile.items())}
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelSpec":
        kind = data.get("kind")
        if kind == RANK_ONE:
            return cls.rank_one()
        if kind == POLYMER:
            if "k" in data:
                return cls.polymer(k=int(data["k"]))
            return cls.polymer(block=int(data.get("block", 3)))
        if kind == MATRIX_VALUED:
            if "fiber" in data:
                return cls.matrix_valued(fiber=np.array(data["fiber"], dtype=float))
            return cls.matrix_valued(m=int(data.get("m", 2)))
        if kind == ALLOY:
            return cls.alloy(data["profile"])
        raise ModelError(f"unknown model kind {kind!r}")


def normalize_profile(profile: Mapping) -> dict[tuple[int, ...], float]:
    """Accept ``{0: 1.0}``, ``{(0, 1): ..}`` or JSON-style ``{"0,1": ..}`` keys."""
    out = {}
    for key, value in profile.items():
        if isinstance(key, str):
            key = tuple(int(x) for x in key.split(","))
        elif isinstance(key, (int, np.integer)):
            key = (int(key),)
        else:
            key = tuple(int(x) for x in key)
        if value != 0:
            out[key] = float(value)
    return out


@dataclass(frozen=True)
class DisorderSpec:
    """Single-site density: ``uniform`` or ``triangular`` on ``[-M, M]``."""

    density: str = "uniform"
    M: float = 1.0

    def __post_init__(self):
        if self.density not in ("uniform", "triangular"):
            raise ModelError(f"unknown density {self.density!r}")
        if not self.M > 0:
            raise ModelError("support half-width M must be positive")

    @property
    def sup_density(self) -> float:
        return 1 / (2 * self.M) if self.density == "uniform" else 1 / self.M

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) <= self.M
        if self.density == "uniform":
            return np.where(inside, 1 / (2 * self.M), 0.0)
        return np.where(inside, (self.M - np.abs(x)) / self.M**2, 0.0)

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.density == "uniform":
            return self.M * (2 * rng.random(size) - 1)
        return self.M * (rng.random(size) + rng.random(size) - 1)


def _check_tiling(box: LatticeBox, block: int):
    if box.side % block:
        raise ModelError(
            f"polymer block side {block} does not divide box side {box.side}"
        )


def build_laplacian(box: LatticeBox, fiber: np.ndarray | None = None) -> np.ndarray:
    """Nearest-neighbour adjacency matrix of the box (truncated, no diagonal).

    With ``fiber`` the result is ``adjacency ⊗ fiber``.
    """
    n = box.n_sites
    adj = np.zeros((n, n))
    idx = np.arange(n).reshape(box.shape)
    for axis in range(box.d):
        lo = np.take(idx, np.arange(box.side - 1), axis=axis).ravel()
        hi = np.take(idx, np.arange(1, box.side), axis=axis).ravel()
        adj[lo, hi] = 1.0
        adj[hi, lo] = 1.0
    if fiber is None:
        return adj
    A = np.asarray(fiber, dtype=float)
    if not np.array_equal(A, A.T) or np.linalg.eigvalsh(A).min() <= 0:
        raise ModelError("fiber matrix must be symmetric positive definite")
    return np.kron(adj, A)


def build_projection_family(box: LatticeBox, spec: ModelSpec) -> list[np.ndarray]:
    """Coordinate index sets of the projections ``P_i`` (a partition of all coordinates)."""
    if spec.kind == ALLOY:
        raise ModelError("the alloy model has no projection family")
    n = box.n_sites
    if spec.kind == RANK_ONE:
        return [np.array([i]) for i in range(n)]
    if spec.kind == MATRIX_VALUED:
        m = spec.fiber_dim
        return [np.arange(i * m, (i + 1) * m) for i in range(n)]
    labels = _block_labels(box, spec.block)
    order = np.argsort(labels, kind="stable")
    return np.split(order, spec.n_disorder(box))


def _block_labels(box: LatticeBox, block: int) -> np.ndarray:
    """Block index (row-major over the block grid) of every site."""
    _check_tiling(box, block)
    local = box.sites + box.L
    nb = box.side // block
    return np.ravel_multi_index(tuple((local // block).T), (nb,) * box.d)


def block_centers(box: LatticeBox, spec: ModelSpec) -> np.ndarray:
    """Coordinates of the polymer block centers (the sublattice carrying ``omega``)."""
    _check_tiling(box, spec.block)
    nb = box.side // spec.block
    grid = np.indices((nb,) * box.d).reshape(box.d, -1).T
    return grid * spec.block + (spec.block - 1) / 2 - box.L


def potential(box: LatticeBox, spec: ModelSpec, omega: np.ndarray) -> np.ndarray:
    """Diagonal of the random potential in the coordinate basis."""
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (spec.n_disorder(box),):
        raise ModelError(
            f"disorder has {omega.size} values, model needs {spec.n_disorder(box)}"
        )
    if spec.kind == RANK_ONE:
        return omega.copy()
    if spec.kind == MATRIX_VALUED:
        return np.repeat(omega, spec.fiber_dim)
    if spec.kind == POLYMER:
        return omega[_block_labels(box, spec.block)]
    return alloy_potential(box, spec.profile, omega)


def batch_potentials(box: LatticeBox, spec: ModelSpec, omegas: np.ndarray) -> np.ndarray:
    """Row-wise :func:`potential` for a ``(T, n_disorder)`` stack."""
    omegas = np.atleast_2d(np.asarray(omegas, dtype=float))
    if omegas.shape[1] != spec.n_disorder(box):
        raise ModelError(
            f"disorder has {omegas.shape[1]} values, model needs {spec.n_disorder(box)}"
        )
    if spec.kind == RANK_ONE:
        return omegas.copy()
    if spec.kind == MATRIX_VALUED:
        return np.repeat(omegas, spec.fiber_dim, axis=1)
    if spec.kind == POLYMER:
        return omegas[:, _block_labels(box, spec.block)]
    return np.stack([alloy_potential(box, spec.profile, w) for w in omegas])


def _shifted(grid: np.ndarray, offset: Sequence[int]) -> np.ndarray:
    """``out[x] = grid[x - offset]`` where ``x - offset`` lies in the box, else 0."""
    out = np.zeros_like(grid)
    src, dst = [], []
    for s, n in zip(offset, grid.shape):
        if abs(s) >= n:
            return out
        dst.append(slice(max(s, 0), n + min(s, 0)))
        src.append(slice(max(-s, 0), n - max(s, 0)))
    out[tuple(dst)] = grid[tuple(src)]
    return out


def alloy_potential(box: LatticeBox, profile: Mapping, omega: np.ndarray) -> np.ndarray:
    """``V(x) = sum_n omega_n a_{x-n}`` over ``n`` in the box (configuration truncation)."""
    grid = np.asarray(omega, dtype=float).reshape(box.shape)
    V = np.zeros(box.shape)
    for offset, a in profile.items():
        if len(offset) != box.d:
            raise ModelError("profile dimension does not match the box")
        V += a * _shifted(grid, offset)
    return V.ravel()


def alloy_adjoint(box: LatticeBox, profile: Mapping, weights: np.ndarray) -> np.ndarray:
    """``g_n = sum_x a_{x-n} w(x)``: the transpose of :func:`alloy_potential`."""
    grid = np.asarray(weights, dtype=float).reshape(box.shape)
    g = np.zeros(box.shape)
    for offset, a in profile.items():
        g += a * _shifted(grid, tuple(-s for s in offset))
    return g.ravel()


def build_hamiltonian(box: LatticeBox, spec: ModelSpec, omega: np.ndarray) -> np.ndarray:
    """Dense symmetric matrix of ``χ_Λ H^ω χ_Λ``."""
    fiber = spec.fiber if spec.kind == MATRIX_VALUED else None
    H = build_laplacian(box, fiber)
    H[np.diag_indices_from(H)] += potential(box, spec, omega)
    return H


def sample_disorder(
    dist: DisorderSpec, box: LatticeBox, spec: ModelSpec, seed: int, trial: int
) -> np.ndarray:
    """iid draws from ``dist``, one per disorder variable, fixed by ``(seed, trial)``."""
    return dist.draw(trial_rng(seed, trial), spec.n_disorder(box))


def sample_disorder_batch(
    dist: DisorderSpec, n: int, seed: int, trials: range, stream: int = 0
) -> np.ndarray:
    """``(len(trials), n)`` array; row ``t`` equals ``n`` draws from trial ``t``'s stream."""
    out = np.empty((len(trials), n))
    for row, t in enumerate(trials):
        out[row] = dist.draw(trial_rng(seed, t, stream), n)
    return out


@dataclass(frozen=True)
class AlloyParameters:
    delta: float
    mean: float
    constraint: float
    K: float
    min_abs_fourier: float

    @property
    def satisfies_constraint(self) -> bool:
        return self.constraint > 0


def alloy_parameters(profile: Mapping, c: float, M: float, grid: int = 256) -> AlloyParameters:
    """Constants of the non-sign-definite alloy model.

    ``delta`` is the off-site mass relative to ``a_0``, ``mean`` is the
    total mass, ``constraint = c/M (1-delta)^2 - 2 delta (1+delta)`` must be
    positive for the gradient lemma, and ``K = a_0 constraint / (1+delta)^2``
    is its lower bound.  ``min_abs_fourier`` is ``min |â|`` over a uniform
    ``grid^d`` mesh of the torus.
    """
    a = normalize_profile(profile)
    d = len(next(iter(a)))
    a0 = a.get((0,) * d, 0.0)
    if a0 <= 0:
        raise ModelError("single-site profile needs a_0 > 0")
    off = sum(abs(v) for k, v in a.items() if any(k))
    delta = off / a0
    if delta >= 1:
        raise ModelError(f"delta = {delta:g} must be < 1")
    constraint = c / M * (1 - delta) ** 2 - 2 * delta * (1 + delta)
    K = a0 * constraint / (1 + delta) ** 2
    theta = np.meshgrid(*[np.arange(grid) * (2 * np.pi / grid)] * d, indexing="ij")
    ahat = np.zeros(theta[0].shape, dtype=complex)
    for k, v in a.items():
        ahat += v * np.exp(1j * sum(t * ki for t, ki in zip(theta, k)))
    return AlloyParameters(
        delta=delta,
        mean=sum(a.values()),
        constraint=constraint,
        K=K,
        min_abs_fourier=float(np.abs(ahat).min()),
    )


def disorder_slices(shape: tuple[int, ...], side: int, count: int) -> list[tuple[slice, ...]]:
    """Row-major list of disjoint sub-grids of ``side`` cells, ``count`` per axis."""
    starts = [range(0, count * side, side)] * len(shape)
    return [tuple(slice(s, s + side) for s in corner) for corner in itertools.product(*starts)]
