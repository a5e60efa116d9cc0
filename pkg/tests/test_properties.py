"""Invariants as property tests."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from decorr.eigstats import jacobian_2x2, klopp_determinant_bound, trace_gradient, weighted_trace
from decorr.model_builder import DisorderSpec, LatticeBox, ModelSpec, build_hamiltonian, build_projection_family
from decorr.montecarlo import ProbabilityEstimate
from decorr.pointprocess import cluster_sizes
from decorr.spectral import EnergyWindow, count_in_window, eigendecompose, spectral_projector

floats = st.floats(-5, 5, allow_nan=False)
models = st.sampled_from([ModelSpec.rank_one(), ModelSpec.polymer(block=2), ModelSpec.matrix_valued(2)])


@st.composite
def realizations(draw):
    model = draw(models)
    d = draw(st.integers(1, 2))
    L = draw(st.integers(1, 3 if d == 1 else 2))
    box = model.box_for(d, L)
    omega = draw(arrays(float, model.n_disorder(box), elements=floats))
    return model, box, omega


@settings(max_examples=60, deadline=None)
@given(realizations(), st.floats(-8, 8), st.floats(0.05, 6))
def test_weighted_trace_properties(real, lo, width):
    model, box, omega = real
    spec = eigendecompose(build_hamiltonian(box, model, omega))
    w = EnergyWindow(lo, lo + width)
    if count_in_window(spec, w) == 0:
        return
    t = weighted_trace(spec, w)
    assert w.lo <= t.value < w.hi
    g = trace_gradient(spec, w, box, model).components
    assert g.min() >= -1e-12
    assert abs(np.abs(g).sum() - 1) <= 1e-8


@settings(max_examples=60, deadline=None)
@given(realizations())
def test_hamiltonian_symmetric_partition(real):
    model, box, omega = real
    H = build_hamiltonian(box, model, omega)
    assert np.array_equal(H, H.T)
    cover = np.concatenate(build_projection_family(box, model))
    assert np.array_equal(np.sort(cover), np.arange(H.shape[0]))


@settings(max_examples=60, deadline=None)
@given(realizations(), st.lists(st.floats(-12, 12), min_size=1, max_size=6, unique=True))
def test_partition_counts_sum_to_order(real, cuts):
    model, box, omega = real
    spec = eigendecompose(build_hamiltonian(box, model, omega))
    edges = [-100.0] + sorted(cuts) + [100.0]
    assert sum(count_in_window(spec, EnergyWindow(a, b)) for a, b in zip(edges, edges[1:])) == spec.order


@settings(max_examples=40, deadline=None)
@given(realizations(), st.floats(-8, 8), st.floats(0.05, 6))
def test_projector_idempotent(real, lo, width):
    model, box, omega = real
    spec = eigendecompose(build_hamiltonian(box, model, omega))
    w = EnergyWindow(lo, lo + width)
    P = spectral_projector(spec, w)
    assert np.abs(P @ P - P).max() <= 1e-10
    assert abs(np.trace(P) - count_in_window(spec, w)) <= 1e-10


@st.composite
def normalized_pairs(draw):
    n = draw(st.integers(2, 64))
    u = draw(arrays(float, n, elements=st.floats(0, 1)))
    v = draw(arrays(float, n, elements=st.floats(0, 1)))
    if u.sum() == 0 or v.sum() == 0:
        u, v = np.eye(n)[0], np.eye(n)[1]
    return u / u.sum(), v / v.sum()


@settings(max_examples=300, deadline=None)
@given(normalized_pairs())
def test_klopp_bound_property(pair):
    assert klopp_determinant_bound(*pair).holds


@given(arrays(float, 5, elements=floats), arrays(float, 5, elements=floats), st.integers(0, 4), st.integers(0, 4))
def test_jacobian_antisymmetric(g, gp, i, j):
    if i == j:
        return
    assert jacobian_2x2(g, gp, i, j) == -jacobian_2x2(g, gp, j, i)
    assert jacobian_2x2(g, g, i, j) == 0


@given(st.lists(st.integers(-10240, 10240), max_size=30), st.integers(0, 1000), st.integers(-102400, 102400))
def test_cluster_translation_invariant(ticks, res_ticks, shift_ticks):
    # values on a 1/1024 grid with a half-tick resolution: shifts are exact, no gap ties the threshold
    ev = np.array(ticks, dtype=float) / 1024
    res = (res_ticks + 0.5) / 1024
    sizes = cluster_sizes(ev, res)
    assert sizes.sum() == len(ev)
    np.testing.assert_array_equal(cluster_sizes(ev + shift_ticks / 1024, res), sizes)


@given(st.integers(0, 500), st.integers(1, 500))
def test_wilson_interval_contains_point(s, extra):
    e = ProbabilityEstimate(s, s + extra)
    lo, hi = e.interval
    assert 0 <= lo <= e.point <= hi <= 1


@given(st.sampled_from(["uniform", "triangular"]), st.floats(0.1, 10), st.integers(0, 2**32))
def test_disorder_support(density, M, seed):
    dist = DisorderSpec(density, M)
    x = dist.draw(np.random.Generator(np.random.Philox(seed)), 200)
    assert np.all(np.abs(x) <= M)


@given(st.integers(1, 3), st.integers(0, 4))
def test_box_index_roundtrip(d, L):
    box = LatticeBox(d, L)
    assert all(box.index(box.coord(i)) == i for i in range(box.n_sites))
