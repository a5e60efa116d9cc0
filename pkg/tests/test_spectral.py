import numpy as np
import pytest

from decorr.model_builder import DisorderSpec, LatticeBox, ModelSpec, batch_potentials, build_hamiltonian
from decorr.spectral import (
    EnergyWindow,
    Spectrum,
    SpectralError,
    batch_counts,
    batch_eigenvalues,
    cluster_gap,
    count_in_window,
    eigendecompose,
    localization_diagnostics,
    spectral_projector,
    sturm_count,
)


def spec_of(values):
    v = np.asarray(values, dtype=float)
    return Spectrum(v, np.eye(v.size))


def test_two_by_two_eigenpairs():
    s = eigendecompose(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(s.eigenvalues, [-1, 1], atol=1e-15)
    v = s.eigenvectors
    np.testing.assert_allclose(np.abs(v), np.full((2, 2), 1 / np.sqrt(2)))
    assert v[0, 0] * v[1, 0] < 0 < v[0, 1] * v[1, 1]


def test_one_by_one():
    np.testing.assert_array_equal(eigendecompose(np.array([[0.7]])).eigenvalues, [0.7])


def test_asymmetric_rejected():
    with pytest.raises(SpectralError):
        eigendecompose(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_closed_form_two_site():
    """t/2 ± sqrt((δ/2)^2 + 1) for [[a, 1], [1, b]]."""
    rng = np.random.default_rng(1)
    for a, b in rng.uniform(-3, 3, (50, 2)):
        t, dl = a + b, a - b
        r = np.sqrt((dl / 2) ** 2 + 1)
        ev = eigendecompose(np.array([[a, 1.0], [1.0, b]])).eigenvalues
        np.testing.assert_allclose(ev, [t / 2 - r, t / 2 + r], atol=1e-12)


def test_eigen_residual_and_orthonormality():
    rng = np.random.default_rng(2)
    model = ModelSpec.matrix_valued(2, fiber=np.array([[2.0, 0.3], [0.3, 1.0]]))
    box = LatticeBox(2, 2)
    H = build_hamiltonian(box, model, rng.uniform(-4, 4, box.n_sites))
    s = eigendecompose(H)
    scale = max(1.0, np.linalg.norm(H))
    assert np.abs(H @ s.eigenvectors - s.eigenvectors * s.eigenvalues).max() <= 1e-10 * scale
    assert np.abs(s.eigenvectors.T @ s.eigenvectors - np.eye(s.order)).max() <= 1e-10
    assert abs(s.eigenvalues.sum() - np.trace(H)) <= 1e-8 * max(1, abs(np.trace(H)))


def test_count_examples():
    assert count_in_window(spec_of([-1, 1]), EnergyWindow(0.5, 1.5)) == 1
    assert count_in_window(spec_of([-1, 1]), EnergyWindow(-2, 2)) == 2
    assert count_in_window(spec_of([0.3, 0.3, 0.9]), EnergyWindow(0.2999, 0.3001)) == 2


def test_half_open_partition_counts_every_eigenvalue():
    ev = np.array([-1.0, 0.0, 0.0, 0.5, 1.0])
    edges = np.linspace(-2, 2, 9)
    total = sum(count_in_window(spec_of(ev), EnergyWindow(a, b)) for a, b in zip(edges, edges[1:]))
    assert total == ev.size


def test_window_empty_rejected():
    with pytest.raises(ValueError):
        EnergyWindow(1.0, 1.0)


def test_scaled_window():
    w = EnergyWindow.scaled(-4.0, (-2.0, 2.0), 8, 1)
    assert (w.lo, w.hi) == (-4.25, -3.75)


def test_projector_examples():
    s = eigendecompose(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(spectral_projector(s, EnergyWindow(0.5, 1.5)), np.full((2, 2), 0.5), atol=1e-15)
    np.testing.assert_array_equal(spectral_projector(s, EnergyWindow(5, 6)), np.zeros((2, 2)))
    np.testing.assert_allclose(spectral_projector(s, EnergyWindow(-5, 5)), np.eye(2), atol=1e-10)


def test_projector_idempotent_trace():
    rng = np.random.default_rng(4)
    H = build_hamiltonian(LatticeBox(1, 6), ModelSpec.rank_one(), rng.uniform(-4, 4, 13))
    s = eigendecompose(H)
    w = EnergyWindow(-1, 2)
    P = spectral_projector(s, w)
    assert np.abs(P @ P - P).max() <= 1e-10
    assert abs(np.trace(P) - count_in_window(s, w)) <= 1e-10


def test_cluster_gap():
    s = spec_of([0.0, 1.0, 1.1, 3.0])
    assert cluster_gap(s, EnergyWindow(0.9, 1.2)) == pytest.approx(1.0)
    assert cluster_gap(s, EnergyWindow(10, 11)) == np.inf


def test_localization_center_and_ties():
    box = LatticeBox(1, 1)
    phi = np.array([0.1, 0.9, 0.2])
    prof = localization_diagnostics(Spectrum(np.zeros(1), (phi / np.linalg.norm(phi))[:, None]), box)
    assert prof[0].center == (0,) and prof[0].index == 0
    tie = np.array([1.0, 0.0, 1.0]) / np.sqrt(2)
    assert localization_diagnostics(Spectrum(np.zeros(1), tie[:, None]), box)[0].center == (-1,)


def test_localization_delta_passes():
    box = LatticeBox(1, 3)
    phi = np.zeros(7)
    phi[3] = 1
    p = localization_diagnostics(Spectrum(np.zeros(1), phi[:, None]), box, fit=False, q=0.0, nu=50.0)[0]
    assert p.center == (0,) and p.passes


def test_strong_disorder_band_edge_localized():
    """Golden observation: eigenvectors near the band edge decay at M=4."""
    box, model = LatticeBox(1, 32), ModelSpec.rank_one()
    rng = np.random.Generator(np.random.Philox(11))
    rates = []
    for _ in range(10):
        s = eigendecompose(build_hamiltonian(box, model, DisorderSpec("uniform", 4.0).draw(rng, box.n_sites)))
        rates += [p.decay_rate for p in localization_diagnostics(s, box, EnergyWindow(-7, -3.5))]
    assert np.median(rates) > 0


def test_sturm_matches_dense():
    rng = np.random.default_rng(5)
    D = rng.uniform(-4, 4, (30, 17))
    ev = batch_eigenvalues(ModelSpec.rank_one(), LatticeBox(1, 8), D)
    for x in (-3.0, -0.5, 0.0, 2.2):
        np.testing.assert_array_equal(sturm_count(D, x), (ev < x).sum(axis=1))


@pytest.mark.parametrize("model", [ModelSpec.rank_one(), ModelSpec.matrix_valued(2), ModelSpec.alloy({0: 1.0, 1: -0.3})])
def test_batch_counts_match_single(model):
    box = model.box_for(1, 4)
    rng = np.random.default_rng(6)
    omegas = rng.uniform(-3, 3, (8, model.n_disorder(box)))
    wins = [EnergyWindow(-1, 0.5), EnergyWindow(2, 4)]
    got = batch_counts(model, box, batch_potentials(box, model, omegas), wins)
    for t, om in enumerate(omegas):
        s = eigendecompose(build_hamiltonian(box, model, om))
        assert list(got[t]) == [count_in_window(s, w) for w in wins]
