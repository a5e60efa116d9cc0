import warnings

import numpy as np
import pytest

from decorr.model_builder import DisorderSpec, LatticeBox, ModelSpec
from decorr.montecarlo import (
    ProbabilityEstimate,
    RegimeError,
    check_regime,
    config_hash,
    decorrelation_scan,
    estimate_event,
    jacobian_event_scan,
    minami_statistic,
    scaling_fit,
    simulate_counts,
    wegner_scan,
)
from decorr.spectral import EnergyWindow
from oracles import one_site_probability, two_site_probability, within_sigma

# ω ~ U[0, 1] is ω' + 1/2 with ω' ~ U[-1/2, 1/2]; windows shift by -1/2.
HALF = DisorderSpec("uniform", 0.5)


def test_always_true_predicate():
    est = estimate_event(ModelSpec.rank_one(), LatticeBox(1, 1), HALF, [EnergyWindow(-9, 9)], lambda c: c[:, 0] >= 0, 100, 1)
    assert est.point == 1.0


def test_one_site_oracle():
    est = estimate_event(ModelSpec.rank_one(), LatticeBox(1, 0), HALF, [EnergyWindow(-0.3, 0.0)], lambda c: c[:, 0] >= 1, 20000, 2)
    p = one_site_probability(-0.3, 0.0, 0.5)
    assert p == pytest.approx(0.3)
    assert within_sigma(est.successes, est.trials, p)


def test_two_site_quadrature_oracle():
    box = LatticeBox(1, 0, side=2)
    est = estimate_event(ModelSpec.rank_one(), box, HALF, [EnergyWindow(0.4, 0.6)], lambda c: c[:, 0] >= 1, 20000, 3)
    assert within_sigma(est.successes, est.trials, two_site_probability(0.4, 0.6, 0.5))


def test_wilson_interval_contains_point():
    for s, n in [(0, 10), (3, 10), (10, 10), (500, 1000)]:
        e = ProbabilityEstimate(s, n)
        lo, hi = e.interval
        assert 0 <= lo <= e.point <= hi <= 1
    lo, hi = ProbabilityEstimate(0, 1000).interval
    assert lo == 0 and 0 < hi < 0.01


def test_scaling_fit_exact_power_law():
    s = np.array([2.0, 4, 8, 16])
    fit = scaling_fit(s, s**-2.0)
    assert fit.slope == pytest.approx(-2.0, abs=1e-9)
    assert scaling_fit(s, np.full(4, 0.3)).slope == pytest.approx(0.0, abs=1e-12)


def test_scaling_fit_noisy():
    rng = np.random.default_rng(0)
    s = 2.0 ** np.arange(1, 7)
    slopes = [scaling_fit(s, s**-2.0 * (1 + 0.05 * rng.normal(size=6))).slope for _ in range(200)]
    assert np.all(np.abs(np.array(slopes) + 2) <= 0.15)


def test_scaling_fit_errors_and_drops():
    with pytest.raises(ValueError):
        scaling_fit([1, 2], [0.5, 0.25])
    with pytest.raises(ValueError):
        scaling_fit([1, 2, 2], [0.5, 0.25, 0.1])
    fit = scaling_fit([1, 2, 4, 8], [0.5, 0.25, 0.125, 0.001], successes=[50, 25, 12, 2])
    assert list(fit.used) == [True, True, True, False]
    assert fit.slope == pytest.approx(-1.0)


def test_minami_statistic():
    assert minami_statistic(np.array([3]), 2)[0] == 3
    np.testing.assert_array_equal(minami_statistic(np.array([0, 1, 2]), 2), [0, 0, 0])


def test_zero_width_interval():
    res = wegner_scan(ModelSpec.rank_one(), DisorderSpec("uniform", 4.0), 1, -4.0, (0.0, 0.0), [2, 4, 8], 16, 100, 0)
    assert all(p.estimate.point == 0 for p in res.points) and res.fit is None


def test_wider_interval_more_likely():
    m, dist = ModelSpec.rank_one(), DisorderSpec("uniform", 4.0)
    narrow = wegner_scan(m, dist, 1, -4.0, (-1.0, 1.0), [2, 4, 8], 64, 4000, 5)
    wide = wegner_scan(m, dist, 1, -4.0, (-2.0, 2.0), [2, 4, 8], 64, 4000, 5)
    # same seed and stream: the wide window contains the narrow one trial by trial
    for a, b in zip(narrow.points, wide.points):
        assert a.estimate.successes <= b.estimate.successes


def test_worker_count_does_not_change_counts():
    m, box, dist = ModelSpec.rank_one(), LatticeBox(1, 6), DisorderSpec("uniform", 4.0)
    w = [EnergyWindow(-1, 1)]
    a = simulate_counts(m, box, dist, w, 5000, 9, workers=1)
    b = simulate_counts(m, box, dist, w, 5000, 9, workers=2)
    np.testing.assert_array_equal(a, b)


def test_regime_check():
    with pytest.warns(UserWarning, match="outside the theorem's regime"):
        assert not check_regime(0.0, 2.0, 1)
    with pytest.raises(RegimeError):
        check_regime(0.0, 2.0, 1, strict=True)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert check_regime(-5.0, 5.0, 1)


def test_independent_boxes_control():
    """Counts from two different streams are independent: joint = product within 3σ."""
    m, box, dist = ModelSpec.rank_one(), LatticeBox(1, 2), DisorderSpec("uniform", 4.0)
    w = [EnergyWindow(-1, 1)]
    A = simulate_counts(m, box, dist, w, 40000, 1, stream=0)[:, 0] >= 1
    B = simulate_counts(m, box, dist, w, 40000, 1, stream=1)[:, 0] >= 1
    joint, prod = (A & B).mean(), A.mean() * B.mean()
    cov = (A - A.mean()) * (B - B.mean())
    assert abs(joint - prod) <= 3 * cov.std() / np.sqrt(A.size)


def test_decorrelation_axioms():
    res = decorrelation_scan(
        ModelSpec.rank_one(), DisorderSpec("uniform", 8.0), 1, -5.0, 5.0, (-16, 16), (-16, 16), 0.5, [16, 32, 64], 3000, 2
    )
    for p in res.points:
        assert p.joint.point <= min(p.marginal_E.point, p.marginal_Ep.point)
        assert p.product <= min(p.marginal_E.point, p.marginal_Ep.point)


def test_decorrelation_same_event():
    with pytest.warns(UserWarning):
        res = decorrelation_scan(
            ModelSpec.rank_one(), DisorderSpec("uniform", 4.0), 1, 0.0, 0.0, (-2, 2), (-2, 2), 0.5, [16, 32, 64], 500, 2
        )
    assert not res.in_regime
    for p in res.points:
        assert p.joint.successes == p.marginal_E.successes


def test_jacobian_identical_windows():
    m = ModelSpec.rank_one()
    box = LatticeBox(1, 4)
    w = EnergyWindow(-2, 2)
    res = jacobian_event_scan(m, DisorderSpec("uniform", 4.0), box, w, w, 1e-3, 100, 1)
    assert res.qualifying > 0
    assert np.nanmax(res.records["max_jacobian"]) == 0
    assert res.event.point == 0


def test_config_hash_stable():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
