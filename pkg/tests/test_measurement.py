import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopuwb.geometry import (SPEED_OF_LIGHT as C, AnchorSet, GeometryError, Point2, corner_anchors,
                              true_range_difference, wall_anchors)
from coopuwb.measurement import (R_FLOOR, MeasurementBundle, MeasurementNoiseSpec, build_noise_covariance,
                                 form_tdoa, h_eval, h_jacobian, synth_ranges, synth_toas)

SQUARE = AnchorSet((Point2(0, 0), Point2(10, 0), Point2(10, 10), Point2(0, 10)))


def test_noiseless_toas(rng):
    p = Point2(2.0, 7.0)
    toas = synth_toas(p, wall_anchors(), 0.0, rng)
    expected = [np.hypot(2.0 - a.x, 7.0 - a.y) / C for a in wall_anchors().positions]
    np.testing.assert_array_equal(toas, expected)


def test_center_toas_symmetric(rng):
    toas = synth_toas(Point2(5, 5), SQUARE, 0.0, rng)
    assert np.ptp(toas) == 0


def test_toa_noise_std(rng):
    draws = np.array([synth_toas(Point2(3, 4), SQUARE, 1e-9, rng) for _ in range(25000)]).ravel()
    assert draws.size == 100000
    flight = np.repeat(synth_toas(Point2(3, 4), SQUARE, 0.0, rng)[None], 25000, axis=0).ravel()
    assert np.std(draws - flight) == pytest.approx(1e-9, rel=0.03)


def test_form_tdoa_examples():
    idx, vals = form_tdoa([1e-8, 1e-8, 1e-8], 0)
    assert list(idx) == [1, 2] and np.all(vals == 0)
    idx, vals = form_tdoa([0.0, 1e-9], 0)
    assert vals[0] == pytest.approx(0.299792458, abs=1e-15)


def test_form_tdoa_skips_missing():
    idx, vals = form_tdoa([1e-8, np.nan, 2e-8, 3e-8], 2)
    assert list(idx) == [0, 3]
    idx, vals = form_tdoa([np.nan, 1e-8, 2e-8], 0)
    assert len(idx) == 0


def test_form_tdoa_matches_true_range_difference(rng):
    p = Point2(3.3, 6.1)
    a = wall_anchors()
    idx, vals = form_tdoa(synth_toas(p, a, 0.0, rng), a.reference_index)
    for i, v in zip(idx, vals):
        assert v == pytest.approx(true_range_difference(p, a.positions[i], a.positions[0]), abs=1e-12)


def test_tdoa_covariance_empirical(rng):
    a = wall_anchors()
    flight = synth_toas(Point2(4, 4), a, 0.0, rng)
    toas = flight + rng.normal(0, 1e-9, size=(100000, len(a)))
    vals = C * (toas[:, 1:] - toas[:, [0]])
    cov = np.cov(vals - vals.mean(axis=0), rowvar=False)
    var = (C * 1e-9) ** 2
    np.testing.assert_allclose(np.diag(cov), 2 * var, rtol=0.03)
    assert cov[0, 1] == pytest.approx(var, rel=0.05)


def test_synth_ranges(rng):
    peers = [Point2(0, 0), Point2(3, 4)]
    np.testing.assert_array_equal(synth_ranges(Point2(0, 0), peers, 0.0, rng), [0.0, 5.0])
    draws = np.concatenate([synth_ranges(Point2(1, 1), [Point2(4, 5)], 0.06, rng) for _ in range(100000)])
    assert np.std(draws) == pytest.approx(0.06, rel=0.03)
    assert np.mean(draws) == pytest.approx(5.0, abs=1e-3)


def test_h_eval_bisector_and_compositional():
    a = corner_anchors()
    # (5, 5) is equidistant from (0,0) and (10,0)
    assert h_eval([5, 5, 0, 0], a, [1])[0] == pytest.approx(0, abs=1e-15)
    p = Point2(3.2, 7.7)
    peers = [Point2(1, 1), Point2(8, 3)]
    h = h_eval(p, a, [1, 2, 3, 4], peers)
    expected = [true_range_difference(p, a.positions[i], a.positions[0]) for i in (1, 2, 3, 4)]
    expected += [np.hypot(p.x - q.x, p.y - q.y) for q in peers]
    np.testing.assert_allclose(h, expected, rtol=0, atol=1e-12)
    assert len(h_eval(p, a, [1, 2, 3, 4])) == 4


def test_h_eval_degenerate():
    with pytest.raises(GeometryError):
        h_eval([0, 0, 0, 0], corner_anchors(), [1, 2])
    with pytest.raises(GeometryError):
        h_eval([4, 4, 0, 0], corner_anchors(), [1], [Point2(4, 4)])


def finite_difference(state, anchors, active, peers, step=1e-6):
    H = np.zeros((len(h_eval(state, anchors, active, peers)), 4))
    for k in range(4):
        e = np.zeros(4)
        e[k] = step
        H[:, k] = (h_eval(state + e, anchors, active, peers) - h_eval(state - e, anchors, active, peers)) / (2 * step)
    return H


def jacobian_case(rng):
    anchors = AnchorSet(tuple(Point2(*p) for p in rng.uniform(0, 10, (5, 2))), int(rng.integers(5)))
    state = np.r_[rng.uniform(0, 10, 2), rng.normal(size=2)]
    active = [k for k in range(5) if k != anchors.reference_index]
    peers = [Point2(*q) for q in rng.uniform(0, 10, (int(rng.integers(0, 4)), 2))]
    return state, anchors, active, peers


def jacobian_rel_error(state, anchors, active, peers) -> float:
    H = h_jacobian(state, anchors, active, peers)
    fd = finite_difference(state, anchors, active, peers)
    return float(np.max(np.abs(H - fd) / np.maximum(np.abs(H), 1e-3)))


def test_jacobian_finite_differences(rng):
    for _ in range(100):
        assert jacobian_rel_error(*jacobian_case(rng)) < 1e-5


def test_jacobian_velocity_columns_zero(rng):
    for _ in range(20):
        H = h_jacobian(*jacobian_case(rng))
        assert np.all(H[:, 2:] == 0)


def test_jacobian_reference_row_zero():
    H = h_jacobian([3, 4, 0, 0], corner_anchors(), [0, 1])
    assert np.all(H[0] == 0)


@settings(max_examples=25)
@given(st.permutations([1, 2, 3, 4]))
def test_permutation_invariance(perm):
    a = wall_anchors()
    base = h_eval([3.1, 6.2, 0, 0], a, [1, 2, 3, 4])
    permuted = h_eval([3.1, 6.2, 0, 0], a, perm)
    np.testing.assert_array_equal(permuted, base[np.array(perm) - 1])


def test_noise_covariance_examples():
    R = build_noise_covariance(MeasurementNoiseSpec(1e-9, 0.06), 2, 1)
    var = 0.299792458 ** 2
    np.testing.assert_allclose(R[:2, :2], [[2 * var, var], [var, 2 * var]], rtol=1e-15)
    assert R[0, 0] == pytest.approx(0.179751, abs=1e-6)
    assert R[0, 1] == pytest.approx(0.0898755, abs=1e-7)
    assert R[2, 2] == pytest.approx(0.0036, rel=1e-12)
    assert np.all(R[:2, 2] == 0)
    R = build_noise_covariance(MeasurementNoiseSpec(1e-9, 0.06, tdoa_correlated=False), 4, 0)
    assert np.count_nonzero(R - np.diag(np.diag(R))) == 0


@settings(max_examples=50)
@given(st.floats(0, 1e-8), st.floats(0, 1.0), st.booleans(), st.integers(0, 6), st.integers(0, 4))
def test_noise_covariance_positive_definite(s_toa, s_twr, corr, nt, nr):
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        R = build_noise_covariance(MeasurementNoiseSpec(s_toa, s_twr, corr), nt, nr)
    assert R.shape == (nt + nr, nt + nr)
    np.testing.assert_array_equal(R, R.T)
    if nt + nr:
        assert np.linalg.eigvalsh(R).min() > 0


def test_noise_covariance_floor_warns():
    with pytest.warns(RuntimeWarning):
        R = build_noise_covariance(MeasurementNoiseSpec(0.0, 0.0), 2, 1)
    np.testing.assert_array_equal(R, np.eye(3) * R_FLOOR)


def test_bundle_problems():
    b = MeasurementBundle(np.array([0, 1, 1]), np.array([0.1, 0.2, np.nan]))
    msgs = b.problems(reference_index=0)
    assert len(msgs) == 3
    assert len(b) == 3 and len(b.without_ranges()) == 3
