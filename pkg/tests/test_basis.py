import numpy as np
import pytest
from scipy.integrate import quad

from metasurv import _kernels
from metasurv.basis import BasisSet, KnotGrid, make_basis
from metasurv.errors import ConfigError, DomainError, UsageError


def test_knot_grid_validation():
    with pytest.raises(ConfigError):
        KnotGrid(np.array([1.0]))
    with pytest.raises(ConfigError):
        KnotGrid(np.array([0.0, 0.0, 1.0]))
    with pytest.raises(ConfigError):
        KnotGrid(np.array([-1.0, 1.0]))
    with pytest.raises(ConfigError):
        make_basis("cubic", [0.0, 1.0])


def test_constant_evaluate_indicator():
    b = make_basis("constant", [0, 2, 4])
    assert np.array_equal(b.evaluate(3.0), [0.0, 1.0])
    assert np.array_equal(b.evaluate(0.0), [1.0, 0.0])
    # last function holds value 1 beyond the grid
    assert np.array_equal(b.evaluate(9.0), [0.0, 1.0])


def test_linear_evaluate_hats():
    b = make_basis("linear", [0, 2, 4])
    assert np.allclose(b.evaluate(3.0), [0.0, 0.5, 0.5])
    # exact interpolation nodes
    for k, t in enumerate([0.0, 2.0, 4.0]):
        expected = np.zeros(3)
        expected[k] = 1.0
        assert np.array_equal(b.evaluate(t), expected)
    assert np.array_equal(b.evaluate(11.0), [0.0, 0.0, 1.0])


def test_negative_time_rejected():
    b = make_basis("linear", [0, 2, 4])
    with pytest.raises(UsageError):
        b.evaluate(-0.5)
    with pytest.raises(UsageError):
        b.integrate(-2.0)


def test_integrate_hand_values():
    b = make_basis("constant", [0, 2, 4])
    assert np.array_equal(b.integrate(3.0), [2.0, 1.0])
    assert np.array_equal(b.integrate(0.0), [0.0, 0.0])
    b2 = make_basis("linear", [0, 2])
    assert np.allclose(b2.integrate(2.0), [1.0, 1.0])
    assert np.array_equal(b2.integrate(0.0), [0.0, 0.0])


def test_inverse_hand_values():
    b = make_basis("constant", [0, 2, 4])
    assert b.inverse_weighted_integral([1.0, 1.0], 3.0) == pytest.approx(3.0, abs=1e-12)
    assert b.inverse_weighted_integral([2.0, 0.5], 4.5) == pytest.approx(3.0, abs=1e-12)
    assert b.inverse_weighted_integral([2.0, 0.5], 0.0) == 0.0


def test_inverse_unreachable_reports_supremum():
    b = make_basis("constant", [0, 2, 4])
    with pytest.raises(DomainError) as err:
        b.inverse_weighted_integral([1.0, 0.0], 3.0)
    assert err.value.supremum == pytest.approx(2.0)


def test_partition_of_unity_linear():
    rng = np.random.default_rng(0)
    b = make_basis("linear", [0.0, 0.5, 1.7, 3.0, 7.5, 10.0])
    ts = rng.uniform(0.0, 10.0, size=1000)
    sums = b.evaluate(ts).sum(axis=1)
    assert np.all(np.abs(sums - 1.0) < 1e-12)


def test_nonnegative_everywhere():
    rng = np.random.default_rng(1)
    for kind in ("constant", "linear"):
        b = make_basis(kind, [0.0, 1.0, 2.5, 6.0])
        ts = rng.uniform(0.0, 9.0, size=500)
        assert np.all(b.evaluate(ts) >= 0.0)
        assert np.all(b.integrate(ts) >= 0.0)


def test_integrate_is_antiderivative_of_evaluate():
    rng = np.random.default_rng(2)
    knots = [0.0, 0.8, 2.0, 3.5, 5.0]
    for kind in ("constant", "linear"):
        b = make_basis(kind, knots)
        for _ in range(10):
            lo, hi = np.sort(rng.uniform(0.0, 7.0, size=2))
            direct = b.integrate(hi) - b.integrate(lo)
            breaks = [k for k in knots if lo < k < hi]
            for k in range(b.size):
                quadrature, _ = quad(
                    lambda t, k=k: b.evaluate(t)[k], lo, hi, points=breaks or None, limit=200
                )
                assert abs(quadrature - direct[k]) < 1e-9


def test_inverse_roundtrip_identity():
    rng = np.random.default_rng(3)
    for kind in ("constant", "linear"):
        b = make_basis(kind, [0.0, 0.7, 1.3, 2.9, 5.0])
        weights = rng.uniform(0.05, 3.0, size=(100, b.size))
        ts = rng.uniform(0.0, 8.0, size=100)
        targets = (weights * b.integrate(ts)).sum(axis=1)
        recovered = b.invert_weighted(weights, targets)
        assert np.all(np.abs(recovered - ts) < 1e-10)


def test_inverse_picks_smallest_time():
    # first interval carries all the mass; the solution stays at its end
    b = make_basis("linear", [0.0, 2.0, 4.0])
    t = b.inverse_weighted_integral([1.0, 1.0, 0.0], 2.0)
    assert t == pytest.approx(2.0, abs=1e-12)
    # zero target is reached at zero even when mass starts later
    assert b.inverse_weighted_integral([0.0, 1.0, 1.0], 0.0) == 0.0


def test_backends_agree():
    rng = np.random.default_rng(4)
    knots = np.array([0.0, 0.4, 1.1, 2.0, 3.7])
    ts = np.ascontiguousarray(rng.uniform(0.0, 5.0, size=300))
    pairs = [
        (_kernels.pwc_values_nb, _kernels.pwc_values_np),
        (_kernels.pwc_integrals_nb, _kernels.pwc_integrals_np),
        (_kernels.pwl_values_nb, _kernels.pwl_values_np),
        (_kernels.pwl_integrals_nb, _kernels.pwl_integrals_np),
    ]
    for fn_nb, fn_np in pairs:
        assert np.allclose(fn_nb(knots, ts), fn_np(knots, ts), rtol=1e-13, atol=0)

    for nb, npy, width in (
        (_kernels.pwc_invert_nb, _kernels.pwc_invert_np, knots.size - 1),
        (_kernels.pwl_invert_nb, _kernels.pwl_invert_np, knots.size),
    ):
        weights = np.ascontiguousarray(rng.uniform(0.05, 2.0, size=(200, width)))
        targets = np.ascontiguousarray(rng.uniform(0.0, 6.0, size=200))
        assert np.allclose(nb(knots, weights, targets), npy(knots, weights, targets), rtol=1e-13)


def test_integrand_slope():
    b = make_basis("linear", [0.0, 2.0, 4.0])
    w = np.array([[1.0, 3.0, 2.0]])
    assert b.integrand_slope(w, [1.0])[0] == pytest.approx(1.0)  # (3-1)/2
    assert b.integrand_slope(w, [3.0])[0] == pytest.approx(-0.5)  # (2-3)/2
    assert b.integrand_slope(w, [5.0])[0] == 0.0
    bc = make_basis("constant", [0.0, 2.0, 4.0])
    assert bc.integrand_slope(np.array([[1.0, 2.0]]), [1.0])[0] == 0.0
