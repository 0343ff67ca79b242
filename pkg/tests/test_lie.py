import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from residgen.errors import EvaluationError, UnsupportedOrder
from residgen.exo import make_ramp, make_step
from residgen.lie import LieEngine
from residgen.plant import LinearPlant, extend

coord = st.floats(-2, 2, allow_nan=False)

# phi = x0^2 x1 on R^2 with polynomial fields
phi = lambda X: X[0] ** 2 * X[1]
f_rot = lambda X: np.array([X[1], -X[0]])
f_poly = lambda X: np.array([1.0, X[0] ** 2])


def L_poly(X):
    x0, x1 = X
    return 2 * x0 * x1 + x0 ** 4


def L_rot_L_poly(X):
    x0, x1 = X
    return 2 * x1 ** 2 + 4 * x0 ** 3 * x1 - 2 * x0 ** 2


def L_rot_L_rot(X):
    # L_rot phi = 2 x0 x1^2 - x0^3 ; again along rot
    x0, x1 = X
    return (2 * x1 ** 2 - 3 * x0 ** 2) * x1 + 4 * x0 * x1 * (-x0)


@settings(max_examples=200, deadline=None)
@given(coord, coord)
def test_first_order_within_reported_error(a, b):
    X = np.array([a, b])
    val, err = LieEngine().lie(phi, [f_poly], X)
    assert abs(float(val) - L_poly(X)) <= float(err) + 1e-13


@settings(max_examples=200, deadline=None)
@given(coord, coord)
def test_second_order_within_reported_error(a, b):
    X = np.array([a, b])
    eng = LieEngine()
    for fields, exact in (([f_rot, f_poly], L_rot_L_poly), ([f_rot, f_rot], L_rot_L_rot)):
        val, err = eng.lie(phi, fields, X)
        assert abs(float(val) - exact(X)) <= float(err) + 1e-12


def test_gradient_vs_finite_difference():
    # L_d phi = grad(phi) . d for constant directions
    rng = np.random.default_rng(3)
    eng = LieEngine()
    for X in rng.uniform(-2, 2, (20, 2)):
        grad = np.array([2 * X[0] * X[1], X[0] ** 2])
        for d in np.eye(2):
            val, err = eng.lie(phi, [lambda Z, d=d: d], X)
            assert abs(float(val) - grad @ d) <= float(err) + 1e-13


def test_error_estimate_is_informative():
    val, err = LieEngine().lie(phi, [f_rot, f_poly], np.array([1.0, 1.0]))
    assert err < 1e-5
    # a linear function is differentiated to rounding
    val, err = LieEngine().lie(lambda X: 3 * X[0] - X[1], [lambda X: np.array([1.0, 1.0])], np.zeros(2))
    assert abs(float(val) - 2.0) < 1e-10 and err < 1e-8


def test_order_cap_and_zero_field():
    eng = LieEngine(max_order=2)
    with pytest.raises(UnsupportedOrder):
        eng.lie(phi, [f_rot] * 3, np.ones(2))
    val, err = eng.lie(phi, [lambda X: np.zeros(2)], np.ones(2))
    assert float(val) == 0.0
    with pytest.raises(EvaluationError):
        eng.lie(lambda X: np.log(X[0]), [lambda X: np.array([1.0, 0.0])], np.array([-1.0, 0.0]))
    with pytest.raises(ValueError):
        LieEngine(mode="symbolic")


def test_linear_tables_match_numeric():
    P = LinearPlant(F=[[0, 1], [-2, -3]], G=[0, 1], E=[[1], [0.5]], H=[[1, 0], [0, 1]], J=[0.2, 0], K=[[0], [0]])
    ext = extend(P, make_ramp())
    num = LieEngine(mode="numeric")
    ana = LieEngine()
    assert ana._table(ext) is not None
    for X in np.random.default_rng(0).uniform(-1, 1, (10, 4)):
        Ln, En = num.output_derivatives(ext, X, 2)
        La, Ea = ana.output_derivatives(ext, X, 2)
        assert np.all(np.abs(Ln - La) <= En + 1e-12)
        Dn, Edn = num.disturbance_derivatives(ext, 0, X, 1)
        Da, _ = ana.disturbance_derivatives(ext, 0, X, 1)
        assert np.all(np.abs(Dn - Da) <= Edn + 1e-12)
    # analytic tables lift the order cap
    assert ana.output_derivatives(ext, np.ones(4), 5)[0].shape == (6, 2)
    with pytest.raises(UnsupportedOrder):
        num.output_derivatives(ext, np.ones(4), 3)


def test_analytic_mode_requires_tables():
    from residgen.plant import Channel, NonlinearPlant
    P = NonlinearPlant(1, 1, lambda x: -x, lambda x: x ** 2,
                       [Channel("f", lambda x: np.ones(1), lambda x: np.zeros(1))], "f", [[-1, 1]])
    with pytest.raises(UnsupportedOrder):
        LieEngine(mode="analytic").output_derivatives(extend(P, make_step()), np.zeros(2), 1)
