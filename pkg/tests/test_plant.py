import numpy as np
import pytest

from residgen.errors import DimensionError, InvalidSpec
from residgen.exo import make_ramp, make_step
from residgen.plant import Channel, LinearPlant, NonlinearPlant, extend, extended_matrices, lift_linear


def scalar_plant(**kw):
    base = dict(F=[[-1.0]], G=[1.0], E=np.zeros((1, 0)), H=[[1.0]], J=[0.0], K=np.zeros((1, 0)))
    base.update(kw)
    return LinearPlant(**base)


def test_linear_plant_dimensions():
    P = scalar_plant()
    assert (P.n, P.p, P.m) == (1, 1, 0)
    with pytest.raises(DimensionError):
        LinearPlant(F=np.ones((2, 3)), G=[1, 1], E=[], H=[[1, 0]], J=[0], K=[])
    with pytest.raises(DimensionError):
        LinearPlant(F=np.eye(2), G=[1, 1], E=np.ones((2, 1)), H=[[1, 0]], J=[0], K=np.ones((1, 2)))
    with pytest.raises(DimensionError):
        scalar_plant(box=[[1.0, -1.0]])
    with pytest.raises(DimensionError):
        scalar_plant(H=[[1.0], [0.0]])  # J has one entry for two outputs


def test_extended_fields_match_block_matrices():
    P = LinearPlant(F=[[0, 1], [-2, -3]], G=[0, 1], E=[[1], [0]], H=[[1, 0]], J=[0.5], K=[[0.0]])
    ext = extend(P, make_ramp())
    Fe, He = extended_matrices(P, make_ramp())
    rng = np.random.default_rng(0)
    for X in rng.standard_normal((10, 4)):
        np.testing.assert_allclose(ext.F_e(X), Fe @ X, atol=1e-14)
        np.testing.assert_allclose(ext.H_e(X), He @ X, atol=1e-14)
        assert ext.fault(X) == X[2]
    np.testing.assert_array_equal(ext.E_e(0)(np.zeros(4)), [1, 0, 0, 0])
    assert ext.box.shape == (4, 2)


def test_nonlinear_plant_relabel_and_checks():
    chans = [Channel("a", lambda x: np.array([1.0, 0.0]), lambda x: np.zeros(1)),
             Channel("b", lambda x: np.array([0.0, x[0]]), lambda x: np.ones(1))]
    P = NonlinearPlant(2, 1, lambda x: -x, lambda x: x[:1] ** 2, chans, "a", [[-1, 1], [-1, 1]])
    assert P.disturbances[0].name == "b"
    Q = P.with_fault("b")
    assert Q.fault == "b" and Q.disturbances[0].name == "a"
    np.testing.assert_allclose(P.dynamics(np.array([1.0, 2.0]), [1.0, 2.0]), [0.0, 0.0])
    with pytest.raises(InvalidSpec):
        NonlinearPlant(2, 1, lambda x: -x, lambda x: x[:1], chans, "zzz", [[-1, 1], [-1, 1]])
    with pytest.raises(DimensionError):
        NonlinearPlant(2, 1, lambda x: x[:1], lambda x: x[:1], chans, "a", [[-1, 1], [-1, 1]])
    bad_rhs = lambda x, u: np.zeros(2)
    with pytest.raises(InvalidSpec):
        NonlinearPlant(2, 1, lambda x: -x, lambda x: x[:1], chans, "a", [[-1, 1], [-1, 1]], rhs=bad_rhs)


def test_impure_callback_rejected():
    state = {"k": 0}

    def H(x):
        state["k"] += 1
        return np.array([x[0] + state["k"]])
    chans = [Channel("f", lambda x: np.zeros(1), lambda x: np.ones(1))]
    with pytest.raises(InvalidSpec):
        NonlinearPlant(1, 1, lambda x: -x, H, chans, "f", [[-1, 1]])


def test_lift_linear_preserves_maps():
    P = scalar_plant(E=[[2.0]], K=[[0.5]])
    L = lift_linear(P)
    x = np.array([0.3])
    np.testing.assert_allclose(L.dynamics(x, [1.0, 2.0]), [-0.3 + 1.0 + 4.0])
    np.testing.assert_allclose(L.output(x, [1.0, 2.0]), [0.3 + 1.0])
    assert L.linear is P
    assert extend(P, make_step()).dim == 2
