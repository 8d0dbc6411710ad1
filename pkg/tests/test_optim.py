import numpy as np
import pytest

from convmkit.optim import SGDMomentum, poly_lr
from convmkit.tensor import Tensor


def test_poly_lr_endpoints():
    assert poly_lr(0.0009, 0, 1000, 0.5) == 0.0009
    assert poly_lr(0.0009, 1000, 1000, 0.5) == 0.0


def test_poly_lr_midpoint():
    got = poly_lr(0.0009, 500, 1000, 0.5)
    assert np.isclose(got, 0.0009 * np.sqrt(0.5), rtol=1e-12)
    assert np.isclose(got, 6.3640e-4, atol=5e-8)


def test_poly_lr_out_of_range():
    with pytest.raises(ValueError):
        poly_lr(0.1, -1, 10, 0.5)
    with pytest.raises(ValueError):
        poly_lr(0.1, 11, 10, 0.5)


def test_negative_lr_rejected():
    p = {"w": Tensor(np.ones(2), requires_grad=True)}
    opt = SGDMomentum(p)
    with pytest.raises(ValueError):
        opt.step(-0.1)


def test_frozen_param_never_moves():
    w = Tensor(np.ones(3), requires_grad=True, dtype=np.float64)
    f = Tensor(np.ones(3), requires_grad=True, dtype=np.float64)
    opt = SGDMomentum({"w": w, "f": f}, momentum=0.9, lr_multipliers={"f": 0.0})
    before = f.data.tobytes()
    for _ in range(5):
        w.grad = np.ones(3)
        f.grad = np.ones(3)
        opt.step(0.1)
    assert f.data.tobytes() == before
    assert not np.array_equal(w.data, np.ones(3))


def test_momentum_accumulates():
    w = Tensor(np.zeros(1), requires_grad=True, dtype=np.float64)
    opt = SGDMomentum({"w": w}, momentum=0.5)
    w.grad = np.ones(1)
    opt.step(1.0)   # v=1, w=-1
    w.grad = np.ones(1)
    opt.step(1.0)   # v=1.5, w=-2.5
    assert np.isclose(w.data[0], -2.5)


def test_lr_multiplier_scales_update():
    a = Tensor(np.zeros(1), requires_grad=True, dtype=np.float64)
    b = Tensor(np.zeros(1), requires_grad=True, dtype=np.float64)
    opt = SGDMomentum({"a": a, "b": b}, momentum=0.0, lr_multipliers={"b": 10.0})
    a.grad = np.ones(1)
    b.grad = np.ones(1)
    opt.step(0.01)
    assert np.isclose(b.data[0], 10 * a.data[0])
