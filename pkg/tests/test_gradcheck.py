import numpy as np
import pytest

from mmunet import gradcheck
from mmunet import tensor as T


def test_detects_a_wrong_backward():
    def bad_square(x):
        # forward x^2, backward claims 3x
        return T.Tensor._node(x.data**2, (x,), lambda g: (3 * x.data * g,), "bad_square")

    x = T.Tensor(np.random.default_rng(0).uniform(0.5, 1.0, 6), requires_grad=True)
    r = gradcheck.gradcheck(bad_square, [x])
    assert not r.passed
    assert r.max_rel_err == pytest.approx(1 / 3, rel=1e-4)
    assert str(r).endswith("FAIL")


def test_exact_gradient_passes_tightly():
    x = T.Tensor(np.random.default_rng(1).standard_normal((3, 4)), requires_grad=True)
    w = T.Tensor(np.random.default_rng(2).standard_normal((4, 2)), requires_grad=True)
    r = gradcheck.gradcheck(T.matmul, [x, w])
    assert r.passed and r.checked == 20 and r.max_rel_err < 1e-8


def test_sampling_limits_entries():
    x = T.Tensor(np.random.default_rng(3).standard_normal(50), requires_grad=True)
    r = gradcheck.gradcheck(T.gelu, [x], max_per_input=7)
    assert r.checked == 7 and r.passed


@pytest.mark.parametrize("name", sorted(gradcheck.OPS))
def test_every_registered_op_passes(name):
    r = gradcheck.check_op(name, seed=11)
    assert r.passed, str(r)


def test_model_level_ltm_gradient():
    r = gradcheck.check_model_ltm(seed=0, entries=4)
    assert r.passed, str(r)
