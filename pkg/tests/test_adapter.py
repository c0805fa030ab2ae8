import numpy as np
import pytest

from sskg.adapter import (
    AdapterParams,
    EmptyQueryError,
    adapter_forward,
    adapter_vjp,
    align,
    cross_attend,
    cross_attend_vjp,
    init_adapter,
)
from sskg.numerics import Rng, grad_check


def _params(h=3, d_g=2, seed=0, **overrides):
    p = init_adapter(seed, d_g, h)
    return AdapterParams(**{**vars(p), **overrides})


def test_align_examples():
    p = _params(w_align=np.array([[1.0, 0, 1], [0, 1, 1]]), b_align=np.array([0.0, 0, 1]))
    assert align(np.array([[1.0, 2.0]]), p).tolist() == [[1.0, 2.0, 4.0]]
    z = _params()
    assert np.array_equal(align(np.zeros((2, 2)), z), np.zeros((2, 3)))
    ident = _params(h=4, d_g=4, w_align=np.eye(4), b_align=np.zeros(4))
    x = Rng(1).normal((3, 4))
    assert np.array_equal(align(x, ident), x)


def test_align_shape_mismatch():
    with pytest.raises(ValueError):
        align(np.zeros((1, 5)), _params())


def test_cross_attend_residual_identity():
    rng = Rng(2)
    kg0, q_e = rng.normal((4, 3)), rng.normal((5, 3))
    p = _params(wo=np.zeros((3, 3)))
    assert np.array_equal(cross_attend(kg0, q_e, p), kg0)


def test_cross_attend_single_key():
    rng = Rng(3)
    kg0, q_e = rng.normal((4, 3)), rng.normal((1, 3))
    p = _params(wv=np.eye(3), wo=np.eye(3))
    assert np.allclose(cross_attend(kg0, q_e, p), kg0 + q_e[0], atol=1e-15, rtol=0)


def test_cross_attend_uniform_attention():
    kg0 = np.array([[1.0, 0.0, 2.0], [0.5, -1.0, 0.0]])
    q_e = np.array([[2.0, 0.0, 0.0], [0.0, 4.0, 0.0]])
    p = _params(wq=np.zeros((3, 3)), wv=np.eye(3), wo=np.eye(3))
    out, back = cross_attend_vjp(kg0, q_e, p)
    assert np.array_equal(back.attention, np.full((2, 2), 0.5))
    assert np.allclose(out, kg0 + np.array([1.0, 2.0, 0.0]), atol=1e-15, rtol=0)


def test_cross_attend_empty_query():
    with pytest.raises(EmptyQueryError, match="empty query context"):
        cross_attend(np.zeros((2, 3)), np.zeros((0, 3)), _params())


def test_attention_rows_sum_to_one():
    rng = Rng(4)
    _, back = cross_attend_vjp(rng.normal((6, 8)) * 3, rng.normal((9, 8)) * 3, init_adapter(1, 8, 8))
    assert np.all(np.abs(back.attention.sum(axis=1) - 1.0) <= 1e-9)


def test_adapter_forward_composition_and_rows():
    rng = Rng(5)
    p = init_adapter(2, 4, 6)
    kg, q_e = rng.normal((3, 4)), rng.normal((7, 6))
    out = adapter_forward(kg, q_e, p)
    assert out.shape == (3, 6)
    assert np.array_equal(out, cross_attend(align(kg, p), q_e, p))
    assert adapter_forward(np.zeros((0, 4)), q_e, p).shape == (0, 6)


def _loss(p_dict, kg, q_e, w):
    out, back = adapter_vjp(kg, q_e, AdapterParams(**p_dict, seed=0))
    return float((out * w).sum()), back(w)


@pytest.mark.parametrize("seed", range(3))
def test_adapter_grad_check(seed):
    rng = Rng(seed)
    d_g, h = 5, 4
    p = init_adapter(seed, d_g, h)
    params = {k: v.copy() for k, v in p.tensors().items()}
    params["b_align"] += rng.normal((h,), 0.1)
    kg, q_e, w = rng.normal((3, d_g)), rng.normal((4, h)), rng.normal((3, h))
    assert grad_check(lambda q: _loss(q, kg, q_e, w), params) < 1e-4


def test_all_params_receive_gradient():
    rng = Rng(7)
    p = init_adapter(7, 5, 4)
    _, back = adapter_vjp(rng.normal((3, 5)), rng.normal((4, 4)), p)
    grads = back(rng.normal((3, 4)))
    assert set(grads) == set(p.tensors())
    for name, g in grads.items():
        assert np.any(g != 0), name


def test_checkpoint_round_trip(tmp_path):
    p = init_adapter(3, 4, 6)
    p.save(tmp_path / "ad")
    q = AdapterParams.load(tmp_path / "ad")
    for name, t in p.tensors().items():
        assert t.tobytes() == q.tensors()[name].tobytes()
