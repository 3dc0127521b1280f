import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from croco.bagbranch import (AttentionParams, attention_scores, bag_branch_backward, bag_forward, bag_predict,
                             init_attention, init_bag_branch, normalize_attention, normalize_attention_backward, pool)
from croco.errors import DomainError, ShapeError
from croco.numkernel import SeededRng, grad_check


def branch(d=5, h=4, L=3, seed=0):
    return init_bag_branch(SeededRng(seed), d, h, L)


class TestAttention:
    def test_simplex(self, rng):
        att = init_attention(SeededRng(0), 4, 3)
        a = attention_scores(att, rng.normal(size=(9, 4)))
        assert a.shape == (9,)
        assert abs(a.sum() - 1) < 1e-12 and np.all(a > 0)

    def test_single_instance_gets_all_weight(self, rng):
        att = init_attention(SeededRng(0), 4, 3)
        assert attention_scores(att, rng.normal(size=(1, 4)))[0] == pytest.approx(1.0)

    def test_permutation_equivariant(self, rng):
        att = init_attention(SeededRng(1), 4, 6)
        z = rng.normal(size=(10, 4))
        perm = rng.permutation(10)
        assert np.allclose(attention_scores(att, z)[perm], attention_scores(att, z[perm]), atol=1e-15)

    def test_zero_w_is_uniform(self, rng):
        att = AttentionParams(np.ones((2, 3)), np.zeros(2))
        assert np.allclose(attention_scores(att, rng.normal(size=(4, 3))), 0.25)

    def test_errors(self, rng):
        att = init_attention(SeededRng(0), 4, 3)
        with pytest.raises(DomainError):
            attention_scores(att, np.zeros((0, 4)))
        with pytest.raises(ShapeError):
            attention_scores(att, rng.normal(size=(3, 5)))
        with pytest.raises(ShapeError):
            AttentionParams(np.zeros((2, 3)), np.zeros(3))


class TestPool:
    def test_one_hot_selects_row(self, rng):
        z = rng.normal(size=(4, 3))
        assert np.array_equal(pool(z, np.array([0, 0, 1.0, 0])), z[2])

    def test_order_invariant(self, rng):
        z = rng.normal(size=(6, 3))
        a = rng.dirichlet(np.ones(6))
        p = rng.permutation(6)
        assert np.allclose(pool(z, a), pool(z[p], a[p]), atol=1e-12)

    def test_length_mismatch(self, rng):
        with pytest.raises(ShapeError):
            pool(rng.normal(size=(3, 2)), np.ones(2) / 2)


class TestNormalize:
    def test_range(self):
        y = normalize_attention(np.array([0.1, 0.5, 0.4]))
        assert np.allclose(y, [0.0, 1.0, 0.75])

    def test_constant_maps_to_half(self):
        assert np.array_equal(normalize_attention(np.full(5, 0.2)), np.full(5, 0.5))

    @settings(max_examples=200)
    @given(arrays(np.float64, st.integers(2, 20), elements=st.floats(0, 1)))
    def test_bounds(self, a):
        y = normalize_attention(a)
        assert np.all((y >= 0) & (y <= 1))

    def test_backward_finite_difference(self, rng):
        a = rng.dirichlet(np.ones(7))
        g = rng.normal(size=7)
        ga = normalize_attention_backward(a, g)
        rep = grad_check(lambda: float(g @ normalize_attention(a)), {"a": a}, {"a": ga}, step=1e-7)
        assert rep.ok, rep.max_rel_error

    def test_backward_degenerate_is_zero(self):
        assert np.array_equal(normalize_attention_backward(np.full(3, 1 / 3), np.ones(3)), np.zeros(3))


class TestBagBranch:
    def test_forward_shapes(self, rng):
        br = branch()
        f = bag_forward(br, rng.normal(size=(6, 5)))
        assert 0 < f.bag_pred < 1
        assert f.inst_pred.shape == (6,) and f.Z.shape == (4,)

    def test_predict_matches_forward(self, rng):
        br = branch()
        x = rng.normal(size=(6, 5))
        p, a, z = bag_predict(br, x)
        f = bag_forward(br, x)
        assert p == f.bag_pred and np.array_equal(a, f.a) and np.array_equal(z, f.z)

    def test_bag_prediction_permutation_invariant(self, rng):
        br = branch(seed=3)
        x = rng.normal(size=(8, 5))
        assert bag_forward(br, x).bag_pred == pytest.approx(bag_forward(br, x[::-1]).bag_pred, abs=1e-14)

    def test_zero_head_predicts_half(self, rng):
        br = branch()
        br.head.layers[0].weights[:] = 0
        assert bag_forward(br, rng.normal(size=(3, 5))).bag_pred == 0.5

    def test_shape_validation(self):
        br = branch()
        with pytest.raises(ShapeError):
            type(br)(br.encoder, init_attention(SeededRng(0), 7, 3), br.head)

    @pytest.mark.parametrize("use_inst", [False, True])
    def test_gradients(self, rng, use_inst):
        br = branch(seed=4)
        x = rng.normal(size=(5, 5))
        g_bag = 0.7
        g_inst = rng.normal(size=5) if use_inst else None

        def loss():
            f = bag_forward(br, x)
            val = g_bag * f.bag_pred
            return val + (float(g_inst @ f.inst_pred) if use_inst else 0.0)

        grads, _ = bag_branch_backward(br, bag_forward(br, x), g_bag, g_inst)
        rep = grad_check(loss, br.blocks(), grads)
        assert rep.ok, rep.max_rel_error

    def test_embedding_gradient(self, rng):
        br = branch(seed=5)
        x = rng.normal(size=(4, 5))
        f = bag_forward(br, x)
        _, gz = bag_branch_backward(br, f, 1.0, None)
        z = f.z.copy()
        rep = grad_check(lambda: bag_forward(br, x, (f.enc_cache, z)).bag_pred, {"z": z}, {"z": gz})
        assert rep.ok

    def test_stale_cache_rejected(self, rng):
        br = branch()
        f = bag_forward(br, rng.normal(size=(4, 5)))
        with pytest.raises(ShapeError):
            bag_branch_backward(br, f, 1.0, np.ones(3))
