import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rasl import tensor as T
from rasl.activation import (
    KPOINT, MEAN_TOPK, ActivationHead, compute_activations, effective_k, kpoint_contrastive_loss, kpoint_eta,
    select_bottomk, select_topk, weight_representations,
)
from rasl.errors import InvalidArgumentError, ShapeError

V = T.Value


def head(width=3, seed=0):
    return ActivationHead(width, np.random.default_rng(seed))


def test_zero_weights_zero_activations():
    p = head()
    p.w.data[:] = 0
    _, s = compute_activations(V(np.random.default_rng(1).normal(size=(4, 3))), p)
    assert np.all(s.data == 0)


def test_selector_case():
    p = head()
    p.psi_weight.data[:] = np.eye(3)
    p.psi_bias.data[:] = 0
    p.w.data[:] = [0, 1, 0]
    r = np.random.default_rng(2).normal(size=(5, 3)).astype(np.float32)
    _, s = compute_activations(V(r), p)
    assert np.array_equal(s.data, r[:, 1])


def test_activations_match_dot_product_oracle():
    p = head()
    r = np.random.default_rng(3).normal(size=(4, 3))
    with T.precision(np.float64):
        z, s = compute_activations(V(r), p)
    wpsi, bpsi, w = (a.data.astype(np.float64) for a in (p.psi_weight, p.psi_bias, p.w))
    z_ref = np.array([[sum(r[i, c] * wpsi[c, o] for c in range(3)) + bpsi[o] for o in range(3)] for i in range(4)])
    s_ref = np.array([sum(w[c] * z_ref[i, c] for c in range(3)) for i in range(4)])
    assert np.allclose(z.data, z_ref, atol=1e-6) and np.allclose(s.data, s_ref, atol=1e-6)


def test_activation_width_mismatch():
    with pytest.raises(ShapeError):
        compute_activations(V(np.ones((4, 5))), head())


def test_selection_examples():
    s = [0.9, 0.1, 0.5, 0.7]
    assert select_topk(s, 2).tolist() == [3, 0]
    assert select_bottomk(s, 2).tolist() == [1, 2]
    assert select_topk(s, 4).tolist() == np.argsort(s).tolist()
    assert select_bottomk(s, 4).tolist() == select_topk(s, 4).tolist()
    assert select_topk([1.0] * 4, 2).tolist() == [0, 1]
    assert select_bottomk([1.0] * 4, 2).tolist() == [0, 1]


@pytest.mark.parametrize("k", [0, 5])
def test_selection_bad_k(k):
    with pytest.raises(InvalidArgumentError):
        select_topk([1.0, 2.0, 3.0, 4.0], k)
    with pytest.raises(InvalidArgumentError):
        select_bottomk([1.0, 2.0, 3.0, 4.0], k)


def _sort_oracle(s, k, top):
    # ascending by value, lower index first among equals
    order = sorted(range(len(s)), key=lambda i: (s[i], i))
    if top:
        chosen = sorted(range(len(s)), key=lambda i: (-s[i], i))[:k]
        return [i for i in order if i in set(chosen)]
    return order[:k]


def test_selection_matches_sort_oracle_with_duplicates():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        n = int(rng.integers(1, 20))
        s = rng.integers(0, 5, size=n).astype(float).tolist()
        k = int(rng.integers(1, n + 1))
        assert select_topk(s, k).tolist() == _sort_oracle(s, k, True)
        assert select_bottomk(s, k).tolist() == _sort_oracle(s, k, False)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=30), st.integers(1, 15))
def test_selection_invariant_under_increasing_transform(s, k):
    k = min(k, len(s))
    t = [math.atan(v) * 3 + 1 for v in s]
    if len(set(s)) != len(set(t)):
        return
    assert select_topk(s, k).tolist() == select_topk(t, k).tolist()
    assert select_bottomk(s, k).tolist() == select_bottomk(t, k).tolist()


def test_effective_k_keeps_sets_disjoint():
    assert effective_k(10, 19) == 9
    assert effective_k(5, 19) == 5
    assert effective_k(3, 1) == 1


def _loss_setup(s, z, k, p):
    top, bottom = select_topk(s, k), select_bottomk(s, k)
    return kpoint_contrastive_loss(V(s), V(z), top, bottom, p)


def test_kpoint_zero_activations_give_ln2():
    p = head()
    z = np.random.default_rng(5).normal(size=(6, 3))
    assert abs(_loss_setup(np.zeros(6), z, 2, p).item() - math.log(2)) < 1e-6


def test_kpoint_collapsed_projections_give_ln2():
    p = head()
    p.proj_bottom.data[:] = p.proj_top.data
    z = np.tile(np.random.default_rng(6).normal(size=(1, 3)), (6, 1))
    s = np.arange(6.0)
    assert abs(_loss_setup(s, z, 2, p).item() - math.log(2)) < 1e-6


def test_kpoint_closed_form_k1():
    p = head(width=2)
    p.proj_top.data[:] = np.eye(2)
    p.proj_bottom.data[:] = np.eye(2)
    # after layer norm [1, -1] and [-1, 1] are antipodal; use orthogonal 3-wide rows instead
    p3 = head(width=3)
    p3.proj_top.data[:] = np.eye(3)
    p3.proj_bottom.data[:] = np.eye(3)
    z = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    a = z[0] - z[0].mean()
    b = z[1] - z[1].mean()
    cos = a @ b / np.linalg.norm(a) / np.linalg.norm(b)
    with T.precision(np.float64):
        eta = kpoint_eta(V([2.0, 0.0]), V(z), np.array([0]), np.array([1]), p3).item()
    assert np.isclose(eta, 2 * (1 - cos), atol=1e-4)
    # sim = 0 exactly: rows whose centred versions are orthogonal
    z = np.array([[1.0, -1.0, 0.0], [1.0, 1.0, -2.0]])
    with T.precision(np.float64):
        loss = kpoint_contrastive_loss(V([2.0, 0.0]), V(z), np.array([0]), np.array([1]), p3).item()
    assert abs(loss - math.log(1 + math.exp(-2))) < 1e-4
    assert abs(math.log(1 + math.exp(-2)) - 0.1269) < 1e-4


def test_mean_topk_variant():
    p = head()
    s = np.array([0.9, 0.1, 0.5, 0.7])
    z = np.random.default_rng(7).normal(size=(4, 3))
    eta = kpoint_eta(V(s), V(z), select_topk(s, 2), select_bottomk(s, 2), p, MEAN_TOPK).item()
    assert np.isclose(eta, 0.8, atol=1e-6)


def test_kpoint_loss_decreasing_in_eta_and_positive():
    etas = np.linspace(-5, 5, 41)
    losses = [-T.log_sigmoid(V(e)).item() for e in etas]
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert min(losses) > 0


def test_empty_selection_rejected():
    with pytest.raises(InvalidArgumentError):
        kpoint_eta(V(np.zeros(4)), V(np.zeros((4, 3))), np.array([], dtype=int), np.array([], dtype=int), head())


def test_kpoint_gradient_check():
    p = head()
    rng = np.random.default_rng(8)
    with T.precision(np.float64):
        for _ in range(20):
            s0 = rng.normal(size=8)
            z = V(rng.normal(size=(8, 3)))
            top, bottom = select_topk(s0, 3), select_bottomk(s0, 3)
            f = lambda v: kpoint_contrastive_loss(v, z, top, bottom, p, KPOINT)
            assert T.grad_check(f, V(s0), eps=1e-5) < 1e-6
            g = lambda v: kpoint_contrastive_loss(V(s0), v, top, bottom, p, KPOINT)
            assert T.grad_check(g, z, eps=1e-5) < 1e-6


def test_loss_alone_separates_top_from_bottom():
    rng = np.random.default_rng(9)
    p = head(width=4)
    r = V(rng.normal(size=(2, 12, 4)))
    params = [p.psi_weight, p.psi_bias, p.w, p.proj_top, p.proj_bottom, p.norm_gain, p.norm_bias]
    gaps = []
    for _ in range(50):
        z, s = compute_activations(r, p)
        tops = np.stack([select_topk(row, 3) for row in s.data])
        bots = np.stack([select_bottomk(row, 3) for row in s.data])
        gaps.append(np.mean([s.data[b, tops[b]].mean() - s.data[b, bots[b]].mean() for b in range(2)]))
        loss = kpoint_contrastive_loss(s, z, tops, bots, p)
        for q in params:
            q.grad = None
        T.backward(loss)
        for q in params:
            q.data -= 0.01 * q.grad
    assert all(b > a for a, b in zip(gaps, gaps[1:]))


def test_weight_representations_examples():
    r = V(np.random.default_rng(10).normal(size=(3, 2)))
    assert np.array_equal(weight_representations(V(np.ones(3)), r).data, r.data)
    assert np.all(weight_representations(V(np.zeros(3)), r).data == 0)
    assert np.array_equal(weight_representations(V([2.0]), V([[1.0, -1.0]])).data, [[2, -2]])
    with pytest.raises(ShapeError):
        weight_representations(V(np.ones(2)), r)
