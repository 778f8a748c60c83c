import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from _fd import fd_relative_error
from evimae.errors import EmptyMask, InvalidParam, ShapeError, ZeroNorm
from evimae.objectives import (
    LossWeights,
    contrastive_from_similarity,
    contrastive_loss,
    graph_cosine_loss,
    pixel_mse,
    total_loss,
)


def test_weights_defaults_and_tau():
    w = LossWeights()
    assert (w.alpha, w.beta, w.gamma, w.tau) == (1.0, 10.0, 0.01, 0.05)
    with pytest.raises(InvalidParam):
        LossWeights(tau=0.0)


def test_pixel_mse_identities():
    x = torch.randn(2, 5, 6)
    m = torch.rand(2, 5) > 0.5
    m[0, 0] = True
    assert pixel_mse(x, x, m).item() == 0.0
    assert pixel_mse(x + 1, x, m).item() == pytest.approx(1.0, abs=1e-6)
    assert pixel_mse(x + 1, x, m, masked_only=False).item() == pytest.approx(1.0, abs=1e-6)


def test_pixel_mse_two_patch_hand_case():
    target = torch.tensor([[[0.0, 0.0], [1.0, 2.0]]], dtype=torch.float64)
    pred = torch.tensor([[[5.0, 5.0], [2.0, 4.0]]], dtype=torch.float64)
    masked = torch.tensor([[False, True]])
    # only patch 1: ((2-1)^2 + (4-2)^2) / 2 = 2.5
    assert pixel_mse(pred, target, masked).item() == 2.5
    # all positions: (25 + 25 + 1 + 4) / 4
    assert pixel_mse(pred, target, masked, masked_only=False).item() == 13.75


def test_pixel_mse_edge_cases():
    x = torch.randn(1, 3, 4)
    assert pixel_mse(x + 1, x, torch.zeros(1, 3, dtype=torch.bool)).item() == 0.0
    assert pixel_mse(None, x).item() == 0.0
    with pytest.raises(ShapeError):
        pixel_mse(x, x[:, :2])
    with pytest.raises(ShapeError):
        pixel_mse(x, x, torch.ones(1, 2, dtype=torch.bool))


def test_cosine_identities():
    f = torch.randn(4, 8, dtype=torch.float64)
    m = torch.tensor([True, False, True, True])
    assert abs(graph_cosine_loss(f, f, m).item()) < 1e-9
    assert abs(graph_cosine_loss(-f, f, m).item() - 2.0) < 1e-9
    e = torch.eye(8, dtype=torch.float64)
    assert abs(graph_cosine_loss(e[:4], e[4:], m).item() - 1.0) < 1e-9


def test_cosine_only_masked_nodes_count():
    f = torch.randn(2, 4, 8, dtype=torch.float64)
    f_hat = f.clone()
    f_hat[0, 1] = -f[0, 1]
    f_hat[1, 2] = torch.randn(8, dtype=torch.float64)
    m = torch.zeros(2, 4, dtype=torch.bool)
    m[0, 1] = m[0, 3] = True
    # masked nodes: (0,1) contributes 2, (0,3) contributes 0; (1,2) is unmasked and ignored
    assert abs(graph_cosine_loss(f_hat, f, m).item() - 1.0) < 1e-9


@given(st.floats(1e-3, 1e3), st.integers(0, 100))
@settings(max_examples=30, deadline=None)
def test_cosine_scale_invariance(c, seed):
    g = torch.Generator().manual_seed(seed)
    f, f_hat = torch.randn(4, 6, generator=g, dtype=torch.float64), torch.randn(4, 6, generator=g, dtype=torch.float64)
    m = torch.tensor([True, True, False, True])
    a = graph_cosine_loss(f_hat, f, m)
    scaled = f_hat.clone()
    scaled[1] *= c
    assert abs(graph_cosine_loss(scaled, f, m).item() - a.item()) < 1e-9


def test_cosine_errors():
    f = torch.randn(3, 4)
    with pytest.raises(EmptyMask):
        graph_cosine_loss(f, f, torch.zeros(3, dtype=torch.bool))
    z = f.clone()
    z[0] = 0
    with pytest.raises(ZeroNorm):
        graph_cosine_loss(z, f, torch.tensor([True, False, False]))
    with pytest.raises(ShapeError):
        graph_cosine_loss(f, f[:2], torch.ones(3, dtype=torch.bool))


def test_contrastive_singleton_and_uniform():
    v = torch.randn(1, 8, dtype=torch.float64)
    assert abs(contrastive_loss(v, torch.randn(1, 8, dtype=torch.float64), 0.05).item()) < 1e-9
    for n in (2, 5, 16):
        sim = torch.full((n, n), 0.3, dtype=torch.float64)
        assert abs(contrastive_from_similarity(sim, 0.05).item() - math.log(n)) < 1e-9


def _eq_oracle(S, tau):
    """Direct evaluation of the symmetric InfoNCE sums with python floats."""
    n = len(S)
    total = 0.0
    for k in range(n):
        total += math.log(math.exp(S[k][k] / tau) / sum(math.exp(S[k][j] / tau) for j in range(n)))
        total += math.log(math.exp(S[k][k] / tau) / sum(math.exp(S[j][k] / tau) for j in range(n)))
    return -total / (2 * n)


def test_contrastive_matches_brute_force():
    S = [[0.9, 0.1, -0.2], [0.3, 0.5, 0.0], [-0.4, 0.2, 0.7]]
    got = contrastive_from_similarity(torch.tensor(S, dtype=torch.float64), 0.5).item()
    assert abs(got - _eq_oracle(S, 0.5)) < 1e-12


@given(st.integers(1, 6), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_contrastive_random_oracle_and_symmetry(n, seed):
    g = torch.Generator().manual_seed(seed)
    v, i = torch.randn(n, 5, generator=g, dtype=torch.float64), torch.randn(n, 5, generator=g, dtype=torch.float64)
    l = contrastive_loss(v, i, 0.2).item()
    S = (torch.nn.functional.normalize(v, dim=-1) @ torch.nn.functional.normalize(i, dim=-1).T).tolist()
    assert abs(l - _eq_oracle(S, 0.2)) < 1e-9
    assert abs(contrastive_loss(i, v, 0.2).item() - l) < 1e-12


def test_contrastive_monotone_in_matched_similarity():
    S = torch.tensor([[0.2, 0.1, 0.4], [0.0, 0.3, 0.1], [0.5, 0.2, 0.1]], dtype=torch.float64)
    prev = contrastive_from_similarity(S, 0.1).item()
    for _ in range(5):
        S[1, 1] += 0.1
        cur = contrastive_from_similarity(S, 0.1).item()
        assert cur < prev
        prev = cur


def test_contrastive_shape_errors():
    with pytest.raises(ShapeError):
        contrastive_loss(torch.randn(3, 4), torch.randn(2, 4), 0.1)
    with pytest.raises(ShapeError):
        contrastive_from_similarity(torch.randn(2, 3), 0.1)


def test_total_loss_arithmetic():
    total, rep = total_loss(0.5, 0.3, 0.1, 2.0, LossWeights())
    assert abs(total - 1.82) < 1e-9 and abs(rep.total - 1.82) < 1e-9
    assert total_loss(0.0, 0.0, 0.0, 0.0, LossWeights())[1].total == 0.0
    _, rep = total_loss(0.5, 0.3, 0.1, 2.0, LossWeights(gamma=0.0))
    assert abs(rep.total - 1.8) < 1e-9
    assert rep.as_row() == [0.5, 0.3, 0.1, 2.0, rep.total]


@given(st.lists(st.floats(0, 10), min_size=4, max_size=4), st.floats(0, 5), st.floats(0, 20), st.floats(0, 1))
@settings(max_examples=50, deadline=None)
def test_total_report_identity(parts, a, b, g):
    w = LossWeights(alpha=a, beta=b, gamma=g)
    _, rep = total_loss(*parts, w)
    expected = a * (rep.l_mse_video + rep.l_mse_imu) + b * rep.l_cos + g * rep.l_con
    assert abs(rep.total - expected) < 1e-9 * max(1.0, abs(expected))


def test_total_keeps_graph():
    x = torch.tensor(0.5, requires_grad=True)
    total, _ = total_loss(x, x, x, x, LossWeights())
    total.backward()
    assert x.grad.item() == pytest.approx(1 + 1 + 10 + 0.01)


@pytest.mark.parametrize("which", ["mse", "cos", "con"])
def test_loss_gradients(which):
    g = torch.Generator().manual_seed(5)
    a = torch.randn(4, 8, generator=g, dtype=torch.float64, requires_grad=True)
    b = torch.randn(4, 8, generator=g, dtype=torch.float64, requires_grad=True)
    if which == "mse":
        m = torch.tensor([[True, False, True, True]])
        fn = lambda: pixel_mse(a.unsqueeze(0), b.unsqueeze(0), m)
    elif which == "cos":
        m = torch.tensor([True, True, False, True])
        fn = lambda: graph_cosine_loss(a, b, m)
    else:
        fn = lambda: contrastive_loss(a, b, 0.05)
    assert fd_relative_error(fn, [a, b]) < 1e-4
