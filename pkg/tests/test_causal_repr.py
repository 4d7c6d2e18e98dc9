"""Causal attention, relation representation, encoder, and decoder heads."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from causalad.causal_repr import CausalRepresentation


def make_module(n=3, window=4, m=1, l=5, dtype=torch.float64, **kw):
    torch.manual_seed(0)
    return CausalRepresentation(n, window, m, l, dtype=dtype, **kw)


def rand_window(rng, n, window, m=1, dtype=torch.float64):
    history = torch.as_tensor(rng.standard_normal((window, n, m)), dtype=dtype)
    target = torch.as_tensor(rng.standard_normal((n, m)), dtype=dtype)
    return history, target


class TestAttention:
    def test_zero_attention_vector_gives_uniform_weights(self):
        m = make_module()
        with torch.no_grad():
            m.attn_vec.zero_()
        history, target = rand_window(np.random.default_rng(0), 3, 4)
        alpha = m.attention(history, target)
        expected = 1.0 / (3 * 4)
        assert torch.allclose(alpha, torch.full_like(alpha, expected))

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_rows_are_distributions(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 6))
        window = int(rng.integers(2, 7))
        m = make_module(n=n, window=window)
        history, target = rand_window(rng, n, window)
        alpha = m.attention(history, target)
        assert alpha.shape == (n, n * window)
        sums = alpha.sum(dim=1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)
        assert (alpha >= 0).all()

    def test_hand_softmax_two_candidates(self):
        # One effect variable, two lagged candidates with pre-softmax scores
        # ln 2 and ln 1: weights must be [2/3, 1/3].
        m = make_module(n=1, window=2, m=1, l=2)
        with torch.no_grad():
            m.attn_vec.copy_(torch.tensor([0.0, 1.0], dtype=torch.float64))
        history = torch.tensor([[[math.log(2.0)]], [[0.0]]], dtype=torch.float64)
        target = torch.tensor([[5.0]], dtype=torch.float64)
        alpha = m.attention(history, target)
        np.testing.assert_allclose(alpha.detach().numpy(), [[2 / 3, 1 / 3]], atol=1e-12)


class TestCandidateSelection:
    def setup_method(self):
        self.m = make_module(n=1, window=3)
        self.alpha = torch.tensor([[0.5, 0.3, 0.2]], dtype=torch.float64)

    def test_zero_threshold_keeps_all(self):
        assert self.m.select_candidates(self.alpha, 0.0).all()

    def test_threshold_above_one_keeps_none(self):
        assert not self.m.select_candidates(self.alpha, 1.01).any()

    def test_comparison_is_inclusive(self):
        mask = self.m.select_candidates(self.alpha, 0.25)
        assert mask.tolist() == [[True, True, False]]

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    @settings(max_examples=50, deadline=None)
    def test_candidate_sets_shrink_as_threshold_grows(self, t1, t2):
        lo, hi = sorted((t1, t2))
        rng = np.random.default_rng(7)
        m = make_module(n=4, window=3)
        history, target = rand_window(rng, 4, 3)
        alpha = m.attention(history, target)
        low_sets = m.candidate_sets(alpha, lo)
        high_sets = m.candidate_sets(alpha, hi)
        for low, high in zip(low_sets, high_sets):
            assert set(high) <= set(low)


class TestRelation:
    def test_empty_candidate_set_uses_effect_term_only(self):
        rng = np.random.default_rng(1)
        m = make_module()
        history, target = rand_window(rng, 3, 4)
        alpha = m.attention(history, target)
        r = m.relation(history, target, alpha, theta=2.0)  # nothing survives
        expected = torch.nn.functional.leaky_relu(
            history.permute(1, 0, 2).reshape(3, 4) @ m.w_effect.T, 0.2
        )
        assert torch.equal(r, expected)

    def test_single_candidate_hand_arithmetic(self):
        # One variable, window 2; candidate 0 has weight 1 and survives.
        # W_e S = [0.4, -1.0]; W_c x = [0.8, -1.6]; sum = [1.2, -2.6];
        # LeakyReLU(0.2) -> [1.2, -0.52].
        m = make_module(n=1, window=2, m=1, l=2)
        with torch.no_grad():
            m.w_effect.copy_(torch.tensor([[1.0, 0.0], [0.0, 5.0]], dtype=torch.float64))
            m.w_cause.copy_(torch.tensor([[2.0], [-4.0]], dtype=torch.float64))
        history = torch.tensor([[[0.4]], [[-0.2]]], dtype=torch.float64)
        target = torch.tensor([[0.0]], dtype=torch.float64)
        alpha = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        r = m.relation(history, target, alpha, theta=0.5)
        np.testing.assert_allclose(r.detach().numpy(), [[1.2, -0.52]], atol=1e-12)

    def test_all_zero_parameters_give_zero(self):
        m = make_module()
        with torch.no_grad():
            for p in m.parameters():
                p.zero_()
        rng = np.random.default_rng(2)
        history, target = rand_window(rng, 3, 4)
        alpha = m.attention(history, target)
        r = m.relation(history, target, alpha, theta=0.0)
        assert torch.equal(r, torch.zeros_like(r))


class TestEncoder:
    def test_zero_noise_path(self):
        rng = np.random.default_rng(3)
        m = make_module()
        history, target = rand_window(rng, 3, 4)
        r = m.relation(history, target, m.attention(history, target), 0.06)
        h_prev = torch.as_tensor(rng.standard_normal(5), dtype=torch.float64)
        state = m.encode(r, h_prev, eps=torch.zeros(5, dtype=torch.float64))
        expected = torch.tanh(m.w_reparam @ state.mu + m.b_reparam)
        assert torch.equal(state.z, expected)

    def test_zero_parameters_zero_hidden(self):
        m = make_module()
        with torch.no_grad():
            for p in m.parameters():
                p.zero_()
        r = torch.zeros(3, 5, dtype=torch.float64)
        state = m.encode(r, torch.zeros(5, dtype=torch.float64), eps=torch.zeros(5, dtype=torch.float64))
        assert torch.equal(state.mu, torch.zeros(5, dtype=torch.float64))
        assert torch.equal(state.z, torch.zeros(5, dtype=torch.float64))

    def test_printed_form_uses_previous_hidden(self):
        # mu/log_sigma must come from the incoming hidden state, so two
        # different relation inputs with the same h_prev share mu.
        rng = np.random.default_rng(4)
        m = make_module()
        h_prev = torch.as_tensor(rng.standard_normal(5), dtype=torch.float64)
        r1 = torch.as_tensor(rng.standard_normal((3, 5)), dtype=torch.float64)
        r2 = torch.as_tensor(rng.standard_normal((3, 5)), dtype=torch.float64)
        eps = torch.zeros(5, dtype=torch.float64)
        s1, s2 = m.encode(r1, h_prev, eps), m.encode(r2, h_prev, eps)
        assert torch.equal(s1.mu, s2.mu)
        assert not torch.equal(s1.hidden, s2.hidden)

    def test_current_hidden_switch(self):
        rng = np.random.default_rng(5)
        m = make_module(encoder_uses_current_hidden=True)
        h_prev = torch.as_tensor(rng.standard_normal(5), dtype=torch.float64)
        r1 = torch.as_tensor(rng.standard_normal((3, 5)), dtype=torch.float64)
        r2 = torch.as_tensor(rng.standard_normal((3, 5)), dtype=torch.float64)
        eps = torch.zeros(5, dtype=torch.float64)
        assert not torch.equal(m.encode(r1, h_prev, eps).mu, m.encode(r2, h_prev, eps).mu)

    def test_reparameterized_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        m = make_module(n=2, window=3, l=3)
        history, target = rand_window(rng, 2, 3)
        h_prev = torch.as_tensor(rng.standard_normal(3), dtype=torch.float64)
        eps = torch.as_tensor(rng.standard_normal(3), dtype=torch.float64)

        def scalar_out() -> torch.Tensor:
            r = m.relation(history, target, m.attention(history, target), 0.06)
            return m.encode(r, h_prev, eps).z.sum()

        loss = scalar_out()
        (grad,) = torch.autograd.grad(loss, m.w_sigma)
        step = 1e-4
        for idx in [(0, 0), (1, 2), (2, 1)]:
            with torch.no_grad():
                m.w_sigma[idx] += step
                plus = float(scalar_out())
                m.w_sigma[idx] -= 2 * step
                minus = float(scalar_out())
                m.w_sigma[idx] += step
            fd = (plus - minus) / (2 * step)
            assert abs(float(grad[idx]) - fd) <= 1e-3 * max(abs(fd), 1e-8)

    def test_monte_carlo_mean_of_pre_tanh_argument(self):
        rng = np.random.default_rng(7)
        m = make_module(n=2, window=3, l=4)
        history, target = rand_window(rng, 2, 3)
        r = m.relation(history, target, m.attention(history, target), 0.06)
        h_prev = torch.as_tensor(rng.standard_normal(4), dtype=torch.float64)
        base = m.encode(r, h_prev, eps=torch.zeros(4, dtype=torch.float64))
        mu, sigma = base.mu, torch.exp(base.log_sigma)

        torch.manual_seed(11)
        eps = torch.randn(100_000, 4, dtype=torch.float64)
        pre_tanh = (mu + sigma * eps) @ m.w_reparam.T + m.b_reparam
        # The batched path must agree with the module on sampled draws
        # (up to BLAS reduction order).
        for row in (0, 1, 99_999):
            state = m.encode(r, h_prev, eps=eps[row])
            assert torch.allclose(state.z, torch.tanh(pre_tanh[row]), atol=1e-12)
        expected = m.w_reparam @ mu + m.b_reparam
        mc_mean = pre_tanh.mean(dim=0)
        se = pre_tanh.std(dim=0) / math.sqrt(eps.shape[0])
        assert ((mc_mean - expected).abs() <= 3 * se).all()


class TestDecoder:
    def test_head_isolation_by_perturbation(self):
        rng = np.random.default_rng(8)
        m = make_module(n=3, window=4, l=5)
        history, _ = rand_window(rng, 3, 4)
        z = torch.as_tensor(rng.standard_normal(5), dtype=torch.float64)
        base = m.decode(history, z)
        with torch.no_grad():
            m.w_head[1] += 0.7
        bumped = m.decode(history, z)
        assert torch.equal(base[0], bumped[0])
        assert torch.equal(base[2], bumped[2])
        assert not torch.equal(base[1], bumped[1])

    def test_head_isolation_by_autodiff(self):
        rng = np.random.default_rng(9)
        m = make_module(n=3, window=4, l=5)
        history, _ = rand_window(rng, 3, 4)
        z = torch.as_tensor(rng.standard_normal(5), dtype=torch.float64)
        out = m.decode(history, z)
        (grad,) = torch.autograd.grad(out[0].sum(), m.w_head)
        assert torch.equal(grad[1], torch.zeros_like(grad[1]))
        assert torch.equal(grad[2], torch.zeros_like(grad[2]))
        assert not torch.equal(grad[0], torch.zeros_like(grad[0]))

    def test_zero_parameters_give_zero(self):
        m = make_module()
        with torch.no_grad():
            for p in m.parameters():
                p.zero_()
        history = torch.randn(4, 3, 1, dtype=torch.float64)
        assert torch.equal(
            m.decode(history, torch.zeros(5, dtype=torch.float64)),
            torch.zeros(3, 5, dtype=torch.float64),
        )

    def test_hand_evaluation_two_heads(self):
        m = make_module(n=2, window=2, m=1, l=2)
        with torch.no_grad():
            m.w_head.copy_(
                torch.tensor(
                    [[[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [1.0, 0.0]]],
                    dtype=torch.float64,
                )
            )
            m.b_head.zero_()
            m.w_latent.copy_(torch.eye(2, dtype=torch.float64))
        history = torch.tensor([[[0.3], [0.5]], [[-0.1], [0.2]]], dtype=torch.float64)
        z = torch.tensor([0.1, -0.2], dtype=torch.float64)
        out = m.decode(history, z)
        np.testing.assert_allclose(
            out.detach().numpy(),
            [[0.37994896, -0.29131261], [0.29131261, 0.29131261]],
            atol=1e-8,
        )

    def test_single_head_flag_shares_head_zero(self):
        rng = np.random.default_rng(10)
        m = make_module(single_head=True)
        history, _ = rand_window(rng, 3, 4)
        z = torch.as_tensor(rng.standard_normal(5), dtype=torch.float64)
        base = m.decode(history, z)
        with torch.no_grad():
            m.w_head[1] += 1.0  # heads beyond 0 are inert
        assert torch.equal(base, m.decode(history, z))


class TestDeterminism:
    def test_fixed_seed_and_eps_bitwise_identical(self):
        rng = np.random.default_rng(12)
        history, target = rand_window(rng, 3, 4)
        eps = torch.as_tensor(rng.standard_normal(5), dtype=torch.float64)
        outs = []
        for _ in range(2):
            m = make_module()
            h_prev = torch.zeros(5, dtype=torch.float64)
            d, _, _ = m(history, target, h_prev, 0.06, eps)
            outs.append(d)
        assert torch.equal(outs[0], outs[1])
