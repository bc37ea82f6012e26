import numpy as np
import pytest

from ssmguard.attack import (AttackConfig, AttackError, lexical_auc,
                             loss_and_grad, output_kl_loss, pareto_sweep,
                             pgd_attack, project_to_tokens, spectral_loss)
from ssmguard.model import embed_tokens, run_embedded, run_sequence


def prompt_for(seed, length=20, vocab=256):
    return np.random.default_rng(seed).integers(0, vocab, length).tolist()


class TestSpectralLoss:
    def test_empty_sequence(self, default_ssm):
        assert spectral_loss(default_ssm, []) == 0.0

    def test_sum_over_pinned_trace(self, default_ssm):
        # one token, four layers pinned at rho = 0.9 sums to 3.6
        _, trace = run_sequence(default_ssm, [5], probe=True, rho_pin=0.9)
        total = sum(r.rho_exact for r in trace.records)
        assert total == pytest.approx(3.6, abs=1e-12)

    def test_matches_probed_trace_totals(self, default_ssm):
        tokens = prompt_for(2)
        _, trace = run_sequence(default_ssm, tokens, probe=True)
        oracle = sum(r.rho_exact for r in trace.records)
        assert spectral_loss(default_ssm, tokens) == pytest.approx(oracle, abs=1e-10)


class TestOutputKl:
    def test_self_reference_is_zero(self, default_ssm):
        tokens = prompt_for(3)
        logits, _, _, _ = run_embedded(default_ssm, embed_tokens(default_ssm, tokens))
        ref = np.exp(logits - logits.max(axis=1, keepdims=True))
        ref /= ref.sum(axis=1, keepdims=True)
        assert output_kl_loss(default_ssm, tokens, ref) == pytest.approx(0.0, abs=1e-12)

    def test_nonnegative(self, default_ssm):
        tokens = prompt_for(4)
        other = prompt_for(5)
        logits, _, _, _ = run_embedded(default_ssm, embed_tokens(default_ssm, other))
        ref = np.exp(logits - logits.max(axis=1, keepdims=True))
        ref /= ref.sum(axis=1, keepdims=True)
        assert output_kl_loss(default_ssm, tokens, ref) >= 0.0

    def test_against_manual_summation(self, default_ssm):
        tokens = prompt_for(6, length=5)
        rng = np.random.default_rng(0)
        # peaked reference rows
        ref = rng.uniform(0.01, 1.0, (5, 256))
        ref[np.arange(5), rng.integers(0, 256, 5)] = 50.0
        ref /= ref.sum(axis=1, keepdims=True)
        logits, _, _, _ = run_embedded(default_ssm, embed_tokens(default_ssm, tokens))
        shifted = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
        manual = float(np.mean([np.sum(p[t] * (np.log(p[t]) - np.log(ref[t])))
                                for t in range(5)]))
        assert output_kl_loss(default_ssm, tokens, ref) == pytest.approx(manual, abs=1e-10)

    def test_length_mismatch(self, default_ssm):
        with pytest.raises(AttackError):
            output_kl_loss(default_ssm, [1, 2, 3], np.ones((2, 256)) / 256)


class TestGradients:
    def check_gradient(self, ssm, z, lam, ref, n_coords=50, h=1e-5, seed=99):
        _, grad = loss_and_grad(ssm, z, lam, ref)
        rng = np.random.default_rng(seed)
        for _ in range(n_coords):
            t = int(rng.integers(z.shape[0]))
            j = int(rng.integers(z.shape[1]))
            zp, zm = z.copy(), z.copy()
            zp[t, j] += h
            zm[t, j] -= h
            fd = (loss_and_grad(ssm, zp, lam, ref)[0]
                  - loss_and_grad(ssm, zm, lam, ref)[0]) / (2 * h)
            rel = abs(grad[t, j] - fd) / max(abs(grad[t, j]), abs(fd), 1e-8)
            assert rel < 1e-4, (t, j, grad[t, j], fd)

    def test_spectral_gradient_matches_finite_differences(self, default_ssm):
        z = embed_tokens(default_ssm, prompt_for(7)).copy()
        self.check_gradient(default_ssm, z, 0.0, None)

    def test_joint_gradient_matches_finite_differences(self, default_ssm):
        tokens = prompt_for(8)
        z = embed_tokens(default_ssm, tokens).copy()
        logits, _, _, _ = run_embedded(default_ssm, z)
        ref = logits - logits.max(axis=1, keepdims=True)
        ref = ref - np.log(np.exp(ref).sum(axis=1, keepdims=True))
        self.check_gradient(default_ssm, z, 0.7, ref)

    def test_joint_objective_decomposition_at_lambda_zero(self, default_ssm):
        tokens = prompt_for(9)
        z = embed_tokens(default_ssm, tokens)
        loss, _ = loss_and_grad(default_ssm, z, 0.0, None)
        assert loss == pytest.approx(spectral_loss(default_ssm, tokens), abs=1e-12)


class TestPgdAttack:
    def test_zero_steps_identity(self, default_ssm):
        prompt = prompt_for(10)
        res = pgd_attack(default_ssm, prompt, AttackConfig(steps=0))
        assert res.adversarial_tokens == prompt
        assert res.delta_rho_mean == 0.0
        assert len(res.loss_curve) == 1

    def test_loss_curve_length(self, default_ssm):
        res = pgd_attack(default_ssm, prompt_for(11), AttackConfig(steps=12))
        assert len(res.loss_curve) == 13

    def test_strict_decrease_over_seeded_prompts(self, default_ssm):
        wins = 0
        for s in range(20):
            res = pgd_attack(default_ssm, prompt_for(100 + s),
                             AttackConfig(seed=s))
            if res.rho_mean_after < res.rho_mean_before:
                wins += 1
        assert wins >= 18

    def test_mostly_nonincreasing_continuous_trajectory(self, default_ssm):
        fracs = []
        for s in range(20):
            res = pgd_attack(default_ssm, prompt_for(300 + s),
                             AttackConfig(seed=s))
            diffs = np.diff(np.asarray(res.loss_curve))
            fracs.append(np.mean(diffs <= 1e-12))
        assert np.mean(fracs) >= 0.80

    def test_empty_prompt_rejected(self, default_ssm):
        with pytest.raises(AttackError):
            pgd_attack(default_ssm, [], AttackConfig())

    def test_random_baseline_low_damage(self, default_ssm):
        for s in range(5):
            res = pgd_attack(default_ssm, prompt_for(400 + s),
                             AttackConfig(mode="random_baseline", seed=s))
            assert abs(res.delta_rho_mean) < 0.05

    def test_kl_weakly_decreasing_in_lambda(self, default_ssm):
        prompt = prompt_for(12)
        kls = []
        for lam in [0.0, 0.25, 0.5, 0.75, 1.0]:
            res = pgd_attack(default_ssm, prompt,
                             AttackConfig(mode="joint_loss", lam=lam, seed=0))
            kls.append(res.kl_to_benign)
        for a, b in zip(kls, kls[1:]):
            assert b <= a + 1e-9

    def test_determinism(self, default_ssm):
        prompt = prompt_for(13)
        r1 = pgd_attack(default_ssm, prompt, AttackConfig(seed=5))
        r2 = pgd_attack(default_ssm, prompt, AttackConfig(seed=5))
        assert r1.adversarial_tokens == r2.adversarial_tokens
        assert r1.loss_curve == r2.loss_curve

    def test_projection_is_cosine_nearest(self, default_ssm):
        z = embed_tokens(default_ssm, [3, 4, 5]) * 2.5  # scaling irrelevant
        assert project_to_tokens(default_ssm, z) == [3, 4, 5]

    def test_config_validation(self):
        with pytest.raises(AttackError):
            AttackConfig(alpha=-1.0)
        with pytest.raises(AttackError):
            AttackConfig(steps=-1)
        with pytest.raises(AttackError):
            AttackConfig(mode="nonsense")


class TestLexicalAuc:
    def test_identical_corpora(self):
        rng = np.random.default_rng(0)
        corpus = [rng.integers(0, 64, 30).tolist() for _ in range(100)]
        auc = lexical_auc(corpus, corpus, vocab_size=256)
        assert abs(auc - 0.5) <= 0.1

    def test_unseen_tokens_perfectly_separated(self):
        benign = [[1, 2, 3], [2, 3, 4], [1, 4, 2]]
        adversarial = [[200, 201], [202, 203]]
        assert lexical_auc(benign, adversarial, vocab_size=256) == 1.0

    def test_shuffles_stay_low(self):
        rng = np.random.default_rng(1)
        benign = [rng.integers(0, 64, 40).tolist() for _ in range(50)]
        shuffled = [rng.permutation(seq).tolist() for seq in benign]
        auc = lexical_auc(benign, shuffled, vocab_size=256)
        assert auc < 0.75

    def test_empty_corpus_rejected(self):
        with pytest.raises(AttackError):
            lexical_auc([], [[1, 2]])
        with pytest.raises(AttackError):
            lexical_auc([[1, 2]], [])


class TestParetoSweep:
    def test_single_prompt_single_lambda_one_row(self, default_ssm):
        rows = pareto_sweep(default_ssm, [prompt_for(14)], [0.5],
                            AttackConfig(steps=5, mode="joint_loss"))
        assert len(rows) == 1

    def test_random_baseline_rows_low_damage(self, default_ssm):
        prompts = [prompt_for(500 + i, length=30) for i in range(4)]
        rows = pareto_sweep(default_ssm, prompts, [0.0, 0.5, 1.0],
                            AttackConfig(mode="random_baseline", seed=2))
        assert all(r.delta_rho_mean < 0.05 for r in rows)

    def test_frontier_cap(self, default_ssm):
        prompts = [prompt_for(600 + i, length=30) for i in range(4)]
        rows = pareto_sweep(default_ssm, prompts, [0.0, 0.5, 1.0],
                            AttackConfig(mode="joint_loss", seed=3))
        for r in rows:
            assert not (r.lexical_auc <= 0.60 and r.delta_rho_mean > 0.10)

    def test_needs_inputs(self, default_ssm):
        with pytest.raises(AttackError):
            pareto_sweep(default_ssm, [], [0.1], AttackConfig())
        with pytest.raises(AttackError):
            pareto_sweep(default_ssm, [prompt_for(1)], [], AttackConfig())
