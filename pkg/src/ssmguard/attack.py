"""Gradient-based hidden-state poisoning.

The attack minimizes the summed spectral radii of the discretized operators
by sign-gradient steps in continuous embedding space.  Gradients are
computed by a hand-written reverse sweep through the model: the spectral
term is local to each token (embedding -> step-size projection -> softplus
-> exp -> max channel), while the output-divergence term backpropagates
through the full recurrence (states, readout stream, logits).

At this scale the vocabulary embeddings are well-separated unit vectors, so
a single sign step can never cross a nearest-neighbor boundary.  The loop
therefore keeps the continuous iterate alive between steps and re-embeds
from the projected tokens exactly when the projection changes them; the
recorded loss curve is evaluated on the continuous trajectory before each
projection.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import SelectiveSsm, discretize_batch, embed_tokens, run_embedded

_MODES = ("spectral_only", "joint_loss", "random_baseline")


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    alpha: float = 0.01
    steps: int = 50
    lam: float = 0.0
    seed: int = 0
    mode: str = "spectral_only"

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise AttackError("alpha must be positive")
        if self.steps < 0:
            raise AttackError("steps must be >= 0")
        if self.lam < 0.0:
            raise AttackError("lambda must be >= 0")
        if self.mode not in _MODES:
            raise AttackError(f"mode must be one of {_MODES}")


@dataclass
class AttackResult:
    adversarial_tokens: list[int]
    loss_curve: list[float]
    rho_mean_before: float
    rho_mean_after: float
    delta_rho_mean: float
    kl_to_benign: float
    lexical_auc: float

    def to_dict(self) -> dict:
        return {
            "adversarial_tokens": self.adversarial_tokens,
            "loss_curve": self.loss_curve,
            "rho_mean_before": self.rho_mean_before,
            "rho_mean_after": self.rho_mean_after,
            "delta_rho_mean": self.delta_rho_mean,
            "kl_to_benign": self.kl_to_benign,
            "lexical_auc": self.lexical_auc,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _max_channels(ssm: SelectiveSsm) -> np.ndarray:
    # dominant channel per layer; argmax takes the lowest index on ties
    return np.argmax(ssm.a, axis=1)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def spectral_loss(ssm: SelectiveSsm, tokens) -> float:
    """Sum of spectral radii over all tokens and layers."""
    tokens = list(tokens)
    if not tokens:
        return 0.0
    z = embed_tokens(ssm, tokens)
    delta, _, _ = discretize_batch(ssm, z)
    mx = _max_channels(ssm)
    a_max = ssm.a[np.arange(ssm.config.n_layers), mx]
    return float(np.sum(np.exp(delta * a_max[None, :])))


def output_kl_loss(ssm: SelectiveSsm, tokens, benign_reference: np.ndarray) -> float:
    """Mean per-token KL(p_model(.|tokens) || reference).

    The reference is a (T, vocab) array of probability rows, typically the
    model's own softmax outputs on the unattacked prompt.
    """
    tokens = list(tokens)
    ref = np.asarray(benign_reference, dtype=float)
    if ref.shape[0] != len(tokens):
        raise AttackError("reference length does not match candidate length")
    if not tokens:
        return 0.0
    logits, _, _, _ = run_embedded(ssm, embed_tokens(ssm, tokens))
    logp = _log_softmax(logits)
    p = np.exp(logp)
    logq = np.log(np.clip(ref, 1e-300, None))
    return float(np.mean(np.sum(p * (logp - logq), axis=1)))


def loss_and_grad(ssm: SelectiveSsm, z: np.ndarray, lam: float,
                  ref_logprobs: np.ndarray | None):
    """Joint objective and its gradient with respect to the embeddings.

    Objective: sum_{t,l} rho(Abar[t,l])  +  lam * mean_t KL(p_t || q_t).
    Returns (loss, grad) with grad shaped like z.
    """
    steps = z.shape[0]
    n_layers, d_state = ssm.config.n_layers, ssm.config.d_state
    mx = _max_channels(ssm)
    a_max = ssm.a[np.arange(n_layers), mx]

    pre = z @ ssm.w_delta.T + ssm.b_delta
    raw = np.logaddexp(0.0, pre)
    delta = np.clip(raw, ssm.config.delta_min, ssm.config.delta_max)
    clamp_open = (raw > ssm.config.delta_min) & (raw < ssm.config.delta_max)
    sig = 1.0 / (1.0 + np.exp(-pre))

    rho = np.exp(delta * a_max[None, :])
    loss = float(np.sum(rho))
    gdelta = rho * a_max[None, :]

    gz = np.zeros_like(z)

    if lam > 0.0:
        if ref_logprobs is None:
            raise AttackError("joint objective needs a benign reference")
        alpha = np.exp(delta[:, :, None] * ssm.a[None, :, :])
        safe_a = np.where(np.abs(ssm.a) < 1e-12, 1.0, ssm.a)
        bbar = np.where(np.abs(ssm.a)[None, :, :] < 1e-12,
                        delta[:, :, None] * ssm.b[None, :, :],
                        (alpha - 1.0) / safe_a[None, :, :] * ssm.b[None, :, :])
        dbbar_ddelta = np.where(np.abs(ssm.a)[None, :, :] < 1e-12,
                                ssm.b[None, :, :],
                                alpha * ssm.b[None, :, :])

        base = z @ ssm.w_in.T
        mix = ssm.w_in @ ssm.w_out.T
        hidden, readout = kernels.scan(
            np.ascontiguousarray(alpha), np.ascontiguousarray(bbar),
            np.ascontiguousarray(base), np.ascontiguousarray(mix),
            np.ascontiguousarray(ssm.c), np.zeros((n_layers, d_state)))
        mix_lower = np.tril(mix, k=-1)
        s = base + readout @ mix_lower.T

        stream = z + readout @ ssm.w_out
        logits = stream @ ssm.out_proj
        logp = _log_softmax(logits)
        p = np.exp(logp)
        kl_t = np.sum(p * (logp - ref_logprobs), axis=1)
        loss += lam * float(np.mean(kl_t))

        glogits = (lam / steps) * p * (logp - ref_logprobs - kl_t[:, None])
        gstream = glogits @ ssm.out_proj.T
        gz += gstream
        greadout = gstream @ ssm.w_out.T

        carry = np.zeros((n_layers, d_state))
        for t in range(steps - 1, -1, -1):
            h_prev = hidden[t - 1] if t > 0 else np.zeros((n_layers, d_state))
            gs_row = np.zeros(n_layers)
            gd_row = np.zeros(n_layers)
            for layer in range(n_layers - 1, -1, -1):
                gy = greadout[t, layer] + float(
                    gs_row[layer + 1:] @ mix_lower[layer + 1:, layer])
                gh = gy * ssm.c[layer] + carry[layer]
                gs = float(gh @ bbar[t, layer])
                galpha = gh * h_prev[layer]
                gbbar = gh * s[t, layer]
                carry[layer] = gh * alpha[t, layer]
                gs_row[layer] = gs
                gd_row[layer] = float(galpha @ (ssm.a[layer] * alpha[t, layer])
                                      + gbbar @ dbbar_ddelta[t, layer])
                gz[t] += gs * ssm.w_in[layer]
            gdelta[t] += gd_row

    gpre = gdelta * clamp_open * sig
    gz += gpre @ ssm.w_delta
    return loss, gz


def project_to_tokens(ssm: SelectiveSsm, z: np.ndarray) -> list[int]:
    """Cosine nearest embedding row per position (rows are unit norm)."""
    return [int(i) for i in np.argmax(z @ ssm.embed.T, axis=1)]


def _mean_rho(ssm: SelectiveSsm, tokens) -> float:
    if not tokens:
        return 0.0
    return spectral_loss(ssm, tokens) / (len(tokens) * ssm.config.n_layers)


def pgd_attack(ssm: SelectiveSsm, prompt, config: AttackConfig,
               benign_corpus=None) -> AttackResult:
    """Projected sign-gradient attack on a token prompt.

    Modes: "spectral_only" minimizes the summed radii; "joint_loss" adds
    lam * KL to the model's frozen outputs on the unattacked prompt;
    "random_baseline" replaces the gradient with seeded random token
    substitutions.  steps=0 is the identity attack.
    """
    prompt = [int(t) for t in prompt]
    if not prompt:
        raise AttackError("prompt must be non-empty")

    rho_before = _mean_rho(ssm, prompt)
    logits, _, _, _ = run_embedded(ssm, embed_tokens(ssm, prompt))
    ref_logprobs = _log_softmax(logits)
    ref_probs = np.exp(ref_logprobs)
    lam = config.lam if config.mode == "joint_loss" else 0.0

    tokens = list(prompt)
    z = embed_tokens(ssm, prompt).copy()
    curve = [loss_and_grad(ssm, z, lam, ref_logprobs)[0]]

    if config.mode == "random_baseline":
        rng = np.random.default_rng(config.seed)
        for _ in range(config.steps):
            pos = int(rng.integers(len(tokens)))
            tokens[pos] = int(rng.integers(ssm.config.vocab_size))
            z = embed_tokens(ssm, tokens).copy()
            curve.append(loss_and_grad(ssm, z, lam, ref_logprobs)[0])
    else:
        for _ in range(config.steps):
            _, grad = loss_and_grad(ssm, z, lam, ref_logprobs)
            z = z - config.alpha * np.sign(grad)
            projected = project_to_tokens(ssm, z)
            for pos, tok in enumerate(projected):
                if tok != tokens[pos]:
                    tokens[pos] = tok
                    z[pos] = ssm.embed[tok]
            curve.append(loss_and_grad(ssm, z, lam, ref_logprobs)[0])

    adversarial = list(tokens)
    rho_after = _mean_rho(ssm, adversarial)
    kl = output_kl_loss(ssm, adversarial, ref_probs)
    reference_corpus = benign_corpus if benign_corpus else [prompt]
    auc = lexical_auc(reference_corpus, [adversarial],
                      vocab_size=ssm.config.vocab_size)
    return AttackResult(
        adversarial_tokens=adversarial,
        loss_curve=curve,
        rho_mean_before=rho_before,
        rho_mean_after=rho_after,
        delta_rho_mean=rho_before - rho_after,
        kl_to_benign=kl,
        lexical_auc=auc,
    )


def lexical_auc(benign_corpus, adversarial, vocab_size: int | None = None) -> float:
    """AUC of a unigram negative-log-likelihood detector.

    The detector fits Laplace-smoothed unigram frequencies on the benign
    corpus and scores each sequence by its mean per-token NLL; the AUC is
    the exact pairwise comparison (ties count one half).
    """
    benign_corpus = [list(map(int, s)) for s in benign_corpus]
    adversarial = [list(map(int, s)) for s in adversarial]
    if not benign_corpus or not adversarial:
        raise AttackError("lexical_auc: both corpora must be non-empty")
    if vocab_size is None:
        vocab_size = 1 + max(max(s, default=0) for s in benign_corpus + adversarial)

    counts = np.zeros(vocab_size)
    for seq in benign_corpus:
        for tok in seq:
            counts[tok] += 1
    logp = np.log(counts + 1.0) - math.log(counts.sum() + vocab_size)

    def score(seq) -> float:
        if not seq:
            return 0.0
        return -float(np.mean(logp[np.asarray(seq, dtype=int)]))

    benign_scores = [score(s) for s in benign_corpus]
    adv_scores = [score(s) for s in adversarial]
    wins = 0.0
    for sa in adv_scores:
        for sb in benign_scores:
            if sa > sb:
                wins += 1.0
            elif sa == sb:
                wins += 0.5
    return wins / (len(adv_scores) * len(benign_scores))


@dataclass
class ParetoRow:
    lam: float
    delta_rho_mean: float
    lexical_auc: float


def pareto_sweep(ssm: SelectiveSsm, prompts, lambdas, config: AttackConfig) -> list[ParetoRow]:
    """Stealth-damage frontier: one row per regularization weight.

    Per lambda, every prompt is attacked (mode taken from config; lambda
    overrides config.lam), mean spectral damage is aggregated, and the
    lexical AUC is computed corpus-level against the benign prompts.
    """
    prompts = [list(map(int, p)) for p in prompts]
    lambdas = [float(v) for v in lambdas]
    if not lambdas or not prompts:
        raise AttackError("pareto_sweep needs prompts and lambda values")
    rows = []
    for lam in lambdas:
        run_cfg = AttackConfig(alpha=config.alpha, steps=config.steps,
                               lam=lam, seed=config.seed, mode=config.mode)
        adversarial = []
        damages = []
        for prompt in prompts:
            res = pgd_attack(ssm, prompt, run_cfg, benign_corpus=prompts)
            adversarial.append(res.adversarial_tokens)
            damages.append(res.delta_rho_mean)
        auc = lexical_auc(prompts, adversarial, vocab_size=ssm.config.vocab_size)
        rows.append(ParetoRow(lam=lam, delta_rho_mean=float(np.mean(damages)),
                              lexical_auc=auc))
    return rows
