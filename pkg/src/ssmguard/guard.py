"""Online spectral monitor, multi-layer feature classifier, detection metrics.

The monitor keeps a ring of the most recent per-token radius estimates and
blocks as soon as the windowed minimum falls under rho_min; on a block the
caller must not emit the token's output or commit its state update.  The
monitored statistic for a multi-layer model is the minimum estimate across
layers at each token (most conservative reduction).

Monitor state is per-stream.  The classifier and the metrics engine are
pure and freely concurrent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .model import SelectiveSsm, SpectralTrace, run_sequence
from .spectral import FeatureVector


class GuardError(ValueError):
    pass


@dataclass(frozen=True)
class GuardConfig:
    rho_min: float = 0.30
    window: int = 10
    power_iters: int = 3
    rho_critical: float = 0.90  # diagnostic only

    def __post_init__(self):
        if not (0.0 < self.rho_min < 1.0):
            raise GuardError("rho_min must lie in (0, 1)")
        if self.window < 1:
            raise GuardError("window must be >= 1")
        if self.power_iters < 1:
            raise GuardError("power_iters must be >= 1")


@dataclass
class GuardVerdict:
    decision: str  # "pass" | "block"
    trigger_token: int | None
    window_min_rho: float

    @property
    def blocked(self) -> bool:
        return self.decision == "block"

    def to_dict(self) -> dict:
        return {"decision": self.decision, "trigger_token": self.trigger_token,
                "window_min_rho": self.window_min_rho}


def monitor_step(buffer: list, new_rho: float, config: GuardConfig,
                 t: int | None = None) -> GuardVerdict:
    """Push one radius estimate into the ring and evaluate the window.

    The buffer is caller-owned state (one per stream) with capacity
    config.window; the oldest entry is evicted once the ring is full.
    """
    buffer.append(float(new_rho))
    while len(buffer) > config.window:
        buffer.pop(0)
    window_min = min(buffer)
    if window_min < config.rho_min:
        return GuardVerdict("block", t, window_min)
    return GuardVerdict("pass", None, window_min)


def run_monitor(values, config: GuardConfig) -> GuardVerdict:
    """Stream a whole sequence of estimates; returns the first block verdict
    or the final pass verdict."""
    buffer: list = []
    verdict = GuardVerdict("pass", None, float("inf"))
    for t, rho in enumerate(values):
        verdict = monitor_step(buffer, float(rho), config, t=t)
        if verdict.blocked:
            return verdict
    return verdict


def guarded_generate(ssm: SelectiveSsm, tokens, config: GuardConfig):
    """Gated sequence run: probe, monitor, halt on the first block.

    Per token the per-layer radii are estimated with config.power_iters
    power iterations (start vectors fixed per layer) and the min across
    layers feeds the monitor.  On a block nothing is emitted for the
    triggering token and its state update is discarded; the partial outputs
    and the truncated trace are returned with the verdict.
    """
    tokens = [int(t) for t in tokens]
    logits, trace = run_sequence(ssm, tokens, probe=True,
                                 probe_iters=config.power_iters)
    if not tokens:
        return logits, GuardVerdict("pass", None, float("inf")), trace

    verdict = run_monitor(trace.min_rho_hat_per_token(), config)
    if not verdict.blocked:
        return logits, verdict, trace

    cut = verdict.trigger_token
    kept = [r for r in trace.records if r.t <= cut]
    truncated = SpectralTrace(records=kept, n_layers=trace.n_layers,
                              length=cut + 1, probe_mode=trace.probe_mode,
                              probe_iters=trace.probe_iters,
                              probe_flops_per_record=trace.probe_flops_per_record)
    return logits[:cut], verdict, truncated


# --- logistic classifier ----------------------------------------------------


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    tau: float = 0.5
    layout: str = "means|stds"
    n_layers: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "layout": self.layout, "n_layers": self.n_layers,
            "weights": self.weights.tolist(), "bias": self.bias,
            "tau": self.tau,
        })

    @staticmethod
    def from_json(text: str) -> "LogisticModel":
        d = json.loads(text)
        return LogisticModel(weights=np.asarray(d["weights"], dtype=float),
                             bias=float(d["bias"]), tau=float(d["tau"]),
                             layout=d["layout"], n_layers=int(d["n_layers"]))


def _as_feature_matrix(features) -> tuple[np.ndarray, str, int]:
    if isinstance(features, np.ndarray):
        return np.asarray(features, dtype=float), "raw", 0
    rows = []
    layout, n_layers = "raw", 0
    for f in features:
        if isinstance(f, FeatureVector):
            rows.append(f.as_array())
            layout, n_layers = f.layout, f.n_layers
        else:
            rows.append(np.asarray(f, dtype=float))
    mat = np.vstack(rows)
    return mat, layout, n_layers


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def train_classifier(features, labels, epochs: int = 500,
                     learning_rate: float = 0.5, l2: float = 1e-4,
                     seed: int = 0) -> LogisticModel:
    """Full-batch gradient descent on cross-entropy + l2 ||w||^2.

    On a loss increase the step is rolled back and the rate halved, so the
    recorded training loss is non-increasing.  Deterministic given the seed.
    """
    x, layout, n_layers = _as_feature_matrix(features)
    y = np.asarray(labels, dtype=float)
    if x.shape[0] != y.shape[0]:
        raise GuardError("train_classifier: feature/label length mismatch")
    if len(np.unique(y)) < 2:
        raise GuardError("train_classifier: need at least one sample per class")
    n, dim = x.shape

    rng = np.random.default_rng(seed)
    w = 1e-3 * rng.standard_normal(dim)
    b = 0.0

    def loss_of(wv, bv):
        p = _sigmoid(x @ wv + bv)
        eps = 1e-12
        ce = -np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps))
        return float(ce + l2 * wv @ wv)

    lr = learning_rate
    current = loss_of(w, b)
    for _ in range(epochs):
        p = _sigmoid(x @ w + b)
        gw = x.T @ (p - y) / n + 2.0 * l2 * w
        gb = float(np.mean(p - y))
        while lr > 1e-15:
            w_try = w - lr * gw
            b_try = b - lr * gb
            trial = loss_of(w_try, b_try)
            if trial <= current:
                w, b, current = w_try, b_try, trial
                break
            lr *= 0.5
        if lr <= 1e-15:
            break
    return LogisticModel(weights=w, bias=b, layout=layout, n_layers=n_layers)


def classify(model: LogisticModel, features) -> tuple[float, int]:
    """Hazard score sigmoid(w.x + b) and the strict-threshold decision."""
    x = features.as_array() if isinstance(features, FeatureVector) else \
        np.asarray(features, dtype=float)
    if x.shape != model.weights.shape:
        raise GuardError(f"classify: feature dimension {x.shape} does not "
                         f"match model {model.weights.shape}")
    score = float(_sigmoid(x @ model.weights + model.bias))
    return score, int(score > model.tau)


# --- detection metrics ------------------------------------------------------


@dataclass
class DetectionMetrics:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    fpr: float
    auc: float = float("nan")
    flags: list = field(default_factory=list)

    @staticmethod
    def from_counts(tp: int, fp: int, tn: int, fn: int,
                    auc: float = float("nan"), flags=None) -> "DetectionMetrics":
        flags = list(flags or [])
        if tp + fp > 0:
            precision = tp / (tp + fp)
        else:
            precision = 1.0
            flags.append("precision_undefined_no_positives")
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        fpr = fp / (fp + tn) if fp + tn > 0 else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        return DetectionMetrics(tp=tp, fp=fp, tn=tn, fn=fn,
                                precision=precision, recall=recall, f1=f1,
                                fpr=fpr, auc=auc, flags=flags)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "fpr": self.fpr, "auc": self.auc,
                "flags": self.flags}


def auc_pairwise(scores, labels) -> tuple[float, bool]:
    """Exact pairwise AUC (ties half credit); (nan, True) for one class."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        return float("nan"), True
    wins = 0.0
    for sp in pos:
        wins += np.sum(sp > neg) + 0.5 * np.sum(sp == neg)
    return float(wins / (len(pos) * len(neg))), False


def compute_metrics(scores, labels, tau: float) -> DetectionMetrics:
    """Confusion counts at threshold tau plus the exact pairwise AUC."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.size == 0:
        raise GuardError("compute_metrics: empty input")
    if scores.shape != labels.shape:
        raise GuardError("compute_metrics: scores/labels length mismatch")
    preds = (scores > tau).astype(int)
    tp = int(np.sum((preds == 1) & (labels == 1)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    tn = int(np.sum((preds == 0) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    auc, degenerate = auc_pairwise(scores, labels)
    flags = ["auc_undefined_single_class"] if degenerate else []
    return DetectionMetrics.from_counts(tp, fp, tn, fn, auc=auc, flags=flags)


def ablate_threshold(labeled_traces, rho_grid, config: GuardConfig) -> list[dict]:
    """Threshold sweep of the monitor-as-detector over labeled traces.

    A trace is predicted adversarial when the monitor blocks anywhere along
    its min-layer estimate stream.  Emits one metric row per rho_min value.
    """
    rows = []
    streams = [(trace.min_rho_hat_per_token(), int(label))
               for trace, label in labeled_traces]
    for rho_min in rho_grid:
        cfg = GuardConfig(rho_min=float(rho_min), window=config.window,
                          power_iters=config.power_iters,
                          rho_critical=config.rho_critical)
        tp = fp = tn = fn = 0
        for values, label in streams:
            blocked = run_monitor(values, cfg).blocked
            if blocked and label == 1:
                tp += 1
            elif blocked and label == 0:
                fp += 1
            elif not blocked and label == 0:
                tn += 1
            else:
                fn += 1
        m = DetectionMetrics.from_counts(tp, fp, tn, fn)
        rows.append({"rho_min": float(rho_min), "precision": m.precision,
                     "recall": m.recall, "f1": m.f1, "fpr": m.fpr})
    return rows
