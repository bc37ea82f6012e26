"""Toy multi-layer selective state-space model.

The system under attack, monitoring, and intervention.  Each layer owns a
diagonal continuous transition (log-parameterized, so every channel is
strictly stable), an input column, a readout row, and an input-dependent
discretization step:

    delta[t,l] = clamp(softplus(w_delta[l] . e_t + bias[l]), dmin, dmax)
    Abar[t,l]  = diag(exp(delta * a[l]))          a[l,i] = -(i+1)
    Bbar[t,l]  = ((exp(delta * a) - 1) / a) * b[l]
    h[t,l]     = Abar h[t-1,l] + Bbar * s[t,l]

The discretization step and its spectrum are functions of the raw token
embedding only; the layers couple through the residual stream that carries
readouts forward (the stream drives each layer's scalar input channel and
the final logits).  That split keeps per-layer spectral records independent
of interventions on other layers while the hidden dynamics remain coupled.

Models are immutable after init; sequence runs own their state, so many
sequences may run concurrently against one shared model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .linalg import Matrix, power_method

# Benign operating point, baked in by a one-off calibration of the step-size
# projection: with unit-norm embeddings and this gain/bias pair the median
# per-layer spectral radius on uniformly random token streams sits at ~0.93,
# comfortably above the 0.90 floor the monitor is calibrated against, while
# leaving enough input sensitivity for gradient attacks to move the spectrum.
DELTA_GAIN = 3.5
DELTA_BIAS = -2.5867

# Offset mixed into the model seed to derive the per-layer probe seeds
# (start vectors are fixed per layer for reproducibility).
PROBE_SEED_OFFSET = 7919

DEFAULT_PROBE_ITERS = 3


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class SelectiveSsmConfig:
    n_layers: int = 4
    d_state: int = 16
    d_model: int = 32
    vocab_size: int = 256
    delta_min: float = 1e-3
    delta_max: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_layers, self.d_state, self.d_model, self.vocab_size) < 1:
            raise ModelError("all dimensions must be >= 1")
        if not (0.0 < self.delta_min < self.delta_max):
            raise ModelError("need 0 < delta_min < delta_max")

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "d_state": self.d_state,
            "d_model": self.d_model,
            "vocab_size": self.vocab_size,
            "delta_min": self.delta_min,
            "delta_max": self.delta_max,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class DiscretizedOperator:
    """Per-token, per-layer (Abar, Bbar) pair with cached spectral radius."""

    abar: np.ndarray  # diagonal entries
    bbar: np.ndarray
    layer: int = 0

    @property
    def rho(self) -> float:
        return float(np.max(np.abs(self.abar)))

    @property
    def d_state(self) -> int:
        return self.abar.shape[0]

    def abar_matrix(self) -> Matrix:
        return Matrix.diagonal(self.abar)


@dataclass
class StepRecord:
    t: int
    layer: int
    delta: float
    rho_exact: float
    rho_hat: float
    spectral_gap: float
    hnorm_before: float
    hnorm_after: float
    abar: np.ndarray | None = None  # diagonal entries, kept on request

    def to_dict(self) -> dict:
        out = {
            "t": self.t,
            "layer": self.layer,
            "delta": self.delta,
            "rho_exact": self.rho_exact,
            "rho_hat": self.rho_hat,
            "spectral_gap": self.spectral_gap,
            "hnorm_before": self.hnorm_before,
            "hnorm_after": self.hnorm_after,
        }
        if self.abar is not None:
            out["abar"] = self.abar.tolist()
        return out

    @staticmethod
    def from_dict(d: dict) -> "StepRecord":
        abar = d.get("abar")
        return StepRecord(
            t=int(d["t"]),
            layer=int(d["layer"]),
            delta=float(d["delta"]),
            rho_exact=float(d.get("rho_exact", float("nan"))),
            rho_hat=float(d["rho_hat"]),
            spectral_gap=float(d.get("spectral_gap", float("nan"))),
            hnorm_before=float(d.get("hnorm_before", 0.0)),
            hnorm_after=float(d.get("hnorm_after", 0.0)),
            abar=None if abar is None else np.asarray(abar, dtype=float),
        )


@dataclass
class SpectralTrace:
    """Per-token, per-layer probe stream: records sorted by (t, layer)."""

    records: list[StepRecord] = field(default_factory=list)
    n_layers: int = 0
    length: int = 0
    probe_mode: str = "diagonal"
    probe_iters: int = DEFAULT_PROBE_ITERS
    probe_flops_per_record: int = 0

    def _grid(self, attr: str) -> np.ndarray:
        out = np.full((self.length, self.n_layers), np.nan)
        for r in self.records:
            out[r.t, r.layer] = getattr(r, attr)
        return out

    def rho_hat_grid(self) -> np.ndarray:
        return self._grid("rho_hat")

    def rho_exact_grid(self) -> np.ndarray:
        return self._grid("rho_exact")

    def delta_grid(self) -> np.ndarray:
        return self._grid("delta")

    def gap_grid(self) -> np.ndarray:
        return self._grid("spectral_gap")

    def min_rho_hat_per_token(self) -> np.ndarray:
        return np.min(self.rho_hat_grid(), axis=1)

    def to_jsonl_lines(self) -> list[str]:
        return [json.dumps(r.to_dict()) for r in self.records]

    @staticmethod
    def from_records(records: list[StepRecord], **meta) -> "SpectralTrace":
        n_layers = 1 + max((r.layer for r in records), default=-1)
        length = 1 + max((r.t for r in records), default=-1)
        return SpectralTrace(records=records, n_layers=max(n_layers, 0),
                             length=max(length, 0), **meta)


class SelectiveSsm:
    """Immutable weight container; use init_ssm / from_json to build one."""

    def __init__(self, config, log_a, b, c, w_delta, b_delta, w_in, w_out,
                 embed, out_proj):
        self.config = config
        self.log_a = log_a
        self.b = b
        self.c = c
        self.w_delta = w_delta
        self.b_delta = b_delta
        self.w_in = w_in
        self.w_out = w_out
        self.embed = embed
        self.out_proj = out_proj
        self.a = -np.exp(log_a)  # strictly negative continuous spectrum
        for arr in (self.log_a, self.b, self.c, self.w_delta, self.b_delta,
                    self.w_in, self.w_out, self.embed, self.out_proj, self.a):
            arr.setflags(write=False)

    def probe_seed(self, layer: int) -> int:
        return self.config.seed + PROBE_SEED_OFFSET + layer

    # --- serialization: one JSON document, flat row-major weight arrays ---

    _WEIGHT_FIELDS = ("log_a", "b", "c", "w_delta", "b_delta", "w_in",
                      "w_out", "embed", "out_proj")

    def to_json(self) -> str:
        doc = {"config": self.config.to_dict(), "weights": {}}
        for name in self._WEIGHT_FIELDS:
            doc["weights"][name] = np.ravel(getattr(self, name)).tolist()
        return json.dumps(doc)

    @staticmethod
    def from_json(text: str) -> "SelectiveSsm":
        doc = json.loads(text)
        cfg = SelectiveSsmConfig(**doc["config"])
        l, d, dm, v = cfg.n_layers, cfg.d_state, cfg.d_model, cfg.vocab_size
        shapes = {
            "log_a": (l, d), "b": (l, d), "c": (l, d),
            "w_delta": (l, dm), "b_delta": (l,), "w_in": (l, dm),
            "w_out": (l, dm), "embed": (v, dm), "out_proj": (dm, v),
        }
        weights = {}
        for name, shape in shapes.items():
            flat = np.asarray(doc["weights"][name], dtype=float)
            if flat.size != int(np.prod(shape)):
                raise ModelError(f"weight {name}: expected {np.prod(shape)} "
                                 f"entries, got {flat.size}")
            weights[name] = flat.reshape(shape)
        return SelectiveSsm(cfg, **weights)


def init_ssm(config: SelectiveSsmConfig) -> SelectiveSsm:
    """Deterministic initialization from the config seed.

    Channel timescales spread as a_i = -(i+1); embedding rows are unit norm
    so attack projection is a cosine nearest-neighbor; the step-size bias is
    the baked-in benign calibration (see DELTA_GAIN / DELTA_BIAS).
    """
    rng = np.random.default_rng(config.seed)
    l, d, dm, v = (config.n_layers, config.d_state, config.d_model,
                   config.vocab_size)

    log_a = np.tile(np.log(np.arange(1, d + 1, dtype=float)), (l, 1))
    b = rng.standard_normal((l, d)) / np.sqrt(d)
    c = rng.standard_normal((l, d)) / np.sqrt(d)

    w_delta = rng.standard_normal((l, dm))
    w_delta *= DELTA_GAIN / np.linalg.norm(w_delta, axis=1, keepdims=True)
    b_delta = np.full(l, DELTA_BIAS)

    w_in = rng.standard_normal((l, dm)) / np.sqrt(dm)
    w_out = rng.standard_normal((l, dm)) / np.sqrt(dm)

    embed = rng.standard_normal((v, dm))
    embed /= np.linalg.norm(embed, axis=1, keepdims=True)
    out_proj = rng.standard_normal((dm, v)) / np.sqrt(dm)

    return SelectiveSsm(config, log_a, b, c, w_delta, b_delta, w_in, w_out,
                        embed, out_proj)


def softplus(x):
    return np.logaddexp(0.0, x)


def compute_delta(ssm: SelectiveSsm, layer: int, x_embed: np.ndarray) -> float:
    """Input-dependent step size: clamp(softplus(w . x + bias))."""
    x = np.asarray(x_embed, dtype=float)
    if x.shape != (ssm.config.d_model,):
        raise ModelError(f"x_embed must have {ssm.config.d_model} entries")
    pre = float(ssm.w_delta[layer] @ x + ssm.b_delta[layer])
    return float(np.clip(softplus(pre), ssm.config.delta_min, ssm.config.delta_max))


def discretize(ssm: SelectiveSsm, layer: int, delta: float) -> DiscretizedOperator:
    """Zero-order-hold discretization of the layer at step size delta."""
    if not (ssm.config.delta_min <= delta <= ssm.config.delta_max):
        raise ModelError("delta outside configured bounds")
    a = ssm.a[layer]
    abar = np.exp(delta * a)
    bbar = np.where(np.abs(a) < 1e-12, delta * ssm.b[layer],
                    (abar - 1.0) / np.where(np.abs(a) < 1e-12, 1.0, a) * ssm.b[layer])
    return DiscretizedOperator(abar=abar, bbar=bbar, layer=layer)


def step(ssm: SelectiveSsm, layer: int, h: np.ndarray,
         x_embed: np.ndarray) -> tuple[np.ndarray, DiscretizedOperator]:
    """One recurrence update for one layer.

    The scalar input channel is the layer's learned projection of x_embed
    (independent of the readout row c).  Returns the discretized operator
    alongside the new state so callers can probe it.
    """
    h = np.asarray(h, dtype=float)
    if h.shape != (ssm.config.d_state,):
        raise ModelError(f"state must have {ssm.config.d_state} entries")
    delta = compute_delta(ssm, layer, x_embed)
    op = discretize(ssm, layer, delta)
    s = float(ssm.w_in[layer] @ np.asarray(x_embed, dtype=float))
    h_next = op.abar * h + op.bbar * s
    return h_next, op


# --- batch machinery -------------------------------------------------------


def embed_tokens(ssm: SelectiveSsm, tokens) -> np.ndarray:
    ids = np.asarray(tokens, dtype=int)
    if ids.size and (ids.min() < 0 or ids.max() >= ssm.config.vocab_size):
        raise ModelError("token id out of range")
    return ssm.embed[ids] if ids.size else np.zeros((0, ssm.config.d_model))


def discretize_batch(ssm: SelectiveSsm, z: np.ndarray):
    """Vectorized (delta, alpha, bbar) for a whole embedded sequence.

    z has shape (T, d_model); returns delta (T, L), alpha (T, L, d) and
    bbar (T, L, d).  The step size reads the raw embedding, so this is
    independent of the recurrence state.
    """
    pre = z @ ssm.w_delta.T + ssm.b_delta
    delta = np.clip(softplus(pre), ssm.config.delta_min, ssm.config.delta_max)
    a = ssm.a
    alpha = np.exp(delta[:, :, None] * a[None, :, :])
    safe_a = np.where(np.abs(a) < 1e-12, 1.0, a)
    bbar = np.where(np.abs(a)[None, :, :] < 1e-12,
                    delta[:, :, None] * ssm.b[None, :, :],
                    (alpha - 1.0) / safe_a[None, :, :] * ssm.b[None, :, :])
    return delta, alpha, bbar


def pin_spectral_radius(alpha: np.ndarray, target: float) -> np.ndarray:
    """Rescale diagonal entries so every operator has radius exactly target.

    Two-sided: used by retention probes that hold the radius at a set point.
    The dominant entry is written directly and the rest are clipped, so the
    result's radius equals the target bit-for-bit and re-pinning is a no-op.
    """
    mags = np.abs(alpha)
    rho = np.max(mags, axis=-1, keepdims=True)
    scale = np.where(rho > 0, target / np.where(rho > 0, rho, 1.0), 1.0)
    out = np.clip(alpha * scale, -target, target)
    idx = np.argmax(mags, axis=-1)
    grid = np.ix_(*[np.arange(n) for n in alpha.shape[:-1]])
    out[grid + (idx,)] = np.sign(alpha[grid + (idx,)]) * target
    return out


def cap_spectral_radius(alpha: np.ndarray, caps: np.ndarray) -> np.ndarray:
    """One-sided clamp of a (T, L, d) batch against per-cell targets.

    caps is (T, L) with nan marking cells to leave alone.  Operators whose
    radius exceeds their target are rescaled; the dominant entry is written
    directly and the rest clipped, so the clamped radius equals the target
    exactly and re-clamping is the identity.
    """
    mags = np.abs(alpha)
    rho = np.max(mags, axis=-1)
    active = np.isfinite(caps) & (rho > caps)
    safe_caps = np.where(np.isfinite(caps), caps, np.inf)
    scale = np.where(active, safe_caps / np.where(rho > 0, rho, 1.0), 1.0)
    out = np.clip(alpha * scale[..., None], -safe_caps[..., None],
                  safe_caps[..., None])
    idx = np.argmax(mags, axis=-1)
    grid = np.ix_(*[np.arange(n) for n in alpha.shape[:-1]])
    dom = out[grid + (idx,)]
    out[grid + (idx,)] = np.where(active,
                                  np.sign(alpha[grid + (idx,)]) * caps, dom)
    return out


def probe_start_vectors(ssm: SelectiveSsm) -> np.ndarray:
    """Unit-norm power-iteration start vectors, one fixed per layer."""
    v0 = np.empty((ssm.config.n_layers, ssm.config.d_state))
    for layer in range(ssm.config.n_layers):
        rng = np.random.default_rng(ssm.probe_seed(layer))
        v = rng.standard_normal(ssm.config.d_state)
        v0[layer] = v / np.linalg.norm(v)
    return v0


def power_probe(alpha: np.ndarray, v0: np.ndarray, k: int) -> np.ndarray:
    """Vectorized k-iteration Rayleigh estimate over a (T, L, d) batch."""
    v = np.broadcast_to(v0[None, :, :], alpha.shape).copy()
    for _ in range(k):
        w = alpha * v
        norms = np.sqrt(np.sum(w * w, axis=-1, keepdims=True))
        v = w / norms
    num = np.sum(v * (alpha * v), axis=-1)
    den = np.sum(v * v, axis=-1)
    return np.abs(num / den)


def _dense_probe(ssm: SelectiveSsm, alpha: np.ndarray, k: int) -> np.ndarray:
    """Probe through the generic dense power method (forced-dense mode)."""
    steps, n_layers, _ = alpha.shape
    out = np.empty((steps, n_layers))
    for t in range(steps):
        for layer in range(n_layers):
            est = power_method(Matrix.dense(np.diag(alpha[t, layer])), k,
                               ssm.probe_seed(layer))
            out[t, layer] = est.rho_hat
    return out


def run_embedded(ssm: SelectiveSsm, z: np.ndarray, probe: bool = False,
                 probe_mode: str = "diagonal",
                 probe_iters: int = DEFAULT_PROBE_ITERS,
                 rho_cap=None, rho_pin=None, h0=None,
                 keep_operators: bool = False):
    """Sequence run on already-embedded inputs.

    rho_cap: optional one-sided clamp targets, shaped (L,) or (T, L), with
    nan marking untouched cells.  rho_pin: optional scalar that pins every
    operator's radius exactly (two-sided).  Returns (logits, trace, hidden,
    readout).
    """
    steps = z.shape[0]
    l, d = ssm.config.n_layers, ssm.config.d_state
    delta, alpha, bbar = discretize_batch(ssm, z)

    if rho_pin is not None:
        alpha = pin_spectral_radius(alpha, float(rho_pin))
    elif rho_cap is not None and steps:
        caps = np.asarray(rho_cap, dtype=float)
        if caps.ndim == 1:
            caps = np.broadcast_to(caps[None, :], (steps, l))
        alpha = cap_spectral_radius(alpha, caps)

    base = z @ ssm.w_in.T
    mix = ssm.w_in @ ssm.w_out.T
    if h0 is None:
        h0 = np.zeros((l, d))
    if steps:
        hidden, readout = kernels.scan(
            np.ascontiguousarray(alpha), np.ascontiguousarray(bbar),
            np.ascontiguousarray(base), np.ascontiguousarray(mix),
            np.ascontiguousarray(ssm.c), np.ascontiguousarray(h0))
    else:
        hidden = np.zeros((0, l, d))
        readout = np.zeros((0, l))
    stream = z + readout @ ssm.w_out
    logits = stream @ ssm.out_proj

    trace = SpectralTrace(records=[], n_layers=l, length=steps,
                          probe_mode=probe_mode, probe_iters=probe_iters)
    if probe and steps:
        rho_exact = np.max(np.abs(alpha), axis=-1)
        sorted_mags = np.sort(np.abs(alpha), axis=-1)
        gap = (sorted_mags[..., -1] - sorted_mags[..., -2]) if d > 1 \
            else np.zeros((steps, l))
        if probe_mode == "dense":
            rho_hat = _dense_probe(ssm, alpha, probe_iters)
            trace.probe_flops_per_record = probe_iters * d * d
        else:
            rho_hat = power_probe(alpha, probe_start_vectors(ssm), probe_iters)
            trace.probe_flops_per_record = probe_iters * d
        norms = np.linalg.norm(hidden, axis=-1)
        before = np.vstack([np.linalg.norm(h0, axis=-1)[None, :], norms[:-1]])
        for t in range(steps):
            for layer in range(l):
                trace.records.append(StepRecord(
                    t=t, layer=layer, delta=float(delta[t, layer]),
                    rho_exact=float(rho_exact[t, layer]),
                    rho_hat=float(rho_hat[t, layer]),
                    spectral_gap=float(gap[t, layer]),
                    hnorm_before=float(before[t, layer]),
                    hnorm_after=float(norms[t, layer]),
                    abar=alpha[t, layer].copy() if keep_operators else None))
    return logits, trace, hidden, readout


def run_sequence(ssm: SelectiveSsm, tokens, probe: bool = False,
                 probe_mode: str = "diagonal",
                 probe_iters: int = DEFAULT_PROBE_ITERS,
                 rho_cap=None, rho_pin=None, h0=None,
                 keep_operators: bool = False):
    """Run a token sequence; returns (logits per token, SpectralTrace)."""
    z = embed_tokens(ssm, tokens)
    logits, trace, _, _ = run_embedded(ssm, z, probe=probe,
                                       probe_mode=probe_mode,
                                       probe_iters=probe_iters,
                                       rho_cap=rho_cap, rho_pin=rho_pin, h0=h0,
                                       keep_operators=keep_operators)
    return logits, trace


def sample_operators(ssm: SelectiveSsm, n: int, seed: int,
                     delta_low: float = 2.0,
                     delta_high: float = 10.0) -> list[DiscretizedOperator]:
    """Validation sampler: discretized operators from the contraction regime.

    Step sizes are drawn uniformly from [delta_low, delta_high], the regime
    collapse-inducing inputs push the model into and where gating decisions
    bind.  Near-critical operators (tiny eigengap, where short power
    iterations are known-biased) are exercised separately by the
    long-iteration agreement tests.
    """
    if n < 1:
        raise ModelError("sample_operators: n must be >= 1")
    lo = max(delta_low, ssm.config.delta_min)
    hi = min(delta_high, ssm.config.delta_max)
    rng = np.random.default_rng(seed)
    ops = []
    for _ in range(n):
        layer = int(rng.integers(ssm.config.n_layers))
        delta = float(rng.uniform(lo, hi))
        ops.append(discretize(ssm, layer, delta))
    return ops
