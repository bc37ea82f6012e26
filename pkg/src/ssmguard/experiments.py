"""Causal interventions, retention benchmarks, and labeled data generation.

The clamp intervention rescales a discretized operator so its spectral
radius never exceeds a target, changing the dynamics without touching any
weight.  The retention probe measures how much of an initial-state
perturbation survives a run whose radius is held at a set point, which is
the recoverability quantity the phase grid thresholds.

Grid cells, dataset samples, and probes are independent; results are
invariant to evaluation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackConfig, pgd_attack
from .model import (DiscretizedOperator, SelectiveSsm, SpectralTrace,
                    StepRecord, run_embedded, embed_tokens, run_sequence)


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class ClampProtocol:
    mode: str  # "single_layer" | "all_layer"
    rho_target: float
    layer: int | None = None

    def __post_init__(self):
        if self.mode not in ("single_layer", "all_layer"):
            raise ExperimentError("mode must be single_layer or all_layer")
        if not (0.0 < self.rho_target <= 1.0):
            raise ExperimentError("rho_target must lie in (0, 1]")
        if self.mode == "single_layer" and self.layer is None:
            raise ExperimentError("single_layer protocol needs a layer index")


def clamp_operator(operator: DiscretizedOperator,
                   rho_target: float) -> DiscretizedOperator:
    """Rescale Abar so its radius is min(rho, target); Bbar untouched.

    Operators already at or below the target are returned unchanged, which
    together with the exact dominant-entry write makes the clamp idempotent
    bit-for-bit.
    """
    if not (0.0 < rho_target <= 1.0):
        raise ExperimentError("rho_target must lie in (0, 1]")
    rho = operator.rho
    if rho <= rho_target:
        return operator
    scaled = np.clip(operator.abar * (rho_target / rho), -rho_target, rho_target)
    idx = int(np.argmax(np.abs(operator.abar)))
    scaled[idx] = np.sign(operator.abar[idx]) * rho_target
    return DiscretizedOperator(abar=scaled, bbar=operator.bbar,
                               layer=operator.layer)


def run_with_clamp(ssm: SelectiveSsm, tokens, protocol: ClampProtocol,
                   probe_iters: int = 3):
    """run_sequence with the targeted layers' operators clamped per token.

    The trace records post-clamp radii.  Single-layer protocols leave every
    other layer's records identical to the unclamped run.
    """
    n_layers = ssm.config.n_layers
    caps = np.full(n_layers, np.nan)
    if protocol.mode == "all_layer":
        caps[:] = protocol.rho_target
    else:
        if not (0 <= protocol.layer < n_layers):
            raise ExperimentError(f"layer {protocol.layer} out of range")
        caps[protocol.layer] = protocol.rho_target
    return run_sequence(ssm, tokens, probe=True, probe_iters=probe_iters,
                        rho_cap=caps)


# --- associative recall -----------------------------------------------------


@dataclass(frozen=True)
class RecallTask:
    """Key-value binding prompt with intervening noise and a delayed query.

    Prompt layout: P key-value pairs, `distance` noise tokens, then the
    query marker followed by the queried key.  The answer is the value
    bound to that key.
    """

    keys: tuple
    values: tuple
    distance: int
    noise: tuple
    query_key: int
    answer: int
    marker: int
    seed: int

    @property
    def n_pairs(self) -> int:
        return len(self.keys)

    def tokens(self) -> list[int]:
        pairs = []
        for k, v in zip(self.keys, self.values):
            pairs.extend((k, v))
        return pairs + list(self.noise) + [self.marker, self.query_key]


def gen_recall_dataset(n_samples: int, vocab_size: int = 256,
                       n_pairs: int = 5, distance: int = 100,
                       seed: int = 0) -> list[RecallTask]:
    """Deterministic-per-seed recall tasks.

    The last vocabulary id is reserved as the query marker; keys and values
    are drawn distinct from the rest, noise is uniform over the non-marker
    vocabulary.
    """
    if n_samples < 1:
        raise ExperimentError("n_samples must be >= 1")
    if distance < 1:
        raise ExperimentError("distance must be >= 1")
    marker = vocab_size - 1
    if vocab_size - 1 < 2 * n_pairs:
        raise ExperimentError("vocab too small for distinct keys and values")
    rng = np.random.default_rng(seed)
    tasks = []
    for i in range(n_samples):
        picks = rng.choice(vocab_size - 1, size=2 * n_pairs, replace=False)
        keys, values = picks[:n_pairs], picks[n_pairs:]
        noise = rng.integers(0, vocab_size - 1, size=distance)
        q = int(rng.integers(n_pairs))
        tasks.append(RecallTask(
            keys=tuple(int(k) for k in keys),
            values=tuple(int(v) for v in values),
            distance=distance,
            noise=tuple(int(t) for t in noise),
            query_key=int(keys[q]),
            answer=int(values[q]),
            marker=marker,
            seed=seed + i,
        ))
    return tasks


# --- retention and the phase grid -------------------------------------------


def retention_probe(ssm: SelectiveSsm, rho_target: float, distance: int,
                    probe_layer: int = 0, seed: int = 0) -> float:
    """Surviving fraction of a state perturbation after `distance` tokens.

    The run holds every operator's radius at rho_target (two-sided pin; the
    one-sided intervention clamp cannot raise radii above the benign
    operating point, and the probe sweeps targets on both sides of it).
    The perturbation is the unit vector along the probed layer's dominant
    channel, the slowest-decaying direction the horizon bound governs.
    """
    if distance < 0:
        raise ExperimentError("distance must be >= 0")
    if distance == 0:
        return 1.0
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, ssm.config.vocab_size, size=distance)
    z = embed_tokens(ssm, tokens)
    l, d = ssm.config.n_layers, ssm.config.d_state

    h0 = np.zeros((l, d))
    _, _, base_hidden, _ = run_embedded(ssm, z, rho_pin=rho_target, h0=h0)

    h0p = h0.copy()
    dominant = int(np.argmax(ssm.a[probe_layer]))
    h0p[probe_layer, dominant] = 1.0
    _, _, pert_hidden, _ = run_embedded(ssm, z, rho_pin=rho_target, h0=h0p)

    diff = pert_hidden[-1, probe_layer] - base_hidden[-1, probe_layer]
    return float(np.linalg.norm(diff))


@dataclass
class PhaseGrid:
    rho_levels: list[float]
    distances: list[int]
    retention: np.ndarray  # |rho_levels| x |distances|
    epsilon: float

    @property
    def recoverable(self) -> np.ndarray:
        return self.retention >= self.epsilon

    def rows(self) -> list[dict]:
        out = []
        for i, rho in enumerate(self.rho_levels):
            for j, dist in enumerate(self.distances):
                out.append({"rho": rho, "distance": dist,
                            "retention": float(self.retention[i, j]),
                            "recoverable": bool(self.recoverable[i, j])})
        return out


def phase_transition_grid(ssm: SelectiveSsm, rho_levels, distances,
                          epsilon: float = 1e-5, seed: int = 0) -> PhaseGrid:
    """Retention over the (rho, distance) grid, thresholded at epsilon.

    One shared token seed across cells keeps the boundary monotone:
    recoverability is non-decreasing in rho and non-increasing in distance.
    """
    rho_levels = [float(r) for r in rho_levels]
    distances = [int(d) for d in distances]
    if not rho_levels or not distances:
        raise ExperimentError("phase grid needs non-empty axes")
    retention = np.empty((len(rho_levels), len(distances)))
    for i, rho in enumerate(rho_levels):
        for j, dist in enumerate(distances):
            retention[i, j] = retention_probe(ssm, rho, dist, seed=seed)
    return PhaseGrid(rho_levels=rho_levels, distances=distances,
                     retention=retention, epsilon=epsilon)


# --- labeled trace generation -----------------------------------------------


@dataclass
class LabeledTrace:
    trace: SpectralTrace
    label: int  # 1 adversarial, 0 benign
    source: str

    def to_json_line(self) -> str:
        return json.dumps({"label": self.label, "source": self.source,
                           "records": [r.to_dict() for r in self.trace.records]})

    @staticmethod
    def from_json_line(line: str) -> "LabeledTrace":
        d = json.loads(line)
        records = [StepRecord.from_dict(r) for r in d["records"]]
        return LabeledTrace(trace=SpectralTrace.from_records(records),
                            label=int(d["label"]), source=str(d["source"]))


def gen_labeled_traces(ssm: SelectiveSsm, n_benign: int, n_adversarial: int,
                       source: str = "clamp", length: int = 100,
                       clamp_target: float = 0.2,
                       attack_config: AttackConfig | None = None,
                       seed: int = 0) -> list[LabeledTrace]:
    """Balanced benign/adversarial probe traces for detector training.

    Benign traces come from uniformly random token streams.  Adversarial
    traces are either clamp-simulated collapse (all layers capped at
    clamp_target from a random onset token onward) or probed reruns of
    gradient-attack outputs.  Deterministic per seed.
    """
    if n_benign < 1 or n_adversarial < 0:
        raise ExperimentError("need n_benign >= 1 and n_adversarial >= 0")
    if source not in ("clamp", "attack"):
        raise ExperimentError("source must be clamp or attack")
    rng = np.random.default_rng(seed)
    items: list[LabeledTrace] = []

    for _ in range(n_benign):
        tokens = rng.integers(0, ssm.config.vocab_size, size=length)
        _, trace = run_sequence(ssm, tokens, probe=True)
        items.append(LabeledTrace(trace=trace, label=0, source="benign"))

    for idx in range(n_adversarial):
        tokens = rng.integers(0, ssm.config.vocab_size, size=length)
        if source == "clamp":
            onset = int(rng.integers(0, max(1, length - 1)))
            caps = np.full((length, ssm.config.n_layers), np.nan)
            caps[onset:, :] = clamp_target
            _, trace = run_sequence(ssm, tokens, probe=True, rho_cap=caps)
        else:
            cfg = attack_config or AttackConfig()
            cfg = AttackConfig(alpha=cfg.alpha, steps=cfg.steps, lam=cfg.lam,
                               seed=seed + 10_000 + idx, mode=cfg.mode)
            result = pgd_attack(ssm, tokens.tolist(), cfg)
            _, trace = run_sequence(ssm, result.adversarial_tokens, probe=True)
        items.append(LabeledTrace(trace=trace, label=1, source=source))
    return items


def write_labeled_jsonl(path, items: list[LabeledTrace]):
    with open(path, "w") as fh:
        for item in items:
            fh.write(item.to_json_line() + "\n")


def read_labeled_jsonl(path) -> list[LabeledTrace]:
    items = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                items.append(LabeledTrace.from_json_line(line))
    return items
