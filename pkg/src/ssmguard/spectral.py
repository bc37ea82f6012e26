"""Spectral feature extraction, Gramian energy, horizon and Lipschitz bounds.

The memory-horizon machinery follows the signal-to-noise reading of the
recurrence: the surviving initial-state signal kappa * rho^t * ||h0|| is
compared against the largest input energy the dynamics can accumulate,
lambda_max of the controllability Gramian.  Natural logarithms throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import LinalgError, Matrix, eig_radius_exact, solve_discrete_lyapunov
from .model import DiscretizedOperator, SelectiveSsm, SpectralTrace, discretize


class SpectralError(ValueError):
    pass


@dataclass
class FeatureVector:
    """Per-layer trace statistics in the fixed layout [means | stds | gaps?]."""

    means: np.ndarray
    stds: np.ndarray
    gaps: np.ndarray | None = None

    @property
    def n_layers(self) -> int:
        return self.means.shape[0]

    @property
    def layout(self) -> str:
        return "means|stds|gaps" if self.gaps is not None else "means|stds"

    def as_array(self) -> np.ndarray:
        parts = [self.means, self.stds]
        if self.gaps is not None:
            parts.append(self.gaps)
        return np.concatenate(parts)

    def to_dict(self) -> dict:
        return {"layout": self.layout, "n_layers": self.n_layers,
                "values": self.as_array().tolist()}

    @staticmethod
    def from_dict(d: dict) -> "FeatureVector":
        vals = np.asarray(d["values"], dtype=float)
        n = int(d["n_layers"])
        if d["layout"] == "means|stds|gaps":
            return FeatureVector(vals[:n], vals[n:2 * n], vals[2 * n:])
        return FeatureVector(vals[:n], vals[n:2 * n])


@dataclass(frozen=True)
class HorizonInputs:
    rho: float
    kappa: float
    h0_norm: float
    epsilon: float
    lambda_max_wc: float

    def __post_init__(self):
        if not (0.0 < self.rho):
            raise SpectralError("rho must be positive")
        if self.kappa < 1.0:
            raise SpectralError("kappa must be >= 1")
        if self.h0_norm <= 0.0:
            raise SpectralError("h0_norm must be positive")
        if not (0.0 < self.epsilon < 1.0):
            raise SpectralError("epsilon must lie in (0, 1)")
        if self.lambda_max_wc <= 0.0:
            raise SpectralError("lambda_max_wc must be positive")


@dataclass
class HorizonBound:
    value: float
    vacuous: bool = False


def extract_features(trace: SpectralTrace, include_gaps: bool = False) -> FeatureVector:
    """Per-layer sample mean and standard deviation of the probed radii."""
    if not trace.records:
        raise SpectralError("extract_features: empty trace")
    grid = trace.rho_hat_grid()
    means = np.mean(grid, axis=0)
    stds = np.std(grid, axis=0, ddof=1) if grid.shape[0] > 1 \
        else np.zeros(grid.shape[1])
    gaps = None
    if include_gaps:
        gap_grid = trace.gap_grid()
        if np.any(np.isnan(gap_grid)):
            raise SpectralError("extract_features: trace carries no gap data")
        gaps = np.mean(gap_grid, axis=0)
    return FeatureVector(means=means, stds=stds, gaps=gaps)


def spectral_gap(operator: DiscretizedOperator) -> float:
    """Difference between the two largest diagonal entry magnitudes."""
    mags = np.sort(np.abs(operator.abar))
    if mags.size < 2:
        return 0.0
    return float(mags[-1] - mags[-2])


def gramian_energy(operator: DiscretizedOperator) -> float:
    """lambda_max of the controllability Gramian of (Abar, Bbar).

    Diagonal operators use the closed-form Gramian entries
    b_i b_j / (1 - a_i a_j); the eigen-radius of that symmetric matrix is
    the energy bound.
    """
    a = operator.abar
    rho = float(np.max(np.abs(a))) if a.size else 0.0
    if rho >= 1.0:
        raise SpectralError(f"gramian_energy: rho = {rho:.6g} >= 1, Gramian diverges")
    b = operator.bbar
    if not np.any(b):
        return 0.0
    wc = np.outer(b, b) / (1.0 - np.outer(a, a))
    return eig_radius_exact(Matrix.dense(wc)).rho_hat


def gramian_energy_dense(abar: Matrix, bbar: Matrix) -> float:
    """Energy bound through the Lyapunov solver (general operators)."""
    wc = solve_discrete_lyapunov(abar, bbar)
    return eig_radius_exact(wc).rho_hat


def horizon_bound(inputs: HorizonInputs) -> HorizonBound:
    """Memory-horizon ceiling log(kappa sqrt(h0^2/(eps^2 lmax))) / log(1/rho).

    Returns 0 with the vacuous flag when the log argument is <= 1 (the
    signal never exceeds the noise floor); raises for rho >= 1 where the
    geometric-decay premise fails.
    """
    if inputs.rho >= 1.0:
        raise SpectralError("bound undefined: marginally stable or divergent")
    arg = inputs.kappa * math.sqrt(
        inputs.h0_norm ** 2 / (inputs.epsilon ** 2 * inputs.lambda_max_wc))
    if arg <= 1.0:
        return HorizonBound(0.0, vacuous=True)
    return HorizonBound(math.log(arg) / math.log(1.0 / inputs.rho))


def near_critical_horizon(eta: float, kappa: float, epsilon: float) -> float:
    """First-order horizon for rho = 1 - eta: log(kappa/epsilon) / eta."""
    if not (0.0 < eta < 0.5):
        raise SpectralError("eta must lie in (0, 0.5)")
    return math.log(kappa / epsilon) / eta


def lipschitz_certificate(a_norm: float, delta_max: float) -> float:
    """Certified slope of rho(exp(delta A)) in delta: ||A|| exp(dmax ||A||)."""
    if a_norm <= 0.0 or delta_max <= 0.0:
        raise SpectralError("lipschitz_certificate: inputs must be positive")
    return a_norm * math.exp(delta_max * a_norm)


def min_detectable_perturbation(delta_rho: float, lipschitz: float) -> float:
    """Smallest step-size shift that can move the radius by delta_rho."""
    return delta_rho / lipschitz


def verify_lipschitz(ssm: SelectiveSsm, layer: int, n_samples: int,
                     seed: int) -> dict:
    """Sample step-size pairs and compare observed radius slopes to the bound.

    Degenerate pairs (equal step sizes) are redrawn.  Returns the max
    observed ratio, the certificate computed with ||A|| = max|a_i| (exact
    for the diagonal layer), and the violation count (always 0 when the
    certificate holds).
    """
    if n_samples < 1:
        raise SpectralError("verify_lipschitz: n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    a_norm = float(np.max(np.abs(ssm.a[layer])))
    bound = lipschitz_certificate(a_norm, ssm.config.delta_max)
    lo, hi = ssm.config.delta_min, ssm.config.delta_max
    max_ratio = 0.0
    violations = 0
    drawn = 0
    while drawn < n_samples:
        d1, d2 = rng.uniform(lo, hi, 2)
        if d1 == d2:
            continue
        drawn += 1
        r1 = discretize(ssm, layer, float(d1)).rho
        r2 = discretize(ssm, layer, float(d2)).rho
        ratio = abs(r1 - r2) / abs(d1 - d2)
        max_ratio = max(max_ratio, ratio)
        if ratio > bound:
            violations += 1
    return {"max_ratio": max_ratio, "bound": bound, "violations": violations,
            "n_samples": n_samples}
