"""Dense and diagonal matrix kernels.

Everything downstream (discretization, Gramian energy, spectral monitoring)
is built on the four primitives here: matrix exponential, power iteration,
exact eigen-radius, and the discrete Lyapunov / controllability-Gramian
solver.  All routines are pure functions of their inputs (seed included),
so concurrent use needs no locking.

Conventions:
  * matrices are real; diagonal operators store only the diagonal vector
  * the exact eigensolver is validation-scale (dimension <= 64)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_EXACT_DIM = 64

# Taylor order / scaling target for the dense matrix exponential.  Scaling the
# operator below norm 1/2 makes the order-18 remainder ~0.5^19/19! ~ 1.6e-23,
# far inside the 1e-12 contract for ||dt*M|| <= 20.
_EXP_TAYLOR_ORDER = 18
_EXP_SCALE_TARGET = 0.5


class LinalgError(ValueError):
    """Raised on contract violations (shape, finiteness, convergence)."""


@dataclass(frozen=True)
class Matrix:
    """Square operator, either dense (n x n array) or diagonal (n vector)."""

    data: np.ndarray
    kind: str  # "dense" | "diagonal"

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        object.__setattr__(self, "data", arr)
        if self.kind == "dense":
            if arr.ndim != 2:
                raise LinalgError("dense matrix needs a 2-d array")
        elif self.kind == "diagonal":
            if arr.ndim != 1:
                raise LinalgError("diagonal matrix stores a 1-d vector")
        else:
            raise LinalgError(f"unknown matrix kind {self.kind!r}")
        if not np.all(np.isfinite(arr)):
            raise LinalgError("matrix entries must be finite")

    @staticmethod
    def dense(values) -> "Matrix":
        return Matrix(np.array(values, dtype=float), "dense")

    @staticmethod
    def diagonal(values) -> "Matrix":
        return Matrix(np.array(values, dtype=float), "diagonal")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1] if self.kind == "dense" else self.data.shape[0]

    @property
    def is_square(self) -> bool:
        return self.rows == self.cols

    def to_dense(self) -> np.ndarray:
        if self.kind == "diagonal":
            return np.diag(self.data)
        return self.data.copy()

    def matvec(self, v: np.ndarray) -> np.ndarray:
        if self.kind == "diagonal":
            return self.data * v
        return self.data @ v


@dataclass
class SpectralEstimate:
    """Spectral-radius estimate plus provenance of how it was obtained."""

    rho_hat: float
    iterations_used: int
    method: str  # "power" | "exact_eig" | "diagonal_closed_form"
    flagged: bool = False
    note: str = ""


def _require_square(m: Matrix, op: str):
    if not m.is_square:
        raise LinalgError(f"{op}: operator must be square, got {m.rows}x{m.cols}")


def mat_exp(m: Matrix, dt: float) -> Matrix:
    """exp(dt * M).

    Diagonal inputs use the elementwise closed form.  Dense inputs use
    scaling-and-squaring on a truncated Taylor series: the operator is scaled
    by 2^-s until its infinity norm is below 1/2, the order-18 series is
    evaluated by Horner's rule, and the result is squared s times.
    """
    if not (dt > 0.0) or not math.isfinite(dt):
        raise LinalgError("mat_exp: dt must be a positive finite real")
    _require_square(m, "mat_exp")

    if m.kind == "diagonal":
        return Matrix.diagonal(np.exp(dt * m.data))

    a = dt * m.data
    norm = float(np.max(np.sum(np.abs(a), axis=1))) if a.size else 0.0
    squarings = 0
    if norm > _EXP_SCALE_TARGET:
        squarings = max(0, int(math.ceil(math.log2(norm / _EXP_SCALE_TARGET))))
    a = a / (2.0 ** squarings)

    n = a.shape[0]
    eye = np.eye(n)
    result = eye.copy()
    for order in range(_EXP_TAYLOR_ORDER, 0, -1):
        result = eye + (a @ result) / order
    for _ in range(squarings):
        result = result @ result
    return Matrix(result, "dense")


def power_method(m: Matrix, k: int, seed: int) -> SpectralEstimate:
    """Dominant-magnitude estimate from k normalized power iterations.

    The start vector is a deterministic unit vector drawn from ``seed``.
    After k iterations the Rayleigh-quotient magnitude |v.M v / v.v| is
    returned.  A zero operator yields rho_hat=0 with a flag; an iterate-norm
    underflow triggers one restart with seed+1 before erroring out.
    """
    _require_square(m, "power_method")
    if k < 1:
        raise LinalgError("power_method: k must be >= 1")

    if not np.any(m.data):
        return SpectralEstimate(0.0, 0, "power", flagged=True, note="zero operator")

    def run(start_seed: int):
        rng = np.random.default_rng(start_seed)
        v = rng.standard_normal(m.rows)
        v = v / np.linalg.norm(v)
        for _ in range(k):
            w = m.matvec(v)
            norm = np.linalg.norm(w)
            if norm < 1e-300 or not np.isfinite(norm):
                return None
            v = w / norm
        num = float(v @ m.matvec(v))
        den = float(v @ v)
        return abs(num / den)

    estimate = run(seed)
    if estimate is None:
        estimate = run(seed + 1)
        if estimate is None:
            raise LinalgError("power_method: iterate norm underflow after restart")
    return SpectralEstimate(estimate, k, "power")


def _hessenberg(a: np.ndarray) -> np.ndarray:
    """Householder reduction to upper Hessenberg form (similarity)."""
    h = a.copy()
    n = h.shape[0]
    for col in range(n - 2):
        x = h[col + 1:, col]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        if x[0] > 0:
            alpha = -alpha
        v = x.copy()
        v[0] -= alpha
        vn = np.linalg.norm(v)
        if vn == 0.0:
            continue
        v = v / vn
        h[col + 1:, col:] -= 2.0 * np.outer(v, v @ h[col + 1:, col:])
        h[:, col + 1:] -= 2.0 * np.outer(h[:, col + 1:] @ v, v)
    return h


def _eigvals_hessenberg(h: np.ndarray, sweep_budget: int) -> list[complex]:
    """Eigenvalues of a real Hessenberg matrix via Francis double-shift QR.

    Deflates on negligible subdiagonals; trailing 1x1 and 2x2 blocks are
    resolved directly (quadratic formula for the 2x2 case, which also covers
    complex conjugate pairs).
    """
    h = h.copy()
    n = h.shape[0]
    eigs: list[complex] = []
    hi = n - 1
    sweeps = 0
    stagnation = 0
    # absolute deflation floor: subdiagonals this far below the matrix norm
    # cannot move any eigenvalue at the precision we claim
    anorm = float(np.max(np.sum(np.abs(h), axis=1)))
    floor = np.finfo(float).eps * max(anorm, 1e-300)

    def two_by_two(block) -> tuple[complex, complex]:
        tr = block[0, 0] + block[1, 1]
        det = block[0, 0] * block[1, 1] - block[0, 1] * block[1, 0]
        disc = tr * tr - 4.0 * det
        if disc >= 0.0:
            s = math.sqrt(disc)
            return (0.5 * (tr + s), 0.5 * (tr - s))
        s = math.sqrt(-disc)
        return (complex(0.5 * tr, 0.5 * s), complex(0.5 * tr, -0.5 * s))

    while hi >= 0:
        if hi == 0:
            eigs.append(h[0, 0])
            break
        # locate the start of the active irreducible block
        lo = hi
        while lo > 0:
            small = np.finfo(float).eps * (abs(h[lo - 1, lo - 1]) + abs(h[lo, lo]))
            if abs(h[lo, lo - 1]) <= max(small, floor):
                h[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo == hi:
            eigs.append(h[hi, hi])
            hi -= 1
            stagnation = 0
            continue
        if hi - lo == 1:
            eigs.extend(two_by_two(h[lo:hi + 1, lo:hi + 1]))
            hi -= 2
            stagnation = 0
            continue

        if sweeps >= sweep_budget:
            raise LinalgError(
                f"eig_radius_exact: QR did not converge within {sweep_budget} sweeps"
            )
        sweeps += 1
        stagnation += 1

        # Wilkinson-style double shift from the trailing 2x2; exceptional
        # ad-hoc shift when the block is not deflating.
        if stagnation % 16 == 0:
            s = abs(h[hi, hi - 1]) + abs(h[hi - 1, hi - 2])
            trace, det = 2.0 * s, s * s
        else:
            trace = h[hi - 1, hi - 1] + h[hi, hi]
            det = h[hi - 1, hi - 1] * h[hi, hi] - h[hi - 1, hi] * h[hi, hi - 1]

        # implicit first column of (H - s1 I)(H - s2 I), then chase the bulge
        x = h[lo, lo] * h[lo, lo] + h[lo, lo + 1] * h[lo + 1, lo] - trace * h[lo, lo] + det
        y = h[lo + 1, lo] * (h[lo, lo] + h[lo + 1, lo + 1] - trace)
        z = h[lo + 2, lo + 1] * h[lo + 1, lo]
        for k in range(lo, hi):
            size = 3 if k <= hi - 2 else 2
            vec = np.array([x, y, z][:size])
            nrm = np.linalg.norm(vec)
            if nrm > 1e-300:
                alpha = -nrm if vec[0] >= 0.0 else nrm
                v = vec.copy()
                v[0] -= alpha
                vn = np.linalg.norm(v)
                if vn > 1e-300:
                    v = v / vn
                    rows = slice(k, k + size)
                    h[rows, :] -= 2.0 * np.outer(v, v @ h[rows, :])
                    h[:, rows] -= 2.0 * np.outer(h[:, rows] @ v, v)
            if k < hi - 1:
                x = h[k + 1, k]
                y = h[k + 2, k]
                z = h[k + 3, k] if k + 3 <= hi else 0.0
    return eigs


def eig_radius_exact(m: Matrix) -> SpectralEstimate:
    """Exact spectral radius: max |lambda_i|.

    Diagonal operators use the closed form max|entry|; dense operators go
    through shifted QR on the Hessenberg form with a 100*d sweep budget.
    Validation-scale only (dimension <= 64).
    """
    _require_square(m, "eig_radius_exact")
    if m.rows > MAX_EXACT_DIM:
        raise LinalgError(f"eig_radius_exact: dimension {m.rows} exceeds {MAX_EXACT_DIM}")

    if m.kind == "diagonal":
        rho = float(np.max(np.abs(m.data))) if m.data.size else 0.0
        return SpectralEstimate(rho, 0, "diagonal_closed_form")

    n = m.rows
    if n == 0:
        return SpectralEstimate(0.0, 0, "exact_eig")
    if n == 1:
        return SpectralEstimate(abs(float(m.data[0, 0])), 0, "exact_eig")
    h = _hessenberg(m.data)
    eigs = _eigvals_hessenberg(h, sweep_budget=100 * n)
    rho = max(abs(ev) for ev in eigs)
    return SpectralEstimate(float(rho), 0, "exact_eig")


def eigvals(m: Matrix) -> list[complex]:
    """All eigenvalues (same QR path as eig_radius_exact)."""
    _require_square(m, "eigvals")
    if m.rows > MAX_EXACT_DIM:
        raise LinalgError(f"eigvals: dimension {m.rows} exceeds {MAX_EXACT_DIM}")
    if m.kind == "diagonal":
        return [complex(v) for v in m.data]
    n = m.rows
    if n == 0:
        return []
    if n == 1:
        return [complex(m.data[0, 0])]
    return _eigvals_hessenberg(_hessenberg(m.data), sweep_budget=100 * n)


def solve_discrete_lyapunov(abar: Matrix, bbar: Matrix) -> Matrix:
    """Controllability Gramian: the fixed point W = A W A^T + B B^T.

    Solved by the doubling iteration (W <- W + A W A^T, A <- A^2), which
    converges geometrically for rho(A) < 1.  Divergent operators raise
    "Gramian diverges".  The result is symmetrized before returning.
    """
    _require_square(abar, "solve_discrete_lyapunov")
    rho = eig_radius_exact(abar).rho_hat
    if rho >= 1.0:
        raise LinalgError(f"Gramian diverges: rho(Abar) = {rho:.6g} >= 1")

    b = bbar.to_dense() if bbar.kind == "diagonal" else np.asarray(bbar.data, dtype=float)
    if b.ndim == 1:
        b = b[:, None]
    if b.shape[0] != abar.rows:
        raise LinalgError("solve_discrete_lyapunov: B row count must match A")

    a = abar.to_dense()
    w = b @ b.T
    for _ in range(128):
        update = a @ w @ a.T
        w = w + update
        a = a @ a
        if float(np.max(np.abs(update))) <= 1e-18 * max(1.0, float(np.max(np.abs(w)))):
            break
    w = 0.5 * (w + w.T)
    return Matrix(w, "dense")


def _singular_values_via_gram(v: np.ndarray) -> tuple[float, float]:
    """(sigma_max, sigma_min) from eigenvalues of the Gram matrix.

    Complex inputs are handled through the real symmetric embedding
    [[Re, -Im], [Im, Re]] of V^H V, which doubles each eigenvalue's
    multiplicity but preserves the extremes.
    """
    gram = v.conj().T @ v
    if np.iscomplexobj(gram):
        re, im = gram.real, gram.imag
        embedded = np.block([[re, -im], [im, re]])
    else:
        embedded = gram
    embedded = 0.5 * (embedded + embedded.T)
    eigs = eigvals(Matrix(embedded, "dense"))
    vals = sorted(max(ev.real, 0.0) for ev in eigs)
    return math.sqrt(vals[-1]), math.sqrt(vals[0])


def _eigenvector(a: np.ndarray, lam: complex) -> np.ndarray:
    """One eigenvector by shifted inverse iteration."""
    n = a.shape[0]
    dtype = complex if abs(lam.imag) > 0 else float
    shift = lam if dtype is complex else lam.real
    eye = np.eye(n, dtype=dtype)
    work = a.astype(dtype) - shift * eye
    # small diagonal perturbation keeps the solve well posed at the eigenvalue
    jitter = 1e-12 * max(1.0, float(np.max(np.abs(a))))
    rng = np.random.default_rng(7)
    v = rng.standard_normal(n).astype(dtype)
    v /= np.linalg.norm(v)
    for _ in range(4):
        try:
            v = np.linalg.solve(work + jitter * eye, v)
        except np.linalg.LinAlgError:
            jitter *= 1e3
            continue
        v = v / np.linalg.norm(v)
    return v


def condition_number(m: Matrix) -> float:
    """kappa of the eigenvector matrix, ||V|| * ||V^-1||.

    Exactly 1.0 for diagonal and symmetric operators.  General dense
    operators get the numeric kappa of the eigenvector matrix assembled from
    inverse iteration on the QR eigenvalues (approximate).  A numerically
    singular eigenvector matrix (sigma_min < 1e-10 * sigma_max) means the
    operator is defective and raises an error.
    """
    _require_square(m, "condition_number")
    if m.kind == "diagonal":
        return 1.0
    if m.rows > MAX_EXACT_DIM:
        raise LinalgError(f"condition_number: dimension {m.rows} exceeds {MAX_EXACT_DIM}")
    a = m.data
    if np.allclose(a, a.T, rtol=0.0, atol=1e-13 * max(1.0, float(np.max(np.abs(a))))):
        return 1.0

    lams = eigvals(m)
    vectors = []
    used: list[complex] = []
    for lam in lams:
        if any(abs(lam - u) < 1e-10 * max(1.0, abs(lam)) for u in used):
            # repeated eigenvalue: perturb the shift to pick a second direction
            lam = lam + 1e-8
        used.append(lam)
        vectors.append(_eigenvector(a, complex(lam)))
    v = np.column_stack(vectors)
    smax, smin = _singular_values_via_gram(v)
    if smin < 1e-10 * smax:
        raise LinalgError(
            f"condition_number: defective operator (sigma_min/sigma_max = {smin / smax:.3e})"
        )
    return float(smax / smin)
