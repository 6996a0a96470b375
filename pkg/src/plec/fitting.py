"""Design matrices, nonnegative least-squares fitting and accuracy bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .lindblad import SparseModel, anticommutation_matrix, gamma
from .pauli import PauliString

Row = tuple[PauliString, ...]


class RankDeficientError(ValueError):
    """Raised when the fit cannot determine every rate.

    ``direction`` is the generator carrying the largest weight in a null vector
    of the design matrix.
    """

    def __init__(self, message: str, direction: PauliString | None = None, rank: int | None = None):
        super().__init__(message)
        self.direction = direction
        self.rank = rank


class NNLSConvergenceError(RuntimeError):
    def __init__(self, message: str, x: np.ndarray, residual: float):
        super().__init__(message)
        self.x = x
        self.residual = residual


@dataclass(frozen=True)
class DesignMatrix:
    """Commutation matrix between measured Paulis (rows) and generators (cols).

    A row holds one Pauli for a single fidelity or two for a fidelity pair; its
    entries are the summed symplectic products, so pair rows take values in
    ``{0, 1, 2}``.
    """

    rows: tuple[Row, ...]
    cols: tuple[PauliString, ...]
    entries: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


def _as_row(r) -> Row:
    if isinstance(r, PauliString):
        return (r,)
    return tuple(r)


def build_design_matrix(B: Sequence, K: Sequence[PauliString]) -> DesignMatrix:
    """``M(B, K)``; each element of ``B`` is a Pauli or a tuple of Paulis."""
    rows = tuple(_as_row(r) for r in B)
    cols = tuple(K)
    ns = {p.n for r in rows for p in r} | {k.n for k in cols}
    if len(ns) > 1:
        raise ValueError("rows and generators must share the qubit count")
    n = ns.pop() if ns else 0
    width = max((len(r) for r in rows), default=1)
    entries = np.zeros((len(rows), len(cols)), dtype=np.uint8)
    for slot in range(width):
        idx = [i for i, r in enumerate(rows) if len(r) > slot]
        if idx:
            entries[idx] += anticommutation_matrix([rows[i][slot] for i in idx], cols, n)
    return DesignMatrix(rows, cols, entries)


def build_pair_design_matrix(B1: Sequence[PauliString], B2: Sequence[PauliString], K: Sequence[PauliString]) -> DesignMatrix:
    """``M(B1, K) + M(B2, K)`` for fidelity-pair rows."""
    if len(B1) != len(B2):
        raise ValueError("pair lists differ in length")
    return build_design_matrix(list(zip(B1, B2)), K)


# ---------------------------------------------------------------------------
# NNLS


def _solve_ls(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(A)
    d = np.abs(np.diag(r))
    if d.size and d.min() > 1e-12 * max(d.max(), 1.0):
        return solve_triangular(r, q.T @ y)
    return np.linalg.lstsq(A, y, rcond=None)[0]


def nnls(
    M: np.ndarray,
    y: np.ndarray,
    tol: float | None = None,
    max_iter: int | None = None,
    callback: Callable[[np.ndarray], None] | None = None,
) -> np.ndarray:
    """Solve ``min 0.5 ||M x - y||^2`` subject to ``x >= 0``.

    Active-set method of Lawson and Hanson. Unconstrained subproblems on the
    passive set are solved by Householder QR.

    Parameters
    ----------
    M : (m, n) array
    y : (m,) array
    tol : float, optional
        Dual feasibility tolerance; defaults to ``1e-10 * ||M^T y||_inf``.
    max_iter : int, optional
        Cap on outer iterations (default ``max(50, 5 n)``).
    callback : callable, optional
        Called with a copy of the iterate after each outer iteration.

    Returns
    -------
    x : (n,) array
        A KKT point: ``x >= 0``, ``g = M^T (M x - y) >= -tol`` and
        ``|x_j g_j| <= tol``.
    """
    M = np.asarray(M, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if M.ndim != 2 or M.shape[0] != y.size:
        raise ValueError("shape mismatch between M and y")
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input")
    m, n = M.shape
    if tol is None:
        tol = 1e-10 * float(np.max(np.abs(M.T @ y), initial=0.0))
    if max_iter is None:
        max_iter = max(50, 5 * n)
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    blocked = np.zeros(n, dtype=bool)
    w = M.T @ (y - M @ x)
    outer = 0
    while True:
        cand = ~passive & ~blocked & (w > tol)
        if not cand.any():
            break
        if outer >= max_iter:
            res = float(np.linalg.norm(M @ x - y))
            raise NNLSConvergenceError(f"NNLS did not converge in {max_iter} iterations (residual {res:.3e})", x, res)
        outer += 1
        j = int(np.argmax(np.where(cand, w, -np.inf)))
        passive[j] = True
        moved = False
        for _ in range(3 * n + 10):
            idx = np.flatnonzero(passive)
            s = np.zeros(n)
            s[idx] = _solve_ls(M[:, idx], y)
            if np.all(s[idx] > 0):
                x = s
                moved = True
                break
            bad = idx[s[idx] <= 0]
            if not moved and bad.size == 1 and bad[0] == j and x[j] == 0:
                # roundoff made the entering variable useless; skip it this round
                passive[j] = False
                blocked[j] = True
                break
            denom = x[bad] - s[bad]
            alpha = float(np.min(np.where(denom > 0, x[bad] / np.where(denom > 0, denom, 1.0), 1.0)))
            x = x + alpha * (s - x)
            moved = True
            drop = passive & (x <= 1e-15 * max(1.0, float(np.max(np.abs(x), initial=0.0))))
            passive &= ~drop
            x[~passive] = 0.0
        else:
            res = float(np.linalg.norm(M @ x - y))
            raise NNLSConvergenceError("NNLS inner loop did not terminate", x, res)
        if moved:
            blocked[:] = False
        w = M.T @ (y - M @ x)
        if callback is not None:
            callback(x.copy())
    return x


# ---------------------------------------------------------------------------
# rank and conditioning


def rank(M: np.ndarray | Sequence[Sequence]) -> int:
    """Exact rank by fraction-free (Bareiss) elimination."""
    arr = np.asarray(M)
    if arr.size == 0:
        return 0
    if np.issubdtype(arr.dtype, np.integer) or np.all(np.equal(np.mod(arr, 1), 0)):
        A = [[int(v) for v in row] for row in arr.tolist()]
    else:
        A = [[Fraction(v) for v in row] for row in arr.tolist()]
    m, n = len(A), len(A[0])
    r = 0
    prev = 1
    for c in range(n):
        p = next((i for i in range(r, m) if A[i][c] != 0), None)
        if p is None:
            continue
        A[r], A[p] = A[p], A[r]
        piv = A[r][c]
        for i in range(r + 1, m):
            a_ic = A[i][c]
            row_i = A[i]
            row_r = A[r]
            for j in range(c + 1, n):
                v = row_i[j] * piv - a_ic * row_r[j]
                row_i[j] = v // prev if isinstance(v, int) else v / prev
            row_i[c] = 0
        prev = piv
        r += 1
        if r == m:
            break
    return r


def sigma_min(M: np.ndarray) -> float:
    """Square root of the smallest eigenvalue of ``M^T M``."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        raise ValueError("empty matrix")
    if M.shape[0] < M.shape[1]:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False).min())


def null_direction(M: np.ndarray, cols: Sequence[PauliString]) -> PauliString:
    """Generator with the largest weight in the least-determined direction."""
    M = np.asarray(M, dtype=float)
    zero_cols = np.flatnonzero(~M.any(axis=0))
    if zero_cols.size:
        return cols[int(zero_cols[0])]
    _, _, vt = np.linalg.svd(M, full_matrices=True)
    v = vt[-1]
    return cols[int(np.argmax(np.abs(v)))]


# ---------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class FidelityObservation:
    """An estimated fidelity (one Pauli) or fidelity product (two Paulis)."""

    paulis: tuple[PauliString, ...]
    value: float
    stderr: float = 0.0
    source: str = "decay"
    replicates: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "paulis", _as_row(self.paulis))
        if len(self.paulis) not in (1, 2):
            raise ValueError("an observation involves one or two Paulis")
        if not (math.isfinite(self.value) and self.value > 0):
            raise ValueError(f"fidelity value must be positive, got {self.value}")
        if self.stderr < 0:
            raise ValueError("stderr must be nonnegative")

    @property
    def kind(self) -> str:
        return "single" if len(self.paulis) == 1 else "pair"

    @property
    def labels(self) -> list[str]:
        return [p.label for p in self.paulis]


@dataclass
class FitReport:
    rows: list[dict]
    lambdas: dict[str, float]
    gamma: float
    rank: int
    sigma_min: float
    residual_norm: float
    lambda_stderr: dict[str, float] | None = None

    def to_dict(self) -> dict:
        d = {
            "rows": self.rows,
            "lambdas": self.lambdas,
            "gamma": self.gamma,
            "rank": self.rank,
            "sigma_min": self.sigma_min,
            "residual_norm": self.residual_norm,
        }
        if self.lambda_stderr is not None:
            d["lambda_stderr"] = self.lambda_stderr
        return d


def _fit_system(observations: Sequence[FidelityObservation], K: Sequence[PauliString], weighted: bool):
    dm = build_design_matrix([o.paulis for o in observations], K)
    M = dm.entries.astype(float)
    y = np.array([-math.log(o.value) / 2.0 for o in observations])
    if weighted:
        sig = np.array([o.stderr / (2.0 * o.value) for o in observations])
        if np.any(sig <= 0):
            raise ValueError("weighted fit needs positive stderr on every observation")
        M = M / sig[:, None]
        y = y / sig
    return dm, M, y


def fit_from_fidelities(
    observations: Sequence[FidelityObservation],
    K: Sequence[PauliString],
    weighted: bool = False,
    tol: float | None = None,
) -> tuple[SparseModel, FitReport]:
    """Fit nonnegative rates to ``-log(f) / 2 = M lambda``.

    Raises :class:`RankDeficientError` if ``M`` lacks full column rank.
    """
    if not observations:
        raise ValueError("no observations")
    K = list(K)
    n = K[0].n if K else observations[0].paulis[0].n
    dm, M, y = _fit_system(observations, K, weighted)
    r = rank(dm.entries)
    if r < len(K):
        d = null_direction(dm.entries, K)
        raise RankDeficientError(
            f"design matrix has rank {r} < {len(K)} generators; {d.label} is not determined by the data",
            direction=d,
            rank=r,
        )
    lam = nnls(M, y, tol=tol)
    model = SparseModel(K, lam, n=n)
    rows = []
    lam_vec = lam
    pred = np.exp(-2.0 * (dm.entries.astype(float) @ lam_vec))
    for o, p in zip(observations, pred):
        rows.append(
            {
                "paulis": o.labels,
                "kind": o.kind,
                "source": o.source,
                "measured": float(o.value),
                "stderr": float(o.stderr),
                "model": float(p),
                "residual": float(o.value - p),
            }
        )
    raw_M = dm.entries.astype(float)
    raw_y = np.array([-math.log(o.value) / 2.0 for o in observations])
    report = FitReport(
        rows=rows,
        lambdas=model.terms(),
        gamma=gamma(model),
        rank=r,
        sigma_min=sigma_min(raw_M),
        residual_norm=float(np.linalg.norm(raw_M @ lam_vec - raw_y)),
    )
    return model, report


def fit_replicates(
    observations: Sequence[FidelityObservation],
    K: Sequence[PauliString],
    weighted: bool = False,
) -> np.ndarray:
    """Refit on every bootstrap replicate; returns ``(R, |K|)`` rates in model order.

    Observations without replicates keep their point value.
    """
    reps = [o.replicates for o in observations if o.replicates is not None]
    if not reps:
        raise ValueError("no bootstrap replicates attached")
    R = min(len(r) for r in reps)
    _, M, _ = _fit_system(observations, K, weighted)
    scale_rows = np.ones(len(observations))
    if weighted:
        scale_rows = np.array([2.0 * o.value / o.stderr for o in observations])
    order = sorted(range(len(K)), key=lambda i: K[i].sort_key())
    out = np.full((R, len(K)), np.nan)
    for r in range(R):
        vals = np.array(
            [o.replicates[r] if o.replicates is not None else o.value for o in observations], dtype=float
        )
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            continue
        y = -np.log(vals) / 2.0 * scale_rows
        out[r] = nnls(M, y)[order]
    return out


# ---------------------------------------------------------------------------
# bounds


def c_epsilon(epsilon: float) -> float:
    if not 0 <= epsilon < 0.25:
        raise ValueError("bound requires 0 <= epsilon < 1/4")
    return (1 + 4 * epsilon) / (1 - 4 * epsilon)


def bound_constants(epsilon: float, B_size: int, K_size: int, sigma_min: float, k: int) -> tuple[float, float, float]:
    """Return ``(C_eps, tau, lambda_err)`` for the fidelity and rate bounds."""
    C = c_epsilon(epsilon)
    if k < 1:
        raise ValueError("depth must be at least 1")
    if sigma_min <= 0:
        raise ValueError("sigma_min must be positive")
    tau = math.sqrt(K_size * B_size) / (sigma_min * k)
    lam_err = math.log(C) * math.sqrt(B_size) / (2 * sigma_min * k)
    return C, tau, lam_err


def sample_complexity(epsilon: float, delta_prime: float, B_size: int) -> int:
    """Smallest ``N`` with ``N >= 2 log(2 |B| / delta') / epsilon^2``."""
    if not (0 < epsilon < 1 and 0 < delta_prime < 1):
        raise ValueError("epsilon and delta' must lie in (0, 1)")
    return math.ceil(2 * math.log(2 * B_size / delta_prime) / epsilon**2 - 1e-9)


def hoeffding_epsilon(N: int, delta: float, B_size: int) -> float:
    """Accuracy reached with ``N`` samples at confidence ``1 - delta`` over ``|B|`` estimates."""
    return math.sqrt(2 * math.log(2 * B_size / delta) / N)
