"""Factor-update rules for the per-mode nonnegative least squares step.

Every rule consumes the same two precomputed matrices: the Hadamard product
of the other factors' Gram matrices S = A^T A (R x R) and the local rows of
the MTTKRP result M (rows of A^T B transposed, I x R), plus the current
local factor rows.  All rules operate on the factor-row layout (I x R), so
the textbook column problem min_{x>=0} ||A x - b|| appears here one row of
H at a time.

A ``ReduceHook`` supplies global reductions for the quantities that need
cross-worker agreement (column norms, stopping-rule norms, max-abs changes).
In sequential runs the default hook is the identity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .tensor_ops import FactorSet

ADMM_INNER_CAP = 5
NESTEROV_INNER_CAP = 20
MU_EPSILON = 1e-16
BPP_BACKUP_TRIES = 3


def local_reduce(value, op: str):
    """Identity reduction for the single-contributor (sequential) case."""
    if op not in ("sum", "min", "max"):
        raise ValueError(f"unknown reduction {op!r}")
    return value


@dataclass
class UpdateInputs:
    """Shared inputs of one factor update: S = A^T A, M rows, current rows."""

    gram: np.ndarray
    mttkrp_rows: np.ndarray
    current: np.ndarray

    def __post_init__(self):
        r = self.gram.shape[0]
        if self.gram.shape != (r, r):
            raise ValueError("gram must be square")
        if self.mttkrp_rows.shape[1] != r or self.current.shape[1] != r:
            raise ValueError("rank mismatch between gram and factor rows")
        if self.mttkrp_rows.shape[0] != self.current.shape[0]:
            raise ValueError("mttkrp_rows and current must have equal row counts")


@dataclass
class UpdaterState:
    """Per-mode persistent state for the stateful updaters.

    ``admm_dual`` is the scaled dual matrix U (zero at the first call);
    ``nesterov_prev`` is this factor's iterate from the previous outer
    iteration, used as the proximal center.  ``last_inner_iters`` reports
    how many inner steps the most recent call used.
    """

    admm_dual: np.ndarray = None
    nesterov_prev: np.ndarray = None
    last_inner_iters: int = 0


class BppCyclingError(RuntimeError):
    def __init__(self, column: int):
        super().__init__(f"block principal pivoting cycled on column {column}")
        self.column = column


def ucp_update(inp: UpdateInputs) -> np.ndarray:
    """Unconstrained solve S H^T = M^T via Cholesky (ridge fallback)."""
    s, m = inp.gram, inp.mttkrp_rows
    try:
        return cho_solve(cho_factor(s), m.T).T
    except LinAlgError:
        ridge = 1e-12 * np.trace(s) / s.shape[0]
        warnings.warn("singular gram in unconstrained update, adding ridge")
        try:
            return cho_solve(cho_factor(s + ridge * np.eye(s.shape[0])), m.T).T
        except LinAlgError:
            return np.linalg.lstsq(s, m.T, rcond=None)[0].T


def mu_update(inp: UpdateInputs, eps: float = MU_EPSILON) -> np.ndarray:
    """Multiplicative update H <- H * M / (H S + eps), elementwise."""
    denom = inp.current @ inp.gram + eps
    return inp.current * inp.mttkrp_rows / denom


def hals_update(inp: UpdateInputs, hook=local_reduce) -> np.ndarray:
    """One Gauss-Seidel sweep over columns, latest values in every step.

    Column r gets the closed-form update [h_r + (m_r - H s_r)/S_rr]_+.
    After each column the global squared norm is obtained through the hook
    (the synchronization point of the row-distributed setting); a column
    that collapses to zero keeps weight zero.  The returned matrix is the
    raw sweep result; rescaling into unit columns happens in the driver's
    normalization step, which reuses these norms' communication pattern.
    """
    s, m = inp.gram, inp.mttkrp_rows
    h = inp.current.copy()
    for r in range(s.shape[0]):
        d = s[r, r]
        if d <= 0.0:
            warnings.warn(f"zero gram diagonal in column {r}, skipping")
            continue
        col = h[:, r] + (m[:, r] - h @ s[:, r]) / d
        np.maximum(col, 0.0, out=col)
        h[:, r] = col
        hook(float(col @ col), "sum")
    return h


def _bpp_single(s: np.ndarray, f: np.ndarray, column: int) -> np.ndarray:
    """Exact NNLS min_{x>=0} 0.5 x^T S x - f^T x by block principal pivoting.

    Full exchange of KKT-violating variables, falling back to the
    largest-index single exchange after BPP_BACKUP_TRIES non-improving
    swaps; hard cap of 5R iterations.
    """
    r = s.shape[0]
    passive = np.zeros(r, dtype=bool)
    x = np.zeros(r)
    y = -f.copy()
    lowest = r + 1
    backup = BPP_BACKUP_TRIES
    for _ in range(5 * r + 1):
        viol = (passive & (x < 0)) | (~passive & (y < 0))
        nviol = int(np.count_nonzero(viol))
        if nviol == 0:
            return x
        if nviol < lowest:
            lowest = nviol
            backup = BPP_BACKUP_TRIES
            passive ^= viol
        elif backup > 0:
            backup -= 1
            passive ^= viol
        else:
            last = np.max(np.nonzero(viol)[0])
            passive[last] = not passive[last]
        x = np.zeros(r)
        y = np.zeros(r)
        if passive.any():
            x[passive] = np.linalg.solve(s[np.ix_(passive, passive)], f[passive])
        if not passive.all():
            y[~passive] = s[~passive][:, passive] @ x[passive] - f[~passive]
    raise BppCyclingError(column)


def bpp_update(inp: UpdateInputs) -> np.ndarray:
    """Exact nonnegative solve, one small pivoting problem per factor row."""
    s, m = inp.gram, inp.mttkrp_rows
    out = np.empty_like(m)
    for i in range(m.shape[0]):
        out[i] = _bpp_single(s, m[i], i)
    return out


def default_admm_rho(gram: np.ndarray) -> float:
    """rho = ||A||_F^2 / R, read off the Gram trace."""
    rho = float(np.trace(gram)) / gram.shape[0]
    return rho if rho > 0.0 else 1.0


def admm_update(
    inp: UpdateInputs,
    state: UpdaterState,
    hook=local_reduce,
    rho: float = None,
    max_steps: int = ADMM_INNER_CAP,
    rtol: float = 1e-4,
) -> np.ndarray:
    """Up to ``max_steps`` rounds of the three-step ADMM splitting.

    Xhat solves the rho-regularized least squares through a Cholesky
    factorization cached for the whole call; X is the nonnegative
    projection of Xhat - U; U accumulates the residual and persists in
    ``state`` across calls.  Stops early when both the primal gap
    ||X - Xhat|| and the step ||X - X_prev|| fall below rtol-scaled
    global norms (five squared norms per step through the hook).
    """
    s, m = inp.gram, inp.mttkrp_rows
    r = s.shape[0]
    if rho is None:
        rho = default_admm_rho(s)
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    chol = cho_factor(s + rho * np.eye(r))
    x = inp.current
    u = state.admm_dual if state.admm_dual is not None else np.zeros_like(x)
    steps = 0
    for _ in range(max_steps):
        xhat = cho_solve(chol, (m + rho * (x + u)).T).T
        xprev = x
        x = np.maximum(xhat - u, 0.0)
        u = u + x - xhat
        steps += 1
        sq = np.array(
            [
                np.sum((x - xhat) ** 2),
                np.sum(x**2),
                np.sum(xhat**2),
                np.sum((x - xprev) ** 2),
                np.sum(u**2),
            ]
        )
        gap, nx, nxhat, step, nu = np.sqrt(hook(sq, "sum"))
        if gap <= rtol * max(nx, nxhat) and rho * step <= rtol * nu * rho:
            break
    state.admm_dual = u
    state.last_inner_iters = steps
    return x


def nesterov_hyperparams(gram: np.ndarray, prox_floor: float = 1e-6):
    """(lam, alpha, beta) from the Gram spectrum.

    lam is the smallest proximal weight making the condition ratio
    q = (mu + lam)/(L + lam) at least ``prox_floor``; alpha = 1/(L + lam);
    beta = (1 - sqrt(q))/(1 + sqrt(q)).
    """
    evals = np.linalg.eigvalsh(gram)
    big = float(evals[-1])
    small = max(float(evals[0]), 0.0)
    if big <= 0.0:
        # zero gram: any positive proximal weight conditions the problem
        lam = 1.0
    elif small / big >= prox_floor:
        lam = 0.0
    else:
        lam = (prox_floor * big - small) / (1.0 - prox_floor)
    q = (small + lam) / (big + lam)
    alpha = 1.0 / (big + lam)
    beta = (1.0 - np.sqrt(q)) / (1.0 + np.sqrt(q))
    return lam, alpha, beta


def _max_abs(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


def nesterov_update(
    inp: UpdateInputs,
    state: UpdaterState,
    hook=local_reduce,
    max_iters: int = NESTEROV_INNER_CAP,
    tol: float = 1e-8,
) -> np.ndarray:
    """Accelerated projected gradient on the proximally regularized problem.

    Gradient at Y is Y S - M + lam (Y - X_*), with X_* the previous outer
    iterate of this factor held in ``state``.  Stops when the global
    max-abs change drops below tol * (1 + global max-abs value), checked
    through the hook, or after ``max_iters`` steps.
    """
    s, m = inp.gram, inp.mttkrp_rows
    lam, alpha, beta = nesterov_hyperparams(s)
    xstar = state.nesterov_prev if state.nesterov_prev is not None else inp.current
    x = inp.current
    y = x
    steps = 0
    for _ in range(max_iters):
        grad = y @ s - m + lam * (y - xstar)
        xn = np.maximum(y - alpha * grad, 0.0)
        steps += 1
        dmax, xmax = hook(np.array([_max_abs(xn - x), _max_abs(xn)]), "max")
        y = xn + beta * (xn - x)
        x = xn
        if dmax <= tol * (1.0 + xmax):
            break
    state.nesterov_prev = x.copy()
    state.last_inner_iters = steps
    return x


def nesterov_outer_accelerate(model_prev, model_cur, iteration: int, error_fn):
    """Extrapolated candidate H_i + s_i (H_i - H_{i-1}), kept only if better.

    s_i = i^(1/N).  The candidate (factors and weights) is clamped at zero
    to stay feasible; it replaces the current model only when error_fn
    reports a strictly lower relative error.
    """
    step = float(iteration) ** (1.0 / model_cur.order)
    factors = [
        np.maximum(hc + step * (hc - hp), 0.0)
        for hp, hc in zip(model_prev.factors, model_cur.factors)
    ]
    lam = np.maximum(model_cur.lam + step * (model_cur.lam - model_prev.lam), 0.0)
    candidate = FactorSet(factors, lam)
    if error_fn(candidate) < error_fn(model_cur):
        return candidate, True
    return model_cur, False
