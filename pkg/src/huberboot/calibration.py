"""Data-driven choice of the robustification parameter.

Censored equations, truncated means, Huber's Proposal 2, the IRLS calibration
loop, Lepski's method, and the median-of-means two-step bootstrap.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, SolverConfig, fit_huber, fit_ols, gradient_scale
from .exceptions import (
    CalibrationError,
    ConfigurationError,
    DegenerateDataError,
    DegenerateDataWarning,
    DomainError,
)


@dataclass(frozen=True)
class CalibrationConfig:
    """Settings for :func:`irls_fit`.  ``t=None`` means ``log n``."""

    t: float | None = None
    moment_order: int = 2
    dof: int | None = None
    tol: float = 1e-8
    max_iter: int = 50

    def __post_init__(self):
        if self.t is not None and not self.t > 0:
            raise DomainError("t must be positive")
        if self.moment_order not in (2, 4):
            raise DomainError("moment_order must be 2 or 4")
        if not self.tol > 0 or self.max_iter < 1:
            raise DomainError("tol must be positive and max_iter >= 1")


@dataclass(frozen=True)
class TauSolution:
    tau: float
    equation_residual: float
    solvable: bool


@dataclass(frozen=True)
class LepskiConfig:
    v_min: float
    v_max: float
    a: float = 2.0
    c0: float = 2.0
    t: float | None = None
    exponent: float = 0.5

    def __post_init__(self):
        if not (0 < self.v_min <= self.v_max):
            raise ConfigurationError("need 0 < v_min <= v_max")
        if not self.a > 1:
            raise ConfigurationError("a must exceed 1")
        if not self.c0 > 0:
            raise ConfigurationError("c0 must be positive")
        if not 0.25 <= self.exponent <= 0.5:
            raise ConfigurationError("exponent must lie in [1/4, 1/2]")


@dataclass
class LepskiResult:
    index: int
    theta: np.ndarray
    tau: float
    v_grid: np.ndarray
    taus: np.ndarray
    estimates: np.ndarray
    fallback: bool = False


@dataclass
class IrlsResult:
    theta: np.ndarray
    tau: float
    iterations: int
    converged: bool
    weight_vector: np.ndarray
    degenerate: bool = False
    tau_history: list = field(default_factory=list, repr=False)


# ---------------------------------------------------------------------------
# Censored equation
# ---------------------------------------------------------------------------


def censored_lhs(values, tau: float, order: int = 2) -> float:
    """``(1/n) sum_i min(|v_i|^order, tau^order) / tau^order``; non-increasing in tau."""
    a = np.abs(np.asarray(values, dtype=float))
    return float(np.mean((np.minimum(a, tau) / tau) ** order))


def _bisect_censored(a, t, order, lo, hi, iters=400):
    # geometric midpoints converge in relative terms whatever the magnitude of the root
    n = a.size
    target = t / n
    for _ in range(iters):
        mid = math.sqrt(lo) * math.sqrt(hi)
        if censored_lhs(a, mid, order) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    return math.sqrt(lo) * math.sqrt(hi)


def solve_censored_equation(values, t: float, order: int = 2, tol: float = 1e-10) -> TauSolution:
    """Unique positive root of ``(1/n) sum min(|v_i|^r, tau^r)/tau^r = t/n``.

    With ``a_(1) <= ... <= a_(n)`` the sorted ``|v_i|^r``, the left side times ``n tau^r``
    is ``S_j + (n - j) tau^r`` on ``[a_(j), a_(j+1)]``, so the root solves
    ``tau^r = S_j / (t - (n - j))`` for the interval that contains it.  Bisection is
    the fallback.  Returns ``solvable=False`` when ``t >= #{v_i != 0}``.
    """
    if order not in (2, 4):
        raise DomainError("order must be 2 or 4")
    v = np.abs(np.asarray(values, dtype=float).ravel())
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise DomainError("values must be a non-empty finite vector")
    if not t > 0:
        raise DomainError("t must be positive")
    n = v.size
    nonzero = int(np.count_nonzero(v))
    if t >= nonzero:
        return TauSolution(tau=float("nan"), equation_residual=float("nan"), solvable=False)

    # work on v / max|v| so that powers neither overflow nor underflow needlessly
    vmax = float(np.max(v))
    v = v / vmax
    a = np.sort(v**order)
    S = np.cumsum(a)
    T = None
    for j in range(n, 0, -1):  # j = number of a's at or below the root
        denom = t - (n - j)
        if denom <= 0:
            break
        cand = S[j - 1] / denom
        upper = a[j] if j < n else np.inf
        if cand > 0 and a[j - 1] <= cand <= upper:
            T = cand
            break
    tau = None if T is None else T ** (1.0 / order)
    target = t / n
    if tau is None or not abs(censored_lhs(v, tau, order) - target) <= tol:
        lo = 0.5 * np.min(v[v > 0])
        hi = (S[-1] * n / t) ** (1.0 / order) * (1 + 1e-12)
        hi = max(hi, 1.0)
        tau = _bisect_censored(v, t, order, lo, hi)
    resid = censored_lhs(v, tau, order) - target
    return TauSolution(tau=float(tau * vmax), equation_residual=float(resid), solvable=bool(abs(resid) <= tol))


def truncated_mean(values, t: float) -> float:
    """Mean of ``sign(v) min(|v|, tau_t)`` with ``tau_t`` from the order-2 censored equation."""
    v = np.asarray(values, dtype=float)
    sol = solve_censored_equation(v, t, order=2)
    if not sol.solvable:
        raise CalibrationError(f"censored equation has no root for t={t} with {np.count_nonzero(v)} nonzero values")
    return float(np.mean(np.clip(v, -sol.tau, sol.tau)))


def huber_proposal2(values, t: float, tol: float = 1e-10, max_iter: int = 200):
    """Jointly solve ``sum psi_tau(x_i - mu) = 0`` and ``(1/n) sum psi_tau^2(x_i - mu)/tau^2 = t/n``.

    Alternates a one-dimensional Huber fit for ``mu`` at fixed ``tau`` with a censored
    equation solve for ``tau`` on the current residuals.  Returns ``(mu, tau, converged)``.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 2:
        raise DomainError("need at least two values")
    if np.ptp(x) == 0:
        raise DegenerateDataError("all values are equal; residuals vanish")
    ones = np.ones((x.size, 1))
    data = Dataset(ones, x)
    mu = float(np.median(x))
    tau = np.nan
    converged = False
    for _ in range(max_iter):
        sol = solve_censored_equation(x - mu, t, order=2)
        if not sol.solvable:
            raise CalibrationError("censored equation became unsolvable during the alternation")
        tau_new = sol.tau
        fit = fit_huber(data, SolverConfig(tau=tau_new, grad_tol=1e-14, max_iter=200), init=np.array([mu]))
        mu_new = float(fit.theta[0])
        step = max(abs(mu_new - mu), abs(tau_new - tau) if np.isfinite(tau) else np.inf)
        mu, tau = mu_new, tau_new
        if step <= tol * (1.0 + abs(mu) + tau):
            converged = True
            break
    # final tau matches the final location exactly
    tau = solve_censored_equation(x - mu, t, order=2).tau
    return mu, tau, converged


# ---------------------------------------------------------------------------
# IRLS with calibration
# ---------------------------------------------------------------------------


def _weighted_ls(X, y, v):
    A = (X * v[:, None]).T @ X
    b = (X * v[:, None]).T @ y
    return np.linalg.solve(A, b)


def irls_fit(data: Dataset, config: CalibrationConfig | None = None) -> IrlsResult:
    """Iteratively reweighted least squares with per-iteration calibration of tau.

    Each iteration solves ``(1/n) sum min(R_i^r, tau^r)/tau^r = (d + t)/n`` on the current
    residuals, sets ``w_i = |R_i|/tau - 1`` outside ``[-tau, tau]`` (0 inside) and refits by
    weighted least squares with weights ``1/(1 + w_i)``.  Starts from OLS; stops when
    ``max|delta theta| <= tol (1 + max|theta|)``.  Near-interpolating data return with
    ``degenerate=True`` instead of raising.
    """
    config = config or CalibrationConfig()
    X, y = data.design, data.response
    n, d = data.n, data.d
    t = math.log(n) if config.t is None else config.t
    dof = d if config.dof is None else config.dof
    rhs = dof + t
    theta = fit_ols(data).theta
    scale = float(np.max(np.abs(y))) + 1.0
    history = []
    tau = float("nan")
    weights = np.ones(n)
    converged = False
    degenerate = False
    it = 0
    for it in range(1, config.max_iter + 1):
        R = y - X @ theta
        if np.max(np.abs(R)) <= 1e-12 * scale:
            degenerate = True
            break
        sol = solve_censored_equation(R, rhs, order=config.moment_order)
        if not sol.solvable:
            degenerate = True
            break
        tau = sol.tau
        history.append(tau)
        absR = np.abs(R)
        weights = np.where(absR > tau, tau / np.maximum(absR, tau), 1.0)
        theta_new = _weighted_ls(X, y, weights)
        delta = np.max(np.abs(theta_new - theta))
        theta = theta_new
        if delta <= config.tol * (1.0 + np.max(np.abs(theta))):
            converged = True
            break
    if not degenerate:
        R = y - X @ theta
        if np.max(np.abs(R)) <= 1e-12 * scale:
            degenerate = True
        else:
            sol = solve_censored_equation(R, rhs, order=config.moment_order)
            if sol.solvable:
                tau = sol.tau
                absR = np.abs(R)
                weights = np.where(absR > tau, tau / np.maximum(absR, tau), 1.0)
            else:
                degenerate = True
    if degenerate:
        converged = False
        tau = 0.0
    return IrlsResult(
        theta=theta,
        tau=float(tau),
        iterations=it,
        converged=converged,
        weight_vector=weights,
        degenerate=degenerate,
        tau_history=history,
    )


# ---------------------------------------------------------------------------
# Lepski's method
# ---------------------------------------------------------------------------


def lepski_grid(v_min: float, v_max: float, a: float) -> np.ndarray:
    """``v_j = v_min a^j`` for all ``j >= 0`` with ``v_min <= v_j < a v_max``."""
    count = int(math.floor(math.log(v_max / v_min) / math.log(a) + 1e-9)) + 1
    grid = v_min * a ** np.arange(count)
    return grid[grid < a * v_max * (1 - 1e-12)]


def lepski_index(estimates, v_grid, c0: float, rate: float) -> int:
    """Smallest j with ``||theta_k - theta_j||_2 <= c0 v_k rate`` for every k > j.

    The largest index always qualifies (vacuously), so the rule never comes up empty.
    """
    est = np.asarray(estimates, dtype=float)
    v = np.asarray(v_grid, dtype=float)
    J = len(v)
    for j in range(J):
        dist = np.linalg.norm(est[j + 1 :] - est[j], axis=1)
        if np.all(dist <= c0 * v[j + 1 :] * rate):
            return j
    return J - 1


def lepski_select(data: Dataset, config: LepskiConfig, solver: SolverConfig | None = None) -> LepskiResult:
    """Adaptive choice among Huber fits at ``tau_j = v_j (n/(d+t))^exponent``."""
    n, d = data.n, data.d
    t = math.log(n) if config.t is None else config.t
    grid = lepski_grid(config.v_min, config.v_max, config.a)
    if grid.size == 0:
        raise ConfigurationError("empty Lepski grid")
    taus = grid * (n / (d + t)) ** config.exponent
    base = solver or SolverConfig(tau=1.0)
    init = fit_ols(data).theta if n >= d else None
    estimates = np.vstack(
        [
            fit_huber(
                data,
                SolverConfig(tau=float(tj), max_iter=base.max_iter, grad_tol=base.grad_tol),
                init=init,
            ).theta
            for tj in taus
        ]
    )
    rate = math.sqrt((d + t) / n)
    j = lepski_index(estimates, grid, config.c0, rate)
    return LepskiResult(
        index=j,
        theta=estimates[j],
        tau=float(taus[j]),
        v_grid=grid,
        taus=taus,
        estimates=estimates,
        fallback=(j == grid.size - 1 and grid.size > 1),
    )


# ---------------------------------------------------------------------------
# Median of means and the two-step procedure
# ---------------------------------------------------------------------------


def mom_fourth_moment(values, m_blocks: int) -> float:
    """Median over ``m_blocks`` consecutive blocks of the within-block central fourth moment.

    Trailing ``n mod m_blocks`` observations are dropped.
    """
    v = np.asarray(values, dtype=float).ravel()
    m = int(m_blocks)
    if m < 1 or m > v.size:
        raise ConfigurationError(f"need 1 <= m_blocks <= n, got m_blocks={m_blocks}, n={v.size}")
    size = v.size // m
    blocks = v[: size * m].reshape(m, size)
    centered = blocks - blocks.mean(axis=1, keepdims=True)
    return float(np.median(np.mean(centered**4, axis=1)))


def mom_blocks(n: int) -> int:
    """Block count ``floor(8 log n + 1)``, capped at n."""
    return min(n, int(math.floor(8 * math.log(n) + 1)))


def two_step_tau(sample1: Dataset, K: int = 6, a: float = 2.0, c0: float = 2.0) -> LepskiResult:
    """Step 1 of the two-step bootstrap: MOM-bounded Lepski selection with exponent 1/4."""
    if K < 1:
        raise ConfigurationError("K must be >= 1")
    n, d = sample1.n, sample1.d
    ups = mom_fourth_moment(sample1.response, mom_blocks(n))
    if not ups > 0:
        raise DegenerateDataError("median-of-means fourth moment of the response is zero")
    v_max = (2.0 * ups) ** 0.25
    v_min = a ** (-K) * v_max
    res = lepski_select(sample1, LepskiConfig(v_min=v_min, v_max=v_max, a=a, c0=c0, t=math.log(n), exponent=0.25))
    r = sample1.residuals(res.theta)
    if np.max(np.abs(r)) <= 1e-12 * (1.0 + np.max(np.abs(sample1.response))):
        raise DegenerateDataError("step-1 pilot fit interpolates the data")
    return res


def two_step_calibrate(
    sample1: Dataset,
    sample2: Dataset,
    K: int = 6,
    a: float = 2.0,
    alpha: float = 0.1,
    B: int = 2000,
    scheme=None,
    seed: int = 0,
    c0: float = 2.0,
    threads: int | None = None,
):
    """Two-step data-driven multiplier bootstrap; returns a ``ConfidenceSet`` built on ``sample2``."""
    from .bootstrap import BootstrapConfig, WeightScheme, run_ci

    if sample1.d != sample2.d:
        raise ConfigurationError("samples must have the same dimension")
    step1 = two_step_tau(sample1, K=K, a=a, c0=c0)
    cfg = BootstrapConfig(B=B, scheme=scheme or WeightScheme(), alpha=alpha, seed=seed, tau=step1.tau)
    return run_ci(sample2, cfg, threads=threads)


# ---------------------------------------------------------------------------
# Plug-in rule
# ---------------------------------------------------------------------------


def simple_tau_rule(data: Dataset, purpose: str = "bootstrap") -> float:
    """OLS-residual plug-in rule.

    ``bootstrap``: ``1.2 (nu4 n / (d + log n))^{1/4}`` with ``nu4 = sum r_i^4 / (n - d)``.
    ``estimation``: ``(sigma2 n / (d + log n))^{1/2}`` with ``sigma2 = sum r_i^2 / (n - d)``.
    Returns 0 with a :class:`DegenerateDataWarning` when the OLS residuals vanish.
    """
    n, d = data.n, data.d
    if n <= d:
        raise DomainError("need n > d")
    r = fit_ols(data).residuals
    denom = d + math.log(n)
    if purpose == "bootstrap":
        nu4 = float(np.sum(r**4) / (n - d))
        tau = 1.2 * (nu4 * n / denom) ** 0.25
    elif purpose == "estimation":
        s2 = float(np.sum(r**2) / (n - d))
        tau = (s2 * n / denom) ** 0.5
    else:
        raise DomainError(f"unknown purpose {purpose!r}")
    if not tau > 1e-12 * (1.0 + np.max(np.abs(data.response))):
        warnings.warn("OLS residuals vanish; tau rule is degenerate", DegenerateDataWarning, stacklevel=2)
        return 0.0
    return tau


def stationarity_gap(data: Dataset, theta, tau: float) -> float:
    """Sup-norm of the Huber gradient at ``(theta, tau)`` divided by the solver scale."""
    from .core import weighted_gradient

    return float(np.max(np.abs(weighted_gradient(data, theta, None, tau))) / gradient_scale(data))
