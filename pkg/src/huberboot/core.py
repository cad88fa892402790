"""Huber-type losses and the damped semismooth Newton solver for (weighted) Huber regression.

The solver works on a *batch* of problems that share one design matrix but may differ
in response, multiplier weights and robustification parameter.  A single fit is a batch
of size one, so the bootstrap and multiple-testing engines run exactly the same
iteration as :func:`fit_huber`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .exceptions import DomainError, ShapeError, SingularSystemError

_EPS = np.finfo(float).eps
_SQRT2 = np.sqrt(2.0)
_CATONI_SLOPE = 2.0 * _SQRT2 / 3.0


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Design matrix (n x d) and response vector (n)."""

    design: np.ndarray
    response: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.design, dtype=float)
        y = np.asarray(self.response, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or y.ndim != 1:
            raise ShapeError(f"design must be 2-d and response 1-d, got {X.shape} and {y.shape}")
        if X.shape[0] != y.shape[0]:
            raise ShapeError(f"design has {X.shape[0]} rows but response has length {y.shape[0]}")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ShapeError("need n >= 1 and d >= 1")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DomainError("dataset contains non-finite entries")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "response", y)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def d(self) -> int:
        return self.design.shape[1]

    def residuals(self, theta) -> np.ndarray:
        return self.response - self.design @ np.asarray(theta, dtype=float)


@dataclass(frozen=True)
class SolverConfig:
    """Tuning of the damped semismooth Newton iteration.

    ``grad_tol`` is relative: a fit is converged once
    ``max|g(theta)| <= grad_tol * (1 + max|X^T |Y||)``.
    """

    tau: float
    max_iter: int = 100
    grad_tol: float = 1e-8
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    min_step: float = 1e-12

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise DomainError(f"tau must be positive and finite, got {self.tau}")
        if self.max_iter < 1:
            raise DomainError("max_iter must be >= 1")
        if not self.grad_tol > 0:
            raise DomainError("grad_tol must be positive")
        if not 0 < self.armijo_c < 1:
            raise DomainError("armijo_c must lie in (0, 1)")
        if not 0 < self.backtrack_factor < 1:
            raise DomainError("backtrack_factor must lie in (0, 1)")
        if not self.min_step > 0:
            raise DomainError("min_step must be positive")


@dataclass
class FitResult:
    theta: np.ndarray
    residuals: np.ndarray
    iterations: int
    converged: bool
    grad_norm: float
    objective: float
    trace: np.ndarray | None = field(default=None, repr=False)


@dataclass
class BatchFit:
    """Solutions of a batch of weighted problems sharing one design."""

    theta: np.ndarray  # (p, d)
    iterations: np.ndarray
    converged: np.ndarray
    grad_norm: np.ndarray
    objective: np.ndarray


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _check_loss_args(u, tau):
    u = np.asarray(u, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if not np.all(np.isfinite(u)):
        raise DomainError("loss argument must be finite")
    if not np.all(tau > 0) or not np.all(np.isfinite(tau)):
        raise DomainError("tau must be positive and finite")
    return u, tau


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def _huber_rho(u, tau):
    a = np.abs(u)
    return np.where(a <= tau, 0.5 * u * u, tau * a - 0.5 * tau * tau)


def _huber_psi(u, tau):
    return np.clip(u, -tau, tau)


def _huber_curv(u, tau):
    return (np.abs(u) <= tau).astype(float)


def _catoni_rho(u, tau):
    a = np.abs(u)
    inner = 0.5 * u * u - u**4 / (24.0 * tau * tau)
    outer = _CATONI_SLOPE * tau * a - 0.5 * tau * tau
    return np.where(a <= _SQRT2 * tau, inner, outer)


def _catoni_psi(u, tau):
    a = np.abs(u)
    return np.where(a <= _SQRT2 * tau, u - u**3 / (6.0 * tau * tau), _CATONI_SLOPE * tau * np.sign(u))


def _catoni_curv(u, tau):
    return np.where(np.abs(u) <= _SQRT2 * tau, 1.0 - u * u / (2.0 * tau * tau), 0.0)


_KERNELS = {
    "huber": (_huber_rho, _huber_psi, _huber_curv),
    "catoni": (_catoni_rho, _catoni_psi, _catoni_curv),
}


def huber_loss(u, tau):
    """Huber loss: ``u^2/2`` for ``|u| <= tau``, else ``tau|u| - tau^2/2``."""
    u, tau = _check_loss_args(u, tau)
    return _scalar(_huber_rho(u, tau))


def huber_score(u, tau):
    """Derivative of :func:`huber_loss`, ``sign(u) * min(|u|, tau)``."""
    u, tau = _check_loss_args(u, tau)
    return _scalar(_huber_psi(u, tau))


def catoni_loss(u, tau):
    """Twice-differentiable alternative to the Huber loss with slope bounded by ``2*sqrt(2)/3 * tau``."""
    u, tau = _check_loss_args(u, tau)
    return _scalar(_catoni_rho(u, tau))


def catoni_score(u, tau):
    u, tau = _check_loss_args(u, tau)
    return _scalar(_catoni_psi(u, tau))


def catoni_curvature(u, tau):
    u, tau = _check_loss_args(u, tau)
    return _scalar(_catoni_curv(u, tau))


# ---------------------------------------------------------------------------
# Weighted objective, gradient and generalized Hessian
# ---------------------------------------------------------------------------


def _prepare(data: Dataset, theta, weights):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (data.d,):
        raise ShapeError(f"theta must have shape ({data.d},), got {theta.shape}")
    if weights is None:
        w = np.ones(data.n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (data.n,):
            raise ShapeError(f"weights must have shape ({data.n},), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise DomainError("weights must be finite")
    return theta, w


def _check_tau(tau):
    if not (np.isfinite(tau) and tau > 0):
        raise DomainError(f"tau must be positive and finite, got {tau}")
    return float(tau)


def weighted_objective(data: Dataset, theta, weights=None, tau: float = 1.0, loss: str = "huber") -> float:
    """``sum_i W_i * loss_tau(Y_i - X_i^T theta)``; unit weights give the plain Huber objective."""
    theta, w = _prepare(data, theta, weights)
    tau = _check_tau(tau)
    rho = _KERNELS[loss][0]
    return float(np.sum(w * rho(data.residuals(theta), tau)))


def weighted_gradient(data: Dataset, theta, weights=None, tau: float = 1.0, loss: str = "huber") -> np.ndarray:
    """Gradient of :func:`weighted_objective` with respect to ``theta``."""
    theta, w = _prepare(data, theta, weights)
    tau = _check_tau(tau)
    psi = _KERNELS[loss][1]
    return -(w * psi(data.residuals(theta), tau)) @ data.design


def generalized_hessian(data: Dataset, theta, weights=None, tau: float = 1.0, loss: str = "huber") -> np.ndarray:
    """Active-set Hessian ``sum_i W_i I(|r_i| <= tau) X_i X_i^T`` (exact Hessian for the Catoni loss)."""
    theta, w = _prepare(data, theta, weights)
    tau = _check_tau(tau)
    curv = _KERNELS[loss][2]
    c = w * curv(data.residuals(theta), tau)
    X = data.design
    H = (X * c[:, None]).T @ X
    return 0.5 * (H + H.T)


# ---------------------------------------------------------------------------
# Least squares
# ---------------------------------------------------------------------------


def _normal_equations(X, y, w=None):
    Xw = X if w is None else X * w[:, None]
    A = Xw.T @ X
    b = Xw.T @ y
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularSystemError("design matrix is rank deficient")
    try:
        c = sla.cho_factor(A, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise SingularSystemError("normal equations are not positive definite") from exc
    return sla.cho_solve(c, b, check_finite=False)


def fit_ols(data: Dataset) -> FitResult:
    """Ordinary least squares via a Cholesky solve of the normal equations."""
    theta = _normal_equations(data.design, data.response)
    r = data.residuals(theta)
    g = -(r @ data.design)
    return FitResult(
        theta=theta,
        residuals=r,
        iterations=0,
        converged=True,
        grad_norm=float(np.max(np.abs(g))),
        objective=float(0.5 * r @ r),
    )


def default_init(data: Dataset) -> np.ndarray:
    """OLS start; median for a rank-deficient intercept-only design, else min-norm LS."""
    try:
        return _normal_equations(data.design, data.response)
    except SingularSystemError:
        X = data.design
        if data.d == 1 and np.ptp(X[:, 0]) == 0 and X[0, 0] != 0:
            return np.array([np.median(data.response) / X[0, 0]])
        return np.linalg.lstsq(X, data.response, rcond=None)[0]


# ---------------------------------------------------------------------------
# Damped semismooth Newton (batched)
# ---------------------------------------------------------------------------


def _newton_directions(H, g):
    """Return ``-H^{-1} g`` row-wise, NaN where H fails the positive-definiteness test."""
    p, d, _ = H.shape
    out = np.full((p, d), np.nan)
    ok = np.zeros(p, dtype=bool)
    try:
        L = np.linalg.cholesky(H)
        ok[:] = True
    except np.linalg.LinAlgError:
        L = np.zeros_like(H)
        for j in range(p):
            try:
                L[j] = np.linalg.cholesky(H[j])
                ok[j] = True
            except np.linalg.LinAlgError:
                pass
    diagH = np.einsum("pii->pi", H)
    diagL = np.einsum("pii->pi", L)
    # reject numerically rank-deficient factors whose tiny pivots would produce huge steps
    ok &= np.min(diagL, axis=1) ** 2 > 1e-12 * np.max(np.abs(diagH), axis=1)
    if ok.any():
        out[ok] = -np.linalg.solve(H[ok], g[ok][..., None])[..., 0]
    return out


def fit_huber_batch(
    design,
    responses,
    weights=None,
    taus=1.0,
    init=None,
    config: SolverConfig | None = None,
    loss: str = "huber",
    keep_trace: bool = False,
):
    """Solve ``p`` weighted problems ``min_theta sum_i W_ki rho_tau_k(y_ki - X_i^T theta)``.

    Parameters
    ----------
    design : (n, d) array shared by all problems.
    responses : (n,) or (p, n) array.
    weights : None, (n,) or (p, n) array of multiplier weights.
    taus : scalar or (p,) array of robustification parameters.
    init : (d,) or (p, d) starting points.
    config : solver settings; ``config.tau`` is ignored in favour of ``taus``.

    Each problem iterates independently: a Newton step when the generalized Hessian
    admits a Cholesky factorization, a gradient step otherwise, both with Armijo
    backtracking.  Returns a :class:`BatchFit` (and the objective trace of every
    accepted iterate when ``keep_trace``).
    """
    if config is None:
        config = SolverConfig(tau=1.0)
    rho, psi, curv = _KERNELS[loss]
    X = np.asarray(design, dtype=float)
    n, d = X.shape
    Y = np.asarray(responses, dtype=float)
    shapes = [np.shape(Y)[:-1] if np.ndim(Y) == 2 else ()]
    if weights is not None and np.ndim(weights) == 2:
        shapes.append(np.shape(weights)[:-1])
    if np.ndim(taus) == 1:
        shapes.append(np.shape(taus))
    if init is not None and np.ndim(init) == 2:
        shapes.append(np.shape(init)[:-1])
    p = max((s[0] for s in shapes if s), default=1)
    Y = np.broadcast_to(Y, (p, n))
    W = np.ones((p, n)) if weights is None else np.broadcast_to(np.asarray(weights, dtype=float), (p, n))
    tau = np.broadcast_to(np.asarray(taus, dtype=float), (p,))[:, None]
    if not np.all(tau > 0):
        raise DomainError("all taus must be positive")
    if init is None:
        theta = np.vstack([default_init(Dataset(X, Y[k])) for k in range(p)])
    else:
        theta = np.array(np.broadcast_to(np.asarray(init, dtype=float), (p, d)))

    XX = (X[:, :, None] * X[:, None, :]).reshape(n, d * d)
    tol = config.grad_tol * (1.0 + np.max(np.abs(np.abs(Y) @ X), axis=1))
    c_arm, beta, min_step = config.armijo_c, config.backtrack_factor, config.min_step

    R = Y - theta @ X.T
    WR = W * rho(R, tau)
    f = WR.sum(axis=1)
    slack = 64 * _EPS * (np.abs(WR).sum(axis=1) + 1.0)
    g = -(W * psi(R, tau)) @ X
    gnorm = np.max(np.abs(g), axis=1)
    iters = np.zeros(p, dtype=int)
    stalled = np.zeros(p, dtype=bool)
    trace = [f.copy()] if keep_trace else None

    for _ in range(config.max_iter):
        act = np.flatnonzero((gnorm > tol) & ~stalled)
        if act.size == 0:
            break
        Ra, Wa, ta, ga = R[act], W[act], tau[act], g[act]
        H = ((Wa * curv(Ra, ta)) @ XX).reshape(-1, d, d)
        step = _newton_directions(H, ga)
        slope = np.einsum("pj,pj->p", ga, step)
        grad_branch = ~np.isfinite(slope) | (slope >= 0)
        step[grad_branch] = -ga[grad_branch]
        slope[grad_branch] = -np.einsum("pj,pj->p", ga[grad_branch], ga[grad_branch])

        eta = np.ones(act.size)
        pending = np.arange(act.size)
        while pending.size:
            rows = act[pending]
            cand = theta[rows] + eta[pending, None] * step[pending]
            Rc = Y[rows] - cand @ X.T
            WRc = W[rows] * rho(Rc, tau[rows])
            fc = WRc.sum(axis=1)
            ok = fc <= f[rows] + c_arm * eta[pending] * slope[pending] + slack[rows]
            if ok.any():
                acc = rows[ok]
                theta[acc] = cand[ok]
                R[acc] = Rc[ok]
                f[acc] = fc[ok]
                slack[acc] = 64 * _EPS * (np.abs(WRc[ok]).sum(axis=1) + 1.0)
                iters[acc] += 1
            pending = pending[~ok]
            eta[pending] *= beta
            tiny = eta[pending] < min_step
            stalled[act[pending[tiny]]] = True
            pending = pending[~tiny]
        moved = act[~stalled[act]]
        if moved.size:
            g[moved] = -(W[moved] * psi(R[moved], tau[moved])) @ X
            gnorm[moved] = np.max(np.abs(g[moved]), axis=1)
        if keep_trace:
            trace.append(f.copy())

    fit = BatchFit(theta=theta, iterations=iters, converged=gnorm <= tol, grad_norm=gnorm, objective=f)
    if keep_trace:
        return fit, np.array(trace)
    return fit


def fit_huber(
    data: Dataset,
    config: SolverConfig,
    weights=None,
    init=None,
    loss: str = "huber",
    radius: float | None = None,
    center=None,
) -> FitResult:
    """Minimize the (weighted) Huber objective by damped semismooth Newton.

    A run that exhausts ``max_iter`` or whose line search stalls is reported with
    ``converged=False`` rather than raised.  ``radius``/``center`` apply an optional
    post-hoc projection onto the ball ``||theta - center||_2 <= radius`` (off by default).
    """
    if init is None:
        init = default_init(data)
    init = np.asarray(init, dtype=float)
    if init.shape != (data.d,):
        raise ShapeError(f"init must have shape ({data.d},), got {init.shape}")
    if weights is not None:
        _prepare(data, init, weights)
    fit, trace = fit_huber_batch(
        data.design, data.response, weights, config.tau, init, config, loss=loss, keep_trace=True
    )
    theta = fit.theta[0]
    converged = bool(fit.converged[0])
    if radius is not None:
        c = default_init(data) if center is None else np.asarray(center, dtype=float)
        dist = np.linalg.norm(theta - c)
        if dist > radius:
            theta = c + (theta - c) * (radius / dist)
            converged = False
    r = data.residuals(theta)
    w = np.ones(data.n) if weights is None else np.asarray(weights, dtype=float)
    rho, psi, _ = _KERNELS[loss]
    g = -(w * psi(r, config.tau)) @ data.design
    return FitResult(
        theta=theta,
        residuals=r,
        iterations=int(fit.iterations[0]),
        converged=converged,
        grad_norm=float(np.max(np.abs(g))),
        objective=float(np.sum(w * rho(r, config.tau))),
        trace=trace[:, 0],
    )


def fit_catoni(data: Dataset, config: SolverConfig, weights=None, init=None) -> FitResult:
    """Minimize the Catoni-type loss; its Hessian is exact, so this is plain damped Newton."""
    return fit_huber(data, config, weights=weights, init=init, loss="catoni")


def gradient_scale(data: Dataset) -> float:
    """``1 + max|X^T |Y||``, the unit-free scale used by the stationarity test."""
    return float(1.0 + np.max(np.abs(np.abs(data.response) @ data.design)))
