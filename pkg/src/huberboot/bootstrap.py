"""Multiplier-bootstrap confidence sets for Huber regression.

The set is ``{theta : L_tau(theta) - L_tau(theta_hat) <= z}`` where ``z`` is the upper
alpha-quantile of the bootstrap excess loss ``L^b(theta_hat) - L^b(theta_hat^b)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._parallel import chunks, ordered_map
from .core import Dataset, SolverConfig, fit_huber, fit_huber_batch, fit_ols
from .exceptions import BootstrapFailureError, DomainError, NumericalError, ShapeError
from .rng import substream

WEIGHT_VARIANTS = ("gaussian", "bernoulli", "mix")
FAILURE_BUDGET = 0.01
CHUNK_ROWS = 256


@dataclass(frozen=True)
class WeightScheme:
    """Multiplier weight distribution; every variant has mean 1 and variance 1."""

    variant: str = "gaussian"
    b: float = 0.276
    sigma_u: float = 0.235
    sigma_z_sq: float = 0.038

    @property
    def mix_variance(self) -> float:
        """Variance of the unscaled mixture perturbation ``z + u``."""
        return self.sigma_z_sq + self.b * (1 - self.b) * self.sigma_u**2

    def __post_init__(self):
        if self.variant not in WEIGHT_VARIANTS:
            raise DomainError(f"unknown weight scheme {self.variant!r}; expected one of {WEIGHT_VARIANTS}")


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 2000
    scheme: WeightScheme = field(default_factory=WeightScheme)
    alpha: float = 0.05
    seed: int = 0
    tau: float | None = None

    def __post_init__(self):
        if self.B < 1:
            raise DomainError("B must be >= 1")
        if not 0 < self.alpha < 1:
            raise DomainError("alpha must lie in (0, 1)")
        if self.tau is not None and not self.tau > 0:
            raise DomainError("tau must be positive")


@dataclass
class ConfidenceSet:
    theta_hat: np.ndarray
    tau: float
    threshold: float
    excess_samples: np.ndarray
    alpha: float = 0.05
    loss: str = "huber"
    n_failed: int = 0

    def excess(self, theta, data: Dataset) -> float:
        return excess_loss(data, theta, self.theta_hat, self.tau, self.loss)

    def contains(self, theta, data: Dataset) -> bool:
        return confidence_set_contains(self, theta, data)

    def threshold_at(self, alpha: float) -> float:
        return bootstrap_threshold(self.excess_samples, alpha)


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------


def draw_weights(scheme: WeightScheme, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` multiplier weights ``W_i = 1 + U_i`` with ``E U = 0``, ``var U = 1``."""
    if n < 1:
        raise DomainError("n must be >= 1")
    if scheme.variant == "gaussian":
        return 1.0 + rng.standard_normal(n)
    if scheme.variant == "bernoulli":
        return 2.0 * rng.integers(0, 2, size=n)
    z = rng.normal(0.0, np.sqrt(scheme.sigma_z_sq), size=n)
    u = ((rng.random(n) < scheme.b).astype(float) - scheme.b) * scheme.sigma_u
    # the raw constants give var(z + u) ~ 0.049; rescale so the weights have unit variance
    return 1.0 + (z + u) / np.sqrt(scheme.mix_variance)


def replication_weights(scheme: WeightScheme, n: int, seed: int, rows) -> np.ndarray:
    """Weights for replications ``rows``; row b always comes from substream ``(seed, b)``."""
    return np.vstack([draw_weights(scheme, n, substream(seed, int(b))) for b in rows])


# ---------------------------------------------------------------------------
# Excess loss and thresholds
# ---------------------------------------------------------------------------


def _loss_values(r, tau, loss):
    if loss == "huber":
        a = np.abs(r)
        return np.where(a <= tau, 0.5 * r * r, tau * a - 0.5 * tau * tau)
    if loss == "squared":
        return 0.5 * r * r
    raise DomainError(f"unknown loss {loss!r}")


def excess_loss(data: Dataset, theta, theta_hat, tau: float, loss: str = "huber") -> float:
    """``L(theta) - L(theta_hat)`` for the unweighted loss."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (data.d,):
        raise ShapeError(f"theta must have shape ({data.d},), got {theta.shape}")
    a = _loss_values(data.residuals(theta), tau, loss).sum()
    b = _loss_values(data.residuals(theta_hat), tau, loss).sum()
    return float(a - b)


def bootstrap_threshold(samples, alpha: float) -> float:
    """``inf{z >= 0 : #{s_b > z} / B <= alpha}`` over the empirical bootstrap law.

    Equivalent to the ``ceil((1 - alpha) B)``-th order statistic, clamped at zero.
    """
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    if s.size == 0:
        raise DomainError("no bootstrap samples")
    if not np.all(np.isfinite(s)):
        raise DomainError("bootstrap samples must be finite")
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    B = s.size
    exceed = B - np.searchsorted(s, s, side="right")
    k = int(np.argmax(exceed <= alpha * B * (1 + 1e-12)))
    return float(max(s[k], 0.0))


def confidence_set_contains(cset: ConfidenceSet, theta, data: Dataset) -> bool:
    return cset.excess(theta, data) <= cset.threshold


# ---------------------------------------------------------------------------
# Replications
# ---------------------------------------------------------------------------


def _check_failures(failed: int, B: int):
    if failed > FAILURE_BUDGET * B:
        raise BootstrapFailureError(f"{failed} of {B} bootstrap replications failed (budget {FAILURE_BUDGET:.0%})")


def huber_replications(data: Dataset, theta_hat, tau: float, weights, solver: SolverConfig | None = None, threads=None):
    """Weighted Huber fits, one per row of ``weights``, warm-started at ``theta_hat``.

    Returns ``(excess, thetas)`` with NaN for replications that failed to converge.
    """
    X, y = data.design, data.response
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    solver = solver or SolverConfig(tau=tau)
    theta_hat = np.asarray(theta_hat, dtype=float)

    def run(span):
        lo, hi = span
        fit = fit_huber_batch(X, y, W[lo:hi], tau, theta_hat, solver)
        r0 = y - X @ theta_hat
        base = W[lo:hi] @ _loss_values(r0, tau, "huber")
        exc = base - fit.objective
        th = fit.theta.copy()
        exc[~fit.converged] = np.nan
        th[~fit.converged] = np.nan
        return exc, th

    parts = ordered_map(run, chunks(W.shape[0], CHUNK_ROWS), threads)
    return np.concatenate([p[0] for p in parts]), np.vstack([p[1] for p in parts])


def ols_replications(data: Dataset, theta_hat, weights, threads=None):
    """Closed-form weighted least squares replications for the boot-OLS baseline."""
    X, y = data.design, data.response
    n, d = X.shape
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    XX = (X[:, :, None] * X[:, None, :]).reshape(n, d * d)
    r0 = y - X @ np.asarray(theta_hat, dtype=float)

    def run(span):
        lo, hi = span
        Wc = W[lo:hi]
        A = (Wc @ XX).reshape(-1, d, d)
        b = (Wc * y) @ X
        th = np.full((hi - lo, d), np.nan)
        try:
            th[:] = np.linalg.solve(A, b[..., None])[..., 0]
        except np.linalg.LinAlgError:
            for j in range(hi - lo):
                try:
                    th[j] = np.linalg.solve(A[j], b[j])
                except np.linalg.LinAlgError:
                    pass
        R = y - th @ X.T
        exc = 0.5 * (Wc @ (r0 * r0)) - 0.5 * np.sum(Wc * R * R, axis=1)
        return exc, th

    parts = ordered_map(run, chunks(W.shape[0], CHUNK_ROWS), threads)
    return np.concatenate([p[0] for p in parts]), np.vstack([p[1] for p in parts])


def bootstrap_excess_samples(
    data: Dataset,
    theta_hat,
    config: BootstrapConfig,
    threads=None,
    return_estimates: bool = False,
    weights=None,
):
    """Bootstrap replications: ``L^b(theta_hat) - L^b(theta_hat^b)`` for b = 1..B.

    Non-converged replications are NaN in the output; more than 1% of them raises
    :class:`BootstrapFailureError`.  ``weights`` overrides the seeded draws (B x n).
    """
    if config.tau is None:
        raise DomainError("BootstrapConfig.tau must be set")
    if weights is None:
        weights = replication_weights(config.scheme, data.n, config.seed, range(config.B))
    exc, th = huber_replications(data, theta_hat, config.tau, weights, threads=threads)
    _check_failures(int(np.count_nonzero(~np.isfinite(exc))), exc.size)
    return (exc, th) if return_estimates else exc


def run_ci(data: Dataset, config: BootstrapConfig, threads=None, method: str = "huber") -> ConfidenceSet:
    """Fit, replicate, threshold.  ``method="ols"`` gives the weighted least-squares analogue."""
    weights = replication_weights(config.scheme, data.n, config.seed, range(config.B))
    if method == "huber":
        if config.tau is None:
            raise DomainError("BootstrapConfig.tau must be set for the Huber method")
        fit = fit_huber(data, SolverConfig(tau=config.tau))
        if not fit.converged:
            raise NumericalError("Huber fit on the observed data did not converge")
        theta_hat, tau, loss = fit.theta, config.tau, "huber"
        exc = bootstrap_excess_samples(data, theta_hat, config, threads=threads, weights=weights)
    elif method == "ols":
        theta_hat, tau, loss = fit_ols(data).theta, float("inf"), "squared"
        exc, _ = ols_replications(data, theta_hat, weights, threads=threads)
        _check_failures(int(np.count_nonzero(~np.isfinite(exc))), exc.size)
    else:
        raise DomainError(f"unknown method {method!r}")
    ok = np.isfinite(exc)
    samples = exc[ok]
    return ConfidenceSet(
        theta_hat=theta_hat,
        tau=tau,
        threshold=bootstrap_threshold(samples, config.alpha),
        excess_samples=samples,
        alpha=config.alpha,
        loss=loss,
        n_failed=int(np.count_nonzero(~ok)),
    )
