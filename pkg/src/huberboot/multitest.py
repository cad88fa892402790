"""Simultaneous intercept tests with bootstrap p-values and BH/Storey thresholding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import chunks, ordered_map
from .bootstrap import FAILURE_BUDGET, WeightScheme, draw_weights
from .core import SolverConfig, fit_huber_batch
from .exceptions import BootstrapFailureError, DomainError, NumericalError, ShapeError
from .rng import substream

ROWS_PER_CHUNK = 4096


@dataclass(frozen=True)
class PanelData:
    """Responses ``y`` (n x m) and shared covariates ``x`` (n x s, no intercept column)."""

    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim != 2 or x.ndim != 2 or y.shape[0] != x.shape[0]:
            raise ShapeError(f"incompatible panel shapes y={y.shape}, x={x.shape}")
        if y.shape[0] < x.shape[1] + 2:
            raise ShapeError("need n >= s + 2")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise DomainError("panel contains non-finite entries")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def m(self) -> int:
        return self.y.shape[1]

    @property
    def s(self) -> int:
        return self.x.shape[1]

    @property
    def design(self) -> np.ndarray:
        return np.column_stack([np.ones(self.n), self.x])


@dataclass(frozen=True)
class MTestConfig:
    """``tau_rule`` is ``"theorem41"``, ``"simple"`` or a length-m array of fixed taus."""

    B: int = 2000
    alpha: float = 0.1
    scheme: WeightScheme = field(default_factory=WeightScheme)
    seed: int = 0
    tau_rule: object = "theorem41"
    inflate: bool = False

    def __post_init__(self):
        if self.B < 1:
            raise DomainError("B must be >= 1")
        if not 0 < self.alpha < 1:
            raise DomainError("alpha must lie in (0, 1)")
        if isinstance(self.tau_rule, str) and self.tau_rule not in ("theorem41", "simple"):
            raise DomainError(f"unknown tau rule {self.tau_rule!r}")


@dataclass
class MTestResult:
    mu_hat: np.ndarray
    p_values: np.ndarray
    rejected: np.ndarray
    k_threshold: int
    taus: np.ndarray = field(repr=False, default=None)
    beta_hat: np.ndarray = field(repr=False, default=None)
    fdp: float | None = None
    power: float | None = None


# ---------------------------------------------------------------------------
# Robustification parameters
# ---------------------------------------------------------------------------


def tau_rule_theorem41(n: int, m: int, s: int, v) -> np.ndarray:
    """``tau_k = v_k (n / (s + 2 log(n m)))^{1/3}``."""
    v = np.asarray(v, dtype=float)
    if n < 1 or m < 1 or s < 0:
        raise DomainError("need n, m >= 1 and s >= 0")
    if not np.all(v > 0):
        raise DomainError("v_k must be positive")
    return v * (n / (s + 2.0 * math.log(n * m))) ** (1.0 / 3.0)


def _ols_all(panel: PanelData):
    X = panel.design
    coef = np.linalg.solve(X.T @ X, X.T @ panel.y)  # (d, m)
    resid = panel.y - X @ coef
    return coef.T, resid


def residual_fourth_root(panel: PanelData, inflate: bool = False) -> np.ndarray:
    """Per-column ``(sum r^4 / (n - s - 1))^{1/4}`` of OLS residuals, optionally times 1.2."""
    _, resid = _ols_all(panel)
    nu4 = np.sum(resid**4, axis=0) / (panel.n - panel.s - 1)
    v = nu4**0.25
    return 1.2 * v if inflate else v


def resolve_taus(panel: PanelData, config: MTestConfig) -> np.ndarray:
    rule = config.tau_rule
    if isinstance(rule, str):
        if rule == "theorem41":
            v = residual_fourth_root(panel, config.inflate)
            taus = tau_rule_theorem41(panel.n, panel.m, panel.s, v)
        else:
            _, resid = _ols_all(panel)
            d = panel.s + 1
            nu4 = np.sum(resid**4, axis=0) / (panel.n - d)
            taus = 1.2 * (nu4 * panel.n / (d + math.log(panel.n))) ** 0.25
    else:
        taus = np.asarray(rule, dtype=float)
        if taus.shape != (panel.m,):
            raise ShapeError(f"fixed taus must have shape ({panel.m},)")
    if not np.all(taus > 0):
        raise NumericalError("a column has vanishing residuals; tau would be zero")
    return taus


# ---------------------------------------------------------------------------
# Fits and bootstrap p-values
# ---------------------------------------------------------------------------


def fit_all(panel: PanelData, taus, solver: SolverConfig | None = None):
    """Huber fit of every column on ``[1, x]``; returns ``(mu_hat, beta_hat)``."""
    taus = np.asarray(taus, dtype=float)
    if taus.shape != (panel.m,):
        raise ShapeError(f"taus must have shape ({panel.m},)")
    init, _ = _ols_all(panel)
    fit = fit_huber_batch(panel.design, panel.y.T, None, taus, init, solver or SolverConfig(tau=1.0))
    if not np.all(fit.converged):
        bad = np.flatnonzero(~fit.converged).tolist()
        raise NumericalError(f"Huber fit failed to converge for columns {bad}")
    return fit.theta[:, 0].copy(), fit.theta[:, 1:].copy()


def column_weights(scheme: WeightScheme, n: int, B: int, seed: int, k: int) -> np.ndarray:
    """B x n weights for column k, drawn from substream ``(seed, k)`` in replication order."""
    return draw_weights(scheme, B * n, substream(seed, k)).reshape(B, n)


def bootstrap_pvalue_counts(exceed: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """``sum_b I(...) / (B_ok + 1)`` per column."""
    return exceed.sum(axis=1) / (valid.sum(axis=1) + 1.0)


def bootstrap_pvalues(
    panel: PanelData, mu_hat, beta_hat, taus, config: MTestConfig, threads=None, keys=None
) -> np.ndarray:
    """``p_k = (1/(B+1)) sum_b I(|mu^b_kb - mu_k| >= |mu_k|)`` from weighted refits.

    Column ``k`` draws its weights from the stream keyed by ``keys[k]`` (default ``k``),
    so carrying the keys along with a column permutation permutes the p-values.
    """
    X = panel.design
    n, m, B = panel.n, panel.m, config.B
    theta_hat = np.column_stack([mu_hat, beta_hat])
    taus = np.asarray(taus, dtype=float)
    per_chunk = max(1, ROWS_PER_CHUNK // B)
    solver = SolverConfig(tau=1.0)
    keys = np.arange(m) if keys is None else np.asarray(keys, dtype=np.int64)
    if keys.shape != (m,):
        raise ShapeError(f"keys must have length {m}")

    def run(span):
        lo, hi = span
        W = np.vstack([column_weights(config.scheme, n, B, config.seed, int(keys[k])) for k in range(lo, hi)])
        Y = np.repeat(panel.y[:, lo:hi].T, B, axis=0)
        fit = fit_huber_batch(X, Y, W, np.repeat(taus[lo:hi], B), np.repeat(theta_hat[lo:hi], B, axis=0), solver)
        mu_b = fit.theta[:, 0].reshape(hi - lo, B)
        ok = fit.converged.reshape(hi - lo, B)
        mu = np.asarray(mu_hat[lo:hi])[:, None]
        exceed = (np.abs(mu_b - mu) >= np.abs(mu)) & ok
        return exceed, ok

    parts = ordered_map(run, chunks(m, per_chunk), threads)
    exceed = np.vstack([p[0] for p in parts])
    ok = np.vstack([p[1] for p in parts])
    failed = B - ok.sum(axis=1)
    if np.any(failed > FAILURE_BUDGET * B):
        worst = int(np.argmax(failed))
        raise BootstrapFailureError(f"column {worst}: {int(failed[worst])} of {B} replications failed")
    return bootstrap_pvalue_counts(exceed, ok)


# ---------------------------------------------------------------------------
# Thresholding and bookkeeping
# ---------------------------------------------------------------------------


def bh_threshold(p_values, alpha: float):
    """Benjamini-Hochberg step-up rule: ``k = max{k : p_(k) <= alpha k / m}``.

    Returns ``(k, rejected)``; ``k = 0`` rejects nothing.
    """
    p = np.asarray(p_values, dtype=float).ravel()
    m = p.size
    order = np.sort(p)
    below = np.flatnonzero(order <= alpha * np.arange(1, m + 1) / m)
    if below.size == 0:
        return 0, np.zeros(m, dtype=bool)
    k = int(below[-1]) + 1
    return k, p <= order[k - 1]


def storey_threshold(p_values, alpha: float) -> float:
    """``sup{t in [0, 1] : t <= alpha max(#{p_k <= t}, 1) / m}``, evaluated on the grid ``alpha j / m``."""
    p = np.sort(np.asarray(p_values, dtype=float).ravel())
    m = p.size
    cand = alpha * np.arange(1, m + 1) / m
    counts = np.searchsorted(p, cand, side="right")
    feasible = cand <= alpha * np.maximum(counts, 1) / m
    return float(cand[feasible].max())


def fdp(rejected, null_set) -> float:
    """``V / max(R, 1)``."""
    rej = np.asarray(rejected, dtype=bool)
    null = np.asarray(null_set, dtype=bool)
    if rej.shape != null.shape:
        raise ShapeError("rejected and null_set must have the same length")
    return float(np.count_nonzero(rej & null) / max(np.count_nonzero(rej), 1))


def power(rejected, null_set) -> float | None:
    """Fraction of true alternatives rejected; ``None`` when there are none."""
    rej = np.asarray(rejected, dtype=bool)
    alt = ~np.asarray(null_set, dtype=bool)
    if not alt.any():
        return None
    return float(np.count_nonzero(rej & alt) / np.count_nonzero(alt))


def run_mtest(panel: PanelData, config: MTestConfig, null_set=None, threads=None) -> MTestResult:
    """Fit, bootstrap and threshold every column; FDP and power are filled in when ``null_set`` is given."""
    taus = resolve_taus(panel, config)
    mu_hat, beta_hat = fit_all(panel, taus)
    p = bootstrap_pvalues(panel, mu_hat, beta_hat, taus, config, threads=threads)
    k, rejected = bh_threshold(p, config.alpha)
    res = MTestResult(mu_hat=mu_hat, p_values=p, rejected=rejected, k_threshold=k, taus=taus, beta_hat=beta_hat)
    if null_set is not None:
        res.fdp = fdp(rejected, null_set)
        res.power = power(rejected, null_set)
    return res
