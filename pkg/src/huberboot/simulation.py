"""Data generators and Monte Carlo runners for coverage and FDP/power experiments.

Every noise model is standardized analytically to mean 0 and variance 1.  Each
replication draws from its own counter-based substreams, so a report depends only on
the experiment specification and its seed, not on how replications are scheduled.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.stats import norm

from ._parallel import ordered_map
from .bootstrap import (
    FAILURE_BUDGET,
    WeightScheme,
    bootstrap_threshold,
    excess_loss,
    huber_replications,
    ols_replications,
    replication_weights,
)
from .calibration import CalibrationConfig, irls_fit, simple_tau_rule
from .core import Dataset, SolverConfig, fit_huber, fit_ols
from .exceptions import ConfigurationError, DomainError, NumericalError
from .multitest import MTestConfig, PanelData, bh_threshold, bootstrap_pvalues, fdp, fit_all, power, resolve_taus
from .rng import derive_seed, substream

NOISE_VARIANTS = ("gaussian", "student_t", "gamma", "wbl_mix", "par_mix", "logn_mix", "logn")
DESIGN_VARIANTS = ("isotropic", "uniform_corr", "toeplitz")
COVERAGE_METHODS = ("boot-huber", "adaptive-boot-huber", "boot-ols")
COVERAGE_HEADER = "noise,design,method,n,d,B,reps,alpha,coverage,se,seed"
MTEST_HEADER = "noise,n,s,m,gamma,B,reps,alpha,fdp,fdp_se,power,power_se,seed"


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """``param`` is the degrees of freedom for ``student_t`` and the shape for ``logn``."""

    variant: str = "gaussian"
    param: float | None = None

    def __post_init__(self):
        if self.variant not in NOISE_VARIANTS:
            raise ConfigurationError(f"unknown noise {self.variant!r}; expected one of {NOISE_VARIANTS}")
        if self.variant == "student_t":
            nu = 3.5 if self.param is None else float(self.param)
            if nu <= 2:
                raise ConfigurationError("student_t needs nu > 2 for a finite variance")
            object.__setattr__(self, "param", nu)
        elif self.variant == "logn":
            s = 1.0 if self.param is None else float(self.param)
            if s <= 0:
                raise ConfigurationError("logn shape must be positive")
            object.__setattr__(self, "param", s)
        elif self.param is not None:
            raise ConfigurationError(f"noise {self.variant!r} takes no parameter")

    @property
    def label(self) -> str:
        if self.variant == "student_t":
            return f"t{self.param:g}"
        if self.variant == "logn":
            return f"logn{self.param:g}"
        return self.variant.replace("_", "")

    @classmethod
    def parse(cls, text: str) -> "NoiseModel":
        """Accept labels such as ``gaussian``, ``t3.5``, ``wblmix`` or ``logn2``."""
        key = text.strip().lower().replace("-", "").replace("_", "")
        fixed = {"gaussian": "gaussian", "gamma": "gamma", "wblmix": "wbl_mix", "parmix": "par_mix", "lognmix": "logn_mix"}
        if key in fixed:
            return cls(fixed[key])
        if key in ("tnu", "t", "studentt"):
            return cls("student_t")
        if key.startswith("t"):
            return cls("student_t", float(key[1:]))
        if key.startswith("logn"):
            return cls("logn", float(key[4:]))
        raise ConfigurationError(f"cannot parse noise model {text!r}")


# Weibull(shape 0.75, scale 0.75) and lognormal helpers
_WBL_K, _WBL_LAM = 0.75, 0.75
_WBL_MEAN = _WBL_LAM * gamma_fn(1 + 1 / _WBL_K)
_WBL_SD = _WBL_LAM * math.sqrt(gamma_fn(1 + 2 / _WBL_K) - gamma_fn(1 + 1 / _WBL_K) ** 2)
_PARETO_MEAN, _PARETO_VAR = 4.0 / 3.0, 2.0 / 9.0
_LNMIX_S = 1.25


def _logn_moments(s: float):
    return math.exp(s * s / 2), (math.exp(s * s) - 1) * math.exp(s * s)


def gen_noise(model: NoiseModel, n, rng: np.random.Generator) -> np.ndarray:
    """Draw standardized noise; ``n`` may be an int or a shape tuple."""
    v = model.variant
    if v == "gaussian":
        return rng.standard_normal(n)
    if v == "student_t":
        nu = model.param
        return rng.standard_t(nu, n) / math.sqrt(nu / (nu - 2))
    if v == "gamma":
        return (rng.gamma(3.0, 1.0, n) - 3.0) / math.sqrt(3.0)
    if v == "wbl_mix":
        u_t = rng.standard_t(4.0, n) / math.sqrt(2.0)
        u_w = (_WBL_LAM * rng.weibull(_WBL_K, n) - _WBL_MEAN) / _WBL_SD
        return (0.5 * u_t + 0.5 * u_w) / math.sqrt(0.5)
    if v == "par_mix":
        u_p = rng.pareto(4.0, n) + 1.0
        u_g = rng.standard_normal(n)
        mean = 0.5 * _PARETO_MEAN
        sd = math.sqrt(0.25 * _PARETO_VAR + 0.25)
        return (0.5 * u_p + 0.5 * u_g - mean) / sd
    if v == "logn_mix":
        m, var = _logn_moments(_LNMIX_S)
        u_ln = np.exp(_LNMIX_S * rng.standard_normal(n))
        u_g = rng.standard_normal(n)
        return (0.5 * u_ln + 0.5 * u_g - 0.5 * m) / math.sqrt(0.25 * var + 0.25)
    m, var = _logn_moments(model.param)
    return (np.exp(model.param * rng.standard_normal(n)) - m) / math.sqrt(var)


def _lognormal_kurtosis(s: float) -> float:
    q = math.exp(s * s)
    return q**4 + 2 * q**3 + 3 * q**2 - 3


def noise_kurtosis(model: NoiseModel) -> float:
    """Analytic kurtosis ``E eps^4`` of the standardized noise (``inf`` when undefined)."""
    v = model.variant
    if v == "gaussian":
        return 3.0
    if v == "student_t":
        nu = model.param
        return 3.0 + 6.0 / (nu - 4) if nu > 4 else math.inf
    if v == "gamma":
        return 3.0 + 6.0 / 3.0
    if v in ("wbl_mix", "par_mix"):
        return math.inf  # t_4 and Pareto(4) have no finite fourth moment
    if v == "logn_mix":
        _, var = _logn_moments(_LNMIX_S)
        share = var / (var + 1.0)
        return 3.0 + share**2 * (_lognormal_kurtosis(_LNMIX_S) - 3.0)
    return _lognormal_kurtosis(model.param)


def certify_noise(model: NoiseModel, draws: int = 10**6, seed: int = 0):
    """Monte Carlo mean/variance check of the standardization.

    Tolerances are 0.01 for the mean and 0.05 for the variance, widened to four standard
    errors of the sample variance when the analytic kurtosis makes 0.05 unattainable.
    Returns ``(passed, mean, var, var_tol)``.
    """
    x = gen_noise(model, draws, substream(seed, 0))
    mean, var = float(x.mean()), float(x.var())
    kurt = noise_kurtosis(model)
    var_tol = 0.05 if not math.isfinite(kurt) else max(0.05, 4.0 * math.sqrt((kurt - 1.0) / draws))
    mean_tol = max(0.01, 4.0 / math.sqrt(draws))
    passed = abs(mean) <= mean_tol and abs(var - 1.0) <= var_tol
    return passed, mean, var, var_tol


# ---------------------------------------------------------------------------
# Designs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DesignModel:
    """``rho`` defaults to 0.5 for ``uniform_corr`` and 0.9 for ``toeplitz``."""

    variant: str = "isotropic"
    rho: float | None = None

    def __post_init__(self):
        if self.variant not in DESIGN_VARIANTS:
            raise ConfigurationError(f"unknown design {self.variant!r}; expected one of {DESIGN_VARIANTS}")
        if self.rho is None and self.variant != "isotropic":
            object.__setattr__(self, "rho", 0.5 if self.variant == "uniform_corr" else 0.9)

    @property
    def label(self) -> str:
        return self.variant.replace("_", "")

    @classmethod
    def parse(cls, text: str) -> "DesignModel":
        key = text.strip().lower().replace("-", "").replace("_", "")
        table = {"isotropic": "isotropic", "normal": "isotropic", "uniformcorr": "uniform_corr", "toeplitz": "toeplitz"}
        if key not in table:
            raise ConfigurationError(f"cannot parse design model {text!r}")
        return cls(table[key])


def _power_matrix(rho: float, d: int) -> np.ndarray:
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def copula_correlation(target: np.ndarray) -> np.ndarray:
    """Normal-scale correlation whose ``Phi`` transform has uniform-scale correlation ``target``."""
    r = 2.0 * np.sin(np.pi * np.asarray(target, dtype=float) / 6.0)
    np.fill_diagonal(r, 1.0)
    return r


def _cholesky(S: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError("target correlation matrix is not positive definite") from exc


def gen_design(model: DesignModel, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1 or d < 1:
        raise DomainError("need n, d >= 1")
    z = rng.standard_normal((n, d))
    if model.variant == "isotropic":
        return z
    if model.variant == "toeplitz":
        return z @ _cholesky(_power_matrix(model.rho, d)).T
    L = _cholesky(copula_correlation(_power_matrix(model.rho, d)))
    return norm.cdf(z @ L.T)


def gen_theta(pattern: str, d: int, rng: np.random.Generator) -> np.ndarray:
    if pattern == "linspace":
        return np.linspace(0.0, 1.0, d)
    if pattern == "bernoulli":
        return rng.integers(0, 2, size=d).astype(float)
    raise ConfigurationError(f"unknown theta pattern {pattern!r}")


# ---------------------------------------------------------------------------
# Experiment specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    """One table cell.  ``d`` is the covariate count ``s`` for ``kind="mtest"``."""

    kind: str = "coverage"
    n: int = 100
    d: int = 5
    m: int = 1
    noise: NoiseModel = field(default_factory=NoiseModel)
    design: DesignModel = field(default_factory=DesignModel)
    theta_pattern: str = "linspace"
    weights: WeightScheme = field(default_factory=WeightScheme)
    B: int = 2000
    replications: int = 1000
    alphas: tuple = (0.05, 0.10, 0.15, 0.20, 0.25)
    seed: int = 0
    signal_gamma: float = 0.0
    tau_mode: str = "simple"
    tau_value: float | None = None
    methods: tuple = ("boot-huber", "boot-ols")

    def __post_init__(self):
        if self.kind not in ("coverage", "mtest"):
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}")
        if self.replications < 1 or self.B < 1:
            raise ConfigurationError("replications and B must be >= 1")
        if self.n < 1 or self.d < 1 or self.m < 1:
            raise ConfigurationError("n, d and m must be >= 1")
        alphas = tuple(float(a) for a in self.alphas)
        if not alphas or not all(0 < a < 1 for a in alphas):
            raise ConfigurationError("alphas must lie in (0, 1)")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.tau_mode not in ("simple", "adaptive", "fixed"):
            raise ConfigurationError(f"unknown tau mode {self.tau_mode!r}")
        if self.tau_mode == "fixed" and not (self.tau_value and self.tau_value > 0):
            raise ConfigurationError("tau_mode='fixed' needs a positive tau_value")
        bad = [mm for mm in self.methods if mm not in COVERAGE_METHODS]
        if bad:
            raise ConfigurationError(f"unknown methods {bad}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["alphas"] = list(self.alphas)
        out["methods"] = list(self.methods)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentSpec":
        raw = dict(raw)
        if isinstance(raw.get("noise"), str):
            raw["noise"] = NoiseModel.parse(raw["noise"])
        elif isinstance(raw.get("noise"), dict):
            raw["noise"] = NoiseModel(**raw["noise"])
        if isinstance(raw.get("design"), str):
            raw["design"] = DesignModel.parse(raw["design"])
        elif isinstance(raw.get("design"), dict):
            raw["design"] = DesignModel(**raw["design"])
        if isinstance(raw.get("weights"), str):
            raw["weights"] = WeightScheme(raw["weights"])
        elif isinstance(raw.get("weights"), dict):
            raw["weights"] = WeightScheme(**raw["weights"])
        for key in ("alphas", "methods"):
            if key in raw:
                raw[key] = tuple(raw[key])
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown experiment fields {sorted(unknown)}")
        return cls(**raw)

    def scaled(self, scale: float) -> "ExperimentSpec":
        """Same cell with ``ceil(scale * replications)`` replications (at least one)."""
        if not scale > 0:
            raise ConfigurationError("scale must be positive")
        return replace(self, replications=max(1, math.ceil(self.replications * scale - 1e-9)))


def load_presets() -> dict:
    text = resources.files("huberboot").joinpath("presets.json").read_text(encoding="utf-8")
    return json.loads(text)


def preset_specs(name: str) -> list:
    """Expand a preset (a single cell or a named group of cells) into specs."""
    presets = load_presets()
    if name in presets["groups"]:
        return [ExperimentSpec.from_dict(presets["cells"][c]) for c in presets["groups"][name]]
    if name in presets["cells"]:
        return [ExperimentSpec.from_dict(presets["cells"][name])]
    known = sorted(presets["cells"]) + sorted(presets["groups"])
    raise ConfigurationError(f"unknown preset {name!r}; known: {', '.join(known)}")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass
class CoverageReport:
    spec: ExperimentSpec
    rows: list
    n_failed: int = 0

    def coverage(self, method: str, alpha: float) -> float:
        for r in self.rows:
            if r["method"] == method and math.isclose(r["alpha"], alpha):
                return r["coverage"]
        raise KeyError((method, alpha))

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        if header:
            buf.write(COVERAGE_HEADER + "\n")
        keys = COVERAGE_HEADER.split(",")
        for r in self.rows:
            buf.write(",".join(_fmt(r[k]) for k in keys) + "\n")
        return buf.getvalue()


@dataclass
class FdpReport:
    spec: ExperimentSpec
    rows: list
    n_failed: int = 0

    def row(self, alpha: float) -> dict:
        for r in self.rows:
            if math.isclose(r["alpha"], alpha):
                return r
        raise KeyError(alpha)

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        if header:
            buf.write(MTEST_HEADER + "\n")
        keys = MTEST_HEADER.split(",")
        for r in self.rows:
            buf.write(",".join(_fmt(r[k]) for k in keys) + "\n")
        return buf.getvalue()


def binomial_se(p: float, reps: int) -> float:
    return math.sqrt(p * (1.0 - p) / reps)


def _check_budget(failed: int, total: int, what: str):
    if failed > FAILURE_BUDGET * total:
        raise NumericalError(f"{failed} of {total} {what} failed (budget {FAILURE_BUDGET:.0%})")


# ---------------------------------------------------------------------------
# Coverage experiments
# ---------------------------------------------------------------------------


def simulate_regression(spec: ExperimentSpec, rep: int):
    """``(Dataset, theta_star)`` for replication ``rep``."""
    rng = substream(spec.seed, rep, 0)
    X = gen_design(spec.design, spec.n, spec.d, rng)
    theta = gen_theta(spec.theta_pattern, spec.d, rng)
    eps = gen_noise(spec.noise, spec.n, rng)
    return Dataset(X, X @ theta + eps), theta


def _huber_membership(data, theta_star, tau, weights, alphas):
    fit = fit_huber(data, SolverConfig(tau=tau))
    if not fit.converged:
        raise NumericalError("Huber fit did not converge")
    exc, _ = huber_replications(data, fit.theta, tau, weights, threads=1)
    ok = np.isfinite(exc)
    _check_budget(int(np.count_nonzero(~ok)), exc.size, "bootstrap replications")
    stat = excess_loss(data, theta_star, fit.theta, tau, "huber")
    return [stat <= bootstrap_threshold(exc[ok], a) for a in alphas]


def _ols_membership(data, theta_star, weights, alphas):
    theta_hat = fit_ols(data).theta
    exc, _ = ols_replications(data, theta_hat, weights, threads=1)
    ok = np.isfinite(exc)
    _check_budget(int(np.count_nonzero(~ok)), exc.size, "bootstrap replications")
    stat = excess_loss(data, theta_star, theta_hat, math.inf, "squared")
    return [stat <= bootstrap_threshold(exc[ok], a) for a in alphas]


def _tau_for(spec: ExperimentSpec, data: Dataset, method: str) -> float:
    mode = "adaptive" if method == "adaptive-boot-huber" else spec.tau_mode
    if mode == "fixed":
        return float(spec.tau_value)
    if mode == "simple":
        tau = simple_tau_rule(data, "bootstrap")
    else:
        res = irls_fit(data, CalibrationConfig(moment_order=4))
        tau = res.tau
    if not tau > 0:
        raise NumericalError("tau calibration degenerated")
    return tau


def coverage_replication(spec: ExperimentSpec, rep: int) -> dict:
    """Membership of theta* per (method, alpha) for one replication; ``None`` on failure.

    All methods share the same data and the same bootstrap weights.
    """
    data, theta_star = simulate_regression(spec, rep)
    wseed = derive_seed(spec.seed, rep, 1)
    weights = replication_weights(spec.weights, spec.n, wseed, range(spec.B))
    out = {}
    for method in spec.methods:
        try:
            if method == "boot-ols":
                out[method] = _ols_membership(data, theta_star, weights, spec.alphas)
            else:
                tau = _tau_for(spec, data, method)
                out[method] = _huber_membership(data, theta_star, tau, weights, spec.alphas)
        except NumericalError:
            out[method] = None
    return out


def coverage_experiment(spec: ExperimentSpec, threads=None) -> CoverageReport:
    """Empirical coverage of theta* for every method and nominal level ``1 - alpha``.

    Failed replications are dropped per method and counted; more than 1% fails the run.
    """
    if spec.kind != "coverage":
        raise ConfigurationError("coverage_experiment needs kind='coverage'")
    results = ordered_map(lambda r: coverage_replication(spec, r), range(spec.replications), threads)
    rows, failed_total = [], 0
    for method in spec.methods:
        hits = [res[method] for res in results if res[method] is not None]
        failed = spec.replications - len(hits)
        failed_total += failed
        _check_budget(failed, spec.replications, f"{method} replications")
        hits = np.asarray(hits, dtype=bool).reshape(len(hits), len(spec.alphas))
        for j, a in enumerate(spec.alphas):
            cov = float(hits[:, j].mean())
            rows.append(
                dict(
                    noise=spec.noise.label,
                    design=spec.design.label,
                    method=method,
                    n=spec.n,
                    d=spec.d,
                    B=spec.B,
                    reps=len(hits),
                    alpha=a,
                    coverage=cov,
                    se=binomial_se(cov, len(hits)),
                    seed=spec.seed,
                )
            )
    return CoverageReport(spec=spec, rows=rows, n_failed=failed_total)


# ---------------------------------------------------------------------------
# Multiple-testing experiments
# ---------------------------------------------------------------------------


def n_alternatives(m: int) -> int:
    return int(round(0.05 * m))


def simulate_panel(spec: ExperimentSpec, rep: int):
    """``(PanelData, mu)`` with ``mu_k = gamma sqrt(2 log m / n)`` on the first 5% of columns."""
    n, s, m = spec.n, spec.d, spec.m
    rng = substream(spec.seed, rep, 0)
    x = rng.standard_normal((n, s))
    beta = rng.uniform(-1.0, 1.0, size=(s, m))
    mu = np.zeros(m)
    mu[: n_alternatives(m)] = spec.signal_gamma * math.sqrt(2.0 * math.log(m) / n)
    eps = gen_noise(spec.noise, (n, m), rng)
    return PanelData(mu + x @ beta + eps, x), mu


def mtest_replication(spec: ExperimentSpec, rep: int):
    """Per-alpha ``(fdp, power)`` for one replication; ``None`` on failure."""
    panel, mu = simulate_panel(spec, rep)
    null = mu == 0
    cfg = MTestConfig(B=spec.B, alpha=spec.alphas[0], scheme=spec.weights, seed=derive_seed(spec.seed, rep, 1))
    try:
        taus = resolve_taus(panel, cfg)
        mu_hat, beta_hat = fit_all(panel, taus)
        p = bootstrap_pvalues(panel, mu_hat, beta_hat, taus, cfg, threads=1)
    except NumericalError:
        return None
    out = []
    for a in spec.alphas:
        _, rejected = bh_threshold(p, a)
        out.append((fdp(rejected, null), power(rejected, null)))
    return out


def mtest_experiment(spec: ExperimentSpec, threads=None) -> FdpReport:
    """Average FDP and power over replications for each nominal level alpha.

    Standard errors are ``sd / sqrt(reps)``; power is left empty when there are no
    true alternatives.
    """
    if spec.kind != "mtest":
        raise ConfigurationError("mtest_experiment needs kind='mtest'")
    results = ordered_map(lambda r: mtest_replication(spec, r), range(spec.replications), threads)
    ok = [r for r in results if r is not None]
    failed = len(results) - len(ok)
    _check_budget(failed, spec.replications, "replications")
    reps = len(ok)
    rows = []
    for j, a in enumerate(spec.alphas):
        f = np.array([r[j][0] for r in ok])
        pw = [r[j][1] for r in ok if r[j][1] is not None]
        sd = lambda v: float(np.std(v, ddof=1)) / math.sqrt(len(v)) if len(v) > 1 else 0.0  # noqa: E731
        rows.append(
            dict(
                noise=spec.noise.label,
                n=spec.n,
                s=spec.d,
                m=spec.m,
                gamma=float(spec.signal_gamma),
                B=spec.B,
                reps=reps,
                alpha=a,
                fdp=float(f.mean()),
                fdp_se=sd(f),
                power=float(np.mean(pw)) if pw else None,
                power_se=sd(np.asarray(pw)) if pw else None,
                seed=spec.seed,
            )
        )
    return FdpReport(spec=spec, rows=rows, n_failed=failed)


def run_experiment(spec: ExperimentSpec, threads=None):
    if spec.kind == "coverage":
        return coverage_experiment(spec, threads=threads)
    return mtest_experiment(spec, threads=threads)
