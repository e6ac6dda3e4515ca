"""Monte-Carlo check that the information matrix predicts the sampling
covariance of the maximum likelihood estimator.

Each person answers exactly one item, so counts are independent.  Random
streams are Philox generators keyed by ``(seed, replication)``; results do not
depend on the order in which replications are run.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .fisher import Design, DesignError, info_matrix
from .model import POISSON, ModelSpec, regression_matrix

SCORE_TOL = 1e-8
MAX_FIT_ITER = 200
MIN_COV_REPLICATIONS = 500
DIVERGENCE_BOUND = 30.0
VANISHING_MEAN = 1e-6


class FitError(RuntimeError):
    """Fisher scoring failed to converge."""


class DegenerateDataError(FitError):
    """The likelihood has no finite maximiser for these counts."""


@dataclass(frozen=True)
class SimConfig:
    design: Design
    model: ModelSpec
    replications: int
    seed: int

    def __post_init__(self):
        if self.design.kind != "exact":
            raise DesignError("simulation needs an exact design")
        if self.design.k != self.model.k:
            raise DesignError(f"design has K={self.design.k}, model has K={self.model.k}")
        if self.design.n < 5 * self.model.p:
            raise DesignError(f"n={self.design.n} is below 5*(K+1)={5 * self.model.p}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return {"design": self.design.to_dict(), "model": self.model.to_dict(),
                "replications": self.replications, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        try:
            return cls(Design.from_dict(d["design"]), ModelSpec.from_dict(d["model"]),
                       int(d["replications"]), int(d.get("seed", 0)))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed simulation config: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        return cls.from_dict(json.loads(text))


def rng_for(seed: int, replication: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(replication,))
    return np.random.Generator(np.random.Philox(ss))


def sample_responses(cfg: SimConfig, replication: int = 0) -> np.ndarray:
    """One count per administered item, in ``design.expanded_items()`` order.

    Poisson-Gamma counts are drawn as a mixture: an ability from
    Gamma(a, scale=b) per person, then a Poisson count with mean
    ``ability * easiness``.
    """
    m = cfg.model
    rng = rng_for(cfg.seed, replication)
    sigma = np.exp(m.linear_predictor(cfg.design.expanded_items()))
    if m.family == POISSON:
        return rng.poisson(m.theta0 * sigma)
    theta = rng.gamma(m.a, m.b, size=sigma.shape)
    return rng.poisson(theta * sigma)


@dataclass(frozen=True)
class FitResult:
    beta_hat: np.ndarray
    converged: bool
    iterations: int
    loglik: float
    score_norm: float = math.nan


def _loglik(y_obs, X_obs, beta, m: ModelSpec) -> float:
    sigma = np.exp(X_obs @ beta)
    if m.family == POISSON:
        mu = m.theta0 * sigma
        return float(np.sum(y_obs * np.log(mu) - mu - gammaln(y_obs + 1)))
    bs = m.b * sigma
    return float(np.sum(gammaln(y_obs + m.a) - gammaln(m.a) - gammaln(y_obs + 1)
                        - m.a * np.log1p(bs) + y_obs * (np.log(bs) - np.log1p(bs))))


def _score_info(Y, n, F, beta, m: ModelSpec):
    """Grouped score and expected information at ``beta``."""
    sigma = np.exp(F @ beta)
    if m.family == POISSON:
        mu = m.theta0 * sigma
        resid = Y - n * mu
        weight = n * mu
    else:
        denom = 1.0 + m.b * sigma
        resid = (Y - n * m.a * m.b * sigma) / denom
        weight = n * m.a * m.b * sigma / denom
    return F.T @ resid, (F * weight[:, None]).T @ F


def log_likelihood(counts, design: Design, m: ModelSpec, beta) -> float:
    X = regression_matrix(design.expanded_items())
    return _loglik(np.asarray(counts, dtype=float), X, np.asarray(beta, float), m)


def _scoring(Y, n, F, y_obs, X_obs, m, beta):
    ll = _loglik(y_obs, X_obs, beta, m)
    for it in range(1, MAX_FIT_ITER + 1):
        score, info = _score_info(Y, n, F, beta, m)
        snorm = float(np.abs(score).max())
        if snorm < SCORE_TOL:
            return FitResult(beta, True, it - 1, ll, snorm)
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = _loglik(y_obs, X_obs, cand, m)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-8:
                break
            t /= 2
        beta, ll = cand, ll_new
        if not np.all(np.isfinite(beta)) or np.abs(beta).max() > 100:
            break
    score, _ = _score_info(Y, n, F, beta, m)
    return FitResult(beta, False, it, ll, float(np.abs(score).max()))


def fit_mle(counts, design: Design, m: ModelSpec, start=None) -> FitResult:
    """Maximum likelihood for ``(beta0, beta_1, ..., beta_K)`` by Fisher scoring.

    The ability parameters of ``m`` (``theta0`` or ``a``, ``b``) are treated as
    known; its coefficients are ignored except through ``start``.  Raises
    `DegenerateDataError` when the likelihood increases without bound and
    `FitError` when scoring does not settle after one perturbed restart.
    """
    if design.kind != "exact":
        raise DesignError("fitting needs an exact design")
    y_obs = np.asarray(counts, dtype=float)
    if y_obs.shape != (design.n,):
        raise ValueError(f"expected {design.n} counts, got {y_obs.shape}")
    if np.any(y_obs < 0):
        raise ValueError("counts must be nonnegative")
    if y_obs.sum() == 0:
        raise DegenerateDataError("all counts are zero; the intercept diverges")
    F = regression_matrix(design.items)
    n = design.counts.astype(float)
    bounds = np.concatenate([[0], np.cumsum(design.counts)])
    Y = np.array([y_obs[lo:hi].sum() for lo, hi in zip(bounds[:-1], bounds[1:])])
    X_obs = regression_matrix(design.expanded_items())
    beta = np.zeros(m.p) if start is None else np.array(start, dtype=float)

    fit = _scoring(Y, n, F, y_obs, X_obs, m, beta)
    if not fit.converged:
        rng = np.random.default_rng(0)
        fit = _scoring(Y, n, F, y_obs, X_obs, m, beta + rng.normal(0, 0.1, m.p))
    # the score can vanish along a diverging direction, so check either way
    group_mean = n * m.mean_ability * np.exp(F @ fit.beta_hat)
    starved = (Y == 0) & (group_mean < VANISHING_MEAN)
    if starved.any() or np.abs(fit.beta_hat).max() > DIVERGENCE_BOUND:
        raise DegenerateDataError(
            f"coefficients diverge (|beta| up to {np.abs(fit.beta_hat).max():.3g}); "
            "some support point likely has no positive counts")
    if not fit.converged:
        raise FitError(f"Fisher scoring did not converge (score norm {fit.score_norm:.3g})")
    return fit


@dataclass
class CovarianceReport:
    empirical_cov: np.ndarray
    predicted_cov: np.ndarray
    max_rel_error: float  # diagonal
    max_corr_error: float  # off-diagonal, on the correlation scale
    failures: int
    replications: int
    beta_hats: np.ndarray

    @property
    def generalized_variance(self) -> float:
        return float(np.linalg.det(self.empirical_cov))

    def to_dict(self) -> dict:
        return {
            "empirical_cov": self.empirical_cov.tolist(),
            "predicted_cov": self.predicted_cov.tolist(),
            "max_rel_error": self.max_rel_error,
            "max_corr_error": self.max_corr_error,
            "failures": self.failures,
            "replications": self.replications,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def beta_hats_csv(self) -> str:
        p = self.beta_hats.shape[1]
        buf = io.StringIO()
        buf.write("replication," + ",".join(f"beta{j}" for j in range(p)) + "\n")
        for i, row in enumerate(self.beta_hats):
            buf.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()


def predicted_covariance(design: Design, m: ModelSpec) -> np.ndarray:
    """``(n M(design; beta))^-1``."""
    return info_matrix(design, m).inverse() / design.n


def covariance_check(cfg: SimConfig) -> CovarianceReport:
    if cfg.replications < MIN_COV_REPLICATIONS:
        raise ValueError(f"covariance_check needs at least {MIN_COV_REPLICATIONS} "
                         f"replications, got {cfg.replications}")
    rows = []
    failures = 0
    for r in range(cfg.replications):
        y = sample_responses(cfg, r)
        try:
            rows.append(fit_mle(y, cfg.design, cfg.model).beta_hat)
        except FitError:
            failures += 1
    if len(rows) < 2:
        raise FitError(f"{failures} of {cfg.replications} fits failed")
    beta_hats = np.array(rows)
    emp = np.cov(beta_hats, rowvar=False)
    pred = predicted_covariance(cfg.design, cfg.model)
    rel = np.abs(np.diag(emp) / np.diag(pred) - 1)
    sd = np.sqrt(np.diag(pred))
    corr_err = np.abs(emp - pred) / np.outer(sd, sd)
    np.fill_diagonal(corr_err, 0.0)
    return CovarianceReport(emp, pred, float(rel.max()), float(corr_err.max()),
                            failures, cfg.replications, beta_hats)
