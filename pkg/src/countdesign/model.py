"""Count-response models with K binary item features.

Two families are supported:

* ``poisson``: counts are Poisson with mean ``theta0 * sigma(x)``, ability known.
* ``poisson-gamma``: ability is Gamma(shape ``a``, scale ``b``), so counts are
  negative binomial with mean ``a*b*sigma(x)`` and variance
  ``(1 + b*sigma(x)) * mean``.

The easiness is ``sigma(x) = exp(beta0 + sum_k beta_k x_k)``.  Everything the
design code needs from a model is the inverse weight ``q(x)``, the reciprocal
of the per-observation information weight.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

POISSON = "poisson"
POISSON_GAMMA = "poisson-gamma"
FAMILIES = (POISSON, POISSON_GAMMA)

MAX_K = 16


class ModelError(ValueError):
    """Invalid model specification or mismatched dimensions."""


def as_item(x: Iterable[int], k: int | None = None) -> tuple[int, ...]:
    """Validate a binary feature vector and return it as a tuple."""
    item = tuple(int(v) for v in x)
    if any(v not in (0, 1) for v in item):
        raise ModelError(f"item entries must be 0 or 1, got {item}")
    if k is not None and len(item) != k:
        raise ModelError(f"item has length {len(item)}, model has K={k}")
    return item


def regression_vector(x: Sequence[int]) -> np.ndarray:
    """Return ``(1, x_1, ..., x_K)``."""
    item = as_item(x)
    return np.array((1.0,) + tuple(float(v) for v in item))


def regression_matrix(items) -> np.ndarray:
    """Stack regression vectors row-wise; ``items`` is an (n, K) 0/1 array."""
    items = np.asarray(items, dtype=float)
    if items.ndim != 2:
        raise ModelError("items must be a 2-d array")
    return np.hstack([np.ones((items.shape[0], 1)), items])


def vertices(k: int) -> np.ndarray:
    """All ``2**k`` binary vectors in lexicographic order, as an int array."""
    if not 1 <= k <= MAX_K:
        raise ModelError(f"K must be in [1, {MAX_K}], got {k}")
    idx = np.arange(2 ** k)
    shifts = np.arange(k - 1, -1, -1)
    return ((idx[:, None] >> shifts) & 1).astype(np.int8)


@dataclass(frozen=True)
class ModelSpec:
    family: str
    k: int
    beta0: float
    effects: tuple[float, ...]
    theta0: float | None = None
    a: float | None = None
    b: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "effects", tuple(float(e) for e in self.effects))
        object.__setattr__(self, "beta0", float(self.beta0))
        if self.family not in FAMILIES:
            raise ModelError(f"unknown family {self.family!r}")
        if int(self.k) != self.k or self.k < 1:
            raise ModelError(f"K must be a positive integer, got {self.k}")
        if len(self.effects) != self.k:
            raise ModelError(
                f"{len(self.effects)} effects given for K={self.k}")
        if not all(math.isfinite(e) for e in self.effects + (self.beta0,)):
            raise ModelError("coefficients must be finite")
        if self.family == POISSON:
            if self.a is not None or self.b is not None:
                raise ModelError("poisson model takes theta0, not a/b")
            if self.theta0 is None or not self.theta0 > 0:
                raise ModelError("poisson model needs theta0 > 0")
        else:
            if self.theta0 is not None:
                raise ModelError("poisson-gamma model takes a and b, not theta0")
            if self.a is None or self.b is None or not (self.a > 0 and self.b > 0):
                raise ModelError("poisson-gamma model needs a > 0 and b > 0")
            if not (math.isfinite(self.a * self.b) and self.a * self.b > 0):
                raise ModelError("a*b must be finite and positive")

    @classmethod
    def poisson(cls, effects, theta0=1.0, beta0=0.0) -> "ModelSpec":
        effects = tuple(effects)
        return cls(POISSON, len(effects), beta0, effects, theta0=float(theta0))

    @classmethod
    def poisson_gamma(cls, effects, a, b, beta0=0.0) -> "ModelSpec":
        effects = tuple(effects)
        return cls(POISSON_GAMMA, len(effects), beta0, effects,
                   a=float(a), b=float(b))

    @property
    def p(self) -> int:
        return self.k + 1

    @property
    def mean_ability(self) -> float:
        """``theta0`` for Poisson, ``a*b`` for Poisson-Gamma."""
        if self.family == POISSON:
            return self.theta0
        return self.a * self.b

    @property
    def beta(self) -> np.ndarray:
        """Full coefficient vector ``(beta0, beta_1, ..., beta_K)``."""
        return np.array((self.beta0,) + self.effects)

    def linear_predictor(self, items) -> np.ndarray:
        return regression_matrix(items) @ self.beta

    def inverse_weights(self, items) -> np.ndarray:
        """Vectorised ``q(x)`` over the rows of ``items``."""
        eta = self.linear_predictor(items)
        if self.family == POISSON:
            return np.exp(-eta) / self.theta0
        return (self.b + np.exp(-eta)) / (self.a * self.b)

    def to_dict(self) -> dict:
        d = {"family": self.family, "k": self.k, "beta0": self.beta0,
             "effects": list(self.effects)}
        if self.family == POISSON:
            d["theta0"] = self.theta0
        else:
            d["a"] = self.a
            d["b"] = self.b
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        if not isinstance(d, dict):
            raise ModelError("model must be a JSON object")
        unknown = set(d) - {"family", "theta0", "a", "b", "k", "beta0", "effects"}
        if unknown:
            raise ModelError(f"unknown model fields: {sorted(unknown)}")
        try:
            family = d["family"]
            effects = [float(e) for e in d["effects"]]
            k = d.get("k", len(effects))
            beta0 = float(d.get("beta0", 0.0))
            theta0, a, b = (None if d.get(f) is None else float(d[f])
                            for f in ("theta0", "a", "b"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"malformed model: {exc}") from exc
        if not isinstance(k, int) or isinstance(k, bool):
            raise ModelError(f"k must be an integer, got {k!r}")
        return cls(family, k, beta0, effects, theta0=theta0, a=a, b=b)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class StandardizedParams:
    """Effects with ``theta0 = 1`` and ``beta0 = 0``; ``b_scale = 0`` is Poisson."""

    effects: tuple[float, ...]
    b_scale: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "effects", tuple(float(e) for e in self.effects))
        if not self.b_scale >= 0:
            raise ModelError(f"b_scale must be >= 0, got {self.b_scale}")

    @property
    def k(self) -> int:
        return len(self.effects)

    @property
    def difficulties(self) -> np.ndarray:
        """Difficulty multipliers ``exp(-beta_k)``."""
        return np.exp(-np.asarray(self.effects))

    def to_model(self) -> ModelSpec:
        # 1/b overflows for subnormal b
        if self.b_scale == 0 or not math.isfinite(1.0 / self.b_scale):
            return ModelSpec.poisson(self.effects, theta0=1.0)
        return ModelSpec.poisson_gamma(self.effects, a=1.0 / self.b_scale,
                                       b=self.b_scale)


def standardize(m: ModelSpec) -> StandardizedParams:
    """Strip ``theta0`` and ``beta0`` from a model.

    For Poisson-Gamma the intercept does not factor out completely: the
    information is ``ab*exp(beta0)`` times the standardized information with
    scale ``b*exp(beta0)``.  For Poisson the scale is 0.
    """
    if m.family == POISSON:
        return StandardizedParams(m.effects, 0.0)
    return StandardizedParams(m.effects, m.b * math.exp(m.beta0))


def information_scale(m: ModelSpec) -> float:
    """The factor ``theta0*exp(beta0)`` relating M to the standardized M0."""
    return m.mean_ability * math.exp(m.beta0)


def _eta(x, m: ModelSpec) -> float:
    item = as_item(x, m.k)
    return m.beta0 + sum(e * v for e, v in zip(m.effects, item))


def easiness(x, m: ModelSpec) -> float:
    return math.exp(_eta(x, m))


def mean_response(x, m: ModelSpec) -> float:
    return m.mean_ability * easiness(x, m)


def variance_response(x, m: ModelSpec) -> float:
    mu = mean_response(x, m)
    if m.family == POISSON:
        return mu
    return (1.0 + m.b * easiness(x, m)) * mu


def inverse_weight(x, m: ModelSpec) -> float:
    eta = _eta(x, m)
    if m.family == POISSON:
        return math.exp(-eta) / m.theta0
    return (m.b + math.exp(-eta)) / (m.a * m.b)


def standardized_inverse_weight(x, s: StandardizedParams) -> float:
    """``b + exp(-sum_k x_k beta_k)``."""
    item = as_item(x, s.k)
    return s.b_scale + math.exp(-sum(e * v for e, v in zip(s.effects, item)))
