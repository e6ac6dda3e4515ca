"""Designs, Fisher information and the D-criterion sensitivity function."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import (MAX_K, ModelError, ModelSpec, StandardizedParams,
                    as_item, regression_matrix, standardized_inverse_weight,
                    vertices)

SINGULAR_COND = 1e12
WEIGHT_SUM_TOL = 1e-12


class DesignError(ValueError):
    pass


class SingularInformationError(ArithmeticError):
    """The information matrix of a design is (numerically) singular."""


@dataclass(frozen=True, eq=False)
class Design:
    """Finite support of binary items with weights summing to one.

    An exact design additionally carries integer replication ``counts``; its
    weights are then ``counts / n``.
    """

    items: np.ndarray
    weights: np.ndarray
    counts: np.ndarray | None = None

    def __post_init__(self):
        items = np.atleast_2d(np.asarray(self.items, dtype=np.int8))
        weights = np.asarray(self.weights, dtype=float).ravel()
        if items.shape[0] != weights.shape[0]:
            raise DesignError("items and weights differ in length")
        if items.shape[0] < 1:
            raise DesignError("a design needs at least one support point")
        if not np.isin(items, (0, 1)).all():
            raise DesignError("items must be binary")
        if len({tuple(r) for r in items.tolist()}) != items.shape[0]:
            raise DesignError("support items must be mutually distinct")
        if self.counts is not None:
            counts = np.asarray(self.counts).ravel()
            if counts.shape != weights.shape or np.any(counts < 1) \
                    or np.any(counts != np.round(counts)):
                raise DesignError("counts must be positive integers per point")
            counts = counts.astype(np.int64)
            weights = counts / counts.sum()
            object.__setattr__(self, "counts", counts)
        if np.any(weights < 0):
            raise DesignError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL * max(1, len(weights)):
            raise DesignError(f"weights sum to {weights.sum()!r}, not 1")
        items.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def approximate(cls, items, weights) -> "Design":
        return cls(items, weights)

    @classmethod
    def exact(cls, items, counts) -> "Design":
        counts = np.asarray(counts)
        return cls(items, counts / counts.sum(), counts)

    @classmethod
    def from_rows(cls, rows) -> "Design":
        """Exact design from a list of item rows, repeats allowed."""
        tally: dict[tuple[int, ...], int] = {}
        for r in rows:
            r = as_item(r)
            tally[r] = tally.get(r, 0) + 1
        return cls.exact(list(tally), list(tally.values()))

    @property
    def kind(self) -> str:
        return "approximate" if self.counts is None else "exact"

    @property
    def n(self) -> int | None:
        return None if self.counts is None else int(self.counts.sum())

    @property
    def k(self) -> int:
        return self.items.shape[1]

    @property
    def size(self) -> int:
        return self.items.shape[0]

    def support(self) -> list[tuple[int, ...]]:
        return [tuple(int(v) for v in r) for r in self.items]

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return dict(zip(self.support(), self.weights.tolist()))

    def expanded_items(self) -> np.ndarray:
        """One row per administered item (exact designs only)."""
        if self.counts is None:
            raise DesignError("only exact designs can be expanded")
        return np.repeat(self.items, self.counts, axis=0)

    def to_dict(self) -> dict:
        if self.counts is None:
            pts = [{"item": list(x), "weight": w}
                   for x, w in zip(self.support(), self.weights.tolist())]
            return {"kind": "approximate", "points": pts}
        pts = [{"item": list(x), "count": int(c)}
               for x, c in zip(self.support(), self.counts.tolist())]
        return {"kind": "exact", "n": self.n, "points": pts}

    @classmethod
    def from_dict(cls, d: dict) -> "Design":
        try:
            kind = d["kind"]
            pts = d["points"]
            items = [as_item(p["item"]) for p in pts]
            if kind == "approximate":
                return cls.approximate(items, [float(p["weight"]) for p in pts])
            if kind == "exact":
                counts = [p["count"] for p in pts]
                if any(not isinstance(c, int) or isinstance(c, bool) for c in counts):
                    raise DesignError("counts must be integers")
                design = cls.exact(items, counts)
                if "n" in d and d["n"] != design.n:
                    raise DesignError(f"n={d['n']} but counts sum to {design.n}")
                return design
        except (KeyError, TypeError) as exc:
            raise DesignError(f"malformed design: {exc}") from exc
        except ModelError as exc:
            raise DesignError(str(exc)) from exc
        raise DesignError(f"unknown design kind {kind!r}")

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Design":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class InfoMatrix:
    entries: np.ndarray
    logdet: float
    cond: float
    _chol: tuple | None = field(default=None, repr=False)

    @classmethod
    def from_array(cls, a) -> "InfoMatrix":
        a = np.array(a, dtype=float)
        if not np.all(np.isfinite(a)):
            raise ValueError("information matrix has non-finite entries")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        eig = np.linalg.eigvalsh(a)
        cond = math.inf if eig[0] <= 0 else eig[-1] / eig[0]
        chol = None
        logdet = -math.inf
        if cond <= SINGULAR_COND:
            chol = cho_factor(a, lower=True)
            logdet = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
        return cls(a, logdet, cond, chol)

    @property
    def singular(self) -> bool:
        return self._chol is None

    @property
    def well_conditioned(self) -> bool:
        return not self.singular

    @property
    def det(self) -> float:
        return math.exp(self.logdet) if not self.singular else 0.0

    def solve(self, b) -> np.ndarray:
        if self.singular:
            raise SingularInformationError(
                f"information matrix is singular (cond={self.cond:.3g})")
        return cho_solve(self._chol, b)

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.entries.shape[0]))

    def to_csv(self) -> str:
        p = self.entries.shape[0]
        buf = io.StringIO()
        buf.write(",".join(f"c{j}" for j in range(p)) + "\n")
        np.savetxt(buf, self.entries, delimiter=",", fmt="%.17g")
        return buf.getvalue()


def _check_dims(d: Design, m: ModelSpec):
    if d.k != m.k:
        raise ModelError(f"design has K={d.k}, model has K={m.k}")


def info_matrix_from(items, weights, m: ModelSpec) -> InfoMatrix:
    F = regression_matrix(items)
    lam = np.asarray(weights) / m.inverse_weights(items)
    return InfoMatrix.from_array((F * lam[:, None]).T @ F)


def info_matrix(d: Design, m: ModelSpec) -> InfoMatrix:
    """``sum_i w_i q(x_i)^-1 f(x_i) f(x_i)^T``."""
    _check_dims(d, m)
    return info_matrix_from(d.items, d.weights, m)


def log_det(M: InfoMatrix) -> float:
    """Natural log of det M; ``-inf`` flags a singular matrix."""
    return M.logdet


def sensitivities(items, d: Design, m: ModelSpec,
                  M: InfoMatrix | None = None) -> np.ndarray:
    """Vectorised ``q(x)^-1 f(x)^T M(d)^-1 f(x)`` over the rows of ``items``."""
    _check_dims(d, m)
    if M is None:
        M = info_matrix(d, m)
    F = regression_matrix(items)
    quad = np.einsum("ij,ji->i", F, M.solve(F.T))
    return quad / m.inverse_weights(items)


def sensitivity(x, d: Design, m: ModelSpec) -> float:
    item = np.array([as_item(x, m.k)])
    return float(sensitivities(item, d, m)[0])


def closed_form_sensitivity_xi0(x, s: StandardizedParams) -> float:
    """Sensitivity of the design on the basic and one-feature items.

    Uses the factorisation of its information matrix, so no matrix is
    inverted: ``(K+1) q(x)^-1 ((|x|-1)^2 q_0 + sum_k x_k q_k)``.
    """
    item = as_item(x, s.k)
    q0 = s.b_scale + 1.0
    qk = s.b_scale + s.difficulties
    m = sum(item)
    inner = (m - 1) ** 2 * q0 + float(np.dot(item, qk))
    return (s.k + 1) * inner / standardized_inverse_weight(item, s)


def xi0(k: int) -> Design:
    """Equal weights on the basic item and the ``k`` one-feature items."""
    if k < 1:
        raise DesignError(f"K must be >= 1, got {k}")
    items = np.vstack([np.zeros((1, k), dtype=np.int8),
                       np.eye(k, dtype=np.int8)])
    return Design.approximate(items, np.full(k + 1, 1.0 / (k + 1)))


def full_factorial(k: int) -> Design:
    """Uniform weights on all ``2**k`` items, lexicographic order."""
    if not 1 <= k <= MAX_K:
        raise DesignError(f"K must be in [1, {MAX_K}], got {k}")
    return Design.approximate(vertices(k), np.full(2 ** k, 2.0 ** -k))
