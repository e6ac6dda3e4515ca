"""Closed-form optimality conditions, equivalence-theorem certificates and
D-efficiencies.

The pairwise and vertex-wise conditions below assume nonpositive effects
(adding a feature never makes an item easier); they reject anything else.
The numerical certificate ``kw_certify`` has no such restriction.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np

from .fisher import (Design, SingularInformationError, full_factorial,
                     info_matrix, sensitivities, xi0)
from .model import MAX_K, ModelError, ModelSpec, StandardizedParams, vertices

DEFAULT_KW_TOL = 1e-6


class AssumptionError(ModelError):
    """A positive effect was passed to a check that assumes ``beta_k <= 0``."""


@dataclass(frozen=True)
class Violation:
    witness: tuple[int, ...]
    slack: float
    pair: tuple[int, int] | None = None  # 1-based feature indices


@dataclass(frozen=True)
class ConditionReport:
    holds: bool
    violations: list[Violation]
    checked_count: int
    # signed margin of the tightest checked inequality; <= 0 means satisfied
    max_slack: float = -math.inf

    def to_dict(self) -> dict:
        d = asdict(self)
        d["violations"] = [
            {k: (list(v) if isinstance(v, tuple) else v)
             for k, v in asdict(viol).items() if v is not None}
            for viol in self.violations]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class CertificationReport:
    max_sensitivity: float
    worst_item: tuple[int, ...]
    threshold: float
    optimal: bool
    per_support: list[tuple[tuple[int, ...], float]] = field(default_factory=list)

    @property
    def p(self) -> int:
        return len(self.worst_item) + 1

    def to_dict(self) -> dict:
        return {
            "max_sensitivity": self.max_sensitivity,
            "worst_item": list(self.worst_item),
            "threshold": self.threshold,
            "optimal": self.optimal,
            "per_support": [{"item": list(x), "sensitivity": s}
                            for x, s in self.per_support],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _require_nonpositive(s: StandardizedParams):
    bad = [i + 1 for i, e in enumerate(s.effects) if e > 0]
    if bad:
        raise AssumptionError(
            f"effects must be <= 0 for the closed-form conditions; "
            f"features {bad} are positive")


def theorem1_check(s: StandardizedParams) -> ConditionReport:
    """Pairwise conditions ``q_0 + q_j + q_k <= q_jk`` for all ``j < k``.

    These hold exactly when the design on the basic and one-feature items is
    locally D-optimal.
    """
    _require_nonpositive(s)
    b = s.b_scale
    v = s.difficulties
    violations = []
    worst = -math.inf
    for j, k in combinations(range(s.k), 2):
        slack = (b + 1) + (b + v[j]) + (b + v[k]) - (b + v[j] * v[k])
        worst = max(worst, slack)
        if slack > 0:
            witness = [0] * s.k
            witness[j] = witness[k] = 1
            violations.append(Violation(tuple(witness), float(slack), (j + 1, k + 1)))
    n_pairs = s.k * (s.k - 1) // 2
    return ConditionReport(not violations, violations, n_pairs, float(worst))


def lemma1_check(s: StandardizedParams) -> ConditionReport:
    """``(|x|-1)^2 q_0 + sum_k x_k q_k <= q(x)`` on every item with ``|x| >= 2``.

    Sufficient for optimality of the same design; scans ``2**K - K - 1`` items.
    """
    _require_nonpositive(s)
    if s.k > MAX_K:
        raise ModelError(f"K={s.k} exceeds the enumeration cap {MAX_K}")
    if s.k < 2:
        return ConditionReport(True, [], 0)
    b = s.b_scale
    X = vertices(s.k)
    size = X.sum(axis=1)
    X = X[size >= 2]
    size = size[size >= 2]
    lhs = (size - 1.0) ** 2 * (b + 1) + X @ (b + s.difficulties)
    rhs = b + np.exp(-(X @ np.asarray(s.effects)))
    slack = lhs - rhs
    bad = np.flatnonzero(slack > 0)
    violations = [Violation(tuple(int(v) for v in X[i]), float(slack[i]))
                  for i in bad]
    return ConditionReport(not violations, violations, len(X), float(slack.max()))


def boundary_curve(b: float, v_grid) -> list[tuple[float, float]]:
    """Smallest difficulty multiplier ``u`` of feature j given ``v`` of feature k.

    ``u_min(v) = (v + 1 + 2b) / (v - 1)``; the pair satisfies the pairwise
    condition iff ``u >= u_min(v)``.  Grid values ``v <= 1`` get ``inf``.
    """
    if b < 0:
        raise ValueError(f"b must be >= 0, got {b}")
    out = []
    for v in v_grid:
        v = float(v)
        out.append((v, (v + 1 + 2 * b) / (v - 1) if v > 1 else math.inf))
    return out


def equal_effect_threshold(b: float = 0.0) -> float:
    """Largest easiness factor ``exp(beta)`` for which equal effects satisfy
    the pairwise condition; ``sqrt(2) - 1`` in the Poisson case."""
    u = 1 + math.sqrt(2 + 2 * b)  # root of u^2 - 2u - (1 + 2b) = 0
    return 1.0 / u


def kw_certify(d: Design, m: ModelSpec, tol: float = DEFAULT_KW_TOL
               ) -> CertificationReport:
    """Scan all ``2**K`` items and compare the sensitivity with ``p(1 + tol)``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    M = info_matrix(d, m)
    if M.singular:
        raise SingularInformationError(
            f"information matrix is singular (cond={M.cond:.3g})")
    X = vertices(m.k)
    sens = sensitivities(X, d, m, M)
    i = int(np.argmax(sens))  # first maximum is the lexicographically smallest
    threshold = m.p * (1 + tol)
    per_support = list(zip(d.support(),
                           sensitivities(d.items, d, m, M).tolist()))
    return CertificationReport(float(sens[i]), tuple(int(v) for v in X[i]),
                               threshold, bool(sens[i] <= threshold),
                               per_support)


def d_efficiency(d: Design, d_opt: Design, m: ModelSpec,
                 check_reference: bool = True) -> float:
    """``(det M(d) / det M(d_opt)) ** (1/p)``."""
    M = info_matrix(d, m)
    M_opt = info_matrix(d_opt, m)
    for name, mat in (("design", M), ("reference design", M_opt)):
        if mat.singular:
            raise SingularInformationError(f"{name} has a singular information matrix")
    if check_reference and not kw_certify(d_opt, m).optimal:
        warnings.warn("reference design does not pass the equivalence-theorem "
                      "certificate; efficiency may exceed 1", stacklevel=2)
    return math.exp((M.logdet - M_opt.logdet) / m.p)


def xi0_indifference_closed_form(k: int) -> float:
    """Published minimal efficiency ``2**((K+2)/(K+1)) / (K+1)``; reported
    for comparison only."""
    return 2 ** ((k + 2) / (k + 1)) / (k + 1)


def xi0_indifference_oracle(k: int) -> float:
    """``(2**(2K) / (K+1)**(K+1)) ** (1/(K+1))`` from the two determinants."""
    return math.exp((2 * k * math.log(2) - (k + 1) * math.log(k + 1)) / (k + 1))


@dataclass(frozen=True)
class IndifferenceEfficiency:
    k: int
    numeric: float
    closed_form: float
    oracle: float
    discrepant: bool

    def __float__(self):
        return self.numeric

    def to_dict(self) -> dict:
        return asdict(self)

    def lines(self) -> list[str]:
        flag = "DISCREPANCY" if self.discrepant else "agree"
        return [f"K={self.k} xi0 efficiency at indifference: "
                f"numeric={self.numeric:.4f} published={self.closed_form:.4f} "
                f"oracle={self.oracle:.4f} [{flag}]"]


def indifference_efficiency_xi0(k: int) -> IndifferenceEfficiency:
    """Efficiency of ``xi0(k)`` against the full factorial at ``beta = 0``.

    Computed from the information matrices; the published closed form is
    carried alongside and flagged when the two disagree beyond 5e-4.
    """
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    m = ModelSpec.poisson([0.0] * k)
    numeric = d_efficiency(xi0(k), full_factorial(k), m, check_reference=False)
    closed = xi0_indifference_closed_form(k)
    return IndifferenceEfficiency(k, numeric, closed, xi0_indifference_oracle(k),
                                  abs(numeric - closed) > 5e-4)


def fullfactorial_min_efficiency(k: int) -> float:
    """``(K+1) / 2**K``, the limit for strongly negative effects."""
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    return (k + 1) / 2 ** k
