"""Numerical locally D-optimal designs over the binary hypercube, rounding to
exact designs, and design comparison tables."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .fisher import (Design, DesignError, SingularInformationError,
                     full_factorial, info_matrix, xi0)
from .model import MAX_K, ModelError, ModelSpec, regression_matrix, vertices
from .optimality import CertificationReport, kw_certify

__all__ = ["OptimizeReport", "optimize", "round_to_exact", "compare_designs",
           "xi0", "full_factorial", "CompareRow", "design_d1", "design_d2"]

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_PRUNE = 1e-8
DEFAULT_MAX_ITER = 100_000
START_FLOOR = 1e-6
SUPPORT_GAP = 10.0  # in units of tol
NEWTON_AFTER = 1000
NEWTON_MAX_POINTS = 512
NEWTON_MAX_STEPS = 50


@dataclass
class OptimizeReport:
    design: Design
    iterations: int
    final_logdet: float
    certification: CertificationReport
    converged: bool
    history: list[tuple[int, float, float]] | None = None

    def to_dict(self) -> dict:
        return {
            "design": self.design.to_dict(),
            "iterations": self.iterations,
            "final_logdet": self.final_logdet,
            "converged": self.converged,
            "certification": self.certification.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def history_csv(self) -> str:
        rows = ["iteration,logdet,max_sensitivity"]
        rows += [f"{i},{ld!r},{s!r}" for i, ld, s in self.history or []]
        return "\n".join(rows) + "\n"


def _start_weights(X, m: ModelSpec, start: Design | None) -> np.ndarray:
    if start is None:
        return np.full(len(X), 1.0 / len(X))
    if start.k != m.k:
        raise ModelError(f"start design has K={start.k}, model has K={m.k}")
    if info_matrix(start, m).singular:
        raise SingularInformationError("start design has a singular information matrix")
    index = {tuple(r): i for i, r in enumerate(X.tolist())}
    w = np.zeros(len(X))
    for x, wx in zip(start.support(), start.weights):
        w[index[x]] = wx
    # the multiplicative update never revives a zero weight
    w = np.maximum(w, START_FLOOR)
    return w / w.sum()


def _screen_bound(eps: float, p: int) -> float:
    """Points with sensitivity below this cannot support any D-optimal design.

    Safe deletion rule for D-optimality with ``eps = max d - p``
    (Harman and Pronzato, 2007).
    """
    return p * (1 + eps / 2 - math.sqrt(eps * (4 + eps - 4 / p)) / 2)


def _exchange(w, d, Z, lam, active):
    """Move weight from the weakest support point to the strongest vertex.

    The step maximises log det along ``e_k - e_l``; with
    ``d_kl = sqrt(lam_k lam_l) f_k' M^-1 f_l`` it is
    ``(d_k - d_l) / (2 (d_k d_l - d_kl^2))`` clipped to the feasible range.
    """
    k = int(np.argmax(d))
    idx = np.flatnonzero(active)
    l = int(idx[np.argmin(d[idx])])
    if k == l:
        return w
    dkl = math.sqrt(lam[k] * lam[l]) * float(Z[:, k] @ Z[:, l])
    denom = 2.0 * (d[k] * d[l] - dkl * dkl)
    step = w[l] if denom <= 0 else min(w[l], max(-w[k], (d[k] - d[l]) / denom))
    w = w.copy()
    w[k] += step
    w[l] -= step
    return w


def _logdet(w, F, lam) -> float:
    sign, ld = np.linalg.slogdet((F * (w * lam)[:, None]).T @ F)
    return ld if sign > 0 else -math.inf


def _barrier_polish(w, G, p, tol):
    """Log-barrier Newton method for max log det on the weight simplex.

    Used when the first-order iteration stalls, typically because the
    optimal weights are not unique.  On the central path
    ``d_i = p + mu N - mu / w_i``, so ``mu <= tol p / (10 N)`` certifies the
    result.  Returns new weights and the number of Newton steps taken.
    """
    n = len(w)
    w = 0.9 * w / w.sum() + 0.1 / n
    mu = 1e-3
    mu_final = tol * p / (10 * n)
    steps = 0

    def objective(v):
        sign, ld = np.linalg.slogdet((G * v[:, None]).T @ G)
        return ld + mu * np.log(v).sum() if sign > 0 else -np.inf

    while True:
        for _ in range(NEWTON_MAX_STEPS):
            Minv = np.linalg.inv((G * w[:, None]).T @ G)
            A = G @ Minv @ G.T
            grad = np.diag(A) + mu / w
            H = A * A + np.diag(mu / w ** 2)
            c = np.linalg.cholesky(H)
            a = np.linalg.solve(c.T, np.linalg.solve(c, grad))
            b = np.linalg.solve(c.T, np.linalg.solve(c, np.ones(n)))
            delta = a - (a.sum() / b.sum()) * b
            decrement = float(delta @ (H @ delta))
            steps += 1
            if decrement < 1e-20:
                break
            neg = delta < 0
            t = min(1.0, 0.99 * float(np.min(-w[neg] / delta[neg]))) if neg.any() else 1.0
            f0 = objective(w)
            while t > 1e-12 and objective(w + t * delta) < f0 + 0.25 * t * float(grad @ delta):
                t /= 2
            w = w + t * delta
            if decrement < 1e-14:
                break
        if mu <= mu_final:
            return w / w.sum(), steps
        mu = max(mu / 10, mu_final)


def optimize(m: ModelSpec, max_iter: int = DEFAULT_MAX_ITER,
             tol: float = DEFAULT_TOL, prune_threshold: float = DEFAULT_PRUNE,
             start_design: Design | None = None,
             record_history: bool = False) -> OptimizeReport:
    """Multiplicative weight iteration ``w_i <- w_i d(x_i) / p`` on all vertices.

    Every other iteration is a vertex-exchange step instead.  Stops once
    every vertex has sensitivity at most ``p (1 + tol)``.  Weights below
    ``prune_threshold`` are dropped; at a certified iterate, support points
    with sensitivity below ``p (1 - SUPPORT_GAP tol)`` are dropped too when
    that does not lower log det, and the iteration resumes.
    A run still going after ``NEWTON_AFTER`` iterations switches once to a
    barrier Newton polish over the vertices the deletion bound keeps, which
    handles optima with non-unique weights.
    """
    if m.k > MAX_K:
        raise ModelError(f"K={m.k} exceeds the enumeration cap {MAX_K}")
    X = vertices(m.k)
    F = regression_matrix(X)
    lam = 1.0 / m.inverse_weights(X)
    G = F * np.sqrt(lam)[:, None]
    p = m.p
    w = _start_weights(X, m, start_design)
    active = w > 0
    history = [] if record_history else None
    bound = p * (1 + tol)

    it = 0
    converged = False
    polished = False
    while True:
        Fa = F[active]
        M = (Fa * (w[active] * lam[active])[:, None]).T @ Fa
        try:
            L = np.linalg.cholesky(M)
        except np.linalg.LinAlgError as exc:
            raise SingularInformationError(
                f"information matrix became singular at iteration {it}") from exc
        logdet = 2.0 * np.log(np.diag(L)).sum()
        # d(x) = lam(x) |L^-1 f(x)|^2
        Z = np.linalg.solve(L, F.T)
        d = lam * np.einsum("ij,ij->j", Z, Z)
        dmax = d.max()
        if history is not None:
            history.append((it, float(logdet), float(dmax)))
        if dmax <= bound:
            # optimal support points have d = p; the rest are dropped
            stale = active & (d < p * (1 - SUPPORT_GAP * tol))
            if not stale.any():
                converged = True
                break
            trial = np.where(stale, 0.0, w)
            trial /= trial.sum()
            # only drop when it does not cost log det; otherwise keep iterating
            if _logdet(trial, F, lam) >= logdet:
                w, active = trial, trial > 0
                continue
        if it >= max_iter:
            break
        if it >= NEWTON_AFTER and not polished:
            polished = True
            cand = d >= _screen_bound(dmax - p, p)
            if cand.sum() <= NEWTON_MAX_POINTS:
                wc, steps = _barrier_polish(w[cand], G[cand], p, tol)
                trial = np.zeros_like(w)
                trial[cand] = np.where(wc < prune_threshold, 0.0, wc)
                trial /= trial.sum()
                it += steps
                if _logdet(trial, F, lam) >= logdet:
                    w, active = trial, trial > 0
                continue
        if it % 2:
            w = _exchange(w, d, Z, lam, active)
        else:
            w = w * d / p
        w[active & (w < prune_threshold)] = 0.0
        active = w > 0
        w /= w.sum()
        it += 1

    if not converged:
        log.warning("multiplicative algorithm stopped after %d iterations, "
                    "max sensitivity %.6g > %.6g", it, dmax, bound)
    keep = np.flatnonzero(active)
    design = Design.approximate(X[keep], w[keep] / w[keep].sum())
    cert = kw_certify(design, m, tol)
    return OptimizeReport(design, it, float(info_matrix(design, m).logdet), cert,
                          converged and cert.optimal, history)


def round_to_exact(d: Design, n: int) -> Design:
    """Efficient rounding of approximate weights to ``n`` whole replications.

    Start from ``ceil((n - s/2) w_i)`` for support size ``s``, then add to the
    point with smallest ``n_i / w_i`` or remove from the point with largest
    ``(n_i - 1) / w_i`` until the total is ``n``.  Ties go to the larger
    weight, then to the lexicographically smaller item.
    """
    s = d.size
    if n < s:
        raise DesignError(f"n={n} is smaller than the support size {s}")
    w = np.asarray(d.weights, dtype=float)
    if np.any(w <= 0):
        raise DesignError("rounding needs strictly positive weights")
    counts = np.ceil((n - s / 2) * w).astype(np.int64)
    counts = np.maximum(counts, 1)
    # ascending rank for tie-breaking: larger weight first, then item order
    order = sorted(range(s), key=lambda i: (-w[i], d.support()[i]))
    rank = np.empty(s, dtype=np.int64)
    rank[order] = np.arange(s)
    while counts.sum() < n:
        ratio = counts / w
        cand = np.flatnonzero(ratio == ratio.min())
        counts[cand[np.argmin(rank[cand])]] += 1
    while counts.sum() > n:
        ratio = np.where(counts > 1, (counts - 1) / w, -np.inf)
        cand = np.flatnonzero(ratio == ratio.max())
        counts[cand[np.argmin(rank[cand])]] -= 1
    return Design.exact(d.items, counts)


@dataclass(frozen=True)
class CompareRow:
    id: str
    logdet: float
    efficiency: float
    singular: bool = False
    best: bool = field(default=False)


def compare_designs(designs, m: ModelSpec, ids=None) -> list[CompareRow]:
    """Log-determinants and D-efficiencies relative to the best design listed."""
    designs = list(designs)
    ids = list(ids) if ids is not None else [f"d{i}" for i in range(len(designs))]
    if len(ids) != len(designs):
        raise ValueError("one id per design is required")
    logdets = []
    for d in designs:
        M = info_matrix(d, m)
        logdets.append(M.logdet)
    finite = [ld for ld in logdets if math.isfinite(ld)]
    best = max(finite) if finite else -math.inf
    rows = []
    for name, ld in zip(ids, logdets):
        if not math.isfinite(ld):
            rows.append(CompareRow(name, ld, math.nan, singular=True))
            continue
        rows.append(CompareRow(name, ld, math.exp((ld - best) / m.p),
                               best=ld == best))
    return rows


def design_d1() -> Design:
    """Full factorial on three features, one replicate of each item."""
    return Design.exact(vertices(3), np.ones(8, dtype=int))


def design_d2() -> Design:
    """The basic and one-feature items, each administered twice."""
    return Design.exact(xi0(3).items, np.full(4, 2))


PUBLISHED_VOLUME_RATIO = 2.7


@dataclass(frozen=True)
class VolumeRatioReport:
    det_ratio: float
    volume_ratio: float
    published: float = PUBLISHED_VOLUME_RATIO

    @property
    def discrepant(self) -> bool:
        return abs(self.volume_ratio - self.published) > 0.05

    def lines(self) -> list[str]:
        flag = "DISCREPANCY" if self.discrepant else "agree"
        return [f"D2 vs D1 linear model: det ratio={self.det_ratio:.4f} "
                f"volume ratio={self.volume_ratio:.4f} "
                f"published={self.published} [{flag}]"]


def d1_d2_volume_ratio() -> VolumeRatioReport:
    """Confidence-ellipsoid volume ratio of D2 to D1 under a linear model.

    A Poisson model with zero coefficients and unit ability has ``q = 1``
    everywhere, which is exactly the homoscedastic linear model.
    """
    m = ModelSpec.poisson([0.0, 0.0, 0.0])
    ld1 = info_matrix(design_d1(), m).logdet
    ld2 = info_matrix(design_d2(), m).logdet
    ratio = math.exp(ld1 - ld2)
    return VolumeRatioReport(ratio, math.sqrt(ratio))
