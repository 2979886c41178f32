"""Confidence intervals for linear functionals of a constrained Gaussian model.

Five constructions over a whitened observation model y = K lam + noise,
noise ~ N(0, I), a functional h, and polyhedral constraints A lam <= b:

* OSB: extremize h'lam over the slack-inflated residual ball intersected
  with the constraints (primal form, plus an independent dual form used as
  a cross-check).
* PO: fix dual-feasible affine rules before seeing data, chosen to minimize
  the Bayes risk under a prior mean; evaluation is closed form.
* LS: classical least-squares pivot interval, full column rank only.
* SSB: extremize h'lam over the chi-squared residual ball.
* Minimax half-width bounds via the modulus of continuity.

All optimization goes through the canonical form in :mod:`unfoldci.program`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr, solve_triangular
from scipy.stats import chi2, norm

from .constraints import PolyhedralConstraints
from .model import GaussianModel, ResponseMatrix
from .program import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    BallConstraint,
    ConicProgram,
    NormTerm,
    SolverSettings,
    solve,
)


class RankDeficiencyError(ValueError):
    """Design matrix lacks full column rank where an estimator requires it."""


class InfeasibleRegionError(RuntimeError):
    """The residual ball misses the constraint polyhedron entirely.

    Carries the slack ``s2`` so callers can see how far away the ball was.
    """

    def __init__(self, message: str, s2: float):
        super().__init__(message)
        self.s2 = s2


class DualInfeasibilityError(RuntimeError):
    """No dual-feasible affine rule exists for this functional."""


class SolverFailureError(RuntimeError):
    """The backend returned a status the calling method cannot act on."""


# ---------------------------------------------------------------------------
# quantiles


def z_quantile(p: float) -> float:
    """Standard normal quantile."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    return float(norm.ppf(p))


def chi2_quantile(p: float, dof: int) -> float:
    """Chi-squared quantile with ``dof`` degrees of freedom."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    if dof < 1:
        raise ValueError("dof must be a positive integer")
    return float(chi2.ppf(p, dof))


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class FunctionalSpec:
    """Linear functional h'lam with a human-readable label."""

    h: np.ndarray
    label: str = ""

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if h.ndim != 1 or not np.all(np.isfinite(h)):
            raise ValueError("h must be a finite vector")
        if not np.any(h):
            raise ValueError("h must not be identically zero")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)


@dataclass
class Diagnostics:
    """Per-interval bookkeeping.

    ``slack_s2`` and ``psi2`` apply to the residual-ball methods;
    ``pathological`` can be true only for PO intervals; ``dual_vars``
    optionally carries optimizer variables for inspection.
    """

    slack_s2: float | None = None
    psi2: float | None = None
    pathological: bool = False
    dual_vars: dict | None = None


@dataclass
class IntervalResult:
    """One confidence interval, possibly with infinite endpoints."""

    method: str
    functional: str
    alpha: float
    lower: float
    upper: float
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def covers(self, theta: float) -> bool:
        return self.lower <= theta <= self.upper


@dataclass
class Prior:
    """Prior information entering only through its mean vector."""

    mean: np.ndarray
    label: str = ""

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        if mean.ndim != 1 or not np.all(np.isfinite(mean)):
            raise ValueError("prior mean must be a finite vector")
        self.mean = mean


@dataclass
class DecisionRule:
    """Fixed affine interval rule with guaranteed coverage.

    The rule was chosen before seeing data; evaluating it on an observation
    is closed-form arithmetic. ``offset_lower``/``offset_upper`` cache b'c
    for the two endpoints so evaluation needs no constraint object.
    """

    w_lower: np.ndarray
    w_upper: np.ndarray
    c_lower: np.ndarray
    c_upper: np.ndarray
    alpha: float
    provenance: str = ""
    functional: str = ""
    offset_lower: float = 0.0
    offset_upper: float = 0.0

    def __post_init__(self):
        for name in ("w_lower", "w_upper", "c_lower", "c_upper"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.ndim != 1 or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be a finite vector")
            setattr(self, name, v)
        if self.w_lower.shape != self.w_upper.shape:
            raise ValueError("w_lower and w_upper must have equal length")
        if self.c_lower.shape != self.c_upper.shape:
            raise ValueError("c_lower and c_upper must have equal length")
        for name in ("c_lower", "c_upper"):
            c = getattr(self, name)
            if np.any(c < -1e-6):
                raise ValueError(f"{name} must be nonnegative")
            setattr(self, name, np.maximum(c, 0.0))
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")

    def to_json(self) -> dict:
        return {
            "w_lower": self.w_lower.tolist(),
            "w_upper": self.w_upper.tolist(),
            "c_lower": self.c_lower.tolist(),
            "c_upper": self.c_upper.tolist(),
            "alpha": self.alpha,
            "provenance": self.provenance,
            "functional": self.functional,
            "offset_lower": self.offset_lower,
            "offset_upper": self.offset_upper,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DecisionRule":
        return cls(
            np.asarray(d["w_lower"], dtype=float),
            np.asarray(d["w_upper"], dtype=float),
            np.asarray(d["c_lower"], dtype=float),
            np.asarray(d["c_upper"], dtype=float),
            float(d["alpha"]),
            d.get("provenance", ""),
            d.get("functional", ""),
            float(d.get("offset_lower", 0.0)),
            float(d.get("offset_upper", 0.0)),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "DecisionRule":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# ---------------------------------------------------------------------------
# helpers


def _design(model) -> np.ndarray:
    """Whitened design matrix from a model, response matrix, or array."""
    if isinstance(model, GaussianModel):
        if not model.is_white:
            raise ValueError("model must be whitened first")
        return model.K
    if isinstance(model, ResponseMatrix):
        return model.entries
    return np.asarray(model, dtype=float)


def _require_white(model: GaussianModel) -> GaussianModel:
    if not isinstance(model, GaussianModel):
        raise TypeError("expected a GaussianModel")
    if not model.is_white:
        raise ValueError("model must be whitened first")
    return model


def _functional(h) -> FunctionalSpec:
    return h if isinstance(h, FunctionalSpec) else FunctionalSpec(np.asarray(h, dtype=float))


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")


# ---------------------------------------------------------------------------
# slack and residual-ball intervals


def slack(model: GaussianModel, constraints: PolyhedralConstraints,
          settings: SolverSettings | None = None) -> float:
    """Minimal squared residual over the constraint polyhedron.

    s2 = min ||y - K lam||^2 subject to A lam <= b. Zero whenever the data
    are exactly reproducible by a feasible parameter.
    """
    model = _require_white(model)
    m, n = model.m, model.n
    # x = (lam, r) with r = y - K lam; minimize ||r||
    E = np.hstack([model.K, np.eye(m)])
    prog = ConicProgram(
        sense="min",
        c=np.zeros(n + m),
        equalities=(E, model.y.copy()),
        inequalities=_ineq_block(constraints, extra=m),
        norm_terms=[NormTerm(1.0, np.arange(n, n + m))],
    )
    sol = solve(prog, settings)
    if sol.status == INFEASIBLE:
        raise InfeasibleRegionError("constraint polyhedron is empty", np.inf)
    if sol.status != OPTIMAL:
        raise SolverFailureError(f"slack computation ended with status {sol.status}")
    val = max(sol.objective_value, 0.0)
    return val * val


def _ineq_block(constraints: PolyhedralConstraints, extra: int = 0,
                lead: int = 0):
    """Constraint rows padded with zero columns for auxiliary variables."""
    if constraints.q == 0:
        return None
    blocks = [constraints.A]
    if lead:
        blocks.insert(0, np.zeros((constraints.q, lead)))
    if extra:
        blocks.append(np.zeros((constraints.q, extra)))
    return (np.hstack(blocks) if len(blocks) > 1 else constraints.A,
            constraints.b.copy())


def _ball_extremes(model: GaussianModel, h: np.ndarray,
                   constraints: PolyhedralConstraints, radius_sq: float,
                   settings: SolverSettings | None):
    """Min and max of h'lam over the residual ball cut by the constraints."""
    ball = BallConstraint(model.K, model.y.copy(), radius_sq)
    ineq = None if constraints.q == 0 else (constraints.A, constraints.b.copy())
    sols = []
    for sense in ("min", "max"):
        prog = ConicProgram(sense=sense, c=h.copy(),
                            ball_constraints=[ball], inequalities=ineq)
        sols.append(solve(prog, settings))
    return sols


def _endpoint(sol, side: str, context: str) -> float:
    """Extract a finite or infinite endpoint from a solve outcome."""
    if sol.status == OPTIMAL:
        return sol.objective_value
    if sol.status == UNBOUNDED:
        return -np.inf if side == "lower" else np.inf
    raise SolverFailureError(f"{context} ({side}) ended with status {sol.status}")


def osb_interval(model: GaussianModel, h, constraints: PolyhedralConstraints,
                 alpha: float, settings: SolverSettings | None = None,
                 slack_s2: float | None = None) -> IntervalResult:
    """Interval from the slack-inflated residual ball (primal form).

    The feasible set is all constraint-satisfying lam with
    ||y - K lam||^2 <= psi2, psi2 = z_{1-alpha/2}^2 + s2; the endpoints
    extremize h'lam over it. The set always contains the slack minimizer,
    so the interval is never empty, though an endpoint can be infinite
    when h is unbounded over the feasible set.
    """
    model = _require_white(model)
    spec = _functional(h)
    _check_alpha(alpha)
    s2 = slack(model, constraints, settings) if slack_s2 is None else float(slack_s2)
    z = z_quantile(1.0 - alpha / 2.0)
    psi2 = z * z + s2
    lo_sol, up_sol = _ball_extremes(model, spec.h, constraints, psi2, settings)
    lower = _endpoint(lo_sol, "lower", "residual-ball interval")
    upper = _endpoint(up_sol, "upper", "residual-ball interval")
    return IntervalResult("OSB", spec.label, alpha, lower, upper,
                          Diagnostics(slack_s2=s2, psi2=psi2))


def osb_dual_interval(model: GaussianModel, h, constraints: PolyhedralConstraints,
                      alpha: float, settings: SolverSettings | None = None,
                      slack_s2: float | None = None) -> IntervalResult:
    """Dual form of :func:`osb_interval`; agrees by strong duality.

    Kept as an independent computational path: it shares no geometry code
    with the primal, so agreement between the two validates both.
    """
    model = _require_white(model)
    spec = _functional(h)
    _check_alpha(alpha)
    s2 = slack(model, constraints, settings) if slack_s2 is None else float(slack_s2)
    z = z_quantile(1.0 - alpha / 2.0)
    psi2 = z * z + s2
    psi = np.sqrt(psi2)

    lo_sol = solve(_dual_program(model.K, model.y, spec.h, constraints, psi, "lower"),
                   settings)
    up_sol = solve(_dual_program(model.K, model.y, spec.h, constraints, psi, "upper"),
                   settings)
    # an infeasible dual certifies an unbounded primal endpoint
    lower = -np.inf if lo_sol.status == INFEASIBLE else _endpoint(lo_sol, "lower", "dual interval")
    upper = np.inf if up_sol.status == INFEASIBLE else _endpoint(up_sol, "upper", "dual interval")
    dual_vars = None
    if lo_sol.x is not None and up_sol.x is not None:
        m = model.m
        dual_vars = {"w_lower": lo_sol.x[:m], "c_lower": lo_sol.x[m:],
                     "w_upper": up_sol.x[:m], "c_upper": up_sol.x[m:]}
    return IntervalResult("OSB", spec.label, alpha, lower, upper,
                          Diagnostics(slack_s2=s2, psi2=psi2, dual_vars=dual_vars))


def _dual_program(K: np.ndarray, target: np.ndarray, h: np.ndarray,
                  constraints: PolyhedralConstraints, scale: float,
                  side: str) -> tuple[ConicProgram, float]:
    """Shared builder for the dual-endpoint programs.

    lower: maximize w'target - scale ||w|| - b'c  s.t.  K'w - A'c = h, c >= 0
    upper: minimize w'target + scale ||w|| + b'c  s.t.  K'w + A'c = h, c >= 0

    The OSB dual uses target = y and scale = psi; the rule optimization
    uses target = K m (prior predictive mean) and scale = z.

    The objective is rescaled by the returned factor (the optimizer is
    unchanged; the optimal value is multiplied by it) so that a large data
    scale cannot starve the constraint residuals of solver precision.
    """
    m, n = K.shape
    q = constraints.q
    obj_scale = 1.0 / max(1.0, float(np.abs(target).max(initial=0.0)))
    asign = -1.0 if side == "lower" else 1.0
    if q:
        E = np.hstack([K.T, asign * constraints.A.T])
        c_lin = np.concatenate([target, asign * constraints.b]) * obj_scale
        G = np.hstack([np.zeros((q, m)), -np.eye(q)])
        ineq = (G, np.zeros(q))
    else:
        E = K.T
        c_lin = target * obj_scale
        ineq = None
    sense = "max" if side == "lower" else "min"
    weight = (-scale if side == "lower" else scale) * obj_scale
    prog = ConicProgram(sense=sense, c=c_lin, equalities=(E, h.copy()),
                        inequalities=ineq,
                        norm_terms=[NormTerm(weight, np.arange(m))])
    return prog, obj_scale


# ---------------------------------------------------------------------------
# prior-optimized rules


def po_rule(model, h, constraints: PolyhedralConstraints, prior: Prior,
            alpha: float, settings: SolverSettings | None = None) -> DecisionRule:
    """Bayes-risk-optimal affine rule over the coverage-safe decision space.

    Maximizes the expected lower endpoint and minimizes the expected upper
    endpoint under the prior mean, as two independent solves. The returned
    rule depends on the design, functional, constraints, prior, and level;
    never on observed data.
    """
    K = _design(model)
    spec = _functional(h)
    _check_alpha(alpha)
    if prior.mean.shape != (K.shape[1],):
        raise ValueError("prior mean length must match the number of true bins")
    z = z_quantile(1.0 - alpha / 2.0)
    target = K @ prior.mean

    m = K.shape[0]
    out = {}
    for side in ("lower", "upper"):
        sol = solve(_dual_program(K, target, spec.h, constraints, z, side), settings)
        if sol.status == INFEASIBLE:
            raise DualInfeasibilityError(
                f"no dual-feasible affine rule certifies this functional ({side} endpoint)")
        if sol.status != OPTIMAL:
            raise SolverFailureError(f"rule optimization ({side}) ended with status {sol.status}")
        out[side] = (sol.x[:m], sol.x[m:])

    w_lo, c_lo = out["lower"]
    w_up, c_up = out["upper"]
    return DecisionRule(
        w_lower=w_lo, w_upper=w_up, c_lower=c_lo, c_upper=c_up,
        alpha=alpha, provenance=prior.label, functional=spec.label,
        offset_lower=float(constraints.b @ c_lo) if constraints.q else 0.0,
        offset_upper=float(constraints.b @ c_up) if constraints.q else 0.0,
    )


def po_interval(rule: DecisionRule, y: np.ndarray) -> IntervalResult:
    """Evaluate a fixed rule on an observation. Closed form, no solve.

    The endpoints are affine in y; nothing forces lower <= upper, and the
    rare empty outcome is flagged as pathological rather than repaired.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != rule.w_lower.shape:
        raise ValueError("y length must match the rule's data dimension")
    z = z_quantile(1.0 - rule.alpha / 2.0)
    lower = float(rule.w_lower @ y) - z * float(np.linalg.norm(rule.w_lower)) - rule.offset_lower
    upper = float(rule.w_upper @ y) + z * float(np.linalg.norm(rule.w_upper)) + rule.offset_upper
    return IntervalResult("PO", rule.functional, rule.alpha, lower, upper,
                          Diagnostics(pathological=lower > upper))


def po_expected_width(rule: DecisionRule, smeared_mean: np.ndarray) -> float:
    """Expected interval width when the data mean is ``smeared_mean``."""
    mu = np.asarray(smeared_mean, dtype=float)
    z = z_quantile(1.0 - rule.alpha / 2.0)
    return (float((rule.w_upper - rule.w_lower) @ mu)
            + z * float(np.linalg.norm(rule.w_upper) + np.linalg.norm(rule.w_lower))
            + rule.offset_upper + rule.offset_lower)


def dual_feasibility_check(rule: DecisionRule, model, h,
                           constraints: PolyhedralConstraints,
                           tol: float = 1e-6) -> tuple[bool, float]:
    """Verify the rule's membership in the coverage-safe decision space.

    Returns (ok, worst violation) over the two equality systems and the
    sign constraints on c.
    """
    K = _design(model)
    spec = _functional(h)
    A = constraints.A
    res_lo = spec.h - K.T @ rule.w_lower
    res_up = spec.h - K.T @ rule.w_upper
    if constraints.q:
        res_lo = res_lo + A.T @ rule.c_lower
        res_up = res_up - A.T @ rule.c_upper
    worst = max(
        float(np.max(np.abs(res_lo))) if res_lo.size else 0.0,
        float(np.max(np.abs(res_up))) if res_up.size else 0.0,
        float(max(0.0, -rule.c_lower.min())) if rule.c_lower.size else 0.0,
        float(max(0.0, -rule.c_upper.min())) if rule.c_upper.size else 0.0,
    )
    return worst <= tol, worst


# ---------------------------------------------------------------------------
# least squares


def ls_interval(model: GaussianModel, h, alpha: float) -> IntervalResult:
    """Classical pivot interval around the least-squares estimate.

    Requires full column rank; rank deficiency raises instead of silently
    falling back to a pseudo-inverse.
    """
    model = _require_white(model)
    spec = _functional(h)
    _check_alpha(alpha)
    K = model.K
    m, n = K.shape
    if m < n:
        raise RankDeficiencyError(f"{m} rows cannot determine {n} columns")
    Q, R = qr(K, mode="economic")
    diag = np.abs(np.diag(R))
    if diag.min() <= max(m, n) * np.finfo(float).eps * diag.max():
        raise RankDeficiencyError("design matrix is numerically rank deficient")
    lam_hat = solve_triangular(R, Q.T @ model.y)
    u = solve_triangular(R, spec.h, trans="T")
    z = z_quantile(1.0 - alpha / 2.0)
    center = float(spec.h @ lam_hat)
    half = z * float(np.linalg.norm(u))
    return IntervalResult("LS", spec.label, alpha, center - half, center + half)


# ---------------------------------------------------------------------------
# chi-squared ball


def ssb_interval(model: GaussianModel, h, constraints: PolyhedralConstraints,
                 alpha: float, settings: SolverSettings | None = None,
                 slack_s2: float | None = None) -> IntervalResult:
    """Interval from the chi-squared residual ball.

    The ball radius is the 1-alpha quantile of chi-squared with one degree
    of freedom per true bin. Unlike the slack-inflated ball this set can be
    empty; that surfaces as :class:`InfeasibleRegionError` carrying s2.
    """
    model = _require_white(model)
    spec = _functional(h)
    _check_alpha(alpha)
    radius_sq = chi2_quantile(1.0 - alpha, model.n)
    lo_sol, up_sol = _ball_extremes(model, spec.h, constraints, radius_sq, settings)
    if INFEASIBLE in (lo_sol.status, up_sol.status):
        s2 = slack(model, constraints, settings) if slack_s2 is None else float(slack_s2)
        raise InfeasibleRegionError(
            f"chi-squared ball (radius^2 = {radius_sq:.6g}) misses the constraints "
            f"(slack s2 = {s2:.6g})", s2)
    lower = _endpoint(lo_sol, "lower", "chi-squared-ball interval")
    upper = _endpoint(up_sol, "upper", "chi-squared-ball interval")
    return IntervalResult("SSB", spec.label, alpha, lower, upper,
                          Diagnostics(slack_s2=slack_s2, psi2=radius_sq))


# ---------------------------------------------------------------------------
# minimax half-width bounds


def modulus_of_continuity(model, h, constraints: PolyhedralConstraints,
                          epsilon: float, settings: SolverSettings | None = None,
                          symmetric: bool = True) -> float:
    """Largest functional separation of two feasible parameters K can hide.

    Solved in the stacked variable z = (lam_1, lam_2):
    maximize h'lam_1 - h'lam_2 subject to ||K (lam_1 - lam_2)|| <= epsilon
    with both halves constraint-feasible. With ``symmetric`` (the default)
    the two halves range over the same set, so the absolute value in the
    definition is dropped; pass False to force evaluating both signs.
    """
    K = _design(model)
    spec = _functional(h)
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    m, n = K.shape
    f = np.concatenate([spec.h, -spec.h])
    F = np.hstack([K, -K])
    ball = BallConstraint(F, np.zeros(m), epsilon * epsilon)
    if constraints.q:
        q = constraints.q
        G = np.block([[constraints.A, np.zeros((q, n))],
                      [np.zeros((q, n)), constraints.A]])
        ineq = (G, np.concatenate([constraints.b, constraints.b]))
    else:
        ineq = None

    def extremum(sense: str) -> float:
        prog = ConicProgram(sense=sense, c=f.copy(), ball_constraints=[ball],
                            inequalities=ineq)
        sol = solve(prog, settings)
        if sol.status == OPTIMAL:
            return sol.objective_value
        if sol.status == UNBOUNDED:
            return np.inf if sense == "max" else -np.inf
        raise SolverFailureError(f"modulus program ended with status {sol.status}")

    value = extremum("max")
    if not symmetric:
        value = max(value, -extremum("min"))
    return value


def minimax_halfwidth_bounds(model, h, constraints: PolyhedralConstraints,
                             alpha: float, sigma: float = 1.0,
                             settings: SolverSettings | None = None,
                             symmetric: bool = True) -> tuple[float, float]:
    """Bracket the minimax affine fixed-width interval half-width.

    Returns (modulus at 2 z_{1-alpha} sigma, modulus at 2 z_{1-alpha/2}
    sigma); doubling them brackets the full minimax width. The lower bound
    comes out infinite exactly when the functional is not identifiable,
    i.e. the modulus program is unbounded.
    """
    _check_alpha(alpha)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    eps_lo = 2.0 * z_quantile(1.0 - alpha) * sigma
    eps_hi = 2.0 * z_quantile(1.0 - alpha / 2.0) * sigma
    lower = modulus_of_continuity(model, h, constraints, eps_lo, settings, symmetric)
    upper = modulus_of_continuity(model, h, constraints, eps_hi, settings, symmetric)
    return lower, upper


# ---------------------------------------------------------------------------
# serialization


def _fmt(v) -> str:
    if v is None:
        return ""
    v = float(v)
    if np.isnan(v):
        return ""
    return format(v, ".17g")


INTERVAL_CSV_COLUMNS = "method,functional,alpha,lower,upper,s2,pathological"


def interval_csv_row(result: IntervalResult) -> str:
    """One CSV row in the fixed column order."""
    d = result.diagnostics
    return ",".join([
        result.method,
        result.functional,
        _fmt(result.alpha),
        _fmt(result.lower),
        _fmt(result.upper),
        _fmt(d.slack_s2),
        "true" if d.pathological else "false",
    ])


def write_intervals_csv(results: list, path, errors: list | None = None) -> None:
    """Write interval rows; ``errors`` optionally maps row index to a tag.

    When any row carries an error tag an extra ``error`` column is added
    and failed rows keep their method/functional identity with empty
    numeric fields.
    """
    errors = errors or [None] * len(results)
    with_err = any(e for e in errors)
    with open(path, "w") as fh:
        fh.write(INTERVAL_CSV_COLUMNS + (",error\n" if with_err else "\n"))
        for res, err in zip(results, errors):
            if err:
                row = f"{res.method},{res.functional},{_fmt(res.alpha)},,,,"
                fh.write(row + f",{err}\n")
            else:
                fh.write(interval_csv_row(res) + ("," if with_err else "") + "\n")


def interval_to_json(result: IntervalResult) -> dict:
    d = result.diagnostics
    return {
        "method": result.method,
        "functional": result.functional,
        "alpha": result.alpha,
        "lower": _json_float(result.lower),
        "upper": _json_float(result.upper),
        "s2": _json_float(d.slack_s2),
        "pathological": d.pathological,
    }


def _json_float(v):
    """Finite floats pass through; non-finite become strings for strict JSON."""
    if v is None:
        return None
    v = float(v)
    if np.isfinite(v):
        return v
    if np.isnan(v):
        return None
    return "inf" if v > 0 else "-inf"
