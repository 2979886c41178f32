"""Canonical conic programs and a deterministic solver backend.

Every optimization in this package is expressed in one canonical form: a
linear objective plus optional Euclidean norm terms, minimized or maximized
subject to quadratic ball constraints, linear inequalities, and linear
equalities. :func:`solve` lowers that form to second-order cone data and
hands it to Clarabel, which is deterministic for fixed inputs, so repeated
solves of the same program give bit-identical results.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class BallConstraint:
    """Quadratic ball ||F x - g||^2 <= radius_sq."""

    F: np.ndarray
    g: np.ndarray
    radius_sq: float


@dataclass(frozen=True)
class NormTerm:
    """Objective contribution weight * ||x[rows]||_2.

    The weight's sign must make the term convex in the program's sense:
    nonnegative when minimizing, nonpositive when maximizing.
    """

    weight: float
    rows: np.ndarray


@dataclass
class ConicProgram:
    """Conic program in the package's canonical form.

    Parameters
    ----------
    sense : {"min", "max"}
    c : ndarray, shape (nx,)
        Linear objective coefficients.
    ball_constraints : list of BallConstraint
    inequalities : (G, h) or None
        Rows G x <= h.
    equalities : (E, d) or None
        Rows E x = d.
    norm_terms : list of NormTerm
    """

    sense: str
    c: np.ndarray
    ball_constraints: list = field(default_factory=list)
    inequalities: tuple | None = None
    equalities: tuple | None = None
    norm_terms: list = field(default_factory=list)

    @property
    def nx(self) -> int:
        return np.asarray(self.c).size

    def validate(self) -> None:
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        c = np.asarray(self.c, dtype=float)
        if c.ndim != 1 or not np.all(np.isfinite(c)):
            raise ValueError("c must be a finite vector")
        nx = c.size
        for ball in self.ball_constraints:
            F = np.asarray(ball.F, dtype=float)
            g = np.asarray(ball.g, dtype=float)
            if F.ndim != 2 or F.shape[1] != nx or g.shape != (F.shape[0],):
                raise ValueError("ball constraint dimensions do not match x")
            if not np.isfinite(ball.radius_sq) or ball.radius_sq < 0:
                raise ValueError("ball radius_sq must be finite and nonnegative")
        for pair, kind in ((self.inequalities, "inequalities"), (self.equalities, "equalities")):
            if pair is None:
                continue
            M, v = pair
            M = np.asarray(M, dtype=float)
            v = np.asarray(v, dtype=float)
            if M.ndim != 2 or M.shape[1] != nx or v.shape != (M.shape[0],):
                raise ValueError(f"{kind} dimensions do not match x")
        for term in self.norm_terms:
            rows = np.asarray(term.rows, dtype=int)
            if rows.size and (rows.min() < 0 or rows.max() >= nx):
                raise ValueError("norm term rows out of range")
            signed = term.weight if self.sense == "min" else -term.weight
            if signed < 0:
                raise ValueError("norm term weight makes the objective non-convex")

    def objective_value(self, x: np.ndarray) -> float:
        """Objective evaluated at x, in the program's own sense."""
        val = float(np.asarray(self.c, dtype=float) @ x)
        for term in self.norm_terms:
            rows = np.asarray(term.rows, dtype=int)
            val += term.weight * float(np.linalg.norm(x[rows]))
        return val

    # -- debugging ----------------------------------------------------------

    def to_json(self) -> dict:
        def pair(p):
            return None if p is None else {
                "matrix": np.asarray(p[0], dtype=float).tolist(),
                "rhs": np.asarray(p[1], dtype=float).tolist(),
            }
        return {
            "sense": self.sense,
            "c": np.asarray(self.c, dtype=float).tolist(),
            "ball_constraints": [
                {"F": np.asarray(b.F, dtype=float).tolist(),
                 "g": np.asarray(b.g, dtype=float).tolist(),
                 "radius_sq": float(b.radius_sq)}
                for b in self.ball_constraints
            ],
            "inequalities": pair(self.inequalities),
            "equalities": pair(self.equalities),
            "norm_terms": [
                {"weight": float(t.weight),
                 "rows": np.asarray(t.rows, dtype=int).tolist()}
                for t in self.norm_terms
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "ConicProgram":
        def pair(p):
            return None if p is None else (np.asarray(p["matrix"], dtype=float),
                                           np.asarray(p["rhs"], dtype=float))
        return cls(
            sense=d["sense"],
            c=np.asarray(d["c"], dtype=float),
            ball_constraints=[
                BallConstraint(np.asarray(b["F"], dtype=float),
                               np.asarray(b["g"], dtype=float),
                               float(b["radius_sq"]))
                for b in d["ball_constraints"]
            ],
            inequalities=pair(d["inequalities"]),
            equalities=pair(d["equalities"]),
            norm_terms=[NormTerm(float(t["weight"]), np.asarray(t["rows"], dtype=int))
                        for t in d["norm_terms"]],
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "ConicProgram":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class SolverSettings:
    """Tolerances and limits passed to the backend.

    ``abs_tol`` is the absolute duality-gap target; an AlmostSolved outcome
    is accepted with ``reduced_tol`` recorded on the solution instead.
    """

    abs_tol: float = 1e-7
    rel_tol: float = 1e-8
    feas_tol: float = 1e-8
    reduced_tol: float = 1e-5
    max_iter: int = 200
    verbose: bool = False


@dataclass(frozen=True)
class Solution:
    """Outcome of one solve.

    ``status`` is one of "optimal", "infeasible", "unbounded",
    "numerical_failure". ``x`` is None unless optimal. For infeasible
    programs the objective is the empty-set convention (+inf when
    minimizing, -inf when maximizing); for unbounded programs the reverse.
    ``solver_tolerance`` records the gap tolerance actually certified.
    """

    status: str
    x: np.ndarray | None
    objective_value: float
    solver_tolerance: float
    iterations: int = 0


def _lower(program: ConicProgram):
    """Assemble Clarabel cone data (P, q, A, b, cones) for the program."""
    c = np.asarray(program.c, dtype=float)
    nx = c.size
    n_extra = len(program.norm_terms)
    N = nx + n_extra
    sign = 1.0 if program.sense == "min" else -1.0

    q = np.zeros(N)
    q[:nx] = sign * c
    for k, term in enumerate(program.norm_terms):
        q[nx + k] = sign * term.weight

    blocks = []
    rhs = []
    cones = []

    if program.equalities is not None:
        E, d = program.equalities
        E = np.asarray(E, dtype=float)
        if E.shape[0]:
            mat = sp.hstack([sp.csr_matrix(E), sp.csr_matrix((E.shape[0], n_extra))])
            blocks.append(mat)
            rhs.append(np.asarray(d, dtype=float))
            cones.append(clarabel.ZeroConeT(E.shape[0]))

    if program.inequalities is not None:
        G, h = program.inequalities
        G = np.asarray(G, dtype=float)
        if G.shape[0]:
            mat = sp.hstack([sp.csr_matrix(G), sp.csr_matrix((G.shape[0], n_extra))])
            blocks.append(mat)
            rhs.append(np.asarray(h, dtype=float))
            cones.append(clarabel.NonnegativeConeT(G.shape[0]))

    for ball in program.ball_constraints:
        F = np.asarray(ball.F, dtype=float)
        g = np.asarray(ball.g, dtype=float)
        rows = F.shape[0]
        # slack [r; g - F x] lies in a second-order cone
        mat = sp.vstack([
            sp.csr_matrix((1, N)),
            sp.hstack([sp.csr_matrix(F), sp.csr_matrix((rows, n_extra))]),
        ])
        blocks.append(mat)
        rhs.append(np.concatenate([[np.sqrt(ball.radius_sq)], g]))
        cones.append(clarabel.SecondOrderConeT(rows + 1))

    for k, term in enumerate(program.norm_terms):
        rows = np.asarray(term.rows, dtype=int)
        if rows.size == 0:
            continue
        # slack [t_k; x[rows]] lies in a second-order cone
        mat = sp.lil_matrix((rows.size + 1, N))
        mat[0, nx + k] = -1.0
        for i, r in enumerate(rows):
            mat[i + 1, r] = -1.0
        blocks.append(mat.tocsr())
        rhs.append(np.zeros(rows.size + 1))
        cones.append(clarabel.SecondOrderConeT(rows.size + 1))

    if not blocks:
        # backend requires at least one conic block; add a vacuous row
        blocks.append(sp.csr_matrix((1, N)))
        rhs.append(np.ones(1))
        cones.append(clarabel.NonnegativeConeT(1))

    A = sp.vstack(blocks).tocsc()
    b = np.concatenate(rhs)
    P = sp.csc_matrix((N, N))
    return P, q, A, b, cones


_STATUS_MAP = {
    "Solved": OPTIMAL,
    "AlmostSolved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
}


def solve(program: ConicProgram, settings: SolverSettings | None = None) -> Solution:
    """Solve a canonical conic program.

    Returns a :class:`Solution`; solver breakdowns surface as status
    "numerical_failure" rather than exceptions so callers can decide how
    to account for them.
    """
    settings = settings or SolverSettings()
    program.validate()
    P, q, A, b, cones = _lower(program)

    cfg = clarabel.DefaultSettings()
    cfg.verbose = settings.verbose
    cfg.max_iter = settings.max_iter
    cfg.tol_gap_abs = settings.abs_tol
    cfg.tol_gap_rel = settings.rel_tol
    cfg.tol_feas = settings.feas_tol

    solver = clarabel.DefaultSolver(P, q, A, b, cones, cfg)
    raw = solver.solve()
    name = str(raw.status)
    status = _STATUS_MAP.get(name, NUMERICAL_FAILURE)
    iterations = int(raw.iterations)

    sign_min = 1.0 if program.sense == "min" else -1.0
    if status == OPTIMAL:
        x = np.asarray(raw.x, dtype=float)[:program.nx]
        tol = settings.abs_tol if name == "Solved" else settings.reduced_tol
        return Solution(OPTIMAL, x, program.objective_value(x), tol, iterations)
    if status == INFEASIBLE:
        return Solution(INFEASIBLE, None, sign_min * np.inf, settings.abs_tol, iterations)
    if status == UNBOUNDED:
        return Solution(UNBOUNDED, None, -sign_min * np.inf, settings.abs_tol, iterations)
    return Solution(NUMERICAL_FAILURE, None, np.nan, settings.abs_tol, iterations)
