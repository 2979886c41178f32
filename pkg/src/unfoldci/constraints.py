"""Polyhedral shape constraints A x <= b on true-bin means.

Builders for the standard physics shapes (nonnegativity, monotone decrease,
convexity) and for stacking several of them. Constraint rows act on bin
means; the convexity stencil accounts for non-uniform bin widths via second
divided differences at the bin centers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import BinGrid


@dataclass(frozen=True)
class PolyhedralConstraints:
    """Finite system of linear inequalities A x <= b.

    ``labels`` names each row's family ("nonneg", "decreasing", "convex")
    for diagnostics.
    """

    A: np.ndarray
    b: np.ndarray
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if A.ndim != 2 or b.shape != (A.shape[0],):
            raise ValueError("A must be (q, n) and b must be (q,)")
        if not np.all(np.isfinite(A)) or not np.all(np.isfinite(b)):
            raise ValueError("A and b must be finite")
        labels = tuple(self.labels) if self.labels else ("row",) * A.shape[0]
        if len(labels) != A.shape[0]:
            raise ValueError("labels must have one entry per row")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "labels", labels)

    @property
    def q(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def is_satisfied(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(self.residual(x) <= tol))

    def residual(self, x: np.ndarray) -> np.ndarray:
        """Row-wise A x - b; nonpositive entries are satisfied rows."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"x must have shape ({self.n},)")
        return self.A @ x - self.b


def empty(n: int) -> PolyhedralConstraints:
    """No constraints at all: a (0, n) system."""
    return PolyhedralConstraints(np.zeros((0, n)), np.zeros(0), ())


def nonneg(n: int) -> PolyhedralConstraints:
    """x >= 0 componentwise, encoded as -x <= 0."""
    return PolyhedralConstraints(-np.eye(n), np.zeros(n), ("nonneg",) * n)


def decreasing(n: int) -> PolyhedralConstraints:
    """x_1 >= x_2 >= ... >= x_n, encoded as x_{j+1} - x_j <= 0.

    Monotonicity of the mean sequence does not involve bin widths, so no
    grid is needed.
    """
    if n < 2:
        return PolyhedralConstraints(np.zeros((0, n)), np.zeros(0), ())
    A = np.zeros((n - 1, n))
    idx = np.arange(n - 1)
    A[idx, idx] = -1.0
    A[idx, idx + 1] = 1.0
    return PolyhedralConstraints(A, np.zeros(n - 1), ("decreasing",) * (n - 1))


def convexity(n: int, grid: BinGrid | None = None) -> PolyhedralConstraints:
    """Convexity of the mean sequence against bin centers.

    Each row is the negated second divided difference at three consecutive
    centers, scaled so uniform grids produce rows [-1, 2, -1]. When no grid
    is given the bins are assumed uniform.
    """
    if n < 3:
        return PolyhedralConstraints(np.zeros((0, n)), np.zeros(0), ())
    if grid is None:
        gaps = np.ones(n - 1)
    else:
        if grid.n_bins != n:
            raise ValueError("grid must have n bins")
        gaps = np.diff(grid.centers)
    A = np.zeros((n - 2, n))
    for i in range(n - 2):
        g0, g1 = gaps[i], gaps[i + 1]
        scale = 2.0 / (g0 + g1)
        A[i, i] = -scale * g1
        A[i, i + 1] = scale * (g0 + g1)
        A[i, i + 2] = -scale * g0
    return PolyhedralConstraints(A, np.zeros(n - 2), ("convex",) * (n - 2))


def stack(parts: list[PolyhedralConstraints]) -> PolyhedralConstraints:
    """Concatenate constraint systems acting on the same variable."""
    if not parts:
        raise ValueError("need at least one system to stack")
    n = parts[0].n
    if any(p.n != n for p in parts):
        raise ValueError("all systems must share the variable dimension")
    A = np.vstack([p.A for p in parts])
    b = np.concatenate([p.b for p in parts])
    labels = tuple(lbl for p in parts for lbl in p.labels)
    return PolyhedralConstraints(A, b, labels)


def from_name(name: str, n: int, grid: BinGrid | None = None) -> PolyhedralConstraints:
    """Build a named constraint set.

    "none" is the empty system, "N" nonnegativity, "ND" adds monotone
    decrease, "NDC" adds convexity.
    """
    name = name.strip()
    if name == "none":
        return empty(n)
    if name == "N":
        return nonneg(n)
    if name == "ND":
        return stack([nonneg(n), decreasing(n)])
    if name == "NDC":
        return stack([nonneg(n), decreasing(n), convexity(n, grid)])
    raise ValueError(f"unknown constraint set {name!r}; expected none, N, ND or NDC")
