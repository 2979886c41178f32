"""Forward models for binned indirect measurements.

A particle-level intensity function is observed through a smearing kernel
and binned twice: true bins partition the particle-level domain, smeared
bins partition the detector-level domain. This module builds the pieces of
the linear Gaussian approximation of that measurement: expected bin counts,
the detector response matrix, and whitened design matrices.
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline
from scipy.special import ndtr


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class DegenerateBinError(ValueError):
    """A true bin carries no ansatz mass, so its response column is undefined."""


class CovarianceError(ValueError):
    """Noise covariance is not strictly positive definite."""


_TINY = np.finfo(float).tiny


# ---------------------------------------------------------------------------
# binning


@dataclass(frozen=True)
class BinGrid:
    """Strictly increasing bin edges defining a 1-D partition.

    Parameters
    ----------
    edges : ndarray, shape (n_bins + 1,)
        Finite, strictly increasing edge positions.
    """

    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2:
            raise ValueError("edges must be a 1-D array with at least two entries")
        if not np.all(np.isfinite(edges)):
            raise ValueError("edges must be finite")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def uniform(cls, lo: float, hi: float, n_bins: int) -> "BinGrid":
        if n_bins < 1:
            raise ValueError("n_bins must be positive")
        return cls(np.linspace(lo, hi, n_bins + 1))

    @property
    def n_bins(self) -> int:
        return self.edges.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def lo(self) -> float:
        return float(self.edges[0])

    @property
    def hi(self) -> float:
        return float(self.edges[-1])


# ---------------------------------------------------------------------------
# intensity functions


class IntensityFunction(ABC):
    """Nonnegative event intensity over a bounded support interval.

    Subclasses implement pointwise evaluation; integrals against bins are
    computed by :func:`bin_means`.
    """

    #: (lo, hi) interval outside of which the intensity is treated as zero.
    support: tuple[float, float]

    @abstractmethod
    def __call__(self, t: np.ndarray) -> np.ndarray:
        """Evaluate the intensity at particle-level positions ``t``."""


class GaussianMixture(IntensityFunction):
    """Mixture of normal densities scaled to an expected total event count.

    Parameters
    ----------
    weights : array_like
        Mixture weights, positive and summing to one.
    means, variances : array_like
        Component locations and variances (one variance per component).
    total : float
        Expected number of events over the whole real line.
    support : tuple of float
        Interval the measurement restricts attention to.
    """

    def __init__(self, weights, means, variances, total: float, support: tuple[float, float]):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.asarray(means, dtype=float)
        self.variances = np.asarray(variances, dtype=float)
        self.total = float(total)
        self.support = (float(support[0]), float(support[1]))
        if not (self.weights.shape == self.means.shape == self.variances.shape):
            raise ValueError("weights, means, variances must have matching shapes")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to one")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")
        if self.total <= 0:
            raise ValueError("total must be positive")

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        z = (t[..., None] - self.means) ** 2 / self.variances
        dens = np.exp(-0.5 * z) / np.sqrt(2.0 * np.pi * self.variances)
        return self.total * (dens @ self.weights)


class PowerLawSpectrum(IntensityFunction):
    """Steeply falling power-law intensity with a kinematic cutoff.

    The intensity at transverse momentum ``p`` is

        amplitude * p**(-power) * (1 - 2 p / collision_energy)**suppression_power

    and zero once ``2 p`` exceeds ``collision_energy``. All momenta are in the
    same unit as ``collision_energy``.
    """

    def __init__(self, amplitude: float, power: float, suppression_power: float,
                 collision_energy: float, support: tuple[float, float]):
        self.amplitude = float(amplitude)
        self.power = float(power)
        self.suppression_power = float(suppression_power)
        self.collision_energy = float(collision_energy)
        self.support = (float(support[0]), float(support[1]))
        if self.amplitude <= 0 or self.collision_energy <= 0:
            raise ValueError("amplitude and collision_energy must be positive")
        if self.support[1] >= self.collision_energy / 2.0:
            raise ValueError("support must end below the kinematic cutoff")
        if self.support[0] <= 0:
            raise ValueError("support must be positive")

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        frac = np.clip(1.0 - 2.0 * t / self.collision_energy, 0.0, None)
        with np.errstate(divide="ignore"):
            out = self.amplitude * t ** (-self.power) * frac ** self.suppression_power
        return np.where(t > 0, out, 0.0)


class TabulatedSpline(IntensityFunction):
    """Natural cubic spline through tabulated (position, density) pairs.

    Values are clamped at ``floor`` (default zero) so the result is a valid
    intensity even where the interpolant undershoots. Outside the knot range
    the intensity is zero.
    """

    def __init__(self, knots, values, floor: float = 0.0, label: str = ""):
        self.knots = np.asarray(knots, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.floor = float(floor)
        self.label = label
        if self.knots.ndim != 1 or self.knots.size < 4:
            raise ValueError("need at least four knots for a cubic spline")
        if np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if self.values.shape != self.knots.shape:
            raise ValueError("values must match knots")
        self._spline = CubicSpline(self.knots, self.values, bc_type="natural")
        self.support = (float(self.knots[0]), float(self.knots[-1]))

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        inside = (t >= self.support[0]) & (t <= self.support[1])
        vals = np.maximum(self._spline(t), self.floor)
        return np.where(inside, vals, 0.0)

    def to_dict(self) -> dict:
        return {
            "knots": self.knots.tolist(),
            "values": self.values.tolist(),
            "floor": self.floor,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TabulatedSpline":
        return cls(d["knots"], d["values"], d.get("floor", 0.0), d.get("label", ""))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "TabulatedSpline":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# smearing kernels


class SmearingKernel(ABC):
    """Conditional law of the detector-level position given the true position."""

    @abstractmethod
    def band_probabilities(self, edges: np.ndarray, t: np.ndarray) -> np.ndarray:
        """P(detector value lands in each band) for every true position.

        Parameters
        ----------
        edges : ndarray, shape (m + 1,)
        t : ndarray, shape (k,)

        Returns
        -------
        ndarray, shape (k, m)
        """

    @abstractmethod
    def density(self, s: np.ndarray, t: float) -> np.ndarray:
        """Conditional density of the smeared value ``s`` given truth ``t``."""


class HomoskedasticGaussian(SmearingKernel):
    """Additive Gaussian noise with constant standard deviation."""

    def __init__(self, width: float):
        if width <= 0:
            raise ValueError("width must be positive")
        self.width = float(width)

    def band_probabilities(self, edges: np.ndarray, t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        z = (np.asarray(edges, dtype=float)[None, :] - t[:, None]) / self.width
        return np.diff(ndtr(z), axis=1)

    def density(self, s: np.ndarray, t: float) -> np.ndarray:
        z = (np.asarray(s, dtype=float) - t) / self.width
        return np.exp(-0.5 * z * z) / (self.width * np.sqrt(2.0 * np.pi))


class HeteroskedasticGaussian(SmearingKernel):
    """Additive Gaussian noise whose standard deviation depends on truth.

    Parameters
    ----------
    sigma : callable
        Maps an ndarray of true positions to strictly positive widths.
    """

    def __init__(self, sigma):
        self.sigma = sigma

    def band_probabilities(self, edges: np.ndarray, t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        widths = np.asarray(self.sigma(t), dtype=float)
        if np.any(widths <= 0):
            raise ValueError("sigma must be strictly positive on the support")
        z = (np.asarray(edges, dtype=float)[None, :] - t[:, None]) / widths[:, None]
        return np.diff(ndtr(z), axis=1)

    def density(self, s: np.ndarray, t: float) -> np.ndarray:
        width = float(self.sigma(np.asarray([t]))[0])
        z = (np.asarray(s, dtype=float) - t) / width
        return np.exp(-0.5 * z * z) / (width * np.sqrt(2.0 * np.pi))


def sqrt_width_kernel(coefficient: float) -> HeteroskedasticGaussian:
    """Gaussian smearing with width ``coefficient * sqrt(t)``."""
    if coefficient <= 0:
        raise ValueError("coefficient must be positive")
    return HeteroskedasticGaussian(lambda t: coefficient * np.sqrt(t))


# ---------------------------------------------------------------------------
# quadrature

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    if order not in _GL_CACHE:
        _GL_CACHE[order] = leggauss(order)
    return _GL_CACHE[order]


def _panel_rule(lo: float, hi: float, panels: int, order: int):
    """Composite Gauss-Legendre nodes and weights on [lo, hi]."""
    x, w = _gauss_legendre(order)
    sub = np.linspace(lo, hi, panels + 1)
    half = np.diff(sub) / 2.0
    mid = 0.5 * (sub[:-1] + sub[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _adaptive_panels(evaluate, rel_tol: float, max_doublings: int,
                     start_panels: int = 1, context: str = "integral") -> np.ndarray:
    """Double the panel count until successive evaluations stabilize.

    Convergence is max-norm change below ``rel_tol`` times the largest
    component magnitude, so tiny components ride on the dominant scale
    instead of demanding their own relative accuracy.
    """
    prev = np.asarray(evaluate(start_panels), dtype=float)
    panels = 2 * start_panels
    for _ in range(max_doublings):
        cur = np.asarray(evaluate(panels), dtype=float)
        scale = max(float(np.max(np.abs(cur))), _TINY)
        if float(np.max(np.abs(cur - prev))) <= rel_tol * scale:
            return cur
        prev = cur
        panels *= 2
    achieved = float(np.max(np.abs(cur - prev))) / scale
    raise QuadratureError(
        f"{context}: no convergence after {max_doublings} panel doublings "
        f"(achieved relative tolerance {achieved:.3e}, requested {rel_tol:.3e})"
    )


def bin_means(intensity: IntensityFunction, grid: BinGrid,
              rel_tol: float = 1e-8, order: int = 16,
              max_doublings: int = 12) -> np.ndarray:
    """Expected event count in every bin: the intensity integrated bin by bin.

    Parameters
    ----------
    intensity : IntensityFunction
    grid : BinGrid
        Bins over the intensity's own axis.
    rel_tol : float
        Panel-doubling stopping tolerance relative to the largest bin mean.

    Returns
    -------
    ndarray, shape (n_bins,)
        Nonnegative expected counts.
    """
    edges = grid.edges

    def evaluate(panels: int) -> np.ndarray:
        out = np.empty(grid.n_bins)
        for j in range(grid.n_bins):
            nodes, weights = _panel_rule(edges[j], edges[j + 1], panels, order)
            out[j] = float(weights @ np.asarray(intensity(nodes), dtype=float))
        return out

    vals = _adaptive_panels(evaluate, rel_tol, max_doublings, context="bin means")
    return np.maximum(vals, 0.0)


def smeared_means(kernel: SmearingKernel, intensity: IntensityFunction,
                  smeared_grid: BinGrid, rel_tol: float = 1e-8,
                  order: int = 16, max_doublings: int = 12) -> np.ndarray:
    """Expected smeared-bin counts of an intensity pushed through the kernel.

    Component ``i`` is the integral over the intensity's support of
    ``f(t) * P(smeared value in bin i | t)``. This is the data-generating
    mean vector; it does not depend on any true-bin discretization.
    """
    lo, hi = intensity.support
    s_edges = smeared_grid.edges

    def evaluate(panels: int) -> np.ndarray:
        nodes, weights = _panel_rule(lo, hi, panels, order)
        f = np.maximum(np.asarray(intensity(nodes), dtype=float), 0.0)
        bands = kernel.band_probabilities(s_edges, nodes)
        return (weights * f) @ bands

    vals = _adaptive_panels(evaluate, rel_tol, max_doublings,
                            start_panels=max(smeared_grid.n_bins, 32),
                            context="smeared means")
    return np.maximum(vals, 0.0)


# ---------------------------------------------------------------------------
# response matrix


@dataclass(frozen=True)
class ResponseMatrix:
    """Detector response: column j holds P(smeared bin i | true bin j).

    Entries are conditional probabilities under the ansatz intensity used to
    weight positions within each true bin. Column sums can fall below one
    when mass leaks outside the smeared domain; they are never rescaled,
    because that leakage is part of the physics.
    """

    entries: np.ndarray
    true_grid: BinGrid
    smeared_grid: BinGrid
    ansatz_id: str = ""

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        m, n = entries.shape
        if m != self.smeared_grid.n_bins or n != self.true_grid.n_bins:
            raise ValueError("entries shape must be (smeared bins, true bins)")
        if np.any(entries < -1e-12) or np.any(entries > 1.0 + 1e-9):
            raise ValueError("entries must lie in [0, 1]")
        colsum = entries.sum(axis=0)
        if np.any(colsum > 1.0 + 1e-6):
            raise ValueError("column sums must not exceed one")
        entries = np.clip(entries, 0.0, 1.0)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    # -- serialization ------------------------------------------------------

    def to_csv(self, path) -> None:
        """Write entries with a two-line metadata header.

        Floats are printed with 17 significant digits, which round-trips
        IEEE doubles exactly.
        """
        with open(path, "w") as fh:
            fh.write("# m,n,ansatz_id,true_edges,smeared_edges\n")
            te = " ".join(_f17(v) for v in self.true_grid.edges)
            se = " ".join(_f17(v) for v in self.smeared_grid.edges)
            fh.write(f"# {self.m},{self.n},{self.ansatz_id},{te},{se}\n")
            for row in self.entries:
                fh.write(",".join(_f17(v) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "ResponseMatrix":
        with open(path) as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
        if len(lines) < 3 or not lines[0].startswith("#") or not lines[1].startswith("#"):
            raise ValueError("missing response matrix header")
        meta = lines[1][1:].strip().split(",")
        m, n, ansatz_id = int(meta[0]), int(meta[1]), meta[2]
        true_edges = np.array([float(v) for v in meta[3].split()])
        smeared_edges = np.array([float(v) for v in meta[4].split()])
        entries = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:]])
        if entries.shape != (m, n):
            raise ValueError("entry block does not match declared dimensions")
        return cls(entries, BinGrid(true_edges), BinGrid(smeared_edges), ansatz_id)

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "ansatz_id": self.ansatz_id,
            "true_edges": self.true_grid.edges.tolist(),
            "smeared_edges": self.smeared_grid.edges.tolist(),
            "entries": self.entries.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ResponseMatrix":
        return cls(np.asarray(d["entries"], dtype=float),
                   BinGrid(np.asarray(d["true_edges"], dtype=float)),
                   BinGrid(np.asarray(d["smeared_edges"], dtype=float)),
                   d.get("ansatz_id", ""))

    def save(self, path) -> None:
        path = str(path)
        if path.endswith(".json"):
            with open(path, "w") as fh:
                json.dump(self.to_json(), fh)
        else:
            self.to_csv(path)

    @classmethod
    def load(cls, path) -> "ResponseMatrix":
        path = str(path)
        if path.endswith(".json"):
            with open(path) as fh:
                return cls.from_json(json.load(fh))
        return cls.from_csv(path)


def _f17(v: float) -> str:
    return format(float(v), ".17g")


def response_matrix(kernel: SmearingKernel, ansatz: IntensityFunction,
                    true_grid: BinGrid, smeared_grid: BinGrid,
                    rel_tol: float = 1e-8, order: int = 16,
                    max_doublings: int = 10, ansatz_id: str = "") -> ResponseMatrix:
    """Build the response matrix of a kernel under an ansatz intensity.

    Entry (i, j) is the probability that an event drawn from the ansatz
    restricted to true bin j is observed in smeared bin i:

        K_ij = integral over T_j of f(t) P(S_i | t) dt  /  integral of f over T_j.

    Numerator and denominator for each column are integrated on shared
    adaptive Gauss-Legendre panels; the inner smeared integral is the
    closed-form band probability of the kernel, so only the outer 1-D
    integral is done numerically.

    Raises
    ------
    DegenerateBinError
        If the ansatz carries no mass in some true bin.
    QuadratureError
        If panel doubling fails to stabilize a column.
    """
    t_edges = true_grid.edges
    s_edges = smeared_grid.edges
    m, n = smeared_grid.n_bins, true_grid.n_bins
    entries = np.empty((m, n))

    for j in range(n):
        lo, hi = t_edges[j], t_edges[j + 1]

        def evaluate(panels: int) -> np.ndarray:
            nodes, weights = _panel_rule(lo, hi, panels, order)
            f = np.maximum(np.asarray(ansatz(nodes), dtype=float), 0.0)
            wf = weights * f
            bands = kernel.band_probabilities(s_edges, nodes)
            return np.append(wf @ bands, wf.sum())

        vec = _adaptive_panels(evaluate, rel_tol, max_doublings,
                               context=f"response column {j}")
        denom = vec[-1]
        if denom <= _TINY:
            raise DegenerateBinError(
                f"ansatz intensity has no mass in true bin {j} "
                f"[{lo:g}, {hi:g}]; response column undefined")
        entries[:, j] = np.clip(vec[:-1] / denom, 0.0, 1.0)

    return ResponseMatrix(entries, true_grid, smeared_grid, ansatz_id)


def forward_means(response: ResponseMatrix | np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Expected smeared counts K @ lam for true-bin means lam."""
    K = response.entries if isinstance(response, ResponseMatrix) else np.asarray(response, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (K.shape[1],):
        raise ValueError(f"lam must have shape ({K.shape[1]},)")
    if not np.all(np.isfinite(lam)):
        raise ValueError("lam must be finite")
    return K @ lam


# ---------------------------------------------------------------------------
# Gaussian observation model


@dataclass(frozen=True)
class GaussianModel:
    """Observation y = K lam + noise with independent Gaussian noise.

    Parameters
    ----------
    K : ndarray or ResponseMatrix
        Design matrix, shape (m, n). Stored as a plain array because a
        whitened design is no longer a probability matrix.
    y : ndarray, shape (m,)
    noise_variance : ndarray or None
        Diagonal of the noise covariance. None means identity, i.e. the
        model is already whitened.
    """

    K: np.ndarray
    y: np.ndarray
    noise_variance: np.ndarray | None = None

    def __post_init__(self):
        K = self.K.entries if isinstance(self.K, ResponseMatrix) else np.asarray(self.K, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if K.ndim != 2:
            raise ValueError("K must be a matrix")
        if y.shape != (K.shape[0],):
            raise ValueError("y must have one entry per row of K")
        if not np.all(np.isfinite(K)) or not np.all(np.isfinite(y)):
            raise ValueError("K and y must be finite")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "y", y)
        if self.noise_variance is not None:
            var = np.asarray(self.noise_variance, dtype=float)
            if var.shape != (K.shape[0],):
                raise ValueError("noise_variance must have one entry per row")
            bad = np.where(~(var > 0) | ~np.isfinite(var))[0]
            if bad.size:
                raise CovarianceError(
                    f"noise variance must be finite and positive; first bad index {bad[0]}")
            object.__setattr__(self, "noise_variance", var)

    @property
    def m(self) -> int:
        return self.K.shape[0]

    @property
    def n(self) -> int:
        return self.K.shape[1]

    @property
    def is_white(self) -> bool:
        return self.noise_variance is None


def whiten(model: GaussianModel) -> GaussianModel:
    """Rescale rows so the noise covariance becomes the identity.

    With diagonal covariance this divides row i of K and component i of y
    by the noise standard deviation of row i. Already-white models are
    returned unchanged, so the operation is idempotent.
    """
    if model.is_white:
        return model
    scale = 1.0 / np.sqrt(model.noise_variance)
    return GaussianModel(model.K * scale[:, None], model.y * scale, None)
