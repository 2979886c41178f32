"""Simulation harness: data generation, ansatz construction, coverage studies.

A study fixes a true intensity, an ansatz intensity used to build the
response matrix, a smearing kernel, and a binning; then replicates Poisson
data, runs every requested interval method on every wide-bin functional,
and reduces the results to per-bin coverage and width statistics.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.optimize import nnls

from . import constraints as cons
from . import intervals as iv
from .model import (
    BinGrid,
    GaussianMixture,
    GaussianModel,
    HomoskedasticGaussian,
    IntensityFunction,
    PowerLawSpectrum,
    ResponseMatrix,
    SmearingKernel,
    TabulatedSpline,
    bin_means,
    response_matrix,
    smeared_means,
    sqrt_width_kernel,
)
from .program import SolverSettings

METHODS = ("OSB", "PO", "LS", "SSB", "MINIMAX")
CONSTRAINT_SETUPS = ("none", "N", "ND", "NDC")
PRIOR_KINDS = ("flat", "truth", "ansatz", "adversarial")

#: Seed for the one smeared realization behind the adversarial ansatz.
#: Fixed independently of study seeds so every study sees the same ansatz.
ADVERSARIAL_SEED = 20250822


# ---------------------------------------------------------------------------
# canonical intensities


def make_gmm_truth() -> GaussianMixture:
    """Two-component mixture truth: 10000 expected events on [-7, 7]."""
    return GaussianMixture(weights=(0.3, 0.7), means=(-2.0, 2.0),
                           variances=(1.0, 1.0), total=10000.0,
                           support=(-7.0, 7.0))


def make_gmm_misspecified() -> GaussianMixture:
    """Mixture with shifted locations and wrong spreads, same total."""
    return GaussianMixture(weights=(0.3, 0.7), means=(-1.8, 1.8),
                           variances=(0.8 ** 2, 1.2 ** 2), total=10000.0,
                           support=(-7.0, 7.0))


def make_jet_truth() -> PowerLawSpectrum:
    """Steeply falling transverse-momentum spectrum on [400, 1000] GeV."""
    return PowerLawSpectrum(amplitude=5.1e17, power=5.0, suppression_power=10.0,
                            collision_energy=7000.0, support=(400.0, 1000.0))


def make_jet_misspecified() -> PowerLawSpectrum:
    """Wrong spectral indices, same normalization and cutoff."""
    return PowerLawSpectrum(amplitude=5.1e17, power=4.5, suppression_power=12.0,
                            collision_energy=7000.0, support=(400.0, 1000.0))


# ---------------------------------------------------------------------------
# sampling


def sample_counts(mu: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent Poisson draws with means ``mu``."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0) or not np.all(np.isfinite(mu)):
        raise ValueError("Poisson means must be finite and nonnegative")
    return rng.poisson(mu)


def adversarial_ansatz(K: ResponseMatrix, y: np.ndarray,
                       label: str = "adversarial") -> TabulatedSpline:
    """Data-snooped ansatz: spline through a nonnegative least-squares fit.

    Fits lam_hat = argmin_{lam >= 0} ||y - K lam|| on the raw counts, then
    interpolates the implied density (lam_hat / bin width) at bin centers
    with a natural cubic spline clamped at zero.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (K.m,):
        raise ValueError("y length must match the matrix rows")
    lam_hat, _ = nnls(K.entries, y)
    density = lam_hat / K.true_grid.widths
    return TabulatedSpline(K.true_grid.centers, density, floor=0.0, label=label)


def build_adversarial_gmm(n_bins: int = 40, seed: int = ADVERSARIAL_SEED) -> TabulatedSpline:
    """The standard adversarial ansatz for the mixture setup.

    One smeared realization of the truth on an ``n_bins`` x ``n_bins``
    grid, refit under the nonnegativity constraint and splined. The seed is
    fixed so the curve is a reproducible shared input across studies.
    """
    truth = make_gmm_truth()
    kernel = HomoskedasticGaussian(0.35)
    grid = BinGrid.uniform(truth.support[0], truth.support[1], n_bins)
    K = response_matrix(kernel, truth, grid, grid, ansatz_id="gmm_truth")
    mu = smeared_means(kernel, truth, grid)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    y = sample_counts(mu, rng)
    return adversarial_ansatz(K, y, label=f"adversarial_gmm_{n_bins}_{seed}")


# ---------------------------------------------------------------------------
# aggregation functionals


@dataclass(frozen=True)
class AggregationSet:
    """Indicator functionals that sum fine bins into wide bins."""

    h_vectors: tuple
    wide_edges: BinGrid

    def __post_init__(self):
        if not self.h_vectors:
            raise ValueError("need at least one functional")
        n = self.h_vectors[0].h.size
        total = np.zeros(n)
        for spec in self.h_vectors:
            h = spec.h
            if h.size != n:
                raise ValueError("functionals must share the fine dimension")
            if not np.all((h == 0.0) | (h == 1.0)):
                raise ValueError("aggregation functionals must be 0/1 indicators")
            total += h
        if not np.all(total == 1.0):
            raise ValueError("every fine bin must belong to exactly one wide bin")
        if len(self.h_vectors) != self.wide_edges.n_bins:
            raise ValueError("one functional per wide bin required")
        object.__setattr__(self, "h_vectors", tuple(self.h_vectors))

    @property
    def n_wide(self) -> int:
        return len(self.h_vectors)

    @property
    def n_fine(self) -> int:
        return self.h_vectors[0].h.size

    @property
    def matrix(self) -> np.ndarray:
        return np.vstack([spec.h for spec in self.h_vectors])

    def block_sizes(self) -> np.ndarray:
        return np.array([int(spec.h.sum()) for spec in self.h_vectors])


def _indicator_specs(blocks: list[np.ndarray], n_fine: int) -> tuple:
    specs = []
    for j, idx in enumerate(blocks):
        h = np.zeros(n_fine)
        h[idx] = 1.0
        specs.append(iv.FunctionalSpec(h, f"wide_{j}"))
    return tuple(specs)


def aggregation_uniform(n_fine: int, n_wide: int,
                        fine_grid: BinGrid | None = None) -> AggregationSet:
    """Consecutive equal blocks of fine bins.

    Wide edges are taken from ``fine_grid`` when given, otherwise they live
    in bin-index coordinates.
    """
    if n_fine % n_wide != 0:
        raise ValueError(f"{n_wide} wide bins do not evenly divide {n_fine} fine bins")
    size = n_fine // n_wide
    blocks = [np.arange(j * size, (j + 1) * size) for j in range(n_wide)]
    if fine_grid is None:
        edges = np.arange(0, n_fine + 1, size, dtype=float)
    else:
        if fine_grid.n_bins != n_fine:
            raise ValueError("fine_grid must have n_fine bins")
        edges = fine_grid.edges[::size]
    return AggregationSet(_indicator_specs(blocks, n_fine), BinGrid(edges))


def aggregation_sqrt_pt(fine_grid: BinGrid, n_wide: int,
                        exponent: float = 0.5) -> AggregationSet:
    """Wide bins whose widths grow like the left edge to ``exponent``.

    The ideal edges follow the recurrence e_{k+1} = e_k + c * e_k**exponent
    with c tuned so the last edge lands on the grid's end; each interior
    edge is then snapped to the nearest fine-bin edge. Exponent zero gives
    equal-width wide bins.
    """
    if n_wide < 1:
        raise ValueError("n_wide must be positive")
    edges = fine_grid.edges
    lo, hi = edges[0], edges[-1]
    if lo <= 0 and exponent != 0:
        raise ValueError("growth exponent needs a positive left edge")

    def last_edge(c: float) -> float:
        e = lo
        for _ in range(n_wide):
            e = e + c * e ** exponent
        return e

    c_lo, c_hi = 0.0, (hi - lo) / max(lo ** exponent, 1e-300)
    for _ in range(200):
        c_mid = 0.5 * (c_lo + c_hi)
        if last_edge(c_mid) < hi:
            c_lo = c_mid
        else:
            c_hi = c_mid
    c = 0.5 * (c_lo + c_hi)

    ideal = [lo]
    for _ in range(n_wide):
        ideal.append(ideal[-1] + c * ideal[-1] ** exponent)
    snapped = [int(np.argmin(np.abs(edges - e))) for e in ideal]
    snapped[0], snapped[-1] = 0, fine_grid.n_bins
    if np.any(np.diff(snapped) < 1):
        raise ValueError("snapping produced an empty wide bin; use fewer wide bins")
    blocks = [np.arange(snapped[k], snapped[k + 1]) for k in range(n_wide)]
    return AggregationSet(_indicator_specs(blocks, fine_grid.n_bins),
                          BinGrid(edges[snapped]))


def aggregation_explicit(fine_grid: BinGrid, ranges: list) -> AggregationSet:
    """Wide bins from explicit [start, stop) fine-bin index pairs."""
    blocks = []
    for start, stop in ranges:
        if stop <= start:
            raise ValueError("empty wide bin range")
        blocks.append(np.arange(int(start), int(stop)))
    edge_idx = [int(b[0]) for b in blocks] + [int(blocks[-1][-1]) + 1]
    return AggregationSet(_indicator_specs(blocks, fine_grid.n_bins),
                          BinGrid(fine_grid.edges[edge_idx]))


def flat_prior(lambda_true: np.ndarray) -> iv.Prior:
    """Prior mean with the truth's total spread evenly over the bins."""
    lam = np.asarray(lambda_true, dtype=float)
    return iv.Prior(np.full(lam.size, lam.sum() / lam.size), "flat")


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass
class ExperimentConfig:
    """Complete description of one coverage study."""

    name: str
    true_intensity: IntensityFunction
    ansatz: IntensityFunction | str
    kernel: SmearingKernel
    true_bins: int
    smeared_bins: int
    wide_bins: int | list
    methods: tuple = ("OSB",)
    constraints: tuple = ("N",)
    alpha: float = 0.05
    replications: int = 1000
    priors: tuple = ("flat",)
    rng_seed: int = 0
    aggregation: str = "uniform"
    aggregation_exponent: float = 0.5
    smeared_support: tuple | None = None
    ansatz_file: str | None = None
    estimate_covariance: bool = False

    def __post_init__(self):
        if self.true_bins < 1 or self.smeared_bins < 1:
            raise ValueError("bin counts must be positive")
        if self.replications < 1:
            raise ValueError("replications must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if isinstance(self.methods, str):
            self.methods = (self.methods,)
        self.methods = tuple(self.methods)
        for mth in self.methods:
            if mth not in METHODS:
                raise ValueError(f"unknown method {mth!r}")
        if isinstance(self.constraints, str):
            self.constraints = (self.constraints,)
        self.constraints = tuple(self.constraints)
        for cn in self.constraints:
            if cn not in CONSTRAINT_SETUPS:
                raise ValueError(f"unknown constraint setup {cn!r}")
        if isinstance(self.priors, str):
            self.priors = (self.priors,)
        self.priors = tuple(self.priors)
        for pr in self.priors:
            if pr not in PRIOR_KINDS:
                raise ValueError(f"unknown prior kind {pr!r}")
        if self.aggregation not in ("uniform", "sqrt_pt", "explicit"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.estimate_covariance:
            raise ValueError("covariance estimation from data is not supported; "
                             "the noise scale is taken as known")
        if isinstance(self.ansatz, str) and self.ansatz != "adversarial":
            raise ValueError("ansatz must be an IntensityFunction or 'adversarial'")


def _describe(obj) -> dict:
    """Stable primitive description of an intensity or kernel for hashing."""
    d = {"class": type(obj).__name__}
    for key, val in sorted(vars(obj).items()):
        if key.startswith("_") or callable(val):
            continue
        if isinstance(val, np.ndarray):
            d[key] = val.tolist()
        elif isinstance(val, (int, float, str, bool, tuple, list)):
            d[key] = list(val) if isinstance(val, tuple) else val
    return d


def config_fingerprint(config: ExperimentConfig) -> str:
    """Content hash over everything that affects the study's outputs."""
    payload = {
        "name": config.name,
        "true_intensity": _describe(config.true_intensity),
        "ansatz": (config.ansatz if isinstance(config.ansatz, str)
                   else _describe(config.ansatz)),
        "kernel": _describe(config.kernel),
        "true_bins": config.true_bins,
        "smeared_bins": config.smeared_bins,
        "wide_bins": config.wide_bins,
        "methods": list(config.methods),
        "constraints": list(config.constraints),
        "alpha": config.alpha,
        "replications": config.replications,
        "priors": list(config.priors),
        "rng_seed": config.rng_seed,
        "aggregation": config.aggregation,
        "aggregation_exponent": config.aggregation_exponent,
        "smeared_support": (list(config.smeared_support)
                            if config.smeared_support else None),
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# coverage bookkeeping


@dataclass
class CoverageReport:
    """Per-bin coverage and width statistics for one method variant."""

    method: str
    constraints_name: str
    prior: str
    coverage: np.ndarray
    coverage_se: np.ndarray
    mean_width: np.ndarray
    width_se: np.ndarray
    pathological_count: np.ndarray
    failure_count: np.ndarray
    infeasible_count: np.ndarray
    replications: int
    config_hash: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.coverage < 0) or np.any(self.coverage > 1):
            raise ValueError("coverage estimates must lie in [0, 1]")

    @property
    def n_bins(self) -> int:
        return self.coverage.size

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "constraints": self.constraints_name,
            "prior": self.prior,
            "coverage": self.coverage.tolist(),
            "coverage_se": self.coverage_se.tolist(),
            "mean_width": [iv._json_float(v) for v in self.mean_width],
            "width_se": [iv._json_float(v) for v in self.width_se],
            "pathological_count": self.pathological_count.tolist(),
            "failure_count": self.failure_count.tolist(),
            "infeasible_count": self.infeasible_count.tolist(),
            "replications": self.replications,
            "config_hash": self.config_hash,
            "metadata": self.metadata,
        }


def coverage_gamma(covered: np.ndarray, valid: np.ndarray | None = None):
    """Per-bin coverage rate and binomial standard error.

    ``covered`` is (replications, bins) boolean; ``valid`` masks
    replications that produced an interval at all. Failed replications are
    excluded from the denominator and reported separately.
    """
    covered = np.asarray(covered, dtype=bool)
    if valid is None:
        valid = np.ones_like(covered, dtype=bool)
    counts = valid.sum(axis=0)
    if np.any(counts == 0):
        raise ValueError("a bin has no valid replications")
    gamma = (covered & valid).sum(axis=0) / counts
    se = np.sqrt(gamma * (1.0 - gamma) / counts)
    return gamma, se


def _width_stats(width: np.ndarray, valid: np.ndarray):
    """Mean width and standard error of the mean over valid replications."""
    mean = np.empty(width.shape[1])
    se = np.empty(width.shape[1])
    for j in range(width.shape[1]):
        w = width[valid[:, j], j]
        mean[j] = w.mean()
        se[j] = w.std(ddof=1) / np.sqrt(w.size) if w.size > 1 else 0.0
    return mean, se


COVERAGE_CSV_COLUMNS = ("bin,method,constraints,coverage,coverage_se,"
                        "mean_width,width_se,pathological_count")


def write_coverage_csv(reports: list, path, header_info: dict | None = None) -> None:
    """Write stacked per-bin rows with the config and a content hash on top."""
    rows = []
    for rep in reports:
        for j in range(rep.n_bins):
            rows.append(",".join([
                str(j),
                rep.method,
                rep.constraints_name,
                format(rep.coverage[j], ".17g"),
                format(rep.coverage_se[j], ".17g"),
                format(rep.mean_width[j], ".17g"),
                format(rep.width_se[j], ".17g"),
                str(int(rep.pathological_count[j])),
            ]))
    body = "\n".join(rows)
    digest = hashlib.sha256(body.encode()).hexdigest()
    with open(path, "w") as fh:
        if header_info:
            fh.write("# config: " + json.dumps(header_info, sort_keys=True) + "\n")
        fh.write(f"# content_sha256: {digest}\n")
        fh.write(COVERAGE_CSV_COLUMNS + "\n")
        fh.write(body + ("\n" if body else ""))


# ---------------------------------------------------------------------------
# study engine


@dataclass
class StudyResult:
    """Everything a study produces, before any files are written."""

    config: ExperimentConfig
    reports: list
    lambda_true: np.ndarray
    theta_true: np.ndarray
    aggregation: AggregationSet
    response: ResponseMatrix
    smeared_mean: np.ndarray
    sample_intervals: list
    minimax_bounds: dict
    rules: dict

    def report_for(self, method: str, constraints_name: str = None,
                   prior: str = None) -> CoverageReport:
        hits = [r for r in self.reports
                if r.method == method
                and (constraints_name is None or r.constraints_name == constraints_name)
                and (prior is None or r.prior == prior)]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} reports match ({method}, {constraints_name}, {prior})")
        return hits[0]


def _resolve_ansatz(config: ExperimentConfig) -> IntensityFunction:
    if not isinstance(config.ansatz, str):
        return config.ansatz
    if config.ansatz_file:
        try:
            return TabulatedSpline.load(config.ansatz_file)
        except FileNotFoundError:
            spline = build_adversarial_gmm(config.smeared_bins)
            spline.save(config.ansatz_file)
            return spline
    return build_adversarial_gmm(config.smeared_bins)


def _build_aggregation(config: ExperimentConfig, true_grid: BinGrid) -> AggregationSet:
    if config.aggregation == "explicit":
        return aggregation_explicit(true_grid, config.wide_bins)
    if config.aggregation == "sqrt_pt":
        return aggregation_sqrt_pt(true_grid, int(config.wide_bins),
                                   config.aggregation_exponent)
    return aggregation_uniform(true_grid.n_bins, int(config.wide_bins), true_grid)


def _resolve_priors(config: ExperimentConfig, lambda_true: np.ndarray,
                    ansatz_fn: IntensityFunction, true_grid: BinGrid) -> dict:
    priors = {}
    for kind in config.priors:
        if kind == "flat":
            priors[kind] = flat_prior(lambda_true)
        elif kind == "truth":
            priors[kind] = iv.Prior(lambda_true.copy(), "truth")
        elif kind == "ansatz":
            priors[kind] = iv.Prior(bin_means(ansatz_fn, true_grid), "ansatz")
        elif kind == "adversarial":
            if isinstance(ansatz_fn, TabulatedSpline):
                adv = ansatz_fn
            elif config.ansatz_file:
                try:
                    adv = TabulatedSpline.load(config.ansatz_file)
                except FileNotFoundError:
                    adv = build_adversarial_gmm(config.smeared_bins)
                    adv.save(config.ansatz_file)
            else:
                adv = build_adversarial_gmm(config.smeared_bins)
            priors[kind] = iv.Prior(bin_means(adv, true_grid), "adversarial")
    return priors


def run_study(config: ExperimentConfig, threads: int = 1,
              settings: SolverSettings | None = None,
              progress=None) -> StudyResult:
    """Run a full coverage study.

    Deterministic for a fixed config: replication i draws from substream i
    of the seed sequence, so serial and chunked execution agree bit for
    bit. ``progress`` is an optional callable taking (done, total).
    """
    settings = settings or SolverSettings()
    truth = config.true_intensity
    support = truth.support
    true_grid = BinGrid.uniform(support[0], support[1], config.true_bins)
    s_lo, s_hi = config.smeared_support or support
    smeared_grid = BinGrid.uniform(s_lo, s_hi, config.smeared_bins)

    ansatz_fn = _resolve_ansatz(config)
    resp = response_matrix(config.kernel, ansatz_fn, true_grid, smeared_grid,
                           ansatz_id=getattr(ansatz_fn, "label", "") or type(ansatz_fn).__name__)
    lambda_true = bin_means(truth, true_grid)
    mu = smeared_means(config.kernel, truth, smeared_grid)
    if np.any(mu <= 0):
        raise ValueError("data-generating mean has empty smeared bins; "
                         "shrink the smeared domain")
    agg = _build_aggregation(config, true_grid)
    theta_true = agg.matrix @ lambda_true

    inv_sd = 1.0 / np.sqrt(mu)
    design = resp.entries * inv_sd[:, None]

    setups = {name: cons.from_name(name, config.true_bins, true_grid)
              for name in config.constraints}
    priors = _resolve_priors(config, lambda_true, ansatz_fn, true_grid)

    # fixed per-study work: decision rules and minimax bounds
    rules = {}
    if "PO" in config.methods:
        for cs_name, C in setups.items():
            for p_name, prior in priors.items():
                for spec in agg.h_vectors:
                    rules[(cs_name, p_name, spec.label)] = iv.po_rule(
                        design, spec, C, prior, config.alpha, settings)

    minimax_bounds = {}
    if "MINIMAX" in config.methods:
        for cs_name, C in setups.items():
            lo = np.empty(agg.n_wide)
            hi = np.empty(agg.n_wide)
            for j, spec in enumerate(agg.h_vectors):
                lo[j], hi[j] = iv.minimax_halfwidth_bounds(
                    design, spec, C, config.alpha, settings=settings)
            minimax_bounds[cs_name] = (lo, hi)

    payload = _EnginePayload(
        design=design, mu=mu, inv_sd=inv_sd, theta=theta_true,
        h_specs=agg.h_vectors, setups=setups, rules=rules,
        methods=tuple(m for m in config.methods if m != "MINIMAX"),
        priors=tuple(priors.keys()), alpha=config.alpha,
        seed=config.rng_seed, replications=config.replications,
        settings=settings,
    )

    if threads <= 1:
        acc, samples = _run_chunk(payload, 0, config.replications, progress)
    else:
        chunks = _split(config.replications, threads)
        acc = None
        samples = None
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_run_chunk, payload, lo, hi, None)
                       for lo, hi in chunks]
            parts = [f.result() for f in futures]
        for part_acc, part_samples in parts:
            acc = part_acc if acc is None else _merge(acc, part_acc)
            samples = samples or part_samples

    fingerprint = config_fingerprint(config)
    reports = []
    for key, rec in acc.items():
        method, cs_name, p_name = key
        valid = ~rec["failed"]
        gamma, gamma_se = coverage_gamma(rec["covered"], valid)
        mean_w, se_w = _width_stats(rec["width"], valid)
        reports.append(CoverageReport(
            method=method, constraints_name=cs_name, prior=p_name,
            coverage=gamma, coverage_se=gamma_se,
            mean_width=mean_w, width_se=se_w,
            pathological_count=rec["pathological"].sum(axis=0),
            failure_count=rec["failed"].sum(axis=0) - rec["infeasible"].sum(axis=0),
            infeasible_count=rec["infeasible"].sum(axis=0),
            replications=config.replications,
            config_hash=fingerprint,
            metadata={"study": config.name, "true_bins": config.true_bins,
                      "smeared_bins": config.smeared_bins,
                      "alpha": config.alpha},
        ))

    return StudyResult(config=config, reports=reports, lambda_true=lambda_true,
                       theta_true=theta_true, aggregation=agg, response=resp,
                       smeared_mean=mu, sample_intervals=samples,
                       minimax_bounds=minimax_bounds, rules=rules)


def _split(total: int, parts: int) -> list:
    sizes = np.full(parts, total // parts)
    sizes[: total % parts] += 1
    starts = np.concatenate([[0], np.cumsum(sizes)])
    return [(int(starts[i]), int(starts[i + 1])) for i in range(parts) if sizes[i]]


@dataclass
class _EnginePayload:
    design: np.ndarray
    mu: np.ndarray
    inv_sd: np.ndarray
    theta: np.ndarray
    h_specs: tuple
    setups: dict
    rules: dict
    methods: tuple
    priors: tuple
    alpha: float
    seed: int
    replications: int
    settings: SolverSettings


def _keys(payload: _EnginePayload) -> list:
    keys = []
    for method in payload.methods:
        if method == "LS":
            keys.append(("LS", "none", ""))
        elif method == "PO":
            keys.extend(("PO", cs, pr) for cs in payload.setups for pr in payload.priors)
        else:
            keys.extend((method, cs, "") for cs in payload.setups)
    return keys


def _run_chunk(payload: _EnginePayload, lo: int, hi: int, progress=None):
    """Replications [lo, hi); returns accumulators and replication-0 samples."""
    n_rep = hi - lo
    J = len(payload.h_specs)
    acc = {key: {"covered": np.zeros((n_rep, J), dtype=bool),
                 "width": np.full((n_rep, J), np.nan),
                 "pathological": np.zeros((n_rep, J), dtype=bool),
                 "failed": np.zeros((n_rep, J), dtype=bool),
                 "infeasible": np.zeros((n_rep, J), dtype=bool)}
           for key in _keys(payload)}
    samples = []

    children = np.random.SeedSequence(payload.seed).spawn(payload.replications)
    needs_slack = any(m in payload.methods for m in ("OSB", "SSB"))

    for row, i in enumerate(range(lo, hi)):
        rng = np.random.Generator(np.random.Philox(children[i]))
        y = sample_counts(payload.mu, rng) * payload.inv_sd
        model = GaussianModel(payload.design, y)
        keep = i == 0

        for cs_name, C in payload.setups.items():
            s2 = iv.slack(model, C, payload.settings) if needs_slack else None
            for method in payload.methods:
                if method == "LS":
                    continue
                if method == "PO":
                    for p_name in payload.priors:
                        for j, spec in enumerate(payload.h_specs):
                            rule = payload.rules[(cs_name, p_name, spec.label)]
                            res = iv.po_interval(rule, y)
                            _record(acc[("PO", cs_name, p_name)], row, j, res,
                                    payload.theta[j])
                            if keep:
                                samples.append((("PO", cs_name, p_name), j, res))
                    continue
                fn = iv.osb_interval if method == "OSB" else iv.ssb_interval
                for j, spec in enumerate(payload.h_specs):
                    rec = acc[(method, cs_name, "")]
                    try:
                        res = fn(model, spec, C, payload.alpha,
                                 payload.settings, slack_s2=s2)
                    except iv.InfeasibleRegionError:
                        rec["failed"][row, j] = True
                        rec["infeasible"][row, j] = True
                        continue
                    except iv.SolverFailureError:
                        rec["failed"][row, j] = True
                        continue
                    _record(rec, row, j, res, payload.theta[j])
                    if keep:
                        samples.append(((method, cs_name, ""), j, res))

        if "LS" in payload.methods:
            rec = acc[("LS", "none", "")]
            for j, spec in enumerate(payload.h_specs):
                res = iv.ls_interval(model, spec, payload.alpha)
                _record(rec, row, j, res, payload.theta[j])
                if keep:
                    samples.append((("LS", "none", ""), j, res))

        if progress is not None:
            progress(row + 1, n_rep)

    return acc, samples


def _record(rec: dict, row: int, j: int, res: iv.IntervalResult, theta: float) -> None:
    rec["covered"][row, j] = res.covers(theta)
    rec["width"][row, j] = res.width
    rec["pathological"][row, j] = res.diagnostics.pathological


def _merge(a: dict, b: dict) -> dict:
    out = {}
    for key in a:
        out[key] = {field_name: np.concatenate([a[key][field_name], b[key][field_name]])
                    for field_name in a[key]}
    return out
