"""Synthetic read-count generation from the band mixture model.

One simulated sample fixes the population allele frequencies on an even grid,
draws each SNP's band from the occupancy weights, then draws the
non-reference read count from the band's beta-binomial.  The same 1e-6 clamp
used by the likelihood is applied to band means here, so simulation and
inference share a single emission model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .model import (
    WSAF_EPS,
    BandSet,
    ModelParams,
    Plaf,
    SampleData,
    canonical_weights,
)

# top of the even PLAF grid would be exactly 1, outside the open-interval
# domain of the occupancy weights and the beta-binomial
PLAF_CLAMP = 1e-6


@dataclass(frozen=True)
class SimConfig:
    """One synthetic sample: panel size, per-SNP coverage, and truth."""

    m: int
    coverage: int
    k: int
    alpha: float
    nu: float = 10.0
    weights: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("SNP count must be >= 1")
        if self.coverage < 1:
            raise ValueError("coverage must be >= 1")
        if self.k < 1:
            raise ValueError("strain count must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("panmixia coefficient must lie in [0, 1]")
        if not self.nu > 0.0:
            raise ValueError("shape must be positive")
        if self.weights is not None:
            weights = tuple(float(w) for w in self.weights)
            if len(weights) != self.k:
                raise ValueError(f"expected {self.k} explicit weights")
            object.__setattr__(self, "weights", weights)
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def even_plaf(m: int) -> Plaf:
    """Evenly spaced population frequencies j/m for j=1..m, top value clamped."""
    freqs = np.arange(1, m + 1, dtype=float) / m
    freqs[-1] = 1.0 - PLAF_CLAMP
    return Plaf(freqs)


def band_weight_matrix(band_set: BandSet, plaf: Plaf) -> np.ndarray:
    """(M, 2**k) occupancy probabilities, one simplex row per SNP."""
    p = plaf.freqs
    card = band_set.cardinalities.astype(float)
    log_w = np.outer(np.log(p), card) + np.outer(np.log1p(-p), band_set.k - card)
    return np.exp(log_w)


def draw_bands(
    rng: np.random.Generator, band_set: BandSet, plaf: Plaf
) -> np.ndarray:
    """Band index per SNP via inverse-CDF sampling, one uniform per SNP."""
    weights = band_weight_matrix(band_set, plaf)
    cum = np.cumsum(weights, axis=1)
    # scale by the row totals (within 1e-12 of 1) so rounding slack at the
    # top of the CDF cannot push an index out of range
    u = rng.random(len(plaf)) * cum[:, -1]
    index = (cum < u[:, None]).sum(axis=1)
    return np.minimum(index, band_set.n_bands - 1)


def draw_read_counts(
    rng: np.random.Generator,
    q: np.ndarray,
    nu: float,
    coverage: int,
) -> np.ndarray:
    """Beta-binomial non-reference counts around clamped band means ``q``."""
    q = np.clip(q, WSAF_EPS, 1.0 - WSAF_EPS)
    theta = rng.beta(q * nu, (1.0 - q) * nu)
    return rng.binomial(coverage, theta)


def simulate_sample(cfg: SimConfig) -> tuple[SampleData, Plaf, ModelParams]:
    """Generate one sample plus its ground truth.

    Proportions come from the uniform Dirichlet unless given explicitly,
    canonically sorted either way.  Every SNP carries ``cfg.coverage`` total
    reads.  The sample is named for the seed so batches of replicates get
    distinct IDs.
    """
    rng = np.random.default_rng(cfg.seed)
    if cfg.weights is None:
        weights = canonical_weights(rng.dirichlet(np.ones(cfg.k)))
    else:
        weights = canonical_weights(np.asarray(cfg.weights, dtype=float))
    params = ModelParams(k=cfg.k, weights=weights, alpha=cfg.alpha, nu=cfg.nu)
    plaf = even_plaf(cfg.m)
    band_set = BandSet.for_strains(cfg.k)
    band_index = draw_bands(rng, band_set, plaf)
    subset_sums = band_set.membership.astype(float) @ weights
    q = (1.0 - cfg.alpha) * subset_sums[band_index] + cfg.alpha * plaf.freqs
    nonref = draw_read_counts(rng, q, cfg.nu, cfg.coverage)
    ref = cfg.coverage - nonref
    data = SampleData(f"sim-{cfg.seed}", ref, nonref)
    return data, plaf, params


@dataclass(frozen=True)
class StudyGrid:
    """Full factorial simulation grid; defaults are the published study's."""

    m_values: tuple[int, ...] = (50, 150, 500, 2500)
    c_values: tuple[int, ...] = (10, 25, 100, 250)
    alpha_values: tuple[float, ...] = (0.01, 0.1, 0.5)
    k_values: tuple[int, ...] = (1, 3)
    replicates: int = 10

    def __post_init__(self):
        for name in ("m_values", "c_values", "alpha_values", "k_values"):
            values = tuple(getattr(self, name))
            if not values:
                raise ValueError(f"{name} must be non-empty")
            object.__setattr__(self, name, values)
        if self.replicates < 1:
            raise ValueError("need at least one replicate")

    def cells(self):
        """Deterministic cell enumeration: (index, m, c, alpha, k_true)."""
        index = 0
        for m in self.m_values:
            for c in self.c_values:
                for alpha in self.alpha_values:
                    for k in self.k_values:
                        yield index, m, c, alpha, k
                        index += 1

    @property
    def n_cells(self) -> int:
        return (
            len(self.m_values)
            * len(self.c_values)
            * len(self.alpha_values)
            * len(self.k_values)
        )

    @property
    def n_runs(self) -> int:
        return self.n_cells * self.replicates


@dataclass(frozen=True)
class StudyRow:
    """One replicate's outcome; metric fields are None when status != ok."""

    m: int
    c: int
    alpha: float
    k_true: int
    replicate: int
    k_hat: int | None
    w_msd: float | None
    alpha_and: float | None
    runtime_seconds: float
    status: str


@dataclass(frozen=True)
class StudyReport:
    grid: StudyGrid
    rows: tuple[StudyRow, ...]

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.rows if r.status != "ok")


STUDY_CSV_HEADER = (
    "m,c,alpha,k_true,replicate,k_hat,w_msd,alpha_and,runtime_seconds,status"
)
AGGREGATE_CSV_HEADER = (
    "m,c,alpha,k_true,n_ok,frac_k_correct,mean_k_hat,median_w_msd,median_alpha_and"
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if not np.isfinite(value):
            return ""
        return repr(value)
    return str(value)


def write_study_csv(report: StudyReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("# schema: strainmix.study.v1\n")
        handle.write(STUDY_CSV_HEADER + "\n")
        for r in report.rows:
            fields = [
                r.m, r.c, r.alpha, r.k_true, r.replicate,
                r.k_hat, r.w_msd, r.alpha_and, r.runtime_seconds, r.status,
            ]
            handle.write(",".join(_fmt(f) for f in fields) + "\n")


def write_aggregate_csv(report: StudyReport, path) -> None:
    """Per-cell summary: selection accuracy and median recovery errors."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("# schema: strainmix.study-aggregate.v1\n")
        handle.write(AGGREGATE_CSV_HEADER + "\n")
        for _, m, c, alpha, k_true in report.grid.cells():
            ok = [
                r
                for r in report.rows
                if (r.m, r.c, r.alpha, r.k_true) == (m, c, alpha, k_true)
                and r.status == "ok"
            ]
            if ok:
                k_hats = np.array([r.k_hat for r in ok], dtype=float)
                frac = float((k_hats == k_true).mean())
                mean_k = float(k_hats.mean())
                med_w = float(np.median([r.w_msd for r in ok]))
                alpha_devs = [r.alpha_and for r in ok if r.alpha_and is not None]
                med_a = float(np.median(alpha_devs)) if alpha_devs else None
            else:
                frac = mean_k = med_w = med_a = None
            fields = [m, c, alpha, k_true, len(ok), frac, mean_k, med_w, med_a]
            handle.write(",".join(_fmt(f) for f in fields) + "\n")


def replicate_seed(base_seed: int, cell_index: int, replicate: int) -> int:
    """Simulation seed for one (cell, replicate), derived not hand-rolled."""
    seq = np.random.SeedSequence([base_seed, cell_index, replicate])
    return int(seq.generate_state(1, np.uint64)[0])


def _study_replicate(
    base_seed, cell_index, rep, m, c, alpha, k_true, priors, cfg, k_sweep,
    nu_unimodal, include_restrictions,
):
    # local import: this module is imported by selection's own callers
    from .mcmc import run_chain, summarize
    from .selection import Restriction, select_k

    started = time.perf_counter()
    try:
        sim_cfg = SimConfig(
            m=m, coverage=c, k=k_true, alpha=alpha,
            seed=replicate_seed(base_seed, cell_index, rep),
        )
        data, plaf, truth = simulate_sample(sim_cfg)
        result, chains = select_k(
            data,
            plaf,
            k_sweep,
            priors,
            cfg,
            include_restrictions=include_restrictions,
            nu_unimodal=nu_unimodal,
            return_chains=True,
        )
        truth_chain = chains.get((k_true, Restriction.FULL))
        if truth_chain is None:
            truth_chain = run_chain(
                data, plaf, k_true, priors, cfg, nu_unimodal=nu_unimodal
            )
        truth_summary = summarize(truth_chain)
        medians = np.array(truth_summary.weight_medians)
        w_msd = float(np.mean((medians - truth.weights) ** 2))
        if truth.alpha > 0:
            alpha_and = abs(truth_summary.median_alpha - truth.alpha) / truth.alpha
        else:
            alpha_and = None
        return StudyRow(
            m=m, c=c, alpha=alpha, k_true=k_true, replicate=rep,
            k_hat=result.selected_k, w_msd=w_msd, alpha_and=alpha_and,
            runtime_seconds=time.perf_counter() - started, status="ok",
        )
    except Exception as exc:
        return StudyRow(
            m=m, c=c, alpha=alpha, k_true=k_true, replicate=rep,
            k_hat=None, w_msd=None, alpha_and=None,
            runtime_seconds=time.perf_counter() - started,
            status=f"failed: {type(exc).__name__}",
        )


def run_study(
    grid: StudyGrid,
    priors,
    cfg,
    out_dir,
    *,
    k_sweep=range(1, 6),
    jobs: int = 1,
    nu_unimodal: bool = False,
    include_restrictions: bool = True,
    log=None,
) -> StudyReport:
    """Simulate and fit every (cell, replicate); write study and aggregate CSVs.

    Failures in individual replicates are recorded in their row's status and
    the study continues.  Row order is deterministic (cell-major) whatever
    the worker count.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [
        (cell_index, rep, m, c, alpha, k_true)
        for cell_index, m, c, alpha, k_true in grid.cells()
        for rep in range(grid.replicates)
    ]
    args = [
        (
            cfg.seed, cell_index, rep, m, c, alpha, k_true, priors, cfg,
            tuple(k_sweep), nu_unimodal, include_restrictions,
        )
        for cell_index, rep, m, c, alpha, k_true in tasks
    ]
    def row_line(row: StudyRow) -> str:
        return (
            f"cell m={row.m} c={row.c} alpha={row.alpha} k={row.k_true}"
            f" rep={row.replicate}: {row.status} ({row.runtime_seconds:.1f}s)"
        )

    if jobs > 1:
        rows = Parallel(n_jobs=jobs)(
            delayed(_study_replicate)(*a) for a in args
        )
        if log is not None:
            for row in rows:
                log(row_line(row))
    else:
        rows = []
        for a in args:
            row = _study_replicate(*a)
            rows.append(row)
            if log is not None:
                log(row_line(row))
    report = StudyReport(grid=grid, rows=tuple(rows))
    write_study_csv(report, out_dir / "study.csv")
    write_aggregate_csv(report, out_dir / "aggregate.csv")
    return report
