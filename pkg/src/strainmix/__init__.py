"""Strain-count, proportion, and panmixia inference from per-SNP read counts."""

from .data import (
    CountsFormatError,
    Dataset,
    FilterConfig,
    FilterError,
    FilterReport,
    apply_filters,
    compute_plaf,
    load_counts,
    write_counts_json,
    write_counts_tsv,
)
from .mcmc import (
    McmcConfig,
    PosteriorChain,
    PosteriorSummary,
    PriorSpec,
    derive_seed,
    run_chain,
    summarize,
    unimodal_nu_bound,
    write_chain_csv,
)
from .model import (
    MAX_STRAINS,
    WSAF_EPS,
    BandSet,
    ModelParams,
    Plaf,
    SampleData,
    SampleLikelihood,
    SnpCounts,
    band_weights,
    band_wsaf,
    beta_binomial_log_pmf,
    canonical_weights,
    sample_log_likelihood,
    snp_log_likelihood,
)
from .selection import (
    ModelScore,
    Restriction,
    SelectionResult,
    bic,
    harmonic_mean_log_marginal,
    select_k,
)
from .simulate import (
    SimConfig,
    StudyGrid,
    StudyReport,
    run_study,
    simulate_sample,
)

__version__ = "0.1.0"

__all__ = [
    "MAX_STRAINS",
    "WSAF_EPS",
    "BandSet",
    "CountsFormatError",
    "Dataset",
    "FilterConfig",
    "FilterError",
    "FilterReport",
    "McmcConfig",
    "ModelParams",
    "ModelScore",
    "Plaf",
    "PosteriorChain",
    "PosteriorSummary",
    "PriorSpec",
    "Restriction",
    "SampleData",
    "SampleLikelihood",
    "SelectionResult",
    "SimConfig",
    "SnpCounts",
    "StudyGrid",
    "StudyReport",
    "apply_filters",
    "band_weights",
    "band_wsaf",
    "beta_binomial_log_pmf",
    "bic",
    "canonical_weights",
    "compute_plaf",
    "derive_seed",
    "harmonic_mean_log_marginal",
    "load_counts",
    "run_chain",
    "run_study",
    "sample_log_likelihood",
    "select_k",
    "simulate_sample",
    "snp_log_likelihood",
    "summarize",
    "unimodal_nu_bound",
    "write_chain_csv",
    "write_counts_json",
    "write_counts_tsv",
    "__version__",
]
