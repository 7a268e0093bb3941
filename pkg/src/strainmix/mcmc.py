"""Metropolis-Hastings posterior sampling for one sample at fixed strain count.

The sampler updates three blocks per iteration, in fixed order: panmixia
coefficient, strain proportions, beta-binomial shape.  Every block proposal
is an independent draw from that block's prior, so prior and proposal
densities cancel and acceptance reduces to a pure likelihood ratio.  Chains
are deterministic given the seed, with exactly one uniform consumed per
accept/reject decision.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

from .model import (
    WSAF_EPS,
    BandSet,
    ModelParams,
    Plaf,
    SampleData,
    SampleLikelihood,
)

MAX_INIT_RETRIES = 100


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters of the four priors.

    Strain proportions are symmetric Dirichlet (concentration replicated to
    the current strain count), the panmixia coefficient is uniform on
    ``alpha_bounds``, the shape parameter is exponential with the given
    mean, and the strain-count prior (used only for optional reporting
    odds, never for fitting) is zero-truncated Poisson.
    """

    dirichlet_concentration: float = 1.0
    alpha_bounds: tuple[float, float] = (0.0, 1.0)
    nu_mean: float = 5.0
    k_prior_rate: float = 2.0

    def __post_init__(self):
        if not self.dirichlet_concentration > 0.0:
            raise ValueError("Dirichlet concentration must be positive")
        low, high = self.alpha_bounds
        if not 0.0 <= low < high <= 1.0:
            raise ValueError("alpha bounds must satisfy 0 <= low < high <= 1")
        if not self.nu_mean > 0.0:
            raise ValueError("shape-prior mean must be positive")
        if not self.k_prior_rate > 0.0:
            raise ValueError("strain-count prior rate must be positive")

    def log_k_prior(self, k: int) -> float:
        """Zero-truncated Poisson log pmf of the strain count, k >= 1."""
        if k < 1:
            raise ValueError("strain count must be >= 1")
        rate = self.k_prior_rate
        return k * math.log(rate) - math.log(math.expm1(rate)) - gammaln(k + 1)


@dataclass(frozen=True)
class McmcConfig:
    n_iterations: int = 10000
    burn_in: int = 2000
    thin: int = 5
    seed: int = 0
    nu_lower_bound: float | None = None

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("need at least one iteration")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("burn-in must satisfy 0 <= burn_in < n_iterations")
        if self.thin < 1:
            raise ValueError("thinning stride must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.nu_lower_bound is not None and not self.nu_lower_bound > 0.0:
            raise ValueError("explicit shape lower bound must be positive")


class ChainDraw(NamedTuple):
    params: ModelParams
    log_likelihood: float


@dataclass(frozen=True)
class PosteriorChain:
    """Stored post-burn-in, thinned draws plus per-block acceptance rates."""

    draws: tuple[ChainDraw, ...]
    acceptance_rates: dict[str, float]
    config: McmcConfig
    k: int

    def __post_init__(self):
        if len(self.draws) < 1:
            raise ValueError("chain must retain at least one draw")
        for draw in self.draws:
            if not math.isfinite(draw.log_likelihood):
                raise ValueError("stored log-likelihoods must be finite")
        for rate in self.acceptance_rates.values():
            if not 0.0 <= rate <= 1.0:
                raise ValueError("acceptance rates must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.draws)

    def iteration_numbers(self) -> np.ndarray:
        """Original iteration index of each stored draw."""
        cfg = self.config
        return cfg.burn_in + cfg.thin * np.arange(len(self.draws))

    def alphas(self) -> np.ndarray:
        return np.array([d.params.alpha for d in self.draws])

    def nus(self) -> np.ndarray:
        return np.array([d.params.nu for d in self.draws])

    def weight_matrix(self) -> np.ndarray:
        """(n_draws, k) canonical (descending) proportions."""
        return np.array([d.params.weights for d in self.draws])

    def log_likelihoods(self) -> np.ndarray:
        return np.array([d.log_likelihood for d in self.draws])


@dataclass(frozen=True)
class PosteriorSummary:
    """Point and interval summaries of one chain.

    The reported point estimate is the draw with the highest log-likelihood;
    with the near-flat priors in use this coincides with the posterior mode
    up to Monte Carlo error.  Intervals are equal-tailed 95%.
    """

    map_params: ModelParams
    median_alpha: float
    alpha_ci_95: tuple[float, float]
    weight_medians: tuple[float, ...]
    weight_ci_95: tuple[tuple[float, float], ...]
    max_log_likelihood: float

    def __post_init__(self):
        lo, hi = self.alpha_ci_95
        if not lo <= self.median_alpha <= hi:
            raise ValueError("panmixia interval must bracket its median")
        for median, (wlo, whi) in zip(self.weight_medians, self.weight_ci_95):
            if not wlo <= median <= whi:
                raise ValueError("proportion intervals must bracket their medians")


def derive_seed(base_seed: int, sample_id: str, k: int, salt: int = 0) -> int:
    """Deterministic per-(sample, strain count, role) seed from one base seed.

    The sample ID is folded in through the first eight bytes of its SHA-256
    digest so that unrelated IDs land on unrelated streams; mixing happens
    inside numpy's SeedSequence rather than by raw XOR, which would correlate
    streams for related inputs.
    """
    digest = hashlib.sha256(sample_id.encode("utf-8")).digest()
    token = int.from_bytes(digest[:8], "little")
    seq = np.random.SeedSequence([base_seed, token, k, salt])
    return int(seq.generate_state(1, np.uint64)[0])


def mh_accept_log(rng: np.random.Generator, log_ratio: float) -> bool:
    """One Metropolis-Hastings decision; always consumes exactly one uniform."""
    return rng.random() < math.exp(min(log_ratio, 0.0))


def unimodal_nu_bound(weights, alpha: float, band_set: BandSet) -> float | None:
    """Smallest shape keeping every usable band's emission unimodal.

    A beta density is unimodal when both shape parameters exceed 1, i.e.
    nu > 1/min(q, 1-q) for band mean q.  Evaluated at the midpoint
    population frequency; bands clamped against the boundary are excluded
    (no finite shape helps them), and ``None`` means no usable band exists.
    """
    subset_sums = band_set.membership.astype(float) @ np.asarray(weights, dtype=float)
    q = (1.0 - alpha) * subset_sums + alpha * 0.5
    inside = (q > WSAF_EPS) & (q < 1.0 - WSAF_EPS)
    if not inside.any():
        return None
    margin = np.minimum(q[inside], 1.0 - q[inside]).min()
    return float(1.0 / margin)


def _sample_alpha(rng: np.random.Generator, priors: PriorSpec) -> float:
    low, high = priors.alpha_bounds
    return float(rng.uniform(low, high))


def _sample_weights(rng: np.random.Generator, priors: PriorSpec, k: int) -> np.ndarray:
    conc = np.full(k, priors.dirichlet_concentration)
    return np.sort(rng.dirichlet(conc))[::-1].copy()


def _sample_nu(rng: np.random.Generator, priors: PriorSpec) -> float:
    while True:
        value = float(rng.exponential(priors.nu_mean))
        if value > 0.0:
            return value


def run_chain(
    data: SampleData,
    plaf: Plaf,
    k: int,
    priors: PriorSpec,
    cfg: McmcConfig,
    *,
    fixed_alpha: float | None = None,
    nu_unimodal: bool = False,
) -> PosteriorChain:
    """Sample the posterior of (alpha, weights, nu) at fixed strain count.

    Block order per iteration: alpha, weights, nu.  Each proposal is an
    independent prior draw accepted with probability min(1, likelihood
    ratio).  ``fixed_alpha`` pins the panmixia coefficient (its block is
    skipped entirely), which is how the restricted comparison model is fit.
    ``nu_unimodal`` auto-rejects shape proposals below the dynamic
    unimodality bound of the current state; an explicit
    ``cfg.nu_lower_bound`` is enforced the same way, and both may apply.

    Arguments:
        data: read counts for one sample.
        plaf: population allele frequencies aligned with ``data``.
        k: strain count to condition on, >= 1.
        priors: prior hyperparameters (= proposal distributions).
        cfg: chain length, burn-in, thinning, seed, optional shape bound.

    Returns:
        PosteriorChain of the post-burn-in, thinned draws.
    """
    if fixed_alpha is not None and not 0.0 <= fixed_alpha <= 1.0:
        raise ValueError("fixed panmixia value must lie in [0, 1]")
    workspace = SampleLikelihood(data, plaf, k)
    band_set = workspace.band_set
    rng = np.random.default_rng(cfg.seed)

    def effective_bound(weights, alpha) -> float:
        bound = cfg.nu_lower_bound if cfg.nu_lower_bound is not None else 0.0
        if nu_unimodal:
            dynamic = unimodal_nu_bound(weights, alpha, band_set)
            if dynamic is not None:
                bound = max(bound, dynamic)
        return bound

    alpha = None
    weights = None
    nu = None
    log_lik = -math.inf
    for _ in range(MAX_INIT_RETRIES):
        alpha = fixed_alpha if fixed_alpha is not None else _sample_alpha(rng, priors)
        weights = np.array([1.0]) if k == 1 else _sample_weights(rng, priors, k)
        nu = _sample_nu(rng, priors)
        if nu <= effective_bound(weights, alpha):
            continue
        log_lik = workspace.log_likelihood(weights, alpha, nu)
        if math.isfinite(log_lik):
            break
    else:
        raise RuntimeError(
            f"no finite-likelihood initial state for sample"
            f" {data.sample_id!r} at k={k} after {MAX_INIT_RETRIES} draws"
        )

    update_alpha = fixed_alpha is None
    update_weights = k > 1
    proposals = {"alpha": 0, "weights": 0, "nu": 0}
    accepts = {"alpha": 0, "weights": 0, "nu": 0}
    draws: list[ChainDraw] = []

    for iteration in range(cfg.n_iterations):
        if update_alpha:
            proposal = _sample_alpha(rng, priors)
            proposed_lik = workspace.log_likelihood(weights, proposal, nu)
            proposals["alpha"] += 1
            if mh_accept_log(rng, proposed_lik - log_lik):
                alpha, log_lik = proposal, proposed_lik
                accepts["alpha"] += 1

        if update_weights:
            proposal_w = _sample_weights(rng, priors, k)
            proposed_lik = workspace.log_likelihood(proposal_w, alpha, nu)
            proposals["weights"] += 1
            if mh_accept_log(rng, proposed_lik - log_lik):
                weights, log_lik = proposal_w, proposed_lik
                accepts["weights"] += 1

        proposal_nu = _sample_nu(rng, priors)
        proposals["nu"] += 1
        if proposal_nu > effective_bound(weights, alpha):
            proposed_lik = workspace.log_likelihood(weights, alpha, proposal_nu)
            if mh_accept_log(rng, proposed_lik - log_lik):
                nu, log_lik = proposal_nu, proposed_lik
                accepts["nu"] += 1

        if iteration >= cfg.burn_in and (iteration - cfg.burn_in) % cfg.thin == 0:
            params = ModelParams(k=k, weights=weights, alpha=alpha, nu=nu)
            draws.append(ChainDraw(params=params, log_likelihood=log_lik))

    rates = {
        block: (accepts[block] / proposals[block]) if proposals[block] else 0.0
        for block in proposals
    }
    return PosteriorChain(
        draws=tuple(draws), acceptance_rates=rates, config=cfg, k=k
    )


def _interval(values: np.ndarray) -> tuple[float, float]:
    lo, hi = np.quantile(values, [0.025, 0.975])
    return float(lo), float(hi)


def summarize(chain: PosteriorChain) -> PosteriorSummary:
    """Point estimate (highest-likelihood draw) plus medians and 95% intervals."""
    log_liks = chain.log_likelihoods()
    best = int(np.argmax(log_liks))
    alphas = chain.alphas()
    weight_draws = chain.weight_matrix()
    weight_medians = tuple(float(v) for v in np.median(weight_draws, axis=0))
    weight_ci = tuple(_interval(weight_draws[:, j]) for j in range(chain.k))
    return PosteriorSummary(
        map_params=chain.draws[best].params,
        median_alpha=float(np.median(alphas)),
        alpha_ci_95=_interval(alphas),
        weight_medians=weight_medians,
        weight_ci_95=weight_ci,
        max_log_likelihood=float(log_liks[best]),
    )


def max_observed_log_likelihood(chain: PosteriorChain) -> float:
    """Highest stored log-likelihood; the plug-in for the model-score penalty."""
    return float(chain.log_likelihoods().max())


def write_chain_csv(chain: PosteriorChain, path) -> None:
    """Dump the stored draws: iteration, alpha, w_1..w_k, nu, log_likelihood."""
    weight_header = ",".join(f"w_{j + 1}" for j in range(chain.k))
    iterations = chain.iteration_numbers()
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("# schema: strainmix.chain.v1\n")
        handle.write(f"iteration,alpha,{weight_header},nu,log_likelihood\n")
        for iteration, draw in zip(iterations, chain.draws):
            weights = ",".join(repr(float(w)) for w in draw.params.weights)
            handle.write(
                f"{iteration},{draw.params.alpha!r},{weights},"
                f"{draw.params.nu!r},{draw.log_likelihood!r}\n"
            )
