"""Strain-count selection: BIC scoring, harmonic-mean marginals, restrictions.

For one sample the selector fits the full model at every candidate strain
count, an alpha-pinned restriction (panmixia fixed at a near-zero value) at
every candidate, and the single-strain model, then picks the minimal-BIC
entry.  The harmonic-mean log-marginal is reported alongside for a Bayes
factor style comparison but is not used to select unless asked: the
estimator is notoriously unstable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.special import logsumexp

from .mcmc import (
    McmcConfig,
    PosteriorChain,
    PosteriorSummary,
    PriorSpec,
    derive_seed,
    max_observed_log_likelihood,
    run_chain,
    summarize,
)
from .model import Plaf, SampleData

# the alpha-pinned restriction is fit at this value rather than exactly 0,
# which would put every band mean on the clamp boundary
ALPHA_ZERO_VALUE = 0.001

MAX_SELECTABLE_K = 8


class Restriction(str, Enum):
    FULL = "full"
    ALPHA_ZERO = "alpha_zero"
    K_ONE = "k_one"


# tie-break order within equal (bic, k, n_free_params): more restricted wins
_RESTRICTION_RANK = {Restriction.K_ONE: 0, Restriction.ALPHA_ZERO: 1, Restriction.FULL: 2}

# seed-derivation salts, one RNG stream per chain role
_SALT = {Restriction.FULL: 0, Restriction.ALPHA_ZERO: 1}


def n_free_params(k: int, restriction: Restriction) -> int:
    """Free continuous parameters: simplex (k-1) + panmixia + shape."""
    if restriction is Restriction.FULL:
        return (k - 1) + 1 + 1
    if restriction is Restriction.ALPHA_ZERO:
        return (k - 1) + 1
    if restriction is Restriction.K_ONE:
        return 2
    raise ValueError(f"unknown restriction {restriction!r}")


@dataclass(frozen=True)
class ModelScore:
    """One fitted (strain count, restriction) candidate."""

    k: int
    restriction: Restriction
    bic: float
    hme_log_marginal: float
    max_log_likelihood: float
    n_free_params: int
    summary: PosteriorSummary

    def __post_init__(self):
        expected = n_free_params(self.k, self.restriction)
        if self.n_free_params != expected:
            raise ValueError(
                f"{self.restriction.value} at k={self.k} has {expected} free"
                f" parameters, not {self.n_free_params}"
            )


@dataclass(frozen=True)
class SelectionResult:
    scores: tuple[ModelScore, ...]
    selected_k: int
    selected_restriction: Restriction

    def selected_score(self) -> ModelScore:
        for score in self.scores:
            if (
                score.k == self.selected_k
                and score.restriction is self.selected_restriction
            ):
                return score
        raise ValueError("selection does not appear among the scores")


def bic(max_log_likelihood: float, n_params: int, n_obs: int) -> float:
    """Schwarz criterion: -2 * max log-likelihood + d * ln(n_obs).

    ``n_obs`` is the SNP count: the likelihood is a product of one term per
    SNP, not per read.
    """
    if n_obs < 1:
        raise ValueError("need at least one observation")
    return float(-2.0 * max_log_likelihood + n_params * np.log(n_obs))


def harmonic_mean_log_marginal(chain: PosteriorChain) -> float:
    """Harmonic mean of the likelihood over posterior draws, in log space.

    log of [ (1/n) * sum exp(-logL_i) ]^(-1) = log n - logsumexp(-logL).
    Never exceeds the chain's maximum log-likelihood.
    """
    log_liks = chain.log_likelihoods()
    if len(log_liks) < 2:
        raise ValueError("need at least two draws for a harmonic mean")
    return float(np.log(len(log_liks)) - logsumexp(-log_liks))


def _selection_key(score: ModelScore):
    return (
        score.bic,
        score.k,
        score.n_free_params,
        _RESTRICTION_RANK[score.restriction],
    )


def score_chain(
    chain: PosteriorChain, k: int, restriction: Restriction, n_obs: int
) -> ModelScore:
    max_ll = max_observed_log_likelihood(chain)
    d = n_free_params(k, restriction)
    return ModelScore(
        k=k,
        restriction=restriction,
        bic=bic(max_ll, d, n_obs),
        hme_log_marginal=harmonic_mean_log_marginal(chain),
        max_log_likelihood=max_ll,
        n_free_params=d,
        summary=summarize(chain),
    )


def select_k(
    data: SampleData,
    plaf: Plaf,
    k_range,
    priors: PriorSpec,
    cfg: McmcConfig,
    *,
    include_restrictions: bool = True,
    select_by_hme: bool = False,
    nu_unimodal: bool = False,
    return_chains: bool = False,
):
    """Sweep strain counts, score every candidate, select by minimal BIC.

    Candidates are the full model at each k in ``k_range`` plus, when
    ``include_restrictions`` is on, the alpha-pinned restriction at each k
    and the single-strain model.  The single-strain restriction is the full
    model at k=1, so when both appear they share one chain and differ only
    in label; ties break toward smaller k, then fewer free parameters, then
    the more restricted label.

    Each chain derives its own seed from ``cfg.seed``, the sample ID, k, and
    the restriction, so the sweep is reproducible and order-independent.

    Returns a SelectionResult, or (SelectionResult, chains dict) when
    ``return_chains`` is set; chain keys are (k, restriction).
    """
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValueError("empty strain-count range")
    if ks[0] < 1 or ks[-1] > MAX_SELECTABLE_K:
        raise ValueError(f"strain counts must lie in 1..{MAX_SELECTABLE_K}")
    n_obs = len(data)
    scores: list[ModelScore] = []
    chains: dict[tuple[int, Restriction], PosteriorChain] = {}

    def fit(k: int, restriction: Restriction) -> PosteriorChain:
        seed = derive_seed(cfg.seed, data.sample_id, k, _SALT[restriction])
        chain_cfg = replace(cfg, seed=seed)
        fixed = ALPHA_ZERO_VALUE if restriction is Restriction.ALPHA_ZERO else None
        try:
            return run_chain(
                data,
                plaf,
                k,
                priors,
                chain_cfg,
                fixed_alpha=fixed,
                nu_unimodal=nu_unimodal,
            )
        except Exception as exc:
            raise RuntimeError(
                f"chain failed for sample {data.sample_id!r} at k={k},"
                f" restriction={restriction.value}: {exc}"
            ) from exc

    for k in ks:
        chain = fit(k, Restriction.FULL)
        chains[(k, Restriction.FULL)] = chain
        scores.append(score_chain(chain, k, Restriction.FULL, n_obs))
        if include_restrictions:
            restricted = fit(k, Restriction.ALPHA_ZERO)
            chains[(k, Restriction.ALPHA_ZERO)] = restricted
            scores.append(score_chain(restricted, k, Restriction.ALPHA_ZERO, n_obs))
    if include_restrictions:
        # single-strain restriction == full model at k=1: reuse that chain
        # (same derived seed) rather than fitting an identical copy
        if 1 in ks:
            k_one_chain = chains[(1, Restriction.FULL)]
        else:
            k_one_chain = fit(1, Restriction.FULL)
        chains[(1, Restriction.K_ONE)] = k_one_chain
        scores.append(score_chain(k_one_chain, 1, Restriction.K_ONE, n_obs))

    ordered = tuple(
        sorted(scores, key=lambda s: (s.k, _RESTRICTION_RANK[s.restriction]))
    )
    if select_by_hme:
        winner = max(
            scores,
            key=lambda s: (
                s.hme_log_marginal,
                -s.k,
                -s.n_free_params,
                -_RESTRICTION_RANK[s.restriction],
            ),
        )
    else:
        winner = min(scores, key=_selection_key)
    result = SelectionResult(
        scores=ordered,
        selected_k=winner.k,
        selected_restriction=winner.restriction,
    )
    if return_chains:
        return result, chains
    return result


def prior_odds_adjusted(scores, priors: PriorSpec) -> list[float]:
    """hmeBF log-marginals plus the log strain-count prior, order-preserving."""
    return [s.hme_log_marginal + priors.log_k_prior(s.k) for s in scores]
