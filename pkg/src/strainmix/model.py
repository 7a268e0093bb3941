"""Band structure and beta-binomial likelihood for mixed-strain read counts.

A sample containing ``k`` distinct strains produces, at every biallelic SNP,
one of ``2**k`` possible within-sample allele frequencies ("bands"), one per
subset of strains carrying the non-reference allele.  Each band's frequency is
the summed proportion of the strains in its subset, tilted toward the
population-level allele frequency (PLAF) by the panmixia coefficient.  Read
counts around a band mean are modelled as beta-binomial, which absorbs the
overdispersion that a plain binomial cannot.

Everything in this module is a pure function over immutable inputs and is safe
to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import betaln, gammaln

# Band means of exactly 0 or 1 (unmixed bands, or any band when the panmixia
# coefficient is 0) would zero out a beta-binomial shape parameter, so band
# means are clamped into this closed interval before entering the emission
# density.  The same clamp is used when simulating, so simulation and
# inference share one emission model.
WSAF_EPS = 1e-6

MAX_STRAINS = 16  # 2**k bands; anything larger is a misuse, not a model


class SnpCounts(NamedTuple):
    """Reference / non-reference read counts at one SNP in one sample."""

    ref: int
    nonref: int

    @property
    def total(self) -> int:
        return self.ref + self.nonref


@dataclass(frozen=True)
class SampleData:
    """Per-sample read counts over the shared SNP panel.

    ``ref`` and ``nonref`` are parallel integer arrays of length M, ordered
    identically to the PLAF and to every other sample in the dataset.
    """

    sample_id: str
    ref: np.ndarray
    nonref: np.ndarray

    def __post_init__(self):
        ref = np.asarray(self.ref, dtype=np.int64)
        nonref = np.asarray(self.nonref, dtype=np.int64)
        if ref.ndim != 1 or nonref.ndim != 1 or ref.shape != nonref.shape:
            raise ValueError("ref and nonref must be 1-d arrays of equal length")
        if np.any(ref < 0) or np.any(nonref < 0):
            raise ValueError("read counts must be non-negative")
        ref.setflags(write=False)
        nonref.setflags(write=False)
        object.__setattr__(self, "ref", ref)
        object.__setattr__(self, "nonref", nonref)

    def __len__(self) -> int:
        return self.ref.shape[0]

    @property
    def total(self) -> np.ndarray:
        return self.ref + self.nonref

    @property
    def counts(self) -> list[SnpCounts]:
        return [SnpCounts(int(r), int(n)) for r, n in zip(self.ref, self.nonref)]

    @classmethod
    def from_counts(cls, sample_id: str, counts) -> "SampleData":
        ref = np.array([c[0] for c in counts], dtype=np.int64)
        nonref = np.array([c[1] for c in counts], dtype=np.int64)
        return cls(sample_id, ref, nonref)

    def wsaf(self) -> np.ndarray:
        """Observed within-sample allele frequency; NaN where coverage is zero."""
        total = self.total.astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(total > 0, self.nonref / total, np.nan)


@dataclass(frozen=True)
class Plaf:
    """Population-level allele frequencies, strictly inside (0, 1)."""

    freqs: np.ndarray

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=float)
        if freqs.ndim != 1:
            raise ValueError("PLAF must be a 1-d array")
        if np.any(freqs <= 0.0) or np.any(freqs >= 1.0):
            raise ValueError("PLAF entries must lie strictly inside (0, 1)")
        freqs.setflags(write=False)
        object.__setattr__(self, "freqs", freqs)

    def __len__(self) -> int:
        return self.freqs.shape[0]


@dataclass(frozen=True)
class BandSet:
    """The ``2**k`` strain subsets that generate the allele-frequency bands.

    ``masks[r]`` is a bitmask over the k strains (bit i set means strain i
    carries the non-reference allele in band r), ``cardinalities[r]`` its
    popcount, and ``membership`` the same information as a (2**k, k) boolean
    matrix.  Bands are ordered by mask value, so band 0 is the empty subset
    and the last band is the full set.
    """

    k: int
    masks: np.ndarray
    cardinalities: np.ndarray
    membership: np.ndarray

    @classmethod
    def for_strains(cls, k: int) -> "BandSet":
        if not 1 <= k <= MAX_STRAINS:
            raise ValueError(f"strain count must be in 1..{MAX_STRAINS}, got {k}")
        masks = np.arange(2**k, dtype=np.uint32)
        membership = (masks[:, None] >> np.arange(k)[None, :]) & 1
        membership = membership.astype(bool)
        cardinalities = membership.sum(axis=1).astype(np.int64)
        masks.setflags(write=False)
        cardinalities.setflags(write=False)
        membership.setflags(write=False)
        return cls(k=k, masks=masks, cardinalities=cardinalities, membership=membership)

    @property
    def n_bands(self) -> int:
        return self.masks.shape[0]


def canonical_weights(weights) -> np.ndarray:
    """Sort strain proportions into descending order (canonical labeling).

    The likelihood is invariant under strain relabeling, so reported
    parameters always use the descending-sorted representative.
    """
    w = np.sort(np.asarray(weights, dtype=float))[::-1].copy()
    return w


@dataclass(frozen=True)
class ModelParams:
    """One parameter state: strain count, proportions, panmixia, shape.

    ``weights`` must already be canonical (descending); use
    :func:`canonical_weights` to sort arbitrary proportions first.
    """

    k: int
    weights: np.ndarray
    alpha: float
    nu: float

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        if self.k < 1:
            raise ValueError("strain count must be positive")
        if weights.shape != (self.k,):
            raise ValueError(f"expected {self.k} weights, got shape {weights.shape}")
        if np.any(weights <= 0.0) or np.any(weights > 1.0):
            raise ValueError("weights must lie in (0, 1]")
        if abs(float(weights.sum()) - 1.0) > 1e-10:
            raise ValueError("weights must sum to 1 within 1e-10")
        if np.any(np.diff(weights) > 0.0):
            raise ValueError("weights must be sorted in descending order")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("panmixia coefficient must lie in [0, 1]")
        if not self.nu > 0.0:
            raise ValueError("beta-binomial shape must be positive")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "nu", float(self.nu))


def band_weights(band_set: BandSet, p: float) -> np.ndarray:
    """Probability of a SNP with PLAF ``p`` falling in each band.

    Band r collects C_r strains on the non-reference allele and k - C_r on
    the reference allele, so its weight is ``p**C_r * (1-p)**(k - C_r)``.
    With that exponent the weights are exactly the terms of the binomial
    expansion of ``(p + (1-p))**k`` and sum to one over the bands.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"PLAF must lie strictly inside (0, 1), got {p}")
    card = band_set.cardinalities
    return p**card * (1.0 - p) ** (band_set.k - card)


def band_wsaf(band_set: BandSet, params: ModelParams, p: float) -> np.ndarray:
    """Expected within-sample allele frequency of every band at PLAF ``p``.

    For band r this is ``(1 - alpha) * (sum of weights of strains in r)
    + alpha * p``: the dominant strains contribute their summed proportions
    while the panmictic fraction of reads is non-reference with probability
    p.  With ``alpha == 0`` the bands are the flat subset sums; with
    ``k == 1`` they reduce to the pair ``alpha * p`` and
    ``(1 - alpha) + alpha * p``.  Values are returned unclamped.
    """
    if params.k != band_set.k:
        raise ValueError(
            f"parameter strain count {params.k} does not match band set {band_set.k}"
        )
    if not 0.0 < p < 1.0:
        raise ValueError(f"PLAF must lie strictly inside (0, 1), got {p}")
    subset_sums = band_set.membership.astype(float) @ params.weights
    return (1.0 - params.alpha) * subset_sums + params.alpha * p


def beta_binomial_log_pmf(counts, q: float, nu: float) -> float:
    """Log probability of (ref, nonref) reads around band mean ``q``.

    The distribution is beta-binomial over the total read count with shape
    parameters ``q * nu`` and ``(1 - q) * nu``; ``nu`` plays the role of a
    precision, with larger values approaching the plain binomial.  The
    binomial coefficient is included.  ``q`` must already be clamped strictly
    inside (0, 1); a non-finite result means the caller failed to do so.
    """
    ref, nonref = int(counts[0]), int(counts[1])
    if ref < 0 or nonref < 0 or ref + nonref < 1:
        raise ValueError("counts must be non-negative with at least one read")
    if not 0.0 < q < 1.0:
        raise ValueError(f"band mean must be clamped strictly inside (0, 1), got {q}")
    if not nu > 0.0:
        raise ValueError("beta-binomial shape must be positive")
    total = ref + nonref
    a = q * nu
    b = (1.0 - q) * nu
    log_choose = gammaln(total + 1) - gammaln(nonref + 1) - gammaln(ref + 1)
    value = float(log_choose + betaln(nonref + a, ref + b) - betaln(a, b))
    if not np.isfinite(value):
        raise ArithmeticError(
            f"non-finite beta-binomial log pmf (q={q}, nu={nu}, counts={(ref, nonref)})"
        )
    return value


class SampleLikelihood:
    """Repeated-evaluation workspace for one sample at a fixed strain count.

    Caches every term of the log-likelihood that does not depend on the
    parameters: the per-SNP band (log) occupancy weights, which are pure
    functions of the PLAF and the subset cardinalities, and the binomial
    coefficients.  ``log_likelihood`` then costs four M x 2**k log-gamma
    evaluations per call, which is what the sampler hammers on.
    """

    def __init__(self, data: SampleData, plaf: Plaf, k: int):
        if len(data) != len(plaf):
            raise ValueError(
                f"sample {data.sample_id!r} has {len(data)} SNPs but PLAF has {len(plaf)}"
            )
        self.data = data
        self.plaf = plaf
        self.band_set = BandSet.for_strains(k)
        self.k = k
        p = plaf.freqs
        card = self.band_set.cardinalities.astype(float)
        self._membership = self.band_set.membership.astype(float)
        self._nonref = data.nonref.astype(float)
        self._ref = data.ref.astype(float)
        self._total = self._nonref + self._ref
        # log band-occupancy weights, (M, 2**k)
        self._log_band_weights = np.outer(np.log(p), card) + np.outer(
            np.log1p(-p), k - card
        )
        self._p = p
        # per-SNP constants: binomial coefficient, factored out of the band sum
        self._log_choose = (
            gammaln(self._total + 1) - gammaln(self._nonref + 1) - gammaln(self._ref + 1)
        )

    def band_means(self, weights, alpha: float) -> np.ndarray:
        """Clamped band means, shape (M, 2**k)."""
        subset_sums = self._membership @ np.asarray(weights, dtype=float)
        q = (1.0 - alpha) * subset_sums[None, :] + alpha * self._p[:, None]
        np.clip(q, WSAF_EPS, 1.0 - WSAF_EPS, out=q)
        return q

    def log_likelihood(self, weights, alpha: float, nu: float) -> float:
        """Sample log-likelihood at (weights, alpha, nu).

        Insensitive to the order of ``weights`` up to floating-point
        summation order; the canonical descending order is not required here.
        """
        q = self.band_means(weights, alpha)
        a = q * nu
        b = (1.0 - q) * nu
        band_ll = (
            self._log_band_weights
            + gammaln(self._nonref[:, None] + a)
            + gammaln(self._ref[:, None] + b)
            - gammaln(a)
            - gammaln(b)
        )
        # log-sum-exp over bands, then the factored per-SNP constants
        peak = band_ll.max(axis=1)
        mixture = peak + np.log(np.exp(band_ll - peak[:, None]).sum(axis=1))
        const = self._log_choose + gammaln(nu) - gammaln(self._total + nu)
        return float(mixture.sum() + const.sum())

    def log_likelihood_params(self, params: ModelParams) -> float:
        if params.k != self.k:
            raise ValueError(
                f"parameter strain count {params.k} does not match workspace {self.k}"
            )
        return self.log_likelihood(params.weights, params.alpha, params.nu)


def snp_log_likelihood(
    counts, band_set: BandSet, params: ModelParams, p: float
) -> float:
    """Log-likelihood of one SNP's counts: band-weighted beta-binomial mixture.

    Computed in log space via log-sum-exp over the ``2**k`` bands, with band
    means clamped into [WSAF_EPS, 1 - WSAF_EPS] before the emission density.
    """
    if params.k != band_set.k:
        raise ValueError(
            f"parameter strain count {params.k} does not match band set {band_set.k}"
        )
    data = SampleData("snp", np.array([counts[0]]), np.array([counts[1]]))
    plaf = Plaf(np.array([p], dtype=float))
    ws = SampleLikelihood(data, plaf, params.k)
    return ws.log_likelihood_params(params)


def sample_log_likelihood(data: SampleData, plaf: Plaf, params: ModelParams) -> float:
    """Sum of per-SNP log-likelihoods over the whole panel (0.0 when M == 0)."""
    if len(data) != len(plaf):
        raise ValueError(
            f"sample {data.sample_id!r} has {len(data)} SNPs but PLAF has {len(plaf)}"
        )
    if len(data) == 0:
        return 0.0
    ws = SampleLikelihood(data, plaf, params.k)
    return ws.log_likelihood_params(params)
