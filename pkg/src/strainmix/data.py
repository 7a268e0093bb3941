"""Read-count ingestion, QC filtering, and population allele frequencies.

Two on-disk formats carry the same (SNP x sample) matrix of reference /
non-reference read counts: a long-form TSV with one row per cell, and a JSON
object with row-major matrices.  Zero reads in both columns encodes a missing
observation.  Filtering removes low-coverage samples and uninformative SNPs
in a fixed order; the population-level allele frequency (PLAF) is then the
pooled non-reference fraction per SNP, treated as fixed by the inference
stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .model import Plaf, SampleData

# PLAF estimates are clamped into [PLAF_EPS, 1 - PLAF_EPS]; the open-interval
# constraint on Plaf would otherwise reject monomorphic pools, and band
# occupancy weights take logs of both p and 1-p.
PLAF_EPS = 1e-6

TSV_HEADER = ("snp_id", "sample_id", "ref", "nonref")


class CountsFormatError(ValueError):
    """Malformed input table: parse failures, duplicates, ragged rows."""


class FilterError(ValueError):
    """QC filtering removed every sample or every SNP."""


@dataclass(frozen=True)
class Dataset:
    """Immutable read-count matrix over samples sharing one SNP panel."""

    samples: tuple[SampleData, ...]
    snp_ids: tuple[str, ...]
    plaf: Plaf | None = None

    def __post_init__(self):
        samples = tuple(self.samples)
        snp_ids = tuple(self.snp_ids)
        if len(samples) < 1:
            raise ValueError("dataset needs at least one sample")
        if len(snp_ids) < 1:
            raise ValueError("dataset needs at least one SNP")
        m = len(snp_ids)
        for s in samples:
            if len(s) != m:
                raise ValueError(
                    f"sample {s.sample_id!r} has {len(s)} SNPs, panel has {m}"
                )
        ids = [s.sample_id for s in samples]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate sample IDs in dataset")
        if len(set(snp_ids)) != len(snp_ids):
            raise ValueError("duplicate SNP IDs in dataset")
        if self.plaf is not None and len(self.plaf) != m:
            raise ValueError("PLAF length does not match SNP panel")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "snp_ids", snp_ids)

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def n_snps(self) -> int:
        return len(self.snp_ids)

    @property
    def sample_ids(self) -> tuple[str, ...]:
        return tuple(s.sample_id for s in self.samples)

    def ref_matrix(self) -> np.ndarray:
        """(N, M) reference counts, rows ordered as ``samples``."""
        return np.stack([s.ref for s in self.samples])

    def nonref_matrix(self) -> np.ndarray:
        return np.stack([s.nonref for s in self.samples])

    def with_plaf(self, plaf: Plaf) -> "Dataset":
        return replace(self, plaf=plaf)


@dataclass(frozen=True)
class FilterConfig:
    """QC thresholds.

    A sample is dropped when more than ``max_low_coverage_snps`` of its SNPs
    have fewer than ``low_coverage_threshold`` total reads.  SNP-level stages
    then drop missingness (any zero-coverage cell, when ``drop_missing``),
    pooled minor-allele frequency below ``min_maf``, and SNPs with no
    variation left in the pool.
    """

    min_maf: float = 0.01
    max_low_coverage_snps: int = 4000
    low_coverage_threshold: int = 20
    drop_missing: bool = True

    def __post_init__(self):
        if not 0.0 <= self.min_maf < 0.5:
            raise ValueError("min_maf must lie in [0, 0.5)")
        if self.max_low_coverage_snps < 0 or self.low_coverage_threshold < 0:
            raise ValueError("coverage thresholds must be non-negative")


@dataclass(frozen=True)
class FilterReport:
    """Counts removed at each QC stage; totals must reconcile."""

    n_samples_raw: int
    removed_sample_ids: tuple[str, ...]
    n_samples_final: int
    n_snps_raw: int
    n_removed_missing: int
    n_removed_maf: int
    n_removed_no_variation: int
    n_snps_final: int

    def __post_init__(self):
        object.__setattr__(
            self, "removed_sample_ids", tuple(self.removed_sample_ids)
        )
        if self.n_samples_raw - len(self.removed_sample_ids) != self.n_samples_final:
            raise ValueError("sample totals do not reconcile")
        removed = (
            self.n_removed_missing + self.n_removed_maf + self.n_removed_no_variation
        )
        if self.n_snps_raw - removed != self.n_snps_final:
            raise ValueError("SNP totals do not reconcile")


def _parse_count(text: str, line_no: int, path: str, column: str) -> int:
    if not text.isdigit():
        raise CountsFormatError(
            f"{path}: line {line_no}: {column} count {text!r} is not a"
            " non-negative base-10 integer"
        )
    return int(text)


def load_counts_tsv(path) -> Dataset:
    """Load the long-form TSV: header then one row per (SNP, sample) cell.

    The matrix must be complete: every (SNP, sample) pair appears exactly
    once, with missing observations written explicitly as ref=0, nonref=0.
    SNP and sample ordering follow first appearance in the file.
    """
    path = str(path)
    # insertion-ordered dicts double as first-appearance ID lists
    snp_order: dict[str, None] = {}
    sample_order: dict[str, None] = {}
    cells: dict[tuple[str, str], tuple[int, int]] = {}
    with open(path, encoding="utf-8", newline="") as handle:
        header = handle.readline()
        if tuple(header.rstrip("\r\n").split("\t")) != TSV_HEADER:
            raise CountsFormatError(
                f"{path}: line 1: expected header"
                f" {chr(9).join(TSV_HEADER)!r}, got {header.rstrip()!r}"
            )
        for line_no, line in enumerate(handle, start=2):
            stripped = line.rstrip("\r\n")
            if not stripped:
                continue
            fields = stripped.split("\t")
            if len(fields) != 4:
                raise CountsFormatError(
                    f"{path}: line {line_no}: expected 4 tab-separated fields,"
                    f" got {len(fields)}"
                )
            snp_id, sample_id, ref_text, nonref_text = fields
            ref = _parse_count(ref_text, line_no, path, "ref")
            nonref = _parse_count(nonref_text, line_no, path, "nonref")
            key = (snp_id, sample_id)
            if key in cells:
                raise CountsFormatError(
                    f"{path}: line {line_no}: duplicate cell for SNP"
                    f" {snp_id!r}, sample {sample_id!r}"
                )
            snp_order.setdefault(snp_id)
            sample_order.setdefault(sample_id)
            cells[key] = (ref, nonref)
    snp_ids = list(snp_order)
    sample_ids = list(sample_order)
    if not cells:
        raise CountsFormatError(f"{path}: no data rows")
    missing = [
        (snp, sample)
        for snp in snp_ids
        for sample in sample_ids
        if (snp, sample) not in cells
    ]
    if missing:
        snp, sample = missing[0]
        raise CountsFormatError(
            f"{path}: incomplete matrix: no row for SNP {snp!r}, sample"
            f" {sample!r} ({len(missing)} cells absent; encode missing data"
            " as ref=0, nonref=0)"
        )
    samples = []
    for sample_id in sample_ids:
        ref = np.array([cells[(snp, sample_id)][0] for snp in snp_ids], dtype=np.int64)
        nonref = np.array(
            [cells[(snp, sample_id)][1] for snp in snp_ids], dtype=np.int64
        )
        samples.append(SampleData(sample_id, ref, nonref))
    return Dataset(samples=tuple(samples), snp_ids=tuple(snp_ids))


def _check_id_list(values, name: str, path: str) -> list[str]:
    if not isinstance(values, list) or not values:
        raise CountsFormatError(f"{path}: {name} must be a non-empty list")
    if not all(isinstance(v, str) for v in values):
        raise CountsFormatError(f"{path}: {name} entries must be strings")
    if len(set(values)) != len(values):
        dupes = sorted({v for v in values if values.count(v) > 1})
        raise CountsFormatError(f"{path}: duplicate {name}: {dupes[0]!r}")
    return values


def _check_matrix(rows, name: str, n: int, m: int, path: str) -> np.ndarray:
    if not isinstance(rows, list) or len(rows) != n:
        raise CountsFormatError(
            f"{path}: {name} must be a list of {n} rows (one per sample)"
        )
    out = np.empty((n, m), dtype=np.int64)
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != m:
            raise CountsFormatError(
                f"{path}: {name} row {i} must be a list of {m} counts"
            )
        for j, value in enumerate(row):
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise CountsFormatError(
                    f"{path}: {name} row {i}, column {j}: count {value!r} is"
                    " not a non-negative integer"
                )
            out[i, j] = value
    return out


def load_counts_json(path) -> Dataset:
    """Load the JSON format: id lists plus row-major (sample x SNP) matrices."""
    path = str(path)
    with open(path, encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise CountsFormatError(
                f"{path}: line {exc.lineno}: invalid JSON: {exc.msg}"
            ) from exc
    if not isinstance(payload, dict):
        raise CountsFormatError(f"{path}: top-level JSON value must be an object")
    for key in ("snp_ids", "sample_ids", "ref", "nonref"):
        if key not in payload:
            raise CountsFormatError(f"{path}: missing key {key!r}")
    snp_ids = _check_id_list(payload["snp_ids"], "snp_ids", path)
    sample_ids = _check_id_list(payload["sample_ids"], "sample_ids", path)
    n, m = len(sample_ids), len(snp_ids)
    ref = _check_matrix(payload["ref"], "ref", n, m, path)
    nonref = _check_matrix(payload["nonref"], "nonref", n, m, path)
    samples = tuple(
        SampleData(sample_id, ref[i], nonref[i]) for i, sample_id in enumerate(sample_ids)
    )
    return Dataset(samples=samples, snp_ids=tuple(snp_ids))


def load_counts(path, format: str = "tsv") -> Dataset:
    """Load a read-count table in the named format ("tsv" or "json")."""
    if format == "tsv":
        return load_counts_tsv(path)
    if format == "json":
        return load_counts_json(path)
    raise ValueError(f"unknown counts format {format!r}")


def write_counts_tsv(ds: Dataset, path) -> None:
    """Write the canonical long-form TSV (LF line endings, full matrix)."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\t".join(TSV_HEADER) + "\n")
        for j, snp_id in enumerate(ds.snp_ids):
            for s in ds.samples:
                handle.write(
                    f"{snp_id}\t{s.sample_id}\t{s.ref[j]}\t{s.nonref[j]}\n"
                )


def write_counts_json(ds: Dataset, path) -> None:
    payload = {
        "snp_ids": list(ds.snp_ids),
        "sample_ids": list(ds.sample_ids),
        "ref": ds.ref_matrix().tolist(),
        "nonref": ds.nonref_matrix().tolist(),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, indent=2)
        handle.write("\n")


def apply_filters(ds: Dataset, cfg: FilterConfig) -> tuple[Dataset, FilterReport]:
    """QC in fixed order: samples, missingness, MAF, no-variation.

    A sample is dropped when more than ``cfg.max_low_coverage_snps`` of its
    SNPs (on the raw panel) fall under ``cfg.low_coverage_threshold`` total
    reads.  SNP stages then act on the retained samples only.  Raises
    :class:`FilterError` when nothing survives.
    """
    ref = ds.ref_matrix()
    nonref = ds.nonref_matrix()
    total = ref + nonref

    low = (total < cfg.low_coverage_threshold).sum(axis=1)
    keep_sample = low <= cfg.max_low_coverage_snps
    removed_ids = tuple(
        s.sample_id for s, keep in zip(ds.samples, keep_sample) if not keep
    )
    if not keep_sample.any():
        raise FilterError("low-coverage filter removed every sample")
    ref = ref[keep_sample]
    nonref = nonref[keep_sample]
    total = total[keep_sample]

    keep_snp = np.ones(ds.n_snps, dtype=bool)
    if cfg.drop_missing:
        missing = (total == 0).any(axis=0)
    else:
        missing = np.zeros(ds.n_snps, dtype=bool)
    keep_snp &= ~missing

    pooled_nonref = nonref.sum(axis=0)
    pooled_total = total.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        freq = np.where(pooled_total > 0, pooled_nonref / pooled_total, np.nan)
    maf = np.minimum(freq, 1.0 - freq)
    # zero-coverage SNPs have no defined MAF; they fall to the no-variation
    # stage instead
    low_maf = keep_snp & (pooled_total > 0) & (maf < cfg.min_maf)
    keep_snp &= ~low_maf

    pooled_ref = pooled_total - pooled_nonref
    no_variation = keep_snp & ((pooled_nonref == 0) | (pooled_ref == 0))
    keep_snp &= ~no_variation

    if not keep_snp.any():
        raise FilterError("SNP filters removed every SNP")

    kept_samples = tuple(
        SampleData(s.sample_id, s.ref[keep_snp], s.nonref[keep_snp])
        for s, keep in zip(ds.samples, keep_sample)
        if keep
    )
    kept_snp_ids = tuple(
        snp_id for snp_id, keep in zip(ds.snp_ids, keep_snp) if keep
    )
    report = FilterReport(
        n_samples_raw=ds.n_samples,
        removed_sample_ids=removed_ids,
        n_samples_final=int(keep_sample.sum()),
        n_snps_raw=ds.n_snps,
        n_removed_missing=int(missing.sum()),
        n_removed_maf=int(low_maf.sum()),
        n_removed_no_variation=int(no_variation.sum()),
        n_snps_final=int(keep_snp.sum()),
    )
    filtered = Dataset(samples=kept_samples, snp_ids=kept_snp_ids)
    return filtered, report


def compute_plaf(ds: Dataset) -> Plaf:
    """Plug-in PLAF: pooled non-reference fraction per SNP, clamped.

    Pooling is over read counts, not per-sample frequencies, matching the
    maximum-likelihood estimate; the two differ under uneven coverage.
    """
    nonref = ds.nonref_matrix().sum(axis=0)
    total = ds.ref_matrix().sum(axis=0) + nonref
    if np.any(total == 0):
        bad = ds.snp_ids[int(np.argmax(total == 0))]
        raise ValueError(f"SNP {bad!r} has zero pooled coverage; filter first")
    freqs = np.clip(nonref / total, PLAF_EPS, 1.0 - PLAF_EPS)
    return Plaf(freqs)
