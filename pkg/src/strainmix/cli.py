"""Batch command-line interface.

Subcommands: ``fit`` (posterior inference per sample, with optional
strain-count selection), ``simulate`` (synthetic datasets with ground
truth), ``study`` (the full simulation grid), ``compare`` (full vs
restricted model per sample), and ``plaf`` (QC plus population allele
frequencies only).

Every run writes into a fresh output directory: data products first, then a
single manifest recording the tool version, command line, resolved seed, and
input digests, so any run can be reproduced byte-for-byte (timestamps and
wall-clock fields aside) from its manifest.  Exit codes: 0 success, 1 input
error, 2 inference error, 3 partial study failure.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import re
import shlex
import sys
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from . import __version__
from .data import (
    CountsFormatError,
    Dataset,
    FilterConfig,
    FilterError,
    apply_filters,
    compute_plaf,
    load_counts,
    write_counts_json,
    write_counts_tsv,
)
from .mcmc import (
    McmcConfig,
    PriorSpec,
    derive_seed,
    run_chain,
    write_chain_csv,
)
from .model import BandSet, Plaf
from .selection import (
    Restriction,
    prior_odds_adjusted,
    score_chain,
    select_k,
)
from .simulate import (
    SimConfig,
    StudyGrid,
    draw_bands,
    draw_read_counts,
    run_study,
    simulate_sample,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFERENCE = 2
EXIT_PARTIAL_STUDY = 3

# simulated-points stream in figure data; keeps it apart from chain streams
_FIGURE_SALT = 1000


class CliError(Exception):
    """Input-level failure: bad arguments, bad files, bad output locations."""


def _log(message: str) -> None:
    print(f"[strainmix] {message}", file=sys.stderr)


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _safe_name(sample_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", sample_id)


def parse_k_range(text: str) -> tuple[int, ...]:
    """Accept "3", "1,2,5", or "1..7" (inclusive)."""
    text = text.strip()
    match = re.fullmatch(r"(\d+)\.\.(\d+)", text)
    if match:
        lo, hi = int(match.group(1)), int(match.group(2))
        if hi < lo:
            raise CliError(f"empty strain-count range {text!r}")
        return tuple(range(lo, hi + 1))
    try:
        values = tuple(sorted({int(part) for part in text.split(",")}))
    except ValueError:
        raise CliError(
            f"cannot parse strain-count range {text!r}; use K, A..B, or K1,K2,..."
        ) from None
    if not values:
        raise CliError(f"empty strain-count range {text!r}")
    return values


def _resolve_seed(seed_arg) -> int:
    if seed_arg is not None:
        return int(seed_arg)
    return int(np.random.SeedSequence().generate_state(1, np.uint64)[0])


def _fresh_out_dir(path_text: str) -> Path:
    out = Path(path_text)
    if out.exists():
        if not out.is_dir() or any(out.iterdir()):
            raise CliError(f"output location {out} exists and is not empty")
    else:
        out.mkdir(parents=True)
    return out


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _write_manifest(
    out_dir: Path, argv, seed: int, inputs: dict[str, str], started: str
) -> None:
    payload = {
        "schema": "strainmix.manifest.v1",
        "tool": "strainmix",
        "tool_version": __version__,
        "command": shlex.join(["strainmix", *argv]),
        "seed": seed,
        "input_digests": inputs,
        "started_at": started,
        "finished_at": _utc_now(),
    }
    _write_json(out_dir / "manifest.json", payload)


def _write_plaf_csv(path: Path, snp_ids, plaf: Plaf) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("# schema: strainmix.plaf.v1\n")
        handle.write("snp_id,plaf\n")
        for snp_id, p in zip(snp_ids, plaf.freqs):
            handle.write(f"{snp_id},{float(p)!r}\n")


def _read_plaf_csv(path: Path) -> dict[str, float]:
    table: dict[str, float] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line == "snp_id,plaf":
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise CliError(f"{path}: line {line_no}: expected snp_id,plaf")
            try:
                table[parts[0]] = float(parts[1])
            except ValueError:
                raise CliError(
                    f"{path}: line {line_no}: bad frequency {parts[1]!r}"
                ) from None
    if not table:
        raise CliError(f"{path}: no frequencies found")
    return table


def _filter_config(args) -> FilterConfig:
    return FilterConfig(
        min_maf=args.min_maf,
        max_low_coverage_snps=args.max_low_coverage_snps,
        low_coverage_threshold=args.low_coverage_threshold,
        drop_missing=not args.keep_missing,
    )


def _filter_report_payload(report) -> dict:
    return {
        "schema": "strainmix.filter-report.v1",
        "n_samples_raw": report.n_samples_raw,
        "removed_sample_ids": list(report.removed_sample_ids),
        "n_samples_final": report.n_samples_final,
        "n_snps_raw": report.n_snps_raw,
        "n_removed_missing": report.n_removed_missing,
        "n_removed_maf": report.n_removed_maf,
        "n_removed_no_variation": report.n_removed_no_variation,
        "n_snps_final": report.n_snps_final,
    }


def _load_and_prepare(args) -> tuple[Dataset, Plaf, dict | None]:
    """Load counts, run QC, resolve the PLAF; nothing is written yet."""
    input_path = Path(args.input)
    if not input_path.exists():
        raise CliError(f"input file {input_path} does not exist")
    fmt = args.format or ("json" if input_path.suffix == ".json" else "tsv")
    dataset = load_counts(input_path, fmt)
    report_payload = None
    if args.no_filter:
        filtered = dataset
    else:
        filtered, report = apply_filters(dataset, _filter_config(args))
        report_payload = _filter_report_payload(report)
    if getattr(args, "plaf", None):
        table = _read_plaf_csv(Path(args.plaf))
        missing = [s for s in filtered.snp_ids if s not in table]
        if missing:
            raise CliError(
                f"PLAF file {args.plaf} lacks {len(missing)} retained SNPs"
                f" (first: {missing[0]!r})"
            )
        try:
            plaf = Plaf(np.array([table[s] for s in filtered.snp_ids]))
        except ValueError as exc:
            raise CliError(f"PLAF file {args.plaf}: {exc}") from None
    else:
        try:
            plaf = compute_plaf(filtered)
        except ValueError as exc:
            raise CliError(str(exc)) from None
    return filtered, plaf, report_payload


def _mcmc_config(args, seed: int) -> McmcConfig:
    return McmcConfig(
        n_iterations=args.iterations,
        burn_in=args.burn_in,
        thin=args.thin,
        seed=seed,
        nu_lower_bound=args.nu_lower_bound,
    )


def _summary_payload(summary, k: int, restriction: str) -> dict:
    return {
        "k": k,
        "restriction": restriction,
        "median_alpha": summary.median_alpha,
        "alpha_ci_95": list(summary.alpha_ci_95),
        "weight_medians": list(summary.weight_medians),
        "weight_ci_95": [list(pair) for pair in summary.weight_ci_95],
        "map": {
            "alpha": summary.map_params.alpha,
            "weights": [float(w) for w in summary.map_params.weights],
            "nu": summary.map_params.nu,
        },
        "max_log_likelihood": summary.max_log_likelihood,
    }


def _score_payload(score) -> dict:
    return {
        "k": score.k,
        "restriction": score.restriction.value,
        "bic": score.bic,
        "hme_log_marginal": score.hme_log_marginal,
        "max_log_likelihood": score.max_log_likelihood,
        "n_free_params": score.n_free_params,
        "summary": _summary_payload(score.summary, score.k, score.restriction.value),
    }


def _write_figure_data(
    path: Path, data, snp_ids, plaf: Plaf, map_params, sim_seed: int
) -> None:
    """Scatter-plus-lines data: observed points, fitted band lines, and
    points re-simulated from the fitted parameters at the observed coverage."""
    band_set = BandSet.for_strains(map_params.k)
    subset_sums = band_set.membership.astype(float) @ map_params.weights
    alpha = map_params.alpha
    rng = np.random.default_rng(sim_seed)
    wsaf = data.wsaf()
    totals = data.total
    band_index = draw_bands(rng, band_set, plaf)
    q = (1.0 - alpha) * subset_sums[band_index] + alpha * plaf.freqs
    simulated = draw_read_counts(rng, q, map_params.nu, totals)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("# schema: strainmix.figure.v1\n")
        handle.write("series,snp_id,band,plaf,value\n")
        for j, snp_id in enumerate(snp_ids):
            if np.isnan(wsaf[j]):
                continue
            handle.write(
                f"observed,{_safe_name(snp_id)},,"
                f"{float(plaf.freqs[j])!r},{float(wsaf[j])!r}\n"
            )
        for r in range(band_set.n_bands):
            for p in (0.0, 1.0):
                line_q = (1.0 - alpha) * subset_sums[r] + alpha * p
                handle.write(f"band_line,,{r},{float(p)!r},{float(line_q)!r}\n")
        for j, snp_id in enumerate(snp_ids):
            if totals[j] == 0:
                continue
            handle.write(
                f"simulated,{_safe_name(snp_id)},,{float(plaf.freqs[j])!r},"
                f"{int(simulated[j]) / int(totals[j])!r}\n"
            )


def _write_figure_svg(csv_path: Path, svg_path: Path, sample_id: str) -> None:
    try:
        import matplotlib
    except ImportError as exc:
        raise CliError(
            "matplotlib is required for --svg (install the 'plots' extra)"
        ) from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = sample_id
    series: dict[str, list[tuple[float, float, str]]] = {
        "observed": [], "band_line": [], "simulated": [],
    }
    with open(csv_path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("series,"):
                continue
            name, _, band, p, value = line.split(",")
            series[name].append((float(p), float(value), band))
    fig, axes = plt.subplots(1, 2, figsize=(9, 4), sharey=True)
    for ax, points, title in (
        (axes[0], series["observed"], "observed"),
        (axes[1], series["simulated"], "fitted model"),
    ):
        if points:
            xs, ys, _ = zip(*points)
            ax.plot(xs, ys, ".", ms=3, alpha=0.6, color="#1f6fb2")
        bands: dict[str, list[tuple[float, float]]] = {}
        for p, value, band in series["band_line"]:
            bands.setdefault(band, []).append((p, value))
        for band_points in bands.values():
            band_points.sort()
            xs, ys = zip(*band_points)
            ax.plot(xs, ys, "-", lw=0.8, color="#999999")
        ax.set_xlim(0, 1)
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlabel("population allele frequency")
        ax.set_title(title)
    axes[0].set_ylabel("within-sample allele frequency")
    fig.suptitle(sample_id)
    fig.tight_layout()
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _fit_one_sample(data, plaf, args, base_seed):
    """Fit one sample; returns a dict of everything the writers need."""
    priors = PriorSpec()
    if args.k == "auto":
        k_range = parse_k_range(args.k_range)
        cfg = _mcmc_config(args, base_seed)
        result, chains = select_k(
            data,
            plaf,
            k_range,
            priors,
            cfg,
            nu_unimodal=args.nu_unimodal,
            return_chains=True,
        )
        selected = result.selected_score()
        return {
            "sample_id": data.sample_id,
            "selection": result,
            "chains": chains,
            "summary": selected.summary,
            "k": selected.k,
            "restriction": selected.restriction.value,
            "bic": selected.bic,
            "max_log_likelihood": selected.max_log_likelihood,
        }
    k = int(args.k)
    seed = derive_seed(base_seed, data.sample_id, k, 0)
    cfg = _mcmc_config(args, seed)
    chain = run_chain(
        data, plaf, k, priors, cfg, nu_unimodal=args.nu_unimodal
    )
    score = score_chain(chain, k, Restriction.FULL, len(data))
    return {
        "sample_id": data.sample_id,
        "selection": None,
        "chains": {(k, Restriction.FULL): chain},
        "summary": score.summary,
        "k": k,
        "restriction": Restriction.FULL.value,
        "bic": score.bic,
        "max_log_likelihood": score.max_log_likelihood,
    }


def cmd_fit(args, argv) -> int:
    started = _utc_now()
    seed = _resolve_seed(args.seed)
    if args.k != "auto":
        try:
            if int(args.k) < 1:
                raise ValueError
        except ValueError:
            raise CliError(f"-k must be a positive integer or 'auto', got {args.k!r}")
    dataset, plaf, filter_payload = _load_and_prepare(args)
    out = _fresh_out_dir(args.out)
    _log(
        f"fit: {dataset.n_samples} samples, {dataset.n_snps} SNPs,"
        f" k={args.k}, seed={seed}"
    )

    if args.jobs > 1:
        results = Parallel(n_jobs=args.jobs)(
            delayed(_fit_one_sample)(sample, plaf, args, seed)
            for sample in dataset.samples
        )
    else:
        results = []
        for sample in dataset.samples:
            result = _fit_one_sample(sample, plaf, args, seed)
            _log(
                f"sample {result['sample_id']}: k={result['k']}"
                f" ({result['restriction']}),"
                f" median alpha={result['summary'].median_alpha:.4f}"
            )
            results.append(result)

    summaries = [
        {
            "schema": "strainmix.summary.v1",
            "sample_id": r["sample_id"],
            **_summary_payload(r["summary"], r["k"], r["restriction"]),
            "bic": r["bic"],
        }
        for r in results
    ]
    _write_json(out / "summaries.json", summaries)

    max_k = max(r["k"] for r in results)
    with open(out / "summaries.csv", "w", encoding="utf-8", newline="\n") as handle:
        handle.write("# schema: strainmix.summaries.v1\n")
        w_cols = ",".join(f"w_{j + 1}" for j in range(max_k))
        handle.write(
            f"sample_id,k,restriction,median_alpha,alpha_lo,alpha_hi,"
            f"map_nu,max_log_likelihood,bic,{w_cols}\n"
        )
        for r in results:
            s = r["summary"]
            weights = [repr(float(w)) for w in s.weight_medians]
            weights += [""] * (max_k - len(weights))
            handle.write(
                ",".join(
                    [
                        r["sample_id"],
                        str(r["k"]),
                        r["restriction"],
                        repr(s.median_alpha),
                        repr(s.alpha_ci_95[0]),
                        repr(s.alpha_ci_95[1]),
                        repr(s.map_params.nu),
                        repr(s.max_log_likelihood),
                        repr(r["bic"]),
                        *weights,
                    ]
                )
                + "\n"
            )

    if any(r["selection"] is not None for r in results):
        _write_selection_outputs(out, results, args)

    figures = out / "figures"
    figures.mkdir()
    for r in results:
        sample = next(s for s in dataset.samples if s.sample_id == r["sample_id"])
        name = _safe_name(r["sample_id"])
        csv_path = figures / f"{name}.csv"
        sim_seed = derive_seed(seed, r["sample_id"], r["k"], _FIGURE_SALT)
        _write_figure_data(
            csv_path, sample, dataset.snp_ids, plaf,
            r["summary"].map_params, sim_seed,
        )
        if args.svg:
            _write_figure_svg(csv_path, figures / f"{name}.svg", r["sample_id"])

    if args.dump_chains:
        chains_dir = out / "chains"
        chains_dir.mkdir()
        for r in results:
            for (k, restriction), chain in r["chains"].items():
                name = _safe_name(r["sample_id"])
                write_chain_csv(
                    chain, chains_dir / f"{name}_k{k}_{restriction.value}.csv"
                )

    if filter_payload is not None:
        _write_json(out / "filter_report.json", filter_payload)
    _write_manifest(out, argv, seed, {args.input: _sha256(Path(args.input))}, started)
    return EXIT_OK


def _write_selection_outputs(out: Path, results, args) -> None:
    priors = PriorSpec()
    payload = []
    for r in results:
        if r["selection"] is None:
            continue
        entry = {
            "schema": "strainmix.selection.v1",
            "sample_id": r["sample_id"],
            "selected_k": r["selection"].selected_k,
            "selected_restriction": r["selection"].selected_restriction.value,
            "scores": [_score_payload(s) for s in r["selection"].scores],
        }
        if args.prior_odds:
            adjusted = prior_odds_adjusted(r["selection"].scores, priors)
            for score_payload, value in zip(entry["scores"], adjusted):
                score_payload["prior_adjusted_log_marginal"] = float(value)
        payload.append(entry)
    _write_json(out / "selection.json", payload)

    with open(out / "selection.csv", "w", encoding="utf-8", newline="\n") as handle:
        handle.write("# schema: strainmix.selection.v1\n")
        extra = ",prior_adjusted_log_marginal" if args.prior_odds else ""
        handle.write(
            "sample_id,k,restriction,n_free_params,max_log_likelihood,"
            f"bic,hme_log_marginal,selected{extra}\n"
        )
        for entry in payload:
            for score_payload in entry["scores"]:
                selected = (
                    score_payload["k"] == entry["selected_k"]
                    and score_payload["restriction"] == entry["selected_restriction"]
                )
                row = [
                    entry["sample_id"],
                    str(score_payload["k"]),
                    score_payload["restriction"],
                    str(score_payload["n_free_params"]),
                    repr(score_payload["max_log_likelihood"]),
                    repr(score_payload["bic"]),
                    repr(score_payload["hme_log_marginal"]),
                    "1" if selected else "0",
                ]
                if args.prior_odds:
                    row.append(repr(score_payload["prior_adjusted_log_marginal"]))
                handle.write(",".join(row) + "\n")


def cmd_simulate(args, argv) -> int:
    started = _utc_now()
    seed = _resolve_seed(args.seed)
    if args.n_samples < 1:
        raise CliError("--n-samples must be at least 1")
    weights = None
    if args.weights:
        try:
            weights = tuple(float(w) for w in args.weights.split(","))
        except ValueError:
            raise CliError(f"cannot parse --weights {args.weights!r}") from None
    try:
        configs = [
            SimConfig(
                m=args.m,
                coverage=args.coverage,
                k=args.k,
                alpha=args.alpha,
                nu=args.nu,
                weights=weights,
                seed=int(
                    np.random.SeedSequence([seed, index]).generate_state(
                        1, np.uint64
                    )[0]
                ),
            )
            for index in range(args.n_samples)
        ]
    except ValueError as exc:
        raise CliError(f"bad simulation parameters: {exc}") from None
    out = _fresh_out_dir(args.out)
    samples = []
    truths = []
    plaf = None
    for cfg in configs:
        sample_seed = cfg.seed
        data, plaf, truth = simulate_sample(cfg)
        samples.append(data)
        truths.append(
            {
                "sample_id": data.sample_id,
                "k": truth.k,
                "weights": [float(w) for w in truth.weights],
                "alpha": truth.alpha,
                "nu": truth.nu,
                "seed": sample_seed,
            }
        )
    snp_ids = tuple(f"snp{j + 1}" for j in range(args.m))
    dataset = Dataset(samples=tuple(samples), snp_ids=snp_ids)
    counts_name = "counts.json" if args.format == "json" else "counts.tsv"
    if args.format == "json":
        write_counts_json(dataset, out / counts_name)
    else:
        write_counts_tsv(dataset, out / counts_name)
    _write_plaf_csv(out / "plaf.csv", snp_ids, plaf)
    _write_json(
        out / "truth.json",
        {
            "schema": "strainmix.truth.v1",
            "m": args.m,
            "coverage": args.coverage,
            "base_seed": seed,
            "plaf": [float(p) for p in plaf.freqs],
            "samples": truths,
        },
    )
    _log(f"simulate: wrote {len(samples)} sample(s) x {args.m} SNPs to {out}")
    _write_manifest(out, argv, seed, {}, started)
    return EXIT_OK


def cmd_study(args, argv) -> int:
    started = _utc_now()
    seed = _resolve_seed(args.seed)
    if args.scale == "smoke":
        grid = StudyGrid(
            m_values=(50, 150),
            c_values=(25, 100),
            alpha_values=(0.1,),
            k_values=(1, 3),
            replicates=args.replicates if args.replicates else 2,
        )
    else:
        grid = StudyGrid(
            replicates=args.replicates if args.replicates else 10
        )
    out = _fresh_out_dir(args.out)
    _log(
        f"study ({args.scale}): {grid.n_runs} runs"
        f" ({grid.n_cells} cells x {grid.replicates} replicates), seed={seed}"
    )
    cfg = _mcmc_config(args, seed)
    report = run_study(
        grid,
        PriorSpec(),
        cfg,
        out,
        k_sweep=parse_k_range(args.k_range),
        jobs=args.jobs,
        nu_unimodal=args.nu_unimodal,
        log=_log,
    )
    _write_manifest(out, argv, seed, {}, started)
    n = len(report.rows)
    failed = report.n_failed
    _log(f"study: {n - failed}/{n} runs succeeded")
    if failed == n:
        return EXIT_INFERENCE
    if failed > 0:
        return EXIT_PARTIAL_STUDY
    return EXIT_OK


def cmd_compare(args, argv) -> int:
    started = _utc_now()
    seed = _resolve_seed(args.seed)
    dataset, plaf, filter_payload = _load_and_prepare(args)
    out = _fresh_out_dir(args.out)
    k_range = parse_k_range(args.k_range)
    _log(
        f"compare: {dataset.n_samples} samples over k in {args.k_range},"
        f" seed={seed}"
    )
    priors = PriorSpec()
    cfg = _mcmc_config(args, seed)
    if args.jobs > 1:
        selections = Parallel(n_jobs=args.jobs)(
            delayed(_compare_one)(sample, plaf, k_range, priors, cfg, args.nu_unimodal)
            for sample in dataset.samples
        )
    else:
        selections = []
        for sample in dataset.samples:
            result = _compare_one(
                sample, plaf, k_range, priors, cfg, args.nu_unimodal
            )
            _log(
                f"sample {sample.sample_id}: winner"
                f" {result.selected_restriction.value} (k={result.selected_k})"
            )
            selections.append(result)

    tallies = {r.value: 0 for r in Restriction}
    for result in selections:
        tallies[result.selected_restriction.value] += 1
    payload = {
        "schema": "strainmix.compare.v1",
        "tallies": tallies,
        "samples": [
            {
                "sample_id": sample.sample_id,
                "selected_k": result.selected_k,
                "selected_restriction": result.selected_restriction.value,
                "scores": [_score_payload(s) for s in result.scores],
            }
            for sample, result in zip(dataset.samples, selections)
        ],
    }
    _write_json(out / "compare.json", payload)
    with open(out / "compare.csv", "w", encoding="utf-8", newline="\n") as handle:
        handle.write("# schema: strainmix.compare.v1\n")
        handle.write(
            "sample_id,selected_k,selected_restriction,"
            "best_full_bic,best_alpha_zero_bic,k_one_bic\n"
        )
        for sample, result in zip(dataset.samples, selections):
            best = {}
            for restriction in Restriction:
                bics = [
                    s.bic for s in result.scores if s.restriction is restriction
                ]
                best[restriction] = repr(min(bics)) if bics else ""
            handle.write(
                ",".join(
                    [
                        sample.sample_id,
                        str(result.selected_k),
                        result.selected_restriction.value,
                        best[Restriction.FULL],
                        best[Restriction.ALPHA_ZERO],
                        best[Restriction.K_ONE],
                    ]
                )
                + "\n"
            )
    if filter_payload is not None:
        _write_json(out / "filter_report.json", filter_payload)
    _write_manifest(out, argv, seed, {args.input: _sha256(Path(args.input))}, started)
    _log(
        "compare tallies: "
        + ", ".join(f"{name}={count}" for name, count in tallies.items())
    )
    return EXIT_OK


def _compare_one(sample, plaf, k_range, priors, cfg, nu_unimodal):
    return select_k(
        sample, plaf, k_range, priors, cfg,
        include_restrictions=True, nu_unimodal=nu_unimodal,
    )


def cmd_plaf(args, argv) -> int:
    started = _utc_now()
    seed = _resolve_seed(args.seed)
    dataset, plaf, filter_payload = _load_and_prepare(args)
    out = _fresh_out_dir(args.out)
    _write_plaf_csv(out / "plaf.csv", dataset.snp_ids, plaf)
    if filter_payload is not None:
        _write_json(out / "filter_report.json", filter_payload)
    _write_manifest(out, argv, seed, {args.input: _sha256(Path(args.input))}, started)
    _log(f"plaf: {dataset.n_snps} SNPs written to {out / 'plaf.csv'}")
    return EXIT_OK


def _add_common_mcmc_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--iterations", type=int, default=10000,
                        help="MCMC iterations per chain")
    parser.add_argument("--burn-in", type=int, default=2000,
                        help="iterations discarded before storing draws")
    parser.add_argument("--thin", type=int, default=5,
                        help="store every thin-th post-burn-in draw")
    parser.add_argument("--nu-unimodal", action="store_true",
                        help="reject shape proposals that break band unimodality")
    parser.add_argument("--nu-lower-bound", type=float, default=None,
                        help="explicit lower bound for the shape parameter")


def _add_filter_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--no-filter", action="store_true",
                        help="skip QC filtering entirely")
    parser.add_argument("--min-maf", type=float, default=0.01,
                        help="drop SNPs with pooled minor allele frequency below this")
    parser.add_argument("--max-low-coverage-snps", type=int, default=4000,
                        help="drop samples with more low-coverage SNPs than this")
    parser.add_argument("--low-coverage-threshold", type=int, default=20,
                        help="reads below which a SNP counts as low-coverage")
    parser.add_argument("--keep-missing", action="store_true",
                        help="keep SNPs with zero-coverage cells")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="strainmix",
        description=(
            "Infer strain count, proportions, and panmixia from per-SNP"
            " read counts."
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="posterior inference per sample")
    fit.add_argument("--input", required=True, help="counts table (TSV or JSON)")
    fit.add_argument("--out", required=True, help="fresh output directory")
    fit.add_argument("--format", choices=("tsv", "json"), default=None,
                     help="input format (default: by file extension)")
    fit.add_argument("-k", default="auto",
                     help="strain count, or 'auto' to select by BIC")
    fit.add_argument("--k-range", default="1..7",
                     help="candidate strain counts for -k auto (K, A..B, or list)")
    fit.add_argument("--seed", type=int, default=None,
                     help="base seed (default: system entropy, recorded)")
    fit.add_argument("--jobs", type=int, default=1, help="parallel sample fits")
    fit.add_argument("--plaf", default=None,
                     help="CSV of fixed population frequencies (else pooled)")
    fit.add_argument("--dump-chains", action="store_true",
                     help="write per-chain draw CSVs")
    fit.add_argument("--svg", action="store_true",
                     help="also render static SVG figures")
    fit.add_argument("--prior-odds", action="store_true",
                     help="add strain-count prior odds to selection reports")
    _add_common_mcmc_flags(fit)
    _add_filter_flags(fit)

    sim = sub.add_parser("simulate", help="generate synthetic datasets")
    sim.add_argument("--out", required=True, help="fresh output directory")
    sim.add_argument("--m", type=int, required=True, help="SNP count")
    sim.add_argument("--coverage", "--c", type=int, required=True,
                     dest="coverage", help="total reads per SNP")
    sim.add_argument("--k", type=int, required=True, help="true strain count")
    sim.add_argument("--alpha", type=float, required=True,
                     help="true panmixia coefficient")
    sim.add_argument("--nu", type=float, default=10.0,
                     help="true beta-binomial shape")
    sim.add_argument("--weights", default=None,
                     help="explicit comma-separated proportions (else Dirichlet)")
    sim.add_argument("--n-samples", type=int, default=1,
                     help="independent samples sharing one frequency grid")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--format", choices=("tsv", "json"), default="tsv")

    study = sub.add_parser("study", help="run the simulation grid")
    study.add_argument("--out", required=True, help="fresh output directory")
    study.add_argument("--scale", choices=("full", "smoke"), default="full",
                       help="full published grid, or a desk-scale smoke grid")
    study.add_argument("--replicates", type=int, default=None,
                       help="override replicates per cell")
    study.add_argument("--k-range", default="1..5",
                       help="candidate strain counts for selection")
    study.add_argument("--seed", type=int, default=None)
    study.add_argument("--jobs", type=int, default=1)
    _add_common_mcmc_flags(study)

    compare = sub.add_parser(
        "compare", help="full vs restricted models per sample"
    )
    compare.add_argument("--input", required=True)
    compare.add_argument("--out", required=True)
    compare.add_argument("--format", choices=("tsv", "json"), default=None)
    compare.add_argument("--k-range", default="1..5")
    compare.add_argument("--seed", type=int, default=None)
    compare.add_argument("--jobs", type=int, default=1)
    compare.add_argument("--plaf", default=None,
                         help="CSV of fixed population frequencies (else pooled)")
    _add_common_mcmc_flags(compare)
    _add_filter_flags(compare)

    plaf = sub.add_parser("plaf", help="QC and population allele frequencies")
    plaf.add_argument("--input", required=True)
    plaf.add_argument("--out", required=True)
    plaf.add_argument("--format", choices=("tsv", "json"), default=None)
    plaf.add_argument("--seed", type=int, default=None)
    _add_filter_flags(plaf)

    return parser


_COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "study": cmd_study,
    "compare": cmd_compare,
    "plaf": cmd_plaf,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; fold into the input-error code
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args, argv)
    except (CliError, CountsFormatError, FilterError, FileNotFoundError) as exc:
        _log(f"error: {exc}")
        return EXIT_INPUT
    except (RuntimeError, ValueError) as exc:
        _log(f"inference error: {exc}")
        return EXIT_INFERENCE


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
