"""Single-binary CLI: synthesis, hashing, leakage stats, and all attacks.

Every subcommand writes a JSON report (embedding its run manifest) and, for
curve-producing analyses, plot-ready CSV series next to it. All randomness
flows from the per-subcommand ``--seed``. Exit codes: 0 success, 2 usage
error, 1 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .anonymity import ambiguity_distribution, ambiguity_per_item, bucketize, k_anonymity_report
from .errors import EmbleakError
from .freq_attack import analytic_topk, build_inversion_table, build_shift_bank, evaluate_topk, recover_mask
from .hashing import (
    ModuloMaskHash,
    apply_hash,
    balanced_private_hash,
    fingerprint,
    load_spec,
    random_private_hash,
    save_spec,
    spec_to_json,
)
from .infotheory import hash_leakage_report
from .private_hash import (
    OmpConfig,
    assignment_loss,
    brute_force_oracle,
    evaluate_private_attack,
    greedy_frequency_match,
    omp_fit,
    pair_pushforward,
)
from .reident import build_key_index, derive_queries, threshold_sweep, uniqueness_probe
from .reporting import RunManifest, dump_report, file_digest, write_series_csv
from .synth import gen_behavior, gen_profiles, load_gen_config, random_markov
from .trace import (
    CategoricalDistribution,
    empirical_distribution,
    ingest_profiles,
    load_trace,
    pair_distribution,
    split_trace,
    write_events,
    write_profiles,
)


@dataclass
class _CmdOutput:
    result: dict
    inputs: dict = field(default_factory=dict)
    series: list = field(default_factory=list)  # (path, header, rows)
    report_path: str | None = None  # defaults to --out


def _series_path(out, tag=None) -> str:
    base = str(out)
    if base.endswith(".json"):
        base = base[: -len(".json")]
    return base + (f".{tag}.csv" if tag else ".csv")


def _column_prior(prior_trace, observed_trace, column):
    """Prior over the union domain of both traces' column values."""
    n = max(
        prior_trace.schema.cardinality(column),
        observed_trace.schema.cardinality(column),
    )
    counts = np.bincount(prior_trace.column(column), minlength=n)
    return CategoricalDistribution.from_counts(counts), n


def _resolve_p(args, n):
    if getattr(args, "p", None) is not None:
        return int(args.p)
    if getattr(args, "p_ratio", None) is not None:
        return max(1, int(round(args.p_ratio * n)))
    raise EmbleakError("need --P or --P-ratio")


def _curve_rows(curve):
    return [(k + 1, a) for k, a in enumerate(curve.top_k_accuracy)]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_gen(args):
    profile_cfg, behavior_cfg, users = load_gen_config(args.config, args.seed)
    profiles = None
    if profile_cfg is not None:
        profiles = gen_profiles(profile_cfg, users, [args.seed, 1])
        if args.profiles_out:
            write_profiles(profiles, args.profiles_out)
    trace = gen_behavior(behavior_cfg, profiles, args.seed)
    write_events(trace, args.out)

    result = {
        "events": trace.n_events,
        "users": trace.n_users,
        "items": behavior_cfg.items,
        "columns": list(trace.schema.names),
        "profiles_written": bool(profiles is not None and args.profiles_out),
    }
    if args.split is not None:
        train, eval_ = split_trace(trace, args.split, args.seed)
        base = str(args.out)
        if base.endswith(".csv"):
            base = base[: -len(".csv")]
        write_events(train, base + ".train.csv")
        write_events(eval_, base + ".eval.csv")
        result["train_events"] = train.n_events
        result["eval_events"] = eval_.n_events
    return _CmdOutput(
        result,
        inputs={"config": args.config},
        report_path=str(args.out) + ".report.json",
    )


def _cmd_stats(args):
    trace = load_trace(args.trace)
    spec = load_spec(args.hash)
    report = hash_leakage_report(trace, args.column, spec)
    return _CmdOutput(report.to_dict(), inputs={"trace": args.trace, "hash": args.hash})


def _make_spec(args, n, seed_tag):
    if args.hash:
        return load_spec(args.hash), {"hash": args.hash}
    n = args.n or n
    p = _resolve_p(args, n)
    rng = np.random.default_rng([args.seed, seed_tag])
    if args.variant == "modulo":
        mask = args.mask if args.mask is not None else int(rng.integers(0, p))
        return ModuloMaskHash(n, p, mask), {}
    if args.balanced:
        return balanced_private_hash(n, p, [args.seed, seed_tag]), {}
    return random_private_hash(n, p, [args.seed, seed_tag]), {}


def _cmd_hash_apply(args):
    trace = load_trace(args.trace)
    spec, extra_inputs = _make_spec(args, trace.schema.cardinality(args.column), 2)
    hashed = apply_hash(trace, args.column, spec)
    write_events(hashed.trace, args.out)
    if args.spec_out:
        save_spec(spec, args.spec_out)
    result = {
        "column": args.column,
        "spec": spec_to_json(spec) if spec.variant == "modulo" else {
            "variant": spec.variant, "N": spec.n, "P": spec.p,
        },
        "spec_fingerprint": hashed.spec_fingerprint,
        "events": hashed.trace.n_events,
    }
    return _CmdOutput(
        result,
        inputs={"trace": args.trace, **extra_inputs},
        report_path=str(args.out) + ".report.json",
    )


def _cmd_attack_freq(args):
    prior_trace = load_trace(args.prior)
    observed_trace = load_trace(args.observed)
    prior, n = _column_prior(prior_trace, observed_trace, args.column)
    p = int(args.p)
    if args.hash:
        true_spec = load_spec(args.hash)
        extra = {"hash": args.hash}
    else:
        mask = args.mask
        if mask is None:
            mask = int(np.random.default_rng([args.seed, 3]).integers(0, p))
        true_spec = ModuloMaskHash(n, p, mask)
        extra = {}

    eval_values = observed_trace.column(args.column)
    observed_counts = np.bincount(true_spec.apply(eval_values), minlength=p)
    observed = CategoricalDistribution.from_counts(observed_counts)

    bank = build_shift_bank(prior, p)
    estimate = recover_mask(bank, observed)
    est_spec = ModuloMaskHash(n, p, estimate.mask)
    table = build_inversion_table(prior, est_spec, args.k)
    curve = evaluate_topk(table, eval_values, true_spec, args.k)
    analytic = analytic_topk(prior, table, true_spec, args.k)

    result = {
        "column": args.column,
        "N": n,
        "P": p,
        "true_mask": true_spec.mask,
        "recovered_mask": estimate.mask,
        "mask_recovered": bool(estimate.mask == true_spec.mask),
        "degenerate": estimate.degenerate,
        "n_eval": curve.n_eval,
        "top_k_accuracy": curve.top_k_accuracy,
        "analytic_top_k_accuracy": analytic.top_k_accuracy,
    }
    series = [(_series_path(args.out), ["k", "accuracy"], _curve_rows(curve))]
    return _CmdOutput(
        result, inputs={"prior": args.prior, "observed": args.observed, **extra},
        series=series,
    )


def _cmd_attack_greedy(args):
    prior_trace = load_trace(args.prior)
    observed_trace = load_trace(args.observed)
    prior, n = _column_prior(prior_trace, observed_trace, args.column)
    p = _resolve_p(args, n)
    if args.hash:
        true_spec = load_spec(args.hash)
        extra = {"hash": args.hash}
    else:
        true_spec = random_private_hash(n, p, [args.seed, 4])
        extra = {}

    eval_values = observed_trace.column(args.column)
    observed_counts = np.bincount(true_spec.apply(eval_values), minlength=p)
    observed = CategoricalDistribution.from_counts(observed_counts)

    b_hat = greedy_frequency_match(prior, observed)
    curve = evaluate_private_attack(b_hat, prior, true_spec, eval_values, args.k)
    result = {
        "column": args.column,
        "N": n,
        "P": p,
        "n_eval": curve.n_eval,
        "top1_accuracy": float(curve.top_k_accuracy[0]),
        "top_k_accuracy": curve.top_k_accuracy,
        "true_spec_fingerprint": fingerprint(true_spec),
    }
    series = [(_series_path(args.out), ["k", "accuracy"], _curve_rows(curve))]
    return _CmdOutput(
        result, inputs={"prior": args.prior, "observed": args.observed, **extra},
        series=series,
    )


def _cmd_attack_omp(args):
    prior_trace = load_trace(args.prior)
    observed_trace = load_trace(args.observed)
    prior, n = _column_prior(prior_trace, observed_trace, args.column)
    p = _resolve_p(args, n)
    btag = None if args.btag == "none" else args.btag
    if args.hash:
        true_spec = load_spec(args.hash)
        extra = {"hash": args.hash}
    else:
        true_spec = random_private_hash(n, p, [args.seed, 5])
        extra = {}

    pre_pairs = pair_distribution(prior_trace, args.column, btag=btag, n=n)
    hashed = apply_hash(observed_trace, args.column, true_spec)
    post_pairs = pair_distribution(hashed.trace, args.column, btag=btag, n=p)

    config = OmpConfig(
        selection=args.selection,
        refinement_sweeps=args.sweeps,
        convergence_tol=args.tol,
    )
    b_hat, trajectory = omp_fit(
        pre_pairs, post_pairs, p, config, truth=(true_spec, prior)
    )
    eval_values = observed_trace.column(args.column)
    curve = evaluate_private_attack(b_hat, prior, true_spec, eval_values, args.k)

    result = {
        "column": args.column,
        "N": n,
        "P": p,
        "selection": args.selection,
        "sweeps_run": trajectory.sweeps_run,
        "final_loss": trajectory.final_loss,
        "loss_per_iteration": trajectory.loss_per_iteration,
        "accuracy_per_sweep": trajectory.accuracy_per_sweep,
        "zero_mass_inputs": trajectory.zero_mass_inputs,
        "assignment": [int(v) for v in b_hat.assign],
        "n_eval": curve.n_eval,
        "top1_accuracy": float(curve.top_k_accuracy[0]),
        "top_k_accuracy": curve.top_k_accuracy,
        "true_spec_fingerprint": fingerprint(true_spec),
    }
    series = [
        (_series_path(args.out, "loss"), ["iteration", "loss"],
         list(enumerate(trajectory.loss_per_iteration, start=1))),
        (_series_path(args.out, "topk"), ["k", "accuracy"], _curve_rows(curve)),
    ]
    return _CmdOutput(
        result, inputs={"prior": args.prior, "observed": args.observed, **extra},
        series=series,
    )


def _cmd_anonymity(args):
    profiles = ingest_profiles(args.profiles)
    features = (
        [f.strip() for f in args.features.split(",")]
        if args.features
        else list(profiles.feature_names)
    )
    table = bucketize(profiles, features)
    report = k_anonymity_report(table, k_max=args.k_max)
    result = {
        "features": features,
        "users": profiles.n_users,
        "bucket_count": report.bucket_count,
        "histogram": {str(k): v for k, v in report.histogram.items()},
        "below_k_counts": report.below_k_counts,
        "duplicate_user_rows": profiles.duplicate_warnings,
    }
    series = [(
        _series_path(args.out), ["k", "users_at_or_below"],
        list(enumerate(report.below_k_counts.tolist(), start=1)),
    )]
    return _CmdOutput(result, inputs={"profiles": args.profiles}, series=series)


def _cmd_ambiguity(args):
    trace = load_trace(args.trace)
    profiles = ingest_profiles(args.profiles)
    records = ambiguity_per_item(
        trace, profiles, args.item, args.group, btag=args.btag
    )
    dist = ambiguity_distribution(records, args.bins)
    result = {
        "item_column": args.item,
        "group_attr": args.group,
        "n_items": dist.n_items,
        "fraction_zero": dist.fraction_zero,
        "fraction_le_20": dist.fraction_le_20,
        "fraction_le_50": dist.fraction_le_50,
        "access_weighted_fraction_zero": dist.access_weighted_fraction_zero,
        "access_weighted_fraction_le_20": dist.access_weighted_fraction_le_20,
        "access_weighted_fraction_le_50": dist.access_weighted_fraction_le_50,
        "pdf": dist.pdf,
        "cdf": dist.cdf,
    }
    edges = dist.bin_edges
    rows = [
        (float(edges[i]), float(edges[i + 1]), float(dist.pdf[i]), float(dist.cdf[i]))
        for i in range(len(dist.pdf))
    ]
    series = [(_series_path(args.out), ["bin_low", "bin_high", "pdf", "cdf"], rows)]
    return _CmdOutput(
        result, inputs={"trace": args.trace, "profiles": args.profiles}, series=series
    )


def _cmd_reident_uniqueness(args):
    trace = load_trace(args.trace)
    index = build_key_index(trace, args.item, args.m)
    rate = uniqueness_probe(index, trace, args.m, args.samples, args.seed)
    result = {
        "item_column": args.item,
        "m": args.m,
        "samples": args.samples,
        "uniqueness_rate": rate,
        "n_keys": index.n_keys,
        "total_key_occurrences": index.total_occurrences(),
    }
    return _CmdOutput(result, inputs={"trace": args.trace})


def _cmd_reident_link(args):
    trace = load_trace(args.trace)
    thresholds = sorted(int(t) for t in args.thresholds.split(","))
    queries = derive_queries(trace, args.item, args.m)
    reports = threshold_sweep(queries, thresholds)
    result = {
        "item_column": args.item,
        "m": args.m,
        "n_queries": len(queries),
        "sweep": [
            {
                "threshold": r.threshold,
                "tp": r.tp,
                "fp": r.fp,
                "fn": r.fn,
                "precision": r.precision,
                "recall": r.recall,
            }
            for r in reports
        ],
    }
    rows = [
        (r.threshold, r.tp, r.fp, r.fn,
         "" if r.precision is None else r.precision,
         "" if r.recall is None else r.recall)
        for r in reports
    ]
    series = [(
        _series_path(args.out),
        ["threshold", "tp", "fp", "fn", "precision", "recall"], rows,
    )]
    return _CmdOutput(result, inputs={"trace": args.trace}, series=series)


def _cmd_oracle(args):
    n, p = args.n, args.p
    rng = np.random.default_rng([args.seed, 6])
    weights = rng.gamma(1.0, size=(n, n))
    from scipy import sparse

    from .trace import PairDistribution

    pre_pairs = PairDistribution.from_matrix(
        sparse.csr_matrix(weights / weights.sum())
    )
    true_spec = random_private_hash(n, p, [args.seed, 7])
    post_pairs = pair_pushforward(pre_pairs, true_spec.map_table, p)

    oracle_b, oracle_loss = brute_force_oracle(pre_pairs, post_pairs, p)
    config = OmpConfig(selection=args.selection, refinement_sweeps=args.sweeps)
    omp_b, trajectory = omp_fit(pre_pairs, post_pairs, p, config)
    result = {
        "N": n,
        "P": p,
        "oracle_loss": oracle_loss,
        "omp_loss": trajectory.final_loss,
        "omp_within_tolerance": bool(trajectory.final_loss <= oracle_loss + 1e-9),
        "oracle_assignment": [int(v) for v in oracle_b.assign],
        "omp_assignment": [int(v) for v in omp_b.assign],
        "true_assignment": [int(v) for v in true_spec.map_table],
    }
    return _CmdOutput(result)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embleak",
        description="Embedding-table access-pattern leakage analysis toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0,
                        help="seed for all randomness in this subcommand")
    common.add_argument("--threads", type=int, default=1,
                        help="worker count (results are worker-count independent)")

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic trace")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="trace CSV path")
    p.add_argument("--profiles-out", default=None)
    p.add_argument("--split", type=float, default=None,
                   help="also write a user-disjoint train/eval split at this ratio")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("stats", parents=[common],
                       help="entropy / mutual information leakage report")
    p.add_argument("--trace", required=True)
    p.add_argument("--column", required=True)
    p.add_argument("--hash", required=True, help="hash spec JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("hash-apply", parents=[common],
                       help="push one column of a trace through a hash")
    p.add_argument("--trace", required=True)
    p.add_argument("--column", required=True)
    p.add_argument("--hash", default=None, help="hash spec JSON (else built from flags)")
    p.add_argument("--variant", choices=["modulo", "map"], default="modulo")
    p.add_argument("--P", dest="p", type=int, default=None)
    p.add_argument("--P-ratio", dest="p_ratio", type=float, default=None)
    p.add_argument("--N", dest="n", type=int, default=None)
    p.add_argument("--mask", type=int, default=None)
    p.add_argument("--balanced", action="store_true",
                   help="equal-size-preimage variant of the random map")
    p.add_argument("--spec-out", default=None)
    p.add_argument("--out", required=True, help="hashed trace CSV path")
    p.set_defaults(func=_cmd_hash_apply)

    p = sub.add_parser("attack-freq", parents=[common],
                       help="mask recovery + top-K inversion of a modulo hash")
    p.add_argument("--prior", required=True, help="training trace (pre-hash)")
    p.add_argument("--observed", required=True, help="evaluation trace (pre-hash)")
    p.add_argument("--column", required=True)
    p.add_argument("--P", dest="p", type=int, required=True)
    p.add_argument("--K", dest="k", type=int, default=10)
    p.add_argument("--hash", default=None, help="true modulo spec JSON")
    p.add_argument("--mask", type=int, default=None, help="true mask (else seeded)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_attack_freq)

    p = sub.add_parser("attack-greedy", parents=[common],
                       help="greedy frequency match against a secret random hash")
    p.add_argument("--prior", required=True)
    p.add_argument("--observed", required=True)
    p.add_argument("--column", required=True)
    p.add_argument("--P", dest="p", type=int, default=None)
    p.add_argument("--P-ratio", dest="p_ratio", type=float, default=None)
    p.add_argument("--K", dest="k", type=int, default=10)
    p.add_argument("--hash", default=None, help="true map spec JSON (else seeded)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_attack_greedy)

    p = sub.add_parser("attack-omp", parents=[common],
                       help="pair-structure fit of a secret random hash")
    p.add_argument("--prior", required=True)
    p.add_argument("--observed", required=True)
    p.add_argument("--column", required=True)
    p.add_argument("--P", dest="p", type=int, default=None)
    p.add_argument("--P-ratio", dest="p_ratio", type=float, default=None)
    p.add_argument("--K", dest="k", type=int, default=10)
    p.add_argument("--selection", choices=["freq", "full"], default="freq")
    p.add_argument("--sweeps", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--btag", default="buy",
                   help="restrict pairs to this interaction kind ('none' = all)")
    p.add_argument("--hash", default=None, help="true map spec JSON (else seeded)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_attack_omp)

    p = sub.add_parser("anonymity", parents=[common],
                       help="static-feature bucket / k-anonymity report")
    p.add_argument("--profiles", required=True)
    p.add_argument("--features", default=None, help="comma list (default: all)")
    p.add_argument("--k-max", dest="k_max", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_anonymity)

    p = sub.add_parser("ambiguity", parents=[common],
                       help="per-item group ambiguity from interaction history")
    p.add_argument("--trace", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--item", required=True, help="item column in the trace")
    p.add_argument("--group", required=True, help="group feature in the profiles")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--btag", default=None, help="count only this interaction kind")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ambiguity)

    p = sub.add_parser("reident-uniqueness", parents=[common],
                       help="how often the m most recent purchases identify a user")
    p.add_argument("--trace", required=True)
    p.add_argument("--item", required=True)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--samples", type=int, default=200_000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_reident_uniqueness)

    p = sub.add_parser("reident-link", parents=[common],
                       help="precision/recall of time-threshold query linkage")
    p.add_argument("--trace", required=True)
    p.add_argument("--item", required=True)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--thresholds", required=True, help="comma list of seconds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_reident_link)

    p = sub.add_parser("oracle", parents=[common],
                       help="brute-force vs fitted assignment on a tiny instance")
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--p", type=int, default=3)
    p.add_argument("--selection", choices=["freq", "full"], default="freq")
    p.add_argument("--sweeps", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_oracle)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return 2

    start = time.perf_counter()
    try:
        out = args.func(args)
        duration = time.perf_counter() - start
        manifest = RunManifest(
            subcommand=args.command,
            argv=argv,
            seed=getattr(args, "seed", None),
            input_digests={k: file_digest(v) for k, v in out.inputs.items()},
            tool_version=__version__,
        )
        report_path = out.report_path or args.out
        dump_report(out.result, manifest, report_path, duration)
        for path, header, rows in out.series:
            write_series_csv(path, header, rows)
    except (EmbleakError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {report_path} in {duration:.2f}s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
