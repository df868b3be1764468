"""Batch command-line front end.

Subcommands: scan (full pipeline with bounded p-value), node-tests, dm,
lrt, and simulate {null-max, calibration, power}.  Output is JSON by
default (full float precision, exact round trip) with a TSV summary mode;
probabilities in TSV are printed with 6 significant digits.  Files are
written atomically.  Exit codes: 0 ok, 1 input error, 2 significant result
when --exit-signal is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .dm_model import CountTable, mom_test
from .dtm_model import (node_tests, sidak_global, validate_alpha_allocation,
                        lrt_dm_vs_dtm)
from .phylo_tree import (group_by_rank, label_internal_taxa, parse_newick,
                         read_taxonomy_tsv, enumerate_triplets)
from .scan_bounds import (bound_pvalue, build_partition, scan_statistic,
                          solve_threshold)
from .simulation import (ALL_METHODS, AltSpec, SimConfig, null_calibration,
                         power_study, random_binary_tree, simulate_null_max)


class InputError(ValueError):
    pass


# -- input handling ------------------------------------------------------


def read_counts_tsv(path: str, transpose: bool = False) -> CountTable:
    """Counts TSV: rows are samples, first column sample_id, header holds
    OTU names.  --transpose accepts the OTU-major convention (rows OTUs,
    columns samples)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if len(header) < 2:
            raise InputError(f"{path}: expected at least two columns")
        row_ids, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} "
                                 f"fields, got {len(parts)}")
            row_ids.append(parts[0])
            try:
                rows.append([int(v) for v in parts[1:]])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    counts = np.asarray(rows, dtype=np.int64)
    col_ids = header[1:]
    if transpose:
        counts = counts.T
        row_ids, col_ids = col_ids, row_ids
    try:
        return CountTable(row_ids, col_ids, counts)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def read_metadata_tsv(path: str) -> tuple[list[str], dict[str, dict[str, str]]]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if len(header) < 2:
            raise InputError(f"{path}: metadata needs sample_id plus columns")
        columns = {c: {} for c in header[1:]}
        order = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != len(header):
                raise InputError(f"{path}:{lineno}: ragged row")
            order.append(parts[0])
            for c, v in zip(header[1:], parts[1:]):
                columns[c][parts[0]] = v
    return order, columns


def _binarize(value: str, expr: str) -> str:
    for op in ("<=", ">=", "==", "!=", "<", ">"):
        if expr.startswith(op):
            ref = expr[len(op):].strip()
            try:
                left, right = float(value), float(ref)
            except ValueError:
                if op in ("==", "!="):
                    hit = (value == ref) if op == "==" else (value != ref)
                    return expr if hit else f"not({expr})"
                raise InputError(f"--binarize {expr!r} needs numeric values")
            hit = {"<": left < right, "<=": left <= right, ">": left > right,
                   ">=": left >= right, "==": left == right,
                   "!=": left != right}[op]
            return expr if hit else f"not({expr})"
    raise InputError(f"cannot parse --binarize expression {expr!r}")


def build_groups(table: CountTable, metadata, group_column: str,
                 binarize: str | None) -> dict[str, CountTable]:
    _, columns = metadata
    if group_column not in columns:
        raise InputError(f"metadata has no column {group_column!r}")
    values = columns[group_column]
    labels = {}
    for sid in table.sample_ids:
        if sid not in values:
            raise InputError(f"sample {sid!r} missing from metadata")
        raw = values[sid]
        if raw == "":
            continue
        labels[sid] = _binarize(raw, binarize) if binarize else raw
    groups: dict[str, list[int]] = {}
    for i, sid in enumerate(table.sample_ids):
        if sid in labels:
            groups.setdefault(labels[sid], []).append(i)
    groups = {k: v for k, v in sorted(groups.items())}
    if len(groups) < 2:
        raise InputError(f"group column {group_column!r} yields "
                         f"{len(groups)} group(s); need at least 2")
    for name, idx in groups.items():
        if len(idx) < 2:
            raise InputError(f"group {name!r} has {len(idx)} sample(s); "
                             "need at least 2")
    return {name: table.take_samples(idx) for name, idx in groups.items()}


def read_alpha_allocation(path: str, tree, alpha: float) -> dict[int, float]:
    alphas: dict[int, float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise InputError(f"{path}:{lineno}: expected 'node alpha'")
            alphas[int(parts[0])] = float(parts[1])
    missing = set(tree.internal_order) - set(alphas)
    if missing:
        raise InputError(f"{path}: missing alphas for nodes {sorted(missing)}")
    ok, achieved = validate_alpha_allocation(
        [alphas[n] for n in tree.internal_order], alpha)
    if not ok:
        raise InputError(
            f"{path}: allocation achieves family-wise level {achieved:.10g}, "
            f"not the requested alpha={alpha:.10g}")
    return alphas


# -- output handling -----------------------------------------------------


def _sig6(x) -> str:
    return f"{x:.6g}" if isinstance(x, float) else str(x)


def write_output(payload: dict, out: str | None, fmt: str):
    if fmt == "json":
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    else:
        lines = ["section\tmetric\tkey\tvalue"]
        for section, metric, key, value in payload_rows(payload):
            lines.append(f"{section}\t{metric}\t{key}\t{_sig6(value)}")
        text = "\n".join(lines) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(out))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def payload_rows(payload: dict, prefix: str = ""):
    """Flatten nested dict/list payloads into (section, metric, key, value)."""
    rows = []

    def walk(obj, path):
        if isinstance(obj, dict):
            for k in sorted(obj):
                walk(obj[k], path + [str(k)])
        elif isinstance(obj, (list, tuple)):
            for idx, item in enumerate(obj):
                walk(item, path + [str(idx)])
        else:
            section = path[0] if path else ""
            metric = path[1] if len(path) > 1 else ""
            key = ".".join(path[2:])
            rows.append((section, metric, key, obj))

    walk(payload, [] if not prefix else [prefix])
    return rows


# -- subcommands ----------------------------------------------------------


def _load_scan_inputs(args):
    table = read_counts_tsv(args.counts, args.transpose)
    tree = parse_newick(open(args.tree, encoding="utf-8").read())
    try:
        groups = build_groups(table, read_metadata_tsv(args.metadata),
                              args.group_column, args.binarize)
    except TypeError:
        raise InputError("scan requires --metadata and --group-column")
    taxonomy = read_taxonomy_tsv(args.taxonomy) if args.taxonomy else None
    return table, tree, groups, taxonomy


def _node_payload(tree, results, taxonomy):
    labels = label_internal_taxa(tree, taxonomy) if taxonomy else None
    rows = []
    for r in results:
        row = {"node": r.node, "statistic": r.statistic, "df": r.df,
               "p_value": r.p_value, "z_value": r.z_value,
               "skipped": r.skipped,
               "leaves": tree.leaf_names_under(r.node)}
        if labels:
            rank, taxon = labels[r.node]
            row["taxon_rank"] = rank
            row["taxon"] = taxon
        rows.append(row)
    return rows


def cmd_scan(args) -> int:
    table, tree, groups, taxonomy = _load_scan_inputs(args)
    if not tree.is_binary():
        raise InputError("scan requires a binary tree; use node-tests with "
                         "the Sidak correction for multifurcating trees")
    results = node_tests(tree, list(groups.values()))
    triplets = enumerate_triplets(tree)
    stats = scan_statistic(results, triplets)
    partition = build_partition(triplets, tree)
    report = bound_pvalue(results, triplets, partition, stats.w)
    threshold = solve_threshold(triplets, partition, args.alpha)
    significant = [int(i) for i in
                   np.nonzero(stats.per_triplet > threshold.w)[0]]
    payload = {
        "command": "scan",
        "alpha": args.alpha,
        "groups": {name: g.n_samples for name, g in groups.items()},
        "observed_w": stats.w,
        "argmax_triplet": stats.argmax,
        "bound": report.to_dict(),
        "threshold": {"w_alpha": threshold.w,
                      "p_upper": threshold.report.p_upper,
                      "eps_bound": threshold.report.eps_bound},
        "significant_triplets": [
            {"index": i, "nodes": list(triplets.triplets[i]),
             "statistic": float(stats.per_triplet[i])}
            for i in significant],
        "sidak_pvalue": sidak_global(results),
        "node_results": _node_payload(tree, results, taxonomy),
    }
    write_output(payload, args.out, args.format)
    if args.exit_signal and report.p_upper < args.alpha:
        return 2
    return 0


def cmd_node_tests(args) -> int:
    table, tree, groups, taxonomy = _load_scan_inputs(args)
    results = node_tests(tree, list(groups.values()))
    payload = {
        "command": "node-tests",
        "alpha": args.alpha,
        "n_internal_nodes": tree.n_internal,
        "sidak_pvalue": sidak_global(results),
        "node_results": _node_payload(tree, results, taxonomy),
    }
    if args.alpha_allocation:
        alphas = read_alpha_allocation(args.alpha_allocation, tree, args.alpha)
        payload["significant_nodes"] = [
            r.node for r in results if r.p_value < alphas[r.node]]
    write_output(payload, args.out, args.format)
    if args.exit_signal and payload["sidak_pvalue"] < args.alpha:
        return 2
    return 0


def cmd_dm(args) -> int:
    table = read_counts_tsv(args.counts, args.transpose)
    if args.rank:
        if not args.taxonomy:
            raise InputError("--rank requires --taxonomy")
        table = group_by_rank(table, read_taxonomy_tsv(args.taxonomy),
                              args.rank)
    groups = build_groups(table, read_metadata_tsv(args.metadata),
                          args.group_column, args.binarize)
    res = mom_test(list(groups.values()))
    payload = {
        "command": "dm",
        "rank": args.rank or "otu",
        "groups": {name: g.n_samples for name, g in groups.items()},
        "statistic": res.statistic,
        "df": res.df,
        "p_value": res.p_value,
        "dropped_categories": res.dropped_categories,
        "group_theta": dict(zip(groups, res.group_theta)),
    }
    write_output(payload, args.out, args.format)
    if args.exit_signal and res.p_value < args.alpha:
        return 2
    return 0


def cmd_lrt(args) -> int:
    table = read_counts_tsv(args.counts, args.transpose)
    tree = parse_newick(open(args.tree, encoding="utf-8").read())
    if not tree.is_binary():
        raise InputError("lrt requires a binary tree")
    res = lrt_dm_vs_dtm(tree, table)
    payload = {
        "command": "lrt",
        "statistic": res.statistic,
        "df": res.df,
        "p_value": res.p_value,
        "dm_log_likelihood": res.dm_log_likelihood,
        "dtm_log_likelihood": res.dtm_log_likelihood,
        "converged": res.converged,
    }
    write_output(payload, args.out, args.format)
    return 0


def _sim_tree(args):
    if args.tree:
        return parse_newick(open(args.tree, encoding="utf-8").read())
    if args.leaves:
        return random_binary_tree(args.leaves, args.seed)
    raise InputError("simulate needs --tree or --leaves")


def cmd_simulate(args) -> int:
    config = SimConfig(master_seed=args.seed, replicates=args.replicates,
                       draws_per_replicate=args.draws, threads=args.threads)
    if args.sim_command == "null-max":
        tree = _sim_tree(args)
        res = simulate_null_max(tree, config, args.w)
        payload = {
            "command": "simulate null-max",
            "seed": args.seed,
            "w_values": [float(v) for v in res.w_values],
            "mean_exceedance": [float(v) for v in res.mean_exceedance()],
            "per_replicate": [[float(v) for v in row]
                              for row in res.proportions],
        }
    elif args.sim_command == "calibration":
        tree = _sim_tree(args)
        table = read_counts_tsv(args.counts, args.transpose)
        taxonomy = read_taxonomy_tsv(args.taxonomy) if args.taxonomy else None
        ranks = args.rank.split(",") if args.rank else []
        res = null_calibration(tree, table, config, taxonomy, ranks)
        payload = {
            "command": "simulate calibration",
            "seed": args.seed,
            "ks_dm": res.ks_dm,
            "ks_dtm_pooled": res.ks_dtm,
            "ks_ranks": {r: res.ks_rank(r) for r in ranks},
            "dm_pvalues": [float(v) for v in res.dm_pvalues],
            "dtm_node_pvalues": [float(v) for v in res.dtm_node_pvalues],
        }
    elif args.sim_command == "power":
        tree = _sim_tree(args)
        table = read_counts_tsv(args.counts, args.transpose)
        spec = AltSpec(strategy=args.strategy, fraction=args.fraction,
                       target=("random" if args.target == "random"
                               else int(args.target)),
                       min_leaves=args.min_leaves)
        methods = args.methods.split(",")
        res = power_study(tree, table, spec, methods, config)
        payload = {
            "command": "simulate power",
            "seed": args.seed,
            "spec": {"strategy": spec.strategy, "fraction": spec.fraction,
                     "target": str(spec.target), "min_leaves": spec.min_leaves},
            "power_at_fpr_0.05": {m: res.power(m) for m in methods},
            "roc": {m: res.roc(m) for m in methods},
        }
    else:  # pragma: no cover
        raise InputError(f"unknown simulate subcommand {args.sim_command!r}")
    write_output(payload, args.out, args.format)
    return 0


# -- parser ----------------------------------------------------------------


def _add_common(p, needs_groups=True):
    p.add_argument("--counts", help="counts TSV (rows samples, columns OTUs)")
    p.add_argument("--tree", help="Newick tree file")
    p.add_argument("--metadata", help="metadata TSV (sample_id first column)")
    p.add_argument("--group-column", help="metadata column defining groups")
    p.add_argument("--binarize", help="comparison splitting the group column "
                                      "into two groups, e.g. '<3'")
    p.add_argument("--taxonomy", help="taxonomy TSV (otu_id, kingdom..species)")
    p.add_argument("--rank", help="taxonomic rank for grouped DM tests")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", help="output path (stdout when omitted)")
    p.add_argument("--format", choices=("json", "tsv"), default="json")
    p.add_argument("--transpose", action="store_true",
                   help="counts TSV is OTU-major")
    p.add_argument("--exit-signal", action="store_true",
                   help="exit code 2 on a significant result")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cladescan",
        description="Cross-group tests for tree-structured count data")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_scan = sub.add_parser("scan", help="triplet scan with bounded p-value")
    _add_common(p_scan)
    p_scan.set_defaults(func=cmd_scan)

    p_nt = sub.add_parser("node-tests", help="per-node tests with Sidak control")
    _add_common(p_nt)
    p_nt.add_argument("--alpha-allocation",
                      help="TSV of per-node alphas (node, alpha)")
    p_nt.set_defaults(func=cmd_node_tests)

    p_dm = sub.add_parser("dm", help="global DM moment test")
    _add_common(p_dm)
    p_dm.set_defaults(func=cmd_dm)

    p_lrt = sub.add_parser("lrt", help="DM vs tree-model likelihood ratio test")
    _add_common(p_lrt)
    p_lrt.set_defaults(func=cmd_lrt)

    p_sim = sub.add_parser("simulate", help="Monte Carlo studies")
    sim_sub = p_sim.add_subparsers(dest="sim_command", required=True)
    for name in ("null-max", "calibration", "power"):
        sp = sim_sub.add_parser(name)
        _add_common(sp)
        sp.add_argument("--leaves", type=int,
                        help="synthetic binary tree with this many leaves")
        sp.add_argument("--replicates", type=int, default=100)
        sp.add_argument("--draws", type=int, default=50_000)
        if name == "null-max":
            sp.add_argument("--w", type=float, nargs="+", required=True)
        if name == "power":
            sp.add_argument("--strategy", type=int, choices=(1, 2), default=2)
            sp.add_argument("--fraction", type=float, required=True)
            sp.add_argument("--target", default="random")
            sp.add_argument("--min-leaves", type=int, default=2)
            sp.add_argument("--methods", default=",".join(ALL_METHODS))
        sp.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ValueError, OSError) as exc:
        error = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        sys.stdout.write(json.dumps(error) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
