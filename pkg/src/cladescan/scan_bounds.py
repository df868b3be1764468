"""Triplet scan statistic and analytic bounds on its null tail probability.

The scan statistic is the maximum, over all (parent, middle, child) windows
of consecutive internal nodes, of the summed chi-square(1) node scores.
Its exceedance probability is bounded by splitting the union of window
events into an exactly computable union over disjoint node blocks plus
conditional remainder terms evaluated by low-dimensional quadrature; the
pairwise terms of the same construction bound the approximation error from
above, giving a guaranteed interval for the true p-value.

Only binary trees are supported here: the neighbor structure of the
windows, and the dimension guarantees of the quadrature, rely on binarity.
Multifurcating trees should fall back to per-node testing with a Sidak
correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from ._term_engine import (DensityTables, TermValue, conditional_density_tables,
                           evaluate_term, make_pair_spec, make_triplet_spec,
                           _gl_sin2, _f1)
from ._backend import kernels
from .dtm_model import NodeTestResult
from .phylo_tree import PhyloTree, TripletSet
from .special_functions import chi2_sf

__all__ = [
    "ScanStatistics",
    "Partition",
    "BoundReport",
    "ErrorRateDiagnostic",
    "ThresholdSolution",
    "scan_statistic",
    "build_partition",
    "block_union_prob",
    "conditional_density_tables",
    "conditional_triplet_term",
    "pair_term",
    "bound_pvalue",
    "relative_error_diagnostic",
    "solve_threshold",
    "improved_bonferroni_bound",
]

NO_TRIPLETS_MSG = ("the tree has no triplet windows (no internal node with both "
                   "an internal parent and an internal child); use per-node "
                   "testing with sidak_global instead")


@dataclass
class ScanStatistics:
    """Per-window statistics and their maximum."""

    per_triplet: np.ndarray
    w: float
    argmax: int
    reported: list[int] = field(default_factory=list)


def scan_statistic(results: list[NodeTestResult], triplets: TripletSet,
                   report_threshold: float | None = None) -> ScanStatistics:
    """Window sums of node scores and their maximum.

    Ties in the argmax resolve to the lowest window index.  ``reported``
    lists the windows whose statistic exceeds ``report_threshold``.
    """
    if len(triplets) == 0:
        raise ValueError(NO_TRIPLETS_MSG)
    z = {r.node: r.z_value for r in results}
    try:
        sums = np.array([z[a] + z[b] + z[c] for a, b, c in triplets.triplets])
    except KeyError as exc:
        raise ValueError(f"missing node result for node {exc}") from None
    argmax = int(np.argmax(sums))
    reported = []
    if report_threshold is not None:
        reported = [int(i) for i in np.nonzero(sums > report_threshold)[0]]
    return ScanStatistics(sums, float(sums[argmax]), argmax, reported)


@dataclass
class Partition:
    """Disjoint blocks of triplet-covered nodes, each inside some window.

    Exceedance events of distinct blocks are independent, which makes the
    union probability over blocks exact; every remainder term conditions
    on the complement of that union.
    """

    blocks: list[tuple[int, ...]]
    node_block: dict[int, int]

    @property
    def size_counts(self) -> tuple[int, int, int]:
        counts = [0, 0, 0]
        for b in self.blocks:
            counts[len(b) - 1] += 1
        return tuple(counts)

    def block_index(self, node: int) -> int:
        return self.node_block[node]

    def block_of(self, node: int) -> tuple[int, ...]:
        return self.blocks[self.node_block[node]]

    def is_block(self, nodes: frozenset[int]) -> bool:
        return nodes in {frozenset(b) for b in self.blocks}

    def covered(self) -> set[int]:
        return set(self.node_block)


def _validate_partition(partition: Partition, triplets: TripletSet):
    trip_sets = [frozenset(t) for t in triplets.triplets]
    seen: set[int] = set()
    for block in partition.blocks:
        bs = frozenset(block)
        if seen & bs:
            raise RuntimeError("partition blocks are not disjoint")
        seen |= bs
        if not any(bs <= ts for ts in trip_sets):
            raise RuntimeError(f"block {block} is not inside any triplet")
    if seen != triplets.covered_nodes:
        raise RuntimeError("partition does not cover the triplet nodes")
    for a in range(len(partition.blocks)):
        for b in range(a):
            merged = frozenset(partition.blocks[a]) | frozenset(partition.blocks[b])
            if len(merged) <= 3 and any(merged <= ts for ts in trip_sets):
                raise RuntimeError(
                    f"blocks {partition.blocks[a]} and {partition.blocks[b]} "
                    "could merge inside a triplet")


def build_partition(triplets: TripletSet, tree: PhyloTree) -> Partition:
    """Greedy chain partition of the triplet-covered nodes.

    Nodes are visited parents-first; an uncovered node starts the longest
    available downward chain (three nodes, else two, else itself) through
    internal children that appear in some window.  Each emitted block is
    checked against the window-subset requirement and demoted to a shorter
    chain if it fails.  The result is machine-checked: disjointness,
    containment, coverage, and that no two blocks could merge and remain
    inside a single window.
    """
    if len(triplets) == 0:
        raise ValueError(NO_TRIPLETS_MSG)
    if not tree.is_binary():
        raise ValueError(
            "scan bounds require a binary tree (the window-overlap structure "
            "and the integral dimensions rely on binarity); use per-node "
            "testing with sidak_global for multifurcating trees")
    covered = triplets.covered_nodes
    trip_sets = [frozenset(t) for t in triplets.triplets]
    blocks: list[tuple[int, ...]] = []
    node_block: dict[int, int] = {}

    def usable(node: int) -> bool:
        return (tree.is_internal(node) and node in covered
                and node not in node_block)

    for node in tree.internal_order:
        if not usable(node):
            continue
        chain = [node]
        for child in tree.children(node):
            if not usable(child):
                continue
            grand = next((g for g in tree.children(child) if usable(g)), None)
            if grand is not None:
                chain = [node, child, grand]
                break
            if len(chain) == 1:
                chain = [node, child]
        while len(chain) > 1 and not any(frozenset(chain) <= ts
                                         for ts in trip_sets):
            chain.pop()
        idx = len(blocks)
        blocks.append(tuple(chain))
        for n in chain:
            node_block[n] = idx
    partition = Partition(blocks, node_block)
    _validate_partition(partition, triplets)
    return partition


def block_union_prob(partition: Partition, w: float) -> float:
    """Exact probability that some block sum exceeds w:
    1 - F_1(w)^t1 F_2(w)^t2 F_3(w)^t3."""
    if not w > 0.0:
        return 1.0
    t1, t2, t3 = partition.size_counts
    log_keep = 0.0
    for t, df in ((t1, 1), (t2, 2), (t3, 3)):
        if t:
            sf = chi2_sf(df, w)
            log_keep += t * math.log1p(-sf)
    return -math.expm1(log_keep)


def conditional_triplet_term(i: int, triplets: TripletSet, partition: Partition,
                             tables: DensityTables, w: float,
                             rtol: float = 1e-6) -> TermValue:
    """P(window i exceeds w, none of its neighbors does | no block exceeds w).

    Exactly zero when the window's node set is itself a block.
    """
    spec = make_triplet_spec(i, triplets, partition, include_neighbors=True)
    return evaluate_term(spec, w, tables, rtol=rtol)


def pair_term(i: int, j: int, triplets: TripletSet, partition: Partition,
              tables: DensityTables, w: float, rtol: float = 1e-6) -> TermValue:
    """P(windows i and j both exceed w | no block exceeds w), for windows
    sharing at most one node."""
    if not i > j:
        raise ValueError("pair_term requires i > j")
    spec = make_pair_spec(i, j, triplets, partition)
    if spec == "product":
        ti = evaluate_term(make_triplet_spec(i, triplets, partition, False),
                           w, tables, rtol=rtol)
        tj = evaluate_term(make_triplet_spec(j, triplets, partition, False),
                           w, tables, rtol=rtol)
        err = ti.value * tj.error + tj.value * ti.error + ti.error * tj.error
        return TermValue(ti.value * tj.value, err, ti.converged and tj.converged)
    return evaluate_term(spec, w, tables, rtol=rtol)


@dataclass
class ErrorRateDiagnostic:
    """Combinatorial decay-rate bound on the relative approximation error.

    ``rate_bound`` dominates eps_bound / p_upper for all thresholds at or
    above ``w_ref`` whenever ``conditions_met`` holds.  Both the strict
    condition (all triple blocks counted) and the stated one (one fewer)
    are reported; conditions_met uses the strict form.
    """

    w_ref: float
    n_disjoint_pairs: int
    n_single_overlap_pairs: int
    n_triple_blocks: int
    calibration_ratio: float
    rate_bound: float
    conditions_met: bool
    condition_strict: bool
    condition_stated: bool


def relative_error_diagnostic(triplets: TripletSet, partition: Partition,
                              w_ref: float, w: float,
                              grid_size: int = 4096,
                              rtol: float = 1e-6,
                              tables_ref: DensityTables | None = None
                              ) -> ErrorRateDiagnostic:
    """Evaluate the decay-rate bound at threshold w with calibration at w_ref."""
    if w < w_ref:
        raise ValueError("diagnostic requires w >= w_ref")
    block_sets = {frozenset(b) for b in partition.blocks}
    sets = [frozenset(t) for t in triplets.triplets]
    non_block = [i for i, s in enumerate(sets) if s not in block_sets]
    xi1 = xi2 = 0
    for a_pos in range(len(non_block)):
        for b_pos in range(a_pos):
            overlap = len(sets[non_block[a_pos]] & sets[non_block[b_pos]])
            if overlap == 0:
                xi1 += 1
            elif overlap == 1:
                xi2 += 1
    xi3 = partition.size_counts[2]

    if tables_ref is None:
        tables_ref = conditional_density_tables(partition, w_ref, grid_size)
    p_mc_ref = 1.0 - block_union_prob(partition, w_ref)
    tau_ref = sum(
        conditional_triplet_term(i, triplets, partition, tables_ref, w_ref,
                                 rtol=rtol).value
        for i in range(len(triplets)))
    sf3_ref = chi2_sf(3, w_ref)
    xi_t = p_mc_ref * tau_ref / sf3_ref

    sf3_w = chi2_sf(3, w)
    denom = 0.95 * xi3 + xi_t
    if denom > 0.0:
        rate = (xi1 * sf3_w + 0.9 * xi2 * math.sqrt(math.pi / 2.0) / w) / denom
    else:
        rate = math.inf
    strict = xi3 * sf3_ref < 0.1
    stated = (xi3 - 1) * sf3_ref < 0.1
    met = strict and w_ref >= 12.0 and math.isfinite(rate)
    return ErrorRateDiagnostic(w_ref, xi1, xi2, xi3, xi_t, rate, met,
                               strict, stated)


@dataclass
class IntegrationDiagnostics:
    n_terms: int
    n_flagged: int
    triplet_error: float
    pair_error: float
    flagged: list[str] = field(default_factory=list)


@dataclass
class BoundReport:
    """Computable interval for the scan p-value at an observed threshold.

    p_upper is a guaranteed upper bound on the exceedance probability;
    eps_bound dominates the gap to the true value, so the interval
    (max(p_blocks, p_upper - eps_bound), p_upper) always contains it.
    Quadrature error estimates widen, never narrow, the interval.
    """

    w: float
    p_blocks: float
    p_upper: float
    eps_bound: float
    interval: tuple[float, float]
    triplet_terms: list[float]
    diagnostic: ErrorRateDiagnostic | None
    integration: IntegrationDiagnostics

    def to_dict(self) -> dict:
        out = asdict(self)
        out["interval"] = list(out["interval"])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "BoundReport":
        diag = data.get("diagnostic")
        integ = data["integration"]
        return cls(
            w=data["w"], p_blocks=data["p_blocks"], p_upper=data["p_upper"],
            eps_bound=data["eps_bound"], interval=tuple(data["interval"]),
            triplet_terms=list(data["triplet_terms"]),
            diagnostic=ErrorRateDiagnostic(**diag) if diag else None,
            integration=IntegrationDiagnostics(**integ))


def _upper_bound_parts(triplets, partition, tables, w, rtol):
    p_m = block_union_prob(partition, w)
    p_mc = 1.0 - p_m
    terms = [conditional_triplet_term(i, triplets, partition, tables, w,
                                      rtol=rtol)
             for i in range(len(triplets))]
    tau_sum = sum(t.value for t in terms)
    tau_err = sum(t.error for t in terms)
    return p_m, p_mc, terms, tau_sum, tau_err


def bound_pvalue(results, triplets: TripletSet, partition: Partition, w: float,
                 grid_size: int = 4096, rtol: float = 1e-6,
                 w_ref: float | None = None,
                 include_diagnostic: bool = True) -> BoundReport:
    """Full interval bound for P(scan statistic > w) under the global null.

    ``results`` (per-node test results) is accepted for pipeline symmetry
    and may be None; the bound depends only on the windows, the partition,
    and w.  ``w_ref`` calibrates the decay-rate diagnostic and defaults to
    min(w, 15) when w >= 12.
    """
    if len(triplets) == 0:
        raise ValueError(NO_TRIPLETS_MSG)
    if w <= 1e-9:
        # Exceedance of a continuous positive maximum is certain at w = 0.
        diag = None
        integ = IntegrationDiagnostics(0, 0, 0.0, 0.0)
        return BoundReport(w, 1.0, 1.0, 0.0, (1.0, 1.0),
                           [0.0] * len(triplets), diag, integ)

    tables = conditional_density_tables(partition, w, grid_size)
    p_m, p_mc, terms, tau_sum, tau_err = _upper_bound_parts(
        triplets, partition, tables, w, rtol)
    p_upper = p_m + p_mc * (tau_sum + tau_err)

    flagged = [f"triplet {i}" for i, t in enumerate(terms) if not t.converged]
    sets = [frozenset(t) for t in triplets.triplets]
    tails: list[TermValue] = [
        evaluate_term(make_triplet_spec(i, triplets, partition, False),
                      w, tables, rtol=rtol)
        for i in range(len(triplets))]
    block_ids = [
        {partition.block_index(n) for n in triplets.triplets[i]}
        for i in range(len(triplets))]

    pair_sum = 0.0
    pair_err = 0.0
    for i in range(len(triplets)):
        for j in range(i):
            if j in triplets.neighbor_sets[i]:
                continue
            shared = len(sets[i] & sets[j])
            if shared == 0 and not (block_ids[i] & block_ids[j]):
                ti, tj = tails[i], tails[j]
                pair_sum += ti.value * tj.value
                pair_err += (ti.value * tj.error + tj.value * ti.error
                             + ti.error * tj.error)
                continue
            spec = make_pair_spec(i, j, triplets, partition)
            if spec == "product":
                ti, tj = tails[i], tails[j]
                pair_sum += ti.value * tj.value
                pair_err += ti.value * tj.error + tj.value * ti.error
                continue
            tv = evaluate_term(spec, w, tables, rtol=rtol)
            pair_sum += tv.value
            pair_err += tv.error
            if not tv.converged:
                flagged.append(f"pair ({i},{j})")

    eps_bound = p_mc * (pair_sum + pair_err) + 2.0 * p_mc * tau_err
    lower = max(p_m, p_upper - eps_bound, 0.0)
    diag = None
    if include_diagnostic:
        ref = w_ref if w_ref is not None else min(w, 15.0)
        if ref <= w:
            diag = relative_error_diagnostic(
                triplets, partition, ref, w, grid_size=grid_size, rtol=rtol,
                tables_ref=tables if ref == w else None)
    integ = IntegrationDiagnostics(
        n_terms=len(terms), n_flagged=len(flagged),
        triplet_error=p_mc * tau_err, pair_error=p_mc * pair_err,
        flagged=flagged)
    return BoundReport(w, p_m, p_upper, eps_bound, (lower, p_upper),
                       [t.value for t in terms], diag, integ)


def upper_bound_only(triplets: TripletSet, partition: Partition, w: float,
                     grid_size: int = 2048, rtol: float = 1e-6) -> float:
    """The upper bound alone (no pairwise error terms); used by the solver."""
    if w <= 1e-9:
        return 1.0
    tables = conditional_density_tables(partition, w, grid_size)
    p_m, p_mc, _, tau_sum, tau_err = _upper_bound_parts(
        triplets, partition, tables, w, rtol)
    return p_m + p_mc * (tau_sum + tau_err)


@dataclass
class ThresholdSolution:
    w: float
    alpha: float
    report: BoundReport


def solve_threshold(triplets: TripletSet, partition: Partition, alpha: float,
                    grid_size: int = 2048, rtol: float = 1e-6,
                    include_diagnostic: bool = False) -> ThresholdSolution:
    """Bisection for the threshold whose upper bound equals alpha.

    Stops when |P_U(w) - alpha| <= 1e-4 * alpha, then produces the full
    bound report (including the error bound) at the solution.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    tol = 1e-4 * alpha

    def f(w):
        return upper_bound_only(triplets, partition, w, grid_size, rtol)

    lo, hi = 1e-6, 8.0
    while f(hi) > alpha:
        lo, hi = hi, hi * 1.6
        if hi > 500.0:
            raise RuntimeError("threshold bracket failure: bound never "
                               f"drops below alpha={alpha}")
    w_sol = None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = f(mid)
        if abs(val - alpha) <= tol:
            w_sol = mid
            break
        if val > alpha:
            lo = mid
        else:
            hi = mid
    if w_sol is None:
        raise RuntimeError("threshold bisection did not converge")
    report = bound_pvalue(None, triplets, partition, w_sol,
                          grid_size=max(grid_size, 4096), rtol=rtol,
                          include_diagnostic=include_diagnostic)
    return ThresholdSolution(w_sol, alpha, report)


def improved_bonferroni_bound(triplets: TripletSet, w: float,
                              n_quad: int = 192) -> float:
    """The plain pairwise-improved union bound, without the block
    decomposition: P(B_1) + sum_i min_{j<i} P(B_i and not B_j).

    Used as a comparison baseline; the block-decomposed bound is tighter.
    """
    if len(triplets) == 0:
        raise ValueError(NO_TRIPLETS_MSG)
    sf3 = chi2_sf(3, w)
    sin2, dwt = _gl_sin2(n_quad)

    # P(both windows exceed w) by overlap size, under independence of the
    # unconditioned chi-square scores.
    z = w * sin2
    weight1 = w * dwt * _f1(z)
    sf2_rem = np.exp(-0.5 * np.maximum(w - z, 0.0))
    p_share1 = float(weight1 @ sf2_rem ** 2) + chi2_sf(1, w)
    f2_s = 0.5 * np.exp(-0.5 * z)
    sf1_rem = kernels.f1sf(w - z)
    p_share2 = float((w * dwt * f2_s) @ sf1_rem ** 2) + chi2_sf(2, w)
    p_by_overlap = {0: sf3 * sf3, 1: p_share1, 2: p_share2}

    sets = [frozenset(t) for t in triplets.triplets]
    total = sf3
    for i in range(1, len(sets)):
        best_overlap = max(len(sets[i] & sets[j]) for j in range(i))
        total += sf3 - p_by_overlap[best_overlap]
    return total
