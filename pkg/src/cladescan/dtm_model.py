"""Dirichlet-tree multinomial: likelihood, per-node tests, and the
DM-vs-DTM likelihood-ratio test.

The tree model places an independent local DM on every internal node's
child counts conditional on the node total, so the log pmf, the MLE, and
the cross-group tests all decompose node by node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dm_model import CountTable, DmFit, DmParams, dm_log_pmf, dm_mle, mom_test
from .phylo_tree import PhyloTree, aggregate_counts
from .special_functions import chi2_isf, chi2_sf

__all__ = [
    "DtmParams",
    "DtmFit",
    "NodeTestResult",
    "LrtResult",
    "dtm_log_pmf",
    "dm_to_dtm_params",
    "node_tests",
    "sidak_global",
    "sidak_alpha",
    "validate_alpha_allocation",
    "dtm_mle",
    "lrt_dm_vs_dtm",
]


@dataclass
class DtmParams:
    """Per-internal-node local DM parameters (child proportions, dispersion)."""

    node_params: dict[int, DmParams]

    def __getitem__(self, node: int) -> DmParams:
        return self.node_params[node]


@dataclass
class DtmFit:
    params: DtmParams
    log_likelihood: float
    converged: bool
    node_fits: dict[int, DmFit] = field(default_factory=dict)


@dataclass
class NodeTestResult:
    """Cross-group moment test at one internal node.

    z_value is the p-value mapped to a chi-square(1) scale through the
    upper tail, so strong evidence gives large z.
    """

    node: int
    statistic: float
    df: int
    p_value: float
    z_value: float
    skipped: bool = False
    dropped_categories: list[int] = field(default_factory=list)


def dtm_log_pmf(tree: PhyloTree, params: DtmParams, sample) -> float:
    """Log pmf of one leaf count vector: sum of local DM log pmfs over
    internal nodes, each conditional on the node total."""
    x = np.asarray(sample, dtype=np.int64)
    if x.shape != (tree.n_leaves,):
        raise ValueError(f"sample must have length {tree.n_leaves}")
    totals = np.zeros(len(tree.nodes), dtype=np.int64)
    totals[:tree.n_leaves] = x
    for i in reversed(tree.internal_order):
        totals[i] = sum(totals[c] for c in tree.children(i))
    out = 0.0
    for i in tree.internal_order:
        child_vec = np.array([totals[c] for c in tree.children(i)])
        out += dm_log_pmf(params[i], child_vec)
    return out


def dm_to_dtm_params(tree: PhyloTree, params: DmParams) -> DtmParams:
    """The tree representation of a global DM: each node gets dispersion
    nu * (mass under the node) and proportions renormalized within it."""
    if params.pi.size != tree.n_leaves:
        raise ValueError("DM dimension does not match tree leaves")
    mass = np.zeros(len(tree.nodes))
    mass[:tree.n_leaves] = params.pi
    for i in reversed(tree.internal_order):
        mass[i] = sum(mass[c] for c in tree.children(i))
    node_params = {}
    for i in tree.internal_order:
        child_mass = np.array([mass[c] for c in tree.children(i)])
        node_params[i] = DmParams(child_mass / mass[i], params.nu * mass[i])
    return DtmParams(node_params)


def node_tests(tree: PhyloTree, groups: list[CountTable]) -> list[NodeTestResult]:
    """Run the cross-group moment test at every internal node.

    Per node, samples with zero total under the node are excluded (the local
    model conditions on the total, so they carry no information).  A node is
    skipped with p=1, z=0 when fewer than 2 usable samples remain in any
    group, or when the moment estimator is undefined for a group.
    """
    if len(groups) < 2:
        raise ValueError("node_tests requires at least 2 groups")
    aggregated = [aggregate_counts(tree, g) for g in groups]
    results = []
    for pos, node in enumerate(tree.internal_order):
        subtables = []
        usable = True
        for g, agg in enumerate(aggregated):
            nc = agg[pos]
            keep = nc.totals > 0
            if keep.sum() < 2:
                usable = False
                break
            names = [f"child{j}" for j in range(nc.child_counts.shape[1])]
            ids = [groups[g].sample_ids[i] for i in np.nonzero(keep)[0]]
            subtables.append(CountTable(ids, names, nc.child_counts[keep]))
        if usable:
            try:
                res = mom_test(subtables)
            except ValueError:
                usable = False
        if not usable:
            results.append(NodeTestResult(node, 0.0, 1, 1.0, 0.0, skipped=True))
            continue
        z = chi2_isf(1, res.p_value) if res.p_value < 1.0 else 0.0
        results.append(NodeTestResult(node, res.statistic, res.df, res.p_value,
                                      z, dropped_categories=res.dropped_categories))
    return results


def sidak_global(results: list[NodeTestResult]) -> float:
    """Sidak-corrected global p-value: 1 - (1 - min p)^(number of nodes)."""
    if not results:
        raise ValueError("sidak_global requires at least one node result")
    p_min = min(r.p_value for r in results)
    m = len(results)
    if p_min >= 1.0:
        return 1.0
    return -math.expm1(m * math.log1p(-p_min))


def sidak_alpha(alpha: float, n_nodes: int) -> float:
    """Equal per-node error level: 1 - (1 - alpha)^(1/n)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    return -math.expm1(math.log1p(-alpha) / n_nodes)


def validate_alpha_allocation(alphas, alpha: float, tol: float = 1e-6):
    """Check a per-node allocation satisfies 1 - prod(1 - alpha_A) = alpha.

    Returns (ok, achieved) with the achieved family-wise level.
    """
    alphas = np.asarray(list(alphas), dtype=np.float64)
    if np.any(alphas <= 0.0) or np.any(alphas >= 1.0):
        raise ValueError("per-node alphas must lie in (0, 1)")
    achieved = -math.expm1(np.log1p(-alphas).sum())
    return bool(abs(achieved - alpha) <= tol * alpha), achieved


def dtm_mle(tree: PhyloTree, table: CountTable) -> DtmFit:
    """Independent per-node DM maximum likelihood.

    Nodes whose total is zero in every sample contribute nothing and get
    default parameters (uniform proportions, unit dispersion); per-node
    non-convergence is reflected in the overall flag and per-node fits.
    """
    aggregated = aggregate_counts(tree, table)
    node_params: dict[int, DmParams] = {}
    node_fits: dict[int, DmFit] = {}
    total_ll = 0.0
    converged = True
    for pos, node in enumerate(tree.internal_order):
        nc = aggregated[pos]
        k = nc.child_counts.shape[1]
        keep = nc.totals > 0
        if not keep.any():
            node_params[node] = DmParams(np.full(k, 1.0 / k), 1.0)
            continue
        names = [f"child{j}" for j in range(k)]
        ids = [table.sample_ids[i] for i in np.nonzero(keep)[0]]
        sub = CountTable(ids, names, nc.child_counts[keep])
        fit = dm_mle(sub)
        node_params[node] = fit.params
        node_fits[node] = fit
        total_ll += fit.log_likelihood
        converged = converged and (fit.converged or fit.boundary)
    return DtmFit(DtmParams(node_params), total_ll, converged, node_fits)


@dataclass
class LrtResult:
    statistic: float
    df: int
    p_value: float
    dm_log_likelihood: float
    dtm_log_likelihood: float
    converged: bool


def lrt_dm_vs_dtm(tree: PhyloTree, table: CountTable) -> LrtResult:
    """Likelihood-ratio test of the global DM against the tree model.

    The models are nested (one shared dispersion versus one per node), so
    the statistic is nonnegative up to optimizer tolerance and is referred
    to chi-square with |I| - 1 degrees of freedom on a binary tree.
    """
    if not tree.is_binary():
        raise ValueError("lrt_dm_vs_dtm requires a binary tree "
                         "(the df formula assumes binarity)")
    dm_fit = dm_mle(table)
    dtm_fit = dtm_mle(tree, table)
    lam = 2.0 * (dtm_fit.log_likelihood - dm_fit.log_likelihood)
    if lam < -1e-6:
        raise RuntimeError(f"negative LRT statistic {lam}: optimizer failure")
    lam = max(lam, 0.0)
    df = tree.n_internal - 1
    if df < 1:
        raise ValueError("LRT undefined for a tree with a single internal node")
    p = chi2_sf(df, lam)
    return LrtResult(lam, df, p, dm_fit.log_likelihood,
                     dtm_fit.log_likelihood,
                     dm_fit.converged and dtm_fit.converged)
