"""Monte Carlo machinery: null verification of the scan bound, data
generators for power studies, and null-calibration summaries.

All randomness flows through counter-based Philox streams keyed by
(master_seed, replicate), so results are bit-identical for a given
configuration regardless of execution order or thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .dm_model import CountTable, DmParams, mom_test
from .dtm_model import DtmParams, node_tests
from .phylo_tree import PhyloTree, TripletSet, enumerate_triplets, group_by_rank, parse_newick
from .scan_bounds import NO_TRIPLETS_MSG

__all__ = [
    "SimConfig",
    "AltSpec",
    "NullMaxResult",
    "PowerResult",
    "CalibrationResult",
    "replicate_rng",
    "random_binary_tree",
    "random_dtm_params",
    "sample_dm_counts",
    "sample_dtm_counts",
    "simulate_null_max",
    "generate_alternative",
    "power_study",
    "null_calibration",
    "ks_uniform",
]

METHOD_DM = "dm"
METHOD_DTM_NODE = "dtm-node"
METHOD_DTM_SCAN = "dtm-scan"
ALL_METHODS = (METHOD_DM, METHOD_DTM_NODE, METHOD_DTM_SCAN)


@dataclass
class AltSpec:
    """Alternative-generation recipe.

    strategy 1 inflates one OTU's counts in the second group; strategy 2
    inflates all OTU counts under one internal node.  ``target`` is a node
    or OTU index, or "random" (for strategy 2, restricted to internal nodes
    with at least ``min_leaves`` descendant OTUs).
    """

    strategy: int
    fraction: float
    target: int | str = "random"
    min_leaves: int = 2

    def __post_init__(self):
        if self.strategy not in (1, 2):
            raise ValueError("strategy must be 1 or 2")
        if self.fraction < 0.0:
            raise ValueError("increment fraction must be nonnegative")
        if self.min_leaves < 2:
            raise ValueError("min_leaves must be at least 2")


@dataclass
class SimConfig:
    master_seed: int
    replicates: int
    draws_per_replicate: int = 50_000
    tree_file: str | None = None
    tree_leaves: int | None = None
    alternative: AltSpec | None = None
    split_rule: str = "equal"
    threads: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.draws_per_replicate < 1:
            raise ValueError("draws_per_replicate must be >= 1")
        if self.split_rule != "equal":
            raise ValueError("only the equal split rule is supported")


def replicate_rng(master_seed: int, replicate: int) -> np.random.Generator:
    """Counter-based stream for one replicate; order-independent."""
    key = np.array([np.uint64(master_seed), np.uint64(replicate)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _run_replicates(fn, n_replicates: int, threads: int):
    """Run fn(replicate_index) for every replicate, optionally on a thread
    pool.  Per-replicate streams make the result identical for any thread
    count; outputs land in replicate order."""
    if threads <= 1:
        for rep in range(n_replicates):
            fn(rep)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(fn, range(n_replicates)))


def random_binary_tree(n_leaves: int, seed: int) -> PhyloTree:
    """Random binary topology by coalescent-style pairwise joins."""
    if n_leaves < 2:
        raise ValueError("need at least 2 leaves")
    rng = replicate_rng(seed, 0)
    width = len(str(n_leaves))
    items = [f"otu{i + 1:0{width}d}" for i in range(n_leaves)]
    while len(items) > 1:
        i, j = sorted(rng.choice(len(items), size=2, replace=False))
        b = items.pop(j)
        a = items.pop(i)
        items.append(f"({a},{b})")
    return parse_newick(items[0] + ";")


def random_dtm_params(tree: PhyloTree, rng: np.random.Generator,
                      nu_low: float = 2.0, nu_high: float = 30.0) -> DtmParams:
    """Heterogeneous-dispersion tree parameters with mildly uneven splits."""
    node_params = {}
    for node in tree.internal_order:
        k = len(tree.children(node))
        pi = rng.dirichlet(np.full(k, 5.0))
        pi = np.maximum(pi, 0.02)
        pi = pi / pi.sum()
        nu = float(np.exp(rng.uniform(np.log(nu_low), np.log(nu_high))))
        node_params[node] = DmParams(pi, nu)
    return DtmParams(node_params)


def sample_dm_counts(params: DmParams, totals, rng: np.random.Generator
                     ) -> np.ndarray:
    """Dirichlet-multinomial draws, one row per total."""
    totals = np.asarray(totals, dtype=np.int64)
    q = rng.dirichlet(params.alpha, size=totals.size)
    return rng.multinomial(totals, q)


def sample_dtm_counts(tree: PhyloTree, params: DtmParams, totals,
                      rng: np.random.Generator) -> np.ndarray:
    """Top-down tree-multinomial draws: each node splits its total among
    children with a fresh Dirichlet probability per sample."""
    totals = np.asarray(totals, dtype=np.int64)
    n = totals.size
    node_tot = np.zeros((n, len(tree.nodes)), dtype=np.int64)
    node_tot[:, tree.root] = totals
    for node in tree.internal_order:
        kids = tree.children(node)
        q = rng.dirichlet(params[node].alpha, size=n)
        node_tot[:, kids] = rng.multinomial(node_tot[:, node], q)
    return node_tot[:, :tree.n_leaves]


@dataclass
class NullMaxResult:
    """Per-replicate exceedance proportions of the simulated scan maximum."""

    w_values: np.ndarray
    proportions: np.ndarray  # (replicates, len(w_values))
    config: SimConfig

    def mean_exceedance(self) -> np.ndarray:
        return self.proportions.mean(axis=0)

    def rows(self):
        out = []
        for r in range(self.proportions.shape[0]):
            for k, w in enumerate(self.w_values):
                out.append(("null-max", r, float(w), self.proportions[r, k]))
        return out


def _triplet_positions(tree: PhyloTree, triplets: TripletSet) -> np.ndarray:
    pos = {node: k for k, node in enumerate(tree.internal_order)}
    return np.array([[pos[a], pos[b], pos[c]] for a, b, c in triplets.triplets],
                    dtype=np.int64)


def simulate_null_max(tree: PhyloTree, config: SimConfig, w_values
                      ) -> NullMaxResult:
    """Null distribution of the scan maximum: i.i.d. chi-square(1) node
    scores, window sums, maximum; exceedance proportions per replicate."""
    triplets = enumerate_triplets(tree)
    if len(triplets) == 0:
        raise ValueError(NO_TRIPLETS_MSG)
    trip_idx = _triplet_positions(tree, triplets)
    w_values = np.asarray(w_values, dtype=np.float64)
    n_int = tree.n_internal
    props = np.empty((config.replicates, w_values.size))

    def one(rep):
        rng = replicate_rng(config.master_seed, rep)
        z2 = rng.standard_normal((config.draws_per_replicate, n_int)) ** 2
        w_max = kernels.scan_max(z2, trip_idx)
        props[rep] = (w_max[:, None] > w_values).mean(axis=0)

    _run_replicates(one, config.replicates, config.threads)
    return NullMaxResult(w_values, props, config)


def _equal_split(n: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    half = n // 2
    return np.sort(perm[:half]), np.sort(perm[half:])


def _inflate(counts: np.ndarray, cols, fraction: float) -> np.ndarray:
    """Multiply selected columns by (1 + fraction), rounding increments to
    the nearest integer with a minimum bump of 1 for positive counts."""
    out = counts.copy()
    if fraction <= 0.0:
        return out
    block = out[:, cols]
    inc = np.floor(block * fraction + 0.5).astype(np.int64)
    inc[(block > 0) & (inc == 0)] = 1
    out[:, cols] = block + inc
    return out


def generate_alternative(tree: PhyloTree, base_table: CountTable,
                         spec: AltSpec, rng: np.random.Generator
                         ) -> tuple[CountTable, CountTable]:
    """Random equal split of the samples, with the second group's counts
    inflated per the alternative recipe (a zero fraction leaves a pure
    null split)."""
    idx1, idx2 = _equal_split(base_table.n_samples, rng)
    g1 = base_table.take_samples(idx1)
    g2 = base_table.take_samples(idx2)
    if spec.strategy == 1:
        if spec.target == "random":
            col = int(rng.integers(base_table.n_categories))
        else:
            col = int(spec.target)
        cols = [col]
    else:
        eligible = [i for i in tree.internal_order
                    if len(tree.nodes[i].leaf_set) >= spec.min_leaves]
        if spec.target == "random":
            if not eligible:
                raise ValueError(f"no internal node has >= {spec.min_leaves} "
                                 "descendant OTUs")
            node = int(eligible[int(rng.integers(len(eligible)))])
        else:
            node = int(spec.target)
            if spec.target != "random" and node not in tree.internal_order:
                raise ValueError(f"{node} is not an internal node")
        leaf_ids = sorted(tree.nodes[node].leaf_set)
        name_col = {name: j for j, name in enumerate(base_table.categories)}
        cols = [name_col[tree.leaf_names[i]] for i in leaf_ids]
    inflated = _inflate(g2.counts, cols, spec.fraction)
    g2 = CountTable(g2.sample_ids, list(g2.categories), inflated)
    return g1, g2


@dataclass
class PowerResult:
    methods: list[str]
    null_stats: dict[str, np.ndarray]
    alt_stats: dict[str, np.ndarray]
    config: SimConfig

    def power(self, method: str, fpr: float = 0.05) -> float:
        thr = np.quantile(self.null_stats[method], 1.0 - fpr)
        return float((self.alt_stats[method] > thr).mean())

    def roc(self, method: str, grid=None):
        grid = np.arange(0.0, 1.0001, 0.02) if grid is None else np.asarray(grid)
        null = self.null_stats[method]
        alt = self.alt_stats[method]
        points = []
        for fpr in grid:
            thr = np.quantile(null, 1.0 - fpr) if fpr < 1.0 else -np.inf
            points.append((float(fpr), float((alt > thr).mean())))
        return points

    def rows(self):
        out = []
        for m in self.methods:
            out.append((m, "power_at_fpr_0.05", "", self.power(m)))
            for fpr, tpr in self.roc(m):
                out.append((m, "roc", fpr, tpr))
        return out


def _method_stats(tree, triplets, trip_arr, groups, methods):
    stats = {}
    if METHOD_DM in methods:
        stats[METHOD_DM] = mom_test(groups).statistic
    if METHOD_DTM_NODE in methods or METHOD_DTM_SCAN in methods:
        results = node_tests(tree, groups)
        z = {r.node: r.z_value for r in results}
        if METHOD_DTM_NODE in methods:
            stats[METHOD_DTM_NODE] = max(z.values())
        if METHOD_DTM_SCAN in methods:
            sums = [z[a] + z[b] + z[c] for a, b, c in trip_arr]
            stats[METHOD_DTM_SCAN] = max(sums)
    return stats


def power_study(tree: PhyloTree, base_table: CountTable, spec: AltSpec,
                methods, config: SimConfig) -> PowerResult:
    """Null and alternative statistic distributions for the chosen methods.

    Each replicate produces one pure-null split and one inflated split;
    power at a false-positive rate uses the method's own null quantile as
    the threshold.
    """
    methods = list(methods)
    unknown = set(methods) - set(ALL_METHODS)
    if unknown or not methods:
        raise ValueError(f"methods must be a nonempty subset of {ALL_METHODS}")
    triplets = enumerate_triplets(tree)
    if METHOD_DTM_SCAN in methods and len(triplets) == 0:
        raise ValueError(NO_TRIPLETS_MSG)
    trip_arr = triplets.triplets
    null_spec = AltSpec(spec.strategy, 0.0, spec.target, spec.min_leaves)
    null_stats = {m: np.empty(config.replicates) for m in methods}
    alt_stats = {m: np.empty(config.replicates) for m in methods}

    def one(rep):
        rng = replicate_rng(config.master_seed, rep)
        g_null = generate_alternative(tree, base_table, null_spec, rng)
        for m, v in _method_stats(tree, triplets, trip_arr, list(g_null),
                                  methods).items():
            null_stats[m][rep] = v
        g_alt = generate_alternative(tree, base_table, spec, rng)
        for m, v in _method_stats(tree, triplets, trip_arr, list(g_alt),
                                  methods).items():
            alt_stats[m][rep] = v

    _run_replicates(one, config.replicates, config.threads)
    return PowerResult(methods, null_stats, alt_stats, config)


def ks_uniform(values) -> float:
    """Kolmogorov-Smirnov distance of a sample from Uniform(0, 1)."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    hi = np.arange(1, n + 1) / n
    lo = np.arange(0, n) / n
    return float(np.max(np.maximum(hi - x, x - lo)))


@dataclass
class CalibrationResult:
    dm_pvalues: np.ndarray
    dtm_node_pvalues: np.ndarray   # pooled over nodes and replicates
    rank_pvalues: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def ks_dm(self) -> float:
        return ks_uniform(self.dm_pvalues)

    @property
    def ks_dtm(self) -> float:
        return ks_uniform(self.dtm_node_pvalues)

    def ks_rank(self, rank: str) -> float:
        return ks_uniform(self.rank_pvalues[rank])

    def rows(self):
        out = [("dm", "ks_uniform", "", self.ks_dm),
               ("dtm-pooled", "ks_uniform", "", self.ks_dtm)]
        for rank in self.rank_pvalues:
            out.append((f"dm-{rank}", "ks_uniform", "", self.ks_rank(rank)))
        return out


def null_calibration(tree: PhyloTree, base_table: CountTable,
                     config: SimConfig, taxonomy=None, ranks=()
                     ) -> CalibrationResult:
    """Repeated random equal splits of one dataset: p-value samples for the
    global DM test, optional rank-grouped DM tests, and the pooled per-node
    tree tests, with KS-from-uniform summaries."""
    rank_tables = {}
    for rank in ranks:
        if taxonomy is None:
            raise ValueError("ranks require a taxonomy")
        rank_tables[rank] = group_by_rank(base_table, taxonomy, rank)
    dm_p = np.empty(config.replicates)
    rank_p = {rank: np.empty(config.replicates) for rank in rank_tables}
    node_p: list[float] = []
    for rep in range(config.replicates):
        rng = replicate_rng(config.master_seed, rep)
        idx1, idx2 = _equal_split(base_table.n_samples, rng)
        dm_p[rep] = mom_test([base_table.take_samples(idx1),
                              base_table.take_samples(idx2)]).p_value
        for rank, tab in rank_tables.items():
            rank_p[rank][rep] = mom_test([tab.take_samples(idx1),
                                          tab.take_samples(idx2)]).p_value
        groups = [base_table.take_samples(idx1), base_table.take_samples(idx2)]
        for res in node_tests(tree, groups):
            if not res.skipped:
                node_p.append(res.p_value)
    return CalibrationResult(dm_p, np.asarray(node_p), rank_p)
