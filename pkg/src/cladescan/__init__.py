"""Cross-group tests for tree-structured count data.

Detects distributional differences between groups of samples whose counts
live on the leaves of a rooted tree (e.g. microbiome OTU tables on a
phylogeny): per-node Dirichlet-multinomial moment tests, a triplet scan
statistic that pools evidence along lineages, and analytically bounded tail
probabilities in place of Monte Carlo p-values.
"""

from ._backend import BACKEND
from .special_functions import (ChiSqDist, chi2_cdf, chi2_isf, chi2_pdf,
                                chi2_quantile, chi2_sf, log_gamma)
from .dm_model import (CountTable, DmFit, DmParams, MomTestResult, dm_log_pmf,
                       dm_mle, mom_estimate, mom_test)
from .phylo_tree import (NodeCounts, PhyloTree, TripletSet, aggregate_counts,
                         enumerate_triplets, group_by_rank, label_internal_taxa,
                         parse_newick, read_taxonomy_tsv)
from .dtm_model import (DtmFit, DtmParams, LrtResult, NodeTestResult,
                        dm_to_dtm_params, dtm_log_pmf, dtm_mle, lrt_dm_vs_dtm,
                        node_tests, sidak_alpha, sidak_global,
                        validate_alpha_allocation)
from .scan_bounds import (BoundReport, ErrorRateDiagnostic, Partition,
                          ScanStatistics, ThresholdSolution, block_union_prob,
                          bound_pvalue, build_partition,
                          conditional_density_tables, conditional_triplet_term,
                          improved_bonferroni_bound, pair_term,
                          relative_error_diagnostic, scan_statistic,
                          solve_threshold)
from .simulation import (AltSpec, CalibrationResult, NullMaxResult,
                         PowerResult, SimConfig, generate_alternative,
                         ks_uniform, null_calibration, power_study,
                         random_binary_tree, random_dtm_params,
                         sample_dm_counts, sample_dtm_counts,
                         simulate_null_max)

__version__ = "0.1.0"
