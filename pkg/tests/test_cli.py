import json

import numpy as np
import pytest

import cladescan as cs
from cladescan.cli import main
from cladescan.scan_bounds import BoundReport
from cladescan.simulation import replicate_rng
from conftest import FIG_TREE_NEWICK


def write_fixture(tmp_path, tree, counts, group_values, taxonomy=None):
    paths = {}
    paths["tree"] = tmp_path / "tree.nwk"
    paths["tree"].write_text(tree.to_newick() + "\n")
    paths["counts"] = tmp_path / "counts.tsv"
    with open(paths["counts"], "w") as fh:
        fh.write("sample_id\t" + "\t".join(tree.leaf_names) + "\n")
        for i, row in enumerate(counts):
            fh.write(f"s{i:03d}\t" + "\t".join(map(str, row)) + "\n")
    paths["metadata"] = tmp_path / "meta.tsv"
    with open(paths["metadata"], "w") as fh:
        fh.write("sample_id\tgroup\n")
        for i, g in enumerate(group_values):
            fh.write(f"s{i:03d}\t{g}\n")
    if taxonomy:
        paths["taxonomy"] = tmp_path / "taxa.tsv"
        with open(paths["taxonomy"], "w") as fh:
            fh.write("otu_id\tkingdom\tphylum\tclass\torder\tfamily\tgenus"
                     "\tspecies\n")
            for otu, ranks in taxonomy.items():
                fh.write(otu + "\t" + "\t".join(r or "" for r in ranks) + "\n")
    return paths


@pytest.fixture()
def fig_fixture(tmp_path):
    tree = cs.parse_newick(FIG_TREE_NEWICK)
    rng = replicate_rng(1000, 0)
    counts = rng.multinomial(400, [0.1, 0.15, 0.2, 0.25, 0.3], size=24)
    groups = ["a"] * 12 + ["b"] * 12
    taxonomy = {name: ["k1", "p1", "c1", "o1", "f1", f"g{name}", None]
                for name in tree.leaf_names}
    return write_fixture(tmp_path, tree, counts, groups, taxonomy)


def run(args):
    return main([str(a) for a in args])


def test_scan_identical_groups_near_one(fig_fixture, tmp_path):
    out = tmp_path / "scan.json"
    # identical groups: duplicate each sample into both groups via metadata
    code = run(["scan", "--counts", fig_fixture["counts"], "--tree",
                fig_fixture["tree"], "--metadata", fig_fixture["metadata"],
                "--group-column", "group", "--out", out, "--exit-signal"])
    assert code == 0
    data = json.loads(out.read_text())
    assert data["bound"]["p_upper"] > 0.5
    assert data["significant_triplets"] == []
    assert len(data["node_results"]) == 4


def test_scan_detects_strong_subtree_signal(tmp_path):
    tree = cs.random_binary_tree(40, 9)
    rng = replicate_rng(1001, 0)
    params = cs.random_dtm_params(tree, rng, nu_low=8, nu_high=40)
    counts = cs.sample_dtm_counts(tree, params, np.full(60, 2000), rng)
    # inflate a mid-sized clade in the second half of the samples
    node = next(n for n in tree.internal_order
                if 4 <= len(tree.nodes[n].leaf_set) <= 8)
    cols = sorted(tree.nodes[node].leaf_set)
    counts[30:, cols] = counts[30:, cols] * 3
    paths = write_fixture(tmp_path, tree, counts, ["lo"] * 30 + ["hi"] * 30)
    out = tmp_path / "scan.json"
    code = run(["scan", "--counts", paths["counts"], "--tree", paths["tree"],
                "--metadata", paths["metadata"], "--group-column", "group",
                "--out", out, "--exit-signal"])
    assert code == 2
    data = json.loads(out.read_text())
    assert data["bound"]["p_upper"] < 0.05
    assert data["significant_triplets"]
    assert data["threshold"]["w_alpha"] > 12.0


def test_scan_bound_report_json_round_trip(fig_fixture, tmp_path):
    out = tmp_path / "scan.json"
    run(["scan", "--counts", fig_fixture["counts"], "--tree",
         fig_fixture["tree"], "--metadata", fig_fixture["metadata"],
         "--group-column", "group", "--out", out])
    data = json.loads(out.read_text())
    report = BoundReport.from_dict(data["bound"])
    assert report.to_dict() == data["bound"]
    assert report.p_upper == data["bound"]["p_upper"]  # exact floats


def test_node_tests_rows_and_taxa(fig_fixture, tmp_path):
    out = tmp_path / "nodes.json"
    code = run(["node-tests", "--counts", fig_fixture["counts"], "--tree",
                fig_fixture["tree"], "--metadata", fig_fixture["metadata"],
                "--group-column", "group", "--taxonomy",
                fig_fixture["taxonomy"], "--out", out])
    assert code == 0
    data = json.loads(out.read_text())
    assert len(data["node_results"]) == 4  # one row per internal node
    tree = cs.parse_newick(FIG_TREE_NEWICK)
    taxonomy = {name: ["k1", "p1", "c1", "o1", "f1", f"g{name}", None]
                for name in tree.leaf_names}
    labels = cs.label_internal_taxa(tree, taxonomy)
    by_node = {r["node"]: r for r in data["node_results"]}
    for node, (rank, taxon) in labels.items():
        assert by_node[node]["taxon"] == taxon
        assert by_node[node]["taxon_rank"] == rank


def test_node_tests_alpha_allocation_validation(fig_fixture, tmp_path):
    from cladescan.dtm_model import sidak_alpha
    tree = cs.parse_newick(FIG_TREE_NEWICK)
    good = tmp_path / "alpha_good.tsv"
    a = sidak_alpha(0.05, tree.n_internal)
    good.write_text("".join(f"{n} {a}\n" for n in tree.internal_order))
    out = tmp_path / "nodes.json"
    code = run(["node-tests", "--counts", fig_fixture["counts"], "--tree",
                fig_fixture["tree"], "--metadata", fig_fixture["metadata"],
                "--group-column", "group", "--alpha-allocation", good,
                "--out", out])
    assert code == 0
    assert "significant_nodes" in json.loads(out.read_text())

    bad = tmp_path / "alpha_bad.tsv"
    bad.write_text("".join(f"{n} 0.04\n" for n in tree.internal_order))
    code = run(["node-tests", "--counts", fig_fixture["counts"], "--tree",
                fig_fixture["tree"], "--metadata", fig_fixture["metadata"],
                "--group-column", "group", "--alpha-allocation", bad,
                "--out", tmp_path / "nodes2.json"])
    assert code == 1
    assert not (tmp_path / "nodes2.json").exists()


def test_dm_identical_groups(tmp_path):
    tree = cs.parse_newick(FIG_TREE_NEWICK)
    block = [[5, 3, 2, 8, 1], [4, 4, 2, 7, 2], [6, 2, 3, 6, 3], [3, 5, 2, 9, 1]]
    counts = np.tile(block, (2, 1))
    paths = write_fixture(tmp_path, tree, counts, ["a"] * 4 + ["b"] * 4)
    out = tmp_path / "dm.json"
    code = run(["dm", "--counts", paths["counts"], "--metadata",
                paths["metadata"], "--group-column", "group", "--out", out])
    assert code == 0
    data = json.loads(out.read_text())
    assert data["statistic"] == pytest.approx(0.0, abs=1e-12)
    assert data["p_value"] == pytest.approx(1.0)


def test_dm_rank_grouping(fig_fixture, tmp_path):
    out = tmp_path / "dm.json"
    code = run(["dm", "--counts", fig_fixture["counts"], "--metadata",
                fig_fixture["metadata"], "--group-column", "group",
                "--taxonomy", fig_fixture["taxonomy"], "--rank", "genus",
                "--out", out])
    assert code == 0
    assert json.loads(out.read_text())["rank"] == "genus"


def test_lrt_df_on_eight_leaf_tree(tmp_path):
    tree = cs.random_binary_tree(8, 5)
    rng = replicate_rng(1002, 0)
    counts = rng.multinomial(300, np.full(8, 1 / 8), size=30)
    paths = write_fixture(tmp_path, tree, counts, ["a", "b"] * 15)
    out = tmp_path / "lrt.json"
    code = run(["lrt", "--counts", paths["counts"], "--tree", paths["tree"],
                "--out", out])
    assert code == 0
    assert json.loads(out.read_text())["df"] == 6  # |I| - 1 on a binary tree


def test_simulate_null_max_is_byte_identical(tmp_path):
    args = ["simulate", "null-max", "--leaves", "8", "--replicates", "4",
            "--draws", "3000", "--w", "8", "12", "--seed", "17",
            "--format", "tsv"]
    out1, out2 = tmp_path / "a.tsv", tmp_path / "b.tsv"
    assert run(args + ["--out", out1]) == 0
    assert run(args + ["--out", out2]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_thread_count_does_not_change_output(tmp_path):
    base = ["simulate", "null-max", "--leaves", "10", "--replicates", "6",
            "--draws", "2000", "--w", "9", "--seed", "3"]
    out1, out2 = tmp_path / "t1.json", tmp_path / "t4.json"
    assert run(base + ["--threads", "1", "--out", out1]) == 0
    assert run(base + ["--threads", "4", "--out", out2]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_malformed_counts_yields_error_json_and_no_file(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("sample_id\to1\to2\ns0\t1\n")  # ragged row
    out = tmp_path / "out.json"
    code = run(["dm", "--counts", bad, "--metadata", bad,
                "--group-column", "group", "--out", out])
    assert code == 1
    err = json.loads(capsys.readouterr().out)
    assert "error" in err
    assert not out.exists()


def test_transpose_accepts_otu_major(tmp_path):
    tree = cs.parse_newick("(a,b);")
    paths = write_fixture(tmp_path, tree, [[3, 4], [5, 6], [7, 8], [9, 10]],
                          ["g1", "g2", "g1", "g2"])
    tposed = tmp_path / "counts_t.tsv"
    with open(paths["counts"]) as fh:
        rows = [line.rstrip("\n").split("\t") for line in fh]
    cols = list(zip(*rows))
    with open(tposed, "w") as fh:
        fh.write("otu_id\t" + "\t".join(cols[0][1:]) + "\n")
        for col in cols[1:]:
            fh.write("\t".join(col) + "\n")
    out1, out2 = tmp_path / "o1.json", tmp_path / "o2.json"
    assert run(["dm", "--counts", paths["counts"], "--metadata",
                paths["metadata"], "--group-column", "group",
                "--out", out1]) == 0
    assert run(["dm", "--counts", tposed, "--transpose", "--metadata",
                paths["metadata"], "--group-column", "group",
                "--out", out2]) == 0
    assert json.loads(out1.read_text())["statistic"] == \
        json.loads(out2.read_text())["statistic"]


def test_binarize_numeric_threshold(tmp_path):
    tree = cs.parse_newick("(a,b);")
    counts = [[10, 5], [8, 6], [3, 12], [2, 14], [9, 4], [1, 15]]
    paths = write_fixture(tmp_path, tree, counts, [0, 1, 2, 3, 4, 5])
    out = tmp_path / "dm.json"
    code = run(["dm", "--counts", paths["counts"], "--metadata",
                paths["metadata"], "--group-column", "group",
                "--binarize", "<3", "--out", out])
    assert code == 0
    groups = json.loads(out.read_text())["groups"]
    assert groups == {"<3": 3, "not(<3)": 3}


def test_group_validation_errors(tmp_path):
    tree = cs.parse_newick("(a,b);")
    paths = write_fixture(tmp_path, tree, [[3, 4], [5, 6]], ["g1", "g1"])
    code = run(["dm", "--counts", paths["counts"], "--metadata",
                paths["metadata"], "--group-column", "group"])
    assert code == 1


def test_tsv_mode_prints_six_significant_digits(fig_fixture, capsys):
    code = run(["dm", "--counts", fig_fixture["counts"], "--metadata",
                fig_fixture["metadata"], "--group-column", "group",
                "--format", "tsv"])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "section\tmetric\tkey\tvalue"
    pline = next(l for l in lines if l.startswith("p_value"))
    value = pline.split("\t")[3]
    assert len(value.replace(".", "").replace("-", "").lstrip("0")) <= 7


def test_scan_documents_uncovered_signal_node(tmp_path):
    # signal confined inside the {4,5} clade (counts shifted from leaf 5 to
    # leaf 4, preserving the clade total): the per-node output flags that
    # node, but it belongs to no window, so no triplet reaches the
    # threshold -- documented behavior of the scan on such trees
    tree = cs.parse_newick(FIG_TREE_NEWICK)
    rng = replicate_rng(1003, 0)
    counts = rng.multinomial(600, [0.1, 0.15, 0.2, 0.25, 0.3], size=40)
    moved = counts[20:, 4] // 2
    counts[20:, 3] += moved
    counts[20:, 4] -= moved
    paths = write_fixture(tmp_path, tree, counts, ["a"] * 20 + ["b"] * 20)
    out = tmp_path / "scan.json"
    code = run(["scan", "--counts", paths["counts"], "--tree", paths["tree"],
                "--metadata", paths["metadata"], "--group-column", "group",
                "--out", out, "--exit-signal"])
    data = json.loads(out.read_text())
    by_leaves = {frozenset(r["leaves"]): r for r in data["node_results"]}
    assert by_leaves[frozenset("45")]["p_value"] < 1e-6
    assert data["significant_triplets"] == []
    assert code == 0  # the scan itself is not significant
    assert data["sidak_pvalue"] < 0.05  # per-node testing does flag it


def test_simulate_power_smoke(tmp_path):
    tree = cs.random_binary_tree(8, 31)
    rng = replicate_rng(1004, 0)
    params = cs.random_dtm_params(tree, rng)
    counts = cs.sample_dtm_counts(tree, params, np.full(20, 500), rng)
    paths = write_fixture(tmp_path, tree, counts, ["x"] * 20)
    out = tmp_path / "power.json"
    code = run(["simulate", "power", "--counts", paths["counts"], "--tree",
                paths["tree"], "--strategy", "2", "--fraction", "0.8",
                "--min-leaves", "2", "--replicates", "40", "--seed", "5",
                "--out", out])
    assert code == 0
    data = json.loads(out.read_text())
    assert set(data["power_at_fpr_0.05"]) == {"dm", "dtm-node", "dtm-scan"}


def test_simulate_calibration_smoke(tmp_path):
    tree = cs.random_binary_tree(8, 32)
    rng = replicate_rng(1005, 0)
    params = cs.random_dtm_params(tree, rng)
    counts = cs.sample_dtm_counts(tree, params, np.full(24, 400), rng)
    paths = write_fixture(tmp_path, tree, counts, ["x"] * 24)
    out = tmp_path / "cal.json"
    code = run(["simulate", "calibration", "--counts", paths["counts"],
                "--tree", paths["tree"], "--replicates", "30", "--seed", "6",
                "--out", out])
    assert code == 0
    data = json.loads(out.read_text())
    assert 0.0 <= data["ks_dtm_pooled"] <= 1.0
    assert len(data["dm_pvalues"]) == 30


def test_scan_with_literally_identical_groups(tmp_path):
    # duplicated rows per group: every node statistic is exactly zero, the
    # scan maximum is zero, and the bound degenerates to certainty
    tree = cs.parse_newick(FIG_TREE_NEWICK)
    block = [[5, 3, 2, 8, 1], [4, 4, 2, 7, 2], [6, 2, 3, 6, 3]]
    counts = np.tile(block, (2, 1))
    paths = write_fixture(tmp_path, tree, counts, ["a"] * 3 + ["b"] * 3)
    out = tmp_path / "scan.json"
    code = run(["scan", "--counts", paths["counts"], "--tree", paths["tree"],
                "--metadata", paths["metadata"], "--group-column", "group",
                "--out", out, "--exit-signal"])
    assert code == 0
    data = json.loads(out.read_text())
    assert data["observed_w"] == 0.0
    assert data["bound"]["p_upper"] == 1.0
    assert data["significant_triplets"] == []
