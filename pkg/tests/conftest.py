import numpy as np
import pytest

import cladescan as cs
from cladescan.dm_model import CountTable

FIG_TREE_NEWICK = "((1,(2,3)),(4,5));"

# 13-OTU tree whose greedy partition has 7 blocks (the worked example
# configuration for the partition algorithm).
THIRTEEN_OTU_NEWICK = ("((((o2,o6),(o7,o8)),(o11,(o0,o1))),"
                       "(o4,(o12,((o5,o10),(o3,o9)))));")


@pytest.fixture(scope="session")
def fig_tree():
    return cs.parse_newick(FIG_TREE_NEWICK)


@pytest.fixture(scope="session")
def fig_triplets(fig_tree):
    return cs.enumerate_triplets(fig_tree)


@pytest.fixture(scope="session")
def fig_partition(fig_tree, fig_triplets):
    return cs.build_partition(fig_triplets, fig_tree)


def make_table(counts, categories=None, prefix="s") -> CountTable:
    counts = np.atleast_2d(np.asarray(counts))
    if categories is None:
        categories = [f"c{j}" for j in range(counts.shape[1])]
    ids = [f"{prefix}{i}" for i in range(counts.shape[0])]
    return CountTable(ids, list(categories), counts)


def random_binary_newick(n_leaves, rng, prefix="t"):
    items = [f"{prefix}{i}" for i in range(n_leaves)]
    while len(items) > 1:
        i, j = sorted(rng.choice(len(items), size=2, replace=False))
        b = items.pop(j)
        a = items.pop(i)
        items.append(f"({a},{b})")
    return items[0] + ";"
