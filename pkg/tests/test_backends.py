import json
import os
import subprocess
import sys

import numpy as np
import pytest

from cladescan._backend import BACKEND, get_backend
from cladescan._term_engine import _gl_g1

try:
    compiled = get_backend("compiled")
    HAVE_COMPILED = True
except ImportError:
    HAVE_COMPILED = False

needs_compiled = pytest.mark.skipif(not HAVE_COMPILED,
                                    reason="compiled kernels not built")


@needs_compiled
def test_elementwise_kernels_agree():
    py = get_backend("python")
    x = np.concatenate([np.linspace(0.0, 60.0, 4001), [-1.0, 1e-12, 300.0]])
    for name in ("f1cdf", "f1sf", "f2cdf", "f2sf", "f3cdf", "f3sf"):
        a = getattr(py, name)(x)
        b = getattr(compiled, name)(x)
        assert np.max(np.abs(a - b)) < 1e-14, name


@needs_compiled
def test_g1_kernels_agree():
    py = get_backend("python")
    rng = np.random.default_rng(1)
    v = rng.uniform(0.0, 30.0, 5000)
    t = v * rng.uniform(0.0, 1.0, 5000)
    nodes = _gl_g1(48)
    assert np.max(np.abs(py.g1(t, v, *nodes)
                         - compiled.g1(t, v, *nodes))) < 1e-14


@needs_compiled
def test_scan_max_kernels_identical():
    py = get_backend("python")
    rng = np.random.default_rng(2)
    z2 = rng.standard_normal((2000, 9)) ** 2
    trips = np.array([[0, 1, 2], [1, 2, 3], [4, 5, 8], [6, 7, 8]],
                     dtype=np.int64)
    assert np.array_equal(py.scan_max(z2, trips), compiled.scan_max(z2, trips))


@needs_compiled
def test_bound_pvalue_matches_across_backends(tmp_path):
    # run the same bound in a subprocess forced onto the python backend
    script = r"""
import json
import cladescan as cs
from cladescan._backend import BACKEND
tree = cs.parse_newick("((((a,b),c),d),(((e,f),g),h));")
trips = cs.enumerate_triplets(tree)
part = cs.build_partition(trips, tree)
rep = cs.bound_pvalue(None, trips, part, 11.0, grid_size=1024,
                      include_diagnostic=False)
print(json.dumps({"backend": BACKEND, "p_upper": rep.p_upper,
                  "eps": rep.eps_bound}))
"""
    env = dict(os.environ, CLADESCAN_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", script], env=env,
                         capture_output=True, text=True, check=True)
    remote = json.loads(out.stdout)
    assert remote["backend"] == "python"
    import cladescan as cs
    tree = cs.parse_newick("((((a,b),c),d),(((e,f),g),h));")
    trips = cs.enumerate_triplets(tree)
    part = cs.build_partition(trips, tree)
    rep = cs.bound_pvalue(None, trips, part, 11.0, grid_size=1024,
                          include_diagnostic=False)
    assert rep.p_upper == pytest.approx(remote["p_upper"], rel=1e-11)
    assert rep.eps_bound == pytest.approx(remote["eps"], rel=1e-9, abs=1e-14)


def test_forced_backend_selection():
    assert BACKEND in ("compiled", "python")
    py = get_backend("python")
    assert py.BACKEND == "python"
    with pytest.raises(ValueError):
        get_backend("fortran")


def test_benchmark_module_runs_quickly():
    root = os.path.join(os.path.dirname(__file__), "..", "benchmarks")
    env = dict(os.environ)
    out = subprocess.run(
        [sys.executable, os.path.join(root, "bench_backends.py"), "--quick"],
        capture_output=True, text=True, env=env)
    assert out.returncode == 0, out.stderr
    assert "backend" in out.stdout
