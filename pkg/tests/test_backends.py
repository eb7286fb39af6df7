import os
import subprocess
import sys

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings, strategies as st

from randbasis import _fallback
from randbasis._backend import BACKEND, compiled_available, get_kernels

pytestmark = pytest.mark.skipif(not compiled_available(), reason="compiled kernels not built")


def instance(seed, K=40, N=60, d=1, wscale=30.0):
    rng = np.random.default_rng(seed)
    w = np.ascontiguousarray(rng.uniform(-wscale, wscale, (K, d)))
    b = rng.uniform(-wscale, wscale, K)
    nodes = np.ascontiguousarray(rng.uniform(0, 1, (N, d)))
    resid = rng.normal(size=N)
    return w, b, nodes, resid


class TestEquivalence:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([0, 1]), st.integers(1, 3))
    def test_tabulate(self, seed, kind, d):
        w, b, nodes, _ = instance(seed, d=d)
        npt.assert_allclose(
            get_kernels("compiled").tabulate_many(w, b, nodes, kind),
            _fallback.tabulate_many(w, b, nodes, kind),
            rtol=1e-12, atol=1e-300,
        )

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([0, 1]), st.floats(-0.5, 0.5))
    def test_scan(self, seed, kind, threshold):
        w, b, nodes, resid = instance(seed)
        args = (w, b, nodes, resid, 0.01, threshold, 1.0 / 60, kind)
        c = get_kernels("compiled").scan_candidates(*args)
        p = _fallback.scan_candidates(*args)
        assert c[0] == p[0] and c[2] == p[2]
        npt.assert_allclose([c[1], c[3]], [p[1], p[3]], rtol=1e-10)

    def test_scan_no_hit(self):
        w, b, nodes, resid = instance(1)
        c = get_kernels("compiled").scan_candidates(w, b, nodes, resid, 0.0, -1e9, 0.1, 0)
        assert c[0] == -1
        assert c[1] == np.inf

    def test_scan_empty_batch(self):
        _, _, nodes, resid = instance(2)
        w = np.zeros((0, 1))
        b = np.zeros(0)
        for k in (get_kernels("compiled"), _fallback):
            first, _, best, _ = k.scan_candidates(w, b, nodes, resid, 0.0, 0.0, 0.1, 0)
            assert first == -1 and best == -1

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 3))
    def test_mlp(self, seed, d):
        rng = np.random.default_rng(seed)
        n, m = int(rng.integers(1, 8)), int(rng.integers(1, 50))
        x = np.ascontiguousarray(rng.uniform(0, 1, (m, d)))
        y = rng.normal(size=m)
        w = np.ascontiguousarray(rng.normal(0, 20, (n, d)))
        b, c = rng.normal(0, 10, n), rng.normal(size=n)
        comp = get_kernels("compiled")
        npt.assert_allclose(comp.mlp_forward(x, w, b, c), _fallback.mlp_forward(x, w, b, c), rtol=1e-12, atol=1e-14)
        for a, r in zip(comp.mlp_loss_grad(x, y, w, b, c), _fallback.mlp_loss_grad(x, y, w, b, c)):
            npt.assert_allclose(a, r, rtol=1e-10, atol=1e-13)

    def test_extreme_arguments(self):
        w = np.array([[1e4], [-1e4]])
        b = np.zeros(2)
        nodes = np.array([[0.5], [1.0]])
        for kind in (0, 1):
            with np.errstate(over="raise", under="ignore"):
                out = get_kernels("compiled").tabulate_many(w, b, nodes, kind)
            assert np.all(np.isfinite(out))
            npt.assert_allclose(out, _fallback.tabulate_many(w, b, nodes, kind), atol=1e-300)


class TestSelection:
    def test_default_is_compiled(self):
        if os.environ.get("RANDBASIS_BACKEND", "").lower() != "python":
            assert BACKEND == "compiled"

    def test_named_lookup(self):
        assert get_kernels("python") is _fallback
        with pytest.raises(ValueError):
            get_kernels("fortran")

    def test_env_forces_fallback(self):
        env = dict(os.environ, RANDBASIS_BACKEND="python")
        out = subprocess.run(
            [sys.executable, "-c", "import randbasis; print(randbasis.BACKEND)"],
            env=env, capture_output=True, text=True, check=True,
        )
        assert out.stdout.strip() == "python"

    def test_greedy_identical_across_backends(self):
        code = (
            "import numpy as np;"
            "from randbasis.greedy import GreedyConfig, run_greedy;"
            "from randbasis.grid import make_grid, target_function;"
            "t = run_greedy(GreedyConfig(max_steps=8), target_function(make_grid(1, 300)), np.random.default_rng(3));"
            "print([s.attempts_used for s in t.steps]); print(repr(float(t.bar_e[-1])))"
        )
        outs = []
        for backend in ("compiled", "python"):
            env = dict(os.environ, RANDBASIS_BACKEND=backend)
            outs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout)
        first_a, last_a = outs[0].splitlines()
        first_b, last_b = outs[1].splitlines()
        assert first_a == first_b
        assert float(last_a) == pytest.approx(float(last_b), rel=1e-10)
