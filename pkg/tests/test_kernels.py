import os
import subprocess
import sys

import numpy as np
import pytest

from causalvd import _pykernels, kernels


def _inputs(seed, n=200, J=5, K=3):
    r = np.random.default_rng(seed)
    m = r.normal(size=(n, J, K))
    pA = np.ascontiguousarray(r.dirichlet(np.ones(J), size=(n, K)).transpose(0, 2, 1))
    pZ = r.dirichlet(np.ones(K), size=n)
    v = r.gamma(1.0, size=(n, J, K))
    w = np.full(n, 1.0 / n)
    return m, pA, pZ, v, w


compiled = kernels.compiled_reduce_components()
needs_ext = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


@needs_ext
@pytest.mark.parametrize("J,K", [(2, 2), (5, 3), (11, 4)])
def test_backends_agree(J, K):
    args = _inputs(J * 10 + K, J=J, K=K)
    s1, mu1 = compiled(*args)
    s2, mu2 = _pykernels.reduce_components(*args)
    np.testing.assert_allclose(s1, s2, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(mu1, mu2, rtol=1e-13, atol=1e-15)


@needs_ext
def test_structured_backends_agree():
    r = np.random.default_rng(5)
    n, J, K = 150, 6, 3
    args = (r.normal(size=n), r.normal(size=(J, K)), r.normal(size=(n, J - 1)), r.normal(size=(J - 1, K)),
            r.normal(size=(n, K - 1)))
    w = np.full(n, 1.0 / n)
    for logit in (True, False):
        s1, mu1 = kernels.compiled_reduce_standard()(*args, logit, 0.8, w)
        s2, mu2 = _pykernels.reduce_standard(*args, logit, 0.8, w)
        np.testing.assert_allclose(s1, s2, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(mu1, mu2, rtol=1e-13, atol=1e-15)


def test_empty_input():
    m = np.zeros((0, 2, 2))
    sums, mux = kernels.reduce_components(m, m, np.zeros((0, 2)), m, np.zeros(0))
    assert sums.shape == (8,) and mux.shape == (0,)


def test_read_only_inputs_accepted():
    args = _inputs(1, n=20)
    for a in args:
        a.setflags(write=False)
    kernels.reduce_components(*args)


def test_env_var_forces_python_backend():
    env = dict(os.environ, CAUSALVD_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import causalvd.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
