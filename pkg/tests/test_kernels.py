import json
import os
import subprocess
import sys

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from distrec import kernels
from distrec.learner import _augment, solve_dual_cd


def problem(seed, n=40, d=6, density=0.5):
    rng = np.random.default_rng(seed)
    x = sp.random(n, d, density=density, random_state=seed, format="csr") * 3.0
    y = np.where(rng.random(n) < 0.4, 1.0, -1.0)
    return x, y


def csr_parts(x):
    xa = _augment(x)
    return xa.data, xa.indices.astype(np.int64), xa.indptr.astype(np.int64), np.asarray(xa.multiply(xa).sum(axis=1)).ravel()


@settings(max_examples=40)
@given(st.integers(0, 10_000), st.floats(0.01, 10.0))
def test_epoch_kernels_agree(seed, C):
    x, y = problem(seed)
    data, indices, indptr, qdiag = csr_parts(x)
    n, d = x.shape[0], x.shape[1] + 1
    order = np.random.default_rng(seed).permutation(n).astype(np.int64)
    states = []
    for fn in (kernels._cd_epoch_py, kernels._cd_epoch_jit):
        alpha, w = np.zeros(n), np.zeros(d)
        viol = [fn(data, indices, indptr, y, qdiag, order, alpha, w, C) for _ in range(3)]
        states.append((alpha, w, viol))
    np.testing.assert_allclose(states[0][0], states[1][0], rtol=0, atol=1e-12)
    np.testing.assert_allclose(states[0][1], states[1][1], rtol=0, atol=1e-12)
    np.testing.assert_allclose(states[0][2], states[1][2], rtol=0, atol=1e-12)


def test_violation_kernels_agree():
    x, y = problem(3)
    data, indices, indptr, _ = csr_parts(x)
    rng = np.random.default_rng(0)
    alpha = rng.choice([0.0, 0.5, 1.0], size=x.shape[0])
    w = rng.normal(size=x.shape[1] + 1)
    a = kernels._violations_py(data, indices, indptr, y, alpha, w, 1.0)
    b = kernels._violations_jit(data, indices, indptr, y, alpha, w, 1.0)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_empty_rows_are_handled():
    x = sp.csr_matrix((5, 3))
    y = np.array([1.0, -1.0, 1.0, -1.0, 1.0])
    res = solve_dual_cd(x, y, seed=0)
    assert res.converged and np.all(res.w == 0)


SCRIPT = """
import json, numpy as np, scipy.sparse as sp
from distrec import kernels
from distrec.learner import solve_dual_cd
x = sp.random(60, 8, density=0.4, random_state=5, format="csr")
y = np.where(np.random.default_rng(5).random(60) < 0.4, 1.0, -1.0)
r = solve_dual_cd(x, y, C=0.5, seed=2)
print(json.dumps({"backend": kernels.BACKEND, "w": r.w.tolist(), "bias": r.bias, "epochs": r.epochs}))
"""


def run_backend(disable):
    env = dict(os.environ)
    env.pop("DISTREC_DISABLE_JIT", None)
    if disable:
        env["DISTREC_DISABLE_JIT"] = "1"
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


@pytest.mark.skipif(not kernels.USE_NUMBA, reason="numba unavailable")
def test_env_flag_selects_backend_with_same_model():
    jit, plain = run_backend(False), run_backend(True)
    assert jit["backend"] == "numba" and plain["backend"] == "numpy"
    assert jit["epochs"] == plain["epochs"]
    np.testing.assert_allclose(jit["w"], plain["w"], rtol=0, atol=1e-10)
    assert jit["bias"] == pytest.approx(plain["bias"], abs=1e-10)
