import os
import subprocess
import sys

import numpy as np
import pytest

from sgha import _kernels
from sgha._kernels import NUMBA_KERNELS, NUMPY_KERNELS

needs_numba = pytest.mark.skipif(NUMBA_KERNELS is None, reason="numba not installed")


def _inputs(rng, rows=7, cols=12):
    return rng.normal(size=(rows, cols)), rng.normal(size=cols), rng.normal(size=cols)


def _causal_scores(rng, n=6):
    s = rng.normal(size=(n, n)) * 3
    return np.where(np.tril(np.ones((n, n), dtype=bool)), s, -np.inf)


@needs_numba
class TestBackendParity:
    def test_layernorm(self, rng):
        x, g, b = _inputs(rng)
        for a, c in zip(NUMPY_KERNELS.layernorm_fwd(x, g, b), NUMBA_KERNELS.layernorm_fwd(x, g, b)):
            np.testing.assert_allclose(a, c, rtol=0, atol=1e-12)
        _, xhat, rstd = NUMPY_KERNELS.layernorm_fwd(x, g, b)
        dy = rng.normal(size=x.shape)
        np.testing.assert_allclose(NUMPY_KERNELS.layernorm_bwd(dy, xhat, rstd, g),
                                   NUMBA_KERNELS.layernorm_bwd(dy, xhat, rstd, g), rtol=0, atol=1e-12)

    def test_quick_gelu(self, rng):
        z = rng.normal(size=(5, 9)) * 4
        dy = rng.normal(size=z.shape)
        np.testing.assert_allclose(NUMPY_KERNELS.quick_gelu_fwd(z), NUMBA_KERNELS.quick_gelu_fwd(z), atol=1e-12)
        np.testing.assert_allclose(NUMPY_KERNELS.quick_gelu_bwd(dy, z), NUMBA_KERNELS.quick_gelu_bwd(dy, z),
                                   atol=1e-12)

    def test_softmax_with_masked_entries(self, rng):
        s = _causal_scores(rng)
        p_np, p_nb = NUMPY_KERNELS.softmax_fwd(s), NUMBA_KERNELS.softmax_fwd(s)
        np.testing.assert_allclose(p_np, p_nb, rtol=0, atol=1e-12)
        assert np.all(np.triu(p_np, 1) == 0.0)
        dp = rng.normal(size=s.shape)
        np.testing.assert_allclose(NUMPY_KERNELS.softmax_bwd(dp, p_np), NUMBA_KERNELS.softmax_bwd(dp, p_np),
                                   atol=1e-12)

    def test_filter_valid(self, rng):
        img = rng.uniform(size=(20, 17))
        taps = rng.uniform(size=5)
        np.testing.assert_allclose(NUMPY_KERNELS.filter_valid(img, taps), NUMBA_KERNELS.filter_valid(img, taps),
                                   rtol=0, atol=1e-12)


def _jvp_check(f, x, dx, vjp_value, h=1e-6):
    """Directional finite difference against <vjp, dx>."""
    num = (f(x + h * dx) - f(x - h * dx)) / (2 * h)
    return num, vjp_value


@pytest.mark.parametrize("kern", [NUMPY_KERNELS, NUMBA_KERNELS], ids=lambda k: getattr(k, "name", "none"))
class TestBackwardAgainstFiniteDifferences:
    def test_layernorm(self, kern, rng):
        if kern is None:
            pytest.skip("numba not installed")
        x, g, b = _inputs(rng, 4, 10)
        w = rng.normal(size=x.shape)
        dx = rng.normal(size=x.shape)
        f = lambda z: float(np.sum(w * kern.layernorm_fwd(z, g, b)[0]))
        _, xhat, rstd = kern.layernorm_fwd(x, g, b)
        num, ana = _jvp_check(f, x, dx, float(np.sum(kern.layernorm_bwd(w, xhat, rstd, g) * dx)))
        assert ana == pytest.approx(num, rel=1e-6, abs=1e-9)

    def test_quick_gelu(self, kern, rng):
        if kern is None:
            pytest.skip("numba not installed")
        z = rng.normal(size=(3, 8)) * 2
        w = rng.normal(size=z.shape)
        dz = rng.normal(size=z.shape)
        f = lambda t: float(np.sum(w * kern.quick_gelu_fwd(t)))
        num, ana = _jvp_check(f, z, dz, float(np.sum(kern.quick_gelu_bwd(w, z) * dz)))
        assert ana == pytest.approx(num, rel=1e-6, abs=1e-9)

    def test_softmax(self, kern, rng):
        if kern is None:
            pytest.skip("numba not installed")
        s = rng.normal(size=(4, 6))
        w = rng.normal(size=s.shape)
        ds = rng.normal(size=s.shape)
        f = lambda t: float(np.sum(w * kern.softmax_fwd(t)))
        num, ana = _jvp_check(f, s, ds, float(np.sum(kern.softmax_bwd(w, kern.softmax_fwd(s)) * ds)))
        assert ana == pytest.approx(num, rel=1e-6, abs=1e-9)


def test_filter_valid_matches_direct_sum(rng):
    img = rng.uniform(size=(9, 8))
    taps = np.array([0.25, 0.5, 0.25])
    out = NUMPY_KERNELS.filter_valid(img, taps)
    assert out.shape == (7, 6)
    i, j = 3, 2
    direct = sum(taps[a] * taps[b] * img[i + a, j + b] for a in range(3) for b in range(3))
    assert out[i, j] == pytest.approx(direct, abs=1e-14)


def test_layernorm_output_is_standardized(rng):
    x = rng.normal(size=(5, 16)) * 3 + 2
    y, _, _ = _kernels.K.layernorm_fwd(x, np.ones(16), np.zeros(16))
    np.testing.assert_allclose(y.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=1), 1, atol=1e-4)


@pytest.mark.parametrize("flag,expected", [("1", "numpy"), ("0", "numba" if NUMBA_KERNELS else "numpy")])
def test_environment_flag_selects_backend(flag, expected):
    env = dict(os.environ, SGHA_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "import sgha._kernels as k; print(k.backend_name())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
