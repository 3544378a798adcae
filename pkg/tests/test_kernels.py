import importlib

import numpy as np
import pytest

from zapslab import _kernels_py, kernels
from zapslab.wavelet import FAMILIES, WaveletBasis

try:
    from zapslab import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

needs_ext = pytest.mark.skipif(_kernels_c is None, reason="compiled extension not built")


def _reference_analysis(x, lo, hi):
    n = x.shape[-1]
    a = np.zeros(x.shape[:-1] + (n // 2,))
    d = np.zeros_like(a)
    for k in range(n // 2):
        for j in range(lo.size):
            a[..., k] += lo[j] * x[..., (2 * k + j) % n]
            d[..., k] += hi[j] * x[..., (2 * k + j) % n]
    return a, d


class TestBackends:
    @pytest.mark.parametrize("family", FAMILIES)
    @pytest.mark.parametrize("n", [4, 8, 18, 32])
    def test_python_matches_loops(self, family, n, rng):
        b = WaveletBasis(family)
        x = rng.standard_normal((3, n))
        a, d = _kernels_py.analysis_periodic(x, b.lo, b.hi)
        ra, rd = _reference_analysis(x, b.lo, b.hi)
        np.testing.assert_allclose(a, ra, atol=1e-13)
        np.testing.assert_allclose(d, rd, atol=1e-13)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_python_synthesis_is_adjoint(self, family, rng):
        b = WaveletBasis(family)
        x = rng.standard_normal((2, 16))
        a, d = rng.standard_normal((2, 2, 8))
        fa, fd = _kernels_py.analysis_periodic(x, b.lo, b.hi)
        lhs = np.vdot(fa, a) + np.vdot(fd, d)
        assert lhs == pytest.approx(np.vdot(x, _kernels_py.synthesis_periodic(a, d, b.lo, b.hi)), rel=1e-12)

    @needs_ext
    @pytest.mark.parametrize("family", FAMILIES)
    @pytest.mark.parametrize("n", [4, 16, 64])
    def test_compiled_matches_python(self, family, n, rng):
        b = WaveletBasis(family)
        x = rng.standard_normal((5, n))
        for got, want in zip(_kernels_c.analysis_periodic(x, b.lo, b.hi),
                             _kernels_py.analysis_periodic(x, b.lo, b.hi)):
            np.testing.assert_allclose(got, want, atol=1e-13)
        a, d = rng.standard_normal((2, 5, n // 2))
        np.testing.assert_allclose(_kernels_c.synthesis_periodic(a, d, b.lo, b.hi),
                                   _kernels_py.synthesis_periodic(a, d, b.lo, b.hi), atol=1e-13)

    @needs_ext
    def test_default_backend_is_compiled(self):
        assert kernels.BACKEND == "cython"

    def test_env_forces_fallback(self, monkeypatch):
        monkeypatch.setenv("ZAPSLAB_PURE_PYTHON", "1")
        try:
            mod = importlib.reload(kernels)
            assert mod.BACKEND == "python"
        finally:
            monkeypatch.delenv("ZAPSLAB_PURE_PYTHON")
            importlib.reload(kernels)

    def test_odd_length_rejected(self):
        b = WaveletBasis("db2")
        with pytest.raises(ValueError):
            kernels.analysis_periodic(np.zeros((1, 7)), b.lo, b.hi)
