import numpy as np
import pytest

from slowfast_ap.coefficients import build_coefficients
from slowfast_ap.constants import Branch, NoiseChannel
from slowfast_ap.exceptions import GridMismatch, InvalidParameter
from slowfast_ap.noise import (
    IncrementSampler,
    NoiseSpec,
    sample_increments,
    standard_normals,
    stochastic_convolution,
    two_sided_stream,
)
from slowfast_ap.signals import APSignal
from slowfast_ap.spectral import TimeDependentOperator

from conftest import quiet_coefficients

SEED = 11


class TestStandardNormals:
    def test_split_invariance(self):
        whole = standard_normals(SEED, NoiseChannel.FAST, 3, -10, 30, 4)
        pieces = np.concatenate([
            standard_normals(SEED, NoiseChannel.FAST, 3, -10, 4, 4),
            standard_normals(SEED, NoiseChannel.FAST, 3, -6, 11, 4),
            standard_normals(SEED, NoiseChannel.FAST, 3, 5, 15, 4),
        ])
        np.testing.assert_array_equal(whole, pieces)

    def test_channels_and_streams_differ(self):
        a = standard_normals(SEED, NoiseChannel.FAST, 0, 0, 8, 4)
        b = standard_normals(SEED, NoiseChannel.SLOW, 0, 0, 8, 4)
        c = standard_normals(SEED, NoiseChannel.FAST, 1, 0, 8, 4)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_branches_differ(self):
        plus = standard_normals(SEED, NoiseChannel.FAST, 0, 0, 1, 4)
        minus = standard_normals(SEED, NoiseChannel.FAST, 0, -1, 1, 4)
        assert not np.array_equal(plus, minus)

    def test_moments(self):
        z = standard_normals(SEED, NoiseChannel.FAST, 0, 0, 20000, 2)
        assert abs(z.mean()) < 0.03
        assert z.var() == pytest.approx(1.0, abs=0.05)

    def test_stream_out_of_range(self):
        with pytest.raises(InvalidParameter):
            standard_normals(SEED, NoiseChannel.FAST, -1, 0, 1, 4)


class TestIncrementSampler:
    def test_batch_order_does_not_matter(self, model):
        lam = model.noise_eigenvalues
        a = IncrementSampler(lam, SEED, NoiseChannel.FAST, [3, 5], 0.01, chunk=7)
        b = IncrementSampler(lam, SEED, NoiseChannel.FAST, [5, 3], 0.01, chunk=64)
        for step in range(-12, 12):
            inc_a, inc_b = a.increments(step), b.increments(step)
            np.testing.assert_array_equal(inc_a[0], inc_b[1])
            np.testing.assert_array_equal(inc_a[1], inc_b[0])

    def test_repeated_stream_shares_noise(self, model):
        sampler = IncrementSampler(model.noise_eigenvalues, SEED, NoiseChannel.SLOW, [2, 2, 4], 0.05)
        inc = sampler.increments(3)
        np.testing.assert_array_equal(inc[0], inc[1])
        assert not np.array_equal(inc[0], inc[2])

    def test_refinement_sums_fine_steps(self, model):
        lam = model.noise_eigenvalues
        coarse = IncrementSampler(lam, SEED, NoiseChannel.FAST, [0], 0.02, refinement=2)
        fine = IncrementSampler(lam, SEED, NoiseChannel.FAST, [0], 0.01)
        for step in range(5):
            np.testing.assert_allclose(
                coarse.increments(step), fine.increments(2 * step) + fine.increments(2 * step + 1), rtol=1e-12
            )

    def test_variance_scales_with_dt(self, model):
        lam = model.noise_eigenvalues
        dt = 0.04
        sampler = IncrementSampler(lam, SEED, NoiseChannel.FAST, range(400), dt)
        samples = np.concatenate([sampler.increments(step) for step in range(20)])
        np.testing.assert_allclose(samples.var(axis=0), lam**2 * dt, rtol=0.1)

    def test_time_offset(self, model):
        sampler = IncrementSampler(model.noise_eigenvalues, SEED, NoiseChannel.FAST, [0], 0.1, time_offset=-1.0)
        assert sampler.step_index(-1.0) == 0
        assert sampler.step_index(-0.5) == 5

    def test_bad_dt(self, model):
        with pytest.raises(InvalidParameter):
            IncrementSampler(model.noise_eigenvalues, SEED, NoiseChannel.FAST, [0], 0.0)


class TestNoiseSpec:
    def test_sample_increments_branch(self, model):
        spec = NoiseSpec(model, SEED, stream=2)
        block = sample_increments(spec, -3, 0.01)
        assert block.branch == Branch.MINUS
        expected = model.noise_eigenvalues * 0.1 * standard_normals(SEED, NoiseChannel.FAST, 2, -3, 1, model.modes)[0]
        np.testing.assert_allclose(block.increments, expected, rtol=1e-12)

    def test_two_sided_stream(self, model):
        spec = NoiseSpec(model, SEED)
        assert two_sided_stream(spec, 0.5, 0.1) == (0, Branch.PLUS, 5)
        assert two_sided_stream(spec, -0.05, 0.1) == (0, Branch.MINUS, 0)


class TestStochasticConvolution:
    def _op(self, model):
        return TimeDependentOperator(model, APSignal.constant(1.0))

    def test_state_free_g2(self, model):
        coeffs = build_coefficients(quiet_coefficients(g2=0.3))
        spec = NoiseSpec(model, SEED)
        times = np.linspace(0.0, 0.5, 11)
        out = stochastic_convolution(self._op(model), coeffs, times, None, 0.0, 0.5, spec)
        assert out.coeffs.shape == (model.modes,)
        assert np.all(np.isfinite(out.coeffs))

    def test_zero_g2_vanishes(self, model):
        coeffs = build_coefficients(quiet_coefficients(g2=0.0))
        spec = NoiseSpec(model, SEED)
        out = stochastic_convolution(self._op(model), coeffs, np.linspace(0.0, 0.5, 11), None, 0.0, 0.5, spec, streams=[0, 1])
        np.testing.assert_array_equal(out.coeffs, 0.0)

    def test_needs_two_times(self, model):
        coeffs = build_coefficients(quiet_coefficients())
        with pytest.raises(GridMismatch):
            stochastic_convolution(self._op(model), coeffs, np.array([0.0]), None, 0.0, 1.0, NoiseSpec(model, SEED))

    def test_non_uniform_grid(self, model):
        coeffs = build_coefficients(quiet_coefficients())
        with pytest.raises(GridMismatch):
            stochastic_convolution(
                self._op(model), coeffs, np.array([0.0, 0.1, 0.3]), None, 0.0, 1.0, NoiseSpec(model, SEED)
            )

    def test_ito_isometry_for_constant_noise(self, model):
        g0 = 0.5
        coeffs = build_coefficients(quiet_coefficients(g2=g0))
        spec = NoiseSpec(model, SEED)
        eps, t = 1.0, 0.5
        times = np.linspace(0.0, t, 51)
        out = stochastic_convolution(self._op(model), coeffs, times, None, 0.0, eps, spec, streams=range(4000))
        dt = times[1] - times[0]
        weights = np.exp(-2.0 * np.multiply.outer(t - times[:-1], model.alphas) / eps).sum(axis=0) * dt
        expected = g0**2 * model.noise_eigenvalues**2 * weights
        np.testing.assert_allclose(out.coeffs.var(axis=0), expected, rtol=0.12)
