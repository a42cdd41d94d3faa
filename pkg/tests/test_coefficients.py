import numpy as np
import pytest

from slowfast_ap.coefficients import build_coefficients, build_term
from slowfast_ap.config import ExperimentConfig
from slowfast_ap.models import TermSpec
from slowfast_ap.signals import APSignal


@pytest.fixture
def fields():
    xi = np.linspace(0.0, np.pi, 9)
    return xi, 2.0 * np.sin(xi), np.cos(3.0 * xi)


class TestDampingSplit:
    @pytest.mark.parametrize("kind, params", [("linear", {"d": 1.5}), ("cubic", {"a": 0.5, "d": 2.0})])
    def test_damping_plus_remainder_is_whole(self, fields, kind, params):
        xi, s1, s2 = fields
        term = build_term("b2", TermSpec(kind=kind, params=params, signal=APSignal.cosine(0.5, 1.0, offset=1.0)))
        assert term.damping == params["d"]
        np.testing.assert_allclose(
            term.nonlinear(0.7, xi, s1, s2) - term.damping * s2, term(0.7, xi, s1, s2), rtol=1e-14, atol=1e-14
        )

    def test_terms_without_damping(self, fields):
        xi, s1, s2 = fields
        term = build_term("b1", TermSpec(kind="linear", params={"p": 0.5, "q": 1.0}))
        assert term.damping == 0.0
        np.testing.assert_array_equal(term.nonlinear(0.0, xi, s1, s2), term(0.0, xi, s1, s2))

    def test_truncation_keeps_damping_and_clamps_remainder(self, fields):
        xi, s1, s2 = fields
        coeffs = build_coefficients(ExperimentConfig.ginzburg_landau(modes=4).coefficients).truncated(1.0)
        assert coeffs.b2.damping == 1.0
        clipped = np.clip(s1, -1.0, 1.0)
        np.testing.assert_allclose(
            coeffs.b2.nonlinear(0.3, xi, s1, s2), coeffs.b2.nonlinear(0.3, xi, clipped, s2), rtol=1e-14
        )
        np.testing.assert_allclose(
            coeffs.b2.nonlinear(0.3, xi, s1, s2) - s2, coeffs.b2(0.3, xi, s1, s2), rtol=1e-14, atol=1e-14
        )
