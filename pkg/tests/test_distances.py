import numpy as np
import pytest

from jointcal.distances import DistanceSpec, Logit, Quadratic, Raking

FUNCTIONS = [Quadratic(), Raking(), Logit(0.5, 2.0), Logit(0.0, 3.0)]


@pytest.mark.parametrize("fn", FUNCTIONS, ids=["quadratic", "raking", "logit", "logit0"])
def test_regularity_at_one(fn):
    h = 1e-4
    G = lambda x: float(fn.G(x))
    assert G(1.0) == 0.0
    assert (G(1 + h) - G(1 - h)) / (2 * h) == pytest.approx(0.0, abs=1e-6)
    assert (G(1 + h) - 2 * G(1.0) + G(1 - h)) / h**2 == pytest.approx(1.0, abs=1e-6)
    assert float(fn.dG(1.0)) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("fn, grid", [
    (Quadratic(), np.linspace(-2, 4, 61)),
    (Raking(), np.linspace(0.05, 5, 61)),
    (Logit(0.5, 2.0), np.linspace(0.51, 1.99, 61)),
])
def test_inverse_of_derivative(fn, grid):
    np.testing.assert_allclose(fn.F(fn.dG(grid)), grid, rtol=0, atol=1e-10)


@pytest.mark.parametrize("fn", FUNCTIONS[:3])
def test_conjugate_derivative_is_F(fn):
    u = np.linspace(-1.5, 1.5, 13)
    h = 1e-5
    np.testing.assert_allclose((fn.conj(u + h) - fn.conj(u - h)) / (2 * h), fn.F(u), atol=1e-6)
    np.testing.assert_allclose((fn.F(u + h) - fn.F(u - h)) / (2 * h), fn.dF(u), atol=1e-6)


def test_logit_range_and_explicit_formula():
    fn = Logit(0.5, 2.0)
    u = np.linspace(-50, 50, 201)
    x = fn.F(u)
    assert np.all((x >= 0.5) & (x <= 2.0))
    g = fn.gamma
    uu = np.linspace(-3, 3, 13)
    e = np.exp(g * uu)
    explicit = (0.5 * (2 - 1) + 2 * (1 - 0.5) * e) / ((2 - 1) + (1 - 0.5) * e)
    np.testing.assert_allclose(fn.F(uu), explicit, rtol=1e-13)


def test_distance_spec_validation():
    with pytest.raises(ValueError):
        DistanceSpec("logit")
    with pytest.raises(ValueError):
        DistanceSpec("logit", (1.0, 2.0))
    with pytest.raises(ValueError):
        DistanceSpec("raking", (0.5, 2.0))
    with pytest.raises(ValueError):
        DistanceSpec("hyperbolic")
    with pytest.raises(ValueError):
        DistanceSpec("quadratic", q=(1.0, 0.0))
    assert DistanceSpec().kind == "raking"
