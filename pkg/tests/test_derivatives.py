import jax.numpy as jnp
import numpy as np
import pytest

from crharmonic.derivatives import AD, Differentiator, along, fd
from crharmonic.maps import random_polynomial
from crharmonic.mapcalc import tension


def _fn(x):
    return jnp.stack([jnp.sin(x[0]) * x[1] ** 3, jnp.exp(x[0] - x[1])])


def _exact(x):
    return np.array(
        [
            [np.cos(x[0]) * x[1] ** 3, 3 * np.sin(x[0]) * x[1] ** 2],
            [np.exp(x[0] - x[1]), -np.exp(x[0] - x[1])],
        ]
    )


def test_ad_jacobian_is_exact():
    x = jnp.array([0.4, -1.3])
    np.testing.assert_allclose(np.asarray(AD.jacobian(_fn)(x)), _exact(np.asarray(x)), rtol=1e-14)


def test_fd_converges_at_expected_order():
    x = jnp.array([0.4, -1.3])
    exact = _exact(np.asarray(x))
    plain = [np.max(np.abs(np.asarray(fd(h, False).jacobian(_fn)(x)) - exact)) for h in (1e-2, 5e-3)]
    rich = [np.max(np.abs(np.asarray(fd(h).jacobian(_fn)(x)) - exact)) for h in (1e-1, 5e-2)]
    assert plain[0] / plain[1] == pytest.approx(4.0, rel=0.05)
    assert rich[0] / rich[1] == pytest.approx(16.0, rel=0.1)


def test_halved_and_validation():
    assert fd(1e-4).halved().step == 5e-5
    with pytest.raises(ValueError):
        Differentiator("spectral")


def test_along_contracts_last_axis():
    jac = np.arange(6.0).reshape(2, 3)
    vecs = np.eye(3)[:2]
    np.testing.assert_allclose(np.asarray(along(jnp.asarray(jac), jnp.asarray(vecs))), jac[:, :2])


def test_backends_agree_on_tension(s5, ball3, s5_points):
    f = random_polynomial(3, 3, 2, 0.1, seed=2)
    p = s5.point(s5_points[0])
    np.testing.assert_allclose(tension(s5, ball3, f, p, fd(1e-3)), tension(s5, ball3, f, p), atol=1e-8)
