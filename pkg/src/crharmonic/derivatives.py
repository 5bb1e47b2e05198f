"""Ambient derivative backends.

Every geometric quantity in this package is a JAX-traceable function of the
real ambient coordinates ``x``.  Frame derivatives are obtained by contracting
an ambient Jacobian with the frame vector fields, so the only primitive a
backend has to supply is ``jacobian(fn)``.

Two backends exist:

* ``AD`` -- forward-mode automatic differentiation (exact up to rounding).
* ``fd(step)`` -- central differences along coordinate axes with one level of
  Richardson extrapolation.  Used as an independent oracle and for the
  step-halving sanity checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import jax
import jax.numpy as jnp


@dataclass(frozen=True)
class Differentiator:
    """Derivative backend.

    Attributes
    ----------
    mode : {"ad", "fd"}
    step : float
        Central-difference step (ignored for ``"ad"``).
    richardson : bool
        Combine steps ``h`` and ``h/2`` as ``(4 D(h/2) - D(h)) / 3``.
    """

    mode: str = "ad"
    step: float = 1e-5
    richardson: bool = True

    def __post_init__(self):
        if self.mode not in ("ad", "fd"):
            raise ValueError(f"unknown differentiation mode {self.mode!r}")

    def jacobian(self, fn: Callable) -> Callable:
        """Return ``x -> d fn / d x`` with the derivative axis appended last."""
        if self.mode == "ad":
            return jax.jacfwd(fn)
        step, richardson = self.step, self.richardson

        def central(x, h):
            # vmap over directions keeps nested differences from multiplying the graph
            shifts = h * jnp.eye(x.shape[0], dtype=x.dtype)
            cols = (jax.vmap(fn)(x + shifts) - jax.vmap(fn)(x - shifts)) / (2.0 * h)
            return jnp.moveaxis(cols, 0, -1)

        def jac(x):
            d1 = central(x, step)
            if not richardson:
                return d1
            d2 = central(x, 0.5 * step)
            return (4.0 * d2 - d1) / 3.0

        return jac

    def halved(self) -> "Differentiator":
        return Differentiator(self.mode, 0.5 * self.step, self.richardson)


AD = Differentiator("ad")


def fd(step: float = 1e-5, richardson: bool = True) -> Differentiator:
    return Differentiator("fd", step, richardson)


def along(jac: jnp.ndarray, vectors: jnp.ndarray) -> jnp.ndarray:
    """Contract an ambient Jacobian ``(..., N)`` with vectors ``(K, N)`` -> ``(..., K)``."""
    return jnp.tensordot(jac, vectors, axes=([-1], [1]))
