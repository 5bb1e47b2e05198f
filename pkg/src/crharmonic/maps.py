"""Test maps ``f: M -> N`` as polynomials in the model's complex coordinates.

A map is ``f(z, t) = sum_k c_k z^{a_k} zbar^{b_k} t^{e_k}`` with vector
coefficients ``c_k`` (``t`` only exists on the Heisenberg group).  The exponent
table is static; coefficients are runtime data, so compiled kernels are shared
by every map with the same exponents and the flow can differentiate with
respect to them.  All derivatives come from automatic differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import jax.numpy as jnp
import numpy as np


def monomial(z, t, a, b, e=0):
    """``z^a zbar^b t^e`` with integer powers (cheap to differentiate)."""
    out = jnp.ones((), dtype=complex)
    zb = jnp.conj(z)
    for k, (ak, bk) in enumerate(zip(a, b)):
        if ak:
            out = out * z[k] ** int(ak)
        if bk:
            out = out * zb[k] ** int(bk)
    if e:
        out = out * (0.0 if t is None else t) ** int(e)
    return out


def _powers(z, degree: int):
    """``[z_k^0, ..., z_k^degree]`` for each entry, shape ``(len(z), degree + 1)``."""
    cols = [jnp.ones_like(z)]
    for _ in range(degree):
        cols.append(cols[-1] * z)
    return jnp.stack(cols, axis=1)


@dataclass(frozen=True, eq=False)
class SmoothMapRep:
    """Polynomial map with exponent table ``((a, b, e), ...)`` and coefficients ``(terms, n)``."""

    name: str
    n: int
    exponents: tuple
    coefficients: np.ndarray
    params: Optional[dict] = None

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=complex).reshape(len(self.exponents), self.n)
        object.__setattr__(self, "coefficients", c)

    @property
    def signature(self) -> tuple:
        """Hashable key of everything except the coefficient values."""
        return (self.n, self.exponents)

    def monomials(self, z, t=None):
        """All monomials at once: power tables gathered by the static exponent table."""
        if not self.exponents:
            return jnp.zeros((0,), dtype=complex)
        A = np.array([a for a, _, _ in self.exponents], dtype=int)
        B = np.array([b for _, b, _ in self.exponents], dtype=int)
        E = np.array([e for _, _, e in self.exponents], dtype=int)
        cols = np.arange(A.shape[1])
        out = jnp.prod(_powers(z, int(A.max()))[cols, A], axis=1)
        out = out * jnp.prod(_powers(jnp.conj(z), int(B.max()))[cols, B], axis=1)
        if E.any():
            tt = jnp.zeros((), dtype=complex) if t is None else jnp.asarray(t, dtype=complex)
            out = out * _powers(tt[None], int(E.max()))[0, E]
        return out

    def value(self, z, t=None, coefficients=None):
        c = self.coefficients if coefficients is None else coefficients
        if not self.exponents:
            return jnp.zeros(self.n, dtype=complex) + 0.0 * z[0]
        return self.monomials(z, t) @ jnp.asarray(c)

    def bind(self, model, coefficients=None):
        def f(x):
            z, t = model.complex_coords(x)
            return self.value(z, t, coefficients)

        return f

    def __call__(self, z, t=None):
        return self.value(z, t)

    def with_coefficients(self, coefficients, name: Optional[str] = None) -> "SmoothMapRep":
        return SmoothMapRep(name or self.name, self.n, self.exponents, np.asarray(coefficients), self.params)


def polynomial_map(terms: Sequence, n: int, name: str = "polynomial", params: Optional[dict] = None) -> SmoothMapRep:
    """Map from ``(coefficient (n,), a, b, e)`` terms; repeated exponents are merged."""
    table: dict = {}
    for c, a, b, e in terms:
        key = (tuple(int(v) for v in a), tuple(int(v) for v in b), int(e))
        table[key] = table.get(key, 0) + np.asarray(c, dtype=complex)
    exps = tuple(table)
    coefs = np.stack([table[k] for k in exps]) if exps else np.zeros((0, n), dtype=complex)
    return SmoothMapRep(name, n, exps, coefs, params)


def unit(nz: int, k: int) -> tuple:
    return tuple(int(i == k) for i in range(nz))


def constant_map(c, nz: int) -> SmoothMapRep:
    c = np.atleast_1d(np.asarray(c, dtype=complex))
    zero = (0,) * nz
    return polynomial_map([(c, zero, zero, 0)], c.shape[0], "constant", {"value": c.tolist()})


def cr_inclusion(dim: int, r: float = 0.5, nz: Optional[int] = None) -> SmoothMapRep:
    """``z -> r z``: a CR map into ``C^dim`` (the first ``dim`` coordinates)."""
    nz = dim if nz is None else nz
    zero = (0,) * nz
    terms = [(r * np.eye(dim)[k], unit(nz, k), zero, 0) for k in range(min(dim, nz))]
    return polynomial_map(terms, dim, "cr-inclusion", {"r": r})


def anti_cr(dim: int, r: float = 0.5, nz: Optional[int] = None) -> SmoothMapRep:
    """``z -> r zbar``: anti-CR, with ``df(T) != 0`` on spheres."""
    nz = dim if nz is None else nz
    zero = (0,) * nz
    terms = [(r * np.eye(dim)[k], zero, unit(nz, k), 0) for k in range(min(dim, nz))]
    return polynomial_map(terms, dim, "anti-cr", {"r": r})


def exponent_table(nz: int, degree: int, with_t: bool = False, min_degree: int = 0) -> list:
    """All ``(a, b, e)`` with ``min_degree <= |a| + |b| + e <= degree`` in a fixed order."""
    out = []
    for total in range(min_degree, degree + 1):
        for a in np.ndindex(*([total + 1] * nz)):
            for b in np.ndindex(*([total + 1] * nz)):
                for e in range(total + 1 if with_t else 1):
                    if sum(a) + sum(b) + e == total:
                        out.append((tuple(int(v) for v in a), tuple(int(v) for v in b), e))
    return out


def random_polynomial(
    n: int,
    nz: int,
    degree: int = 2,
    scale: float = 0.2,
    seed: int = 0,
    with_t: bool = False,
    name: str = "polynomial",
) -> SmoothMapRep:
    """Random polynomial without constant term; complex Gaussian coefficients of size ``scale``."""
    rng = np.random.default_rng(seed)
    exps = exponent_table(nz, degree, with_t, min_degree=1)
    coefs = scale * (rng.normal(size=(len(exps), n)) + 1j * rng.normal(size=(len(exps), n))) / np.sqrt(2.0)
    params = {"degree": degree, "scale": scale, "seed": seed, "with_t": with_t}
    return SmoothMapRep(name, n, tuple(exps), coefs, params)


def perturbed_cr(dim: int, r: float = 0.5, eps: float = 0.1, seed: int = 0, degree: int = 2) -> SmoothMapRep:
    """``r z + eps * p(z, zbar)`` with ``p`` a random polynomial containing ``zbar`` terms,
    normalized to unit coefficient norm."""
    base = cr_inclusion(dim, r)
    pert = random_polynomial(dim, dim, degree=degree, scale=1.0, seed=seed)
    pc = pert.coefficients / np.linalg.norm(pert.coefficients)
    terms = [(c, *k) for k, c in zip(base.exponents, base.coefficients)]
    terms += [(eps * c, a, b, e) for (a, b, e), c in zip(pert.exponents, pc)]
    return polynomial_map(terms, dim, "perturbed-cr", {"r": r, "eps": eps, "seed": seed, "degree": degree})


def pluriharmonic_polynomial(n: int, nz: int, seed: int = 0, scale: float = 0.3) -> SmoothMapRep:
    """``h1(z) + conj(h2(z))`` with holomorphic polynomials of degree <= 2: CR-pluriharmonic
    into flat space."""
    rng = np.random.default_rng(seed)
    zero = (0,) * nz
    terms = []
    for a, b, _ in exponent_table(nz, 2, min_degree=1):
        if sum(b) == 0:
            terms.append((scale * (rng.normal(size=n) + 1j * rng.normal(size=n)), a, zero, 0))
            terms.append((scale * (rng.normal(size=n) + 1j * rng.normal(size=n)), zero, a, 0))
    return polynomial_map(terms, n, "pluriharmonic", {"seed": seed, "scale": scale})


def conjugate(fmap: SmoothMapRep) -> SmoothMapRep:
    """``fbar`` as a polynomial map (swap ``z`` and ``zbar`` exponents)."""
    terms = [(np.conj(c), b, a, e) for (a, b, e), c in zip(fmap.exponents, fmap.coefficients)]
    return polynomial_map(terms, fmap.n, f"conj({fmap.name})")


def _parse_coefficient(c):
    """Coefficient vector from a config entry: numbers, complex strings or ``[re, im]`` pairs."""
    out = []
    for v in c:
        if isinstance(v, (list, tuple)):
            out.append(complex(v[0], v[1]))
        elif isinstance(v, str):
            out.append(complex(v.replace(" ", "").replace("i", "j")))
        else:
            out.append(complex(v))
    return np.asarray(out, dtype=complex)


MAP_NAMES = ("constant", "cr-inclusion", "anti-cr", "polynomial", "perturbed-cr", "pluriharmonic")


def make_map(name: str, n: int, nz: int, **params) -> SmoothMapRep:
    """Build a registered map by name.

    ``coefficients`` (a list of ``{c, a, b, e}`` entries) builds a custom polynomial.
    """
    if "coefficients" in params:
        terms = [(_parse_coefficient(t["c"]), t["a"], t["b"], t.get("e", 0)) for t in params["coefficients"]]
        for c, a, b, _ in terms:
            if c.shape != (n,) or len(a) != nz or len(b) != nz:
                raise ValueError(f"coefficient entry has wrong shape for n={n}, nz={nz}")
        return polynomial_map(terms, n, name)
    if name == "constant":
        return constant_map(_parse_coefficient(params.get("value", [0.0] * n)), nz)
    if name == "cr-inclusion":
        return cr_inclusion(n, params.get("r", 0.5), nz)
    if name == "anti-cr":
        return anti_cr(n, params.get("r", 0.5), nz)
    if name == "polynomial":
        return random_polynomial(
            n, nz, params.get("degree", 2), params.get("scale", 0.2), params.get("seed", 0), params.get("with_t", False)
        )
    if name == "perturbed-cr":
        return perturbed_cr(n, params.get("r", 0.5), params.get("eps", 0.1), params.get("seed", 0), params.get("degree", 2))
    if name == "pluriharmonic":
        return pluriharmonic_polynomial(n, nz, params.get("seed", 0), params.get("scale", 0.3))
    raise KeyError(f"unknown map {name!r}; known: {sorted(MAP_NAMES)}")
