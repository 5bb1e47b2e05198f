"""Pointwise calculus of a map ``f: M -> N``.

Jets are stored in the unified complexified frame of the source model
(holomorphic ``0..m-1``, conjugates ``m..2m-1``, Reeb ``2m``):

* ``first[a, A]        = f^a_A``
* ``second[a, A, B]    = f^a_{A|B}``      (differentiate along ``A`` first)
* ``third[a, A, B, C]  = f^a_{A|B|C}``

Covariant derivatives use the Tanaka-Webster connection on the frame indices
and the pulled-back target Christoffel symbols on the target index:

    D_C S^a_{..A..} = E_C(S^a_{..A..}) - sum_A conn[C, A, D] S^a_{..D..}
                      + Gamma^a_{bc}(f) S^b_{....} f^c_C .

Everything is traced by JAX; batched evaluation is ``jit(vmap(...))`` per
chart, cached per ``(model, target, map, chart, backend)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from .derivatives import AD, Differentiator, along
from .kahler import DomainError, KahlerTarget
from .maps import SmoothMapRep
from .phmodel import Point, PseudoHermitianModel, curvature_fn, structure_fn

DEFAULT_TOL = 1e-6
CHUNK = 256


class UnsupportedError(ValueError):
    """Requested quantity is not defined for this configuration."""


def bar_permutation(m: int) -> np.ndarray:
    """Frame index map ``A -> Abar`` (holomorphic <-> antiholomorphic, Reeb fixed)."""
    return np.concatenate([np.arange(m, 2 * m), np.arange(m), [2 * m]])


def conjugate_jet(jet: jnp.ndarray, m: int) -> jnp.ndarray:
    """Jet of ``fbar`` from the jet of ``f``: conjugate entries, swap bars on frame axes."""
    perm = bar_permutation(m)
    out = jnp.conj(jet)
    for axis in range(1, jet.ndim):
        out = jnp.take(out, perm, axis=axis)
    return out


# ---------------------------------------------------------------------------
# Traced engine
# ---------------------------------------------------------------------------


class JetEngine:
    """Traced pointwise jets of ``fmap`` on one chart of ``model``."""

    def __init__(
        self,
        model: PseudoHermitianModel,
        target: KahlerTarget,
        fmap: SmoothMapRep,
        chart: int = 0,
        diff: Differentiator = AD,
        coefficients=None,
    ):
        if fmap.n != target.n:
            raise ValueError(f"map has {fmap.n} components but the target has dimension {target.n}")
        self.model, self.target, self.fmap, self.chart, self.diff = model, target, fmap, chart, diff
        self.m = model.m
        self.structure = structure_fn(model, chart, diff)
        self.frame = lambda x: model.frame(x, chart, diff)  # noqa: E731
        self.conn = lambda x: self.structure(x).conn  # noqa: E731
        self.value = fmap.bind(model, coefficients)
        self._dvalue = diff.jacobian(self.value)
        self.second = self.covariant(self.first, rank=1)
        self.third = self.covariant(self.second, rank=2)

    def first(self, x):
        # frame only: keeps the connection out of nested derivatives
        return along(self._dvalue(x), self.frame(x))

    def covariant(self, S_fn: Callable, rank: int, mapped: bool = True) -> Callable:
        """Covariant derivative of a tensor field with ``rank`` frame indices.

        ``mapped`` tensors carry a leading target index (sections of ``f^* TN``).
        """
        dS = self.diff.jacobian(S_fn)
        offset = 1 if mapped else 0

        def D(x):
            W = self.conn(x)
            S = S_fn(x)
            out = along(dS(x), self.frame(x))
            for s in range(rank):
                ax = offset + s
                # sum_b conn[d, a, b] S[.., b, ..] placed as [.., a, .., d]
                term = jnp.tensordot(S, W, axes=([ax], [2]))
                out = out - jnp.moveaxis(term, -1, ax)
            if mapped:
                gam = self.target.christoffel(self.value(x))
                out = out + jnp.einsum("abc,b...,cd->a...d", gam, S, self.first(x))
            return out

        return D


# ---------------------------------------------------------------------------
# Algebra on jets (traced, shared by pointwise and batched paths)
# ---------------------------------------------------------------------------


def raise_levi(levi_inv):
    """``hup[i, j] = h^{i jbar}``; with ``levi @ levi_inv = 1`` this is ``levi_inv[j, i]``."""
    return levi_inv.T


def tension_from(J2, hup, m):
    """``tau^a = h^{j ibar} f^a_{ibar|j}``."""
    return jnp.einsum("aij,ji->a", J2[:, m : 2 * m, :m], hup)


def tension_bar_from(J2, hup, m):
    """``taubar^a = h^{l ibar} f^a_{l|ibar}``."""
    return jnp.einsum("ali,li->a", J2[:, :m, m : 2 * m], hup)


def b_tensor_from(J2, h, hup, m):
    """``B[a, i, j] = f^a_{i|jbar} - (1/m) (f^a_{k|lbar} h^{k lbar}) h_{i jbar}``."""
    mixed = J2[:, :m, m : 2 * m]
    trace = jnp.einsum("akl,kl->a", mixed, hup)
    return mixed - trace[:, None, None] * h[None] / m


def p_operator_from(J3, J1, torsion, hup, m):
    """``P[a, i] = f^a_{jbar|l|i} h^{l jbar} + m i A_i^{jbar} f^a_jbar``."""
    third = jnp.einsum("ajli,lj->ai", J3[:, m : 2 * m, :m, :m], hup)
    return third + 1j * m * jnp.einsum("ij,aj->ai", torsion, J1[:, m : 2 * m])


def energy_density_from(J1, g, hup, m):
    """``e = g_{a bbar} f^a_ibar conj(f^b_jbar) h^{j ibar}`` (real, >= 0)."""
    Y = J1[:, m : 2 * m]
    return jnp.real(jnp.einsum("ab,ai,bj,ji->", g, Y, jnp.conj(Y), hup))


def p_pairing_from(P, J1, g, hup, m):
    """``<Pf, dbar_b fbar> = g_{a bbar} P_i f^a conj(f^b_j) h^{i jbar}``."""
    X = J1[:, :m]
    return jnp.einsum("ab,ai,bj,ij->", g, P, jnp.conj(X), hup)


def b_norm_from(B, g, hup):
    """``|B|^2 = g_{a bbar} B^a_{i jbar} conj(B^b_{k lbar}) h^{i kbar} h^{l jbar}``."""
    return jnp.real(jnp.einsum("ab,aij,bkl,ik,lj->", g, B, jnp.conj(B), hup, hup))


def curvature_term_from(Rlow, J1, hup, m):
    """``R_{r dbar c bbar} f^bbar_lbar f^r_jbar (f^c_i f^dbar_k - f^c_k f^dbar_i) h^{i lbar} h^{k jbar}``."""
    X, Y = J1[:, :m], J1[:, m : 2 * m]
    U = jnp.einsum("ci,dk->cdik", X, jnp.conj(Y))
    U = U - jnp.transpose(U, (0, 1, 3, 2))
    return jnp.einsum("rdcb,bl,rj,cdik,il,kj->", Rlow, jnp.conj(X), Y, U, hup, hup)


def tau_pairing_from(tau, taubar, g):
    """``<tau, conj(taubar)> = g_{a bbar} tau^a conj(taubar^b)``."""
    return jnp.einsum("ab,a,b->", g, tau, jnp.conj(taubar))


def torsion_pairing_from(J1, torsion, g, hup, m):
    """``g_{a bbar} A^{kbar lbar} f^a_kbar conj(f^b_l)`` with ``A^{kbar lbar} = A_i^{kbar} h^{i lbar}``."""
    X, Y = J1[:, :m], J1[:, m : 2 * m]
    Aup = jnp.einsum("ik,il->kl", torsion, hup)
    return jnp.einsum("ab,ak,bl,kl->", g, Y, jnp.conj(X), Aup)


def reeb_from_second(J2, hup, m):
    """``f^a_0 = (i/m) (f^a_{ibar|j} - f^a_{j|ibar}) h^{j ibar}``."""
    diff = J2[:, m : 2 * m, :m] - jnp.transpose(J2[:, :m, m : 2 * m], (0, 2, 1))
    return 1j / m * jnp.einsum("aij,ji->a", diff, hup)


# ---------------------------------------------------------------------------
# Field bundles
# ---------------------------------------------------------------------------


def pointwise_fields(engine: JetEngine, order: int = 3) -> Callable:
    """``x -> dict`` of jets and derived scalar/tensor fields up to ``order``."""
    m, target = engine.m, engine.target

    def fields(x):
        st = engine.structure(x)
        w = engine.value(x)
        g = target.metric(w)
        hup = raise_levi(st.levi_inv)
        J1 = engine.first(x)
        out = {
            "value": w,
            "first": J1,
            "levi": st.levi,
            "torsion": st.torsion,
            "e": energy_density_from(J1, g, hup, m),
        }
        if order >= 2:
            J2 = engine.second(x)
            tau = tension_from(J2, hup, m)
            taubar = tension_bar_from(J2, hup, m)
            B = b_tensor_from(J2, st.levi, hup, m)
            out.update(
                second=J2,
                tau=tau,
                taubar=taubar,
                B=B,
                b_norm=b_norm_from(B, g, hup),
                tau_pairing=tau_pairing_from(tau, taubar, g),
                torsion_pairing=torsion_pairing_from(J1, st.torsion, g, hup, m),
                curvature_term=curvature_term_from(target.curvature(w), J1, hup, m),
            )
        if order >= 3:
            J3 = engine.third(x)
            P = p_operator_from(J3, J1, st.torsion, hup, m)
            out.update(third=J3, P=P, p_pairing=p_pairing_from(P, J1, g, hup, m))
        return out

    return fields


def divergence_fields(engine: JetEngine) -> Callable:
    """``x -> (div E, div F)`` by covariant differentiation of the assembled
    horizontal (0,1)-forms

        E_jbar = g_{a bbar} conj(f^b_l) B^a_{i jbar} h^{i lbar},
        F_lbar = g_{a bbar} tau^a conj(f^b_l),

    and ``div V = h^{k jbar} V_{jbar|k}``.
    """
    m, K, target = engine.m, engine.model.frame_size, engine.target

    def embed(v):
        return jnp.zeros(K, dtype=complex).at[m : 2 * m].set(v)

    def e_form(x):
        st = engine.structure(x)
        g = target.metric(engine.value(x))
        hup = raise_levi(st.levi_inv)
        J1 = engine.first(x)
        B = b_tensor_from(engine.second(x), st.levi, hup, m)
        return embed(jnp.einsum("ab,bl,aij,il->j", g, jnp.conj(J1[:, :m]), B, hup))

    def f_form(x):
        st = engine.structure(x)
        g = target.metric(engine.value(x))
        hup = raise_levi(st.levi_inv)
        J1 = engine.first(x)
        tau = tension_from(engine.second(x), hup, m)
        return embed(jnp.einsum("ab,a,bl->l", g, tau, jnp.conj(J1[:, :m])))

    dE = engine.covariant(e_form, rank=1, mapped=False)
    dF = engine.covariant(f_form, rank=1, mapped=False)

    def div(x):
        hup = raise_levi(engine.structure(x).levi_inv)
        # V_{jbar|k} sits at [m + j, k]
        return (
            jnp.einsum("jk,kj->", dE(x)[m : 2 * m, :m], hup),
            jnp.einsum("jk,kj->", dF(x)[m : 2 * m, :m], hup),
        )

    return div


INTEGRANDS = ("e", "b_norm", "p_pairing", "curvature_term", "tau_pairing", "torsion_pairing")


def _kernel(model, target, fmap, diff, kind) -> Callable:
    """``(x, chart, coefficients) -> fields``; chart and coefficients are runtime data."""

    def fn(x, chart, coefficients):
        if kind == "webster":
            return curvature_fn(model, chart, diff)(x)
        engine = JetEngine(model, target, fmap, chart, diff, coefficients)
        if kind == "commutators":
            out = pointwise_fields(engine, 3)(x)
            out["webster"] = curvature_fn(model, chart, diff)(x)
            return out
        if kind == "integrands":
            out = pointwise_fields(engine, 3)(x)
            return {k: out[k] for k in INTEGRANDS}
        if kind.startswith("fields"):
            return pointwise_fields(engine, int(kind[-1]))(x)
        if kind == "divergence":
            return divergence_fields(engine)(x)
        raise KeyError(f"unknown field kind {kind!r}")

    return fn


def template(signature) -> SmoothMapRep:
    n, exps = signature
    return SmoothMapRep("template", n, exps, np.zeros((len(exps), n), dtype=complex))


@lru_cache(maxsize=256)
def _compiled(model, target, signature, diff, kind):
    fn = _kernel(model, target, template(signature), diff, kind)
    return jax.jit(jax.vmap(fn, in_axes=(0, 0, None)))


@lru_cache(maxsize=256)
def _values(model, signature):
    fmap = template(signature)
    return jax.jit(jax.vmap(lambda x, c: fmap.bind(model, c)(x), in_axes=(0, None)))


def map_values(model: PseudoHermitianModel, fmap: SmoothMapRep, xs: np.ndarray) -> np.ndarray:
    return np.asarray(_values(model, fmap.signature)(jnp.asarray(xs), jnp.asarray(fmap.coefficients)))


def check_target_domain(model, target, fmap, xs: np.ndarray) -> np.ndarray:
    """Raise ``DomainError`` naming the first node whose image leaves the target domain."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    w = map_values(model, fmap, xs)
    if np.isfinite(target.radius):
        norms = np.linalg.norm(w, axis=1)
        bad = np.flatnonzero(~(norms < target.radius - 1e-6))
        if bad.size:
            i = int(bad[0])
            raise DomainError(
                f"{target.name}: node {i} at x = {np.array2string(xs[i], precision=6)} maps to "
                f"|w| = {norms[i]:.6g}, outside the domain"
            )
    return w


def charts_for(model: PseudoHermitianModel, xs: np.ndarray) -> np.ndarray:
    return np.array([model.choose_chart(x) for x in xs], dtype=int)


def evaluate(
    model: PseudoHermitianModel,
    target: KahlerTarget,
    fmap: SmoothMapRep,
    xs,
    kind: str = "fields3",
    diff: Differentiator = AD,
    charts: Optional[np.ndarray] = None,
    chunk: int = CHUNK,
):
    """Batched evaluation over ambient points ``xs`` (``(P, N)``).

    ``kind`` is ``"fields1"``, ``"fields2"``, ``"fields3"``, ``"integrands"``
    (scalar fields only), ``"divergence"`` or ``"webster"``.  Points are processed in fixed-size padded chunks with the
    chart passed as data, so each kind compiles once.  Returns numpy pytrees.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if kind != "webster":
        check_target_domain(model, target, fmap, xs)
    if charts is None:
        charts = charts_for(model, xs)
    fn = _compiled(model, target, fmap.signature, diff, kind)
    coefs = jnp.asarray(fmap.coefficients)
    total = xs.shape[0]
    size = 8 if total <= 8 else chunk
    parts = []
    for start in range(0, total, size):
        batch, cs = xs[start : start + size], charts[start : start + size]
        k = batch.shape[0]
        if k < size:
            batch = np.concatenate([batch, np.repeat(batch[-1:], size - k, axis=0)])
            cs = np.concatenate([cs, np.repeat(cs[-1:], size - k)])
        out = fn(jnp.asarray(batch), jnp.asarray(cs, dtype=jnp.int32), coefs)
        parts.append(jax.tree_util.tree_map(lambda a, k=k: np.asarray(a)[:k], out))
    return jax.tree_util.tree_map(lambda *a: np.concatenate(a), *parts)


# ---------------------------------------------------------------------------
# Public single-point operations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MapJet:
    """Jets of a map at one point (see module docstring for layouts)."""

    point: Point
    m: int
    value: np.ndarray
    first: np.ndarray
    second: Optional[np.ndarray] = None
    third: Optional[np.ndarray] = None

    @property
    def hol(self):
        return self.first[:, : self.m]

    @property
    def antihol(self):
        return self.first[:, self.m : 2 * self.m]

    @property
    def reeb(self):
        return self.first[:, 2 * self.m]

    def conjugate(self) -> "MapJet":
        """Jet of ``fbar``: entrywise conjugate with bars swapped."""
        conj = lambda a: None if a is None else np.asarray(conjugate_jet(jnp.asarray(a), self.m))  # noqa: E731
        return MapJet(self.point, self.m, np.conj(self.value), conj(self.first), conj(self.second), conj(self.third))


@dataclass(frozen=True)
class TensorValue:
    """A tensor at a point with named index layout (e.g. ``"a,i,jbar"``)."""

    point: Point
    indices: str
    values: np.ndarray


def _single(model, target, fmap, p: Point, kind: str, diff: Differentiator):
    model.check_chart(p)
    out = evaluate(model, target, fmap, p.coords[None, :], kind, diff, charts=np.array([p.chart_id]))
    return jax.tree_util.tree_map(lambda a: a[0], out)


def jet(model, target, fmap, p: Point, order: int = 3, diff: Differentiator = AD) -> MapJet:
    out = _single(model, target, fmap, p, f"fields{order}", diff)
    return MapJet(p, model.m, out["value"], out["first"], out.get("second"), out.get("third"))


def first_jet(model, target, fmap, p: Point, diff: Differentiator = AD):
    """``(f^a_i, f^a_ibar, f^a_0)`` as ``(n, m)``, ``(n, m)``, ``(n,)`` arrays."""
    j = jet(model, target, fmap, p, 1, diff)
    return j.hol, j.antihol, j.reeb


def second_cov(model, target, fmap, p: Point, diff: Differentiator = AD):
    """``(f^a_{ibar|j}, f^a_{i|jbar}, f^a_{i|j})``, each indexed ``[a, i, j]``."""
    J2 = jet(model, target, fmap, p, 2, diff).second
    m = model.m
    return J2[:, m : 2 * m, :m], J2[:, :m, m : 2 * m], J2[:, :m, :m]


def tension(model, target, fmap, p: Point, diff: Differentiator = AD) -> np.ndarray:
    return _single(model, target, fmap, p, "fields2", diff)["tau"]


def b_tensor(model, target, fmap, p: Point, diff: Differentiator = AD) -> TensorValue:
    """``B_{i jbar} f^a`` indexed ``[a, i, j]``."""
    return TensorValue(p, "a,i,jbar", _single(model, target, fmap, p, "fields2", diff)["B"])


def p_operator(model, target, fmap, p: Point, diff: Differentiator = AD) -> TensorValue:
    """``P_i f^a`` indexed ``[a, i]``."""
    return TensorValue(p, "a,i", _single(model, target, fmap, p, "fields3", diff)["P"])


def pairing(model, target, fmap, p: Point, diff: Differentiator = AD):
    """``(<Pf, dbar_b fbar>, |B|^2, e(f))``."""
    out = _single(model, target, fmap, p, "fields3", diff)
    return complex(out["p_pairing"]), float(out["b_norm"]), float(out["e"])


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

FLAGS = ("harmonic", "dbar_pluriharmonic", "cr_pluriharmonic", "cr", "anti_cr")


@dataclass(frozen=True)
class Classification:
    flags: dict
    residuals: dict  # flag -> (max, mean)
    consistent: bool  # dbar-pluriharmonic <=> (CR-pluriharmonic and harmonic)

    def __getitem__(self, key):
        return self.flags[key]


def residual_fields(out: dict, m: int) -> dict:
    """Per-point defect magnitudes behind each classification flag."""
    J1, J2 = out["first"], out["second"]
    P = J1.shape[0]
    res = {
        "harmonic": np.max(np.abs(out["tau"]).reshape(P, -1), axis=1),
        "dbar_pluriharmonic": np.max(np.abs(J2[:, :, m : 2 * m, :m]).reshape(P, -1), axis=1),
        "cr": np.max(np.abs(J1[:, :, m : 2 * m]).reshape(P, -1), axis=1),
        "anti_cr": np.max(np.abs(J1[:, :, :m]).reshape(P, -1), axis=1),
    }
    if m >= 2:
        res["cr_pluriharmonic"] = np.max(np.abs(out["B"]).reshape(P, -1), axis=1)
    return res


def classify(
    model: PseudoHermitianModel,
    target: KahlerTarget,
    fmap: SmoothMapRep,
    tol: float = DEFAULT_TOL,
    sample_points: Iterable = (),
    flags: Optional[Sequence[str]] = None,
    diff: Differentiator = AD,
) -> Classification:
    """Flag each harmonicity notion whose defect stays below ``tol`` on all samples.

    ``flags=None`` requests every notion defined for ``model.m``; asking for
    ``"cr_pluriharmonic"`` explicitly when ``m = 1`` raises ``UnsupportedError``.
    """
    m = model.m
    if flags is None:
        flags = [f for f in FLAGS if m >= 2 or f != "cr_pluriharmonic"]
    unknown = set(flags) - set(FLAGS)
    if unknown:
        raise KeyError(f"unknown flags {sorted(unknown)}")
    if "cr_pluriharmonic" in flags and m < 2:
        raise UnsupportedError("CR-pluriharmonicity needs CR dimension m >= 2")
    xs = np.array([p.coords if isinstance(p, Point) else p for p in sample_points], dtype=float)
    if xs.size == 0:
        raise ValueError("classify needs at least one sample point")
    charts = np.array([p.chart_id if isinstance(p, Point) else model.choose_chart(p) for p in sample_points])
    out = evaluate(model, target, fmap, xs, "fields2", diff, charts=charts)
    res = residual_fields(out, m)
    result = {k: bool(np.max(res[k]) < tol) for k in flags}
    stats = {k: (float(np.max(res[k])), float(np.mean(res[k]))) for k in flags}
    consistent = True
    if {"dbar_pluriharmonic", "cr_pluriharmonic", "harmonic"} <= set(flags):
        consistent = result["dbar_pluriharmonic"] == (result["cr_pluriharmonic"] and result["harmonic"])
    return Classification(result, stats, consistent)
