"""Kahler target manifolds: metric, Christoffel symbols, curvature and
randomized negativity testers.

Curvature follows the convention

    R_{a bbar c dbar} = d_a d_bbar g_{c dbar} - g^{mu nubar} d_a g_{c nubar} d_bbar g_{mu dbar},

under which the Bergman metric has a *positive* Hermitian form
``R(xi, xi)``.  The negativity samplers therefore report the value with the
opposite sign, ``-R_{a bbar c dbar} xi^{a bbar} conj(xi^{d cbar})``, so that
"strongly negative" reads as "all sampled values < 0".

Index layout: ``R[a, b, c, d] = R_{a bbar c dbar}``; ``g^{a bbar} = inv(g)[b, a]``;
``christoffel[a, b, c] = Gamma^a_{bc}``; ``curvature_up[a, b, d, c] = R^a_{b dbar c}``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import jax
import jax.numpy as jnp
import numpy as np

BALL_GUARD = 1e-6
NEGATIVITY_THRESHOLD = 1e-9
MAX_REDRAWS = 100


class DomainError(ValueError):
    """Point outside the target's coordinate domain."""


@dataclass(frozen=True, eq=False)
class KahlerTarget:
    name: str
    n: int
    metric_fn: Callable  # complex (n,) -> (n, n) g_{a bbar}
    christoffel_fn: Optional[Callable] = None  # closed form if known
    radius: float = np.inf  # domain is |w| < radius - BALL_GUARD
    curvature_sign: float = 1.0  # -1 only for sign-flip fixtures
    christoffel_offset: float = 0.0  # fault injection only

    # ---- domain ------------------------------------------------------------
    def in_domain(self, w) -> bool:
        if not np.isfinite(self.radius):
            return True
        return float(np.linalg.norm(np.asarray(w))) < self.radius - BALL_GUARD

    def check_domain(self, w) -> None:
        if not self.in_domain(w):
            raise DomainError(
                f"{self.name}: |w| = {np.linalg.norm(np.asarray(w)):.6g} outside the domain "
                f"|w| < {self.radius} - {BALL_GUARD}"
            )

    # ---- traced evaluators ------------------------------------------------
    def metric(self, w):
        return self.metric_fn(w)

    def metric_derivatives(self, w):
        """``(g, dg, dbar g, d dbar g)`` with the derivative axes last."""
        n = self.n

        def real_metric(u):
            return self.metric_fn(u[:n] + 1j * u[n:])

        u = jnp.concatenate([jnp.real(w), jnp.imag(w)])
        jac = jax.jacfwd(real_metric)(u)
        hess = jax.jacfwd(jax.jacfwd(real_metric))(u)
        dx, dy = jac[..., :n], jac[..., n:]
        d = 0.5 * (dx - 1j * dy)
        db = 0.5 * (dx + 1j * dy)
        hxx = hess[..., :n, :n]
        hxy = hess[..., :n, n:]
        hyx = hess[..., n:, :n]
        hyy = hess[..., n:, n:]
        ddb = 0.25 * (hxx + 1j * hxy - 1j * hyx + hyy)
        return real_metric(u), d, db, ddb

    def christoffel(self, w):
        if self.christoffel_fn is not None:
            gam = self.christoffel_fn(w)
        else:
            gam = christoffel_from_metric(self, w)
        return gam + self.christoffel_offset

    def curvature(self, w):
        g, d, db, ddb = self.metric_derivatives(w)
        ginv = jnp.linalg.inv(g)
        # R[a,b,c,d] = ddb[c,d,a,b] - ginv[nu,mu] d[c,nu,a] db[mu,d,b]
        quad = jnp.einsum("vu,cva,udb->abcd", ginv, d, db)
        return self.curvature_sign * (jnp.transpose(ddb, (2, 3, 0, 1)) - quad)

    def curvature_up(self, w):
        """``R^a_{b dbar c}`` as ``[a, b, d, c]``."""
        R = self.curvature(w)
        ginv = jnp.linalg.inv(self.metric(w))
        return jnp.einsum("ea,bdce->abdc", ginv, R)


def christoffel_from_metric(target: KahlerTarget, w):
    """``Gamma^a_{bc} = d_b g_{c dbar} g^{dbar a}``."""
    g, d, _, _ = target.metric_derivatives(w)
    ginv = jnp.linalg.inv(g)
    return jnp.einsum("cdb,da->abc", d, ginv)


def make_flat(n: int) -> KahlerTarget:
    """``C^n`` with the Euclidean metric."""
    if n < 1:
        raise ValueError("target dimension must be >= 1")
    eye = jnp.eye(n, dtype=complex)
    zero = jnp.zeros((n, n, n), dtype=complex)
    return KahlerTarget(
        name="flat",
        n=n,
        metric_fn=lambda w: eye + 0.0 * w[0],
        christoffel_fn=lambda w: zero + 0.0 * w[0],
    )


def make_bergman_ball(n: int) -> KahlerTarget:
    """Unit ball with ``g_{a bbar} = (1-|z|^2)^{-2} (zbar_a z_b + (1-|z|^2) delta_ab)``."""
    if n < 1:
        raise ValueError("target dimension must be >= 1")
    eye = jnp.eye(n)

    def metric(w):
        s = 1.0 - jnp.real(jnp.vdot(w, w))
        return (jnp.outer(jnp.conj(w), w) + s * eye) / s**2

    def christoffel(w):
        s = 1.0 - jnp.real(jnp.vdot(w, w))
        wb = jnp.conj(w)
        # Gamma^a_{bc} = (wbar_b delta_ac + wbar_c delta_ab) / s
        return (jnp.einsum("b,ac->abc", wb, eye) + jnp.einsum("c,ab->abc", wb, eye)) / s

    return KahlerTarget(name="bergman-ball", n=n, metric_fn=metric, christoffel_fn=christoffel, radius=1.0)


def bergman_curvature_closed_form(w) -> np.ndarray:
    """``g_{a bbar} g_{c dbar} + g_{a dbar} g_{c bbar}``; reference for tests."""
    w = np.asarray(w)
    n = w.shape[0]
    s = 1.0 - np.sum(np.abs(w) ** 2)
    g = (np.outer(np.conj(w), w) + s * np.eye(n)) / s**2
    return np.einsum("ab,cd->abcd", g, g) + np.einsum("ad,cb->abcd", g, g)


def negated_curvature(target: KahlerTarget) -> KahlerTarget:
    """Fixture with the curvature sign flipped."""
    return replace(target, name=f"{target.name}-negated", curvature_sign=-target.curvature_sign)


def with_christoffel_offset(target: KahlerTarget, eps: float) -> KahlerTarget:
    """Fault-injection fixture: every Christoffel symbol shifted by ``eps``."""
    return replace(target, name=f"{target.name}-corrupted", christoffel_offset=eps)


def curvature(target: KahlerTarget, z) -> np.ndarray:
    target.check_domain(z)
    return np.asarray(target.curvature(jnp.asarray(z, dtype=complex)))


# ---------------------------------------------------------------------------
# Negativity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NegativityVerdict:
    """Outcome of a randomized negativity test.

    Sampling can refute negativity but never prove it; the ``*-sample-pass``
    kinds only say that no counterexample was drawn.
    """

    kind: str  # "strongly-negative-sample-pass" | "semi-negative-sample-pass" | "fail"
    worst_value: float
    witness: tuple
    trials: int

    @property
    def passed(self) -> bool:
        return self.kind != "fail"


def siu_form(R: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``R_{a bbar c dbar} xi^{a bbar} conj(xi^{d cbar})`` for a batch ``xi[..., a, b]``."""
    return np.einsum("abcd,...ab,...dc->...", R, xi, np.conj(xi))


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _complex_normal(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def sample_strong_negativity(
    target: KahlerTarget, z, trials: int, seed: int = 0, batch: int = 20_000
) -> NegativityVerdict:
    """Sample ``-R(xi, xi) / |xi|^2`` for ``xi = A Bbar^T - C Dbar^T``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    R = curvature(target, z)
    n = target.n
    rng = np.random.default_rng(seed)
    worst, witness, done = -np.inf, (), 0
    while done < trials:
        k = min(batch, trials - done)
        A, B, C, D = (_unit(_complex_normal(rng, (k, n))) for _ in range(4))
        xi = np.einsum("ka,kb->kab", A, np.conj(B)) - np.einsum("ka,kb->kab", C, np.conj(D))
        norm2 = np.sum(np.abs(xi) ** 2, axis=(1, 2))
        keep = norm2 > 1e-24
        vals = -np.real(siu_form(R, xi[keep])) / norm2[keep]
        if vals.size:
            i = int(np.argmax(vals))
            if vals[i] > worst:
                idx = np.flatnonzero(keep)[i]
                worst, witness = float(vals[i]), (A[idx], B[idx], C[idx], D[idx])
        done += k
    return NegativityVerdict(_kind(worst), worst, witness, trials)


def _kind(worst: float) -> str:
    if worst > NEGATIVITY_THRESHOLD:
        return "fail"
    if worst < -NEGATIVITY_THRESHOLD:
        return "strongly-negative-sample-pass"
    return "semi-negative-sample-pass"


def rank_condition(A: np.ndarray, B: np.ndarray) -> int:
    """Numerical rank of ``[[A, B], [Bbar, Abar]]`` (threshold 1e-10 * largest singular value)."""
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    if A.shape != B.shape:
        raise ValueError("A and B must have the same shape")
    M = np.block([[A, B], [np.conj(B), np.conj(A)]])
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > 1e-10 * s[0]))


def order_k_sum(R: np.ndarray, A: np.ndarray, B: np.ndarray) -> float:
    """``sum_{i,j} R(xi_ij, xi_ij)`` with ``xi_ij^{a bbar} = A^a_i conj(B^b_j) - A^a_j conj(B^b_i)``."""
    xi = np.einsum("ai,bj->ijab", A, np.conj(B))
    xi = xi - np.transpose(xi, (1, 0, 2, 3))
    return float(np.real(np.sum(siu_form(R, xi))))


def sample_negativity_order_k(
    target: KahlerTarget, z, k: int, trials: int, seed: int = 0
) -> NegativityVerdict:
    """Contrapositive sampler for negativity of order ``k``.

    Draws unit-norm ``n x k`` pairs ``(A, B)`` satisfying the rank condition and
    requires ``-sum R(xi, xi) < 0`` strictly for each draw.  Strong
    semi-negativity is sampled first, as the definition presupposes it.
    """
    n = target.n
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n (k={k}, n={n})")
    semi = sample_strong_negativity(target, z, max(1000, trials), seed=seed)
    if not semi.passed:
        return NegativityVerdict("fail", semi.worst_value, semi.witness, trials)
    R = curvature(target, z)
    rng = np.random.default_rng(seed + 1)
    worst, witness = -np.inf, ()
    for _ in range(trials):
        for _redraw in range(MAX_REDRAWS):
            A = _complex_normal(rng, (n, k))
            B = _complex_normal(rng, (n, k))
            if rank_condition(A, B) == 2 * k:
                break
        else:
            raise ValueError(f"no rank-{2 * k} draw in {MAX_REDRAWS} attempts")
        A /= np.linalg.norm(A)
        B /= np.linalg.norm(B)
        val = -order_k_sum(R, A, B)
        if val > worst:
            worst, witness = val, (A, B)
    kind = "strongly-negative-sample-pass" if worst < -NEGATIVITY_THRESHOLD else "fail"
    return NegativityVerdict(kind, worst, witness, trials)


def curvature_rearrangement(R: np.ndarray, hol: np.ndarray, antihol: np.ndarray, levi: np.ndarray):
    """Both sides of the curvature rearrangement used for the sign argument.

    ``hol[a, i] = f^a_i``, ``antihol[a, i] = f^a_ibar``; ``levi[i, j] = h_{i jbar}``.

    lhs = R_{r dbar c bbar} f^bbar_lbar f^r_jbar (f^c_i f^dbar_k - f^c_k f^dbar_i) h^{i lbar} h^{k jbar}
    rhs = 1/2 R_{c dbar r bbar} U^{c dbar}_{ik} conj(V^{b rbar}_{lj}) h^{k jbar} h^{i lbar}
    """
    hup = np.linalg.inv(levi).T  # hup[i, l] = h^{i lbar}
    X, Y = hol, antihol
    Xc = np.conj(X)  # f^bbar_lbar = conj(f^b_l)
    Yc = np.conj(Y)  # f^dbar_k = conj(f^d_kbar)
    # U[c, d, i, k] = f^c_i f^dbar_k - f^c_k f^dbar_i
    U = np.einsum("ci,dk->cdik", X, Yc)
    U = U - np.transpose(U, (0, 1, 3, 2))
    lhs = np.einsum("rdcb,bl,rj,cdik,il,kj->", R, Xc, Y, U, hup, hup)
    # conj(V[b, r, l, j]) = conj(f^b_l) f^r_jbar - conj(f^b_j) f^r_lbar
    Vc = np.einsum("bl,rj->brlj", Xc, Y)
    Vc = Vc - np.transpose(Vc, (0, 1, 3, 2))
    rhs = 0.5 * np.einsum("cdrb,cdik,brlj,kj,il->", R, U, Vc, hup, hup)
    return complex(lhs), complex(rhs)
