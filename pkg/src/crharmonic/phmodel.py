"""Strictly pseudoconvex pseudo-Hermitian model manifolds.

A model lives in a real ambient space ``R^N`` (``N = 2m+1`` for the Heisenberg
group, ``N = 2m+2`` for spheres).  All structure is exposed as JAX-traceable
functions of the ambient point ``x``:

* ``theta(x)``       contact form as a real covector,
* ``frame(x, c)``    complexified frame ``(Z_1..Z_m, Zbar_1..Zbar_m, T)`` as a
                     ``(2m+1, N)`` complex array (chart ``c``),
* ``normals(x)``     real vectors completing the frame to an ambient basis.

Frame index convention used throughout the package: holomorphic indices
``0..m-1``, their conjugates ``m..2m-1``, Reeb direction ``2m``.

The Tanaka-Webster connection is recovered from frame brackets:
``[Zbar_j, Z_i]`` fixes ``nabla_{Zbar_j} Z_i``, ``[Z_i, T]`` fixes
``nabla_T Z_i`` and the torsion ``A_i^kbar``, and metric compatibility of the
Levi form fixes ``nabla_{Z_j} Z_i``.  The remaining bracket relations are kept
as a reconstruction residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np

from .derivatives import AD, Differentiator, along
from .maps import monomial

SPHERE_CHART_CUTOFF = 0.3
DEGENERATE_CONDITION = 1e8


class ChartError(ValueError):
    """Point is outside the requested chart; another chart must be used."""


class DegenerateFrameError(ValueError):
    """Frame (plus normals) is numerically singular at the point."""


@dataclass(frozen=True)
class Point:
    chart_id: int
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))


class Structure(NamedTuple):
    """Pointwise pseudo-Hermitian structure in the complexified frame."""

    frame: jnp.ndarray  # (K, N) complex
    levi: jnp.ndarray  # (m, m) h_{i jbar}
    levi_inv: jnp.ndarray  # (m, m) with levi @ levi_inv = 1
    conn: jnp.ndarray  # (K, K, K): nabla_{E_d} E_a = conn[d, a, b] E_b
    brackets: jnp.ndarray  # (K, K, N): [E_d, E_e] in the basis (frame, normals)
    torsion: jnp.ndarray  # (m, m): A_i^{kbar}


@dataclass(frozen=True, eq=False)
class PseudoHermitianModel:
    """A pseudo-Hermitian manifold given by closed-form ambient data.

    Instances are immutable; every evaluator is a pure function of the point.
    """

    name: str
    m: int
    ambient_dim: int
    is_closed: bool
    n_charts: int
    theta_fn: Callable
    holo_frame_fn: Callable  # (x, chart) -> (m, N) complex
    normals_fn: Callable  # x -> (N - 2m - 1, N) real
    complex_coords_fn: Callable  # x -> (z, t) with t None on spheres
    constraint_fn: Callable  # numpy x -> defining-equation residual
    chart_margin_fn: Callable  # numpy (x, chart) -> pivot modulus
    dtheta_fn: Optional[Callable] = None
    reeb_fn: Optional[Callable] = None  # (x, chart) -> (N,) real
    levi_fn: Optional[Callable] = None  # (x, chart) -> (m, m); default derives it from dtheta
    sigma: Optional["ConformalFactor"] = None
    base: Optional["PseudoHermitianModel"] = None
    params: dict = field(default_factory=dict)
    levi_scale: float = 1.0  # != 1 only for fault-injection fixtures

    @property
    def frame_size(self) -> int:
        return 2 * self.m + 1

    @property
    def has_torsion_free_structure(self) -> bool:
        return self.sigma is None

    # ---- contact structure -------------------------------------------------
    def theta(self, x):
        return self.theta_fn(x)

    def dtheta(self, x, diff: Differentiator = AD):
        """``dtheta`` as an antisymmetric ambient matrix: dtheta(X, Y) = X^T M Y."""
        if self.dtheta_fn is not None:
            return self.dtheta_fn(x)
        jac = diff.jacobian(self.theta_fn)(x)  # jac[b, a] = d_a theta_b
        return jac.T - jac

    def reeb(self, x, chart: int = 0, diff: Differentiator = AD):
        if self.reeb_fn is not None:
            return self.reeb_fn(x, chart)
        return solve_reeb(self, x, chart, diff)

    def frame(self, x, chart: int = 0, diff: Differentiator = AD):
        z = self.holo_frame_fn(x, chart)
        t = self.reeb(x, chart, diff).astype(z.dtype)
        return jnp.concatenate([z, jnp.conj(z), t[None, :]], axis=0)

    def normals(self, x):
        return self.normals_fn(x)

    def levi(self, x, chart: int = 0, diff: Differentiator = AD):
        """Levi matrix ``h_{i jbar}`` from ``dtheta(Z_i, Zbar_j) = i h_{i jbar}``."""
        h = self.levi_fn(x, chart) if self.levi_fn is not None else self.levi_from_dtheta(x, chart, diff)
        return self.levi_scale * h

    def levi_from_dtheta(self, x, chart: int = 0, diff: Differentiator = AD):
        z = self.holo_frame_fn(x, chart)
        om = self.dtheta(x, diff)
        return -1j * (z @ om @ jnp.conj(z).T)

    def complex_coords(self, x):
        return self.complex_coords_fn(x)

    # ---- charts ------------------------------------------------------------
    def chart_margin(self, x, chart: int) -> float:
        return float(self.chart_margin_fn(np.asarray(x), chart))

    def check_chart(self, p: Point) -> None:
        if not 0 <= p.chart_id < self.n_charts:
            raise ChartError(f"{self.name}: invalid chart id {p.chart_id}")
        margin = self.chart_margin(p.coords, p.chart_id)
        if margin < SPHERE_CHART_CUTOFF:
            raise ChartError(
                f"{self.name}: point is too close to the boundary of chart "
                f"{p.chart_id} (pivot modulus {margin:.3g} < {SPHERE_CHART_CUTOFF}); "
                "switch charts"
            )

    def choose_chart(self, x) -> int:
        margins = [self.chart_margin(x, c) for c in range(self.n_charts)]
        if margins[0] >= SPHERE_CHART_CUTOFF:
            return 0
        return int(np.argmax(margins))

    def point(self, x) -> Point:
        x = np.asarray(x, dtype=float)
        return Point(self.choose_chart(x), x)

    def log_volume_density(self, x):
        """log of d(theta ^ dtheta^m) / d(base theta ^ dtheta^m)."""
        if self.sigma is None:
            return jnp.zeros(())
        return 2.0 * (self.m + 1) * self.sigma.bind(self.base)(x)


# ---------------------------------------------------------------------------
# Generic constructions
# ---------------------------------------------------------------------------


def solve_reeb(model: PseudoHermitianModel, x, chart: int = 0, diff: Differentiator = AD):
    """Solve ``theta(T) = 1``, ``dtheta(T, Z_j) = 0``, ``T`` tangent."""
    z = model.holo_frame_fn(x, chart)
    om = model.dtheta(x, diff)
    oz = om @ z.T  # (N, m): column j is dtheta(., Z_j)
    rows = [model.theta(x)[None, :], jnp.real(oz).T, jnp.imag(oz).T, model.normals(x)]
    mat = jnp.concatenate(rows, axis=0)
    rhs = jnp.zeros(mat.shape[0]).at[0].set(1.0)
    return jnp.linalg.solve(mat, rhs)


def structure_fn(model: PseudoHermitianModel, chart: int = 0, diff: Differentiator = AD):
    """Return ``x -> Structure`` for the given chart and derivative backend."""
    m = model.m
    K = model.frame_size

    def frame(x):
        return model.frame(x, chart, diff)

    def levi(x):
        return model.levi(x, chart, diff)

    dframe = diff.jacobian(frame)
    dlevi = diff.jacobian(levi)

    def structure(x):
        E = frame(x)
        DE = along(dframe(x), E)  # DE[e, a, d] = E_d(E_e^a)
        br = jnp.transpose(DE, (2, 0, 1)) - jnp.transpose(DE, (0, 2, 1))
        basis = jnp.concatenate([E, model.normals(x).astype(E.dtype)], axis=0)
        N = basis.shape[0]
        coeffs = jnp.linalg.solve(basis.T, br.reshape(-1, N).T).T.reshape(K, K, N)

        h = levi(x)
        hinv = jnp.linalg.inv(h)
        Dh = along(dlevi(x), E)  # Dh[i, k, d] = E_d(h_{i kbar})

        gbar = coeffs[m : 2 * m, :m, :m]  # Gamma^l_{jbar i}
        g0 = -coeffs[:m, 2 * m, :m]  # Gamma^l_{0 i}
        tors = coeffs[:m, 2 * m, m : 2 * m]  # A_i^{kbar}
        # metric compatibility: Z_j h_{i kbar} = G^l_{ji} h_{l kbar} + conj(Gbar^l_{jbar k}) h_{i lbar}
        mix = jnp.einsum("il,jkl->jik", h, jnp.conj(gbar))
        ghol = jnp.einsum("jik,kl->jil", jnp.transpose(Dh[:, :, :m], (2, 0, 1)) - mix, hinv)

        W = jnp.zeros((K, K, K), dtype=E.dtype)
        hol = slice(0, m)
        anti = slice(m, 2 * m)
        W = W.at[anti, hol, hol].set(gbar)
        W = W.at[hol, anti, anti].set(jnp.conj(gbar))
        W = W.at[hol, hol, hol].set(ghol)
        W = W.at[anti, anti, anti].set(jnp.conj(ghol))
        W = W.at[2 * m, hol, hol].set(g0)
        W = W.at[2 * m, anti, anti].set(jnp.conj(g0))
        return Structure(E, h, hinv, W, coeffs, tors)

    return structure


def bracket_residual(model: PseudoHermitianModel, st: Structure) -> float:
    """Max mismatch between extracted bracket coefficients and those re-assembled
    from the connection, including the (vanishing) normal components."""
    m, K = model.m, model.frame_size
    W, C, h = st.conn, st.brackets, st.levi
    hol, anti, T = slice(0, m), slice(m, 2 * m), 2 * m
    pred = jnp.zeros_like(C)
    # [Zbar_j, Z_i] = i h_{i jbar} T + Gbar^l_{jbar i} Z_l - conj(Gbar^l_{ibar j}) Zbar_l
    pred = pred.at[anti, hol, hol].set(W[anti, hol, hol])
    pred = pred.at[anti, hol, anti].set(-jnp.transpose(W[hol, anti, anti], (1, 0, 2)))
    pred = pred.at[anti, hol, T].set(1j * h.T)
    # [Z_j, Z_i] = (G^l_{ji} - G^l_{ij}) Z_l
    pred = pred.at[hol, hol, hol].set(W[hol, hol, hol] - jnp.transpose(W[hol, hol, hol], (1, 0, 2)))
    # [Z_i, T] = -G^l_{0i} Z_l + A_i^{kbar} Zbar_k
    pred = pred.at[hol, T, hol].set(-W[T, hol, hol])
    pred = pred.at[hol, T, anti].set(C[hol, T, anti])
    res = max(
        float(jnp.max(jnp.abs(pred[anti, hol] - C[anti, hol]))),
        float(jnp.max(jnp.abs(pred[hol, hol] - C[hol, hol]))),
        float(jnp.max(jnp.abs(pred[hol, T] - C[hol, T]))),
    )
    del K
    return res


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConnectionData:
    """Tanaka-Webster connection at a point (numpy arrays).

    ``gamma_bar[j, i, l] = Gamma^l_{jbar i}``, ``gamma[j, i, l] = Gamma^l_{j i}``,
    ``gamma0[i, l] = Gamma^l_{0 i}``, ``torsion[i, k] = A_i^{kbar}``.
    """

    gamma_bar: np.ndarray
    gamma: np.ndarray
    gamma0: np.ndarray
    torsion: np.ndarray
    levi: np.ndarray
    full: np.ndarray
    residual: float


def connection_from_brackets(
    model: PseudoHermitianModel, p: Point, diff: Differentiator = AD
) -> ConnectionData:
    model.check_chart(p)
    x = jnp.asarray(p.coords)
    E = model.frame(x, p.chart_id, diff)
    basis = np.concatenate([np.asarray(E), np.asarray(model.normals(x))], axis=0)
    cond = np.linalg.cond(basis)
    if not np.isfinite(cond) or cond > DEGENERATE_CONDITION:
        raise DegenerateFrameError(f"{model.name}: frame condition number {cond:.3g}")
    st = structure_fn(model, p.chart_id, diff)(x)
    m = model.m
    W = np.asarray(st.conn)
    return ConnectionData(
        gamma_bar=W[m : 2 * m, :m, :m].copy(),
        gamma=W[:m, :m, :m].copy(),
        gamma0=W[2 * m, :m, :m].copy(),
        torsion=np.asarray(st.torsion),
        levi=np.asarray(st.levi),
        full=W,
        residual=bracket_residual(model, st),
    )


def curvature_fn(model: PseudoHermitianModel, chart: int = 0, diff: Differentiator = AD):
    """``x -> R[a, l, d, e]`` with ``R(E_d, E_e) E_a = R[a, l, d, e] E_l``."""
    st_fn = structure_fn(model, chart, diff)
    dconn = diff.jacobian(lambda x: st_fn(x).conn)
    K = model.frame_size

    def curv(x):
        st = st_fn(x)
        W = st.conn
        DW = along(dconn(x), st.frame)  # DW[e, a, l, d] = E_d(W[e, a, l])
        C = st.brackets[..., :K]
        dW = jnp.transpose(DW, (1, 2, 3, 0))  # [a, l, d, e] = E_d W[e, a, l]
        term1 = dW - jnp.transpose(dW, (0, 1, 3, 2))
        quad = jnp.einsum("eap,dpl->alde", W, W)
        term2 = quad - jnp.transpose(quad, (0, 1, 3, 2))
        term3 = jnp.einsum("dec,cal->alde", C, W)
        return term1 + term2 - term3

    return curv


def webster_curvature(model: PseudoHermitianModel, p: Point, diff: Differentiator = AD) -> np.ndarray:
    """Webster curvature ``R_i^l_{j kbar}`` as an ``(m, m, m, m)`` array ``[i, l, j, k]``."""
    model.check_chart(p)
    m = model.m
    R = np.asarray(curvature_fn(model, p.chart_id, diff)(jnp.asarray(p.coords)))
    return R[:m, :m, :m, m : 2 * m]


# ---------------------------------------------------------------------------
# Concrete models
# ---------------------------------------------------------------------------


def make_heisenberg(m: int) -> PseudoHermitianModel:
    """Heisenberg group ``C^m x R`` with ``theta = dt + i sum(z dzbar - zbar dz)``.

    Ambient coordinates ``x = (Re z, Im z, t)``; ``Z_j = d/dz_j + i zbar_j d/dt``.
    The Levi matrix is ``2 I`` and connection and torsion vanish.
    """
    if m < 1:
        raise ValueError("CR dimension must be >= 1")
    N = 2 * m + 1

    def theta(x):
        xr, yi = x[:m], x[m : 2 * m]
        return jnp.concatenate([-2.0 * yi, 2.0 * xr, jnp.ones(1)])

    om = np.zeros((N, N))
    for j in range(m):
        om[j, m + j] = 4.0
        om[m + j, j] = -4.0
    om = jnp.asarray(om)

    def dtheta(x):
        return om

    def holo_frame(x, chart=0):
        xr, yi = x[:m], x[m : 2 * m]
        eye = jnp.eye(m)
        tcol = (yi + 1j * xr)[:, None]
        return jnp.concatenate([0.5 * eye + 0j, -0.5j * eye, tcol], axis=1)

    tvec = jnp.zeros(N).at[N - 1].set(1.0)

    def coords(x):
        return x[:m] + 1j * x[m : 2 * m], x[2 * m]

    return PseudoHermitianModel(
        name="heisenberg",
        m=m,
        ambient_dim=N,
        is_closed=False,
        n_charts=1,
        theta_fn=theta,
        holo_frame_fn=holo_frame,
        normals_fn=lambda x: jnp.zeros((0, N)),
        complex_coords_fn=coords,
        constraint_fn=lambda x: 0.0,
        chart_margin_fn=lambda x, c: np.inf,
        dtheta_fn=dtheta,
        reeb_fn=lambda x, chart=0: tvec,
        params={"m": m},
    )


def make_sphere(m: int) -> PseudoHermitianModel:
    """Unit sphere ``S^{2m+1}`` in ``C^{m+1}`` with ``theta = (i/2)(dbar - d)|z|^2``.

    Ambient coordinates ``x = (Re z, Im z)``.  Chart ``c`` pivots on the
    coordinate ``q = m - c`` (chart 0 uses ``z_{m+1}``) and uses
    ``Z_j = d/dz_k - (zbar_k / zbar_q) d/dz_q`` over the remaining ``k``.
    The Reeb field generates the Hopf circle action.
    """
    if m < 1:
        raise ValueError("CR dimension must be >= 1")
    n1 = m + 1
    N = 2 * n1

    def theta(x):
        return jnp.concatenate([-x[n1:], x[:n1]])

    om = np.zeros((N, N))
    for k in range(n1):
        om[k, n1 + k] = 2.0
        om[n1 + k, k] = -2.0
    om = jnp.asarray(om)

    def holo_frame(x, chart=0):
        # chart may be a traced integer so one compiled kernel serves every chart
        z = x[:n1] + 1j * x[n1:]
        q = m - chart
        zq = jnp.conj(z[q])
        rows = []
        for r in range(m):
            k = r + (r >= q)
            wz = jnp.zeros(n1, dtype=complex).at[k].set(1.0).at[q].set(-jnp.conj(z[k]) / zq)
            # d/dz = (d/dx - i d/dy) / 2
            rows.append(jnp.concatenate([0.5 * wz, -0.5j * wz]))
        return jnp.stack(rows)

    def reeb(x, chart=0):
        return jnp.concatenate([-x[n1:], x[:n1]])

    def normals(x):
        return x[None, :]

    def coords(x):
        return x[:n1] + 1j * x[n1:], None

    def constraint(x):
        return float(np.sum(np.asarray(x) ** 2) - 1.0)

    def margin(x, c):
        q = m - c
        return float(np.hypot(x[q], x[n1 + q]))

    return PseudoHermitianModel(
        name="sphere",
        m=m,
        ambient_dim=N,
        is_closed=True,
        n_charts=n1,
        theta_fn=theta,
        holo_frame_fn=holo_frame,
        normals_fn=normals,
        complex_coords_fn=coords,
        constraint_fn=constraint,
        chart_margin_fn=margin,
        dtheta_fn=lambda x: om,
        reeb_fn=reeb,
        params={"m": m},
    )


# ---------------------------------------------------------------------------
# Conformal change
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConformalFactor:
    """Real function ``sigma`` on the ambient space, given as
    ``Re sum_k c_k z^{a_k} zbar^{b_k} [t^{e_k}]`` plus a constant.

    Terms are ``(coefficient, a, b, e)`` tuples; ``e`` is ignored on spheres.
    """

    terms: tuple = ()
    constant: float = 0.0
    scale: float = 1.0

    def value(self, z, t=None):
        out = jnp.asarray(self.constant, dtype=float)
        for coef, a, b, e in self.terms:
            mono = coef * monomial(z, t, a, b, e if t is not None else 0)
            out = out + jnp.real(mono)
        return self.scale * out

    def bind(self, model: PseudoHermitianModel) -> Callable:
        def sigma(x):
            z, t = model.complex_coords(x)
            return self.value(z, t)

        return sigma

    def negated(self) -> "ConformalFactor":
        return replace(self, scale=-self.scale)

    @property
    def is_zero(self) -> bool:
        return self.constant == 0.0 and not self.terms

    def frame_derivatives(self, model: PseudoHermitianModel, p: Point, diff: Differentiator = AD) -> dict:
        """``sigma``, first frame derivatives ``(sigma_i, sigma_ibar, sigma_0)``,
        ``sigma^l = h^{l kbar} sigma_kbar`` and plain second frame derivatives
        ``E_b(E_a sigma)`` in ``model``'s frame."""
        sig = self.bind(model)
        x = jnp.asarray(p.coords)
        frame = lambda y: model.frame(y, p.chart_id, diff)  # noqa: E731
        d1 = lambda y: along(diff.jacobian(sig)(y), frame(y))  # noqa: E731
        first = d1(x)
        second = along(diff.jacobian(d1)(x), frame(x))
        m = model.m
        h = model.levi(x, p.chart_id, diff)
        hinv = jnp.linalg.inv(h)
        # sigma^l = h^{l kbar} sigma_kbar; with levi @ levi_inv = 1 the inverse is hinv[k, l]
        up = jnp.einsum("kl,k->l", hinv, first[m : 2 * m])
        return {
            "sigma": float(sig(x)),
            "hol": np.asarray(first[:m]),
            "antihol": np.asarray(first[m : 2 * m]),
            "reeb": complex(first[2 * m]),
            "raised": np.asarray(up),
            "second": np.asarray(second),
        }


def with_perturbed_levi(model: PseudoHermitianModel, eps: float) -> PseudoHermitianModel:
    """Fault-injection fixture: Levi matrix scaled by ``1 + eps`` while frame and
    contact form stay put, so the bracket relations no longer close."""
    return replace(model, name=f"{model.name}-perturbed-levi", levi_scale=1.0 + eps)


def conformal_change(model: PseudoHermitianModel, sigma: ConformalFactor) -> PseudoHermitianModel:
    """Model with ``theta' = exp(2 sigma) theta`` and frame ``Z'_k = exp(-sigma) Z_k``.

    The new Reeb field is solved pointwise; the Levi matrix is unchanged.
    Conformal changes compose (``sigma`` terms are accumulated on the base).
    """
    base = model.base if model.base is not None else model
    total = sigma if model.sigma is None else _sum_factors(model.sigma, sigma)
    sig = total.bind(base)
    dsig = jax.grad(sig)

    def theta(x):
        return jnp.exp(2.0 * sig(x)) * base.theta(x)

    def dtheta(x):
        th = base.theta(x)
        ds = dsig(x)
        return jnp.exp(2.0 * sig(x)) * (base.dtheta(x) + 2.0 * (jnp.outer(ds, th) - jnp.outer(th, ds)))

    def holo_frame(x, chart=0):
        return jnp.exp(-sig(x)) * base.holo_frame_fn(x, chart)

    def reeb(x, chart=0):
        # T' = exp(-2 sigma) (T + v^i Z_i + conj(v^i) Zbar_i), v^i = -2i sigma_jbar h^{i jbar}
        z = base.holo_frame_fn(x, chart)
        h = base.levi(x, chart)
        sbar = jnp.conj(z) @ dsig(x)
        v = -2j * jnp.linalg.solve(h.T, sbar)
        return jnp.exp(-2.0 * sig(x)) * (base.reeb(x, chart) + 2.0 * jnp.real(v @ z))

    return PseudoHermitianModel(
        name=f"{base.name}-conformal",
        m=base.m,
        ambient_dim=base.ambient_dim,
        is_closed=base.is_closed,
        n_charts=base.n_charts,
        theta_fn=theta,
        holo_frame_fn=holo_frame,
        normals_fn=base.normals_fn,
        complex_coords_fn=base.complex_coords_fn,
        constraint_fn=base.constraint_fn,
        chart_margin_fn=base.chart_margin_fn,
        dtheta_fn=dtheta,
        reeb_fn=reeb,
        # the Levi matrix is unchanged for Z' = exp(-sigma) Z
        levi_fn=lambda x, chart=0: base.levi(x, chart),
        sigma=total,
        base=base,
        params=dict(base.params),
    )


@dataclass(frozen=True)
class _SumFactor(ConformalFactor):
    parts: tuple = ()

    def value(self, z, t=None):
        return self.scale * sum(p.value(z, t) for p in self.parts)

    @property
    def is_zero(self) -> bool:
        return all(p.is_zero for p in self.parts)


def _sum_factors(a: ConformalFactor, b: ConformalFactor) -> ConformalFactor:
    return _SumFactor(parts=(a, b))


def random_points(model: PseudoHermitianModel, count: int, seed: int = 0, scale: float = 1.0) -> np.ndarray:
    """Random ambient points: uniform on spheres, Gaussian of width ``scale`` otherwise."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(count, model.ambient_dim))
    if model.is_closed:
        return x / np.linalg.norm(x, axis=1, keepdims=True)
    return scale * x
