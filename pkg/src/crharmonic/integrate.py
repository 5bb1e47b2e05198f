"""Quadrature on closed models against ``theta ^ (dtheta)^m`` and the integrated
identities built from the pointwise fields of :mod:`mapcalc`.

Rules
-----
* ``product`` (``S^3`` only): ``z = (cos p e^{i a}, sin p e^{i b})`` with
  Gauss-Legendre nodes in ``p`` and the periodic trapezoid rule in ``a, b``.
* ``monte-carlo``: uniform points (normalized Gaussians) with equal weights.

``theta ^ (dtheta)^m`` is ``2^m m!`` times the Euclidean surface measure for the
standard sphere structure; a conformal change multiplies the density by
``exp(2 (m+1) sigma)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np

from .derivatives import AD, Differentiator
from .kahler import KahlerTarget, sample_strong_negativity
from .maps import SmoothMapRep
from .mapcalc import UnsupportedError, classify, evaluate, map_values
from .phmodel import Point, PseudoHermitianModel

__all__ = [
    "Integral",
    "PositivityResult",
    "QuadratureRule",
    "energy",
    "energy_with_error",
    "integrate_fields",
    "make_rule",
    "positivity_check",
    "siu_identity_residuals",
]


class PreconditionError(ValueError):
    """An input violates a documented precondition of the operation."""


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (P, N) ambient coordinates
    charts: np.ndarray  # (P,)
    weights: np.ndarray  # (P,), units of theta ^ (dtheta)^m
    kind: str
    resolution: int
    seed: Optional[int]
    model_name: str
    rotation: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    @property
    def total(self) -> float:
        return float(np.sum(self.weights))

    @property
    def is_monte_carlo(self) -> bool:
        return self.kind == "monte-carlo"

    def integrate(self, values):
        """Weighted sum (numpy pairwise summation, deterministic order)."""
        v = np.asarray(values)
        out = np.sum(self.weights * v)
        return complex(out) if np.iscomplexobj(out) else float(out)

    def stderr(self, values) -> float:
        """Monte Carlo standard error of :meth:`integrate` (zero for product rules)."""
        if not self.is_monte_carlo:
            return 0.0
        samples = self.size * self.weights * np.asarray(values)
        return float(np.sqrt(np.var(samples.real, ddof=1) + np.var(samples.imag, ddof=1)) / np.sqrt(self.size))

    def as_points(self) -> list:
        return [Point(int(c), x) for c, x in zip(self.charts, self.points)]

    def save(self, path) -> None:
        """Write ``.npz`` (binary) or ``.csv`` (columns: chart, coordinates, weight)."""
        path = Path(path)
        if path.suffix == ".csv":
            table = np.column_stack([self.charts, self.points, self.weights])
            header = f"{self.model_name},{self.kind},{self.resolution},{self.seed}"
            np.savetxt(path, table, delimiter=",", header=header, fmt="%.17g")
        else:
            np.savez(
                path,
                points=self.points,
                charts=self.charts,
                weights=self.weights,
                meta=np.array([self.model_name, self.kind, str(self.resolution), str(self.seed)]),
            )

    @classmethod
    def load(cls, path) -> "QuadratureRule":
        path = Path(path)
        if path.suffix == ".csv":
            with open(path) as fh:
                name, kind, res, seed = fh.readline().lstrip("# ").strip().split(",")
            table = np.loadtxt(path, delimiter=",", ndmin=2)
            charts, pts, w = table[:, 0].astype(int), table[:, 1:-1], table[:, -1]
        else:
            data = np.load(path)
            pts, charts, w = data["points"], data["charts"], data["weights"]
            name, kind, res, seed = (str(v) for v in data["meta"])
        return cls(pts, charts, w, kind, int(res), None if seed == "None" else int(seed), name)


def sphere_volume(m: int) -> float:
    """``theta ^ (dtheta)^m`` is ``2^m m!`` times the Euclidean area ``2 pi^{m+1} / m!``."""
    return (2.0 * math.pi) ** (m + 1)


def _base(model: PseudoHermitianModel) -> PseudoHermitianModel:
    return model.base if model.base is not None else model


def _product_s3(n: int):
    p, wp = np.polynomial.legendre.leggauss(n)
    p = 0.25 * np.pi * (p + 1.0)
    wp = 0.25 * np.pi * wp
    ang = 2.0 * np.pi * np.arange(n) / n
    P, A, B = np.meshgrid(p, ang, ang, indexing="ij")
    W = np.broadcast_to((wp * np.cos(p) * np.sin(p))[:, None, None], P.shape) * (2.0 * np.pi / n) ** 2
    z1 = np.cos(P) * np.exp(1j * A)
    z2 = np.sin(P) * np.exp(1j * B)
    pts = np.stack([z1.real, z2.real, z1.imag, z2.imag], axis=-1).reshape(-1, 4)
    # theta ^ dtheta = 2 x Euclidean measure on S^3
    return pts, 2.0 * W.reshape(-1)


def _monte_carlo(m: int, count: int, seed: int):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(count, 2 * m + 2))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x, np.full(count, sphere_volume(m) / count)


@lru_cache(maxsize=32)
def _log_density(model: PseudoHermitianModel):
    return jax.jit(jax.vmap(model.log_volume_density))


def make_rule(
    model: PseudoHermitianModel,
    resolution: int,
    kind: Optional[str] = None,
    seed: int = 0,
    cache_dir=None,
) -> QuadratureRule:
    """Quadrature rule for ``theta ^ (dtheta)^m`` on a closed model.

    ``resolution`` is the number of nodes per direction for ``product`` rules
    (``resolution^3`` nodes) and the number of samples for ``monte-carlo``.
    Rules on the undeformed sphere are cached under ``cache_dir`` when given.
    """
    if not model.is_closed:
        raise UnsupportedError(f"{model.name} is not closed; quadrature needs a closed model")
    base = _base(model)
    if base.name != "sphere":
        raise UnsupportedError(f"no quadrature rule for {base.name}")
    m = model.m
    kind = kind or ("product" if m == 1 else "monte-carlo")
    if resolution < 1:
        raise ValueError("resolution must be positive")
    rule_seed = seed if kind == "monte-carlo" else None
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"{base.name}{2 * m + 1}-{kind}-{resolution}-{rule_seed}.npz"
    if path is not None and path.exists():
        cached = QuadratureRule.load(path)
        pts, w = cached.points, cached.weights
    elif kind == "product":
        if m != 1:
            raise UnsupportedError("the product rule is implemented for S^3 only")
        pts, w = _product_s3(resolution)
    elif kind == "monte-carlo":
        pts, w = _monte_carlo(m, resolution, seed)
    else:
        raise ValueError(f"unknown rule kind {kind!r}")
    charts = np.array([base.choose_chart(x) for x in pts], dtype=int)
    rule = QuadratureRule(pts, charts, w, kind, resolution, rule_seed, base.name)
    if path is not None and not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        rule.save(path)
    if model.sigma is not None:
        density = np.exp(np.asarray(_log_density(model)(jnp.asarray(pts))))
        rule = QuadratureRule(pts, charts, w * density, kind, resolution, rule_seed, model.name)
    return rule


# ---------------------------------------------------------------------------
# Integrals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Integral:
    value: complex
    stderr: float

    @property
    def real(self) -> float:
        return float(np.real(self.value))


def integrand_values(model, target, f, rule: QuadratureRule, diff: Differentiator = AD) -> dict:
    return evaluate(model, target, f, rule.points, "integrands", diff, charts=rule.charts)


def integrate_fields(model, target, f, rule: QuadratureRule, diff: Differentiator = AD) -> dict:
    vals = integrand_values(model, target, f, rule, diff)
    return {k: Integral(rule.integrate(v), rule.stderr(v)) for k, v in vals.items()}


def energy_with_error(model, target, f, rule: QuadratureRule, diff: Differentiator = AD) -> Integral:
    vals = evaluate(model, target, f, rule.points, "fields1", diff, charts=rule.charts)["e"]
    return Integral(rule.integrate(vals), rule.stderr(vals))


def energy(model, target, f, rule: QuadratureRule, diff: Differentiator = AD) -> float:
    """``E[f] = int e(f) theta ^ (dtheta)^m``; raises ``DomainError`` naming a bad node."""
    return energy_with_error(model, target, f, rule, diff).real


def _balance(rule, lhs_vals, rhs_vals: dict, tol: float) -> dict:
    """Integrate both sides of ``lhs = sum(rhs)`` and return a normalized residual."""
    lhs = rule.integrate(lhs_vals)
    rhs = {k: rule.integrate(v) for k, v in rhs_vals.items()}
    total = sum(rhs.values())
    scale = 1.0 + max([abs(lhs)] + [abs(v) for v in rhs.values()])
    diff_vals = lhs_vals - sum(rhs_vals.values())
    residual = abs(lhs - total) / scale
    stderr = rule.stderr(diff_vals) / scale
    return {
        "lhs": lhs,
        "rhs_terms": rhs,
        "rhs": total,
        "residual": float(residual),
        "stderr": float(stderr),
        "tolerance": tol,
        "passed": bool(residual < max(tol, 3.0 * stderr)),
    }


def siu_identity_residuals(
    model: PseudoHermitianModel,
    target: KahlerTarget,
    f: SmoothMapRep,
    rule: QuadratureRule,
    tol: float = 1e-3,
    diff: Differentiator = AD,
    divergence_check: bool = False,
) -> dict:
    """Both integrated identities, each as ``lhs = sum of rhs terms``:

    * ``b-tensor-identity``: ``-(m-1)/m int <Pf, dbar_b fbar> = int |B|^2 + int K``
      with ``K`` the curvature contraction.  For ``m = 1`` every term vanishes
      pointwise (the coefficient is 0, ``B`` is trace-free 1x1 and ``K`` is
      antisymmetric), so the balance is ``0 = 0``.
    * ``tension-identity``: ``-int <Pf, dbar_b fbar> = int <tau, conj(taubar)> - i m int A(f)``
      with ``A(f)`` the torsion pairing.

    ``divergence_check`` adds the integrals of both divergences (which must vanish).
    """
    if not model.is_closed:
        raise UnsupportedError("integrated identities need a closed model")
    m = model.m
    v = integrand_values(model, target, f, rule, diff)
    out = {
        "b-tensor-identity": _balance(
            rule,
            -(m - 1) / m * v["p_pairing"],
            {"b_norm": v["b_norm"], "curvature_term": v["curvature_term"]},
            tol,
        ),
        "tension-identity": _balance(
            rule,
            -v["p_pairing"],
            {"tau_pairing": v["tau_pairing"], "torsion_term": -1j * m * v["torsion_pairing"]},
            tol,
        ),
    }
    if divergence_check:
        div_e, div_f = evaluate(model, target, f, rule.points, "divergence", diff, charts=rule.charts)
        for name, vals in (("divergence-E-integral", div_e), ("divergence-F-integral", div_f)):
            scale = 1.0 + rule.integrate(np.abs(vals))
            res = abs(rule.integrate(vals)) / scale
            err = rule.stderr(vals) / scale
            out[name] = {
                "integral": rule.integrate(vals),
                "residual": float(res),
                "stderr": float(err),
                "tolerance": tol,
                "passed": bool(res < max(tol, 3.0 * err)),
            }
    return out


@dataclass(frozen=True)
class PositivityResult:
    value: float  # real part of int <Pf, dbar_b fbar>
    imag: float
    stderr: float
    tolerance: float
    verdict: str  # "negative" | "zero" | "violated"
    cr_pluriharmonic: Optional[bool] = None
    negativity: Optional[str] = None
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict != "violated"


def positivity_check(
    model: PseudoHermitianModel,
    target: KahlerTarget,
    f: SmoothMapRep,
    rule: QuadratureRule,
    tol: float = 1e-8,
    negativity_trials: int = 2000,
    negativity_points: int = 5,
    classify_points: int = 200,
    seed: int = 0,
    diff: Differentiator = AD,
) -> PositivityResult:
    """Sign of ``int <Pf, dbar_b fbar>`` for a target with semi-negative curvature.

    The target is first sampled for strong semi-negativity at image points of
    ``f``.  ``value <= max(tol, 3 stderr)`` passes; when ``|value|`` is within that
    band the equality branch classifies ``f`` for CR-pluriharmonicity.
    """
    if model.m < 2:
        raise UnsupportedError("the sign argument needs m >= 2")
    rng = np.random.default_rng(seed)
    sample = rng.choice(rule.size, size=min(negativity_points, rule.size), replace=False)
    images = map_values(model, f, rule.points[sample])
    worst = None
    for w in images:
        verdict = sample_strong_negativity(target, w, negativity_trials, seed=seed)
        if not verdict.passed:
            raise PreconditionError(
                f"{target.name} is not strongly semi-negative at w = {w} (sampled value {verdict.worst_value:.3e})"
            )
        if worst is None or verdict.kind.startswith("semi"):
            worst = verdict.kind
    v = integrand_values(model, target, f, rule, diff)["p_pairing"]
    value, err = rule.integrate(v), rule.stderr(v)
    band = max(tol, 3.0 * err)
    re = float(np.real(value))
    if re < -band:
        verdict = "negative"
    elif re <= band:
        verdict = "zero"
    else:
        verdict = "violated"
    cr_pluri = None
    if verdict == "zero":
        idx = rng.choice(rule.size, size=min(classify_points, rule.size), replace=False)
        cls = classify(model, target, f, 1e-6, rule.points[idx], flags=["cr_pluriharmonic"], diff=diff)
        cr_pluri = cls["cr_pluriharmonic"]
    return PositivityResult(
        value=re,
        imag=float(np.imag(value)),
        stderr=err,
        tolerance=tol,
        verdict=verdict,
        cr_pluriharmonic=cr_pluri,
        negativity=worst,
        details={"nodes": rule.size, "kind": rule.kind},
    )
