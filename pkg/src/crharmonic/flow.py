"""Descent of the dbar_b-energy over polynomial maps ``S^3 -> ball``.

The unknowns are the complex coefficients of a fixed monomial basis.  The
energy is the quadrature sum of ``e(f)``; its gradient comes from reverse-mode
differentiation through that sum.  Steps leaving ``|w| <= rho_max`` are
rejected by the line search, so the energy itself is never modified.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np

from .derivatives import AD, Differentiator
from .integrate import QuadratureRule
from .kahler import KahlerTarget
from .maps import SmoothMapRep, exponent_table, polynomial_map
from .mapcalc import _kernel, evaluate, map_values, template
from .phmodel import PseudoHermitianModel

log = logging.getLogger(__name__)

__all__ = [
    "FlowSettings",
    "FlowStep",
    "FlowTrace",
    "MapAnsatz",
    "discrete_energy_and_gradient",
    "gradient_check",
    "minimize",
]


@dataclass(frozen=True)
class MapAnsatz:
    """Coefficients over a fixed monomial basis, with an image cap ``rho_max``."""

    fmap: SmoothMapRep
    rho_max: float = 0.9

    @classmethod
    def full_basis(cls, n: int, nz: int, degree: int, rho_max: float = 0.9) -> "MapAnsatz":
        exps = tuple(exponent_table(nz, degree, min_degree=1))
        return cls(SmoothMapRep("ansatz", n, exps, np.zeros((len(exps), n), dtype=complex)), rho_max)

    @classmethod
    def containing(cls, fmap: SmoothMapRep, degree: int, rho_max: float = 0.9) -> "MapAnsatz":
        """Embed ``fmap`` into the full basis of the given degree."""
        nz = len(fmap.exponents[0][0])
        basis = cls.full_basis(fmap.n, nz, degree, rho_max)
        index = {k: i for i, k in enumerate(basis.fmap.exponents)}
        c = np.zeros_like(basis.fmap.coefficients)
        for k, v in zip(fmap.exponents, fmap.coefficients):
            if k not in index:
                raise ValueError(f"monomial {k} is outside the degree-{degree} basis")
            c[index[k]] += v
        return basis.with_coefficients(c)

    @property
    def coefficients(self) -> np.ndarray:
        return self.fmap.coefficients

    @property
    def size(self) -> int:
        return 2 * self.coefficients.size

    def flat(self) -> np.ndarray:
        c = self.coefficients.ravel()
        return np.concatenate([c.real, c.imag])

    def from_flat(self, u) -> np.ndarray:
        u = np.asarray(u)
        half = u.size // 2
        return (u[:half] + 1j * u[half:]).reshape(self.coefficients.shape)

    def with_coefficients(self, c) -> "MapAnsatz":
        return MapAnsatz(self.fmap.with_coefficients(c), self.rho_max)

    def with_flat(self, u) -> "MapAnsatz":
        return self.with_coefficients(self.from_flat(u))

    def max_image_norm(self, model, rule: QuadratureRule) -> float:
        w = map_values(model, self.fmap, rule.points)
        return float(np.max(np.linalg.norm(w, axis=-1)))

    def to_json(self) -> dict:
        return {
            "n": self.fmap.n,
            "rho_max": self.rho_max,
            "terms": [
                {"a": list(a), "b": list(b), "e": e, "c": [[float(v.real), float(v.imag)] for v in c]}
                for (a, b, e), c in zip(self.fmap.exponents, self.coefficients)
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "MapAnsatz":
        terms = [(np.array([complex(*v) for v in t["c"]]), t["a"], t["b"], t["e"]) for t in data["terms"]]
        return cls(polynomial_map(terms, data["n"], "ansatz"), data.get("rho_max", 0.9))


@lru_cache(maxsize=32)
def _energy_fn(model, target, signature, diff):
    fn = jax.vmap(_kernel(model, target, template(signature), diff, "fields1"), in_axes=(0, 0, None))
    shape = (len(signature[1]), signature[0])

    def energy(u, xs, charts, weights):
        half = u.size // 2
        c = (u[:half] + 1j * u[half:]).reshape(shape)
        return jnp.sum(weights * fn(xs, charts, c)["e"])

    return jax.jit(energy), jax.jit(jax.value_and_grad(energy))


def _rule_args(rule):
    return jnp.asarray(rule.points), jnp.asarray(rule.charts), jnp.asarray(rule.weights)


def discrete_energy_and_gradient(
    ansatz: MapAnsatz,
    model: PseudoHermitianModel,
    target: KahlerTarget,
    rule: QuadratureRule,
    diff: Differentiator = AD,
):
    """``(E, dE/du)`` with ``u = (Re c, Im c)`` flattened."""
    _, vg = _energy_fn(model, target, ansatz.fmap.signature, diff)
    e, g = vg(jnp.asarray(ansatz.flat()), *_rule_args(rule))
    return float(e), np.asarray(g)


def _energy(ansatz, model, target, rule, diff=AD) -> float:
    fn, _ = _energy_fn(model, target, ansatz.fmap.signature, diff)
    return float(fn(jnp.asarray(ansatz.flat()), *_rule_args(rule)))


def gradient_check(
    ansatz, model, target, rule, directions: int = 10, step: float = 1e-5, seed: int = 0, diff=AD
) -> float:
    """Relative mismatch ``|fd - an| / |an|`` between the directional derivatives
    ``<grad, d>`` and fourth-order central differences over random unit ``d``."""
    rng = np.random.default_rng(seed)
    _, g = discrete_energy_and_gradient(ansatz, model, target, rule, diff)
    u = ansatz.flat()
    h = step * max(1.0, float(np.linalg.norm(u)))
    fd, an = [], []
    for _ in range(directions):
        d = rng.normal(size=u.size)
        d /= np.linalg.norm(d)

        def E(s):
            return _energy(ansatz.with_flat(u + s * d), model, target, rule, diff)

        fd.append((8.0 * (E(h) - E(-h)) - (E(2 * h) - E(-2 * h))) / (12.0 * h))
        an.append(float(g @ d))
    fd, an = np.array(fd), np.array(an)
    return float(np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-300))


@dataclass(frozen=True)
class FlowSettings:
    max_iter: int = 200
    gtol: float = 1e-8
    armijo: float = 1e-4
    max_halvings: int = 60
    initial_step: float = 1.0
    gradient_check_tol: float = 1e-5
    tau_every: int = 1
    seed: int = 0


@dataclass(frozen=True)
class FlowStep:
    iteration: int
    E: float
    gradnorm: float
    tau_max: float
    e_max: float
    step: float


@dataclass
class FlowTrace:
    steps: list = field(default_factory=list)
    stalled: bool = False
    converged: bool = False
    gradient_check_start: Optional[float] = None
    gradient_check_end: Optional[float] = None
    message: str = ""

    @property
    def energies(self) -> np.ndarray:
        return np.array([s.E for s in self.steps])

    @property
    def monotone(self) -> bool:
        e = self.energies
        return bool(np.all(np.diff(e) <= 1e-12 * max(1.0, abs(e[0]))))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "E", "gradnorm", "tau_max", "e_max", "step"])
            for s in self.steps:
                w.writerow([s.iteration, repr(s.E), repr(s.gradnorm), repr(s.tau_max), repr(s.e_max), repr(s.step)])

    def to_dict(self) -> dict:
        return {
            "steps": [asdict(s) for s in self.steps],
            "stalled": self.stalled,
            "converged": self.converged,
            "gradient_check_start": self.gradient_check_start,
            "gradient_check_end": self.gradient_check_end,
            "message": self.message,
        }


def _node_stats(ansatz, model, target, rule, diff):
    out = evaluate(model, target, ansatz.fmap, rule.points, "fields2", diff, charts=rule.charts)
    tau = np.linalg.norm(out["tau"], axis=-1)
    return float(np.max(tau)), float(np.max(out["e"]))


def minimize(
    ansatz: MapAnsatz,
    model: PseudoHermitianModel,
    target: KahlerTarget,
    rule: QuadratureRule,
    settings: FlowSettings = FlowSettings(),
    diff: Differentiator = AD,
    out_dir=None,
):
    """Steepest descent with Armijo backtracking (step halving) in coefficient space.

    Returns ``(terminal ansatz, FlowTrace)``.  A line search that fails after
    ``max_halvings`` halvings ends the run with ``trace.stalled`` set.
    """
    if ansatz.max_image_norm(model, rule) > ansatz.rho_max:
        raise ValueError(f"initial image leaves |w| <= {ansatz.rho_max}")
    trace = FlowTrace()
    trace.gradient_check_start = gradient_check(ansatz, model, target, rule, seed=settings.seed, diff=diff)
    E, g = discrete_energy_and_gradient(ansatz, model, target, rule, diff)
    step = settings.initial_step
    tau_max, e_max = _node_stats(ansatz, model, target, rule, diff)
    trace.steps.append(FlowStep(0, E, float(np.linalg.norm(g)), tau_max, e_max, 0.0))
    for it in range(1, settings.max_iter + 1):
        gn2 = float(g @ g)
        if np.sqrt(gn2) < settings.gtol:
            trace.converged = True
            break
        u = ansatz.flat()
        accepted = None
        for _ in range(settings.max_halvings):
            trial = ansatz.with_flat(u - step * g)
            if trial.max_image_norm(model, rule) <= trial.rho_max:
                Et = _energy(trial, model, target, rule, diff)
                if Et <= E - settings.armijo * step * gn2:
                    accepted = trial
                    break
            step *= 0.5
        if accepted is None:
            trace.stalled = True
            trace.message = f"line search failed after {settings.max_halvings} halvings at iteration {it}"
            log.warning(trace.message)
            break
        ansatz = accepted
        E, g = discrete_energy_and_gradient(ansatz, model, target, rule, diff)
        if it % settings.tau_every == 0:
            tau_max, e_max = _node_stats(ansatz, model, target, rule, diff)
        trace.steps.append(FlowStep(it, E, float(np.linalg.norm(g)), tau_max, e_max, step))
        log.debug("iteration %d E=%.6e |g|=%.3e step=%.3e", it, E, np.linalg.norm(g), step)
        step *= 2.0
    else:
        trace.message = f"stopped at max_iter={settings.max_iter}"
    if trace.converged:
        trace.message = "gradient norm below gtol"
    last = trace.steps[-1]
    if last.iteration % settings.tau_every:
        tau_max, e_max = _node_stats(ansatz, model, target, rule, diff)
        trace.steps[-1] = FlowStep(last.iteration, last.E, last.gradnorm, tau_max, e_max, last.step)
    trace.gradient_check_end = gradient_check(ansatz, model, target, rule, seed=settings.seed + 1, diff=diff)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        trace.write_csv(out / "flow_trace.csv")
        (out / "flow_coefficients.json").write_text(json.dumps(ansatz.to_json(), indent=2, sort_keys=True))
    return ansatz, trace
