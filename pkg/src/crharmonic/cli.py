"""Command-line front end.

    crharmonic SUBCOMMAND --config experiment.yaml [--tol F] [--seed N]
               [--resolution N] [--out DIR] [--format {json,csv,table}]

Exit status: 0 when every check passes, 1 on a numerical failure, 2 on a
usage or configuration error.  Reports are written as ``DIR/SUBCOMMAND.json``
with sorted keys and the resolved configuration embedded.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import yaml

from .flow import FlowSettings, MapAnsatz, minimize
from .integrate import PreconditionError, energy_with_error, make_rule, positivity_check, siu_identity_residuals
from .kahler import (
    DomainError,
    KahlerTarget,
    make_bergman_ball,
    make_flat,
    sample_negativity_order_k,
    sample_strong_negativity,
)
from .maps import MAP_NAMES, SmoothMapRep, _parse_coefficient, make_map
from .mapcalc import UnsupportedError
from .phmodel import ConformalFactor, PseudoHermitianModel, conformal_change, make_heisenberg, make_sphere, random_points
from .verify import jsonable, check_commutators, check_conformal_invariance, check_divergences, check_trace_identities

log = logging.getLogger(__name__)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

DEFAULTS = {
    "seed": 0,
    "tol": None,
    "rule": {"kind": None, "resolution": None, "seed": None},
    "points": {"count": 100, "scale": 1.0},
    "negativity": {"trials": 100000, "points": 20, "radius": 0.9, "order": 2},
    "positivity": {"trials": 2000, "points": 5},
    "flow": {"degree": 2, "max_iter": 200, "gtol": 1e-8, "rho_max": 0.9},
    "output": {"dir": None},
}

DEFAULT_TOL = {
    "verify-commutators": 1e-5,
    "verify-divergences": 1e-5,
    "verify-siu": 1e-3,
    "check-negativity": 0.0,
    "conformal-invariance": 1e-5,
    "energy": 0.0,
    "positivity": 1e-8,
    "flow": 1e-5,
}

DEFAULT_RESOLUTION = {1: 32, 2: 20000}


class ConfigError(ValueError):
    """The configuration cannot be parsed or is inconsistent."""


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _require(section: dict, key: str, where: str):
    if not isinstance(section, dict) or key not in section:
        raise ConfigError(f"missing {where}.{key}")
    return section[key]


def _conformal_factor(spec: dict) -> ConformalFactor:
    terms = tuple(
        (complex(*t["c"]) if isinstance(t["c"], (list, tuple)) else complex(_parse_coefficient([t["c"]])[0]),
         tuple(t["a"]), tuple(t["b"]), int(t.get("e", 0)))
        for t in spec.get("terms", [])
    )
    return ConformalFactor(terms=terms, constant=float(spec.get("constant", 0.0)), scale=float(spec.get("scale", 1.0)))


@dataclass
class ExperimentConfig:
    """Resolved experiment: raw dictionary plus the objects it describes."""

    raw: dict
    model: PseudoHermitianModel
    target: KahlerTarget
    fmap: Optional[SmoothMapRep]
    sigmas: list

    @property
    def nz(self) -> int:
        return self.model.m + 1 if self.model.is_closed else self.model.m

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping")
        raw = _merge(DEFAULTS, data)
        mspec = _require(raw, "model", "config")
        name, m = _require(mspec, "name", "model"), _require(mspec, "m", "model")
        if not isinstance(m, int) or m < 1:
            raise ConfigError(f"model.m must be a positive integer, got {m!r}")
        if name == "sphere":
            model = make_sphere(m)
        elif name == "heisenberg":
            model = make_heisenberg(m)
        else:
            raise ConfigError(f"unknown model {name!r}; known: heisenberg, sphere")
        if mspec.get("sigma"):
            model = conformal_change(model, _conformal_factor(mspec["sigma"]))
        tspec = _require(raw, "target", "config")
        tname, n = _require(tspec, "name", "target"), _require(tspec, "n", "target")
        if not isinstance(n, int) or n < 1:
            raise ConfigError(f"target.n must be a positive integer, got {n!r}")
        if tname == "bergman":
            target = make_bergman_ball(n)
        elif tname == "flat":
            target = make_flat(n)
        else:
            raise ConfigError(f"unknown target {tname!r}; known: bergman, flat")
        nz = m + 1 if model.is_closed else m
        fmap = None
        if "map" in raw:
            mp = dict(raw["map"])
            mname = _require(mp, "name", "map")
            if mname not in MAP_NAMES and "coefficients" not in mp:
                raise ConfigError(f"unknown map {mname!r}; known: {', '.join(MAP_NAMES)}")
            mp.pop("name")
            try:
                fmap = make_map(mname, n, nz, **mp)
            except (TypeError, ValueError, KeyError) as exc:
                raise ConfigError(f"bad map specification: {exc}") from exc
            if fmap.n != n:
                raise ConfigError(f"map has {fmap.n} components but target.n = {n}")
        sigmas = [_conformal_factor(s) for s in raw.get("sigmas", [])]
        return cls(raw, model, target, fmap, sigmas)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        return cls.from_dict(data)

    def seed_for(self, section: str) -> int:
        s = self.raw.get(section, {}).get("seed")
        return int(self.raw["seed"] if s is None else s)

    def require_map(self) -> SmoothMapRep:
        if self.fmap is None:
            raise ConfigError("this subcommand needs a map section")
        return self.fmap

    def points(self) -> np.ndarray:
        p = self.raw["points"]
        return random_points(self.model, int(p["count"]), self.seed_for("points"), float(p["scale"]))

    def rule(self):
        r = self.raw["rule"]
        res = r["resolution"] or DEFAULT_RESOLUTION.get(self.model.m, 20000)
        return make_rule(self.model, int(res), r["kind"], self.seed_for("rule"), r.get("cache_dir"))


# ---------------------------------------------------------------------------
# Subcommands: each returns (rows, details); a row is one pass/fail check.
# ---------------------------------------------------------------------------


def _report_rows(reports) -> tuple[list, dict]:
    rows = [
        {"name": r.identity_name, "passed": r.passed, "value": r.max_residual, "tolerance": r.tolerance}
        for r in reports
    ]
    return rows, {r.identity_name: r.to_dict() for r in reports}


def run_verify_commutators(cfg: ExperimentConfig, tol: float):
    return _report_rows(check_commutators(cfg.model, cfg.target, cfg.require_map(), cfg.points(), tol))


def run_verify_divergences(cfg: ExperimentConfig, tol: float):
    xs, f = cfg.points(), cfg.require_map()
    reps = check_divergences(cfg.model, cfg.target, f, xs, tol) + check_trace_identities(cfg.model, cfg.target, f, xs, tol)
    return _report_rows(reps)


def run_verify_siu(cfg: ExperimentConfig, tol: float):
    rule = cfg.rule()
    out = siu_identity_residuals(cfg.model, cfg.target, cfg.require_map(), rule, tol, divergence_check=True)
    rows = [{"name": k, "passed": v["passed"], "value": v["residual"], "tolerance": tol} for k, v in out.items()]
    out["rule"] = {"kind": rule.kind, "nodes": rule.size, "resolution": rule.resolution}
    return rows, out


def _ball_points(n: int, count: int, radius: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(count, n)) + 1j * rng.normal(size=(count, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.uniform(size=(count, 1)) ** (1.0 / (2 * n))
    pts = v * r
    pts[0] = 0.0
    return pts


def run_check_negativity(cfg: ExperimentConfig, tol: float):
    spec = cfg.raw["negativity"]
    seed = cfg.seed_for("negativity")
    pts = _ball_points(cfg.target.n, int(spec["points"]), float(spec["radius"]), seed)
    rows, details = [], {"points": []}
    strong, order = [], []
    k = spec.get("order")
    for i, w in enumerate(pts):
        v = sample_strong_negativity(cfg.target, w, int(spec["trials"]), seed=seed + i)
        strong.append(v)
        entry = {"w": w, "strong": v.kind, "strong_worst": v.worst_value}
        if k and k <= cfg.target.n:
            vk = sample_negativity_order_k(cfg.target, w, int(k), max(1000, int(spec["trials"]) // 10), seed=seed + i)
            order.append(vk)
            entry.update({f"order_{k}": vk.kind, f"order_{k}_worst": vk.worst_value})
        details["points"].append(entry)
    kinds = sorted({v.kind for v in strong})
    details["strong_verdict"] = "fail" if "fail" in kinds else kinds[0] if len(kinds) == 1 else "semi-negative-sample-pass"
    rows.append({
        "name": "strong-semi-negativity",
        "passed": all(v.passed for v in strong),
        "value": max(v.worst_value for v in strong),
        "tolerance": tol,
    })
    if order:
        details[f"order_{k}_verdict"] = "fail" if any(not v.passed for v in order) else order[0].kind
        rows.append({
            "name": f"negativity-order-{k}",
            "passed": all(v.passed for v in order),
            "value": max(v.worst_value for v in order),
            "tolerance": tol,
        })
    return rows, details


def run_conformal_invariance(cfg: ExperimentConfig, tol: float):
    sigmas = cfg.sigmas
    if not sigmas:
        raise ConfigError("conformal-invariance needs a 'sigmas' list")
    xs = cfg.points()
    reps = []
    for i, s in enumerate(sigmas):
        r = check_conformal_invariance(cfg.model, s, cfg.target, cfg.require_map(), xs, tol)
        r.identity_name = f"{r.identity_name}-sigma{i}"
        reps.append(r)
    rows, details = _report_rows(reps)
    for row, r in zip(rows, reps):
        row["passed"] = r.passed and not r.skipped
    return rows, details


def run_energy(cfg: ExperimentConfig, tol: float):
    rule = cfg.rule()
    res = energy_with_error(cfg.model, cfg.target, cfg.require_map(), rule)
    details = {"energy": res.real, "stderr": res.stderr, "nodes": rule.size, "kind": rule.kind}
    return [{"name": "energy", "passed": bool(np.isfinite(res.real)), "value": res.real, "tolerance": tol}], details


def run_positivity(cfg: ExperimentConfig, tol: float):
    spec = cfg.raw["positivity"]
    res = positivity_check(
        cfg.model, cfg.target, cfg.require_map(), cfg.rule(), tol,
        negativity_trials=int(spec["trials"]), negativity_points=int(spec["points"]), seed=cfg.seed_for("positivity"),
    )
    details = {
        "value": res.value, "imag": res.imag, "stderr": res.stderr, "verdict": res.verdict,
        "cr_pluriharmonic": res.cr_pluriharmonic, "negativity": res.negativity, **res.details,
    }
    return [{"name": "p-pairing-sign", "passed": res.passed, "value": res.value, "tolerance": tol}], details


def run_flow(cfg: ExperimentConfig, tol: float, out_dir: Optional[Path] = None):
    spec = cfg.raw["flow"]
    ansatz = MapAnsatz.containing(cfg.require_map(), int(spec["degree"]), float(spec["rho_max"]))
    settings = FlowSettings(max_iter=int(spec["max_iter"]), gtol=float(spec["gtol"]), seed=cfg.seed_for("flow"))
    final, trace = minimize(ansatz, cfg.model, cfg.target, cfg.rule(), settings, out_dir=out_dir)
    first, last = trace.steps[0], trace.steps[-1]
    rows = [
        {"name": "monotone-descent", "passed": trace.monotone, "value": last.E, "tolerance": 0.0},
        {"name": "gradient-check-start", "passed": trace.gradient_check_start < tol,
         "value": trace.gradient_check_start, "tolerance": tol},
        {"name": "gradient-check-end", "passed": trace.gradient_check_end < tol,
         "value": trace.gradient_check_end, "tolerance": tol},
    ]
    details = {
        **trace.to_dict(),
        "energy_ratio": last.E / first.E if first.E else 0.0,
        "e_max_ratio": last.e_max / first.e_max if first.e_max else 0.0,
        "coefficients": final.to_json(),
    }
    return rows, details


SUBCOMMANDS: dict[str, Callable] = {
    "verify-commutators": run_verify_commutators,
    "verify-divergences": run_verify_divergences,
    "verify-siu": run_verify_siu,
    "check-negativity": run_check_negativity,
    "conformal-invariance": run_conformal_invariance,
    "energy": run_energy,
    "positivity": run_positivity,
    "flow": run_flow,
}


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def render(rows: list, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(jsonable(rows), sort_keys=True, indent=2)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["name", "passed", "value", "tolerance"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in w.fieldnames})
        return buf.getvalue().rstrip("\n")
    width = max(len(r["name"]) for r in rows) if rows else 4
    lines = [f"{'check':<{width}}  status  {'value':>12}  {'tol':>9}"]
    for r in rows:
        status = "PASS" if r["passed"] else "FAIL"
        lines.append(f"{r['name']:<{width}}  {status:<6}  {float(np.real(r['value'])):12.4e}  {r['tolerance'] or 0:9.2e}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crharmonic", description="pseudo-Hermitian harmonic map laboratory")
    p.add_argument("subcommand", choices=sorted(SUBCOMMANDS))
    p.add_argument("--config", required=True, help="YAML experiment file")
    p.add_argument("--tol", type=float, help="override the tolerance")
    p.add_argument("--seed", type=int, help="override every seed")
    p.add_argument("--resolution", type=int, help="override the quadrature resolution")
    p.add_argument("--out", help="directory for the JSON report and artifacts")
    p.add_argument("--format", choices=("json", "csv", "table"), default="table")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(subcommand: str, config: dict, tol=None, seed=None, resolution=None, out=None, fmt="table", stream=None) -> int:
    """Run one subcommand on a configuration dictionary and return the exit status."""
    stream = stream or sys.stdout
    data = copy.deepcopy(config) if isinstance(config, dict) else config
    if isinstance(data, dict):
        if seed is not None:
            data["seed"] = seed
            for section in ("points", "rule", "negativity", "positivity", "flow"):
                data.setdefault(section, {})["seed"] = seed
        if resolution is not None:
            data.setdefault("rule", {})["resolution"] = resolution
        if tol is not None:
            data["tol"] = tol
        if out is not None:
            data.setdefault("output", {})["dir"] = str(out)
    try:
        cfg = ExperimentConfig.from_dict(data)
        tol_used = cfg.raw["tol"] if cfg.raw["tol"] is not None else DEFAULT_TOL[subcommand]
        out_dir = Path(cfg.raw["output"]["dir"]) if cfg.raw["output"]["dir"] else None
        fn = SUBCOMMANDS[subcommand]
        if subcommand == "flow":
            rows, details = fn(cfg, tol_used, out_dir)
        else:
            rows, details = fn(cfg, tol_used)
    except (ConfigError, UnsupportedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, PreconditionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    passed = all(r["passed"] for r in rows)
    report = {
        "subcommand": subcommand,
        "config": cfg.raw,
        "tolerance": tol_used,
        "passed": passed,
        "checks": rows,
        "details": details,
    }
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{subcommand}.json").write_text(json.dumps(jsonable(report), sort_keys=True, indent=2) + "\n")
    print(render(rows, fmt), file=stream)
    if not passed:
        names = ", ".join(r["name"] for r in rows if not r["passed"])
        print(f"failed: {names}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_PASS


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        data = yaml.safe_load(Path(args.config).read_text())
    except (OSError, yaml.YAMLError) as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return run(args.subcommand, data, args.tol, args.seed, args.resolution, args.out, args.format)


if __name__ == "__main__":
    sys.exit(main())
