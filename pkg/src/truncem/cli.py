"""Experiment runner.

Configs are flat ``key = value`` files with dotted section names, ``#``
comments and comma-separated lists. A run writes its CSV artifacts, a
``summary.json`` and a ``manifest.json``; the manifest can itself be passed
back as ``--config`` and reproduces the same run.

Exit codes: 0 success, 2 config parse error, 3 validation or constraint
failure, 4 simulation failure. Errors are reported as one JSON object on
stderr and no artifacts are written.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, ConstraintError, SimulationError, TruncEMError
from .model import ModelParams, validate
from .montecarlo import (
    EnsembleConfig,
    default_workers,
    estimate_moments_multi,
    estimate_strong_error,
)
from .pricing import BarrierOptionSpec, price
from .rng import MAX_SEED
from .scheme import PathGrid, grid_steps, simulate_path
from .truncation import DEFAULT_H_EXPONENT, make_truncation

log = logging.getLogger("truncem")

EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, EXIT_SIMULATION = 0, 2, 3, 4

MODEL_FIELDS = tuple(f.name for f in dataclasses.fields(ModelParams))
EXPERIMENTS = ("simulate", "moments", "converge", "price")

# per-experiment keys: name -> (kind, required)
_SCHEMA = {
    "simulate": {"t_end": ("float", True), "delta": ("float", True), "path_index": ("int", False)},
    "moments": {"t_end": ("float", True), "n_paths": ("int", True), "p_moment": ("floats", False),
                "delta_list": ("floats", True)},
    "converge": {"t_end": ("float", True), "n_paths": ("int", True), "p_moment": ("float", False),
                 "delta_list": ("floats", True), "delta_ref": ("float", True)},
    "price": {"strike": ("float", True), "barrier": ("float", True), "expiry": ("float", True),
              "discount_rate": ("float", False), "n_paths": ("int", True), "delta": ("float", True),
              "base_delta": ("float", False)},
}
_DEFAULTS = {
    "simulate": {"path_index": 0},
    "moments": {"p_moment": (2.0,)},
    "converge": {"p_moment": 2.0},
    "price": {"discount_rate": 0.0, "base_delta": None},
}


@dataclass
class RunConfig:
    model: ModelParams
    experiment: str
    params: dict
    seed: int
    output_dir: str
    h_exponent: float = DEFAULT_H_EXPONENT
    paper_compat: bool = False
    validation_mode: str = "strict"
    derived: dict = field(default_factory=dict)

    def to_flat(self) -> dict:
        """Canonical key -> value mapping; parsing it back gives an equal RunConfig."""
        flat = {f"model.{k}": v for k, v in self.model.to_dict().items()}
        flat["truncation.h_exponent"] = self.h_exponent
        flat["truncation.paper_compat"] = self.paper_compat
        flat["validation.mode"] = self.validation_mode
        flat["seed"] = self.seed
        flat["output_dir"] = self.output_dir
        for k, v in self.params.items():
            if v is not None:
                flat[f"{self.experiment}.{k}"] = list(v) if isinstance(v, tuple) else v
        return flat


# ------------------------------------------------------------------ parsing

def _parse_text(text: str) -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def _from_manifest(text: str) -> dict:
    try:
        doc = json.loads(text)
        cfg = doc["config"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"unreadable manifest: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("manifest config must be an object")
    return {k: ",".join(map(_fmt_value, v)) if isinstance(v, list) else _fmt_value(v)
            for k, v in cfg.items()}


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(key, value, kind):
    try:
        if kind == "float":
            out = float(value)
            if not math.isfinite(out):
                raise ValueError
            return out
        if kind == "int":
            return int(value)
        if kind == "floats":
            vals = tuple(float(v) for v in value.split(",") if v.strip())
            if not vals or not all(math.isfinite(v) for v in vals):
                raise ValueError
            return vals
        if kind == "bool":
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {kind}") from None
    raise AssertionError(kind)


def parse_config(text: str, seed: int | None = None, output_dir: str | None = None) -> RunConfig:
    """Parse config text (flat format or a manifest) into a RunConfig."""
    if not text.strip():
        raise ConfigError("config is empty")
    raw = _from_manifest(text) if text.lstrip().startswith("{") else _parse_text(text)
    used = set()

    def take(key, kind, required=True, default=None):
        if key not in raw:
            if required:
                raise ConfigError(f"missing key {key!r}")
            return default
        used.add(key)
        return _convert(key, raw[key], kind)

    model_vals = {f: take(f"model.{f}", "float") for f in MODEL_FIELDS}
    try:
        model = ModelParams(**model_vals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from None

    h_exponent = take("truncation.h_exponent", "float", False, DEFAULT_H_EXPONENT)
    paper_compat = take("truncation.paper_compat", "bool", False, False)
    mode = raw.get("validation.mode", "strict")
    used.add("validation.mode")
    if mode not in ("strict", "boundary", "oracle"):
        raise ConfigError(f"validation.mode must be strict, boundary or oracle, not {mode!r}")

    if seed is None:
        seed = take("seed", "int")
    else:
        used.add("seed")
    if not 0 <= seed <= MAX_SEED:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if output_dir is None:
        if "output_dir" not in raw:
            raise ConfigError("missing key 'output_dir' (or pass --output)")
        output_dir = raw["output_dir"]
    used.add("output_dir")

    present = sorted({k.split(".", 1)[0] for k in raw if k.split(".", 1)[0] in EXPERIMENTS})
    if len(present) != 1:
        raise ConfigError(f"exactly one experiment block required, found {present or 'none'}")
    exp = present[0]
    params = dict(_DEFAULTS[exp])
    for name, (kind, required) in _SCHEMA[exp].items():
        val = take(f"{exp}.{name}", kind, required, params.get(name))
        params[name] = val

    unknown = sorted(set(raw) - used)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    return RunConfig(model, exp, params, int(seed), str(output_dir), h_exponent, paper_compat, mode)


def load_config(path, seed=None, output_dir=None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, seed, output_dir)


# ---------------------------------------------------------------- execution

def _adjust(t_end, delta, derived, label):
    n, used = grid_steps(t_end, delta)
    if used != delta:
        log.info("%s: delta %r adjusted to %r (n_steps=%d)", label, delta, used, n)
        derived["delta_adjustments"].append({"what": label, "requested": delta, "used": used,
                                             "n_steps": n})
    return used


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _dfmt(d: float) -> str:
    return format(d, ".17g")


def execute(cfg: RunConfig, workers: int = 1) -> dict:
    """Validate, run and return {filename: text}. Nothing is written here."""
    derived = {"delta_adjustments": [], "warnings": []}
    report = validate(cfg.model, cfg.validation_mode)
    derived["assumptions"] = {"mode": report.mode, "boundary_cases": list(report.boundary_cases),
                              "violations": list(report.violations)}
    if not report.ok:
        what = report.violations or ["strict assumptions not met: " + ", ".join(report.boundary_cases)]
        raise ConstraintError("model fails validation: " + "; ".join(what), "model_assumptions")
    derived["warnings"] += [f"boundary case: {b}" for b in report.boundary_cases]

    builder = make_truncation(cfg.model, h_exponent=cfg.h_exponent, paper_compat=cfg.paper_compat)
    derived["nu"] = {"c_nu": builder.nu.c_nu, "q_nu": builder.nu.q_nu}
    derived["delta_star"] = builder.delta_star
    derived["h_exponent"] = builder.h_exponent
    if cfg.paper_compat:
        derived["warnings"].append("paper_compat: h(delta)=delta^-1/2 violates delta^(1/4) h(delta) <= 1")

    levels = {}

    def trunc_for(d):
        tc = builder(d)
        levels[_dfmt(d)] = {"h": tc.h, "cap": tc.cap}
        for note in tc.notes:
            if note not in derived["warnings"]:
                derived["warnings"].append(note)
        return tc

    P = cfg.params
    files, summary = {}, {"experiment": cfg.experiment, "seed": cfg.seed}

    if cfg.experiment == "simulate":
        d = _adjust(P["t_end"], P["delta"], derived, "simulate.delta")
        tc = trunc_for(d)
        n, _ = grid_steps(P["t_end"], d)
        grid = PathGrid.sample(cfg.seed, P["path_index"], P["t_end"], n)
        traj = simulate_path(grid, tc, cfg.model)
        files["trajectory.csv"] = traj.to_csv()
        summary.update(n_steps=n, delta=d, trunc_hits_x=traj.trunc_hits_x, trunc_hits_y=traj.trunc_hits_y,
                       neg_excursions_y=traj.neg_excursions_y, x_final=float(traj.x[-1]),
                       y_final=float(traj.y[-1]))

    elif cfg.experiment == "moments":
        deltas = [_adjust(P["t_end"], d, derived, "moments.delta_list") for d in P["delta_list"]]
        ens = EnsembleConfig(P["n_paths"], cfg.seed, P["t_end"], min(P["p_moment"]), tuple(deltas))
        truncs = [trunc_for(d) for d in deltas]
        rows = []
        for d, tc in zip(deltas, truncs):
            reports = estimate_moments_multi(ens, d, cfg.model, tc, P["p_moment"], workers)
            for q, rep in reports.items():
                name = f"moments_p{q:g}_delta_{_dfmt(d)}.csv"
                files[name] = rep.to_csv()
                rows.append({"file": name, "delta": d, "p_moment": q, "sup_moment_x": rep.sup_moment_x,
                             "sup_moment_y": rep.sup_moment_y, "n_failed": rep.n_failed})
        summary.update(n_paths=P["n_paths"], p_moment=list(P["p_moment"]), results=rows)

    elif cfg.experiment == "converge":
        deltas = tuple(_adjust(P["t_end"], d, derived, "converge.delta_list") for d in P["delta_list"])
        ref = _adjust(P["t_end"], P["delta_ref"], derived, "converge.delta_ref")
        ens = EnsembleConfig(P["n_paths"], cfg.seed, P["t_end"], P["p_moment"], deltas, ref)
        for d in deltas + (ref,):
            trunc_for(d)
        rep = estimate_strong_error(ens, cfg.model, builder, workers)
        files["strong_error.csv"] = rep.to_csv()
        summary.update(fitted_order=rep.fitted_order, p_moment=rep.p_moment, n_paths=rep.n_paths,
                       n_failed=rep.n_failed)

    else:  # price
        spec = BarrierOptionSpec(P["strike"], P["barrier"], P["expiry"], P["discount_rate"])
        d = _adjust(P["expiry"], P["delta"], derived, "price.delta")
        ens = EnsembleConfig(P["n_paths"], cfg.seed, P["expiry"])
        rep = price(spec, ens, cfg.model, trunc_for(d), P["base_delta"], workers)
        files["price.csv"] = rep.to_csv()
        summary.update(price=rep.price, stderr=rep.stderr, n_paths=rep.n_paths,
                       knockout_fraction=rep.knockout_fraction)

    derived["truncation_levels"] = levels
    cfg.derived = derived
    files["summary.json"] = _json(summary)
    files["manifest.json"] = _json({"config": cfg.to_flat(), "derived": derived,
                                    "artifacts": sorted(files)})
    return files


def write_artifacts(files: dict, output_dir) -> None:
    """Write every file or none: stage in a sibling temp dir, then move into place."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=out, prefix=".staging-") as tmp:
        for name, text in files.items():
            (Path(tmp) / name).write_text(text, encoding="utf-8", newline="")
        for name in files:
            os.replace(Path(tmp) / name, out / name)


def _fail(kind, code, exc, **extra):
    record = {"error": kind, "exit_code": code, "message": str(exc), **extra}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="truncem", description="Truncated Euler-Maruyama experiments.")
    ap.add_argument("--config", required=True, help="config file or manifest.json")
    ap.add_argument("--workers", type=int, default=None,
                    help="worker processes (default: $TRUNCEM_WORKERS or available CPUs)")
    ap.add_argument("--output", default=None, help="output directory (overrides output_dir)")
    ap.add_argument("--seed", type=int, default=None, help="u64 seed (overrides seed)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    workers = args.workers if args.workers is not None else default_workers()
    try:
        cfg = load_config(args.config, args.seed, args.output)
    except ConfigError as exc:
        return _fail("parse", EXIT_PARSE, exc)
    try:
        files = execute(cfg, max(1, workers))
    except ConstraintError as exc:
        return _fail("constraint", EXIT_VALIDATION, exc, constraint=exc.constraint)
    except SimulationError as exc:
        return _fail("simulation", EXIT_SIMULATION, exc, step=exc.step, path_index=exc.path_index)
    except (TruncEMError, ValueError) as exc:
        return _fail("validation", EXIT_VALIDATION, exc)
    try:
        write_artifacts(files, cfg.output_dir)
    except OSError as exc:
        return _fail("io", EXIT_PARSE, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
