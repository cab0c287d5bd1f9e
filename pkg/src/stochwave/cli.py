"""Batch experiment runner.

    stochwave list
    stochwave validate <config.yaml>
    stochwave run <config.yaml>

A config is one YAML file with blocks ``grid``, ``covariance``,
``coefficients``, ``initial_data``, ``scale``, ``experiment`` and the scalars
``seed``, ``output_dir``, ``workers``.  The only environment variable read is
``STOCHWAVE_OUTPUT_DIR``, which overrides ``output_dir``.

Exit status: 0 success, 2 unreadable or malformed config, 3 violated
hypothesis, 4 numerical blow-up.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import (
    SCHEMA_VERSION,
    fit_rate,
    holder_estimate,
    mc_moment,
    tail_probability,
    weak_continuity_check,
    write_csv,
    write_json,
)
from .errors import BlowUpError, ConfigError
from .lattice import make_grid, write_path_binary
from .noise import Control, CovarianceSpec, covariance_check, sample_noise_path, write_covariance_csv
from .propagator import Config, DeviationScale, make_coeffs, make_initial_data, validate_config
from .ratefn import TargetSpec, gaussian_point_rate, rate_function
from .solver import solve_spde, write_trace

OUTPUT_ENV = "STOCHWAVE_OUTPUT_DIR"

EXPERIMENTS = (
    ("simulate", "one sample path of u_eps with its per-step sup-norm trace",
     "well-posedness of the mild solution"),
    ("clt", "sup-norm moments of u_eps - u0 or of the coupled CLT remainder over an eps grid, with slope fit",
     "central limit theorem for the fluctuation field"),
    ("mdp-rate", "least-norm control and rate value for a point constraint, with the Gaussian oracle when defined",
     "moderate deviation rate function"),
    ("mdp-tail", "Monte Carlo tail probability of Z_eps at a probe, normalized by the speed h(eps)^2",
     "moderate deviation principle at speed h(eps)^2"),
    ("noise-check", "Monte Carlo check of the noise covariance functional on test-function pairs",
     "spatially homogeneous Gaussian noise covariance"),
    ("holder", "increment-moment regression for the Hölder exponent along time or space",
     "Hölder regularity of the fluctuation field"),
    ("weak-continuity", "skeleton response to oscillatory control perturbations that converge weakly",
     "weak continuity of the linear skeleton map"),
)
EXPERIMENT_NAMES = tuple(e[0] for e in EXPERIMENTS)

# experiment parameters and their defaults
EXPERIMENT_DEFAULTS = {
    "simulate": dict(eps=0.01, sample_id=0, dump_path=True),
    "clt": dict(eps=[2.0**-k for k in range(4, 11)], p=2, n_samples=400, quantity="sup_diff"),
    "mdp-rate": dict(t_index=None, x_index=None, r=1.0, tol=1e-8, dump_minimizer=False),
    "mdp-tail": dict(eps=1e-4, r=1.0, n_samples=10000, theta=None, t_index=None, x_index=None),
    "noise-check": dict(n_samples=20000, modes=[[1], [2]]),
    "holder": dict(eps=None, p=2, n_samples=64, axis="time"),
    "weak-continuity": dict(control_mode=1, control_amp=1.0, profile_mode=1, profile_amp=1.0,
                            modes=[1, 2, 3, 4, 5, 6], tolerance=0.05),
}
TOP_KEYS = ("grid", "covariance", "coefficients", "initial_data", "scale", "experiment",
            "seed", "output_dir", "workers")
GRID_KEYS = ("dim", "n", "L", "dt", "nt")
COV_KEYS = ("beta", "amplitude", "taper", "taper_weight", "taper_width")


class ParseError(ValueError):
    """Malformed configuration; the message names the line or field."""


@dataclass
class RunConfig:
    config: Config
    experiment: str
    params: dict
    seed: int
    output_dir: Path
    workers: int = 1
    raw: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        """sha256 of the model configuration plus the experiment block."""
        body = dict(config=self.config.describe(), experiment=self.experiment, params=self.params)
        text = json.dumps(body, sort_keys=True, separators=(",", ":"), default=repr)
        return hashlib.sha256(text.encode()).hexdigest()


def list_experiments() -> list[dict]:
    """Experiment names in fixed order, each with a description and the result it probes."""
    return [dict(name=n, description=d, anchor=a) for n, d, a in EXPERIMENTS]


def _block(raw: dict, key: str, allowed=None, required=()) -> dict:
    val = raw.get(key, {})
    if val is None:
        val = {}
    if not isinstance(val, dict):
        raise ParseError(f"field '{key}' must be a mapping")
    if allowed is not None:
        extra = sorted(set(val) - set(allowed))
        if extra:
            raise ParseError(f"unknown field '{key}.{extra[0]}'")
    for r in required:
        if r not in val:
            raise ParseError(f"missing field '{key}.{r}'")
    return dict(val)


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a run config; raises ParseError or ConfigError."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ParseError(f"YAML syntax error{where}: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(raw, dict):
        raise ParseError("config must be a mapping of blocks")
    extra = sorted(set(raw) - set(TOP_KEYS))
    if extra:
        raise ParseError(f"unknown field '{extra[0]}'")
    return build_run_config(raw, Path(path).parent)


def build_run_config(raw: dict, base: Path = Path(".")) -> RunConfig:
    g = _block(raw, "grid", GRID_KEYS, GRID_KEYS)
    cov = _block(raw, "covariance", COV_KEYS, ("beta",))
    co = _block(raw, "coefficients", required=("name",))
    ini = _block(raw, "initial_data", required=("name",))
    sc = _block(raw, "scale", ("theta",))
    ex = _block(raw, "experiment", required=("name",))

    name = ex.pop("name")
    if name not in EXPERIMENT_NAMES:
        raise ParseError(f"field 'experiment.name': unknown experiment {name!r}; expected one of {EXPERIMENT_NAMES}")
    defaults = EXPERIMENT_DEFAULTS[name]
    extra = sorted(set(ex) - set(defaults))
    if extra:
        raise ParseError(f"unknown field 'experiment.{extra[0]}' for {name}")
    params = {**defaults, **ex}

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ParseError("field 'seed' must be an integer in [0, 2**64)")
    workers = raw.get("workers", 1)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise ParseError("field 'workers' must be a positive integer")
    out = os.environ.get(OUTPUT_ENV) or raw.get("output_dir") or "output"
    out = Path(out)
    if not out.is_absolute():
        out = base / out

    try:
        grid = make_grid(int(g["dim"]), int(g["n"]), float(g["L"]), float(g["dt"]), int(g["nt"]))
        spec = CovarianceSpec(dim=grid.dim, **{k: (float(v) if k != "taper" else v) for k, v in cov.items()})
        coeffs = make_coeffs(co.pop("name"), co)
        init = make_initial_data(ini.pop("name"), ini)
        scale = DeviationScale(float(sc.get("theta", 0.25)))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ParseError(f"invalid value: {exc}") from None
    cfg = validate_config(grid, spec, coeffs, init, scale, experiments=(name,))
    return RunConfig(cfg, name, params, seed, out, workers, raw)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _probe(cfg: Config, params: dict) -> tuple[int, tuple[int, ...]]:
    g = cfg.grid
    t = g.nt if params.get("t_index") is None else int(params["t_index"])
    x = params.get("x_index")
    x = (g.n // 2,) * g.dim if x is None else tuple(int(i) for i in np.atleast_1d(x))
    return t, x


def _mode_field(cfg: Config, mode, amp: float) -> np.ndarray:
    g = cfg.grid
    k = np.atleast_1d(mode)
    arg = sum(float(ki) * xi for ki, xi in zip(k, g.coords))
    return amp * np.cos(2 * np.pi * arg / g.L) * np.ones(g.shape)


def execute(rc: RunConfig) -> list[str]:
    """Run the experiment, write its files into ``rc.output_dir``; returns the file names."""
    cfg, p, out, seed = rc.config, rc.params, rc.output_dir, rc.seed
    out.mkdir(parents=True, exist_ok=True)
    h = rc.fingerprint
    name = rc.experiment

    if name == "simulate":
        path = solve_spde(cfg, float(p["eps"]), sample_noise_path(cfg.measure, cfg.grid.dt, seed, int(p["sample_id"])))
        write_trace(out / "trace.csv", path)
        files = ["trace.csv"]
        if p["dump_path"]:
            write_path_binary(out / "path.bin", path)
            files.append("path.bin")
        write_json(out / "summary.json", dict(experiment=name, eps=float(p["eps"]), sample_id=int(p["sample_id"]),
                                              sup_abs=float(np.max(np.abs(path.values)))), h, seed)
        return files + ["summary.json"]

    if name == "clt":
        results = [mc_moment(cfg, float(e), float(p["p"]), int(p["n_samples"]), p["quantity"], seed, rc.workers)
                   for e in p["eps"]]
        write_csv(out / "moments.csv", [r.row() for r in results],
                  ["quantity", "eps", "p", "n_samples", "estimate", "se"])
        fit = fit_rate(results)
        write_json(out / "ratefit.json", dict(experiment=name, quantity=p["quantity"], p=float(p["p"]),
                                              expected_slope=float(p["p"]) / 2, **fit.to_json()), h, seed)
        return ["moments.csv", "ratefit.json"]

    if name == "mdp-rate":
        t, x = _probe(cfg, p)
        res = rate_function(cfg, TargetSpec.point(t, x, float(p["r"])), tol=float(p["tol"]))
        body = dict(experiment=name, t_index=t, x_index=list(x), r=float(p["r"]), **res.to_json(h))
        if cfg.coeffs.sigma_constant and cfg.coeffs.b_affine:
            body["oracle"] = gaussian_point_rate(cfg, t, x, float(p["r"]))
        write_json(out / "rate.json", body, h, seed)
        files = ["rate.json"]
        if p["dump_minimizer"]:
            res.dump_minimizer(out / "minimizer.bin")
            files.append("minimizer.bin")
        return files

    if name == "mdp-tail":
        t, x = _probe(cfg, p)
        est = tail_probability(cfg, float(p["eps"]), float(p["r"]), int(p["n_samples"]), (t, x), p["theta"],
                               seed, rc.workers)
        write_csv(out / "tail.csv", [est.to_json()],
                  ["eps", "theta", "r", "n_samples", "count", "probability", "se", "normalized",
                   "predicted_probability", "predicted_rate"])
        write_json(out / "tail.json", dict(experiment=name, t_index=t, x_index=list(x), **est.to_json()), h, seed)
        return ["tail.csv", "tail.json"]

    if name == "noise-check":
        tests = []
        for i, m in enumerate(p["modes"]):
            f = _mode_field(cfg, m, 1.0)
            tests.append((f"mode{i}-mode{i}", f, f))
            for j in range(i + 1, len(p["modes"])):
                tests.append((f"mode{i}-mode{j}", f, _mode_field(cfg, p["modes"][j], 1.0)))
        report = covariance_check(cfg.spec, cfg.grid, int(p["n_samples"]), tests, seed)
        write_covariance_csv(out / "covariance.csv", report)
        write_json(out / "summary.json", dict(experiment=name, n_samples=int(p["n_samples"]),
                                              all_passed=all(r["passed"] for r in report)), h, seed)
        return ["covariance.csv", "summary.json"]

    if name == "holder":
        eps = None if p["eps"] is None else float(p["eps"])
        est = holder_estimate(cfg, eps, float(p["p"]), int(p["n_samples"]), p["axis"], seed, workers=rc.workers)
        write_csv(out / "holder.csv", [dict(separation=s, moment=m) for s, m in zip(est.separations, est.moments)],
                  ["separation", "moment"])
        write_json(out / "holder.json", dict(experiment=name, eps=eps, **est.to_json()), h, seed)
        return ["holder.csv", "holder.json"]

    # weak-continuity
    hctl = Control.from_physical(cfg.measure, _mode_field(cfg, p["control_mode"], float(p["control_amp"])))
    g = _mode_field(cfg, p["profile_mode"], float(p["profile_amp"]))
    rep = weak_continuity_check(cfg, hctl, g, p["modes"], float(p["tolerance"]))
    write_csv(out / "weak.csv", [dict(j=j, distance=d) for j, d in zip(rep.modes, rep.distances)], ["j", "distance"])
    write_json(out / "weak.json", dict(experiment=name, **rep.to_json()), h, seed)
    return ["weak.csv", "weak.json"]


def run(config_path: str | Path, stderr=None) -> int:
    """Validate and execute one config; writes outputs plus ``manifest.json``."""
    stderr = stderr or sys.stderr
    try:
        rc = load_config(config_path)
    except ParseError as exc:
        print(f"config error: {exc}", file=stderr)
        return 2
    except ConfigError as exc:
        print(f"hypothesis violated: {exc}", file=stderr)
        return 3
    start = datetime.now(timezone.utc).isoformat()
    try:
        files = execute(rc)
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=stderr)
        return 4
    except ConfigError as exc:
        print(f"hypothesis violated: {exc}", file=stderr)
        return 3
    except ValueError as exc:
        print(f"experiment '{rc.experiment}' failed: {exc}", file=stderr)
        return 2
    end = datetime.now(timezone.utc).isoformat()
    manifest = dict(
        schema_version=SCHEMA_VERSION,
        tool_version=__version__,
        config_hash=rc.fingerprint,
        experiment=rc.experiment,
        seed=rc.seed,
        started=start,
        finished=end,
        files=[dict(name=f, sha256=_sha256(rc.output_dir / f)) for f in files],
    )
    (rc.output_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 0


def verify_manifest(output_dir: str | Path) -> bool:
    """True when every file listed in the manifest still matches its checksum."""
    out = Path(output_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    return all(_sha256(out / f["name"]) == f["sha256"] for f in manifest["files"])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="stochwave", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list experiments")
    pv = sub.add_parser("validate", help="parse and validate a config without running it")
    pv.add_argument("config")
    pr = sub.add_parser("run", help="run the experiment described by a config")
    pr.add_argument("config")
    args = ap.parse_args(argv)

    if args.command == "list":
        for e in list_experiments():
            print(f"{e['name']:<16} {e['description']} [{e['anchor']}]")
        return 0
    if args.command == "validate":
        try:
            rc = load_config(args.config)
        except ParseError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        except ConfigError as exc:
            print(f"hypothesis violated: {exc}", file=sys.stderr)
            return 3
        print(f"ok: {rc.experiment} config {rc.fingerprint[:12]}")
        return 0
    return run(args.config)


if __name__ == "__main__":
    sys.exit(main())
