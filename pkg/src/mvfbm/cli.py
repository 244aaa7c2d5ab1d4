"""Command line: ``mvfbm <experiment> --config path [--section.key=value ...]``.

Config is an INI file with [model], [simulation], [experiment] and [output]
sections; any key can be overridden on the command line one-for-one
(``--sim.seed=7``).  Exit codes: 0 all pass flags true, 1 a pass flag is
false, 2 config error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import configparser
import inspect
import os
import sys
import time

from ._parallel import resolve_workers
from .experiments import EXPERIMENTS, RunSettings
from .fbm import FactorizationError
from .grid import validate_hurst
from .models import PRESETS, make_model
from .reporting import config_hash, write_manifest, write_report
from .sensitivity import GramianError
from .solver import NonFiniteStateError


class ConfigError(ValueError):
    pass


_SECTION_ALIASES = {
    "model": "model",
    "sim": "simulation",
    "simulation": "simulation",
    "exp": "experiment",
    "experiment": "experiment",
    "out": "output",
    "output": "output",
}

_DEFAULTS = {
    "model": {"preset": "linear-meanfield"},
    "simulation": {
        "hurst": "0.75", "horizon": "1.0", "n_steps": "128",
        "n_particles": "4000", "n_paths": "4000", "seed": "12345",
    },
    "experiment": {"name": "validate"},
    "output": {"directory": "out", "formats": "csv,json", "plots": "true"},
}


def load_config(path: str | None, overrides: list[str], experiment: str | None) -> dict:
    """Merge defaults, the INI file and CLI overrides into a plain dict."""
    cfg = {sec: dict(vals) for sec, vals in _DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            key = _SECTION_ALIASES.get(section.lower())
            if key is None:
                raise ConfigError(f"unknown config section [{section}]")
            cfg[key].update({k: v for k, v in parser.items(section)})
    for ov in overrides:
        body = ov[2:] if ov.startswith("--") else ov
        if "=" not in body or "." not in body.split("=", 1)[0]:
            raise ConfigError(f"override must look like --section.key=value, got {ov!r}")
        dotted, value = body.split("=", 1)
        section, key = dotted.split(".", 1)
        sec = _SECTION_ALIASES.get(section.lower())
        if sec is None:
            raise ConfigError(f"unknown override section {section!r} in {ov!r}")
        cfg[sec][key] = value
    if experiment is not None:
        cfg["experiment"]["name"] = experiment
    return cfg


def validate_config(cfg: dict) -> tuple[RunSettings, str]:
    sim = cfg["simulation"]
    try:
        hurst = validate_hurst(float(sim["hurst"]))
    except ValueError as exc:
        raise ConfigError(f"[simulation] hurst: {exc}") from None
    try:
        n_steps = int(sim["n_steps"])
    except ValueError:
        raise ConfigError(f"[simulation] n_steps must be an integer, got {sim['n_steps']!r}") from None
    if n_steps < 16:
        raise ConfigError(f"[simulation] n_steps must be >= 16, got {n_steps}")
    name = cfg["experiment"]["name"]
    if name not in EXPERIMENTS:
        raise ConfigError(
            f"[experiment] name must be one of {sorted(EXPERIMENTS)}, got {name!r}"
        )
    preset = cfg["model"].get("preset", "")
    if preset not in PRESETS:
        raise ConfigError(f"[model] preset must be one of {sorted(PRESETS)}, got {preset!r}")
    try:
        settings = RunSettings(
            hurst=hurst,
            horizon=float(sim["horizon"]),
            n_steps=n_steps,
            n_particles=int(sim["n_particles"]),
            n_paths=int(sim["n_paths"]),
            seed=int(sim["seed"]),
        )
    except ValueError as exc:
        raise ConfigError(f"[simulation] {exc}") from None
    if settings.horizon <= 0:
        raise ConfigError("[simulation] horizon must be positive")
    return settings, name


def build_model(cfg: dict):
    model_cfg = dict(cfg["model"])
    preset = model_cfg.pop("preset")
    model_cfg.pop("kind", None)
    fn = PRESETS[preset]
    accepted = set(inspect.signature(fn).parameters)
    params = {}
    for key, val in model_cfg.items():
        if key not in accepted:
            raise ConfigError(f"[model] preset {preset!r} does not take parameter {key!r}")
        params[key] = float(val)
    return make_model(preset, **params)


def run(cfg: dict, workers: int, plots: bool) -> int:
    settings, name = validate_config(cfg)
    settings = RunSettings(**{**settings.__dict__, "workers": workers})
    model = build_model(cfg)

    outdir = cfg["output"]["directory"]
    os.makedirs(outdir, exist_ok=True)
    plots = plots and cfg["output"].get("plots", "true").lower() not in ("0", "false", "no")

    started = time.time()
    try:
        payload = EXPERIMENTS[name](model, settings, dict(cfg["experiment"]), outdir, plots)
    except (NonFiniteStateError, FactorizationError, GramianError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    payload["config_hash"] = config_hash(cfg)
    report_path = write_report(outdir, payload)
    write_manifest(outdir, cfg, {
        "experiment": name,
        "model": model.name,
        "workers": workers,
        "elapsed_seconds": round(time.time() - started, 3),
        "report": os.path.basename(report_path),
    })
    ok = bool(payload.get("pass", True))
    print(f"{name}: {'PASS' if ok else 'FAIL'} -> {report_path}")
    if name == "validate":
        for check in payload["checks"]:
            print(f"  [{'PASS' if check['pass'] else 'FAIL'}] {check['name']}: {check['detail']}")
    return 0 if ok else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mvfbm",
        description="Mean-field SDEs driven by fractional Brownian motion: "
                    "simulation and measure-derivative estimation",
    )
    parser.add_argument("experiment", nargs="?", choices=sorted(EXPERIMENTS),
                        help="experiment to run (overrides the config)")
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker count (MVFBM_WORKERS env as fallback); results do not depend on it")
    parser.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    args, extra = parser.parse_known_args(argv)

    try:
        cfg = load_config(args.config, extra, args.experiment)
        code = run(cfg, resolve_workers(args.workers), not args.no_plots)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return code


if __name__ == "__main__":
    sys.exit(main())
