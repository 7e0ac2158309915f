"""Command-line front end: config parsing, dispatch, report emission.

Configs are flat ``key = value`` text files (UTF-8, lists as
comma-separated values), so reports are bit-reproducible from the file
alone.  Each experiment carries its expected verdict class; the exit
code asserts it: 0 on match, 2 on mismatch, 1 on usage/config errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import gconv
from .matlaw import load_kernel_file
from .timeaxis import TimeGrid

__all__ = ["main", "run", "list_experiments", "ExperimentConfig", "ConfigError"]


class ConfigError(ValueError):
    pass


_INT_KEYS = {"steps", "cells", "batch", "order", "seed"}
_FLOAT_KEYS = {"nu", "dt", "lam", "a_const", "tol"}
_INT_LIST_KEYS = {"n_values"}
_FLOAT_LIST_KEYS = {"eps_values"}
_STR_KEYS = {"experiment", "rho", "b", "kernel_file", "out_dir"}
_ALL_KEYS = _INT_KEYS | _FLOAT_KEYS | _INT_LIST_KEYS | _FLOAT_LIST_KEYS | _STR_KEYS


class Registry:
    def __init__(self):
        self.entries = {}

    def add(self, name, runner, expected, keys, description):
        self.entries[name] = {
            "runner": runner,
            "expected": expected,
            "keys": set(keys) | {"experiment", "out_dir", "seed"},
            "description": description,
        }


_REGISTRY = Registry()
_COMMON = ("nu", "dt", "steps")
_REGISTRY.add(
    "mixed_type", gconv.experiment_mixed_type, "confirms",
    _COMMON + ("cells", "n_values"),
    "oscillating two-phase blocks averaging to 1/2 in a hyperbolic/parabolic/elliptic mix",
)
_REGISTRY.add(
    "mixed_type_convolution", gconv.experiment_mixed_type_convolution, "confirms",
    _COMMON + ("cells", "n_values", "kernel_file"),
    "same mix wrapped by norm-convergent causal convolutions (1 + k_n*)",
)
_REGISTRY.add(
    "mixed_type_timedep", gconv.experiment_mixed_type_timedep, "confirms",
    _COMMON + ("cells", "n_values"),
    "same mix modulated by strongly convergent Lipschitz time factors",
)
_REGISTRY.add(
    "commutator_counterexample", gconv.counterexample_commutator, "refutes",
    _COMMON + ("n_values",),
    "time-oscillating coefficient with unbounded derivative-commutators; naive limit fails",
)
_REGISTRY.add(
    "compactness_counterexample", gconv.counterexample_compactness, "refutes",
    _COMMON + ("n_values", "batch"),
    "pointwise resolvent ladder without spatial compactness; limit is the resolvent mean",
)
_REGISTRY.add(
    "kelvin_voigt", gconv.experiment_kelvin_voigt, "confirms",
    _COMMON + ("cells", "n_values", "order", "rho", "b", "a_const"),
    "projected visco-elastic flux; two-phase ladder homogenizes to the harmonic mean",
)
_REGISTRY.add(
    "wave_1d", gconv.experiment_wave_1d, "confirms",
    _COMMON + ("cells", "n_values"),
    "first-order wave ladder; limit flux is the reciprocal of the coefficient mean",
)
_REGISTRY.add(
    "singular_perturbation", gconv.experiment_singular_perturbation, "confirms",
    _COMMON + ("cells", "eps_values", "lam"),
    "vanishing parabolic scale with delayed memory collapsing to an elliptic-type system",
)
_REGISTRY.add(
    "weak_strong", gconv.experiment_weak_strong, "confirms",
    _COMMON + ("n_values", "batch", "tol"),
    "product of weak limits under causality and derivative bounds, plus a resonance violation",
)


class ExperimentConfig:
    """Typed flat key=value configuration for one experiment run."""

    def __init__(self, values):
        self.values = dict(values)
        if "experiment" not in self.values:
            raise ConfigError("config must set 'experiment'")
        name = self.values["experiment"]
        if name not in _REGISTRY.entries:
            known = ", ".join(sorted(_REGISTRY.entries))
            raise ConfigError(f"unknown experiment '{name}'; known: {known}")
        allowed = _REGISTRY.entries[name]["keys"]
        for key in self.values:
            if key not in allowed:
                raise ConfigError(f"key '{key}' is not valid for experiment '{name}'")
        self.validate()

    @property
    def experiment(self):
        return self.values["experiment"]

    def validate(self):
        v = self.values
        for key in ("nu", "dt"):
            if key in v and not v[key] > 0:
                raise ConfigError(f"{key} must be positive, got {v[key]}")
        if "steps" in v and v["steps"] < 2:
            raise ConfigError("steps must be at least 2")
        name = self.experiment
        n_vals = v.get("n_values")
        cells = v.get("cells")
        if name in ("mixed_type", "mixed_type_convolution", "mixed_type_timedep",
                    "kelvin_voigt", "wave_1d") and n_vals and cells:
            if cells % (4 * max(n_vals)) != 0:
                raise ConfigError(
                    f"cells={cells} must be a multiple of 4*max(n_values)={4 * max(n_vals)}"
                )
        if name == "compactness_counterexample" and n_vals and "batch" in v:
            if v["batch"] % (2 * max(n_vals)) != 0:
                raise ConfigError(
                    f"batch={v['batch']} must be a multiple of 2*max(n_values)"
                )
        if name == "weak_strong" and n_vals and "batch" in v:
            if v["batch"] % (4 * max(n_vals)) != 0:
                raise ConfigError(
                    f"batch={v['batch']} must be a multiple of 4*max(n_values)"
                )
        if name == "singular_perturbation" and "eps_values" in v and "dt" in v:
            for eps in v["eps_values"]:
                ratio = eps / v["dt"]
                if abs(ratio - round(ratio)) > 1e-9:
                    raise ConfigError(f"eps={eps} is not an integer multiple of dt={v['dt']}")
        if "kernel_file" in v and not Path(v["kernel_file"]).exists():
            raise ConfigError(f"kernel file not found: {v['kernel_file']}")

    def serialize(self):
        lines = []
        for key in sorted(self.values):
            val = self.values[key]
            if isinstance(val, (list, tuple)):
                text = ",".join(_scalar_text(x) for x in val)
            else:
                text = _scalar_text(val)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    def runner_kwargs(self):
        v = dict(self.values)
        name = v.pop("experiment")
        v.pop("out_dir", None)
        kernel_path = v.pop("kernel_file", None)
        rename = {"rho": "rho_preset", "b": "b_preset"}
        kwargs = {rename.get(k, k): val for k, val in v.items()}
        if kernel_path is not None and name == "mixed_type_convolution":
            grid = TimeGrid(
                kwargs.get("nu", 1.0), kwargs.get("dt", 5e-3), kwargs.get("steps", 512)
            )
            kwargs["kernel"] = load_kernel_file(kernel_path, grid).values.real
        if "n_values" in kwargs:
            kwargs["n_values"] = tuple(kwargs["n_values"])
        if "eps_values" in kwargs:
            kwargs["eps_values"] = tuple(kwargs["eps_values"])
        return name, kwargs


def _scalar_text(val):
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    return str(val)


def _coerce(key, raw):
    raw = raw.strip()
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _INT_LIST_KEYS:
            return [int(p) for p in raw.split(",") if p.strip()]
        if key in _FLOAT_LIST_KEYS:
            return [float(p) for p in raw.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse value for '{key}': {raw!r}") from exc
    if key in _STR_KEYS:
        return raw
    raise ConfigError(f"unknown config key '{key}'")


def parse_config_text(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        values[key] = _coerce(key, raw)
    return values


def load_config(path):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"))


def list_experiments():
    lines = []
    width = max(len(n) for n in _REGISTRY.entries)
    for name in sorted(_REGISTRY.entries):
        e = _REGISTRY.entries[name]
        lines.append(f"{name:<{width}}  [{e['expected']}]  {e['description']}")
    return "\n".join(lines)


def write_outputs(report, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    with (out / "report.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["experiment", "n", "test_fn_index", "pairing_error", "oracle_gap"])
        writer.writerows(report.csv_rows())
    (out / "summary.txt").write_text(report.summary() + "\n", encoding="utf-8")
    return out


def run(experiment, config_path=None, out_dir=None, overrides=()):
    values = {}
    if config_path is not None:
        values.update(load_config(config_path))
    values["experiment"] = experiment
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"unknown config key '{key}'")
        values[key] = _coerce(key, raw)
    if out_dir is not None:
        values["out_dir"] = str(out_dir)
    cfg = ExperimentConfig(values)

    name, kwargs = cfg.runner_kwargs()
    entry = _REGISTRY.entries[name]
    report = entry["runner"](**kwargs)

    destination = cfg.values.get("out_dir", str(Path("reports") / name))
    out = write_outputs(report, destination)
    expected = entry["expected"]
    print(report.summary())
    print(f"expected verdict class: {expected}")
    print(f"reports written to {out}")
    if report.verdict == expected:
        return 0
    print(f"VERDICT MISMATCH: got '{report.verdict}', expected '{expected}'",
          file=sys.stderr)
    return 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    parser = _Parser(prog="evoconv", description=__doc__)
    sub = parser.add_subparsers(dest="command")
    runp = sub.add_parser("run", help="run one experiment and emit reports")
    runp.add_argument("experiment")
    runp.add_argument("--config", default=None, help="key = value config file")
    runp.add_argument("--out", default=None, help="output directory")
    runp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                      help="override a single config key")
    sub.add_parser("list", help="list experiments with expected verdict classes")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "list":
            print(list_experiments())
            return 0
        if args.command == "run":
            return run(args.experiment, config_path=args.config, out_dir=args.out,
                       overrides=args.set)
        parser.error("missing command (use 'run' or 'list')")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
