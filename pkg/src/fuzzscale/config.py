"""Campaign configuration: JSON document, schema, defaults and validation."""

from __future__ import annotations

import copy
import json
import os
import shutil
from pathlib import Path

import jsonschema

from fuzzscale.bandit import BanditParams
from fuzzscale.engine import DEFAULT_GAMMA_PERIOD, POLICY_NAMES, Policy, make_policy
from fuzzscale.executor import render_command
from fuzzscale.simulator import WorkloadSpec

MIN_SLICE_MS = 50

_range = {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2, "maxItems": 2}
_prob = {"type": "number", "minimum": 0, "exclusiveMaximum": 1}
_gamma = {"type": "number", "exclusiveMinimum": 0, "maximum": 1}

WORKLOAD_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "c_max_range": _range,
        "tau_range": _range,
        "noise_amp": _prob,
        "noise_corr": {"type": "number", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "id_prefix": {"type": "string"},
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["cores", "duration_slices", "output_dir", "policy", "backend"],
    "properties": {
        "name": {"type": "string"},
        "cores": {"type": "integer", "minimum": 1},
        "slice_ms": {"type": "integer", "minimum": MIN_SLICE_MS},
        "duration_slices": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string", "minLength": 1},
        "policy": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": list(POLICY_NAMES)},
                "epsilon": _prob,
                "gamma": _gamma,
                "gamma_cycle": {"type": "array", "items": _gamma, "minItems": 1},
                "epsilon_min": _prob,
                "epsilon_max": _prob,
                "gamma_period": {"type": "integer", "minimum": 1},
                "epsilon_horizon": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "backend": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["simulated", "real"]}},
            "oneOf": [
                {
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"const": "simulated"},
                        "workload": WORKLOAD_SCHEMA,
                        "workload_file": {"type": "string"},
                    },
                },
                {
                    "additionalProperties": False,
                    "required": ["programs"],
                    "properties": {
                        "kind": {"const": "real"},
                        "programs": {
                            "type": "array",
                            "minItems": 1,
                            "items": {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["id", "command"],
                                "properties": {
                                    "id": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                                    "command": {"type": "string", "minLength": 1},
                                    "target_binary": {"type": "string"},
                                    "target_args": {"type": "string"},
                                    "input_dir": {"type": "string"},
                                    "workdir": {"type": "string"},
                                },
                            },
                        },
                        "stats": {
                            "type": "object",
                            "additionalProperties": False,
                            "properties": {
                                "path_template": {"type": "string"},
                                "counter_key": {"type": "string"},
                            },
                        },
                        "limits": {
                            "type": "object",
                            "additionalProperties": False,
                            "properties": {
                                "rss_limit_bytes": {"type": ["integer", "null"], "minimum": 1},
                                "max_descendants": {"type": ["integer", "null"], "minimum": 0},
                                "cpu_share_limit": {"type": ["number", "null"], "exclusiveMinimum": 0},
                            },
                        },
                        "cpu_set": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                        "sweep_s": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            ],
        },
        "triage": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tracer": {"type": "string"},
                "timeout_s": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}

POLICY_DEFAULTS = {
    "round_robin": {},
    "simple_mab": {"epsilon": 0.1},
    "discounted_mab": {"epsilon": 0.1, "gamma": 0.9},
    "boian": {
        "gamma_cycle": [0.9, 0.99, 0.999],
        "epsilon_min": 0.01,
        "epsilon_max": 0.75,
        "gamma_period": DEFAULT_GAMMA_PERIOD,
        "epsilon_horizon": None,
    },
}

DEFAULT_STATS = {"path_template": "{campaign}/{program_id}/fuzzer_out/default/fuzzer_stats", "counter_key": "edges_found"}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError([f"<file>: {exc}"]) from exc


def _path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    return ".".join(parts) or "<root>"


def policy_section(config: dict, name: str | None = None) -> dict:
    """Policy settings with per-policy defaults filled in."""
    section = dict(config.get("policy", {}))
    name = name or section.get("name")
    merged = {**POLICY_DEFAULTS.get(name, {}), **{k: v for k, v in section.items() if k != "name"}}
    merged["name"] = name
    return merged


def bandit_params(section: dict) -> BanditParams:
    gammas = tuple(section.get("gamma_cycle", (0.9, 0.99, 0.999)))
    gamma = section.get("gamma", 1.0)
    if section["name"] == "boian":
        eps_min = section.get("epsilon_min", 0.01)
        eps_max = section.get("epsilon_max", 0.75)
        return BanditParams(eps_min, gamma, gammas, eps_min, eps_max)
    # ramp bounds only matter for boian
    epsilon = section.get("epsilon", 0.1)
    return BanditParams(epsilon, gamma, gammas, 0.0, max(0.75, epsilon))


def build_policy(config: dict, name: str | None = None) -> Policy:
    section = policy_section(config, name)
    horizon = section.get("epsilon_horizon") or config["duration_slices"]
    return make_policy(
        section["name"],
        bandit_params(section),
        horizon=horizon,
        gamma_period=section.get("gamma_period", DEFAULT_GAMMA_PERIOD),
    )


def workload_spec(config: dict, base_dir: Path | None = None) -> WorkloadSpec:
    backend = config["backend"]
    if "workload_file" in backend:
        path = Path(backend["workload_file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return WorkloadSpec.load(path)
    return WorkloadSpec.from_dict(backend.get("workload", {}))


def validate(config: dict, policies: list[str] | None = None, base_dir: Path | None = None) -> list[str]:
    """Every problem with ``config`` as ``"field.path: message"`` strings; empty if valid.

    Side-effect free. ``policies`` lists policy names the run will use when it
    differs from ``config["policy"]["name"]``.
    """
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = []
    for err in sorted(validator.iter_errors(config), key=lambda e: list(map(str, e.absolute_path))):
        if err.validator == "oneOf" and isinstance(config.get("backend"), dict):
            # report what is wrong for the backend kind the user picked
            kind = config["backend"].get("kind")
            branch = 0 if kind == "simulated" else 1
            sub = jsonschema.Draft202012Validator(CONFIG_SCHEMA["properties"]["backend"]["oneOf"][branch])
            for e in sub.iter_errors(config["backend"]):
                errors.append(f"backend.{_path(e)}: {e.message}" if e.absolute_path else f"backend: {e.message}")
            continue
        errors.append(f"{_path(err)}: {err.message}")
    if errors:
        return errors

    names = policies or [config["policy"]["name"]]
    for name in names:
        if name not in POLICY_NAMES:
            errors.append(f"policy.name: unknown policy {name!r}")
            continue
        try:
            bandit_params(policy_section(config, name))
        except ValueError as exc:
            errors.append(f"policy: {exc}")

    backend = config["backend"]
    if backend["kind"] == "simulated":
        if "workload" in backend and "workload_file" in backend:
            errors.append("backend: give either workload or workload_file, not both")
        try:
            workload_spec(config, base_dir)
        except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
            field = "backend.workload_file" if "workload_file" in backend else "backend.workload"
            errors.append(f"{field}: {exc}")
    else:
        errors.extend(_validate_real(config, names))

    out = Path(config["output_dir"])
    if out.exists() and not out.is_dir():
        errors.append(f"output_dir: {out} exists and is not a directory")
    return errors


def _validate_real(config: dict, policies: list[str]) -> list[str]:
    errors = []
    backend = config["backend"]
    if len(policies) != 1:
        errors.append("policy.name: a real campaign runs exactly one policy")
    seen = set()
    for i, prog in enumerate(backend["programs"]):
        where = f"backend.programs.{i}"
        if prog["id"] in seen:
            errors.append(f"{where}.id: duplicate program id {prog['id']!r}")
        seen.add(prog["id"])
        try:
            argv = render_command(
                prog["command"],
                input_dir=prog.get("input_dir", ""),
                output_dir="out",
                target_binary=prog.get("target_binary", ""),
                target_args=prog.get("target_args", ""),
                program_id=prog["id"],
            )
        except (KeyError, IndexError, ValueError) as exc:
            errors.append(f"{where}.command: cannot render template ({exc!r})")
            continue
        if not argv:
            errors.append(f"{where}.command: renders to an empty command")
        elif shutil.which(argv[0]) is None:
            errors.append(f"{where}.command: {argv[0]!r} is not an executable")
        binary = prog.get("target_binary")
        if binary and not os.access(binary, os.X_OK):
            errors.append(f"{where}.target_binary: {binary!r} is not executable")
        for key in ("input_dir", "workdir"):
            if prog.get(key) and not Path(prog[key]).is_dir():
                errors.append(f"{where}.{key}: {prog[key]!r} is not a directory")
    cpu_set = backend.get("cpu_set")
    if cpu_set is not None:
        allowed = os.sched_getaffinity(0)
        bad = sorted(set(cpu_set) - allowed)
        if bad:
            errors.append(f"backend.cpu_set: cores {bad} are not available (allowed {sorted(allowed)})")
    stats = {**DEFAULT_STATS, **backend.get("stats", {})}
    try:
        stats["path_template"].format(campaign="c", program_id="p")
    except (KeyError, IndexError, ValueError) as exc:
        errors.append(f"backend.stats.path_template: cannot render template ({exc!r})")
    return errors


def apply_overrides(config: dict, **overrides) -> dict:
    """Copy of ``config`` with non-None top-level and policy overrides applied."""
    cfg = copy.deepcopy(config)
    for key in ("cores", "slice_ms", "duration_slices", "seed", "output_dir"):
        if overrides.get(key) is not None:
            cfg[key] = overrides[key]
    for key in ("epsilon", "gamma"):
        if overrides.get(key) is not None:
            cfg.setdefault("policy", {})[key] = overrides[key]
    return cfg
