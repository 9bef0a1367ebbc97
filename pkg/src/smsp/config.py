"""TOML scenario configuration.

Sections and keys (all optional, defaults from :class:`ScenarioConfig`)::

    [system]   areas, inertia, damping, lines, tie_line_gains, dt,
               noise_w, noise_v, true_mode, horizon, seed, initial_box,
               attack_bound, region_theta, region_freq, region_attack
    [modes]    "<id>" = [[i, l], ...]   severed tie lines per mode
    [observer] any UpdateConfig field
    [policy]   name, lipschitz, initial_samples
    [output]   dir

Noise and initial boxes accept a scalar half-width, a list of half-widths,
or a ``[lo_list, hi_list]`` pair.  Unknown sections or keys are rejected.
"""

from __future__ import annotations

import dataclasses
import sys
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .interval import IntervalVector
from .observer import UpdateConfig
from .scenario import PowerNetModel, ScenarioConfig


class ConfigError(ValueError):
    """Invalid configuration file or value."""


_SYSTEM_MODEL = {"areas", "inertia", "damping", "lines", "tie_line_gains", "dt", "noise_w", "noise_v"}
_SYSTEM_SCENARIO = {"true_mode", "horizon", "seed", "initial_box", "attack_bound", "region_theta", "region_freq", "region_attack"}
_POLICY = {"name", "lipschitz", "initial_samples"}
_OUTPUT = {"dir"}
# the input bound comes from [system] attack_bound
_OBSERVER = {f.name for f in dataclasses.fields(UpdateConfig)} - {"input_bound"}
_SECTIONS = {"system", "modes", "observer", "policy", "output"}


def _reject_unknown(section: str, table: dict, allowed: set) -> None:
    extra = sorted(set(table) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(extra)}")


def _box(value: Any, dim: int, name: str) -> IntervalVector:
    if np.isscalar(value):
        return IntervalVector.symmetric(np.full(dim, float(value)))
    arr = np.asarray(value, dtype=float)
    if arr.shape == (dim,):
        return IntervalVector.symmetric(arr)
    if arr.shape == (2, dim):
        return IntervalVector(arr[0], arr[1])
    raise ConfigError(f"{name} must be a scalar, {dim} half-widths or a [lo, hi] pair of length-{dim} lists")


def _pair(value: Any, name: str) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{name} must be a [lo, hi] pair")
    lo, hi = float(value[0]), float(value[1])
    if lo > hi:
        raise ConfigError(f"{name} has lo > hi")
    return lo, hi


def from_dict(data: dict) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from parsed TOML tables."""
    _reject_unknown("top level", data, _SECTIONS)
    system = data.get("system", {})
    _reject_unknown("system", system, _SYSTEM_MODEL | _SYSTEM_SCENARIO)
    policy = data.get("policy", {})
    _reject_unknown("policy", policy, _POLICY)
    observer = data.get("observer", {})
    _reject_unknown("observer", observer, _OBSERVER)
    output = data.get("output", {})
    _reject_unknown("output", output, _OUTPUT)
    try:
        areas = int(system.get("areas", 3))
        n = 2 * areas
        model_kw = {k: system[k] for k in ("inertia", "damping", "tie_line_gains", "dt") if k in system}
        if "lines" in system:
            model_kw["lines"] = [tuple(ln) for ln in system["lines"]]
        for key in ("noise_w", "noise_v"):
            if key in system:
                model_kw[key] = _box(system[key], n, key)
        if "name" in policy:
            model_kw["policy"] = policy["name"]
        model = PowerNetModel(areas=areas, **model_kw)
        if "modes" in data:
            model = dataclasses.replace(model, modes=_modes(data["modes"], model.lines))
        kw = {"model": model, "observer": UpdateConfig(**observer)}
        for key in ("true_mode", "horizon", "seed"):
            if key in system:
                kw[key] = _int(system[key], key)
        if "attack_bound" in system:
            kw["attack_bound"] = float(system["attack_bound"])
        if "initial_box" in system:
            kw["initial_box"] = _box(system["initial_box"], n, "initial_box")
        for key in ("region_theta", "region_freq", "region_attack"):
            if key in system:
                kw[key] = _pair(system[key], key)
        if "lipschitz" in policy:
            kw["lipschitz"] = policy["lipschitz"]
        if "initial_samples" in policy:
            kw["initial_policy_samples"] = _int(policy["initial_samples"], "initial_samples")
        if "dir" in output:
            kw["output"] = str(output["dir"])
        return ScenarioConfig(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _int(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer")
    return value


def _modes(table: dict, lines: list) -> dict:
    index = {tuple(sorted(ln)): k for k, ln in enumerate(lines)}
    modes = {}
    for key, severed in table.items():
        try:
            q = int(key)
        except ValueError:
            raise ConfigError(f"mode id {key!r} is not an integer") from None
        cut = []
        for ln in severed:
            k = index.get(tuple(sorted(int(v) for v in ln)))
            if k is None:
                raise ConfigError(f"mode {q}: {list(ln)} is not a tie line")
            cut.append(k)
        modes[q] = tuple(sorted(cut))
    if len(set(modes.values())) != len(modes):
        raise ConfigError("two modes sever the same set of lines")
    return modes


def loads(text: str) -> ScenarioConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return from_dict(data)


def load(path) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return from_dict(data)
