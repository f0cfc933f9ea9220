"""Scenario files: schema validation and construction of runnable objects.

A scenario document names or inlines the plant, the design parameters, the
bank layout, and the simulation settings.  Documents are schema-validated
before anything is built; unknown keys are rejected.
"""

import dataclasses
import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .bank import BankConfig
from .design import UncertainSystem, design_gains, to_canonical
from .simlab import Scenario, mck_fault, mck_system


class ScenarioError(Exception):
    """Unreadable, unparsable, or schema-invalid scenario input."""


_MATRIX = {"type": "array",
           "items": {"type": "array", "items": {"type": "number"}}}
_VECTOR = {"type": "array", "items": {"type": "number"}}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["system", "design", "bank", "sim"],
    "properties": {
        "system": {
            "oneOf": [
                {"const": "mck"},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["A", "C", "D"],
                    "properties": {
                        "A": _MATRIX,
                        "B": {"oneOf": [_MATRIX, {"type": "null"}]},
                        "C": _MATRIX,
                        "D": _MATRIX,
                        "xi_bar": {"type": "number", "minimum": 0},
                    },
                },
            ]
        },
        "fault": {
            "oneOf": [
                {"enum": ["mck", "none"]},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["const"],
                    "properties": {"const": _VECTOR},
                },
            ]
        },
        "design": {
            "type": "object",
            "additionalProperties": False,
            "required": ["rho", "delta"],
            "properties": {
                "a11_poles": {
                    "type": "array",
                    "items": {"oneOf": [{"type": "number"}, _VECTOR]},
                },
                "j_override": _MATRIX,
                "a22s": _MATRIX,
                "q2": _MATRIX,
                "rho": {"type": "number", "exclusiveMinimum": 0},
                "delta": {"type": "number", "minimum": 0},
            },
        },
        "bank": {
            "type": "object",
            "additionalProperties": False,
            "required": ["mu"],
            "properties": {
                "initial_states": {"oneOf": [_MATRIX, {"const": "auto-hull"}]},
                "n_observers": {"type": "integer", "minimum": 2},
                "alpha0": _VECTOR,
                "mu": {"type": "number", "exclusiveMinimum": 0},
                "state_norm_bound": {"type": "number", "exclusiveMinimum": 0},
                "allow_degenerate": {"type": "boolean"},
            },
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "required": ["x0", "t_end", "dt"],
            "properties": {
                "x0": _VECTOR,
                "t_end": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "method": {"enum": ["rk4", "euler"]},
                "compare_single": {"type": "boolean"},
                "mu_list": _VECTOR,
            },
        },
    },
}


def bundled_scenario_path(name):
    """Path of a scenario shipped with the package (e.g. 'mck')."""
    return Path(resources.files("smobank.data") / f"{name}.json")


def resolve_scenario_path(arg):
    """Treat *arg* as a file path, falling back to a bundled scenario name."""
    path = Path(arg)
    if path.is_file():
        return path
    bundled = bundled_scenario_path(path.stem if path.suffix else str(path))
    if bundled.is_file():
        return bundled
    raise ScenarioError(f"scenario file not found: {arg}")


def load_document(path):
    """Read and schema-validate a scenario document."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path} is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(k) for k in exc.absolute_path) or "(top level)"
        raise ScenarioError(f"{path} failed validation at {where}: "
                            f"{exc.message}") from exc
    return doc


def build_system(doc):
    spec = doc["system"]
    if spec == "mck":
        return mck_system()
    a = np.asarray(spec["A"], dtype=float)
    b = spec.get("B")
    b = np.zeros((a.shape[0], 0)) if b is None else np.asarray(b, dtype=float)
    return UncertainSystem(
        A=a, B=b,
        C=np.asarray(spec["C"], dtype=float),
        D=np.asarray(spec["D"], dtype=float),
        xi_bar=float(spec.get("xi_bar", 0.0)),
    )


def build_fault(doc, system):
    spec = doc.get("fault", "mck" if doc["system"] == "mck" else "none")
    if spec == "none":
        return None
    if spec == "mck":
        return mck_fault
    const = np.asarray(spec["const"], dtype=float)
    if const.shape != (system.q,):
        raise ScenarioError(f"constant fault must have length {system.q}")

    def constant_fault(x):
        x = np.asarray(x)
        if x.ndim == 1:
            return const.copy()
        return np.broadcast_to(const, x.shape[:-1] + (system.q,)).copy()

    return constant_fault


def _parse_poles(raw):
    poles = []
    for item in raw:
        if isinstance(item, (int, float)):
            poles.append(complex(item))
        else:
            poles.append(complex(item[0], item[1]))
    return poles


def build_design(doc, system, seed=0):
    """Canonical form and gain set from the design section."""
    d = doc["design"]
    j_override = d.get("j_override")
    poles = _parse_poles(d["a11_poles"]) if "a11_poles" in d else None
    if j_override is None and poles is None:
        raise ScenarioError("design needs a11_poles unless j_override is given")
    cf = to_canonical(system, desired_a11_poles=poles,
                      j_override=j_override, seed=seed)
    a22s = np.asarray(d["a22s"], dtype=float) if "a22s" in d else None
    q2 = np.asarray(d["q2"], dtype=float) if "q2" in d else None
    delta = float(d["delta"])
    gains = design_gains(cf, a22s=a22s, q2=q2, rho=float(d["rho"]),
                         delta=delta if delta > 0 else 1.0)
    if delta == 0.0:
        gains = gains.with_delta(0.0)
    return cf, gains


def auto_hull_states(n, n_observers, radius):
    """Default observer initial states: the axis vertices +-r e_j followed by
    r (1, ..., 1), truncated to the requested count.  The full set of 2n+1
    points puts the origin strictly inside the hull; shorter truncations may
    be rejected as degenerate at bank initialization."""
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = radius
        cols.extend([e, -e])
    cols.append(np.full(n, radius))
    if n_observers > len(cols):
        raise ScenarioError(
            f"auto-hull provides at most {len(cols)} states for n={n}")
    return np.column_stack(cols[:n_observers])


def build_bank(doc, system):
    """(BankConfig, allow_degenerate) from the bank section."""
    b = doc["bank"]
    states_spec = b.get("initial_states", "auto-hull")
    if isinstance(states_spec, str):
        n_obs = int(b.get("n_observers", 2 * system.n + 1))
        bound = b.get("state_norm_bound")
        if bound is None:
            raise ScenarioError("auto-hull needs state_norm_bound")
        states = auto_hull_states(system.n, n_obs, 2.0 * float(bound))
    else:
        # one row per observer in the document; columns internally
        states = np.asarray(states_spec, dtype=float).T
        n_obs = states.shape[1]
        if "n_observers" in b and int(b["n_observers"]) != n_obs:
            raise ScenarioError("n_observers disagrees with initial_states")
    alpha0 = np.asarray(b["alpha0"], dtype=float) if "alpha0" in b \
        else np.full(n_obs - 1, 1.0 / n_obs)
    try:
        cfg = BankConfig(initial_states=states, alpha0=alpha0,
                         mu=float(b["mu"]))
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    return cfg, bool(b.get("allow_degenerate", False))


def build_scenario(doc, dt=None, mu=None, mu_list=None, seed=0):
    """Assemble a runnable Scenario from a validated document.

    dt / mu / mu_list override the corresponding document entries (CLI
    flags map here).
    """
    system = build_system(doc)
    cf, gains = build_design(doc, system, seed=seed)
    cfg, allow_degenerate = build_bank(doc, system)
    if mu is not None:
        cfg = dataclasses.replace(cfg, mu=float(mu))
    sim = doc["sim"]
    x0 = np.asarray(sim["x0"], dtype=float)
    if x0.shape != (system.n,):
        raise ScenarioError(f"x0 must have length {system.n}")
    return Scenario(
        system=system,
        gains=gains,
        bank=cfg,
        x0=x0,
        fault=build_fault(doc, system),
        t_end=float(sim["t_end"]),
        dt=float(dt if dt is not None else sim["dt"]),
        method=sim.get("method", "rk4"),
        compare_single=bool(sim.get("compare_single", False)),
        mu_list=list(mu_list if mu_list is not None
                     else sim.get("mu_list", [])),
        allow_degenerate=allow_degenerate,
        canonical=cf,
    )
