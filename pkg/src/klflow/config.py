"""Run configuration: YAML schema, validation and round-trip serialization.

A run file has five sections::

    flow:    {kind, tau, alpha, beta, steps, seed, injection, max_particles, ...}
    kernel:  {family: gaussian, sigma: 1.0} | {family: imq, c: 1.0, beta: 0.5}
    target:  {kind: gaussian, mean, covariance}
           | {kind: mixture, components: [{mean, covariance}, ...], weights}
           | {kind: empirical, csv: path, mass_column: false}
             (+ optional capabilities: [...], reference_samples: 500)
    init:    {n, kind: target | gaussian | mixture | csv, seed, ...}
    output:  {record_every: 1}

Relative CSV paths resolve against the config file's directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

import numpy as np
import yaml

from klflow.errors import (
    CapabilityError,
    CapabilityMismatchError,
    ConfigurationError,
    KLFlowError,
    ParseError,
)
from klflow.flow import FlowConfig, KINDS, check_capabilities
from klflow.kernel import KernelSpec
from klflow.measure import CAPABILITIES, Ensemble, Target, load_measure_csv, make_rng

SECTIONS = ("flow", "kernel", "target", "init", "output")
_FLOW_KEYS = tuple(f.name for f in fields(FlowConfig) if f.name != "kernel")
_INT_KEYS = {"steps", "seed", "injection", "max_particles", "jko_max_iter"}


@dataclass
class RunConfig:
    flow: FlowConfig
    target: dict
    init: dict
    output: dict = field(default_factory=lambda: {"record_every": 1})

    def to_dict(self):
        d = self.flow.to_dict()
        kernel = d.pop("kernel")
        return {"flow": d, "kernel": kernel, "target": dict(self.target),
                "init": dict(self.init), "output": dict(self.output)}

    def dumps(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def build_target(self) -> Target:
        return build_target(self.target)

    def build_init(self, target=None) -> Ensemble:
        return build_init(self.init, target if target is not None else self.build_target())


def _expect(section, key, value, kind):
    try:
        if kind is int:
            if isinstance(value, bool) or int(value) != value:
                raise ValueError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if kind is list:
            return np.asarray(value, dtype=float).tolist()
    except (TypeError, ValueError):
        pass
    raise ParseError(f"{section}.{key}", f"expected {kind.__name__}, got {value!r}")


def _section(raw, name, required=True):
    sec = raw.get(name)
    if sec is None:
        if required:
            raise ParseError(name, "missing section")
        return {}
    if not isinstance(sec, dict):
        raise ParseError(name, "section must be a mapping")
    return sec


def _unknown(section, d, allowed):
    extra = set(d) - set(allowed)
    if extra:
        raise ParseError(f"{section}.{sorted(extra)[0]}", "unknown field")


def _gaussian_fields(section, d):
    out = {}
    for key in ("mean", "covariance"):
        if key not in d:
            raise ParseError(f"{section}.{key}", "required")
        out[key] = _expect(section, key, d[key], list)
    mean = np.atleast_1d(out["mean"])
    out["mean"] = mean.tolist()
    out["covariance"] = np.atleast_2d(out["covariance"]).tolist()
    return out


def _csv_path(section, d, base_dir):
    if "csv" not in d:
        raise ParseError(f"{section}.csv", "required")
    path = os.path.join(base_dir, str(d["csv"]))
    if not os.path.exists(path):
        raise ParseError(f"{section}.csv", f"file not found: {path}")
    return os.path.abspath(path)


def _parse_flow(raw):
    flow = _section(raw, "flow")
    _unknown("flow", flow, _FLOW_KEYS)
    if "kind" not in flow:
        raise ParseError("flow.kind", "required")
    if flow["kind"] not in KINDS:
        raise ParseError("flow.kind", f"expected one of {KINDS}, got {flow['kind']!r}")
    kw = {"kind": flow["kind"]}
    for key in _FLOW_KEYS[1:]:
        if key in flow:
            kw[key] = _expect("flow", key, flow[key], int if key in _INT_KEYS else float)
    kernel = _section(raw, "kernel")
    _unknown("kernel", kernel, ("family", "sigma", "c", "beta"))
    try:
        kw["kernel"] = KernelSpec.from_dict(kernel)
    except KLFlowError as err:
        raise ParseError("kernel", str(err)) from None
    return FlowConfig(**kw)


def _parse_target(raw, base_dir):
    t = _section(raw, "target")
    kind = t.get("kind")
    common = ("kind", "capabilities", "reference_samples")
    out = {"kind": kind}
    if kind == "gaussian":
        _unknown("target", t, common + ("mean", "covariance"))
        out.update(_gaussian_fields("target", t))
    elif kind == "mixture":
        _unknown("target", t, common + ("components", "weights"))
        comps = t.get("components")
        if not isinstance(comps, list) or not comps:
            raise ParseError("target.components", "expected a nonempty list")
        out["components"] = [_gaussian_fields(f"target.components[{i}]", c)
                             for i, c in enumerate(comps)]
        if "weights" in t:
            out["weights"] = _expect("target", "weights", t["weights"], list)
        else:
            out["weights"] = [1.0 / len(comps)] * len(comps)
    elif kind == "empirical":
        _unknown("target", t, common + ("csv", "mass_column"))
        out["csv"] = _csv_path("target", t, base_dir)
        out["mass_column"] = bool(t.get("mass_column", False))
    else:
        raise ParseError("target.kind", f"expected gaussian, mixture or empirical, got {kind!r}")
    if "capabilities" in t:
        caps = t["capabilities"]
        if not isinstance(caps, list) or not set(caps) <= CAPABILITIES:
            raise ParseError("target.capabilities", f"expected a subset of {sorted(CAPABILITIES)}")
        out["capabilities"] = sorted(caps)
    out["reference_samples"] = _expect("target", "reference_samples",
                                       t.get("reference_samples", 500), int)
    return out


def _parse_init(raw, base_dir, seed):
    d = _section(raw, "init")
    kind = d.get("kind", "target")
    out = {"kind": kind}
    if kind in ("target", "gaussian", "mixture"):
        extra = {"target": (), "gaussian": ("mean", "covariance"), "mixture": ("components", "weights")}
        _unknown("init", d, ("kind", "n", "seed") + extra[kind])
        if "n" not in d:
            raise ParseError("init.n", "required")
        out["n"] = _expect("init", "n", d["n"], int)
        if out["n"] < 1:
            raise ParseError("init.n", "must be at least 1")
        out["seed"] = _expect("init", "seed", d.get("seed", seed + 1), int)
        if kind == "gaussian":
            out.update(_gaussian_fields("init", d))
        elif kind == "mixture":
            sub = _parse_target({"target": {"kind": "mixture", "components": d.get("components"),
                                            **({"weights": d["weights"]} if "weights" in d else {})}},
                                base_dir)
            out["components"], out["weights"] = sub["components"], sub["weights"]
    elif kind == "csv":
        _unknown("init", d, ("kind", "csv", "mass_column"))
        out["csv"] = _csv_path("init", d, base_dir)
        out["mass_column"] = bool(d.get("mass_column", False))
    else:
        raise ParseError("init.kind", f"expected target, gaussian, mixture or csv, got {kind!r}")
    return out


def build_target(spec) -> Target:
    caps = spec.get("capabilities")
    kind = spec["kind"]
    if kind == "gaussian":
        return Target.gaussian(spec["mean"], spec["covariance"], capabilities=caps)
    if kind == "mixture":
        comps = [(c["mean"], c["covariance"]) for c in spec["components"]]
        return Target.mixture(comps, spec["weights"], capabilities=caps)
    return Target.empirical(load_measure_csv(spec["csv"], spec["mass_column"]), capabilities=caps)


def build_init(spec, target) -> Ensemble:
    kind = spec["kind"]
    if kind == "csv":
        m = load_measure_csv(spec["csv"], spec["mass_column"]).normalized()
        return Ensemble(m.atoms, m.masses)
    rng = make_rng(spec["seed"])
    if kind == "target":
        if "sample" not in target.capabilities:
            raise CapabilityError("sample", what="target (init.kind=target draws from it)")
        return Ensemble(target.sample(spec["n"], rng))
    return Ensemble(build_target({**spec, "kind": kind}).sample(spec["n"], rng))


def parse_dict(raw, base_dir=".") -> RunConfig:
    if not isinstance(raw, dict):
        raise ParseError("<root>", "config must be a mapping")
    _unknown("<root>", raw, SECTIONS)
    flow = _parse_flow(raw)
    target = _parse_target(raw, base_dir)
    init = _parse_init(raw, base_dir, flow.seed)
    output = _section(raw, "output", required=False)
    _unknown("output", output, ("record_every",))
    out = {"record_every": _expect("output", "record_every", output.get("record_every", 1), int)}
    if out["record_every"] < 1:
        raise ParseError("output.record_every", "must be at least 1")
    cfg = RunConfig(flow, target, init, out)
    try:
        tgt = cfg.build_target()
        check_capabilities(flow, tgt, cfg.build_init(tgt))
    except CapabilityError as err:
        raise CapabilityMismatchError(err.capability, flow.kind) from err
    except KLFlowError as err:
        if isinstance(err, (ParseError, ConfigurationError)):
            raise
        raise ParseError("target", str(err)) from err
    return cfg


def parse_config(path) -> RunConfig:
    """Read and validate a YAML run file."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as err:
        raise ParseError("<root>", f"malformed YAML: {err}") from None
    return parse_dict(raw, os.path.dirname(os.path.abspath(path)))
