"""Scenario files (YAML), trace files (CSV) and JSON reports.

A scenario document looks like::

    v0: 20
    p: 0.25
    T: 2
    r: 10
    N: 20
    dt: 0.001
    t_end: 120
    shift_sign: causal
    plant: {numerator: [1.0], denominator: [0.0, 1.0, 0.5]}
    leader_controller: {numerator: [1.0, 1.0], denominator: [0.0, 1.0]}
    predecessor_controller: {numerator: [1.0, 1.0], denominator: [0.0, 1.0]}
    sweep: {w_min: 0.001, w_max: 1000, points: 2000}       # optional
    probe: {path: inv_sqrt_n, n_max: 2000, bound: 1.0e6}   # optional
    platoon_sizes: [5, 10, 20, 40]                         # optional

Coefficients are listed in ascending powers of ``s``.
"""

import json
import math
from dataclasses import fields, is_dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ParseError, ValidationError
from .model import ControllerSpec, PlantSpec, ProbeSpec, ScenarioConfig, SweepSpec
from .rational import Polynomial, RationalFunction

SIG_DIGITS = 9
REQUIRED_SCALARS = ("v0", "p", "T", "r", "N", "dt", "t_end", "shift_sign")
REQUIRED_BLOCKS = ("plant", "leader_controller", "predecessor_controller")
OPTIONAL = ("sweep", "probe", "platoon_sizes")
TRACE_HEADER = "t,vehicle,x,v,u,e,eprime"


# -- scenarios --------------------------------------------------------------

def _number(value, name, integer=False):
    if isinstance(value, bool):
        raise ParseError(f"field '{name}': expected a number, got a boolean")
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            raise ParseError(f"field '{name}': expected a number, got {value!r}") from None
    if not isinstance(value, (int, float)):
        raise ParseError(f"field '{name}': expected a number, got {type(value).__name__}")
    if integer:
        if float(value) != int(value):
            raise ValidationError(name, "must be an integer")
        return int(value)
    return float(value)


def _coefficients(block, key, name):
    if key not in block:
        raise ParseError(f"block '{name}': missing '{key}' coefficients")
    raw = block[key]
    if not isinstance(raw, (list, tuple)) or not raw:
        raise ParseError(f"block '{name}': '{key}' must be a non-empty list of coefficients")
    return [_number(c, f"{name}.{key}") for c in raw]


def _transfer(block, name):
    if not isinstance(block, dict):
        raise ParseError(f"block '{name}': expected a mapping with numerator and denominator")
    unknown = set(block) - {"numerator", "denominator", "label"}
    if unknown:
        raise ParseError(f"block '{name}': unknown keys {sorted(unknown)}")
    num = _coefficients(block, "numerator", name)
    den = _coefficients(block, "denominator", name)
    if not any(den):
        raise ValidationError(f"{name}.denominator", "must not be identically zero")
    return RationalFunction(num, den), str(block.get("label", name))


def _sub_block(doc, name, allowed):
    block = doc[name]
    if not isinstance(block, dict):
        raise ParseError(f"block '{name}': expected a mapping")
    unknown = set(block) - set(allowed)
    if unknown:
        raise ParseError(f"block '{name}': unknown keys {sorted(unknown)}")
    return block


def config_from_mapping(doc):
    """Validated :class:`ScenarioConfig` from an already-parsed mapping."""
    if not isinstance(doc, dict):
        raise ParseError("scenario document must be a mapping of fields")
    unknown = set(doc) - set(REQUIRED_SCALARS) - set(REQUIRED_BLOCKS) - set(OPTIONAL)
    if unknown:
        raise ParseError(f"unknown fields {sorted(unknown)}")
    for name in REQUIRED_SCALARS + REQUIRED_BLOCKS:
        if name not in doc:
            kind = "block" if name in REQUIRED_BLOCKS else "field"
            raise ParseError(f"missing required {kind} '{name}'")
    values = {name: _number(doc[name], name, integer=(name == "N")) for name in REQUIRED_SCALARS[:-1]}
    values["shift_sign"] = str(doc["shift_sign"])
    plant_tf, _ = _transfer(doc["plant"], "plant")
    kl, kl_label = _transfer(doc["leader_controller"], "leader_controller")
    kp, kp_label = _transfer(doc["predecessor_controller"], "predecessor_controller")
    extra = {}
    if doc.get("sweep") is not None:
        b = _sub_block(doc, "sweep", ("w_min", "w_max", "points"))
        defaults = SweepSpec()
        extra["sweep"] = SweepSpec(
            _number(b.get("w_min", defaults.w_min), "sweep.w_min"),
            _number(b.get("w_max", defaults.w_max), "sweep.w_max"),
            _number(b.get("points", defaults.points), "sweep.points", integer=True),
        )
    if doc.get("probe") is not None:
        b = _sub_block(doc, "probe", ("path", "n_max", "bound", "x"))
        defaults = ProbeSpec()
        extra["probe"] = ProbeSpec(
            str(b.get("path", defaults.path)).replace("-", "_"),
            _number(b.get("n_max", defaults.n_max), "probe.n_max", integer=True),
            _number(b.get("bound", defaults.bound), "probe.bound"),
            _number(b.get("x", defaults.x), "probe.x"),
        )
    if doc.get("platoon_sizes") is not None:
        sizes = doc["platoon_sizes"]
        if not isinstance(sizes, (list, tuple)) or not sizes:
            raise ParseError("field 'platoon_sizes': expected a non-empty list")
        extra["platoon_sizes"] = tuple(_number(n, "platoon_sizes", integer=True) for n in sizes)
    return ScenarioConfig(
        plant=PlantSpec(plant_tf),
        leader_controller=ControllerSpec(kl, kl_label),
        predecessor_controller=ControllerSpec(kp, kp_label),
        **values,
        **extra,
    )


def parse_scenario(document):
    """Parse a YAML scenario document (text) into a validated config."""
    try:
        doc = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise ParseError(f"malformed scenario{where}: {problem}") from None
    return config_from_mapping(doc)


def load_scenario(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read scenario {path}: {exc.strerror}") from None
    return parse_scenario(text)


def _transfer_mapping(tf, label=None):
    out = {
        "numerator": [float(c) for c in tf.num.coeffs],
        "denominator": [float(c) for c in tf.den.coeffs],
    }
    if label is not None:
        out["label"] = label
    return out


def config_to_mapping(config):
    doc = {
        "v0": config.v0,
        "p": config.p,
        "T": config.T,
        "r": config.r,
        "N": int(config.N),
        "dt": config.dt,
        "t_end": config.t_end,
        "shift_sign": config.shift_sign,
        "plant": _transfer_mapping(config.plant.transfer),
        "leader_controller": _transfer_mapping(config.leader_controller.transfer, config.leader_controller.label),
        "predecessor_controller": _transfer_mapping(
            config.predecessor_controller.transfer, config.predecessor_controller.label
        ),
    }
    if config.sweep is not None:
        doc["sweep"] = {"w_min": config.sweep.w_min, "w_max": config.sweep.w_max, "points": config.sweep.points}
    if config.probe is not None:
        doc["probe"] = {
            "path": config.probe.path,
            "n_max": config.probe.n_max,
            "bound": config.probe.bound,
            "x": config.probe.x,
        }
    if config.platoon_sizes is not None:
        doc["platoon_sizes"] = list(config.platoon_sizes)
    return doc


def serialize_scenario(config):
    """YAML text that parses back to an equal config."""
    return yaml.safe_dump(config_to_mapping(config), sort_keys=False, default_flow_style=None)


# -- traces -----------------------------------------------------------------

def trace_table(trace):
    """Rows ``t, vehicle, x, v, u, e, eprime`` sorted by time then vehicle."""
    steps, N = trace.x.shape
    cols = [
        np.repeat(trace.t, N),
        np.tile(np.arange(1, N + 1), steps),
        trace.x.reshape(-1),
        trace.v.reshape(-1),
        trace.u.reshape(-1),
        trace.e.reshape(-1),
        trace.eprime.reshape(-1),
    ]
    return np.column_stack(cols)


def write_trace(trace, path):
    fmt = "%.9g,%d,%.9g,%.9g,%.9g,%.9g,%.9g"
    np.savetxt(path, trace_table(trace), fmt=fmt, header=TRACE_HEADER, comments="")


def read_trace(path):
    """Load a trace file as ``(header, array)``."""
    with open(path) as fh:
        header = fh.readline().strip()
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


# -- reports ----------------------------------------------------------------

def _round(x):
    if not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if x == 0:
        return 0.0
    return float(f"{x:.{SIG_DIGITS}g}")


def to_jsonable(obj):
    """Plain JSON data with every float rounded to 9 significant digits."""
    if obj is None or isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _round(float(obj))
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _round(obj.real), "im": _round(obj.imag)}
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, Polynomial):
        return [to_jsonable(c) for c in obj.coeffs]
    if isinstance(obj, RationalFunction):
        return _transfer_mapping(obj)
    if isinstance(obj, ScenarioConfig):
        return to_jsonable(config_to_mapping(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if hasattr(obj, "_asdict"):
        return to_jsonable(obj._asdict())
    if is_dataclass(obj):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(payload):
    return json.dumps(to_jsonable(payload), indent=2) + "\n"


def write_json(payload, path):
    Path(path).write_text(dumps(payload))


def probe_payload(result):
    return {
        "path": result.path_label,
        "verdict": result.verdict,
        "divergence_threshold_n": result.divergence_threshold_n,
        "bound": result.bound,
        "samples": [
            {"n": s.n, "x": s.x, "bracket_value": s.value, **({"error": s.error} if s.error else {})}
            for s in result.samples
        ],
    }


def write_probe_table(result, path):
    """Two plot-ready columns ``n, abs_bracket``."""
    table = np.column_stack([[s.n for s in result.samples], result.magnitudes])
    np.savetxt(path, table, fmt="%d,%.9g", header="n,abs_bracket", comments="")


def report_payload(report):
    """JSON-ready dict for a :class:`~platoonstab.stability.StabilityReport`."""
    from .stability import CRITERION_LABEL

    out = {"config": report.config}
    out["local_stability"] = [
        {"vehicle": r.index, "classification": r.classification, "limit": r.limit,
         "final_value_hypothesis": r.hypothesis_valid}
        for r in report.local_stability
    ]
    sweep = report.frequency_sweep
    if sweep is not None:
        out["frequency_sweep"] = {"w": sweep.w, "magnitude": sweep.magnitude}
        out["sweep_supremum"] = sweep.supremum
        out["sweep_argmax_w"] = sweep.w_at_supremum
        out["string_stable_frequency_criterion"] = sweep.string_stable
        out["criterion_label"] = CRITERION_LABEL
    cl = report.closed_loop
    if cl is not None:
        out["closed_loop_stable"] = cl.stable
        out["closed_loop"] = {
            "stable_except_origin": cl.stable_except_origin,
            "origin_pole": cl.origin_pole,
            "note": cl.note,
            "loops": [
                {"loop": lp.name, "characteristic_polynomial": lp.characteristic,
                 "routh_hurwitz": lp.routh_hurwitz,
                 "poles": [{"pole": p, "multiplicity": m} for p, m in lp.poles]}
                for lp in cl.loops
            ],
        }
    growth = report.strong_growth
    if growth is not None:
        out["strong_growth"] = [
            {"N": row.N, "max_signed_sum": row.max_signed_sum, "max_abs_sum": row.max_abs_sum,
             "config": row.config}
            for row in growth.table
        ]
        out["strong_stability_violated"] = growth.strong_stability_violated
    if report.probe is not None:
        out["probe"] = probe_payload(report.probe)
    out["diagnostics"] = report.diagnostics
    return out
