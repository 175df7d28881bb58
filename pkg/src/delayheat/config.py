"""Run configuration: a single JSON document, validated in one pass.

Minimal example::

    {
      "problem": {"L": 3.141592653589793,
                  "potential": {"kind": "constant", "value": 2.0}},
      "delay": 1.0,
      "simulation": {"dt": 0.001, "t_final": 12.0}
    }

Every violated invariant is collected with its field path before a single
:class:`ConfigError` is raised.
"""

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .spectral import Potential

SWEEP_PARAMETERS = ("D", "c0")
DESIGN_METHODS = ("pole_placement", "riccati")

_SECTIONS = {
    "problem": {"L", "potential", "grid_N", "eta"},
    "design": {"method", "target_poles", "safety_factor"},
    "simulation": {"dt", "t_final", "y0", "J", "open_loop", "consistency_cadence",
                   "fit_window"},
    "outputs": {"report_path", "trajectory_path", "monitor_path", "snapshot_times"},
    "sweep": {"parameter", "values", "workers"},
}
_TOP = {"problem", "delay", "design", "simulation", "outputs", "sweep"}


@dataclass(frozen=True)
class RunConfig:
    L: float
    potential: dict                 # {"kind": ..., "value" | "samples": ...}
    D: float
    grid_N: int = 2000
    eta: float = None
    target_poles: tuple = None      # complex values; None means all at -1
    safety_factor: float = 1.1
    dt: float = 1e-3
    t_final: float = 12.0
    y0: object = field(default_factory=lambda: {"mode": 1, "amplitude": 1.0})
    J: int = None
    open_loop: bool = False
    consistency_cadence: int = 1
    fit_window: tuple = None        # default (2D, t_final)
    report_path: str = "report.json"
    trajectory_path: str = "trajectory.csv"
    monitor_path: str = "monitor.csv"
    snapshot_times: tuple = ()
    sweep_parameter: str = None
    sweep_values: tuple = ()
    workers: int = None

    def with_value(self, parameter, value):
        """Copy with the sweep parameter set to ``value`` and the sweep removed."""
        value = float(value)
        if parameter == "D":
            cfg = replace(self, D=value)
        elif parameter == "c0":
            cfg = replace(self, potential={"kind": "constant", "value": value})
        else:
            raise ConfigError("invalid sweep", [f"sweep.parameter {parameter!r} is not "
                                                f"one of {SWEEP_PARAMETERS}"])
        return replace(cfg, sweep_parameter=None, sweep_values=())

    def window(self):
        if self.fit_window is not None:
            return tuple(self.fit_window)
        return (2.0 * self.D, self.t_final)


def _number(value, path, problems, positive=False, nonneg=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        problems.append(f"{path}: expected a number, got {value!r}")
        return None
    if not math.isfinite(value):
        problems.append(f"{path}: must be finite, got {value!r}")
        return None
    if integer and int(value) != value:
        problems.append(f"{path}: expected an integer, got {value!r}")
        return None
    if positive and not value > 0:
        problems.append(f"{path}: must be positive, got {value!r}")
        return None
    if nonneg and not value >= 0:
        problems.append(f"{path}: must be nonnegative, got {value!r}")
        return None
    return int(value) if integer else float(value)


def _poles(raw, problems):
    if not isinstance(raw, list) or not raw:
        problems.append("design.target_poles: expected a non-empty list")
        return None
    out = []
    for i, p in enumerate(raw):
        path = f"design.target_poles[{i}]"
        if isinstance(p, list) and len(p) == 2:
            re_ = _number(p[0], path + "[0]", problems)
            im_ = _number(p[1], path + "[1]", problems)
            if re_ is not None and im_ is not None:
                out.append(complex(re_, im_))
        else:
            v = _number(p, path, problems)
            if v is not None:
                out.append(complex(v, 0.0))
    for i, p in enumerate(out):
        if p.real >= 0:
            problems.append(f"design.target_poles[{i}]: real part must be negative, got {p}")
    return tuple(out)


def _potential(raw, L, problems):
    if not isinstance(raw, dict):
        problems.append("problem.potential: expected an object")
        return None
    kind = raw.get("kind", "constant")
    if kind == "constant":
        v = _number(raw.get("value"), "problem.potential.value", problems)
        return None if v is None else {"kind": "constant", "value": v}
    if kind == "sampled":
        pts = raw.get("samples")
        if not isinstance(pts, list) or len(pts) < 2:
            problems.append("problem.potential.samples: expected at least two [x, c] pairs")
            return None
        clean = []
        for i, pair in enumerate(pts):
            path = f"problem.potential.samples[{i}]"
            if not (isinstance(pair, list) and len(pair) == 2):
                problems.append(f"{path}: expected an [x, c] pair")
                continue
            x = _number(pair[0], path + "[0]", problems)
            c = _number(pair[1], path + "[1]", problems)
            if x is not None and c is not None:
                clean.append((x, c))
        if len(clean) == len(pts):
            xs = [x for x, _ in clean]
            if any(b <= a for a, b in zip(xs, xs[1:])):
                problems.append("problem.potential.samples: abscissae must be strictly increasing")
            if L is not None and (xs[0] != 0.0 or not math.isclose(xs[-1], L, rel_tol=1e-12)):
                problems.append(f"problem.potential.samples: must span [0, L] = [0, {L}]")
        return {"kind": "sampled", "samples": clean}
    problems.append(f"problem.potential.kind: expected 'constant' or 'sampled', got {kind!r}")
    return None


def _y0(raw, problems):
    if isinstance(raw, dict):
        unknown = set(raw) - {"mode", "amplitude", "samples"}
        if unknown:
            problems.append(f"simulation.y0: unknown keys {sorted(unknown)}")
        if "samples" in raw:
            s = raw["samples"]
            if not isinstance(s, list) or not all(
                    isinstance(v, (int, float)) and not isinstance(v, bool) for v in s):
                problems.append("simulation.y0.samples: expected a list of numbers")
                return None
            return tuple(float(v) for v in s)
        mode = _number(raw.get("mode", 1), "simulation.y0.mode", problems,
                       positive=True, integer=True)
        amp = _number(raw.get("amplitude", 1.0), "simulation.y0.amplitude", problems)
        if mode is None or amp is None:
            return None
        return {"mode": mode, "amplitude": amp}
    problems.append("simulation.y0: expected {\"mode\", \"amplitude\"} or {\"samples\"}")
    return None


def _ratio_is_integer(num, den):
    r = num / den
    return abs(r - round(r)) <= 1e-9 * max(1.0, r)


def parse_config(doc):
    """Validate a decoded document and build a :class:`RunConfig`."""
    problems = []
    if not isinstance(doc, dict):
        raise ConfigError("invalid configuration", ["top level: expected an object"])
    for key in sorted(set(doc) - _TOP):
        problems.append(f"{key}: unknown section")
    sections = {}
    for name, keys in _SECTIONS.items():
        sec = doc.get(name, {})
        if name == "sweep" and name not in doc:
            sec = None
        elif not isinstance(sec, dict):
            problems.append(f"{name}: expected an object")
            sec = {}
        else:
            for key in sorted(set(sec) - keys):
                problems.append(f"{name}.{key}: unknown field")
        sections[name] = sec
    prob, des, sim, out, swp = (sections[k] for k in
                                ("problem", "design", "simulation", "outputs", "sweep"))
    kw = {}

    L = _number(prob.get("L"), "problem.L", problems, positive=True) if "L" in prob else None
    if "L" not in prob:
        problems.append("problem.L: required")
    kw["L"] = L
    if "potential" not in prob:
        problems.append("problem.potential: required")
    else:
        kw["potential"] = _potential(prob["potential"], L, problems)
    if "grid_N" in prob:
        N = _number(prob["grid_N"], "problem.grid_N", problems, integer=True)
        if N is not None and N < 16:
            problems.append(f"problem.grid_N: must be at least 16, got {N}")
        kw["grid_N"] = N
    if prob.get("eta") is not None:
        kw["eta"] = _number(prob["eta"], "problem.eta", problems, positive=True)

    if "delay" not in doc:
        problems.append("delay: required")
        D = None
    else:
        D = _number(doc["delay"], "delay", problems, nonneg=True)
    kw["D"] = D

    method = des.get("method", "pole_placement")
    if method == "riccati":
        problems.append("design.method: Riccati gain design is not implemented; "
                        "use 'pole_placement'")
    elif method not in DESIGN_METHODS:
        problems.append(f"design.method: expected 'pole_placement', got {method!r}")
    if "target_poles" in des:
        kw["target_poles"] = _poles(des["target_poles"], problems)
    if "safety_factor" in des:
        sf = _number(des["safety_factor"], "design.safety_factor", problems)
        if sf is not None and not sf > 1:
            problems.append(f"design.safety_factor: must exceed 1, got {sf}")
        kw["safety_factor"] = sf

    dt = _number(sim.get("dt", 1e-3), "simulation.dt", problems, positive=True)
    T = _number(sim.get("t_final", 12.0), "simulation.t_final", problems, positive=True)
    kw["dt"], kw["t_final"] = dt, T
    if "y0" in sim:
        kw["y0"] = _y0(sim["y0"], problems)
    if sim.get("J") is not None:
        Jv = _number(sim["J"], "simulation.J", problems, positive=True, integer=True)
        kw["J"] = Jv
    if "open_loop" in sim:
        if not isinstance(sim["open_loop"], bool):
            problems.append("simulation.open_loop: expected true or false")
        kw["open_loop"] = bool(sim["open_loop"])
    if "consistency_cadence" in sim:
        kw["consistency_cadence"] = _number(sim["consistency_cadence"],
                                            "simulation.consistency_cadence", problems,
                                            nonneg=True, integer=True)
    if sim.get("fit_window") is not None:
        fw = sim["fit_window"]
        if (isinstance(fw, list) and len(fw) == 2):
            lo = _number(fw[0], "simulation.fit_window[0]", problems, nonneg=True)
            hi = _number(fw[1], "simulation.fit_window[1]", problems, positive=True)
            if lo is not None and hi is not None:
                if not lo < hi:
                    problems.append("simulation.fit_window: lower end must be below upper end")
                kw["fit_window"] = (lo, hi)
        else:
            problems.append("simulation.fit_window: expected [t_lo, t_hi]")
    if dt is not None and T is not None and not _ratio_is_integer(T, dt):
        problems.append(f"simulation.t_final / simulation.dt = {T} / {dt} must be an integer")
    if dt is not None and D is not None:
        if not _ratio_is_integer(D, dt):
            problems.append(f"delay / simulation.dt = {D} / {dt} must be an integer")
        elif D > 0 and dt > D / 4 + 1e-15:
            problems.append(f"simulation.dt = {dt} must not exceed delay / 4 = {D / 4}")

    for key in ("report_path", "trajectory_path", "monitor_path"):
        if key in out:
            v = out[key]
            if not isinstance(v, str) or not v:
                problems.append(f"outputs.{key}: expected a non-empty path string")
            else:
                kw[key] = v
    if "snapshot_times" in out:
        st = out["snapshot_times"]
        if not isinstance(st, list):
            problems.append("outputs.snapshot_times: expected a list")
        else:
            vals = [_number(v, f"outputs.snapshot_times[{i}]", problems, nonneg=True)
                    for i, v in enumerate(st)]
            for i, v in enumerate(vals):
                if v is not None and T is not None and v > T:
                    problems.append(f"outputs.snapshot_times[{i}]: {v} is after t_final = {T}")
            kw["snapshot_times"] = tuple(v for v in vals if v is not None)

    if swp is not None:
        param = swp.get("parameter")
        if param not in SWEEP_PARAMETERS:
            problems.append(f"sweep.parameter: expected one of {list(SWEEP_PARAMETERS)}, "
                            f"got {param!r}")
        values = swp.get("values")
        if not isinstance(values, list) or not values:
            problems.append("sweep.values: must be a non-empty list")
            values = []
        clean = []
        for i, v in enumerate(values):
            x = _number(v, f"sweep.values[{i}]", problems, nonneg=(param == "D"))
            if x is None:
                continue
            if param == "D" and dt is not None:
                if not _ratio_is_integer(x, dt):
                    problems.append(f"sweep.values[{i}] / simulation.dt = {x} / {dt} "
                                    "must be an integer")
                elif x > 0 and dt > x / 4 + 1e-15:
                    problems.append(f"simulation.dt = {dt} must not exceed sweep.values[{i}] "
                                    f"/ 4 = {x / 4}")
            clean.append(x)
        if param == "c0" and kw.get("potential") and kw["potential"]["kind"] != "constant":
            problems.append("sweep.parameter: 'c0' requires a constant potential")
        if "workers" in swp and swp["workers"] is not None:
            kw["workers"] = _number(swp["workers"], "sweep.workers", problems,
                                    positive=True, integer=True)
        kw["sweep_parameter"] = param
        kw["sweep_values"] = tuple(clean)

    if problems:
        raise ConfigError("invalid configuration", problems)
    return RunConfig(**{k: v for k, v in kw.items() if v is not None or k in ("eta",)})


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}", [str(exc)]) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}",
                          [f"line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from exc
    return parse_config(doc)


def potential_from(cfg):
    p = cfg.potential
    if p["kind"] == "constant":
        return Potential.constant(p["value"], cfg.L)
    xs, cs = zip(*p["samples"])
    return Potential.sampled(xs, cs, cfg.L)


def initial_condition(cfg):
    """``y0`` in the form accepted by the simulator."""
    if isinstance(cfg.y0, dict):
        return dict(cfg.y0)
    return np.asarray(cfg.y0, dtype=float)
