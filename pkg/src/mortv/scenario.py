"""Scenario configs and the end-to-end comparison runner behind ``mortv run``."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from mortv.errors import ConfigError, MissingData
from mortv.lti_reduction import KrylovConfig
from mortv.models import BeamParams, HeatRodParams, beam_system, build_heat_rod
from mortv.simulation import SimConfig, l2_error, read_csv, simulate_full, simulate_reduced, write_csv
from mortv.systems import Trajectory
from mortv.tv_reduction import (
    ENGINES,
    MODES,
    matrint_offline,
    modal_reduce_combined,
    one_sided_fixed_basis_reduce,
    two_step_reduce,
)

log = logging.getLogger(__name__)

METHOD_NAMES = ("matrint", "two-step", "one-sided", "modal")
MODEL_KINDS = ("beam", "heat-rod")
INPUT_KINDS = ("constant", "step", "sine")
REPORT_COLUMNS = (
    "label",
    "method",
    "r",
    "abs_l2",
    "rel_l2",
    "stable",
    "status",
    "unstable_steps",
    "first_unstable_step",
    "aborted_at",
)
DESK_FACTOR = 4


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    params: dict = field(default_factory=dict)
    coupling: str = "load-only"
    sensor_position: Optional[float] = None
    load_position: Optional[float] = None

    def build_params(self):
        cls = BeamParams if self.kind == "beam" else HeatRodParams
        try:
            return cls(**self.params)
        except TypeError as exc:
            raise ConfigError(f"bad {self.kind} parameters: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class TrajectoryConfig:
    velocity: float
    span: object = "interior"
    direction: str = "forward"


@dataclass(frozen=True)
class InputConfig:
    kind: str = "constant"
    amplitude: float = 1.0
    frequency: float = 1.0
    start: float = 0.0

    def signal(self):
        a = self.amplitude
        if self.kind == "constant":
            return a
        if self.kind == "step":
            t0 = self.start
            return lambda t: np.array([a if t >= t0 else 0.0])
        w = 2.0 * math.pi * self.frequency
        return lambda t: np.array([a * math.sin(w * t)])


@dataclass(frozen=True)
class MethodConfig:
    name: str
    r: int
    mode: str = "standard"
    k: int = 10
    m_tilde: Optional[int] = None
    q_tilde: Optional[int] = None
    engine: str = "irka"
    s0: float = 0.0
    criterion: str = "smallest-magnitude"
    max_iters: int = 50
    tol: float = 1e-6
    label: Optional[str] = None

    @property
    def display(self):
        if self.label:
            return self.label
        if self.name == "matrint":
            return f"matrint-{self.mode}"
        if self.name == "two-step":
            return f"two-step-{self.engine}"
        return self.name


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    model: ModelConfig
    trajectory: TrajectoryConfig
    input: InputConfig
    dt: float
    t_end: Optional[float] = None
    methods: tuple = ()
    output_dir: str = "out"

    def desk(self):
        """The same scenario with the mesh coarsened by ``DESK_FACTOR``."""
        params = dict(self.model.params)
        if self.model.kind == "beam":
            n = params.get("num_elements", BeamParams.num_elements)
            params["num_elements"] = max(n // DESK_FACTOR, 8)
        else:
            n = params.get("num_nodes", HeatRodParams.num_nodes)
            params["num_nodes"] = max(n // DESK_FACTOR, 16)
        return dataclasses.replace(self, model=dataclasses.replace(self.model, params=params))

    def only(self, names):
        wanted = set(names)
        unknown = wanted - {m.name for m in self.methods} - {m.display for m in self.methods}
        if unknown:
            raise ConfigError(f"--methods names {sorted(unknown)} match no configured method")
        return dataclasses.replace(
            self, methods=tuple(m for m in self.methods if m.name in wanted or m.display in wanted)
        )


def _require(d, key, where):
    if key not in d:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return d[key]


def _check_keys(d, allowed, where):
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}; allowed: {sorted(allowed)}")


def parse_method(d, i):
    where = f"methods[{i}]"
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    _check_keys(d, {f.name for f in dataclasses.fields(MethodConfig)}, where)
    name = _require(d, "name", where)
    if name not in METHOD_NAMES:
        raise ConfigError(f"{where}: unknown method {name!r}; valid methods are {list(METHOD_NAMES)}")
    m = MethodConfig(**d)
    if not isinstance(m.r, int) or m.r < 1:
        raise ConfigError(f"{where}: r must be a positive integer")
    if name == "matrint":
        if m.mode not in MODES:
            raise ConfigError(f"{where}: unknown mode {m.mode!r}; valid modes are {list(MODES)}")
        if m.k < 2:
            raise ConfigError(f"{where}: k must be >= 2")
    if name == "two-step":
        if m.engine not in ENGINES:
            raise ConfigError(f"{where}: unknown engine {m.engine!r}; valid engines are {list(ENGINES)}")
        if m.m_tilde is None and m.q_tilde is None:
            raise ConfigError(f"{where}: two-step needs m_tilde and/or q_tilde")
    return m


def parse_config(raw):
    """Validate a decoded JSON scenario and return a :class:`ScenarioConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("scenario must be a JSON object")
    _check_keys(raw, {"name", "model", "trajectory", "input", "sim", "methods", "output_dir"}, "scenario")
    md = _require(raw, "model", "scenario")
    _check_keys(md, {"kind", "params", "coupling", "sensor_position", "load_position"}, "model")
    kind = _require(md, "kind", "model")
    if kind not in MODEL_KINDS:
        raise ConfigError(f"model.kind {kind!r} not in {list(MODEL_KINDS)}")
    model = ModelConfig(
        kind=kind,
        params=dict(md.get("params", {})),
        coupling=md.get("coupling", "load-only" if kind == "beam" else "collocated"),
        sensor_position=md.get("sensor_position"),
        load_position=md.get("load_position"),
    )
    model.build_params()
    if kind == "heat-rod" and model.coupling != "collocated":
        raise ConfigError("the heat rod is always collocated")
    td = _require(raw, "trajectory", "scenario")
    _check_keys(td, {"velocity", "span", "direction"}, "trajectory")
    traj = TrajectoryConfig(
        velocity=float(_require(td, "velocity", "trajectory")),
        span=td.get("span", "interior"),
        direction=td.get("direction", "forward"),
    )
    if not traj.velocity > 0:
        raise ConfigError("trajectory.velocity must be positive")
    if traj.direction not in ("forward", "backward"):
        raise ConfigError("trajectory.direction must be 'forward' or 'backward'")
    if traj.span != "interior" and not (isinstance(traj.span, list) and len(traj.span) == 2):
        raise ConfigError("trajectory.span must be 'interior' or [start, end]")
    ind = raw.get("input", {})
    _check_keys(ind, {f.name for f in dataclasses.fields(InputConfig)}, "input")
    inp = InputConfig(**ind)
    if inp.kind not in INPUT_KINDS:
        raise ConfigError(f"input.kind {inp.kind!r} not in {list(INPUT_KINDS)}")
    sd = _require(raw, "sim", "scenario")
    _check_keys(sd, {"dt", "t_end"}, "sim")
    dt = float(_require(sd, "dt", "sim"))
    if not dt > 0:
        raise ConfigError("sim.dt must be positive")
    methods = raw.get("methods", [])
    if not isinstance(methods, list):
        raise ConfigError("methods must be a list")
    return ScenarioConfig(
        name=raw.get("name", "scenario"),
        model=model,
        trajectory=traj,
        input=inp,
        dt=dt,
        t_end=sd.get("t_end"),
        methods=tuple(parse_method(m, i) for i, m in enumerate(methods)),
        output_dir=raw.get("output_dir", "out"),
    )


def bundled_configs():
    return sorted(p.name for p in resources.files("mortv.configs").iterdir() if p.name.endswith(".cfg"))


def resolve_config_path(name):
    p = Path(name)
    if p.exists():
        return p
    candidate = resources.files("mortv.configs") / p.name
    if candidate.is_file():
        return Path(str(candidate))
    raise ConfigError(f"config {name!r} not found (bundled: {', '.join(bundled_configs())})")


def load_config(path):
    p = resolve_config_path(path)
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return parse_config(raw)


def build_scenario(cfg):
    """Model with its trajectory attached, plus the matching :class:`SimConfig`."""
    params = cfg.model.build_params()
    L = params.length
    if cfg.model.kind == "beam":
        h = L / params.num_elements
        sys = beam_system(
            params,
            coupling=cfg.model.coupling,
            sensor_position=cfg.model.sensor_position,
            load_position=cfg.model.load_position,
        )
        interior = (h, L - h)
    else:
        sys = build_heat_rod(params)
        a = 0.5 * params.source_width
        interior = (a, L - a)
    lo, hi = interior if cfg.trajectory.span == "interior" else map(float, cfg.trajectory.span)
    if not (0.0 <= lo < hi <= L):
        raise ConfigError(f"trajectory span [{lo}, {hi}] must be an increasing pair inside [0, {L}]")
    start, end = (lo, hi) if cfg.trajectory.direction == "forward" else (hi, lo)
    traj = Trajectory.constant_velocity(start, end, cfg.trajectory.velocity)
    t_end = traj.t_end if cfg.t_end is None else float(cfg.t_end)
    try:
        sim = SimConfig(t_end=t_end, dt=cfg.dt, input_signal=cfg.input.signal())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return sys.with_trajectory(traj), sim


@dataclass
class MethodResult:
    label: str
    method: str
    r: int
    abs_l2: float = math.nan
    rel_l2: float = math.nan
    offline_s: float = 0.0
    online_s: float = 0.0
    stable: bool = False
    status: str = "ok"
    unstable_steps: int = 0
    first_unstable_step: Optional[int] = None
    aborted_at: Optional[int] = None
    message: str = ""
    sim: object = None

    @property
    def errored(self):
        return self.status == "error"


@dataclass
class ComparisonReport:
    scenario: str
    n: int
    rows: list

    @property
    def any_error(self):
        return any(r.errored for r in self.rows)

    def row(self, label):
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


def _reduce(sys, span, m):
    """Offline phase: returns ``(rom, online)``."""
    if m.name == "matrint":
        samples = np.linspace(span[0], span[1], m.k)
        off = matrint_offline(sys, samples, m.r, m.mode, KrylovConfig(r=m.r, s0=m.s0), criterion=m.criterion)
        return None, off.online
    if m.name == "two-step":
        kw = {"s0": m.s0} if m.engine == "two-sided-krylov" else {}
        if m.engine == "irka":
            kw = {"max_iters": m.max_iters, "tol": m.tol, "criterion": m.criterion}
        return two_step_reduce(sys, m.m_tilde, m.q_tilde, m.engine, m.r, span=span, **kw), None
    if m.name == "one-sided":
        return one_sided_fixed_basis_reduce(sys, KrylovConfig(r=m.r, s0=m.s0)), None
    return modal_reduce_combined(sys, m.r, m.criterion), None


def run_method(sys, sim, ref, m, label):
    res = MethodResult(label=label, method=m.name if m.name != "matrint" else f"matrint/{m.mode}", r=m.r)
    traj = sys.trajectory
    try:
        t0 = time.perf_counter()
        rom, online = _reduce(sys, traj.span, m)
        res.offline_s = time.perf_counter() - t0
        out = simulate_reduced(rom, traj, sim, online=online)
        res.online_s = out.wall_time
    except Exception as exc:  # a failing method must not take the others down
        log.exception("method %s failed", label)
        res.status = "error"
        res.message = f"{type(exc).__name__}: {exc}"
        return res
    res.sim = out
    res.unstable_steps = out.unstable_steps
    res.first_unstable_step = out.first_unstable_step
    res.aborted_at = out.aborted_at
    res.abs_l2, res.rel_l2 = l2_error(ref, out)
    res.stable = out.stable
    if out.aborted_at is not None:
        res.status = "aborted"
        res.message = f"state blow-up at step {out.aborted_at}"
    elif out.unstable_steps:
        res.status = "unstable-pencil"
        res.message = f"{out.unstable_steps} steps with unstable interpolated pencil (first at {out.first_unstable_step})"
    return res


def _safe_name(label):
    return re.sub(r"[^A-Za-z0-9_.+-]+", "_", label).strip("_") or "method"


def unique_labels(methods):
    seen, out = {}, []
    for m in methods:
        base = m.display
        seen[base] = seen.get(base, 0) + 1
        out.append(base if seen[base] == 1 else f"{base}#{seen[base]}")
    return out


def thread_count():
    try:
        return max(1, int(os.environ.get("MORTV_THREADS", "1")))
    except ValueError:
        return 1


def run_scenario(cfg, output_dir=None):
    """Reference run plus every configured method; writes trajectories and reports."""
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sys, sim = build_scenario(cfg)
    ref = simulate_full(sys, sim)
    (out / "reference").mkdir(exist_ok=True)
    ref.to_csv(out / "reference" / "trajectory.csv")
    rows = [
        MethodResult(
            label="reference",
            method="full-order",
            r=sys.n,
            abs_l2=0.0,
            rel_l2=0.0,
            online_s=ref.wall_time,
            stable=True,
            sim=ref,
        )
    ]
    labels = unique_labels(cfg.methods)
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        results = list(pool.map(lambda ml: run_method(sys, sim, ref, *ml), zip(cfg.methods, labels)))
    for res in results:
        d = out / _safe_name(res.label)
        d.mkdir(exist_ok=True)
        if res.sim is not None:
            res.sim.to_csv(d / "trajectory.csv")
        rows.append(res)
    report = ComparisonReport(cfg.name, sys.n, rows)
    write_report(report, out)
    emit_gnuplot(out)
    return report


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_report(report, out):
    out = Path(out)
    with (out / "report.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS + ("dir",))
        for r in report.rows:
            w.writerow([_fmt(getattr(r, c)) for c in REPORT_COLUMNS] + [_safe_name(r.label)])
    head = ("method", "r", "abs L2", "rel L2", "offline [s]", "online [s]", "stable", "status")
    lines = [
        [
            r.label,
            str(r.r),
            f"{r.abs_l2:.3e}",
            f"{r.rel_l2:.3e}",
            f"{r.offline_s:.3f}",
            f"{r.online_s:.3f}",
            "yes" if r.stable else "no",
            r.status + (f" ({r.message})" if r.message else ""),
        ]
        for r in report.rows
    ]
    widths = [max(len(head[i]), *(len(l[i]) for l in lines)) for i in range(len(head) - 1)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths) + "  {}"
    text = [f"scenario {report.scenario} (n = {report.n})", fmt.format(*head), fmt.format(*("-" * w for w in widths), "------")]
    text += [fmt.format(*l) for l in lines]
    (out / "report.txt").write_text("\n".join(text) + "\n")


def read_report(out):
    with (Path(out) / "report.csv").open() as fh:
        return list(csv.DictReader(fh))


def _method_dirs(report_dir):
    d = Path(report_dir)
    if (d / "report.csv").exists():
        rows = read_report(d)
        return [(r["label"], d / r["dir"]) for r in rows if r["label"] != "reference" and (d / r["dir"] / "trajectory.csv").exists()]
    return [(p.name, p) for p in sorted(d.iterdir()) if p.is_dir() and p.name != "reference" and (p / "trajectory.csv").exists()]


def emit_gnuplot(report_dir):
    """Write ``comparison.csv`` and ``plot.gp`` (gnuplot) into ``report_dir``.

    ``comparison.csv`` has the columns ``t``, ``reference``, one output
    column per method, then ``abs:<label>`` (``|y - y_r|``) and
    ``rel:<label>`` (``|y - y_r| / max|y|``) per method; only the first
    output is plotted. The script draws three stacked panels reading those
    columns by index.
    """
    d = Path(report_dir)
    ref_path = d / "reference" / "trajectory.csv"
    if not ref_path.exists():
        raise MissingData(f"{ref_path} missing; run the scenario first")
    ref = read_csv(ref_path)
    methods = _method_dirs(d)
    data = [read_csv(p / "trajectory.csv") for _, p in methods]
    yref = ref.outputs[0]
    scale = np.max(np.abs(yref)) or 1.0
    cols = [ref.times, yref] + [s.outputs[0] for s in data]
    cols += [np.abs(yref - s.outputs[0]) for s in data]
    cols += [np.abs(yref - s.outputs[0]) / scale for s in data]
    labels = [m for m, _ in methods]
    header = ["t", "reference"] + labels + [f"abs:{m}" for m in labels] + [f"rel:{m}" for m in labels]
    with (d / "comparison.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([f"{v:.17g}" for v in row])
    q = len(labels)

    def curve(col, title):
        return f"'comparison.csv' using 1:{col} with lines title \"{title}\""

    lines = [
        "# columns of comparison.csv (1-based): " + ", ".join(f"{i + 1}={h}" for i, h in enumerate(header)),
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set terminal pngcairo size 900,1200",
        "set output 'comparison.png'",
        "set multiplot layout 3,1",
        "set title 'output y(t)'",
        "plot " + ", \\\n     ".join([curve(2, "reference")] + [curve(3 + i, m) for i, m in enumerate(labels)]),
        "set title 'absolute error'",
    ]
    if q:
        lines.append("plot " + ", \\\n     ".join(curve(3 + q + i, m) for i, m in enumerate(labels)))
        lines.append("set title 'relative error'")
        lines.append("plot " + ", \\\n     ".join(curve(3 + 2 * q + i, m) for i, m in enumerate(labels)))
    lines.append("unset multiplot")
    path = d / "plot.gp"
    path.write_text("\n".join(lines) + "\n")
    return path
