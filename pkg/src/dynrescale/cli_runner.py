"""Run orchestration: configuration, time series, snapshots, checkpoints and sweeps.

    python3 -m dynrescale run --config run.ini --out results/
    python3 -m dynrescale resume --checkpoint results/checkpoint.txt --max-tau 800
    python3 -m dynrescale sweep --config run.ini --param M --values 250,500,1000
    python3 -m dynrescale laws --timeseries results/timeseries.csv
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .diagnostics import WeightSpec, compute_record
from .errors import ConfigError, NumericalBlowupError, SingularNormalizationError
from .mesh import Field, TensorMesh, build_graded_mesh, fmt
from .rescaler import RescaleState, Stepper
from .scenarios import (
    Scenario,
    scenario_1d_paper,
    scenario_2d_paper,
    scenario_custom,
    scenario_small_viscosity,
    scenario_theorem,
)

logger = logging.getLogger("dynrescale")

CHECKPOINT_VERSION = "dynrescale-checkpoint 1"
EXIT_CODES = {"max_tau": 0, "max_steps": 0, "numerical-blowup": 3, "singular-normalization": 4}
SWEEP_PARAMS = ("amplitude", "lambda0", "M", "safety", "Cu0")
SCENARIOS = ("paper_1d", "paper_2d", "theorem", "small_viscosity", "custom")


def _floats(text) -> tuple:
    if isinstance(text, (int, float)):
        return (float(text),)
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).replace(";", ",").split(",") if v.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    val = str(text).strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    # scenario
    scenario: str = "paper_1d"
    n: Optional[int] = None
    initial: str = ""
    g_spec: str = "quartic_gaussian"
    amplitude: float = 0.01
    lambda0: Optional[tuple] = None
    Cu0: Optional[float] = None
    allow_large_amplitude: bool = False
    # mesh
    M: tuple = (500,)
    L: tuple = (1e4,)
    grading: str = "algebraic"
    grading_param: float = 2.0
    # stepping
    safety: float = 0.4
    max_tau: float = 500.0
    max_steps: int = 0
    stage_refresh: bool = True
    normalization: str = "discrete"
    jet_method: str = "octic"
    # output
    record_every: int = 100
    snapshot_every: int = 0
    checkpoint_every: int = 0
    k_diag: int = 4
    mu: float = 1e-2
    output_dir: str = "output"

    def __post_init__(self):
        self.M = tuple(int(v) for v in _floats(self.M))
        self.L = _floats(self.L)
        if self.lambda0 is not None:
            self.lambda0 = _floats(self.lambda0)
        self.validate()

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        if not (self.max_tau > 0 or self.max_steps > 0):
            raise ConfigError("need max_tau > 0 or max_steps > 0")
        if self.record_every < 1:
            raise ConfigError("record_every must be at least 1")
        if self.snapshot_every < 0 or self.checkpoint_every < 0:
            raise ConfigError("snapshot_every and checkpoint_every must be nonnegative")
        if not 0.0 < self.safety <= 1.0:
            raise ConfigError(f"safety must lie in (0, 1], got {self.safety}")
        if self.scenario == "custom" and not self.initial:
            raise ConfigError("custom scenario needs an initial expression")
        if self.k_diag < 1 or not self.mu > 0:
            raise ConfigError("need k_diag >= 1 and mu > 0")

    @property
    def dim(self) -> int:
        if self.scenario == "paper_2d":
            return 2
        if self.scenario in ("paper_1d", "small_viscosity"):
            return 1
        return int(self.n or 1)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.optionxform = str  # keep key case (Cu0, M, L)
        if not parser.read(path):
            raise ConfigError(f"cannot read config file {path}")
        return cls.from_mapping({k: v for sec in parser.sections() for k, v in parser[sec].items()})

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            default = known[key].default
            try:
                if key in ("M", "L", "lambda0"):
                    kwargs[key] = _floats(raw)
                elif isinstance(default, bool):
                    kwargs[key] = _bool(raw)
                elif key in ("n", "max_steps", "record_every", "snapshot_every", "checkpoint_every", "k_diag"):
                    kwargs[key] = int(raw)
                elif key == "Cu0" or isinstance(default, float):
                    kwargs[key] = float(raw)
                else:
                    kwargs[key] = str(raw).strip()
            except ValueError as err:
                raise ConfigError(f"bad value for {key}: {raw!r}") from err
        return cls(**kwargs)

    def to_ini(self) -> str:
        sections = {
            "scenario": ("scenario", "n", "initial", "g_spec", "amplitude", "lambda0", "Cu0", "allow_large_amplitude"),
            "mesh": ("M", "L", "grading", "grading_param"),
            "run": ("safety", "max_tau", "max_steps", "stage_refresh", "normalization", "jet_method"),
            "output": ("record_every", "snapshot_every", "checkpoint_every", "k_diag", "mu", "output_dir"),
        }
        lines = []
        for name, keys in sections.items():
            lines.append(f"[{name}]")
            for key in keys:
                val = getattr(self, key)
                if val is None or val == "":
                    continue
                if isinstance(val, tuple):
                    val = ", ".join(fmt(v) if isinstance(v, float) else str(v) for v in val)
                elif isinstance(val, float):
                    val = fmt(val)
                lines.append(f"{key} = {val}")
            lines.append("")
        return "\n".join(lines)

    # -- derived objects -----------------------------------------------------
    def build_scenario(self) -> Scenario:
        n = self.dim
        if self.scenario == "paper_1d":
            sc = scenario_1d_paper()
        elif self.scenario == "paper_2d":
            sc = scenario_2d_paper()
        elif self.scenario == "small_viscosity":
            sc = scenario_small_viscosity(self.Cu0 if self.Cu0 is not None else 1e-2)
        elif self.scenario == "theorem":
            lam0 = self.lambda0[0] if self.lambda0 else 0.01
            sc = scenario_theorem(self.g_spec, self.amplitude, lam0, n, self.allow_large_amplitude)
        else:
            sc = scenario_custom(self.initial, n, self.lambda0 or (1.0,), 1.0)
        overrides = {}
        if self.lambda0 is not None:
            overrides["lambda0"] = tuple(np.broadcast_to(self.lambda0, (n,)))
        if self.Cu0 is not None:
            overrides["Cu0"] = self.Cu0
        return replace(sc, **overrides) if overrides else sc

    def build_mesh(self) -> TensorMesh:
        n = self.dim
        Ms = np.broadcast_to(np.asarray(self.M), (n,))
        Ls = np.broadcast_to(np.asarray(self.L), (n,))
        return TensorMesh(tuple(
            build_graded_mesh(int(M), float(L), self.grading, self.grading_param) for M, L in zip(Ms, Ls)
        ))

    def build_stepper(self) -> Stepper:
        return Stepper(normalization=self.normalization, jet_method=self.jet_method,
                       stage_refresh=self.stage_refresh, safety=self.safety)

    def weight_spec(self) -> WeightSpec:
        return WeightSpec(self.dim, self.k_diag, self.mu)


@dataclass
class RunSummary:
    exit_reason: str
    steps: int = 0
    tau: float = 0.0
    t_phys: float = 0.0
    T_est: float = math.nan
    log_correction: float = math.nan
    lam: list = field(default_factory=list)
    law_cu: float = math.nan
    law_cl: list = field(default_factory=list)
    law_lambda: list = field(default_factory=list)
    expected_laws: Optional[list] = None
    residual_sup: float = math.nan
    residual_times_tau_min: float = math.nan
    residual_times_tau_max: float = math.nan
    residual_times_tau_final: float = math.nan
    max_origin_drift_d0: float = math.nan
    max_origin_drift_d2: float = math.nan
    records: int = 0
    message: str = ""

    @property
    def exit_code(self) -> int:
        return EXIT_CODES.get(self.exit_reason, 1)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


# -- time series ------------------------------------------------------------

def fit_laws(rows: list) -> dict:
    """Mean of the law products over the last quarter of the rows."""
    if not rows:
        return {}
    tail = rows[int(math.floor(0.75 * len(rows))):]
    keys = [k for k in rows[0] if k.startswith("law_")]
    return {k: float(np.mean([float(r[k]) for r in tail])) for k in keys}


def read_timeseries(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(rows: list, exit_reason: str, state: RescaleState, scenario: Scenario, message: str = "") -> RunSummary:
    laws = fit_laws(rows)
    n = state.n
    s = RunSummary(exit_reason=exit_reason, steps=state.step, tau=state.tau, t_phys=state.t_phys,
                   lam=[float(v) for v in state.lam], records=len(rows), message=message,
                   expected_laws=list(scenario.expected_laws) if scenario.expected_laws else None)
    if rows:
        last = rows[-1]
        rt = [float(r["residual_times_tau"]) for r in rows]
        s.T_est = float(last["T_est"])
        s.log_correction = float(last["log_correction"])
        s.law_cu = laws["law_cu"]
        s.law_cl = [laws[f"law_cl_{i + 1}"] for i in range(n)]
        s.law_lambda = [laws[f"law_lambda_{i + 1}"] for i in range(n)]
        s.residual_sup = float(last["residual_sup"])
        s.residual_times_tau_min, s.residual_times_tau_max, s.residual_times_tau_final = min(rt), max(rt), rt[-1]
        s.max_origin_drift_d0 = max(float(r["origin_drift_d0"]) for r in rows)
        s.max_origin_drift_d2 = max(float(r["origin_drift_d2_max"]) for r in rows)
    return s


# -- checkpoint -------------------------------------------------------------

def write_checkpoint(path, state: RescaleState) -> None:
    path = Path(path)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w") as fh:
        fh.write(CHECKPOINT_VERSION + "\n")
        state.u_hat.write(fh)
        fh.write(f"step {state.step}\n")
        fh.write(f"tau {fmt(state.tau)}\n")
        fh.write(f"t_phys {fmt(state.t_phys)}\n")
        fh.write("lambda " + " ".join(fmt(v) for v in state.lam) + "\n")
        fh.write(f"cu_integral {fmt(state.cu_integral)}\n")
        fh.write("cl_integrals " + " ".join(fmt(v) for v in state.cl_integrals) + "\n")
        fh.write(f"Cu0 {fmt(state.Cu0)}\n")
        fh.write(f"ref_d0 {fmt(state.ref_d0)}\n")
        fh.write("ref_d2 " + " ".join(fmt(v) for v in state.ref_d2) + "\n")
    os.replace(tmp, path)


def read_checkpoint(path) -> RescaleState:
    with open(path) as fh:
        lines = iter(fh.read().splitlines())
        header = next(lines, "")
        if header.strip() != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint header {header!r}")
        u_hat = Field.read(lines)
        scalars = {}
        for line in lines:
            if line.strip():
                key, *vals = line.split()
                scalars[key] = vals
    try:
        state = RescaleState(
            u_hat=u_hat,
            lam=np.array([float(v) for v in scalars["lambda"]]),
            tau=float(scalars["tau"][0]),
            t_phys=float(scalars["t_phys"][0]),
            cu_integral=float(scalars["cu_integral"][0]),
            cl_integrals=np.array([float(v) for v in scalars["cl_integrals"]]),
            Cu0=float(scalars["Cu0"][0]),
            step=int(scalars["step"][0]),
        )
        state.ref_d0 = float(scalars["ref_d0"][0])
        state.ref_d2 = np.array([float(v) for v in scalars["ref_d2"]])
    except (KeyError, IndexError, ValueError) as err:
        raise ConfigError(f"malformed checkpoint {path}: {err}") from err
    return state


# -- run loop ---------------------------------------------------------------

def _snapshot(out: Path, state: RescaleState) -> None:
    with open(out / f"snapshot_tau_{state.tau:.6f}.txt", "w") as fh:
        state.u_hat.write(fh)


def _loop(config: RunConfig, state: RescaleState, out: Path, csv_mode: str) -> RunSummary:
    scenario = config.build_scenario()
    stepper = config.build_stepper()
    spec = config.weight_spec()
    ts_path = out / "timeseries.csv"
    exit_reason, message = None, ""
    last_recorded = state.step if csv_mode == "a" else -1
    with open(ts_path, csv_mode, newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")

        def record(st):
            nonlocal last_recorded
            rec = compute_record(st, stepper, spec)
            if fh.tell() == 0:
                writer.writerow(rec.columns())
            writer.writerow([fmt(v) if isinstance(v, float) else v for v in rec.row()])
            fh.flush()
            last_recorded = st.step
            logger.info("step %d tau=%.4g lambda*tau=%s law_cu=%.4f law_cl=%s res*tau=%.3g", st.step, st.tau,
                        np.array2string(rec.law_lambda, precision=4), rec.law_cu,
                        np.array2string(rec.law_cl, precision=4), rec.residual_times_tau)

        while True:
            if config.max_tau > 0 and state.tau >= config.max_tau * (1.0 - 1e-14):
                exit_reason = "max_tau"
                break
            if config.max_steps > 0 and state.step >= config.max_steps:
                exit_reason = "max_steps"
                break
            max_dt = config.max_tau - state.tau if config.max_tau > 0 else math.inf
            try:
                state, _ = stepper.advance(state, max_dt)
            except NumericalBlowupError as err:
                exit_reason, message = "numerical-blowup", str(err)
                break
            except SingularNormalizationError as err:
                exit_reason, message = "singular-normalization", str(err)
                break
            if state.step % config.record_every == 0:
                record(state)
            if config.snapshot_every and state.step % config.snapshot_every == 0:
                _snapshot(out, state)
            if config.checkpoint_every and state.step % config.checkpoint_every == 0:
                write_checkpoint(out / f"checkpoint_step_{state.step}.txt", state)
        if state.step > 0 and last_recorded != state.step:
            try:
                record(state)
            except (NumericalBlowupError, SingularNormalizationError, FloatingPointError) as err:
                logger.warning("final diagnostics failed: %s", err)
    if exit_reason != "numerical-blowup":
        write_checkpoint(out / "checkpoint.txt", state)
    rows = read_timeseries(ts_path) if ts_path.stat().st_size else []
    summary = summarize(rows, exit_reason, state, scenario, message)
    (out / "summary.json").write_text(summary.to_json() + "\n")
    logger.info("finished: %s at tau=%.6g after %d steps", exit_reason, state.tau, state.step)
    return summary


def run(config: RunConfig, out=None) -> RunSummary:
    out = Path(out if out is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(config.to_ini())
    scenario = config.build_scenario()
    mesh = config.build_mesh()
    state = RescaleState.initial(scenario.field(mesh), scenario.lambda0, scenario.Cu0, config.jet_method)
    if config.snapshot_every:
        _snapshot(out, state)
    return _loop(config, state, out, "w")


def _truncate_timeseries(path: Path, step: int) -> None:
    if not path.exists():
        return
    with open(path, newline="") as fh:
        lines = fh.read().splitlines(keepends=True)
    kept = lines[:1] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) <= step]
    path.write_text("".join(kept))


def resume(checkpoint, max_tau: Optional[float] = None, config: Optional[RunConfig] = None) -> RunSummary:
    """Continue a run from a checkpoint, appending to the time series next to it."""
    checkpoint = Path(checkpoint)
    out = checkpoint.parent
    if config is None:
        config = RunConfig.from_file(out / "config.ini")
    if max_tau is not None:
        config = replace(config, max_tau=float(max_tau))
    state = read_checkpoint(checkpoint)
    _truncate_timeseries(out / "timeseries.csv", state.step)
    return _loop(config, state, out, "a")


def _sweep_value(param: str, value: str):
    return int(float(value)) if param == "M" else float(value)


def _sweep_one(base: RunConfig, param: str, value, out: Path):
    cfg = replace(base, **{param: (value,) if param in ("M", "lambda0") else value})
    sub = out / f"{param}_{value}"
    try:
        return value, run(cfg, sub), ""
    except Exception as err:  # recorded in the index, the sweep continues
        return value, None, f"{type(err).__name__}: {err}"


def sweep(base: RunConfig, param: str, values, out=None, workers: Optional[int] = None) -> list:
    """Independent runs over one parameter, executed concurrently."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"cannot sweep {param!r}; choose from {', '.join(SWEEP_PARAMS)}")
    values = [_sweep_value(param, v) for v in values]
    out = Path(out if out is not None else base.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not values:
        return []
    workers = workers or min(len(values), os.cpu_count() or 1)
    if workers == 1:
        results = [_sweep_one(base, param, v, out) for v in values]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, [base] * len(values), [param] * len(values), values,
                                    [out] * len(values)))
    n = base.dim
    header = ["param", "value", "exit_reason", "steps", "tau", "law_cu"]
    header += [f"law_cl_{i + 1}" for i in range(n)] + [f"law_lambda_{i + 1}" for i in range(n)]
    header += ["residual_sup", "residual_times_tau_max", "error"]
    with open(out / "index.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for value, s, err in results:
            if s is None:
                writer.writerow([param, value, "error", "", "", ""] + [""] * (2 * n) + ["", "", err])
            else:
                writer.writerow([param, value, s.exit_reason, s.steps, fmt(s.tau), fmt(s.law_cu)]
                                + [fmt(v) for v in s.law_cl] + [fmt(v) for v in s.law_lambda]
                                + [fmt(s.residual_sup), fmt(s.residual_times_tau_max), s.message])
    return [s for _, s, _ in results]


# -- command line -----------------------------------------------------------

def configure_logging() -> None:
    level = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    name = os.environ.get("RESCALE_LOG", "info").strip().lower()
    logging.basicConfig(level=level.get(name, logging.INFO), format="%(asctime)s %(levelname)s %(message)s")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynrescale", description="Dynamic rescaling simulator for u_t = Lap u + u^2")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory (overrides output_dir)")

    p = sub.add_parser("resume", help="continue from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--max-tau", type=float, default=None)

    p = sub.add_parser("sweep", help="run one configuration over a list of parameter values")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("laws", help="fit law constants from an existing time series")
    p.add_argument("--timeseries", required=True)
    return parser


def main(argv=None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            summary = run(RunConfig.from_file(args.config), args.out)
        elif args.command == "resume":
            summary = resume(args.checkpoint, args.max_tau)
        elif args.command == "sweep":
            values = [v for v in args.values.split(",") if v.strip()]
            summaries = sweep(RunConfig.from_file(args.config), args.param, values, args.out, args.workers)
            codes = [s.exit_code for s in summaries]
            print(json.dumps([asdict(s) for s in summaries], indent=2))
            return max(codes, default=0)
        else:
            rows = read_timeseries(args.timeseries)
            if not rows:
                raise ConfigError(f"empty time series {args.timeseries}")
            print(json.dumps(fit_laws(rows), indent=2, sort_keys=True))
            return 0
    except ConfigError as err:
        logger.error("configuration error: %s", err)
        return 2
    except OSError as err:
        logger.error("%s", err)
        return 2
    print(summary.to_json())
    return summary.exit_code


if __name__ == "__main__":
    sys.exit(main())
