"""Command-line front end: simulate / identify / control / check-torques.

Every run writes its CSV artifacts plus a manifest.json into --out. Exit
codes: 0 success, 2 configuration problems (bad files, bad flags), 1
numerical failures at run time. Errors print as a single line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .control import (
    TorqueBounds,
    closed_loop_simulate,
    open_loop_replay,
    torque_feasibility,
    track_planned_trajectory,
    transient_metrics,
    tune_gains,
)
from .identify import (
    BASIC_GUESS,
    CHASSIS_GUESS,
    FitOptions,
    PLATFORM_DEVIATION,
    chassis_experiment,
    identify_basic,
    identify_chassis,
    identify_platform,
    platform_guess,
    run_pipeline,
    sensitivity_sweep,
    wheel_experiment,
    platform_shaft_experiment,
    _predict_outputs,
)
from .integrator import IntegrationError, IntegratorOptions
from .params import RobotParams, load_params, nominal_params
from .scenarios import (
    BUNDLED_SCENARIOS,
    ConfigError,
    ScenarioConfig,
    _bundle_dir,
    ensure_plan,
    load_scenario,
    make_reference,
    scenario_listing,
)
from .sensors import SensorModel
from .sensors import sample_sensors
from .simulate import ControlSequence, simulate_robot, simulate_shaft, trajectory_from_csv, trajectory_to_csv


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    rows = np.column_stack(columns)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _Run:
    """Collects emitted files and writes the manifest at the end."""

    def __init__(self, command: str, out_dir: Path, options: IntegratorOptions | None = None):
        self.command = command
        self.out = out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.options = options or IntegratorOptions()
        self.configs: list[Path] = []
        self.files: list[str] = []
        self.seeds: dict[str, int] = {}
        self.t0 = time.perf_counter()

    def emit(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def finish(self) -> None:
        payload = {
            "tool": f"otbot {__version__}",
            "command": self.command,
            "config_sha256": {str(p): _sha256(p) for p in self.configs if p.exists()},
            "seeds": self.seeds,
            "integrator": {"rtol": self.options.rtol, "atol": self.options.atol},
            "wall_clock_s": round(time.perf_counter() - self.t0, 3),
            "files": sorted(self.files),
        }
        tmp = self.out / "manifest.json.tmp"
        tmp.write_text(json.dumps(payload, indent=2) + "\n")
        os.replace(tmp, self.out / "manifest.json")


def _resolve_seed(flag_seed: int | None, cfg_seed: int = 0) -> int:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get("OTBOT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"OTBOT_SEED must be an integer, got {env!r}") from exc
    return cfg_seed


def _load_params_arg(path: str | None, fallback: RobotParams) -> tuple[RobotParams, Path | None]:
    if path is None:
        return fallback, None
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"params file not found: {p}")
    try:
        return load_params(p), p
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_kv(path: str | None) -> tuple[dict[str, float], Path | None]:
    """Flat key = value file into a dict (used for guess and gains files)."""
    if path is None:
        return {}, None
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"file not found: {p}")
    values: dict[str, float] = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, text = line.partition("=")
        try:
            values[key.strip()] = float(text.strip())
        except ValueError as exc:
            raise ConfigError(f"{p}:{lineno}: not a number: {text.strip()!r}") from exc
    return values, p


def _write_sensor_csv(run: _Run, name: str, record) -> None:
    vals = np.atleast_2d(record.values.T).T
    if record.kind == "imu":
        header = ["time", "accel_x", "accel_y", "angular_rate"]
    else:
        header = ["time", "rate"]
    _write_csv(run.emit(name), header, [record.times] + [vals[:, i] for i in range(vals.shape[1])])


# ---------------------------------------------------------------- simulate


def _cmd_simulate(args) -> int:
    out = Path(args.out)
    run = _Run("simulate", out)

    if args.scenario:
        cfg = load_scenario(args.scenario)
        run.configs.append(cfg.path)
        params, pfile = _load_params_arg(args.params, cfg.params)
        if pfile:
            run.configs.append(pfile)
        seed = _resolve_seed(args.seed, cfg.seed)
        run.seeds["scenario"] = seed

        if cfg.mode == "shaft":
            inertia, damping = (
                (params.Ia, params.bw) if cfg.axis == "wheel" else (params.Ip, params.bp)
            )
            controls = ControlSequence.constant([cfg.shaft_torque], cfg.horizon, cfg.torque_rate)
            grid = np.arange(int(round(cfg.horizon * cfg.sensor_rate)) + 1) / cfg.sensor_rate
            traj = simulate_shaft(inertia, damping, controls, output_times=grid)
            _write_csv(
                run.emit("shaft.csv"),
                ["time", "angle", "rate", "torque"],
                [traj.times, traj.states[:, 0], traj.states[:, 1], traj.controls[:, 0]],
            )
            for kind, sigma in cfg.sensors.items():
                model = SensorModel(kind="encoder", sigma=sigma, rate=cfg.sensor_rate, axis=1)
                _write_sensor_csv(run, f"{kind}.csv", sample_sensors(traj, model, seed))
        elif cfg.mode == "torques":
            controls = ControlSequence.constant(cfg.torques, cfg.horizon, cfg.torque_rate)
            grid = np.arange(int(round(cfg.horizon * cfg.sensor_rate)) + 1) / cfg.sensor_rate
            traj = simulate_robot(params, cfg.initial_state(), controls, output_times=grid)
            trajectory_to_csv(traj, run.emit("trajectory.csv"))
            for kind, sigma in cfg.sensors.items():
                model = SensorModel(kind=kind, sigma=sigma, rate=cfg.sensor_rate)
                _write_sensor_csv(run, f"{kind}.csv", sample_sensors(traj, model, seed))
        else:
            raise ConfigError(
                f"scenario {cfg.name!r} is a {cfg.mode} scenario; use the control subcommand"
            )
    else:
        if args.torques is None or args.duration is None:
            raise ConfigError("simulate needs either --scenario or both --torques and --duration")
        params, pfile = _load_params_arg(args.params, nominal_params())
        if pfile:
            run.configs.append(pfile)
        torques = np.array([float(v) for v in args.torques.split(",")])
        if torques.shape != (3,):
            raise ConfigError("--torques needs exactly three comma-separated values")
        controls = ControlSequence.constant(torques, args.duration, args.rate)
        grid = np.arange(int(round(args.duration * args.rate)) + 1) / args.rate
        from .dynamics import RobotState

        traj = simulate_robot(params, RobotState.rest(), controls, output_times=grid)
        trajectory_to_csv(traj, run.emit("trajectory.csv"))

    run.finish()
    return 0


# ---------------------------------------------------------------- identify


def _report_estimate(fh, label: str, est, truth: dict[str, float], guesses: dict[str, float]) -> None:
    fh.write(f"[{label}]\n")
    fh.write(f"converged = {est.converged}\n")
    fh.write(f"iterations = {est.iterations}\n")
    fh.write(f"loss = {_fmt(est.loss)}\n")
    for name, value in zip(est.names, est.values):
        err = abs(value - truth[name])
        fh.write(
            f"{name}: guess {_fmt(guesses[name])} -> estimate {_fmt(value)} "
            f"(true {_fmt(truth[name])}, abs error {_fmt(err)})\n"
        )
    fh.write("\n")


def _fit_data_csv(run: _Run, name: str, candidate: dict, fixed, exp) -> None:
    pred = _predict_outputs(candidate, fixed, exp, IntegratorOptions())
    meas = exp.record.values
    meas = meas if meas.ndim == 2 else meas[:, None]
    if meas.shape[1] == 3:
        header = ["time"]
        for channel in ("accel_x", "accel_y", "angular_rate"):
            header += [f"measured_{channel}", f"predicted_{channel}"]
        cols = [exp.record.times]
        for i in range(3):
            cols += [meas[:, i], pred[:, i]]
    else:
        header = ["time", "measured_rate", "predicted_rate"]
        cols = [exp.record.times, meas[:, 0], pred[:, 0]]
    _write_csv(run.emit(name), header, cols)


def _cmd_identify(args) -> int:
    out = Path(args.out)
    run = _Run("identify", out)
    params, pfile = _load_params_arg(args.params, nominal_params())
    if pfile:
        run.configs.append(pfile)
    guesses, gfile = _load_kv(args.guess)
    if gfile:
        run.configs.append(gfile)
    seed = _resolve_seed(args.seed)
    run.seeds["base"] = seed
    options = FitOptions(jobs=args.jobs)
    truth = params.as_dict()
    truth["Ip0"] = params.Ip
    deviation = guesses.get("deviation", PLATFORM_DEVIATION)
    g1 = {**BASIC_GUESS, **{k: v for k, v in guesses.items() if k in BASIC_GUESS}}
    g2 = {**CHASSIS_GUESS, **{k: v for k, v in guesses.items() if k in CHASSIS_GUESS}}

    report_path = run.emit("report.txt")
    est_rows: list[tuple] = []
    with open(report_path, "w") as fh:
        if args.step == "all":
            # Chained: each step consumes the previous estimates.
            result = run_pipeline(
                params,
                seed=seed,
                basic_guess=g1,
                chassis_guess=g2,
                platform_deviation=deviation,
                platform_window=args.window,
                options=options,
            )
            est1, est2, est3 = result.step1, result.step2, result.step3
            known2 = params.replace(
                Ia=est1["Ia"], bw=est1["bw"], bp=est1["bp"], Ip=est1["Ip0"], xF=0.0, yF=0.0
            )
            known3 = known2.replace(**est2.as_dict())
            g3 = platform_guess(deviation, params.mp, est1["Ip0"])
        else:
            # Single step: everything else is held at the file values.
            est1 = est2 = est3 = None
            known2 = params.replace(xF=0.0, yF=0.0)
            known3 = params
            g3 = platform_guess(deviation, params.mp, params.Ip)
            if args.step == "1":
                est1 = identify_basic(
                    wheel_experiment(params, seed=seed),
                    platform_shaft_experiment(params, seed=seed),
                    g1,
                    options,
                )
            elif args.step == "2":
                est2 = identify_chassis(
                    chassis_experiment(params, seed=seed + 1), known2, g2, options
                )
            else:
                exp3 = chassis_experiment(params, seed=seed + 2, duration=args.window)
                est3 = identify_platform(exp3, known3, g3, options)

        if est1 is not None:
            _report_estimate(fh, "step1", est1, truth, g1)
            est_rows += [("step1", n, g1[n], est1[n], truth[n]) for n in est1.names]
            _fit_data_csv(
                run, "fit_step1_wheel.csv",
                {"inertia": est1["Ia"], "damping": est1["bw"]}, {},
                wheel_experiment(params, seed=seed),
            )
            _fit_data_csv(
                run, "fit_step1_platform.csv",
                {"inertia": est1["Ip0"], "damping": est1["bp"]}, {},
                platform_shaft_experiment(params, seed=seed),
            )
        if est2 is not None:
            _report_estimate(fh, "step2", est2, truth, g2)
            est_rows += [("step2", n, g2[n], est2[n], truth[n]) for n in est2.names]
            _fit_data_csv(
                run, "fit_step2.csv", est2.as_dict(), known2,
                chassis_experiment(params, seed=seed + 1),
            )
        if est3 is not None:
            _report_estimate(fh, "step3", est3, truth, g3)
            est_rows += [("step3", n, g3[n], est3[n], truth[n]) for n in est3.names]
            _fit_data_csv(
                run, "fit_step3.csv", est3.as_dict(), known3,
                chassis_experiment(params, seed=seed + 2, duration=args.window),
            )
            if args.sweep > 0:
                cells = sensitivity_sweep(
                    deviations=(0.05, 0.10, 0.15, 0.20, 0.25),
                    seeds=range(args.sweep),
                    true_params=params,
                    options=options,
                )
                _write_csv(
                    run.emit("sweep.csv"),
                    ["deviation", "seed", "err_mp", "err_Ip", "err_xF", "err_yF", "converged"],
                    [np.array([float(c[k]) for c in cells]) for k in
                     ("deviation", "seed", "err_mp", "err_Ip", "err_xF", "err_yF", "converged")],
                )

    with open(run.emit("estimates.csv"), "w") as fh:
        fh.write("step,name,guess,estimate,true,abs_error\n")
        for step, name, guess, value, true in est_rows:
            fh.write(
                f"{step},{name},{_fmt(guess)},{_fmt(value)},{_fmt(true)},"
                f"{_fmt(abs(value - true))}\n"
            )
    run.finish()
    return 0


# ---------------------------------------------------------------- control


def _write_tracking_outputs(run: _Run, result) -> None:
    traj = result.trajectory
    trajectory_to_csv(traj, run.emit("trajectory.csv"))
    t = traj.times
    _write_csv(
        run.emit("errors.csv"),
        ["time", "ep_x", "ep_y", "ep_alpha", "ev_x", "ev_y", "ev_alpha"],
        [t] + [result.e_p[:, i] for i in range(3)] + [result.e_v[:, i] for i in range(3)],
    )
    _write_csv(
        run.emit("reference.csv"),
        ["time", "pd_x", "pd_y", "pd_alpha", "vd_x", "vd_y", "vd_alpha", "ad_x", "ad_y", "ad_alpha"],
        [t] + [result.p_ref[:, i] for i in range(3)]
            + [result.v_ref[:, i] for i in range(3)]
            + [result.a_ref[:, i] for i in range(3)],
    )
    _write_csv(
        run.emit("torques.csv"),
        ["time", "u_r", "u_l", "u_p", "utraj_r", "utraj_l", "utraj_p", "ucorr_r", "ucorr_l", "ucorr_p"],
        [t] + [traj.controls[:, i] for i in range(3)]
            + [result.u_traj[:, i] for i in range(3)]
            + [result.u_corr[:, i] for i in range(3)],
    )


def _write_feasibility(run: _Run, report) -> None:
    _write_csv(
        run.emit("feasibility.csv"),
        ["time", "lo_r", "lo_l", "lo_p", "hi_r", "hi_l", "hi_p", "nom_r", "nom_l", "nom_p"],
        [report.times] + [report.lo[:, i] for i in range(3)]
            + [report.hi[:, i] for i in range(3)]
            + [report.nominal[:, i] for i in range(3)],
    )


def _cmd_control(args) -> int:
    out = Path(args.out)
    run = _Run("control", out)
    cfg = load_scenario(args.scenario if args.scenario != "plan" else "plan-tracking")
    run.configs.append(cfg.path)
    params, pfile = _load_params_arg(args.params, cfg.params)
    if pfile:
        run.configs.append(pfile)
    gains_kv, gfile = _load_kv(args.gains)
    if gfile:
        run.configs.append(gfile)
    t_stab = gains_kv.get("t_stab", cfg.t_stab)
    gains = tune_gains(t_stab)
    rate = args.rate or cfg.loop_rate
    seed = _resolve_seed(args.seed, cfg.seed)
    run.seeds["scenario"] = seed

    with open(run.emit("report.txt"), "w") as fh:
        fh.write(f"scenario = {cfg.name}\n")
        fh.write(f"kp = {gains.kp[0]:.3f}\nkv = {gains.kv[0]:.3f}\n")
        fh.write(f"poles = {_fmt(gains.poles[0][0])}, {_fmt(gains.poles[0][1])}\n")

        if cfg.mode == "controller":
            ref = make_reference(cfg.reference)
            x0 = cfg.initial_state(ref)
            result = closed_loop_simulate(
                params, x0, ref, gains, control_rate=rate, disturbances=cfg.disturbances
            )
            _write_tracking_outputs(run, result)
            feas = torque_feasibility(params, ref, gains)
            _write_feasibility(run, feas)
            ep = np.linalg.norm(result.e_p[:, :2], axis=1)
            fh.write(f"peak_position_error = {_fmt(ep.max())}\n")
            fh.write(f"peak_alpha_error = {_fmt(np.abs(result.e_p[:, 2]).max())}\n")
            fh.write(f"feasible = {feas.ok}\n")
            fh.write(f"feasibility_margin = {_fmt(feas.worst_margin)}\n")
        elif cfg.mode == "plan":
            plan_path = Path(args.plan) if args.plan else ensure_plan(cfg, out)
            if args.plan and not plan_path.exists():
                raise ConfigError(f"plan file not found: {plan_path}")
            run.configs.append(plan_path)
            if plan_path.parent == out and plan_path.name not in run.files:
                run.files.append(plan_path.name)
            try:
                plan = trajectory_from_csv(plan_path)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            result = track_planned_trajectory(params, plan, gains, control_rate=rate)
            _write_tracking_outputs(run, result)
            replay = open_loop_replay(params, plan)
            trajectory_to_csv(replay, run.emit("replay.csv"))
            drift = np.linalg.norm(replay.states[:, 0:2] - plan.states[:, 0:2], axis=1)
            ep = np.linalg.norm(result.e_p[:, :2], axis=1)
            fh.write(f"open_loop_drift_max = {_fmt(drift.max())}\n")
            fh.write(f"open_loop_drift_final = {_fmt(drift[-1])}\n")
            fh.write(f"closed_loop_position_error_max = {_fmt(ep.max())}\n")
        else:
            raise ConfigError(
                f"scenario {cfg.name!r} is a {cfg.mode} scenario; use the simulate subcommand"
            )

    run.finish()
    return 0


def _cmd_check_torques(args) -> int:
    out = Path(args.out)
    run = _Run("check-torques", out)
    cfg = load_scenario(args.scenario)
    run.configs.append(cfg.path)
    if cfg.mode != "controller":
        raise ConfigError(f"check-torques needs a controller scenario, got {cfg.mode!r}")
    params, pfile = _load_params_arg(args.params, cfg.params)
    if pfile:
        run.configs.append(pfile)
    gains = tune_gains(cfg.t_stab)
    bounds = TorqueBounds.symmetric(torque=args.limit)
    ref = make_reference(cfg.reference)
    report = torque_feasibility(params, ref, gains, bounds)
    _write_feasibility(run, report)
    with open(run.emit("report.txt"), "w") as fh:
        fh.write(f"scenario = {cfg.name}\n")
        fh.write(f"torque_limit = {_fmt(args.limit)}\n")
        fh.write(f"feasible = {report.ok}\n")
        fh.write(f"worst_margin = {_fmt(report.worst_margin)}\n")
        fh.write(f"note = {report.note}\n")
    run.finish()
    print("feasible" if report.ok else "infeasible")
    return 0


def _cmd_scenarios(args) -> int:
    print(scenario_listing())
    if args.export:
        target = Path(args.export)
        target.mkdir(parents=True, exist_ok=True)
        for path in sorted(_bundle_dir().glob("*.cfg")):
            shutil.copy(path, target / path.name)
        print(f"exported scenario files to {target}")
    return 0


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otbot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="open-loop rollout (scenario or explicit torques)")
    p_sim.add_argument("--scenario", help="bundled scenario name or scenario file path")
    p_sim.add_argument("--params", help="robot parameter file")
    p_sim.add_argument("--torques", help="three comma-separated motor torques")
    p_sim.add_argument("--duration", type=float, help="run length in seconds")
    p_sim.add_argument("--rate", type=float, default=100.0, help="control grid rate [Hz]")
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=_cmd_simulate)

    p_id = sub.add_parser("identify", help="run the parameter-identification pipeline")
    p_id.add_argument("--step", choices=("1", "2", "3", "all"), default="all")
    p_id.add_argument("--params", help="true plant parameter file (defaults to nominal)")
    p_id.add_argument("--guess", help="initial-guess overrides, key = value")
    p_id.add_argument("--seed", type=int, default=None)
    p_id.add_argument("--jobs", type=int, default=1, help="worker cap for Jacobian columns")
    p_id.add_argument("--sweep", type=int, default=2,
                      help="seeds for the step-3 sensitivity sweep (0 disables)")
    p_id.add_argument("--window", type=float, default=1.0,
                      help="step-3 record length in seconds")
    p_id.add_argument("--out", required=True)
    p_id.set_defaults(func=_cmd_identify)

    p_ctl = sub.add_parser("control", help="closed-loop tracking runs")
    p_ctl.add_argument("--scenario", required=True,
                       help="corridor | plan | figure8, or a scenario file path")
    p_ctl.add_argument("--params", help="robot parameter file override")
    p_ctl.add_argument("--gains", help="gain file (t_stab = seconds)")
    p_ctl.add_argument("--plan", help="planned trajectory CSV (plan scenario)")
    p_ctl.add_argument("--rate", type=float, default=None, help="control rate override [Hz]")
    p_ctl.add_argument("--seed", type=int, default=None)
    p_ctl.add_argument("--out", required=True)
    p_ctl.set_defaults(func=_cmd_control)

    p_chk = sub.add_parser("check-torques", help="interval feasibility of tracking torques")
    p_chk.add_argument("--scenario", required=True)
    p_chk.add_argument("--params", help="robot parameter file override")
    p_chk.add_argument("--limit", type=float, default=50.0, help="torque limit [N m]")
    p_chk.add_argument("--out", required=True)
    p_chk.set_defaults(func=_cmd_check_torques)

    p_lst = sub.add_parser("scenarios", help="list bundled scenarios")
    p_lst.add_argument("--export", help="copy bundled scenario files to a directory")
    p_lst.set_defaults(func=_cmd_scenarios)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 2
    except IntegrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
