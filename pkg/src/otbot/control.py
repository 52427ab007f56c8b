"""Computed-torque tracking in task space, plus a torque feasibility check.

The control law cancels the task-space model and places two real poles per
axis, so each tracking-error coordinate obeys an independent second-order
linear ODE. The torque splits into a trajectory part (what following the
reference costs) and a correction part (what the feedback adds); the split
is what the feasibility analysis bounds with interval arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import RobotState, state_derivative, task_space_model
from .integrator import IntegratorOptions, IntegratorStats, advance_segment
from .interval import Interval, matvec
from .model import fik_matrix, iik_matrix
from .params import RobotParams
from .references import PlanReference, ReferenceTrajectory
from .simulate import ControlSequence, SimTrajectory, simulate_robot

DEFAULT_TORQUE_LIMIT = 50.0


@dataclass(frozen=True)
class Gains:
    """Diagonal PD gains together with the pole pair they place per axis."""

    kp: np.ndarray
    kv: np.ndarray
    poles: np.ndarray
    t_stab: np.ndarray

    def __post_init__(self) -> None:
        kp = np.atleast_1d(np.asarray(self.kp, dtype=float))
        kv = np.atleast_1d(np.asarray(self.kv, dtype=float))
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "kv", kv)
        object.__setattr__(self, "poles", np.asarray(self.poles, dtype=float).reshape(3, 2))
        object.__setattr__(self, "t_stab", np.atleast_1d(np.asarray(self.t_stab, dtype=float)))
        if kp.shape != (3,) or kv.shape != (3,):
            raise ValueError("need one kp and one kv per task coordinate")
        if np.any(kp <= 0.0) or np.any(kv <= 0.0):
            raise ValueError("gains must be positive")

    @property
    def Kp(self) -> np.ndarray:
        return np.diag(self.kp)

    @property
    def Kv(self) -> np.ndarray:
        return np.diag(self.kv)


def tune_gains(t_stab=3.0, separation: float = 10.0) -> Gains:
    """Place the error poles from a stabilisation time, one per axis or shared.

    The slow pole sits at -4/t_stab (the 2 percent settling rate of a
    first-order mode) and the fast pole ``separation`` times further left;
    kp is the product of the poles and kv their negated sum.
    """
    ts = np.broadcast_to(np.atleast_1d(np.asarray(t_stab, dtype=float)), (3,)).copy()
    if np.any(ts <= 0.0):
        raise ValueError("stabilisation times must be positive")
    s1 = -4.0 / ts
    s2 = separation * s1
    return Gains(kp=s1 * s2, kv=-(s1 + s2), poles=np.stack([s1, s2], axis=1), t_stab=ts)


@dataclass(frozen=True)
class ControlInput:
    """Torque command split into trajectory and correction parts (u = sum)."""

    u: np.ndarray
    u_traj: np.ndarray
    u_corr: np.ndarray


def computed_torque(
    params: RobotParams,
    state: RobotState,
    ref_sample,
    gains: Gains | None,
    velocity_from_wheels: bool = False,
) -> ControlInput:
    """Feedback-linearising torque for one control instant.

    ``ref_sample`` is the (p_d, dp_d, ddp_d) triple at the current time.
    With ``velocity_from_wheels`` the task velocity is reconstructed from
    the shaft rates through the forward instantaneous kinematics instead of
    read off the state; on admissible states the two agree. ``gains=None``
    drops the correction term (pure feedforward along the reference).
    """
    p_d, dp_d, ddp_d = ref_sample
    q = state.q
    dq = state.dq
    dp = fik_matrix(params, q) @ dq[3:6] if velocity_from_wheels else dq[:3]
    mbar, cbar = task_space_model(params, q, dq)
    u_traj = mbar @ ddp_d + cbar @ dp
    if gains is None:
        u_corr = np.zeros(3)
    else:
        e_p = q[:3] - p_d
        e_v = dp - dp_d
        u_corr = mbar @ (-gains.kp * e_p - gains.kv * e_v)
    return ControlInput(u=u_traj + u_corr, u_traj=u_traj, u_corr=u_corr)


@dataclass(frozen=True)
class ForcePulse:
    """Planar force on the pivot over the half-open window [t_on, t_off)."""

    t_on: float
    t_off: float
    fx: float = 0.0
    fy: float = 0.0

    def __post_init__(self) -> None:
        if not self.t_off > self.t_on:
            raise ValueError("pulse must have positive duration")


@dataclass(frozen=True)
class DisturbanceSchedule:
    pulses: tuple[ForcePulse, ...] = ()

    def force_at(self, t: float) -> np.ndarray:
        f = np.zeros(2)
        for pulse in self.pulses:
            if pulse.t_on <= t < pulse.t_off:
                f[0] += pulse.fx
                f[1] += pulse.fy
        return f

    def edges(self) -> list[float]:
        times = {p.t_on for p in self.pulses} | {p.t_off for p in self.pulses}
        return sorted(times)


@dataclass
class TrackingResult:
    """Closed-loop (or feedforward) run sampled on the control grid."""

    trajectory: SimTrajectory
    p_ref: np.ndarray
    v_ref: np.ndarray
    a_ref: np.ndarray
    e_p: np.ndarray
    e_v: np.ndarray
    u_traj: np.ndarray
    u_corr: np.ndarray


def _run_tracking(
    params: RobotParams,
    x0: np.ndarray,
    ref: ReferenceTrajectory,
    gains: Gains | None,
    control_rate: float,
    schedule: DisturbanceSchedule,
    t_end: float,
    options: IntegratorOptions,
    velocity_from_wheels: bool,
) -> TrackingResult:
    dt = 1.0 / control_rate
    n = int(round(t_end * control_rate))
    if not math.isclose(n * dt, t_end, rel_tol=0.0, abs_tol=1e-9):
        raise ValueError("t_end must be a whole number of control periods")
    edges = schedule.edges()

    times = dt * np.arange(n + 1)
    states = np.empty((n + 1, 12))
    controls = np.empty((n + 1, 3))
    derivs = np.empty((n + 1, 12))
    p_ref = np.empty((n + 1, 3))
    v_ref = np.empty((n + 1, 3))
    a_ref = np.empty((n + 1, 3))
    u_traj = np.empty((n + 1, 3))
    u_corr = np.empty((n + 1, 3))

    stats = IntegratorStats()
    x = np.asarray(x0, dtype=float).copy()
    h_carry = None
    for k in range(n + 1):
        t_k = float(times[k])
        sample = ref.sample(t_k)
        command = computed_torque(
            params, RobotState(q=x[:6], dq=x[6:]), sample, gains, velocity_from_wheels
        )
        states[k] = x
        controls[k] = command.u
        p_ref[k], v_ref[k], a_ref[k] = sample
        u_traj[k] = command.u_traj
        u_corr[k] = command.u_corr
        force = schedule.force_at(t_k)
        derivs[k] = state_derivative(
            params, x, command.u, pivot_force=force if force.any() else None
        )
        stats.fevals += 1
        if k == n:
            break

        # honour disturbance switches that fall inside the control period
        t_next = float(times[k + 1])
        stops = [t for t in edges if t_k < t < t_next]
        stops.append(t_next)
        t_seg = t_k
        for t_stop in stops:
            f_seg = schedule.force_at(t_seg)
            fv = (f_seg[0], f_seg[1]) if f_seg.any() else None

            def rhs(t, y, u=command.u, fv=fv):
                return state_derivative(params, y, u, pivot_force=fv)

            x, _, h_carry = advance_segment(
                rhs, t_seg, t_stop, x, options, stats, h_start=h_carry
            )
            t_seg = t_stop

    traj = SimTrajectory(
        times=times, states=states, controls=controls, derivs=derivs, stats=stats.as_dict()
    )
    return TrackingResult(
        trajectory=traj,
        p_ref=p_ref,
        v_ref=v_ref,
        a_ref=a_ref,
        e_p=states[:, 0:3] - p_ref,
        e_v=states[:, 6:9] - v_ref,
        u_traj=u_traj,
        u_corr=u_corr,
    )


def closed_loop_simulate(
    params: RobotParams,
    state0: RobotState | np.ndarray,
    ref: ReferenceTrajectory,
    gains: Gains,
    control_rate: float = 1000.0,
    disturbances: DisturbanceSchedule | None = None,
    t_end: float | None = None,
    options: IntegratorOptions | None = None,
    velocity_from_wheels: bool = False,
) -> TrackingResult:
    """Track ``ref`` with the computed-torque law under zero-order hold.

    The torque updates at ``control_rate``; disturbance pulses act as planar
    forces on the pivot and their switching instants are integration
    breakpoints, never stepped across.
    """
    x0 = state0.as_vector() if isinstance(state0, RobotState) else np.asarray(state0, dtype=float)
    return _run_tracking(
        params,
        x0,
        ref,
        gains,
        control_rate,
        disturbances or DisturbanceSchedule(),
        ref.horizon if t_end is None else float(t_end),
        options or IntegratorOptions(),
        velocity_from_wheels,
    )


def reference_start_state(params: RobotParams, ref: ReferenceTrajectory) -> RobotState:
    """On-reference initial state with the chassis facing the initial motion."""
    p0, v0, _ = ref.sample(0.0)
    theta = math.atan2(v0[1], v0[0]) if math.hypot(v0[0], v0[1]) > 1e-12 else p0[2]
    q = np.array([p0[0], p0[1], p0[2], 0.0, 0.0, p0[2] - theta])
    dp0 = np.asarray(v0, dtype=float)
    return RobotState(q=q, dq=np.concatenate([dp0, iik_matrix(params, q) @ dp0]))


def feedforward_rollout(
    params: RobotParams,
    ref: ReferenceTrajectory,
    rate: float = 100.0,
    t_end: float | None = None,
    x0: RobotState | None = None,
    options: IntegratorOptions | None = None,
) -> TrackingResult:
    """Open-loop run applying only the trajectory part of the torque.

    Starts on the reference unless ``x0`` is given. The applied torque is
    the feedforward term evaluated along the simulated motion, which is the
    nominal run the feasibility check linearises about.
    """
    state0 = x0 if x0 is not None else reference_start_state(params, ref)
    return _run_tracking(
        params,
        state0.as_vector(),
        ref,
        None,
        rate,
        DisturbanceSchedule(),
        ref.horizon if t_end is None else float(t_end),
        options or IntegratorOptions(),
        False,
    )


def track_planned_trajectory(
    params: RobotParams,
    plan: SimTrajectory,
    gains: Gains,
    control_rate: float = 1000.0,
    options: IntegratorOptions | None = None,
) -> TrackingResult:
    """Follow a planned state sequence closed loop from its first state."""
    ref = PlanReference(plan)
    return closed_loop_simulate(
        params,
        RobotState.from_vector(plan.states[0]),
        ref,
        gains,
        control_rate=control_rate,
        t_end=ref.horizon,
        options=options,
    )


def open_loop_replay(
    params: RobotParams,
    plan: SimTrajectory,
    options: IntegratorOptions | None = None,
) -> SimTrajectory:
    """Re-run the planned torque sequence blind from the plan's first state."""
    times = plan.times
    dt = float(times[1] - times[0])
    if not np.allclose(np.diff(times), dt, rtol=0.0, atol=1e-9):
        raise ValueError("plan grid must be uniform")
    controls = ControlSequence(t0=float(times[0]), dt=dt, samples=plan.controls[:-1])
    return simulate_robot(
        params,
        RobotState.from_vector(plan.states[0]),
        controls,
        t_end=float(times[-1]),
        options=options,
        output_times=times,
    )


@dataclass(frozen=True)
class TorqueBounds:
    """Actuator limits and the error box the feedback may have to act on."""

    limits: Interval
    position_box: Interval
    velocity_box: Interval

    def __post_init__(self) -> None:
        zero = np.zeros(3)
        if not (self.position_box.contains(zero) and self.velocity_box.contains(zero)):
            raise ValueError("error boxes must contain zero")

    @classmethod
    def symmetric(
        cls,
        torque: float = DEFAULT_TORQUE_LIMIT,
        position: float = 0.05,
        velocity: float = 0.25,
    ) -> "TorqueBounds":
        return cls(
            limits=Interval.symmetric(np.full(3, torque)),
            position_box=Interval.symmetric(np.full(3, position)),
            velocity_box=Interval.symmetric(np.full(3, velocity)),
        )


@dataclass
class FeasibilityReport:
    """Per-time torque intervals from the feasibility analysis."""

    times: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    nominal: np.ndarray
    mbar: np.ndarray
    cbar: np.ndarray
    v_ref: np.ndarray
    a_ref: np.ndarray
    bounds: TorqueBounds
    ok: bool
    worst_margin: float
    note: str

    def interval_at(self, k: int) -> Interval:
        return Interval(self.lo[k], self.hi[k])


def torque_feasibility(
    params: RobotParams,
    ref: ReferenceTrajectory,
    gains: Gains,
    bounds: TorqueBounds | None = None,
    rate: float = 100.0,
    t_end: float | None = None,
    x0: RobotState | None = None,
    options: IntegratorOptions | None = None,
) -> FeasibilityReport:
    """Interval certificate that tracking torques stay inside actuator limits.

    Rolls the model open loop along the reference, then at every grid time
    bounds u = u_traj + u_corr over all position and velocity errors inside
    the given boxes. The task-space matrices are frozen at the rollout
    state, so the certificate is first order in the error box; the report
    notes this approximation.
    """
    bounds = bounds or TorqueBounds.symmetric()
    roll = feedforward_rollout(params, ref, rate=rate, t_end=t_end, x0=x0, options=options)
    states = roll.trajectory.states
    n = len(roll.trajectory.times)

    lo = np.empty((n, 3))
    hi = np.empty((n, 3))
    nominal = np.empty((n, 3))
    mbars = np.empty((n, 3, 3))
    cbars = np.empty((n, 3, 3))
    for k in range(n):
        mbar, cbar = task_space_model(params, states[k, :6], states[k, 6:])
        mbars[k] = mbar
        cbars[k] = cbar
        feedback = bounds.position_box.scale(-gains.kp) + bounds.velocity_box.scale(-gains.kv)
        corr = matvec(mbar, feedback)
        traj = matvec(cbar, bounds.velocity_box + roll.v_ref[k]) + mbar @ roll.a_ref[k]
        total = corr + traj
        lo[k] = total.lo
        hi[k] = total.hi
        nominal[k] = mbar @ roll.a_ref[k] + cbar @ roll.v_ref[k]

    margin = float(np.minimum(bounds.limits.hi - hi, lo - bounds.limits.lo).min())
    return FeasibilityReport(
        times=roll.trajectory.times,
        lo=lo,
        hi=hi,
        nominal=nominal,
        mbar=mbars,
        cbar=cbars,
        v_ref=roll.v_ref,
        a_ref=roll.a_ref,
        bounds=bounds,
        ok=bool(margin >= 0.0),
        worst_margin=margin,
        note=(
            "interval hull holds the task-space matrices at the nominal "
            "feedforward rollout; it is first order in the error box"
        ),
    )


@dataclass(frozen=True)
class TransientMetrics:
    peak: float
    t_peak: float
    recovery: float | None


def transient_metrics(
    times: np.ndarray,
    signal: np.ndarray,
    onset: float,
    window_end: float | None = None,
    fraction: float = 0.02,
    sustained: bool = False,
) -> TransientMetrics:
    """Peak of |signal| after ``onset`` and the time it settles below 2 percent.

    Recovery is measured from the onset to the first sample at or below
    ``fraction`` times the peak after the peak, or None if that never
    happens inside the window. With ``sustained`` the signal must also stay
    below the threshold for the rest of the window, which matters for
    oscillatory errors that dip through zero on the way up.
    """
    times = np.asarray(times, dtype=float)
    s = np.abs(np.asarray(signal, dtype=float))
    end = float(times[-1]) if window_end is None else float(window_end)
    mask = (times >= onset) & (times <= end)
    tw = times[mask]
    sw = s[mask]
    i = int(np.argmax(sw))
    peak = float(sw[i])
    tail = sw[i:] <= fraction * peak
    if sustained:
        # last crossing into the band, provided the band holds afterwards
        above = np.nonzero(~tail)[0]
        first = above[-1] + 1 if len(above) else 0
        below = np.array([first]) if first < len(tail) else np.array([], dtype=int)
    else:
        below = np.nonzero(tail)[0]
    recovery = float(tw[i + below[0]] - onset) if len(below) else None
    return TransientMetrics(peak=peak, t_peak=float(tw[i]), recovery=recovery)
