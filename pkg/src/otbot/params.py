"""Robot parameter set and its on-disk format.

Parameters are expressed in SI units. The geometric layout is a differential
drive chassis (wheel radius ``r``, half axle track ``l2``) carrying a platform
on a motorised pivot located ``l1`` ahead of the wheel axle midpoint. Centre
of mass offsets are given in the respective body frames, both of which have
their origin at the pivot point.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class RobotParams:
    """Physical parameters of the robot.

    l1, l2, r   pivot offset, half wheel separation, wheel radius [m]
    xB, yB      chassis centre of mass in the chassis frame [m]
    xF, yF      platform centre of mass in the platform frame [m]
    mc, mp      chassis mass (incl. wheels) and platform mass [kg]
    Ic, Ip      vertical inertias of chassis and platform about their own
                centres of mass [kg m^2]
    Ia          axial inertia of one wheel [kg m^2]
    bw, bp      viscous friction of a wheel axle / the pivot axle [N m s]
    """

    l1: float
    l2: float
    r: float
    xB: float
    yB: float
    xF: float
    yF: float
    mc: float
    mp: float
    Ic: float
    Ip: float
    Ia: float
    bw: float
    bp: float

    def __post_init__(self) -> None:
        for name in ("l1", "l2", "r"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("mc", "mp", "Ic", "Ip", "Ia"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("bw", "bp"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        for name in dataclasses.asdict(self):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")

    def replace(self, **changes: float) -> "RobotParams":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict[str, float]:
        return dataclasses.asdict(self)


PARAM_FIELDS = tuple(f.name for f in dataclasses.fields(RobotParams))


def nominal_params() -> RobotParams:
    """Catalogue values of the physical robot (unloaded platform)."""
    return RobotParams(
        l1=0.25,
        l2=0.20,
        r=0.10,
        xB=-0.13,
        yB=0.0,
        xF=0.0,
        yF=0.0,
        mc=109.14,
        mp=21.95,
        Ic=1.30,
        Ip=2.22,
        Ia=1.04e-2,
        bw=0.18,
        bp=0.24,
    )


def frictionless(params: RobotParams) -> RobotParams:
    """Copy of ``params`` with both viscous friction coefficients zeroed.

    The tracking-control studies neglect friction; this keeps that choice in
    one place.
    """
    return params.replace(bw=0.0, bp=0.0)


def load_params(path: str | Path) -> RobotParams:
    """Read a flat ``key = value`` parameter file.

    Blank lines and ``#`` comments are ignored. Every robot parameter must be
    present exactly once; unknown keys are an error so typos do not silently
    fall back to defaults.
    """
    path = Path(path)
    values: dict[str, float] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, text = line.partition("=")
        key = key.strip()
        if key not in PARAM_FIELDS:
            raise ValueError(f"{path}:{lineno}: unknown parameter {key!r}")
        if key in values:
            raise ValueError(f"{path}:{lineno}: duplicate parameter {key!r}")
        try:
            values[key] = float(text.strip())
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad value for {key!r}: {text.strip()!r}") from exc
    missing = [name for name in PARAM_FIELDS if name not in values]
    if missing:
        raise ValueError(f"{path}: missing parameters: {', '.join(missing)}")
    return RobotParams(**values)


def save_params(params: RobotParams, path: str | Path) -> None:
    path = Path(path)
    lines = [f"{name} = {getattr(params, name)!r}" for name in PARAM_FIELDS]
    path.write_text("\n".join(lines) + "\n")
