"""Single-track vehicle model with Pacejka lateral tire forces.

The dynamic model is blended with a kinematic single-track model below a
configurable speed window, where slip angles are undefined. Integration is a
fixed-step classical Runge-Kutta scheme over the blended derivative.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
import numpy as np

from racesim import _pykernels, kernels


class NonFiniteStateError(RuntimeError):
    """Raised when an integration step produces NaN or Inf."""


def wrap_angle(angle: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    v_x: float = 0.0
    v_y: float = 0.0
    psi_dot: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi, self.v_x, self.v_y, self.psi_dot])

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        return cls(*(float(v) for v in arr))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ControlInput:
    a: float = 0.0
    delta: float = 0.0


@dataclass(frozen=True)
class PacejkaCoeffs:
    B: float
    C: float
    mu: float


@dataclass(frozen=True)
class VehicleParams:
    m: float
    I_z: float
    l_f: float
    l_r: float
    h_cg: float
    pacejka_front: PacejkaCoeffs
    pacejka_rear: PacejkaCoeffs
    g: float = 9.81
    delta_max: float = 0.4189
    a_max: float = 9.51
    v_blend_lo: float = 0.5
    v_blend_hi: float = 1.5

    def __post_init__(self):
        for name in ("m", "I_z", "l_f", "l_r"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.v_blend_lo < self.v_blend_hi:
            raise ValueError("v_blend_lo must be below v_blend_hi")
        for coeffs in (self.pacejka_front, self.pacejka_rear):
            if not (coeffs.B > 0 and coeffs.C > 0 and coeffs.mu > 0):
                raise ValueError("Pacejka B, C and mu must be positive")

    @property
    def wheelbase(self) -> float:
        return self.l_f + self.l_r

    @property
    def axle_loads(self) -> tuple[float, float]:
        """Static normal loads (front, rear) in N."""
        weight = self.m * self.g
        return weight * self.l_r / self.wheelbase, weight * self.l_f / self.wheelbase

    def kernel_vector(self) -> tuple:
        F_zf, F_zr = self.axle_loads
        pf, pr = self.pacejka_front, self.pacejka_rear
        return (
            self.m, self.I_z, self.l_f, self.l_r, F_zf, F_zr,
            pf.B, pf.C, pf.mu, pr.B, pr.C, pr.mu,
            self.v_blend_lo, self.v_blend_hi,
        )

    @classmethod
    def from_dict(cls, data: dict) -> "VehicleParams":
        data = dict(data)
        data["pacejka_front"] = PacejkaCoeffs(**data["pacejka_front"])
        data["pacejka_rear"] = PacejkaCoeffs(**data["pacejka_rear"])
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS: dict[str, VehicleParams] = {
    # 1:10 scale car, geometry and inertia after the F1TENTH reference vehicle.
    "f1tenth": VehicleParams(
        m=3.74,
        I_z=0.04712,
        l_f=0.15875,
        l_r=0.17145,
        h_cg=0.074,
        pacejka_front=PacejkaCoeffs(B=7.0, C=1.5, mu=1.0),
        pacejka_rear=PacejkaCoeffs(B=7.0, C=1.5, mu=1.0),
        delta_max=0.4189,
        a_max=9.51,
        v_blend_lo=0.5,
        v_blend_hi=1.5,
    ),
    "gokart": VehicleParams(
        m=190.0,
        I_z=45.0,
        l_f=0.60,
        l_r=0.45,
        h_cg=0.25,
        pacejka_front=PacejkaCoeffs(B=9.0, C=1.4, mu=0.9),
        pacejka_rear=PacejkaCoeffs(B=10.0, C=1.4, mu=0.9),
        delta_max=0.45,
        a_max=5.0,
        v_blend_lo=1.0,
        v_blend_hi=3.0,
    ),
}


def preset(name: str) -> VehicleParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown vehicle preset {name!r}; choose from {sorted(PRESETS)}") from None


def clamp_input(u: ControlInput, params: VehicleParams) -> ControlInput:
    a = min(max(u.a, -params.a_max), params.a_max)
    delta = min(max(u.delta, -params.delta_max), params.delta_max)
    return ControlInput(a, delta)


def slip_angles(state: VehicleState, delta: float, params: VehicleParams) -> tuple[float, float]:
    """Front and rear slip angles. Only meaningful for v_x >= v_blend_lo."""
    alpha_f = math.atan((state.v_y + params.l_f * state.psi_dot) / state.v_x) - delta
    alpha_r = math.atan((state.v_y - params.l_r * state.psi_dot) / state.v_x)
    return alpha_f, alpha_r


def tire_force(alpha: float, F_z: float, coeffs: PacejkaCoeffs) -> float:
    """Simplified Magic Formula lateral force, opposing the slip angle."""
    return -coeffs.mu * F_z * math.sin(coeffs.C * math.atan(coeffs.B * alpha))


def blend_weight(v_x: float, params: VehicleParams) -> float:
    """Weight of the dynamic model: 0 below v_blend_lo, 1 above v_blend_hi, linear between."""
    w = (v_x - params.v_blend_lo) / (params.v_blend_hi - params.v_blend_lo)
    return min(max(w, 0.0), 1.0)


_MODEL_IDS = {"blended": 0, "dynamic": 1, "kinematic": 2}


def _derivative(state: VehicleState, u: ControlInput, params: VehicleParams, model: str) -> np.ndarray:
    s = (state.x, state.y, state.psi, state.v_x, state.v_y, state.psi_dot)
    return np.array(_pykernels._derivative(s, u.a, u.delta, params.kernel_vector(), _MODEL_IDS[model]))


def dynamic_derivative(state: VehicleState, u: ControlInput, params: VehicleParams) -> np.ndarray:
    """Time derivative of (x, y, psi, v_x, v_y, psi_dot) under the dynamic model.

    Requires v_x >= v_blend_lo; slip angles are singular at standstill.
    """
    return _derivative(state, u, params, "dynamic")


def kinematic_derivative(state: VehicleState, u: ControlInput, params: VehicleParams) -> np.ndarray:
    """Slip-free derivative; v_x is the model speed and v_y, psi_dot track the sideslip beta."""
    return _derivative(state, u, params, "kinematic")


def blended_derivative(state: VehicleState, u: ControlInput, params: VehicleParams) -> np.ndarray:
    return _derivative(state, u, params, "blended")


def step(
    state: VehicleState,
    u: ControlInput,
    dt: float,
    params: VehicleParams,
    model: str = "blended",
) -> VehicleState:
    """Advance ``state`` by one RK4 step of length ``dt`` under clamped input ``u``.

    ``model`` selects the derivative ("blended", "dynamic" or "kinematic"); the
    non-default choices exist for model comparisons.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    u = clamp_input(u, params)
    s = (state.x, state.y, state.psi, state.v_x, state.v_y, state.psi_dot)
    out = kernels.rk4_step(s, u.a, u.delta, params.kernel_vector(), dt, _MODEL_IDS[model])
    if not all(math.isfinite(v) for v in out):
        raise NonFiniteStateError(
            f"non-finite state after step: state={state!r} input={u!r} dt={dt} -> {out}"
        )
    out[2] = wrap_angle(out[2])
    return VehicleState(*out)


def rollout(
    state: VehicleState,
    u: ControlInput,
    dt: float,
    n_steps: int,
    params: VehicleParams,
    model: str = "blended",
) -> list[VehicleState]:
    """Integrate a constant input for ``n_steps``; returns all states including the first."""
    states = [state]
    for _ in range(n_steps):
        state = step(state, u, dt, params, model)
        states.append(state)
    return states


def with_pose(state: VehicleState, x: float, y: float, psi: float) -> VehicleState:
    return replace(state, x=x, y=y, psi=psi)


__all__ = [
    "ControlInput",
    "NonFiniteStateError",
    "PRESETS",
    "PacejkaCoeffs",
    "VehicleParams",
    "VehicleState",
    "blend_weight",
    "blended_derivative",
    "clamp_input",
    "dynamic_derivative",
    "kinematic_derivative",
    "preset",
    "rollout",
    "slip_angles",
    "step",
    "tire_force",
    "wrap_angle",
    "with_pose",
]
