"""Spiking neuron dynamics and surrogate gradients.

Step functions are pure: they take the previous state and the input
current for one time step and return (spikes, new state, charge). The
charge is the pre-reset membrane potential H(t); spikes are emitted where
H >= threshold, and the potential is then reset either hard (to v_reset)
or by subtracting the threshold.

The discrete LIF update (Euler method) is

    H = V + (1/tau) * (-(V - v_rest) + X)

EIF adds an exponential drive term delta_t*exp((V - theta_rh)/delta_t)
inside the parenthesis; the Izhikevich model integrates the quadratic
(v, u) system with its own reset (v <- c, u <- u + d). The plain
integrate-and-fire variant (H = V + X, subtract reset) is what converted
networks use.

Surrogate gradients replace the threshold step in the backward pass only:
ATan with grad alpha / (2*(1 + ((pi/2)*alpha*x)^2)), or a piecewise leaky
ReLU with grad 1/(2w) inside |x| <= w and a small leak c outside.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .numerics import DTYPE, as_f32


# ---------------------------------------------------------------------------
# parameter bundles
# ---------------------------------------------------------------------------

@dataclass
class LifParams:
    tau: float = 2.0
    v_rest: float = 0.0
    v_th: float = 1.0
    v_reset: float = 0.0
    reset_mode: str = "hard"

    def __post_init__(self):
        _check_common(self)


@dataclass
class EifParams:
    tau: float = 2.0
    v_rest: float = 0.0
    v_th: float = 1.0
    v_reset: float = 0.0
    delta_t: float = 1.0
    theta_rh: float = 0.8
    reset_mode: str = "hard"

    def __post_init__(self):
        _check_common(self)
        if self.delta_t <= 0:
            raise ValidationError("EIF sharpness delta_t must be > 0")


@dataclass
class IzhikevichParams:
    a: float = 0.02
    b: float = 0.2
    c: float = -65.0
    d: float = 8.0
    v_peak: float = 30.0
    dt: float = 1.0
    # binary spike sums are tiny currents on the mV scale of this model;
    # the gain lifts them into the firing regime when needed
    input_gain: float = 1.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValidationError("Izhikevich integration step dt must be > 0")


@dataclass
class IfParams:
    v_th: float = 1.0
    v_reset: float = 0.0
    reset_mode: str = "subtract"

    def __post_init__(self):
        if self.reset_mode not in ("hard", "subtract"):
            raise ValidationError(f"unknown reset mode {self.reset_mode!r}")


def _check_common(p):
    if p.tau <= 0:
        raise ValidationError("membrane time constant tau must be > 0")
    if p.reset_mode not in ("hard", "subtract"):
        raise ValidationError(f"unknown reset mode {p.reset_mode!r}")
    if p.reset_mode == "hard" and not p.v_th > p.v_rest:
        raise ValidationError("hard reset requires v_th > v_rest")


# ---------------------------------------------------------------------------
# surrogates
# ---------------------------------------------------------------------------

@dataclass
class ATan:
    alpha: float = 2.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValidationError("ATan alpha must be > 0")


@dataclass
class PiecewiseLeakyReLU:
    w: float = 1.0
    c: float = 0.01

    def __post_init__(self):
        if self.w <= 0:
            raise ValidationError("PiecewiseLeakyReLU window w must be > 0")
        if not 0 <= self.c < 1:
            raise ValidationError("PiecewiseLeakyReLU leak c must be in [0, 1)")


def surrogate_value(x, kind):
    """Smoothed step used in place of the spike in soft-mode forwards."""
    x = np.asarray(x)
    if isinstance(kind, ATan):
        return (1.0 / np.pi) * np.arctan((np.pi / 2.0) * kind.alpha * x) + 0.5
    if isinstance(kind, PiecewiseLeakyReLU):
        w, c = kind.w, kind.c
        mid = x / (2.0 * w) + 0.5
        lo = c * (x + w)
        hi = c * (x - w) + 1.0
        # continuous primitive of the gradient; leaves (0,1) only in the
        # leaky tails, by at most c*|x - w|
        return np.where(x < -w, lo, np.where(x > w, hi, mid))
    raise ValidationError(f"unknown surrogate kind {kind!r}")


def surrogate_grad(x, kind):
    x = np.asarray(x)
    if isinstance(kind, ATan):
        z = (np.pi / 2.0) * kind.alpha * x
        return kind.alpha / (2.0 * (1.0 + z * z))
    if isinstance(kind, PiecewiseLeakyReLU):
        return np.where(np.abs(x) <= kind.w, 1.0 / (2.0 * kind.w), kind.c)
    raise ValidationError(f"unknown surrogate kind {kind!r}")


def surrogate_from_config(name: str, **kwargs):
    if name == "atan":
        return ATan(**kwargs)
    if name in ("plr", "piecewise_leaky_relu"):
        return PiecewiseLeakyReLU(**kwargs)
    raise ValidationError(f"unknown surrogate {name!r}")


# ---------------------------------------------------------------------------
# step functions
# ---------------------------------------------------------------------------

def _check_input(x):
    x = as_f32(x)
    if not np.all(np.isfinite(x)):
        raise ValidationError("non-finite input current")
    return x


def _threshold_reset(h, v_th, v_reset, reset_mode):
    s = (h >= v_th).astype(h.dtype)
    if reset_mode == "hard":
        v_new = h * (1.0 - s) + v_reset * s
    else:
        v_new = h - s * v_th
    return s, as_f32(v_new)


def lif_step(state, x, params: LifParams):
    v = as_f32(state)
    x = _check_input(x)
    h = as_f32(v + (1.0 / params.tau) * (-(v - params.v_rest) + x))
    s, v_new = _threshold_reset(h, params.v_th, params.v_reset, params.reset_mode)
    return s, v_new, h


# exp argument clamp keeps a runaway EIF drive finite instead of overflowing
_EIF_EXP_CAP = 30.0


def eif_step(state, x, params: EifParams):
    v = as_f32(state)
    x = _check_input(x)
    drive = params.delta_t * np.exp(
        np.minimum((v - params.theta_rh) / params.delta_t, _EIF_EXP_CAP))
    h = as_f32(v + (1.0 / params.tau) * (-(v - params.v_rest) + drive + x))
    s, v_new = _threshold_reset(h, params.v_th, params.v_reset, params.reset_mode)
    return s, v_new, h


def izhikevich_step(state, x, params: IzhikevichParams):
    """One Euler step of the quadratic (v, u) system; both updates read the
    previous state. Spike when the candidate v reaches v_peak, then
    v <- c and u <- u + d."""
    v, u = state
    v = as_f32(v)
    u = as_f32(u)
    x = _check_input(x)
    i = params.input_gain * x
    v1 = v + params.dt * (0.04 * v * v + 5.0 * v + 140.0 - u + i)
    u1 = u + params.dt * params.a * (params.b * v - u)
    s = (v1 >= params.v_peak).astype(v1.dtype)
    v_new = as_f32(v1 * (1.0 - s) + params.c * s)
    u_new = as_f32(u1 + params.d * s)
    return s, (v_new, u_new), as_f32(v1)


def if_step(state, x, params: IfParams):
    v = as_f32(state)
    x = _check_input(x)
    h = as_f32(v + x)
    s, v_new = _threshold_reset(h, params.v_th, params.v_reset, params.reset_mode)
    return s, v_new, h


def init_state(params, shape, dtype=DTYPE):
    """Fresh per-sample state: scalar-potential models start at v_reset,
    Izhikevich at its resting point (c, b*c)."""
    if isinstance(params, IzhikevichParams):
        v = np.full(shape, params.c, dtype=dtype)
        u = np.full(shape, params.b * params.c, dtype=dtype)
        return (v, u)
    return np.full(shape, params.v_reset, dtype=dtype)


def neuron_step(state, x, params):
    if isinstance(params, LifParams):
        return lif_step(state, x, params)
    if isinstance(params, EifParams):
        return eif_step(state, x, params)
    if isinstance(params, IzhikevichParams):
        return izhikevich_step(state, x, params)
    if isinstance(params, IfParams):
        return if_step(state, x, params)
    raise ValidationError(f"unknown neuron params {type(params).__name__}")


def threshold_of(params) -> float:
    return params.v_peak if isinstance(params, IzhikevichParams) else params.v_th


# ---------------------------------------------------------------------------
# partials used by BPTT (reset path detached in hard-spike mode)
# ---------------------------------------------------------------------------

def charge_partials(params, v_prev):
    """(dH/dV_prev, dH/dX) for the scalar-potential models."""
    if isinstance(params, LifParams):
        return 1.0 - 1.0 / params.tau, 1.0 / params.tau
    if isinstance(params, EifParams):
        grow = np.exp(np.minimum((v_prev - params.theta_rh) / params.delta_t, _EIF_EXP_CAP))
        return 1.0 + (1.0 / params.tau) * (grow - 1.0), 1.0 / params.tau
    if isinstance(params, IfParams):
        return 1.0, 1.0
    raise ValidationError(f"charge_partials: unsupported {type(params).__name__}")


def izhikevich_partials(params, v_prev):
    """Jacobian entries of one Euler step wrt the previous (v, u) and input."""
    dv1_dv = 1.0 + params.dt * (0.08 * v_prev + 5.0)
    dv1_du = -params.dt
    du1_dv = params.dt * params.a * params.b
    du1_du = 1.0 - params.dt * params.a
    dv1_dx = params.dt * params.input_gain
    return dv1_dv, dv1_du, du1_dv, du1_du, dv1_dx


def params_from_config(neuron: str, reset_mode: str | None = None, **kwargs):
    if neuron == "lif":
        p = LifParams(**kwargs)
    elif neuron == "eif":
        p = EifParams(**kwargs)
    elif neuron == "izhikevich":
        p = IzhikevichParams(**kwargs)
    elif neuron == "if":
        p = IfParams(**kwargs)
    else:
        raise ValidationError(f"unknown neuron type {neuron!r}")
    if reset_mode is not None and not isinstance(p, IzhikevichParams):
        p.reset_mode = reset_mode
        if reset_mode not in ("hard", "subtract"):
            raise ValidationError(f"unknown reset mode {reset_mode!r}")
    return p
