"""Four-tank cascade simulator with injectable leak faults.

Tank 1 is fed by ``u1`` and drains into tank 2, tank 2 into tank 3, which
also receives ``u2``, tank 3 into tank 4, and tank 4 to the environment.
Dynamics are linear::

    C1 dp1/dt = u1 - q1 - leak1          q1 = (p1 - p2) / R1
    C2 dp2/dt = q1 - q2 - leak2          q2 = (p2 - p3) / R2
    C3 dp3/dt = q2 + u2 - q3 - leak3     q3 = (p3 - p4) / R3
    C4 dp4/dt = q3 - q4 - leak4          q4 = p4 / R4

with ``leak_i = g(t) * p_i`` on the faulty tank only. The measured channels
are ``u1, u2`` and ``y1..y6 = p1, q1, p2, q2, q3, p4``; ``p3`` and ``q4``
are never measured.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .timeseries import Dataset

log = logging.getLogger(__name__)

MEASURED = ("u1", "u2", "y1", "y2", "y3", "y4", "y5", "y6")
DEBUG_STATES = ("p1", "p2", "p3", "p4", "q4", "leak", "acc_in", "acc_out")
TANKS = ("tank1", "tank2", "tank3", "tank4")
NONE, INCIPIENT, ABRUPT = "none", "incipient", "abrupt"


@dataclass(frozen=True)
class InflowProfile:
    """Multisine inflow ``mean + sum_k a_k sin(w_k t + phi_k)``.

    ``n_tones`` frequencies are log-spaced over ``[w_min, w_max]`` rad/s and
    share the variance so the excitation has standard deviation
    ``amplitude``. Phases are drawn per simulation from its seed.
    """

    mean: float = 1.0
    amplitude: float = 0.2
    n_tones: int = 24
    w_min: float = 0.005
    w_max: float = 0.5

    def __post_init__(self):
        if self.amplitude < 0 or self.n_tones < 1:
            raise ValidationError("inflow amplitude must be >= 0 and n_tones >= 1")
        if not 0 < self.w_min <= self.w_max:
            raise ValidationError("inflow band needs 0 < w_min <= w_max")

    def realize(self, rng: np.random.Generator) -> "Multisine":
        w = np.geomspace(self.w_min, self.w_max, self.n_tones)
        a = np.full(self.n_tones, self.amplitude * math.sqrt(2.0 / self.n_tones))
        phi = rng.uniform(0.0, 2.0 * math.pi, self.n_tones)
        return Multisine(self.mean, w, a, phi)


@dataclass(frozen=True)
class Multisine:
    mean: float
    freqs: np.ndarray
    amps: np.ndarray
    phases: np.ndarray

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        arg = np.multiply.outer(t, self.freqs) + self.phases
        return self.mean + np.sin(arg) @ self.amps

    def integral(self, t: np.ndarray) -> np.ndarray:
        """Exact ``int_0^t u``."""
        t = np.asarray(t, dtype=float)
        arg = np.multiply.outer(t, self.freqs) + self.phases
        return self.mean * t + (np.cos(self.phases) - np.cos(arg)) @ (self.amps / self.freqs)


@dataclass(frozen=True)
class TankParams:
    capacities: tuple[float, float, float, float] = (25.0, 50.0, 200.0, 1000.0)
    resistances: tuple[float, float, float, float] = (0.15, 2.0, 0.25, 1.0)
    u1: InflowProfile = field(default_factory=InflowProfile)
    u2: InflowProfile = field(default_factory=InflowProfile)
    dt: float = 0.1
    duration: float = 5000.0
    noise_fraction: float = 0.05
    initial_pressures: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "capacities", tuple(float(c) for c in self.capacities))
        object.__setattr__(self, "resistances", tuple(float(r) for r in self.resistances))
        if len(self.capacities) != 4 or len(self.resistances) != 4:
            raise ValidationError("four capacities and four resistances are required")
        if min(self.capacities) <= 0 or min(self.resistances) <= 0:
            raise ValidationError("capacities and resistances must be > 0")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValidationError(f"dt must be > 0, got {self.dt}")
        if not self.duration >= 100 * self.dt:
            raise ValidationError("duration must cover at least 100 steps")
        if self.noise_fraction < 0:
            raise ValidationError("noise_fraction must be >= 0")
        if self.initial_pressures is not None:
            p0 = tuple(float(p) for p in self.initial_pressures)
            if len(p0) != 4 or min(p0) < 0:
                raise ValidationError("initial_pressures needs four values >= 0")
            object.__setattr__(self, "initial_pressures", p0)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def equilibrium(self) -> tuple[float, float, float, float]:
        """Pressures at rest under the mean inflows and no leak."""
        R1, R2, R3, R4 = self.resistances
        a, b = self.u1.mean, self.u2.mean
        p4 = R4 * (a + b)
        p3 = p4 + R3 * (a + b)
        p2 = p3 + R2 * a
        return (p2 + R1 * a, p2, p3, p4)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TankParams":
        d = dict(d)
        for k in ("u1", "u2"):
            if isinstance(d.get(k), dict):
                d[k] = InflowProfile(**d[k])
        for k in ("capacities", "resistances", "initial_pressures"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True)
class FaultScenario:
    component: str = "tank1"
    kind: str = NONE
    onset: float = 2500.0
    magnitude: float = 0.005
    ramp_duration: float = 1000.0
    name: str = ""

    def __post_init__(self):
        if self.component not in TANKS:
            raise ValidationError(f"component must be one of {TANKS}")
        if self.kind not in (NONE, INCIPIENT, ABRUPT):
            raise ValidationError(f"unknown fault kind {self.kind!r}")
        if self.onset < 0 or self.magnitude < 0:
            raise ValidationError("onset and magnitude must be >= 0")
        if self.kind == INCIPIENT and not self.ramp_duration > 0:
            raise ValidationError("incipient faults need ramp_duration > 0")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return "normal" if self.kind == NONE else f"{self.component}_{self.kind}"

    @property
    def tank_index(self) -> int:
        return TANKS.index(self.component)

    def conductance(self, t: np.ndarray) -> np.ndarray:
        """Leak conductance ``g(t)``: 0 before onset, then a step or a ramp."""
        t = np.asarray(t, dtype=float)
        if self.kind == NONE or self.magnitude == 0:
            return np.zeros_like(t)
        if self.kind == ABRUPT:
            return np.where(t >= self.onset, self.magnitude, 0.0)
        frac = np.clip((t - self.onset) / self.ramp_duration, 0.0, 1.0)
        return self.magnitude * frac

    def to_dict(self) -> dict:
        return asdict(self)


NO_FAULT = FaultScenario()


def _validate_horizon(params: TankParams, fault: FaultScenario) -> None:
    if fault.kind != NONE and not fault.onset < params.duration:
        raise ValidationError("fault onset must lie inside the simulated horizon")


def _rk4(params: TankParams, u1: np.ndarray, u2: np.ndarray, g: np.ndarray,
         tank: int) -> tuple[np.ndarray, int]:
    """Integrate on the half-step input grid; returns states ``(N, 5)``.

    Columns are p1..p4 and the accumulated outflow (tank-4 drain plus
    leak). Negative pressures are clamped to zero and counted.
    """
    C1, C2, C3, C4 = params.capacities
    G1, G2, G3, G4 = (1.0 / r for r in params.resistances)
    n = params.n_steps + 1
    h = params.dt
    out = np.empty((n, 5))
    p = list(params.initial_pressures or params.equilibrium())
    acc = 0.0
    out[0] = (*p, acc)
    clamped = 0
    leak_mask = [0.0, 0.0, 0.0, 0.0]

    def deriv(x1, x2, x3, x4, a, b, gl):
        q1 = (x1 - x2) * G1
        q2 = (x2 - x3) * G2
        q3 = (x3 - x4) * G3
        q4 = x4 * G4
        l1 = gl * x1 * leak_mask[0]
        l2 = gl * x2 * leak_mask[1]
        l3 = gl * x3 * leak_mask[2]
        l4 = gl * x4 * leak_mask[3]
        return ((a - q1 - l1) / C1, (q1 - q2 - l2) / C2,
                (q2 + b - q3 - l3) / C3, (q3 - q4 - l4) / C4,
                q4 + l1 + l2 + l3 + l4)

    leak_mask[tank] = 1.0
    a_, b_, g_ = u1.tolist(), u2.tolist(), g.tolist()
    x1, x2, x3, x4 = p
    for k in range(1, n):
        i = 2 * (k - 1)
        k1 = deriv(x1, x2, x3, x4, a_[i], b_[i], g_[i])
        k2 = deriv(x1 + 0.5 * h * k1[0], x2 + 0.5 * h * k1[1], x3 + 0.5 * h * k1[2],
                   x4 + 0.5 * h * k1[3], a_[i + 1], b_[i + 1], g_[i + 1])
        k3 = deriv(x1 + 0.5 * h * k2[0], x2 + 0.5 * h * k2[1], x3 + 0.5 * h * k2[2],
                   x4 + 0.5 * h * k2[3], a_[i + 1], b_[i + 1], g_[i + 1])
        k4 = deriv(x1 + h * k3[0], x2 + h * k3[1], x3 + h * k3[2], x4 + h * k3[3],
                   a_[i + 2], b_[i + 2], g_[i + 2])
        s = h / 6.0
        x1 += s * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        x2 += s * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        x3 += s * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        x4 += s * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        acc += s * (k1[4] + 2 * k2[4] + 2 * k3[4] + k4[4])
        if x1 < 0 or x2 < 0 or x3 < 0 or x4 < 0:
            clamped += 1
            x1, x2, x3, x4 = max(x1, 0.0), max(x2, 0.0), max(x3, 0.0), max(x4, 0.0)
        row = out[k]
        row[0], row[1], row[2], row[3], row[4] = x1, x2, x3, x4, acc
    return out, clamped


@dataclass(frozen=True)
class _CleanRun:
    times: np.ndarray
    channels: np.ndarray  # (N, 8) in MEASURED order
    debug: np.ndarray  # (N, 8) in DEBUG_STATES order
    clamped: int


def _clean_run(params: TankParams, fault: FaultScenario,
               u1: Multisine, u2: Multisine) -> _CleanRun:
    n = params.n_steps + 1
    half = 0.5 * params.dt * np.arange(2 * n - 1)
    g_half = fault.conductance(half)
    u1_half, u2_half = u1(half), u2(half)
    states, clamped = _rk4(params, u1_half, u2_half, g_half, fault.tank_index)
    if clamped:
        log.warning("clamped negative pressures on %d steps", clamped)
    t = params.dt * np.arange(n)
    p1, p2, p3, p4, acc_out = states.T
    R1, R2, R3, R4 = params.resistances
    q1, q2, q3, q4 = (p1 - p2) / R1, (p2 - p3) / R2, (p3 - p4) / R3, p4 / R4
    ua, ub = u1_half[::2], u2_half[::2]
    channels = np.column_stack([ua, ub, p1, q1, p2, q2, q3, p4])
    leak = g_half[::2] * states[:, fault.tank_index]
    acc_in = u1.integral(t) + u2.integral(t)
    debug = np.column_stack([p1, p2, p3, p4, q4, leak, acc_in, acc_out])
    return _CleanRun(t, channels, debug, clamped)


def simulate(params: TankParams | None = None, fault: FaultScenario | None = None,
             seed: int = 0, *, keep_states: bool = False) -> Dataset:
    """Simulate the plant and return the noisy measurement channels.

    Inflow phases and measurement noise come from ``seed``, so a faulty run
    and a fault-free run with the same seed agree exactly before onset.
    Each channel's noise standard deviation is ``noise_fraction`` times the
    standard deviation of that channel in the fault-free clean run.
    With ``keep_states`` the clean unmeasured states and mass-balance
    accumulators are appended (see ``DEBUG_STATES``).
    """
    params = params or TankParams()
    fault = fault or NO_FAULT
    _validate_horizon(params, fault)
    rng = np.random.default_rng(seed)
    u1 = params.u1.realize(rng)
    u2 = params.u2.realize(rng)
    run = _clean_run(params, fault, u1, u2)
    nominal = run if fault.kind == NONE else _clean_run(params, NO_FAULT, u1, u2)
    scale = params.noise_fraction * nominal.channels.std(axis=0)
    noise = rng.standard_normal(run.channels.shape) * scale
    values = run.channels + noise
    names = MEASURED
    if keep_states:
        values = np.hstack([values, run.debug])
        names = MEASURED + DEBUG_STATES
    return Dataset(names, values, params.dt, 0.0)


def mass_balance_check(ds: Dataset, params: TankParams) -> float:
    """Largest normalized gap between net inflow and stored volume change.

    Needs a ``keep_states`` run. The inflow is integrated exactly, so the
    gap measures the integrator's own error.
    """
    ds.require(DEBUG_STATES)
    stored = sum(c * (ds[p] - ds[p][0]) for c, p in zip(params.capacities,
                                                       ("p1", "p2", "p3", "p4")))
    gap = ds["acc_in"] - ds["acc_out"] - stored
    scale = float(np.max(np.abs(ds["acc_in"])))
    return float(np.max(np.abs(gap)) / (scale if scale > 0 else 1.0))


def label_fault(times: Sequence[float], fault: FaultScenario) -> np.ndarray:
    """1 for samples at or after onset of a real fault, else 0."""
    t = np.asarray(times, dtype=float)
    if fault.kind == NONE:
        return np.zeros(t.size, dtype=int)
    return (t >= fault.onset - 1e-9).astype(int)
