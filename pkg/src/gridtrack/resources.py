"""Battery and EV charging-station models.

Power is injection-positive throughout: a BESS discharging or a PV plant
producing has ``p > 0``; charging (BESS or EV) has ``p < 0``. Both SoC
updates are therefore ``soc - p * dt / E`` with no efficiency losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

SOC_TOL = 1e-9
STEP_S = 30.0


class ResourceViolation(RuntimeError):
    """A state transition left the admissible SoC range."""

    def __init__(self, message: str, resource: str, value: float):
        super().__init__(message)
        self.resource = resource
        self.value = value


@dataclass(frozen=True)
class BessState:
    name: str
    bus: str
    soc: float
    soc_min: float
    soc_max: float
    e_max_kwh: float
    s_max_kva: float
    q_kvar: float = 0.0  # last applied reactive setpoint

    def __post_init__(self):
        if not (self.e_max_kwh > 0 and self.s_max_kva > 0):
            raise ValueError(f"BESS {self.name!r}: capacities must be positive")
        if not (0.0 <= self.soc_min <= self.soc_max <= 1.0):
            raise ValueError(f"BESS {self.name!r}: SoC bounds must satisfy 0 <= min <= max <= 1")
        if not (self.soc_min - SOC_TOL <= self.soc <= self.soc_max + SOC_TOL):
            raise ValueError(f"BESS {self.name!r}: SoC {self.soc} outside [{self.soc_min}, {self.soc_max}]")


def bess_soc_step(state: BessState, p_kw: float, dt_s: float = STEP_S) -> BessState:
    """Advance the BESS SoC by one step of constant injection ``p_kw``."""
    if not dt_s > 0:
        raise ValueError("dt must be positive")
    soc = state.soc - p_kw * (dt_s / 3600.0) / state.e_max_kwh
    if soc < state.soc_min - SOC_TOL or soc > state.soc_max + SOC_TOL:
        raise ResourceViolation(
            f"BESS {state.name!r}: SoC {soc:.6f} outside [{state.soc_min}, {state.soc_max}] after p={p_kw:.3f} kW",
            state.name,
            soc,
        )
    return replace(state, soc=soc)


def bess_capability_polygon(s_max: float, segments: int = 12):
    """Half-planes ``a_p * p + a_q * q <= rhs`` of the inscribed regular polygon.

    Vertices sit on the circle of radius ``s_max`` at angles ``2*pi*k/segments``,
    so ``(s_max, 0)`` is always a vertex. Returns an array of shape
    ``(segments, 3)`` with rows ``(a_p, a_q, rhs)``.
    """
    if segments < 4:
        raise ValueError("segments must be at least 4")
    k = np.arange(segments)
    mid = (2 * k + 1) * math.pi / segments
    rhs = s_max * math.cos(math.pi / segments)
    return np.column_stack([np.cos(mid), np.sin(mid), np.full(segments, rhs)])


def in_polygon(halfplanes: np.ndarray, p: float, q: float, tol: float = 1e-9) -> bool:
    return bool(np.all(halfplanes[:, 0] * p + halfplanes[:, 1] * q <= halfplanes[:, 2] + tol))


@dataclass(frozen=True)
class EvSession:
    """One charging session on plug ``plug`` of station ``station``.

    ``k_arrival`` is the first and ``k_departure`` the last 30-s index with
    the EV connected; the SoC after step ``k_departure`` is the departure
    SoC. ``p_min_kw``/``p_max_kw`` are the admissible injections (charging is
    negative, so typically ``p_min_kw = -rating`` and ``p_max_kw = 0``).
    """

    session_id: str
    station: str
    plug: int
    k_arrival: int
    k_departure: int
    soc_arrival: float
    soc_target: float
    e_max_kwh: float
    p_min_kw: float
    p_max_kw: float = 0.0

    def __post_init__(self):
        if not self.k_arrival < self.k_departure:
            raise ValueError(f"session {self.session_id}: arrival must precede departure")
        for name in ("soc_arrival", "soc_target"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"session {self.session_id}: {name}={v} outside [0, 1]")
        if not self.p_min_kw <= self.p_max_kw:
            raise ValueError(f"session {self.session_id}: power bounds out of order")
        if not self.e_max_kwh > 0:
            raise ValueError(f"session {self.session_id}: capacity must be positive")

    def connected(self, k: int) -> bool:
        return self.k_arrival <= k <= self.k_departure

    def mu(self, k: int) -> int:
        return 1 if self.connected(k) else 0

    def power_bounds(self, k: int) -> tuple:
        """Admissible injection interval at ``k``; ``(0, 0)`` when unplugged."""
        m = self.mu(k)
        return m * self.p_min_kw, m * self.p_max_kw

    def reachable(self, dt_s: float = STEP_S) -> bool:
        """Whether the target is reachable charging at full power for the whole stay."""
        steps = self.k_departure - self.k_arrival + 1
        gained = -self.p_min_kw * steps * dt_s / 3600.0 / self.e_max_kwh
        return self.soc_arrival + gained >= self.soc_target - 1e-12


def evcs_soc_step(session: EvSession, soc: float, p_kw: float, dt_s: float = STEP_S, k: int | None = None) -> float:
    """SoC after one step at injection ``p_kw``; unplugged EVs must have ``p = 0``."""
    if k is not None and not session.connected(k) and p_kw != 0.0:
        raise ResourceViolation(f"session {session.session_id}: nonzero power while unplugged", session.session_id, soc)
    new = soc - p_kw * (dt_s / 3600.0) / session.e_max_kwh
    if new < -SOC_TOL or new > 1.0 + SOC_TOL:
        raise ResourceViolation(
            f"session {session.session_id}: SoC {new:.6f} outside [0, 1] after p={p_kw:.3f} kW",
            session.session_id,
            new,
        )
    return new


def interpolate_soc_target(session: EvSession, soc_meas: float, k: int, k_end: int) -> float:
    """SoC the EV should reach by the end of the current horizon ``k_end``.

    Linear interpolation from the measured SoC toward the session target,
    scaled by the share of the remaining stay covered by the horizon. When
    the EV leaves before the horizon ends (or is leaving now) the full target
    is returned.
    """
    if k > k_end:
        raise ValueError("k must not exceed the horizon end")
    kf = session.k_departure
    if k >= kf or kf <= k_end:
        return session.soc_target
    frac = (k_end - k) / (kf - k)
    return soc_meas + (session.soc_target - soc_meas) * frac


@dataclass
class Plug:
    rating_kw: float
    session: EvSession | None = None
    soc: float = 0.0
    last_p_kw: float = 0.0


@dataclass
class EvcsState:
    """A charging station with ``len(plugs)`` plugs and a cap on simultaneously active ones."""

    name: str
    bus: str
    plugs: list
    max_active: int = 2

    @property
    def n_plugs(self) -> int:
        return len(self.plugs)

    def mu(self, k: int) -> np.ndarray:
        return np.array([1 if (pl.session is not None and pl.session.connected(k)) else 0 for pl in self.plugs])

    def active_plugs(self, k: int) -> list:
        return [i for i, pl in enumerate(self.plugs) if pl.session is not None and pl.session.connected(k)]


def check_concurrency(sessions, station: str, n_plugs: int, max_active: int) -> None:
    """Reject session lists that overlap on a plug or exceed the station cap."""
    mine = [s for s in sessions if s.station == station]
    events = []
    for s in mine:
        if not 0 <= s.plug < n_plugs:
            raise ValueError(f"session {s.session_id}: plug {s.plug} does not exist on {station!r}")
        events.append((s.k_arrival, 1, s))
        events.append((s.k_departure + 1, -1, s))
    events.sort(key=lambda e: (e[0], e[1]))
    active = {}
    for k, kind, s in events:
        if kind < 0:
            active.pop(s.plug, None)
            continue
        if s.plug in active:
            raise ValueError(f"sessions {active[s.plug].session_id} and {s.session_id} overlap on plug {s.plug}")
        active[s.plug] = s
        if len(active) > max_active:
            raise ValueError(f"station {station!r}: more than {max_active} plugs active at k={k}")
