"""Short-term forecasts of uncontrollable demand and PV over the MPC horizon."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

STEPS_PER_DAY = 2880
SLOTS_PER_DAY = 288
STEPS_PER_SLOT = 10


def horizon_end(k: int) -> int:
    """Last 30-s index of the 5-minute slot containing ``k``."""
    return (k // STEPS_PER_SLOT) * STEPS_PER_SLOT + STEPS_PER_SLOT - 1


def upsample_day_ahead(profile_5min, k: int, k_end: int | None = None) -> np.ndarray:
    """Linearly interpolate a 288-value profile onto the 30-s grid, indices ``k..k_end``.

    Anchor ``y`` sits at index ``10*y``; after the last anchor the value is held.
    """
    prof = np.asarray(profile_5min, dtype=float).ravel()
    if prof.size != SLOTS_PER_DAY:
        raise ValueError(f"day-ahead profile must have {SLOTS_PER_DAY} values, got {prof.size}")
    if not 0 <= k < STEPS_PER_DAY:
        raise ValueError(f"k={k} outside [0, {STEPS_PER_DAY - 1}]")
    if k_end is None:
        k_end = horizon_end(k)
    j = np.arange(k, k_end + 1)
    slot = j // STEPS_PER_SLOT
    frac = (j % STEPS_PER_SLOT) / STEPS_PER_SLOT
    nxt = np.minimum(slot + 1, SLOTS_PER_DAY - 1)
    return prof[slot] + frac * (prof[nxt] - prof[slot])


def persist_correct(horizon, latest_meas: float) -> np.ndarray:
    """Replace the first forecast value with the latest measurement."""
    out = np.array(horizon, dtype=float)
    if out.size == 0:
        raise ValueError("horizon must not be empty")
    out[0] = latest_meas
    return out


@dataclass(frozen=True)
class PvPlant:
    name: str
    bus: str
    p_rated_kw: float
    gamma: float = -0.004
    noct: float = 45.0


def pv_power(ghi, t_air, plant: PvPlant):
    """PV output (kW) from irradiance and air temperature.

    Rated-power scaling with a NOCT cell-temperature correction, clipped to
    ``[0, p_rated]``.
    """
    ghi = np.asarray(ghi, dtype=float)
    if np.any(ghi < 0):
        raise ValueError("GHI must be non-negative")
    t_cell = np.asarray(t_air, dtype=float) + ghi * (plant.noct - 20.0) / 800.0
    p = plant.p_rated_kw * (ghi / 1000.0) * (1.0 + plant.gamma * (t_cell - 25.0))
    p = np.clip(p, 0.0, plant.p_rated_kw)
    return float(p) if p.ndim == 0 else p


def reactive_from_pf(p_kw, power_factor: float):
    """Lagging reactive consumption matching ``p_kw`` at ``power_factor``."""
    return np.asarray(p_kw, dtype=float) * math.tan(math.acos(power_factor))


@dataclass(frozen=True)
class LoadSpec:
    name: str
    bus: str
    power_factor: float = 0.95


@dataclass
class ForecastSet:
    """Per-resource forecasts over ``k..k_end`` (kW/kVAr, consumption and production positive)."""

    k: int
    k_end: int
    load_p: dict
    load_q: dict
    pv_p: dict
    pv_q: dict

    @property
    def length(self) -> int:
        return self.k_end - self.k + 1

    def __post_init__(self):
        if not 1 <= self.length <= STEPS_PER_SLOT:
            raise ValueError(f"horizon length {self.length} outside [1, {STEPS_PER_SLOT}]")
        for v in self.pv_p.values():
            if np.any(np.asarray(v) < 0):
                raise ValueError("PV forecast must be non-negative")


@dataclass
class Measurements:
    """Latest measurement snapshot available to the forecaster."""

    load_p: dict
    pv_p: dict
    ghi: float
    t_air: float


def forecast_all(
    loads,
    pvs,
    day_ahead: dict,
    k: int,
    meas: Measurements | None,
    truth=None,
    perfect: bool = False,
) -> ForecastSet:
    """Assemble demand and PV forecasts for the horizon starting at ``k``.

    Demand: day-ahead upsampling with the first step replaced by the last
    measured load. PV: the plant model evaluated at the last measured GHI and
    temperature, first step replaced by the last measured PV output. With
    ``perfect=True`` the true trace slice (``truth``) is returned instead.
    """
    k_end = horizon_end(k)
    if perfect:
        if truth is None:
            raise ValueError("perfect forecasts need the true traces")
        sl = slice(k, k_end + 1)
        return ForecastSet(
            k,
            k_end,
            {ld.name: np.array(truth.load_p[ld.name][sl]) for ld in loads},
            {ld.name: np.array(truth.load_q[ld.name][sl]) for ld in loads},
            {pv.name: np.array(truth.pv_p[pv.name][sl]) for pv in pvs},
            {pv.name: np.zeros(k_end - k + 1) for pv in pvs},
        )
    h = k_end - k + 1
    lp, lq = {}, {}
    for ld in loads:
        f = upsample_day_ahead(day_ahead[ld.name], k, k_end)
        if meas is not None:
            f = persist_correct(f, meas.load_p[ld.name])
        lp[ld.name] = f
        lq[ld.name] = reactive_from_pf(f, ld.power_factor)
    pp, pq = {}, {}
    for pv in pvs:
        if meas is None:
            f = np.zeros(h)
        else:
            f = np.full(h, pv_power(meas.ghi, meas.t_air, pv))
            f = persist_correct(f, max(meas.pv_p[pv.name], 0.0))
        pp[pv.name] = f
        pq[pv.name] = np.zeros(h)
    return ForecastSet(k, k_end, lp, lq, pp, pq)
