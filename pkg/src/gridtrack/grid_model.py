"""Static network model, Newton-Raphson AC power flow and its linearisation.

Conventions
-----------
* Nodal powers are injections into the grid (generation positive), in kW/kVAr,
  ordered over the non-slack buses in file order.
* The grid-connection-point (GCP) power ``p0 + j q0`` is the power the slack
  bus injects into the network, i.e. the import from the upstream grid.
* Voltages and currents are in per-unit of the network bases.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

SCHEMA_VERSION = 1


class NetworkError(ValueError):
    """Invalid network description."""


class PowerFlowError(RuntimeError):
    """Newton-Raphson did not converge."""

    def __init__(self, message: str, mismatch: float, iterations: int):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


class SingularJacobianError(RuntimeError):
    """The power-flow Jacobian is (numerically) singular at the operating point."""

    def __init__(self, message: str, bus: str):
        super().__init__(message)
        self.bus = bus


@dataclass(frozen=True)
class Resource:
    name: str
    kind: str
    bus: str
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Validated single-phase-equivalent network.

    Bus index 0 is always the slack; ``bus_ids[1:]`` are the non-slack buses
    in the order used by every injection vector.
    """

    name: str
    bus_ids: tuple
    line_ids: tuple
    line_from: np.ndarray
    line_to: np.ndarray
    z: np.ndarray
    ampacity: np.ndarray
    s_base_kva: float
    v_base_v: float
    v_slack: float
    s_max_kva: float
    v_min: float
    v_max: float
    ybus: np.ndarray
    resources: tuple = ()

    @property
    def n_buses(self) -> int:
        return len(self.bus_ids)

    @property
    def n_lines(self) -> int:
        return len(self.line_ids)

    @property
    def slack_id(self) -> str:
        return self.bus_ids[0]

    @property
    def pq_ids(self) -> tuple:
        return self.bus_ids[1:]

    def pq_index(self, bus_id: str) -> int:
        """Position of ``bus_id`` in the non-slack injection vectors."""
        try:
            i = self.bus_ids.index(bus_id)
        except ValueError:
            raise KeyError(f"unknown bus {bus_id!r}") from None
        if i == 0:
            raise KeyError(f"bus {bus_id!r} is the slack and has no controllable injection")
        return i - 1

    def resource(self, name: str) -> Resource:
        for r in self.resources:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def i_base_a(self) -> float:
        return self.s_base_kva * 1e3 / (np.sqrt(3.0) * self.v_base_v)

    @property
    def z_base_ohm(self) -> float:
        return self.v_base_v**2 / (self.s_base_kva * 1e3)


def _req(d: Mapping, key: str, where: str):
    if key not in d:
        raise NetworkError(f"{where}: missing field {key!r}")
    return d[key]


def build_network(description: Mapping[str, Any]) -> NetworkModel:
    """Validate a declarative network description and convert it to per-unit.

    See ``docs`` in the README for the schema. Lines accept either per-unit
    ``r``/``x``/``ampacity`` or physical ``r_ohm``/``x_ohm``/``ampacity_a``.
    """
    bases = _req(description, "base", "network")
    s_base = float(_req(bases, "s_kva", "base"))
    v_base = float(_req(bases, "v_v", "base"))
    if not (s_base > 0 and v_base > 0):
        raise NetworkError("base: s_kva and v_v must be positive")
    z_base = v_base**2 / (s_base * 1e3)
    i_base = s_base * 1e3 / (np.sqrt(3.0) * v_base)

    buses = _req(description, "buses", "network")
    ids = []
    slack = []
    for k, b in enumerate(buses):
        bid = str(_req(b, "id", f"buses[{k}]"))
        if bid in ids:
            raise NetworkError(f"duplicate bus {bid!r}")
        ids.append(bid)
        btype = str(b.get("type", "PQ")).upper()
        if btype == "SLACK":
            slack.append(bid)
        elif btype != "PQ":
            raise NetworkError(f"bus {bid!r}: unsupported type {btype!r}")
    if not slack:
        raise NetworkError("missing slack bus")
    if len(slack) > 1:
        raise NetworkError(f"more than one slack bus: {slack}")
    order = [slack[0]] + [b for b in ids if b != slack[0]]
    index = {b: i for i, b in enumerate(order)}

    lines = _req(description, "lines", "network")
    seen = set()
    lids, lf, lt, zs, amps = [], [], [], [], []
    for k, ln in enumerate(lines):
        where = f"lines[{k}]"
        f, t = str(_req(ln, "from", where)), str(_req(ln, "to", where))
        for b in (f, t):
            if b not in index:
                raise NetworkError(f"{where}: unknown bus {b!r}")
        if f == t:
            raise NetworkError(f"{where}: line connects bus {f!r} to itself")
        key = frozenset((f, t))
        if key in seen:
            raise NetworkError(f"duplicate line between {f!r} and {t!r}")
        seen.add(key)
        if "r" in ln or "x" in ln:
            r, x = float(ln.get("r", 0.0)), float(ln.get("x", 0.0))
        else:
            r = float(ln.get("r_ohm", 0.0)) / z_base
            x = float(ln.get("x_ohm", 0.0)) / z_base
        if "ampacity" in ln:
            amp = float(ln["ampacity"])
        else:
            amp = float(_req(ln, "ampacity_a", where)) / i_base
        if r < 0 or x < 0:
            raise NetworkError(f"{where}: negative impedance")
        if abs(complex(r, x)) == 0.0:
            raise NetworkError(f"{where}: zero-impedance line {f!r}-{t!r}")
        if not amp > 0:
            raise NetworkError(f"{where}: ampacity must be positive")
        lids.append(str(ln.get("id", f"{f}-{t}")))
        lf.append(index[f])
        lt.append(index[t])
        zs.append(complex(r, x))
        amps.append(amp)

    n = len(order)
    adj = [[] for _ in range(n)]
    for f, t in zip(lf, lt):
        adj[f].append(t)
        adj[t].append(f)
    reached = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for w in adj[u]:
            if w not in reached:
                reached.add(w)
                stack.append(w)
    if len(reached) != n:
        missing = sorted(order[i] for i in range(n) if i not in reached)
        raise NetworkError(f"disconnected network: buses {missing} not reachable from slack")

    limits = description.get("limits", {})
    v_min = float(limits.get("v_min", 0.95))
    v_max = float(limits.get("v_max", 1.05))
    if not v_min < v_max:
        raise NetworkError("limits: v_min must be below v_max")
    s_max = float(_req(limits, "s_max_kva", "limits")) if "s_max_kva" in limits else float(
        _req(description, "s_max_kva", "network")
    )
    if not s_max > 0:
        raise NetworkError("transformer capacity s_max_kva must be positive")
    v_slack = float(description.get("slack_voltage", 1.0))

    lf_a = np.array(lf, dtype=np.int64)
    lt_a = np.array(lt, dtype=np.int64)
    z_a = np.array(zs, dtype=complex)
    y = 1.0 / z_a
    ybus = np.zeros((n, n), dtype=complex)
    np.add.at(ybus, (lf_a, lf_a), y)
    np.add.at(ybus, (lt_a, lt_a), y)
    np.add.at(ybus, (lf_a, lt_a), -y)
    np.add.at(ybus, (lt_a, lf_a), -y)

    res = []
    for k, r in enumerate(description.get("resources", [])):
        name = str(_req(r, "name", f"resources[{k}]"))
        bus = str(_req(r, "bus", f"resources[{k}]"))
        if bus not in index or index[bus] == 0:
            raise NetworkError(f"resource {name!r}: bus {bus!r} is not a non-slack bus")
        params = {kk: v for kk, v in r.items() if kk not in ("name", "bus", "kind")}
        res.append(Resource(name, str(_req(r, "kind", f"resources[{k}]")), bus, params))

    return NetworkModel(
        name=str(description.get("name", "network")),
        bus_ids=tuple(order),
        line_ids=tuple(lids),
        line_from=lf_a,
        line_to=lt_a,
        z=z_a,
        ampacity=np.array(amps),
        s_base_kva=s_base,
        v_base_v=v_base,
        v_slack=v_slack,
        s_max_kva=s_max,
        v_min=v_min,
        v_max=v_max,
        ybus=ybus,
        resources=tuple(res),
    )


def load_network(path: str | Path) -> NetworkModel:
    """Read a JSON network file; JSON errors report line and column."""
    path = Path(path)
    text = path.read_text()
    try:
        desc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return build_network(desc)
    except NetworkError as exc:
        raise NetworkError(f"{path}: {exc}") from exc


@dataclass(frozen=True, eq=False)
class OperatingPoint:
    p_kw: np.ndarray
    q_kw: np.ndarray
    v: np.ndarray
    i_mag: np.ndarray
    p0_kw: float
    q0_kw: float
    mismatch: float
    iterations: int

    @property
    def v_mag(self) -> np.ndarray:
        """Voltage magnitudes of the non-slack buses."""
        return np.abs(self.v[1:])


def _sbus_jacobian(ybus, v):
    ibus = ybus @ v
    vnorm = v / np.abs(v)
    dv = np.diag(v)
    ds_dvm = dv @ np.conj(ybus @ np.diag(vnorm)) + np.diag(np.conj(ibus) * vnorm)
    ds_dva = 1j * dv @ np.conj(np.diag(ibus) - ybus @ dv)
    return ds_dva, ds_dvm


def _jacobian(ybus, v):
    ds_dva, ds_dvm = _sbus_jacobian(ybus, v)
    a = ds_dva[1:, 1:]
    m = ds_dvm[1:, 1:]
    return np.block([[a.real, m.real], [a.imag, m.imag]])


def solve_power_flow(
    net: NetworkModel,
    p_kw,
    q_kw,
    tol: float = 1e-8,
    max_iter: int = 50,
    v0: np.ndarray | None = None,
) -> OperatingPoint:
    """Newton-Raphson AC power flow for the given non-slack injections.

    Converges when the largest nodal power mismatch is below ``tol`` p.u.
    Raises :class:`PowerFlowError` with the final mismatch otherwise.
    """
    p = np.asarray(p_kw, dtype=float).ravel()
    q = np.asarray(q_kw, dtype=float).ravel()
    n = net.n_buses
    if p.size != n - 1 or q.size != n - 1:
        raise ValueError(f"injection vectors must have {n - 1} entries, got {p.size} and {q.size}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        raise ValueError("injections must be finite")
    s_spec = (p + 1j * q) / net.s_base_kva

    if v0 is None:
        v = np.full(n, net.v_slack + 0j)
    else:
        v = np.array(v0, dtype=complex)
        v[0] = net.v_slack
    va = np.angle(v)
    vm = np.abs(v)
    ybus = net.ybus
    it = 0
    while True:
        s_calc = v * np.conj(ybus @ v)
        mis = s_spec - s_calc[1:]
        f = np.concatenate([mis.real, mis.imag])
        err = float(np.max(np.abs(f))) if f.size else 0.0
        if err < tol:
            break
        if it >= max_iter:
            raise PowerFlowError(
                f"power flow did not converge in {max_iter} iterations (mismatch {err:.3e} p.u.)", err, it
            )
        J = _jacobian(ybus, v)
        try:
            dx = np.linalg.solve(J, f)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular Jacobian at iteration {it}", err, it) from exc
        va[1:] += dx[: n - 1]
        vm[1:] += dx[n - 1:]
        v = vm * np.exp(1j * va)
        it += 1

    i_line = (v[net.line_from] - v[net.line_to]) / net.z
    s0 = v[0] * np.conj(ybus[0] @ v) * net.s_base_kva
    return OperatingPoint(
        p_kw=p.copy(),
        q_kw=q.copy(),
        v=v,
        i_mag=np.abs(i_line),
        p0_kw=float(s0.real),
        q0_kw=float(s0.imag),
        mismatch=err,
        iterations=it,
    )


@dataclass(frozen=True, eq=False)
class Linearization:
    """Affine maps from non-slack injections ``x = [p; q]`` (kW, kVAr).

    ``|v| ~ Av @ x + bv`` (p.u.), ``|i| ~ Ai @ x + bi`` (p.u.),
    ``[p0; q0] ~ A0 @ x + b0`` (kW, kVAr).
    """

    Av: np.ndarray
    bv: np.ndarray
    Ai: np.ndarray
    bi: np.ndarray
    A0: np.ndarray
    b0: np.ndarray
    op: OperatingPoint

    @property
    def n_inj(self) -> int:
        return self.Av.shape[0]

    def _x(self, p, q):
        return np.concatenate([np.asarray(p, float), np.asarray(q, float)])

    def voltages(self, p, q) -> np.ndarray:
        return self.Av @ self._x(p, q) + self.bv

    def currents(self, p, q) -> np.ndarray:
        return self.Ai @ self._x(p, q) + self.bi

    def gcp(self, p, q) -> np.ndarray:
        return self.A0 @ self._x(p, q) + self.b0


def _near_singular_bus(net: NetworkModel, J: np.ndarray) -> str:
    _, _, vt = np.linalg.svd(J)
    k = int(np.argmax(np.abs(vt[-1])))
    return net.pq_ids[k % (net.n_buses - 1)]


def linearize(net: NetworkModel, op: OperatingPoint, cond_limit: float = 1e12) -> Linearization:
    """First-order sensitivities of |v|, |i| and GCP power at ``op``.

    The state sensitivities are ``d[va; vm]/d[p; q] = J^-1`` with ``J`` the
    polar power-flow Jacobian; current and GCP sensitivities follow by the
    chain rule. Offsets make every map exact at ``op``. Lines carrying zero
    current get a zero gradient (|i| is not differentiable there).
    """
    n = net.n_buses
    nb = n - 1
    v = op.v
    J = _jacobian(net.ybus, v)
    if nb and np.linalg.cond(J) > cond_limit:
        bus = _near_singular_bus(net, J)
        raise SingularJacobianError(f"power-flow Jacobian is near-singular at bus {bus!r}", bus)
    try:
        Jinv = np.linalg.inv(J)
    except np.linalg.LinAlgError:
        bus = _near_singular_bus(net, J)
        raise SingularJacobianError(f"power-flow Jacobian is singular at bus {bus!r}", bus) from None
    S = 1.0 / net.s_base_kva
    dx = Jinv * S  # d[va; vm] per kW

    # complex voltage derivative dV_k/d[va; vm], slack row zero
    dV = np.zeros((n, 2 * nb), dtype=complex)
    rows = np.arange(1, n)
    dV[rows, np.arange(nb)] = 1j * v[1:]
    dV[rows, nb + np.arange(nb)] = v[1:] / np.abs(v[1:])

    Av = dx[nb:, :]
    vm = np.abs(v[1:])

    i_line = (v[net.line_from] - v[net.line_to]) / net.z
    i_mag = np.abs(i_line)
    dI = (dV[net.line_from] - dV[net.line_to]) / net.z[:, None]
    grad = np.zeros((net.n_lines, 2 * nb))
    live = i_mag > 1e-12
    grad[live] = (np.conj(i_line[live])[:, None] * dI[live]).real / i_mag[live][:, None]
    Ai = grad @ dx

    dS0 = v[0] * np.conj(net.ybus[0] @ dV) * net.s_base_kva
    A0 = np.vstack([dS0.real, dS0.imag]) @ dx

    x0 = np.concatenate([op.p_kw, op.q_kw])
    bv = vm - Av @ x0
    bi = i_mag - Ai @ x0
    b0 = np.array([op.p0_kw, op.q0_kw]) - A0 @ x0
    return Linearization(Av=Av, bv=bv, Ai=Ai, bi=bi, A0=A0, b0=b0, op=op)
