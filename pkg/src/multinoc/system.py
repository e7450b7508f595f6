"""Platform assembly, the cycle engine, traces, reports and traffic mode."""

from __future__ import annotations

import bisect
import hashlib
import io
import os
import sys
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

import numpy as np

from .ips import ProcessorIp, RemoteMemoryIp, SerialIp
from .noc import (DEFAULT_ROUTING_CYCLES, DeadlockError, Mesh, MeshConfig, NetAddress,
                  PacketRecord, min_latency, peak_router_throughput)
from .r8.asm import assemble
from .r8.objfile import ObjectImage, load_object
from .services import CoreMap, CoreRole, ServiceError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_CLOCK_HZ = 50_000_000


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrafficConfig:
    """Synthetic NoC-only load: ``rate`` is offered flits/cycle per node."""

    pattern: str = "uniform"
    rate: float = 0.1
    seed: int = 0
    cycles: int = 10_000
    min_size: int = 3
    max_size: int = 257

    def __post_init__(self):
        if self.pattern not in ("uniform", "pairwise"):
            raise ConfigError(f"unknown traffic pattern {self.pattern!r}")
        if not 0 < self.rate <= 1:
            raise ConfigError(f"rate {self.rate} outside (0, 1]")
        if self.cycles < 1:
            raise ConfigError("traffic needs at least one cycle")
        if not 3 <= self.min_size <= self.max_size:
            raise ConfigError("packet sizes must satisfy 3 <= min <= max")


@dataclass
class SystemConfig:
    width: int = 2
    height: int = 2
    flit_bits: int = 8
    buffer_depth: int = 2
    routing_cycles: int = DEFAULT_ROUTING_CYCLES
    cores: CoreMap = field(default_factory=CoreMap.default)
    partners: dict[int, int] = field(default_factory=dict)
    clock_hz: float = DEFAULT_CLOCK_HZ
    serial_byte_interval: int = 1
    images: dict[int, ObjectImage] = field(default_factory=dict)
    seed: int = 0
    max_cycles: int = 1_000_000
    watchdog_cycles: int = 20_000
    record_activity: bool = False
    traffic: Optional[TrafficConfig] = None

    @property
    def mesh(self) -> MeshConfig:
        return MeshConfig(self.width, self.height, self.flit_bits,
                          self.buffer_depth, self.routing_cycles)

    def validate(self) -> None:
        self.mesh  # validates dimensions and timing
        for cid, (addr, role) in self.cores.entries.items():
            if not (addr.x < self.width and addr.y < self.height):
                raise ConfigError(f"core {cid} at {addr} is outside the mesh")
        if len(self.cores.ids(CoreRole.SERIAL)) > 1:
            raise ConfigError("at most one serial IP is supported")
        for cid, img in self.images.items():
            if cid not in self.cores:
                raise ConfigError(f"image for unknown core {cid}")
            if self.cores.role(cid) == CoreRole.SERIAL:
                raise ConfigError("the serial IP has no memory to load")
            if img.origin + len(img.words) > 1024:
                raise ConfigError(f"image for core {cid} overflows its memory")
        for a, b in self.partners.items():
            for c in (a, b):
                if c not in self.cores or self.cores.role(c) != CoreRole.PROCESSOR:
                    raise ConfigError(f"partner entry {a}->{b} names a non-processor")

    def partner_of(self, core_id: int) -> Optional[int]:
        if core_id in self.partners:
            return self.partners[core_id]
        procs = self.cores.ids(CoreRole.PROCESSOR)
        if len(procs) == 2 and core_id in procs:
            return procs[1] if core_id == procs[0] else procs[0]
        return None


def _load_image(path: str) -> ObjectImage:
    if path.endswith(".asm") or path.endswith(".s"):
        with open(path) as f:
            return assemble(f.read())
    return load_object(path)


def config_from_dict(d: dict, base_dir: str = ".") -> SystemConfig:
    """Build a config from the structure of a TOML config file."""
    d = dict(d)
    mesh = d.pop("mesh", {})
    kw = {k: mesh[k] for k in ("width", "height", "flit_bits", "buffer_depth",
                               "routing_cycles") if k in mesh}
    for k in ("clock_hz", "serial_byte_interval", "seed", "max_cycles",
              "watchdog_cycles", "record_activity"):
        if k in d:
            kw[k] = d.pop(k)
    cores = d.pop("core", None)
    if cores is not None:
        entries, partners, images = {}, {}, {}
        for c in cores:
            cid = int(c["id"])
            if cid in entries:
                raise ConfigError(f"core id {cid} listed twice")
            entries[cid] = (NetAddress(int(c["x"]), int(c["y"])), c["role"])
            if "partner" in c:
                partners[cid] = int(c["partner"])
            if "image" in c:
                images[cid] = _load_image(os.path.join(base_dir, c["image"]))
            if "words" in c:
                images[cid] = ObjectImage(int(c.get("origin", 0)), [int(w) for w in c["words"]])
        try:
            kw["cores"] = CoreMap(entries)
        except ServiceError as e:
            raise ConfigError(str(e)) from None
        kw["partners"] = partners
        kw["images"] = images
    if "traffic" in d:
        kw["traffic"] = TrafficConfig(**d.pop("traffic"))
    if d:
        raise ConfigError(f"unknown config keys: {sorted(d)}")
    cfg = SystemConfig(**kw)
    cfg.validate()
    return cfg


def load_config(path: str) -> SystemConfig:
    with open(path, "rb") as f:
        data = tomllib.load(f)
    return config_from_dict(data, os.path.dirname(os.path.abspath(path)))


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------


@dataclass
class SimTrace:
    """Cycle-stamped event log plus the packet records of a run."""

    events: list[tuple[int, int, str, tuple]] = field(default_factory=list)
    records: list[PacketRecord] = field(default_factory=list)
    memories: dict[int, list[int]] = field(default_factory=dict)
    mesh: Optional[Mesh] = None
    cycles: int = 0

    def add(self, cycle: int, kind: str, **fields) -> None:
        self.events.append((cycle, len(self.events), kind, tuple(fields.items())))

    def lines(self) -> list[str]:
        rows = [(c, 0, seq, kind, f) for c, seq, kind, f in self.events]
        for r in self.records:
            if r.inject_cycle >= 0:
                rows.append((r.inject_cycle, 1, r.id, "inject",
                             (("pkt", r.id), ("src", r.source), ("dst", r.target),
                              ("size", r.size), ("tag", r.tag))))
            if r.deliver_cycle >= 0:
                rows.append((r.deliver_cycle, 2, r.id, "deliver",
                             (("pkt", r.id), ("latency", r.latency),
                              ("contended", int(r.contended)))))
        rows.sort(key=lambda t: t[:3])
        out = []
        for c, _, _, kind, f in rows:
            extra = "".join(f" {k}={_fmt(v)}" for k, v in f)
            out.append(f"cycle={c} event={kind}{extra}")
        return out

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def packet_csv(self) -> str:
        buf = io.StringIO()
        buf.write("src,dst,size,inject,deliver,hops\n")
        for r in self.records:
            buf.write(f"{_fmt(r.source)},{_fmt(r.target)},{r.size},"
                      f"{_opt(r.inject_cycle)},{_opt(r.deliver_cycle)},{r.hops}\n")
        return buf.getvalue()

    def digest(self) -> str:
        h = hashlib.sha256(self.text().encode())
        h.update(self.packet_csv().encode())
        for cid in sorted(self.memories):
            h.update(bytes(str((cid, self.memories[cid])), "ascii"))
        return h.hexdigest()


def _fmt(v) -> str:
    if isinstance(v, NetAddress):
        return f"{v.x}{v.y}"
    return str(v).replace(" ", "_")


def _opt(v: int) -> str:
    return "" if v < 0 else str(v)


# ---------------------------------------------------------------------------
# System
# ---------------------------------------------------------------------------


class System:
    """A built platform: mesh, IP cores and the cycle engine."""

    def __init__(self, cfg: SystemConfig, full_scan: bool = False):
        cfg.validate()
        self.config = cfg
        self.mesh = Mesh(cfg.mesh, full_scan=full_scan, record_activity=cfg.record_activity)
        self.trace = SimTrace(records=self.mesh.records, mesh=self.mesh)
        self.cycle = 0
        self.cores: dict[int, object] = {}
        self.serial: Optional[SerialIp] = None
        emit = self._emit
        for cid in cfg.cores.ids():
            addr, role = cfg.cores.entries[cid]
            ni = self.mesh.nis[addr]
            if role == CoreRole.SERIAL:
                ip = SerialIp(cid, ni, cfg.cores, cfg.serial_byte_interval, events=emit)
                self.serial = ip
            elif role == CoreRole.PROCESSOR:
                ip = ProcessorIp(cid, ni, cfg.cores, cfg.partner_of(cid), events=emit)
            else:
                ip = RemoteMemoryIp(cid, ni, cfg.cores, events=emit)
            self.cores[cid] = ip
        for cid, img in cfg.images.items():
            self.cores[cid].mem.load(img.origin, img.words)
        self._ips = list(self.cores.values())

    def _emit(self, kind: str, **fields) -> None:
        self.trace.add(self.cycle, kind, **fields)

    # -- host byte queues --------------------------------------------------------

    def host_send(self, data: Iterable[int]) -> None:
        """Queue bytes for the serial IP; they are seen from the next cycle."""
        if self.serial is None:
            raise ConfigError("platform has no serial IP")
        data = [int(b) & 0xFF for b in data]
        self.serial.rx_queue.extend(data)
        self._emit("host_in", bytes=" ".join(f"{b:02X}" for b in data))

    def host_receive(self) -> list[int]:
        if self.serial is None:
            return []
        out = list(self.serial.tx_queue)
        self.serial.tx_queue.clear()
        return out

    # -- engine ------------------------------------------------------------------

    def step(self) -> None:
        c = self.cycle
        self.mesh.skip_to(c)
        for ip in self._ips:
            ip.cycle(c)
        self.mesh.step(c)
        self.cycle = c + 1

    def quiescent(self) -> bool:
        if self.mesh.busy():
            return False
        return all(ip.idle for ip in self._ips)

    def _next_event(self) -> Optional[int]:
        c = self.cycle
        best = self.mesh.next_event()
        for ip in self._ips:
            t = ip.next_event(c - 1)
            if t is not None and (best is None or t < best):
                best = t
        if best is not None and best < c:
            best = c
        return best

    def run(self, max_cycles: Optional[int] = None,
            until: Optional[Callable[["System"], bool]] = None,
            stop_on_quiescence: bool = True) -> SimTrace:
        """Advance until ``max_cycles`` more cycles elapsed, ``until`` holds, or
        the platform is quiescent."""
        limit = self.cycle + (self.config.max_cycles if max_cycles is None else max_cycles)
        wd = self.config.watchdog_cycles
        while self.cycle < limit:
            if until is not None and until(self):
                break
            if stop_on_quiescence and self.quiescent():
                break
            nxt = self._next_event()
            if nxt is None:
                self.cycle = limit
                break
            if nxt >= limit:
                self.cycle = limit
                break
            self.cycle = nxt
            self.step()
            m = self.mesh
            if self.cycle - m.last_progress > wd and m.flits_in_network():
                raise DeadlockError(
                    f"no flit moved for {self.cycle - m.last_progress} cycles",
                    m.stuck_report())
        return self.snapshot()

    def snapshot(self) -> SimTrace:
        t = self.trace
        t.cycles = self.cycle
        t.memories = {cid: list(ip.mem.words) for cid, ip in self.cores.items()
                      if hasattr(ip, "mem")}
        return t

    def memory(self, core_id: int) -> list[int]:
        return self.cores[core_id].mem.words

    def processor(self, core_id: int) -> ProcessorIp:
        ip = self.cores[core_id]
        if not isinstance(ip, ProcessorIp):
            raise ConfigError(f"core {core_id} is not a processor")
        return ip


def build_system(cfg: Optional[SystemConfig] = None, full_scan: bool = False) -> System:
    return System(cfg or SystemConfig(), full_scan=full_scan)


def run(system: System, stop: Union[int, Callable[[System], bool], None] = None) -> SimTrace:
    """Run to a cycle bound (int) or until a predicate holds, stopping early at
    quiescence."""
    if callable(stop):
        return system.run(until=stop)
    return system.run(max_cycles=stop)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatencyRow:
    id: int
    source: NetAddress
    target: NetAddress
    size: int
    hops: int
    inject: int
    deliver: int
    latency: int
    floor: int
    gap: int
    contended: bool


@dataclass
class LatencyReport:
    rows: list[LatencyRow]

    def _arr(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=np.int64)

    @property
    def count(self) -> int:
        return len(self.rows)

    @property
    def min(self) -> Optional[int]:
        return int(self._arr("latency").min()) if self.rows else None

    @property
    def max(self) -> Optional[int]:
        return int(self._arr("latency").max()) if self.rows else None

    @property
    def mean(self) -> Optional[float]:
        return float(self._arr("latency").mean()) if self.rows else None

    @property
    def max_gap(self) -> Optional[int]:
        return int(self._arr("gap").max()) if self.rows else None

    def table(self) -> str:
        lines = ["id src dst size hops inject deliver latency floor gap"]
        for r in self.rows:
            lines.append(f"{r.id} {_fmt(r.source)} {_fmt(r.target)} {r.size} {r.hops} "
                         f"{r.inject} {r.deliver} {r.latency} {r.floor} {r.gap}")
        if self.rows:
            lines.append(f"min={self.min} mean={self.mean:.2f} max={self.max} "
                         f"max_gap={self.max_gap}")
        return "\n".join(lines)


def _records(src) -> list[PacketRecord]:
    if isinstance(src, (SimTrace, Mesh)):
        return src.records
    if isinstance(src, System):
        return src.mesh.records
    return list(src)


def latency_report(trace, routing_cycles: int = DEFAULT_ROUTING_CYCLES) -> LatencyReport:
    rows = []
    for r in _records(trace):
        if not r.delivered:
            continue
        floor = min_latency(r.hops, r.size, routing_cycles)
        rows.append(LatencyRow(r.id, r.source, r.target, r.size, r.hops, r.inject_cycle,
                               r.deliver_cycle, r.latency, floor, r.latency - floor,
                               r.contended))
    return LatencyReport(rows)


@dataclass
class ThroughputReport:
    start: int
    end: int
    clock_hz: float
    flit_bits: int
    router_flits: dict[NetAddress, int]
    link_flits: dict[str, int]

    @property
    def cycles(self) -> int:
        return self.end - self.start

    @property
    def peak_bits(self) -> float:
        return peak_router_throughput(self.clock_hz, self.flit_bits)

    def router_rate(self, addr: NetAddress) -> float:
        """Accepted flits per cycle leaving the router."""
        return self.router_flits[addr] / self.cycles

    def link_rate(self, name: str) -> float:
        return self.link_flits[name] / self.cycles

    def router_bits(self, addr: NetAddress) -> float:
        return self.router_flits[addr] * self.flit_bits * self.clock_hz / self.cycles

    def utilization(self, addr: NetAddress) -> float:
        return self.router_bits(addr) / self.peak_bits


def throughput_report(trace, window: tuple[int, int],
                      clock_hz: float = DEFAULT_CLOCK_HZ,
                      flit_bits: Optional[int] = None) -> ThroughputReport:
    """Flit rates over the cycle window ``[start, end)``.  The mesh must have
    been built with activity recording."""
    mesh = trace.mesh if isinstance(trace, (SimTrace, System)) else trace
    if mesh is None:
        raise ValueError("trace has no mesh attached")
    start, end = window
    if end <= start:
        raise ValueError("empty window")
    if flit_bits is None:
        flit_bits = mesh.config.flit_bits
    routers = {a: 0 for a in mesh.routers}
    links = {}
    for link in mesh.links:
        if link.log is None:
            raise ValueError("mesh was built without activity recording")
        n = bisect.bisect_left(link.log, end) - bisect.bisect_left(link.log, start)
        links[link.name] = n
        if link.src_router is not None:
            routers[link.src_router.address] += n
    return ThroughputReport(start, end, clock_hz, flit_bits, routers, links)


# ---------------------------------------------------------------------------
# Traffic mode
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Injection:
    cycle: int
    source: NetAddress
    target: NetAddress
    size: int


def traffic_generate(mesh_cfg: MeshConfig, traffic: TrafficConfig) -> list[Injection]:
    """Reproducible packet schedule.

    Each node starts packets as a Bernoulli process whose probability makes
    the offered load ``rate`` flits/cycle on average.
    """
    rng = np.random.default_rng(traffic.seed)
    nodes = [NetAddress(x, y) for y in range(mesh_cfg.height) for x in range(mesh_cfg.width)]
    n = len(nodes)
    mean_size = (traffic.min_size + traffic.max_size) / 2
    p = min(1.0, traffic.rate / mean_size)
    out: list[tuple[int, int, NetAddress, NetAddress, int]] = []
    for i, src in enumerate(nodes):
        if traffic.pattern == "pairwise":
            j = n - 1 - i
            if j == i:
                continue
            fixed = nodes[j]
        elif n == 1:
            continue
        else:
            fixed = None
        expect = int(traffic.cycles * p * 1.2) + 16
        t = -1
        while True:
            gaps = rng.geometric(p, size=expect)
            times = t + np.cumsum(gaps)
            times = times[times < traffic.cycles]
            k = len(times)
            sizes = rng.integers(traffic.min_size, traffic.max_size + 1, size=k)
            if fixed is None:
                picks = rng.integers(0, n - 1, size=k)
                picks = picks + (picks >= i)
            for m in range(k):
                dst = fixed if fixed is not None else nodes[int(picks[m])]
                out.append((int(times[m]), i, src, dst, int(sizes[m])))
            if k < expect:
                break
            t = int(times[-1])
    out.sort(key=lambda e: (e[0], e[1]))
    return [Injection(c, s, d, z) for c, _, s, d, z in out]


@dataclass
class TrafficResult:
    mesh: Mesh
    schedule: list[Injection]
    cycles: int

    @property
    def records(self) -> list[PacketRecord]:
        return self.mesh.records

    @property
    def delivered(self) -> int:
        return sum(1 for r in self.mesh.records if r.delivered)

    @property
    def all_delivered(self) -> bool:
        return self.delivered == len(self.schedule)

    @property
    def max_bypass(self) -> int:
        return max(r.max_bypass for r in self.mesh.routers.values())

    def digest(self) -> str:
        h = hashlib.sha256()
        for r in self.mesh.records:
            h.update(f"{r.id},{r.source},{r.target},{r.size},{r.inject_cycle},"
                     f"{r.deliver_cycle},{int(r.contended)}\n".encode())
        return h.hexdigest()


def packet_flits(target: NetAddress, size: int, fill: int = 0) -> list[int]:
    payload = size - 2
    return [target.pack(), payload] + [(fill + k) & 0xFF for k in range(payload)]


def run_traffic(mesh_cfg: MeshConfig, schedule: list[Injection], drain: bool = True,
                horizon: Optional[int] = None, watchdog: int = 20_000,
                full_scan: bool = False, record_activity: bool = False,
                grant_log: bool = False) -> TrafficResult:
    """Drive a bare mesh with a packet schedule; Local ports are sink stubs."""
    mesh = Mesh(mesh_cfg, full_scan=full_scan, record_activity=record_activity)
    if grant_log:
        mesh.enable_grant_log()
    for ni in mesh.nis.values():
        ni.on_receive = _discard
    horizon = horizon if horizon is not None else (schedule[-1].cycle + 1 if schedule else 0)
    i, n = 0, len(schedule)
    c = 0
    while True:
        mesh.skip_to(c)
        while i < n and schedule[i].cycle <= c:
            inj = schedule[i]
            mesh.nis[inj.source].send(packet_flits(inj.target, inj.size, inj.cycle))
            i += 1
        mesh.step(c)
        if c - mesh.last_progress > watchdog and mesh.busy():
            raise DeadlockError(f"no flit moved for {c - mesh.last_progress} cycles",
                                mesh.stuck_report())
        nxt = mesh.next_event()
        if i < n:
            nxt = schedule[i].cycle if nxt is None else min(nxt, schedule[i].cycle)
        if nxt is None or (not drain and nxt >= horizon):
            break
        c = max(nxt, c + 1)
    return TrafficResult(mesh, schedule, max(c + 1, horizon))


def _discard(values, rec) -> None:
    pass


# ---------------------------------------------------------------------------
# Peak-throughput scenario
# ---------------------------------------------------------------------------


def center_flows(width: int = 3, height: int = 3) -> list[tuple[NetAddress, NetAddress]]:
    """Five flows whose paths cross the center router on pairwise disjoint
    input and output ports."""
    cx, cy = width // 2, height // 2
    c = NetAddress(cx, cy)
    return [
        (NetAddress(0, cy), NetAddress(width - 1, cy)),
        (NetAddress(width - 1, cy), NetAddress(0, cy)),
        (NetAddress(cx, 0), NetAddress(cx, height - 1)),
        (NetAddress(cx, height - 1), NetAddress(cx, 0)),
        (c, c),
    ]


def peak_scenario(packets: int = 4, size: int = 257, width: int = 3,
                  height: int = 3) -> Mesh:
    """Run the five center flows back to back with ``packets`` packets each."""
    mesh = Mesh(MeshConfig(width, height), record_activity=True)
    for ni in mesh.nis.values():
        ni.on_receive = _discard
    for src, dst in center_flows(width, height):
        for k in range(packets):
            mesh.nis[src].send(packet_flits(dst, size, k))
    c = 0
    while True:
        mesh.step(c)
        nxt = mesh.next_event()
        if nxt is None:
            break
        c = max(nxt, c + 1)
    return mesh
