"""Flit-level model of the Hermes mesh.

Routers have five ports (EAST, WEST, NORTH, SOUTH, LOCAL), a 2-flit circular
input buffer per port, a single centralized routing engine doing XY routing
with round-robin arbitration, and wormhole connections.  Neighbouring ports
are joined by :class:`Link` objects that move one flit per 2-cycle handshake.

Timing model (single global clock):

* a flit offered on a link at cycle ``t`` with downstream space lands in the
  downstream buffer at ``t + 2``; without space the acknowledge is withheld
  and the flit stays in the upstream buffer;
* a header that starts arriving at a router input at cycle ``t`` has its
  connection installed at ``t + routing_cycles`` (the handshake that brings it
  in is part of the routing time) and is forwarded in that same cycle.

With these two rules a packet of ``P`` flits crossing ``n`` routers of an idle
mesh is delivered exactly ``n * routing_cycles + 2 * P`` cycles after its
header is offered at the source.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Iterable, Optional

HANDSHAKE_CYCLES = 2
DEFAULT_ROUTING_CYCLES = 7
DEFAULT_BUFFER_DEPTH = 2
DEFAULT_FLIT_BITS = 8
MAX_MESH_DIM = 16


class NocError(Exception):
    pass


class InvalidAddressError(NocError, ValueError):
    pass


class BufferFullError(NocError):
    pass


class BufferEmptyError(NocError):
    pass


class DeadlockError(NocError):
    """Raised when flits are in flight but nothing has moved for too long."""

    def __init__(self, message: str, stuck: list[str]):
        super().__init__(message + ("\n  " + "\n  ".join(stuck) if stuck else ""))
        self.stuck = stuck


class Port(IntEnum):
    """Router ports, in round-robin arbitration order."""

    EAST = 0
    WEST = 1
    NORTH = 2
    SOUTH = 3
    LOCAL = 4

    @property
    def opposite(self) -> "Port":
        return _OPPOSITE[self]

    def successor(self) -> "Port":
        return Port((self + 1) % 5)


_OPPOSITE = {
    Port.EAST: Port.WEST,
    Port.WEST: Port.EAST,
    Port.NORTH: Port.SOUTH,
    Port.SOUTH: Port.NORTH,
    Port.LOCAL: Port.LOCAL,
}

# NORTH is +y, SOUTH is -y.
DELTA = {
    Port.EAST: (1, 0),
    Port.WEST: (-1, 0),
    Port.NORTH: (0, 1),
    Port.SOUTH: (0, -1),
}


@dataclass(frozen=True, order=True)
class NetAddress:
    x: int
    y: int

    def __post_init__(self):
        if not (0 <= self.x < MAX_MESH_DIM and 0 <= self.y < MAX_MESH_DIM):
            raise InvalidAddressError(f"address ({self.x},{self.y}) does not fit one flit")

    def pack(self) -> int:
        """Wire form: one flit, ``(x << 4) | y``."""
        return (self.x << 4) | self.y

    @classmethod
    def unpack(cls, value: int) -> "NetAddress":
        return cls((value >> 4) & 0xF, value & 0xF)

    def __str__(self) -> str:
        return f"({self.x},{self.y})"


def xy_route(current: NetAddress, target: NetAddress,
             width: int = MAX_MESH_DIM, height: int = MAX_MESH_DIM) -> Port:
    """Deterministic XY routing: fix X completely, then Y."""
    for a in (current, target):
        if not (0 <= a.x < width and 0 <= a.y < height):
            raise InvalidAddressError(f"address {a} outside {width}x{height} mesh")
    if current.x < target.x:
        return Port.EAST
    if current.x > target.x:
        return Port.WEST
    if current.y < target.y:
        return Port.NORTH
    if current.y > target.y:
        return Port.SOUTH
    return Port.LOCAL


def arbitrate(requests: Iterable[Port], pointer: Port) -> Optional[Port]:
    """Round-robin grant: first requester at or after ``pointer``.

    Returns ``None`` when nobody requests.  The caller moves the pointer to
    the successor of the grantee.
    """
    req = set(requests)
    if not req:
        return None
    for i in range(5):
        p = Port((pointer + i) % 5)
        if p in req:
            return p
    return None


def min_latency(n: int, size: int, routing_cycles: int = DEFAULT_ROUTING_CYCLES) -> int:
    """Zero-load latency ``sum(R_i) + 2 * P`` with every ``R_i = routing_cycles``.

    ``n`` counts source and target routers inclusive; ``size`` is the packet
    length in flits including header and size flits.
    """
    if n < 1:
        raise ValueError("path must contain at least one router")
    if size < 3:
        raise ValueError("packet needs header, size and at least one payload flit")
    if routing_cycles < DEFAULT_ROUTING_CYCLES:
        raise ValueError("routing takes at least 7 cycles")
    return n * routing_cycles + HANDSHAKE_CYCLES * size


def peak_router_throughput(clock_hz: float, flit_bits: int = DEFAULT_FLIT_BITS,
                           max_connections: int = 5) -> float:
    """Theoretical router throughput in bits/s: one flit per handshake per connection."""
    if clock_hz <= 0 or flit_bits <= 0 or max_connections <= 0:
        raise ValueError("clock, flit width and connection count must be positive")
    return max_connections * flit_bits * clock_hz / HANDSHAKE_CYCLES


def hop_count(src: NetAddress, dst: NetAddress) -> int:
    """Routers on the XY path, source and target inclusive."""
    return abs(src.x - dst.x) + abs(src.y - dst.y) + 1


# ---------------------------------------------------------------------------
# Flits, buffers, links
# ---------------------------------------------------------------------------


class Flit:
    """An 8-bit wire value tagged with simulator bookkeeping."""

    __slots__ = ("value", "packet", "index")

    def __init__(self, value: int, packet: "PacketRecord | None" = None, index: int = 0):
        self.value = value
        self.packet = packet
        self.index = index

    def __repr__(self) -> str:
        pid = self.packet.id if self.packet is not None else "-"
        return f"Flit(0x{self.value:02X}, pkt={pid}, idx={self.index})"


class FlitBuffer:
    """Circular FIFO of fixed capacity."""

    __slots__ = ("slots", "head", "count", "capacity", "reserved")

    def __init__(self, capacity: int = DEFAULT_BUFFER_DEPTH):
        if capacity < 1:
            raise ValueError("buffer capacity must be positive")
        self.slots: list[Optional[Flit]] = [None] * capacity
        self.head = 0
        self.count = 0
        self.capacity = capacity
        # slots promised to a flit currently crossing the feeding link
        self.reserved = 0

    def push(self, flit: Flit) -> None:
        if self.count == self.capacity:
            raise BufferFullError("push on full buffer")
        self.slots[(self.head + self.count) % self.capacity] = flit
        self.count += 1

    def pop(self) -> Flit:
        if self.count == 0:
            raise BufferEmptyError("pop on empty buffer")
        flit = self.slots[self.head]
        self.slots[self.head] = None
        self.head = (self.head + 1) % self.capacity
        self.count -= 1
        return flit

    def peek(self) -> Flit:
        if self.count == 0:
            raise BufferEmptyError("peek on empty buffer")
        return self.slots[self.head]

    def has_space(self) -> bool:
        return self.count + self.reserved < self.capacity

    def __iter__(self):
        for i in range(self.count):
            yield self.slots[(self.head + i) % self.capacity]

    def __len__(self) -> int:
        return self.count


class LinkPhase(IntEnum):
    IDLE = 0
    REQUEST = 1   # tx raised, waiting for downstream space (ack withheld)
    TRANSFER = 2  # ack given, flit lands at land_at


# plain ints for the hot loop
_IDLE, _REQUEST, _TRANSFER = int(LinkPhase.IDLE), int(LinkPhase.REQUEST), int(LinkPhase.TRANSFER)


class Link:
    """One direction of a router-to-router (or router-to-IP) channel.

    The flit stays in the upstream buffer until it lands; the downstream slot
    is reserved when the transfer starts.
    """

    __slots__ = ("name", "phase", "flit", "offered_at", "land_at",
                 "src_router", "src_port", "dst_router", "dst_port",
                 "src_ni", "dst_ni", "transfers", "log")

    def __init__(self, name: str = ""):
        self.name = name
        self.phase = _IDLE
        self.flit: Optional[Flit] = None
        self.offered_at = -1
        self.land_at = -1
        self.src_router: Optional[Router] = None
        self.src_port = -1
        self.dst_router: Optional[Router] = None
        self.dst_port = -1
        self.src_ni: Optional[NetworkInterface] = None
        self.dst_ni: Optional[NetworkInterface] = None
        self.transfers = 0
        self.log: Optional[list[int]] = None

    @property
    def tx(self) -> bool:
        return self.phase != LinkPhase.IDLE

    @property
    def ack(self) -> bool:
        return self.phase == LinkPhase.TRANSFER

    def offer(self, flit: Flit, cycle: int) -> None:
        assert self.phase == LinkPhase.IDLE, "offer on busy link"
        self.phase = _REQUEST
        self.flit = flit
        self.offered_at = cycle

    def start(self, cycle: int) -> None:
        self.phase = _TRANSFER
        self.land_at = cycle + HANDSHAKE_CYCLES

    def land(self) -> Flit:
        flit = self.flit
        self.phase = _IDLE
        self.flit = None
        self.transfers += 1
        return flit

    def downstream_buffer(self) -> Optional[FlitBuffer]:
        if self.dst_router is not None:
            return self.dst_router.in_buf[self.dst_port]
        return None

    def __repr__(self) -> str:
        return f"Link({self.name}, {LinkPhase(self.phase).name}, {self.flit})"


def link_cycle(link: Link, cycle: int, upstream: Optional[Flit],
               downstream_space: bool) -> tuple[Link, Optional[Flit]]:
    """Advance a standalone link by one cycle.

    ``upstream`` is the flit the sender presents (``None`` when it has
    nothing); it is only taken while the link is idle.  Returns the link and
    the flit that landed this cycle, if any.  The mesh applies the same three
    steps (land, offer, acknowledge) in the same order.
    """
    landed = None
    if link.phase == LinkPhase.TRANSFER and link.land_at == cycle:
        landed = link.land()
    if link.phase == LinkPhase.IDLE and upstream is not None:
        link.offer(upstream, cycle)
    if link.phase == LinkPhase.REQUEST and downstream_space:
        link.start(cycle)
    return link, landed


# ---------------------------------------------------------------------------
# Packets and network interfaces
# ---------------------------------------------------------------------------


@dataclass
class PacketRecord:
    id: int
    source: NetAddress
    target: NetAddress
    size: int
    hops: int
    created_cycle: int
    tag: str = ""
    inject_cycle: int = -1
    deliver_cycle: int = -1
    contended: bool = False

    @property
    def latency(self) -> Optional[int]:
        if self.deliver_cycle < 0:
            return None
        return self.deliver_cycle - self.inject_cycle

    @property
    def delivered(self) -> bool:
        return self.deliver_cycle >= 0


class NetworkInterface:
    """The IP side of a router's LOCAL port.

    Packets queued with :meth:`send` are serialized onto the injection link;
    flits arriving on the ejection link are reassembled into packets.  The
    receive side always has room.
    """

    def __init__(self, address: NetAddress, mesh: "Mesh"):
        self.address = address
        self.mesh = mesh
        self.out_link = Link(f"{address}.ni->L")
        self.in_link = Link(f"{address}.L->ni")
        self._queue: deque[tuple[PacketRecord, list[int], Optional[Callable]]] = deque()
        self._pos = 0
        self._rx: list[int] = []
        self._rx_packet: Optional[PacketRecord] = None
        self.received: deque[tuple[list[int], PacketRecord]] = deque()
        self.on_receive: Optional[Callable[[list[int], PacketRecord], None]] = None

    def send(self, flits: list[int], tag: str = "",
             on_injected: Optional[Callable[[PacketRecord], None]] = None) -> PacketRecord:
        """Queue a packet (header, size, payload) for injection."""
        return self.mesh._send(self, flits, tag, on_injected)

    @property
    def idle(self) -> bool:
        return not self._queue and self.out_link.phase == LinkPhase.IDLE

    @property
    def pending_packets(self) -> int:
        return len(self._queue)

    def _next_flit(self) -> Optional[Flit]:
        if not self._queue:
            return None
        rec, values, _ = self._queue[0]
        return Flit(values[self._pos], rec, self._pos)

    def _popped(self, cycle: int) -> None:
        rec, values, cb = self._queue[0]
        self._pos += 1
        if self._pos == len(values):
            self._queue.popleft()
            self._pos = 0
            if cb is not None:
                cb(rec)

    def _accept(self, flit: Flit, cycle: int) -> Optional[PacketRecord]:
        if not self._rx:
            self._rx_packet = flit.packet
        elif flit.packet is not self._rx_packet:
            raise NocError(f"interleaved flits at {self.address}: {flit}")
        self._rx.append(flit.value)
        if len(self._rx) >= 2 and len(self._rx) == self._rx[1] + 2:
            values, rec = self._rx, self._rx_packet
            self._rx, self._rx_packet = [], None
            if rec is not None:
                rec.deliver_cycle = cycle
            if self.on_receive is not None:
                self.on_receive(values, rec)
            else:
                self.received.append((values, rec))
            return rec
        return None


# ---------------------------------------------------------------------------
# Router
# ---------------------------------------------------------------------------


class Router:
    """Hermes router state: buffers, connection table, routing engine."""

    def __init__(self, address: NetAddress, width: int, height: int,
                 depth: int = DEFAULT_BUFFER_DEPTH,
                 routing_cycles: int = DEFAULT_ROUTING_CYCLES):
        self.address = address
        self.width = width
        self.height = height
        self.present = [False] * 5
        for p, (dx, dy) in DELTA.items():
            nx, ny = address.x + dx, address.y + dy
            self.present[p] = 0 <= nx < width and 0 <= ny < height
        self.present[Port.LOCAL] = True
        self.in_buf: list[Optional[FlitBuffer]] = [
            FlitBuffer(depth) if self.present[p] else None for p in range(5)]
        self.in_link: list[Optional[Link]] = [None] * 5
        self.out_link: list[Optional[Link]] = [None] * 5
        self.conn = [-1] * 5          # input -> output
        self.owner = [-1] * 5         # output -> input
        self.stage = [0] * 5          # per input: 0 header, 1 size, 2 payload
        self.remaining = [0] * 5
        self.head_since = [0] * 5
        self.target = [-1] * 5        # cached route of the header at head
        self.service = routing_cycles - HANDSHAKE_CYCLES
        self.engine_in = -1
        self.engine_out = -1
        self.engine_done = -1
        self.arb_pointer = Port.EAST
        self.out_pointer = [Port.EAST] * 5
        self.forwarded = 0
        self.grant_log: Optional[list[tuple[int, int, int]]] = None
        # starvation bookkeeping: waiting input -> {output, bypass counts}
        self.max_bypass = 0
        self._waiting: dict[int, dict[int, int]] = {}

    @property
    def connections(self) -> list[tuple[Port, Port]]:
        return [(Port(p), Port(o)) for p, o in enumerate(self.conn) if o >= 0]

    def route_of(self, p: int) -> int:
        if self.target[p] < 0:
            head = self.in_buf[p].peek()
            dst = NetAddress.unpack(head.value)
            o = xy_route(self.address, dst, self.width, self.height)
            if not self.present[o]:
                raise NocError(f"XY route from {self.address} selects absent port {o.name}")
            self.target[p] = o
        return self.target[p]

    def requests(self) -> dict[int, list[int]]:
        """Inputs whose header waits at the buffer head, grouped by free target output."""
        by_out: dict[int, list[int]] = {}
        for p in range(5):
            buf = self.in_buf[p]
            if buf is None or buf.count == 0 or self.conn[p] >= 0 or p == self.engine_in:
                continue
            o = self.route_of(p)
            if self.owner[o] < 0 and o != self.engine_out:
                by_out.setdefault(o, []).append(p)
        return by_out

    def select(self, cycle: int) -> bool:
        """Start routing one header if the engine is idle."""
        if self.engine_in >= 0:
            return False
        by_out = self.requests()
        if not by_out:
            return False
        winners = {}
        for o, ps in by_out.items():
            winners[arbitrate((Port(p) for p in ps), self.out_pointer[o])] = o
        p = arbitrate(winners.keys(), self.arb_pointer)
        o = winners[p]
        self.out_pointer[o] = Port(p).successor()
        self.arb_pointer = Port(p).successor()
        self.engine_in, self.engine_out = p, o
        self.engine_done = cycle + self.service
        head = self.in_buf[p].peek()
        if cycle > self.head_since[p] and head.packet is not None:
            head.packet.contended = True
        if self.grant_log is not None:
            self.grant_log.append((cycle, p, o))
        self._track_bypass(by_out, p, o)
        return True

    def _track_bypass(self, by_out, granted: int, out: int) -> None:
        # count, for every input still waiting on `out`, how often each other
        # input was granted `out` meanwhile
        for o, ps in by_out.items():
            for q in ps:
                if q != granted:
                    w = self._waiting.setdefault(q, {})
                    if w.get("out", o) != o:
                        w.clear()
                    w["out"] = o
        self._waiting.pop(granted, None)
        for q, w in self._waiting.items():
            if w.get("out") == out:
                n = w.get(granted, 0) + 1
                w[granted] = n
                if n > self.max_bypass:
                    self.max_bypass = n

    def install(self) -> None:
        p, o = self.engine_in, self.engine_out
        self.conn[p] = o
        self.owner[o] = p
        self.stage[p] = 0
        self.target[p] = -1
        self.engine_in = self.engine_out = self.engine_done = -1

    def flits_buffered(self) -> int:
        return sum(b.count for b in self.in_buf if b is not None)


def router_cycle(router: Router, cycle: int) -> list[Link]:
    """Control and forwarding decisions of one router for one cycle.

    Completes a finished routing job, starts a new one if the engine is free,
    and offers the head flit of every connected input on its output link.
    Returns the links on which a flit was offered.  Flit arrivals (landings)
    and link acknowledges are applied by the mesh before and after this.
    """
    if router.engine_in >= 0 and router.engine_done == cycle:
        router.install()
    router.select(cycle)
    offered = []
    for p in range(5):
        o = router.conn[p]
        if o < 0:
            continue
        link = router.out_link[o]
        buf = router.in_buf[p]
        if link.phase == LinkPhase.IDLE and buf.count:
            link.offer(buf.peek(), cycle)
            offered.append(link)
    return offered


# ---------------------------------------------------------------------------
# Mesh and cycle engine
# ---------------------------------------------------------------------------


@dataclass
class MeshConfig:
    width: int = 2
    height: int = 2
    flit_bits: int = DEFAULT_FLIT_BITS
    buffer_depth: int = DEFAULT_BUFFER_DEPTH
    routing_cycles: int = DEFAULT_ROUTING_CYCLES

    def __post_init__(self):
        if not (1 <= self.width <= MAX_MESH_DIM and 1 <= self.height <= MAX_MESH_DIM):
            raise ValueError("mesh dimensions must be within 1..16")
        if self.flit_bits < 8:
            raise ValueError("flits narrower than 8 bits cannot carry an address")
        if self.buffer_depth < 1:
            raise ValueError("buffer depth must be positive")
        if self.routing_cycles <= HANDSHAKE_CYCLES:
            raise ValueError("routing time must exceed the header handshake")

    @property
    def max_size_field(self) -> int:
        return (1 << self.flit_bits) - 1


class Mesh:
    """A width x height Hermes mesh with one network interface per router.

    ``step(cycle)`` must be called with strictly increasing cycles; cycles in
    which nothing is scheduled may be skipped (see :meth:`next_event`).  With
    ``full_scan=True`` every router and link is evaluated every cycle, which
    is slower but independent of the event bookkeeping; both modes produce
    identical results.
    """

    def __init__(self, config: MeshConfig = None, full_scan: bool = False,
                 record_activity: bool = False):
        self.config = config or MeshConfig()
        cfg = self.config
        self.full_scan = full_scan
        self.routers: dict[NetAddress, Router] = {}
        self.nis: dict[NetAddress, NetworkInterface] = {}
        self.links: list[Link] = []
        for y in range(cfg.height):
            for x in range(cfg.width):
                a = NetAddress(x, y)
                self.routers[a] = Router(a, cfg.width, cfg.height,
                                         cfg.buffer_depth, cfg.routing_cycles)
        self._router_list = list(self.routers.values())
        for a, r in self.routers.items():
            for p, (dx, dy) in DELTA.items():
                if not r.present[p]:
                    continue
                nb = self.routers[NetAddress(a.x + dx, a.y + dy)]
                link = Link(f"{a}.{p.name}->{nb.address}")
                link.src_router, link.src_port = r, p
                link.dst_router, link.dst_port = nb, p.opposite
                r.out_link[p] = link
                nb.in_link[p.opposite] = link
                self.links.append(link)
            ni = NetworkInterface(a, self)
            self.nis[a] = ni
            ni.out_link.src_ni = ni
            ni.out_link.dst_router, ni.out_link.dst_port = r, Port.LOCAL
            r.in_link[Port.LOCAL] = ni.out_link
            ni.in_link.src_router, ni.in_link.src_port = r, Port.LOCAL
            ni.in_link.dst_ni = ni
            r.out_link[Port.LOCAL] = ni.in_link
            self.links.extend([ni.out_link, ni.in_link])
        if record_activity:
            for link in self.links:
                link.log = []
        self.records: list[PacketRecord] = []
        self._land_cal: dict[int, list[Link]] = {}
        self._engine_cal: dict[int, list[Router]] = {}
        self._heap: list[int] = []
        self._engine_dirty: dict[Router, None] = {}
        self._offer_dirty: dict[object, None] = {}
        self._grant_dirty: dict[Link, None] = {}
        self.cycle = -1
        self.flits_injected = 0
        self.flits_ejected = 0
        self.last_progress = 0
        self.on_deliver: Optional[Callable[[PacketRecord], None]] = None

    # -- construction helpers ------------------------------------------------

    def router(self, x: int, y: int) -> Router:
        return self.routers[NetAddress(x, y)]

    def ni(self, x: int, y: int) -> NetworkInterface:
        return self.nis[NetAddress(x, y)]

    def enable_grant_log(self) -> None:
        for r in self._router_list:
            r.grant_log = []

    def _send(self, ni: NetworkInterface, flits: list[int], tag: str,
              on_injected) -> PacketRecord:
        cfg = self.config
        if len(flits) < 2 or flits[1] != len(flits) - 2:
            raise NocError("size flit does not match the packet length")
        limit = cfg.max_size_field
        if any(not (0 <= v <= limit) for v in flits):
            raise NocError("flit value exceeds flit width")
        target = NetAddress.unpack(flits[0])
        if not (target.x < cfg.width and target.y < cfg.height):
            raise InvalidAddressError(f"target {target} outside the mesh")
        rec = PacketRecord(len(self.records), ni.address, target, len(flits),
                           hop_count(ni.address, target), max(self.cycle + 1, 0), tag)
        self.records.append(rec)
        ni._queue.append((rec, list(flits), on_injected))
        self._offer_dirty[ni] = None
        return rec

    # -- engine --------------------------------------------------------------

    def _schedule(self, cal: dict, cycle: int, item) -> None:
        lst = cal.get(cycle)
        if lst is None:
            cal[cycle] = [item]
            heapq.heappush(self._heap, cycle)
        else:
            lst.append(item)

    def skip_to(self, cycle: int) -> None:
        """Declare cycles before ``cycle`` eventless so that packets queued
        now are stamped with ``cycle``."""
        if cycle - 1 > self.cycle:
            self.cycle = cycle - 1

    def next_event(self) -> Optional[int]:
        """Earliest cycle at which something is scheduled, if any."""
        if self._offer_dirty or self._engine_dirty or self._grant_dirty:
            return self.cycle + 1
        while self._heap and self._heap[0] <= self.cycle:
            heapq.heappop(self._heap)
        return self._heap[0] if self._heap else None

    def step(self, cycle: int) -> None:
        if cycle <= self.cycle:
            raise ValueError("cycles must increase")
        self.cycle = cycle
        engine_dirty = self._engine_dirty
        offer_dirty = self._offer_dirty
        grant_dirty = self._grant_dirty

        # phase 1: landings
        land = self._land
        for link in self._land_cal.pop(cycle, ()):
            land(link, cycle)

        # phase 2: routing engines
        for r in self._engine_cal.pop(cycle, ()):
            r.install()
            engine_dirty[r] = None
            offer_dirty[r] = None
        routers = self._router_list if self.full_scan else list(engine_dirty)
        engine_dirty.clear()
        for r in routers:
            if r.select(cycle):
                self._schedule(self._engine_cal, r.engine_done, r)

        # phase 3: offers
        if self.full_scan:
            targets = list(self._router_list) + list(self.nis.values())
        else:
            targets = list(offer_dirty)
        offer_dirty.clear()
        for t in targets:
            if t.__class__ is Router:
                conn = t.conn
                for p in range(5):
                    o = conn[p]
                    if o < 0:
                        continue
                    link = t.out_link[o]
                    buf = t.in_buf[p]
                    if link.phase == _IDLE and buf.count:
                        link.phase = _REQUEST
                        link.flit = buf.slots[buf.head]
                        link.offered_at = cycle
                        grant_dirty[link] = None
            else:
                link = t.out_link
                if link.phase == _IDLE and t._queue:
                    flit = t._next_flit()
                    if flit.index == 0:
                        flit.packet.inject_cycle = cycle
                    link.phase = _REQUEST
                    link.flit = flit
                    link.offered_at = cycle
                    grant_dirty[link] = None

        # phase 4: acknowledges
        if self.full_scan:
            links = [l for l in self.links if l.phase == _REQUEST]
        else:
            links = list(grant_dirty)
        grant_dirty.clear()
        land_at = cycle + HANDSHAKE_CYCLES
        cal = self._land_cal
        pending = cal.get(land_at)
        for link in links:
            if link.phase != _REQUEST:
                continue
            r = link.dst_router
            if r is not None:
                buf = r.in_buf[link.dst_port]
                if buf.count + buf.reserved < buf.capacity:
                    buf.reserved += 1
                else:
                    pkt = link.flit.packet
                    if pkt is not None and not pkt.contended:
                        for f in buf:
                            if f.packet is not pkt:
                                pkt.contended = True
                                break
                    continue
            link.phase = _TRANSFER
            link.land_at = land_at
            if pending is None:
                pending = cal[land_at] = []
                heapq.heappush(self._heap, land_at)
            pending.append(link)

    def _land(self, link: Link, cycle: int) -> None:
        flit = link.flit
        link.phase = _IDLE
        link.flit = None
        link.transfers += 1
        self.last_progress = cycle
        if link.log is not None:
            link.log.append(cycle)
        # upstream side
        src = link.src_router
        if src is not None:
            o = link.src_port
            p = src.owner[o]
            buf = src.in_buf[p]
            slots = buf.slots
            slots[buf.head] = None
            buf.head = (buf.head + 1) % buf.capacity
            buf.count -= 1
            src.forwarded += 1
            st = src.stage[p]
            done = False
            if st == 0:
                src.stage[p] = 1
            elif st == 1:
                src.stage[p] = 2
                src.remaining[p] = flit.value
                done = flit.value == 0
            else:
                src.remaining[p] -= 1
                done = src.remaining[p] == 0
            if done:
                src.conn[p] = -1
                src.owner[o] = -1
                self._engine_dirty[src] = None
            if buf.count:
                if src.conn[p] < 0:
                    src.head_since[p] = cycle
                    src.target[p] = -1
                    self._engine_dirty[src] = None
            feeder = src.in_link[p]
            if feeder.phase == _REQUEST:
                self._grant_dirty[feeder] = None
            self._offer_dirty[src] = None
        else:
            ni = link.src_ni
            ni._popped(cycle)
            self.flits_injected += 1
            self._offer_dirty[ni] = None
        # downstream side
        dst = link.dst_router
        if dst is not None:
            p = link.dst_port
            buf = dst.in_buf[p]
            buf.reserved -= 1
            buf.slots[(buf.head + buf.count) % buf.capacity] = flit
            buf.count += 1
            if buf.count == 1:
                if dst.conn[p] < 0:
                    dst.head_since[p] = cycle
                    dst.target[p] = -1
                    self._engine_dirty[dst] = None
                else:
                    self._offer_dirty[dst] = None
        else:
            self.flits_ejected += 1
            rec = link.dst_ni._accept(flit, cycle)
            if rec is not None and self.on_deliver is not None:
                self.on_deliver(rec)

    def run(self, limit: Optional[int] = None) -> int:
        """Step event by event until nothing is scheduled or ``limit`` is
        reached.  Returns the last cycle stepped."""
        c = max(self.cycle + 1, 0)
        while limit is None or c < limit:
            self.step(c)
            nxt = self.next_event()
            if nxt is None:
                break
            c = max(nxt, c + 1)
        return self.cycle

    # -- inspection ----------------------------------------------------------

    def flits_in_network(self) -> int:
        return sum(r.flits_buffered() for r in self._router_list)

    def busy(self) -> bool:
        """True while any flit is queued, buffered or crossing a link."""
        if self.flits_in_network():
            return True
        return any(not ni.idle or ni._rx for ni in self.nis.values())

    def check_conservation(self) -> None:
        assert self.flits_injected == self.flits_ejected + self.flits_in_network(), \
            "flit conservation violated"

    def stuck_report(self) -> list[str]:
        lines = []
        for r in self._router_list:
            for p in range(5):
                buf = r.in_buf[p]
                if buf is not None and buf.count:
                    pkts = sorted({f.packet.id for f in buf if f.packet is not None})
                    conn = Port(r.conn[p]).name if r.conn[p] >= 0 else "none"
                    lines.append(f"router {r.address} in {Port(p).name}: {buf.count} flits "
                                 f"of packets {pkts}, connection -> {conn}")
        for ni in self.nis.values():
            if ni._queue:
                lines.append(f"ni {ni.address}: {len(ni._queue)} packets queued")
        return lines
