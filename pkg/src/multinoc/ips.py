"""IP cores attached to router LOCAL ports: memory, processor and serial."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from . import services as sv
from .noc import NetAddress, NetworkInterface, PacketRecord
from .r8.cpu import MemEffect, R8State, complete_load, step
from .r8.isa import R8DecodeError
from .services import CoreMap, CoreRole, ServiceKind, ServiceMessage

log = logging.getLogger(__name__)

MEMORY_WORDS = 1024
SYNC_BYTE = 0x55

# host -> system
OP_READ = 0x00
OP_WRITE = 0x01
OP_ACTIVATE = 0x02
OP_SCANF_RETURN = 0x03
# system -> host
OP_PRINTF = 0x10
OP_SCANF = 0x11
OP_READ_RETURN = 0x12
OP_ERROR = 0xEE

ERR_UNKNOWN_OPCODE = 0x01
ERR_UNKNOWN_CORE = 0x02
ERR_BAD_TARGET = 0x03


class IpError(Exception):
    pass


class MemoryBoundsError(IpError, IndexError):
    pass


class ProtocolError(IpError):
    pass


# ---------------------------------------------------------------------------
# Address decoding
# ---------------------------------------------------------------------------


class AddressTarget(Enum):
    LOCAL = "local"
    OTHER_PROCESSOR = "other_processor"
    REMOTE_MEMORY = "remote_memory"
    IO = "io"
    WAIT = "wait"
    NOTIFY = "notify"
    UNMAPPED = "unmapped"


IO_ADDRESS = 0xFFFF
WAIT_ADDRESS = 0xFFFE
NOTIFY_ADDRESS = 0xFFFD


def decode_address(addr: int) -> tuple[AddressTarget, Optional[int]]:
    """Map a 16-bit processor address to its target and 10-bit offset."""
    addr &= 0xFFFF
    if addr < 1024:
        return AddressTarget.LOCAL, addr
    if addr < 2048:
        return AddressTarget.OTHER_PROCESSOR, addr - 1024
    if addr < 3072:
        return AddressTarget.REMOTE_MEMORY, addr - 2048
    if addr == IO_ADDRESS:
        return AddressTarget.IO, None
    if addr == WAIT_ADDRESS:
        return AddressTarget.WAIT, None
    if addr == NOTIFY_ADDRESS:
        return AddressTarget.NOTIFY, None
    return AddressTarget.UNMAPPED, None


# ---------------------------------------------------------------------------
# Memory IP
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MemRequest:
    kind: str            # "read" | "write"
    offset: int
    value: int = 0


@dataclass
class _NocJob:
    kind: ServiceKind
    address: int
    count: int
    data: tuple = ()
    reply_to: Optional[int] = None
    done: int = 0
    words: list = field(default_factory=list)


class MemoryIp:
    """1024 x 16-bit words with a processor port and a NoC port.

    The processor port has priority: in a cycle where the processor touches
    the banks, the NoC-side word access waits for the next free cycle.
    """

    def __init__(self, size: int = MEMORY_WORDS):
        self.words = [0] * size
        self.size = size
        self._deferred: Optional[MemRequest] = None
        self._proc_active = False
        self.jobs: deque[_NocJob] = deque()
        self.busy_noc_mem = False      # memory is using the NoC interface
        self.busy_noc_r8 = False       # processor is using the NoC interface
        self.deferrals = 0
        self.priority_log: Optional[list[tuple[int, str]]] = None

    # processor port, used by the core during its execute cycle
    def __getitem__(self, offset: int) -> int:
        self._check(offset)
        self._proc_active = True
        return self.words[offset]

    def __setitem__(self, offset: int, value: int) -> None:
        self._check(offset)
        self._proc_active = True
        self.words[offset] = value & 0xFFFF

    def __len__(self) -> int:
        return self.size

    def _check(self, offset: int) -> None:
        if not 0 <= offset < self.size:
            raise MemoryBoundsError(f"offset {offset} outside 0..{self.size - 1}")

    def _access(self, req: MemRequest) -> int:
        self._check(req.offset)
        if req.kind == "write":
            self.words[req.offset] = req.value & 0xFFFF
            return req.value & 0xFFFF
        return self.words[req.offset]

    def mem_cycle(self, proc_req: Optional[MemRequest] = None,
                  noc_req: Optional[MemRequest] = None):
        """One bank cycle.  Returns ``(proc_result, noc_result)``.

        ``noc_result`` is ``(request, value)`` for the NoC access served this
        cycle (possibly one deferred from an earlier cycle) or ``None``.
        """
        if noc_req is not None:
            if self._deferred is not None:
                raise IpError("NoC port already has a deferred access")
            self._check(noc_req.offset)
            self._deferred = noc_req
        proc_result = None
        if proc_req is not None:
            proc_result = self._access(proc_req)
        noc_result = None
        if self._deferred is not None:
            if proc_req is None:
                req, self._deferred = self._deferred, None
                noc_result = (req, self._access(req))
            else:
                self.deferrals += 1
        return proc_result, noc_result

    def load(self, origin: int, words) -> None:
        words = list(words)
        if origin < 0 or origin + len(words) > self.size:
            raise MemoryBoundsError("image does not fit memory")
        self.words[origin:origin + len(words)] = [w & 0xFFFF for w in words]

    @property
    def idle(self) -> bool:
        return not self.jobs and self._deferred is None

    def tick(self, cycle: int) -> Optional[_NocJob]:
        """Advance the NoC-side job by one word unless the processor used the
        banks this cycle.  Returns the job when it completes."""
        proc_active, self._proc_active = self._proc_active, False
        if not self.jobs:
            self.busy_noc_mem = False
            return None
        job = self.jobs[0]
        self.busy_noc_mem = True
        if proc_active:
            self.deferrals += 1
            if self.priority_log is not None:
                self.priority_log.append((cycle, "proc"))
            return None
        i = job.done
        if job.kind == ServiceKind.WRITE_MEM:
            self.words[job.address + i] = job.data[i]
        else:
            job.words.append(self.words[job.address + i])
        if self.priority_log is not None:
            self.priority_log.append((cycle, "noc"))
        job.done += 1
        if job.done == job.count:
            self.jobs.popleft()
            return job
        return None


# ---------------------------------------------------------------------------
# shared NoC plumbing
# ---------------------------------------------------------------------------


class _NocEndpoint:
    def __init__(self, core_id: int, ni: NetworkInterface, core_map: CoreMap,
                 events: Optional[Callable[..., None]] = None):
        self.core_id = core_id
        self.ni = ni
        self.core_map = core_map
        self.diagnostics: list[str] = []
        self._emit = events or (lambda *a, **k: None)

    def send(self, msg: ServiceMessage, dest: int,
             on_injected: Optional[Callable[[PacketRecord], None]] = None) -> PacketRecord:
        target = self.core_map.resolve(dest)
        pkt = sv.encode_packet(msg, target)
        return self.ni.send(pkt.flits, tag=msg.kind.name, on_injected=on_injected)

    def inbox(self):
        while self.ni.received:
            flits, rec = self.ni.received.popleft()
            try:
                msg = sv.decode_packet(sv.Packet.from_flits(flits))
            except sv.ServiceError as e:
                self.diag(f"malformed packet: {e}")
                continue
            yield msg

    def diag(self, text: str) -> None:
        self.diagnostics.append(text)
        log.warning("core %d: %s", self.core_id, text)
        self._emit("diagnostic", core=self.core_id, text=text)

    def _serve_memory(self, mem: MemoryIp, msg: ServiceMessage) -> None:
        if msg.address + msg.count > mem.size:
            self.diag(f"{msg.kind.name} {msg.address}+{msg.count} outside memory")
            return
        if msg.kind == ServiceKind.READ_MEM:
            if msg.source not in self.core_map:
                self.diag(f"READ_MEM from unknown core {msg.source}")
                return
            mem.jobs.append(_NocJob(msg.kind, msg.address, msg.count, reply_to=msg.source))
        else:
            mem.jobs.append(_NocJob(msg.kind, msg.address, msg.count, data=msg.data))

    def _finish_job(self, job: Optional[_NocJob]) -> None:
        if job is None or job.kind != ServiceKind.READ_MEM:
            return
        for start in range(0, job.count, sv.MAX_WORDS_PER_PACKET):
            chunk = job.words[start:start + sv.MAX_WORDS_PER_PACKET]
            self.send(sv.read_return(job.address + start, chunk), job.reply_to)


class RemoteMemoryIp(_NocEndpoint):
    """Stand-alone memory reachable only through the NoC."""

    def __init__(self, core_id: int, ni: NetworkInterface, core_map: CoreMap, events=None):
        super().__init__(core_id, ni, core_map, events)
        self.mem = MemoryIp()

    def cycle(self, cycle: int) -> None:
        for msg in self.inbox():
            if msg.kind in (ServiceKind.READ_MEM, ServiceKind.WRITE_MEM):
                self._serve_memory(self.mem, msg)
            else:
                self.diag(f"memory cannot handle {msg.kind.name}")
        self._finish_job(self.mem.tick(cycle))

    @property
    def idle(self) -> bool:
        return self.mem.idle and not self.ni.received

    def next_event(self, cycle: int) -> Optional[int]:
        return cycle + 1 if not self.idle else None


# ---------------------------------------------------------------------------
# Processor IP
# ---------------------------------------------------------------------------


@dataclass
class Txn:
    kind: str                  # remote_read, remote_write, scanf, io_write, notify, wait
    effect: Optional[MemEffect] = None
    partner: int = -1
    since: int = 0


class ProcessorIp(_NocEndpoint):
    """R8 core, its local memory and the NoC adapter."""

    def __init__(self, core_id: int, ni: NetworkInterface, core_map: CoreMap,
                 partner: Optional[int] = None, events=None):
        super().__init__(core_id, ni, core_map, events)
        self.core = R8State()
        self.mem = MemoryIp()
        self.partner = partner
        self.txn: Optional[Txn] = None
        self.notify_pending: dict[int, bool] = {}
        self.activated = False
        self.ready_at = 0
        self.instructions = 0
        self._held: deque[ServiceMessage] = deque()
        serial = core_map.ids(CoreRole.SERIAL)
        memory = core_map.ids(CoreRole.MEMORY)
        self.serial_id = serial[0] if serial else None
        self.memory_id = memory[0] if memory else None

    # -- state predicates ------------------------------------------------------

    @property
    def running(self) -> bool:
        return self.activated and not self.core.halted

    @property
    def blocked(self) -> bool:
        """Waiting on something only another core or the host can provide."""
        return self.txn is not None and self.txn.kind in ("wait", "scanf", "remote_read")

    @property
    def idle(self) -> bool:
        busy = self.running and (self.txn is None or not self.blocked)
        return not busy and self.mem.idle and not self.ni.received and not self._held

    def next_event(self, cycle: int) -> Optional[int]:
        if self.ni.received or self._held or not self.mem.idle:
            return cycle + 1
        if self.running and self.txn is None:
            return max(self.ready_at, cycle + 1)
        return None

    # -- cycle -------------------------------------------------------------------

    def cycle(self, cycle: int) -> None:
        self._held.extend(self.inbox())
        while self._held:
            # an ACTIVATE waits for earlier writes into local memory to land
            if self._held[0].kind == ServiceKind.ACTIVATE and not self.mem.idle:
                break
            self._handle(self._held.popleft(), cycle)
        if self.running and self.txn is None and cycle >= self.ready_at:
            self._execute(cycle)
        self.core.stalled = self.txn is not None
        self.mem.busy_noc_r8 = self.txn is not None and self.txn.kind != "wait"
        self._finish_job(self.mem.tick(cycle))

    def _resume(self, cycle: int) -> None:
        self._emit("resume", core=self.core_id, txn=self.txn.kind)
        self.txn = None
        self.core.stalled = False
        self.ready_at = max(self.ready_at, cycle + 1)

    def _handle(self, msg: ServiceMessage, cycle: int) -> None:
        k = msg.kind
        if k == ServiceKind.ACTIVATE:
            self.activated = True
            self.core.pc = 0
            self.core.halted = False
            self.ready_at = cycle
            self._emit("activate", core=self.core_id)
        elif k == ServiceKind.NOTIFY:
            src = msg.source
            if self.txn is not None and self.txn.kind == "wait" and self.txn.partner == src:
                self._resume(cycle)
            elif self.notify_pending.get(src):
                self.diag(f"second NOTIFY from core {src} before it was consumed")
            else:
                self.notify_pending[src] = True
                self._emit("notify_latched", core=self.core_id, source=src)
        elif k in (ServiceKind.READ_MEM, ServiceKind.WRITE_MEM):
            self._serve_memory(self.mem, msg)
        elif k == ServiceKind.READ_RETURN:
            if self.txn is None or self.txn.kind != "remote_read":
                self.diag("READ_RETURN with no outstanding read")
                return
            complete_load(self.core, self.txn.effect, msg.data[0])
            self._resume(cycle)
        elif k == ServiceKind.SCANF_RETURN:
            if self.txn is None or self.txn.kind != "scanf":
                self.diag("SCANF_RETURN with no outstanding scanf")
                return
            complete_load(self.core, self.txn.effect, msg.word)
            self._resume(cycle)
        else:
            self.diag(f"processor cannot handle {k.name}")

    def _halt(self, why: str) -> None:
        self.core.halted = True
        self.diag(why)

    def _execute(self, cycle: int) -> None:
        try:
            _, eff, cost = step(self.core, self.mem)
        except R8DecodeError as e:
            self._halt(f"pc={self.core.pc:04X}: {e}")
            return
        self.instructions += 1
        self.ready_at = cycle + cost
        if self.core.halted:
            self._emit("halt", core=self.core_id, pc=self.core.pc)
            return
        if eff.kind == "none":
            return
        target, offset = decode_address(eff.address)
        load = eff.kind == "load"
        if target == AddressTarget.LOCAL:
            if load:
                complete_load(self.core, eff, self.mem[offset])
            else:
                self.mem[offset] = eff.value
            return
        if target in (AddressTarget.OTHER_PROCESSOR, AddressTarget.REMOTE_MEMORY):
            dest = self.partner if target == AddressTarget.OTHER_PROCESSOR else self.memory_id
            if dest is None or dest not in self.core_map:
                self._halt(f"no core behind {target.value} window (address {eff.address:04X})")
                return
            if load:
                self.send(sv.read_mem(self.core_id, offset, 1), dest)
                self._block(Txn("remote_read", eff, since=cycle))
            else:
                self._block(Txn("remote_write", eff, since=cycle))
                self.send(sv.write_mem(offset, [eff.value]), dest, self._injected)
            return
        if target == AddressTarget.IO:
            if self.serial_id is None:
                self._halt("I/O access without a serial IP")
                return
            if load:
                self.send(sv.scanf(self.core_id), self.serial_id)
                self._block(Txn("scanf", eff, since=cycle))
                self._emit("scanf", core=self.core_id)
            else:
                self._block(Txn("io_write", eff, since=cycle))
                self.send(sv.printf(self.core_id, eff.value), self.serial_id, self._injected)
                self._emit("printf", core=self.core_id, value=f"0x{eff.value:04X}")
            return
        if target in (AddressTarget.WAIT, AddressTarget.NOTIFY) and not load:
            peer = eff.value
            if peer not in self.core_map:
                self._halt(f"{target.value} names unknown core {peer}")
                return
            if target == AddressTarget.WAIT:
                if self.notify_pending.get(peer):
                    self.notify_pending[peer] = False
                    self._emit("wait_satisfied", core=self.core_id, partner=peer)
                else:
                    self._block(Txn("wait", eff, partner=peer, since=cycle))
                    self._emit("wait", core=self.core_id, partner=peer)
            else:
                self._block(Txn("notify", eff, partner=peer, since=cycle))
                self.send(sv.notify(self.core_id), peer, self._injected)
                self._emit("notify", core=self.core_id, target=peer)
            return
        self._halt(f"{eff.kind} at unmapped address {eff.address:04X}")

    def _block(self, txn: Txn) -> None:
        self.txn = txn
        self.core.stalled = True

    def _injected(self, rec: PacketRecord) -> None:
        # posted writes, printf and notify release the core once fully injected
        if self.txn is not None and self.txn.kind in ("remote_write", "io_write", "notify"):
            self._resume(self.ni.mesh.cycle)

    def load_image(self, origin: int, words) -> None:
        self.mem.load(origin, words)


# ---------------------------------------------------------------------------
# Serial IP
# ---------------------------------------------------------------------------


def host_frame_length(frame: list[int]) -> Optional[int]:
    """Total length of a host->system frame given its first bytes, or None if
    more bytes are needed to tell.  Raises ValueError on unknown opcodes."""
    op = frame[0]
    if op == OP_READ:
        return 5
    if op == OP_WRITE:
        return None if len(frame) < 3 else 5 + 2 * frame[2]
    if op == OP_ACTIVATE:
        return 2
    if op == OP_SCANF_RETURN:
        return 4
    raise ValueError(op)


class SerialIp(_NocEndpoint):
    """Bridge between the host byte stream and NoC packets."""

    def __init__(self, core_id: int, ni: NetworkInterface, core_map: CoreMap,
                 byte_interval: int = 1, events=None):
        super().__init__(core_id, ni, core_map, events)
        if byte_interval < 1:
            raise ValueError("byte interval must be at least one cycle")
        self.byte_interval = byte_interval
        self.rx_queue: deque[int] = deque()
        self.tx_queue: deque[int] = deque()
        self.synced = False
        self.frame: list[int] = []
        self.next_byte_at = 0
        self.outstanding_reads: list[list[int]] = []   # [core, address, words left]
        self.scanf_waiting: deque[int] = deque()

    @property
    def idle(self) -> bool:
        return not self.rx_queue and not self.ni.received

    def next_event(self, cycle: int) -> Optional[int]:
        if self.ni.received:
            return cycle + 1
        if self.rx_queue:
            return max(self.next_byte_at, cycle + 1)
        return None

    def cycle(self, cycle: int) -> None:
        for msg in self.inbox():
            self._from_noc(msg)
        if self.rx_queue and cycle >= self.next_byte_at:
            self.next_byte_at = cycle + self.byte_interval
            self._consume(self.rx_queue.popleft())

    def _to_host(self, frame: list[int]) -> None:
        self.tx_queue.extend(frame)
        self._emit("host_out", bytes=" ".join(f"{b:02X}" for b in frame))

    def _error(self, code: int, byte: int, why: str) -> None:
        self.diag(why)
        self._to_host([OP_ERROR, code, byte])

    def _consume(self, byte: int) -> None:
        if not self.synced:
            if byte == SYNC_BYTE:
                self.synced = True
                self._emit("sync", core=self.core_id)
            return
        if not self.frame:
            if byte == SYNC_BYTE:
                return
            try:
                host_frame_length([byte])
            except ValueError:
                self._error(ERR_UNKNOWN_OPCODE, byte, f"unknown host opcode 0x{byte:02X}")
                return
        self.frame.append(byte)
        n = host_frame_length(self.frame)
        if n is not None and len(self.frame) == n:
            frame, self.frame = self.frame, []
            self._command(frame)

    def _command(self, f: list[int]) -> None:
        op, core = f[0], f[1]
        if core not in self.core_map:
            self._error(ERR_UNKNOWN_CORE, core, f"command for unknown core {core}")
            return
        role = self.core_map.role(core)
        if op in (OP_READ, OP_WRITE):
            if role == CoreRole.SERIAL:
                self._error(ERR_BAD_TARGET, core, "serial IP has no memory")
                return
            count, addr = f[2], (f[3] << 8) | f[4]
            if count == 0:
                return
            if op == OP_READ:
                self.outstanding_reads.append([core, addr, count])
                self.send(sv.read_mem(self.core_id, addr, count), core)
            else:
                words = [(f[5 + 2 * i] << 8) | f[6 + 2 * i] for i in range(count)]
                for s in range(0, count, sv.MAX_WORDS_PER_PACKET):
                    self.send(sv.write_mem(addr + s, words[s:s + sv.MAX_WORDS_PER_PACKET]), core)
        elif op == OP_ACTIVATE:
            if role != CoreRole.PROCESSOR:
                self._error(ERR_BAD_TARGET, core, f"core {core} is not a processor")
                return
            self.send(sv.activate(), core)
        elif op == OP_SCANF_RETURN:
            if role != CoreRole.PROCESSOR:
                self._error(ERR_BAD_TARGET, core, f"core {core} is not a processor")
                return
            if core in self.scanf_waiting:
                self.scanf_waiting.remove(core)
            self.send(sv.scanf_return((f[2] << 8) | f[3]), core)

    def _from_noc(self, msg: ServiceMessage) -> None:
        k = msg.kind
        if k == ServiceKind.PRINTF:
            self._to_host([OP_PRINTF, msg.source, msg.word >> 8, msg.word & 0xFF])
        elif k == ServiceKind.SCANF:
            self.scanf_waiting.append(msg.source)
            self._to_host([OP_SCANF, msg.source])
        elif k == ServiceKind.READ_RETURN:
            core = self._match_read(msg.address, msg.count)
            frame = [OP_READ_RETURN, core, msg.count, msg.address >> 8, msg.address & 0xFF]
            for w in msg.data:
                frame += [w >> 8, w & 0xFF]
            self._to_host(frame)
        else:
            self.diag(f"serial IP cannot handle {k.name}")

    def _match_read(self, address: int, count: int) -> int:
        # READ_RETURN carries no source: attribute it to the oldest outstanding
        # host read whose remaining range starts at this address
        for i, entry in enumerate(self.outstanding_reads):
            core, addr, left = entry
            if addr == address and count <= left:
                if count == left:
                    self.outstanding_reads.pop(i)
                else:
                    entry[1] += count
                    entry[2] -= count
                return core
        self.diag(f"READ_RETURN at {address:04X} matches no outstanding read")
        return 0xFF
