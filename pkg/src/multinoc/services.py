"""Encoding of the nine NoC services into flit packets.

Payload layouts (after the header and size flits); 16-bit words travel high
byte first::

    READ_MEM      kind source addr_hi addr_lo count
    READ_RETURN   kind addr_hi addr_lo count (hi lo)*count
    WRITE_MEM     kind addr_hi addr_lo count (hi lo)*count
    ACTIVATE      kind
    PRINTF        kind source data_hi data_lo
    SCANF         kind source
    SCANF_RETURN  kind data_hi data_lo
    NOTIFY        kind source

WAIT (0x09) is reserved; it is executed locally by the processor IP and has
no wire form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable

from .noc import NetAddress

MAX_PAYLOAD = 255
# largest word count whose READ_RETURN / WRITE_MEM payload fits one packet
MAX_WORDS_PER_PACKET = (MAX_PAYLOAD - 4) // 2


class ServiceError(Exception):
    pass


class OversizeError(ServiceError):
    pass


class NotWireEncodableError(ServiceError):
    pass


class MalformedPacketError(ServiceError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (flit offset {offset})")
        self.offset = offset


class UnknownCoreError(ServiceError, KeyError):
    pass


class ServiceKind(IntEnum):
    READ_MEM = 0x01
    READ_RETURN = 0x02
    WRITE_MEM = 0x03
    ACTIVATE = 0x04
    PRINTF = 0x05
    SCANF = 0x06
    SCANF_RETURN = 0x07
    NOTIFY = 0x08
    WAIT = 0x09


@dataclass(frozen=True)
class ServiceMessage:
    kind: ServiceKind
    source: int = 0
    address: int = 0
    count: int = 0
    data: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "data", tuple(self.data))
        k = self.kind
        if k in (ServiceKind.READ_MEM, ServiceKind.READ_RETURN, ServiceKind.WRITE_MEM):
            if not 1 <= self.count <= 0xFF:
                raise ServiceError("memory services need 1 <= count <= 255")
            if not 0 <= self.address <= 0xFFFF:
                raise ServiceError("address must be 16-bit")
        if k in (ServiceKind.READ_RETURN, ServiceKind.WRITE_MEM) and len(self.data) != self.count:
            raise ServiceError("data length must equal count")
        if k in (ServiceKind.PRINTF, ServiceKind.SCANF_RETURN) and len(self.data) != 1:
            raise ServiceError(f"{k.name} carries exactly one word")
        if any(not 0 <= w <= 0xFFFF for w in self.data):
            raise ServiceError("data words must be 16-bit")
        if not 0 <= self.source <= 0xFF:
            raise ServiceError("source core id must fit one flit")

    @property
    def word(self) -> int:
        return self.data[0]


def read_mem(source: int, address: int, count: int) -> ServiceMessage:
    return ServiceMessage(ServiceKind.READ_MEM, source=source, address=address, count=count)


def read_return(address: int, words: Iterable[int]) -> ServiceMessage:
    words = tuple(words)
    return ServiceMessage(ServiceKind.READ_RETURN, address=address, count=len(words), data=words)


def write_mem(address: int, words: Iterable[int]) -> ServiceMessage:
    words = tuple(words)
    return ServiceMessage(ServiceKind.WRITE_MEM, address=address, count=len(words), data=words)


def activate() -> ServiceMessage:
    return ServiceMessage(ServiceKind.ACTIVATE)


def printf(source: int, value: int) -> ServiceMessage:
    return ServiceMessage(ServiceKind.PRINTF, source=source, data=(value,))


def scanf(source: int) -> ServiceMessage:
    return ServiceMessage(ServiceKind.SCANF, source=source)


def scanf_return(value: int) -> ServiceMessage:
    return ServiceMessage(ServiceKind.SCANF_RETURN, data=(value,))


def notify(source: int) -> ServiceMessage:
    return ServiceMessage(ServiceKind.NOTIFY, source=source)


@dataclass(frozen=True)
class Packet:
    target: NetAddress
    payload: tuple[int, ...]

    @property
    def flits(self) -> list[int]:
        return [self.target.pack(), len(self.payload), *self.payload]

    @classmethod
    def from_flits(cls, flits: list[int]) -> "Packet":
        if len(flits) < 2:
            raise MalformedPacketError("packet shorter than its header", len(flits))
        if flits[1] != len(flits) - 2:
            raise MalformedPacketError("size flit disagrees with packet length", 1)
        return cls(NetAddress.unpack(flits[0]), tuple(flits[2:]))


def _words(data) -> list[int]:
    out = []
    for w in data:
        out += [(w >> 8) & 0xFF, w & 0xFF]
    return out


def encode_payload(msg: ServiceMessage) -> list[int]:
    k = msg.kind
    if k == ServiceKind.WAIT:
        raise NotWireEncodableError("WAIT is a local command and has no packet form")
    if k == ServiceKind.READ_MEM:
        body = [msg.source, msg.address >> 8, msg.address & 0xFF, msg.count]
    elif k in (ServiceKind.READ_RETURN, ServiceKind.WRITE_MEM):
        body = [msg.address >> 8, msg.address & 0xFF, msg.count, *_words(msg.data)]
    elif k == ServiceKind.ACTIVATE:
        body = []
    elif k == ServiceKind.PRINTF:
        body = [msg.source, *_words(msg.data)]
    elif k in (ServiceKind.SCANF, ServiceKind.NOTIFY):
        body = [msg.source]
    else:  # SCANF_RETURN
        body = _words(msg.data)
    payload = [int(k), *body]
    if len(payload) > MAX_PAYLOAD:
        raise OversizeError(f"{k.name} payload of {len(payload)} flits exceeds {MAX_PAYLOAD}")
    return payload


def encode_packet(msg: ServiceMessage, target: NetAddress) -> Packet:
    return Packet(target, tuple(encode_payload(msg)))


def decode_payload(payload) -> ServiceMessage:
    p = list(payload)
    if not p:
        raise MalformedPacketError("empty payload", 2)

    def need(n):
        if len(p) < n:
            raise MalformedPacketError("truncated payload", 2 + len(p))

    def exact(n):
        need(n)
        if len(p) != n:
            raise MalformedPacketError("trailing flits", 2 + n)

    try:
        k = ServiceKind(p[0])
    except ValueError:
        raise MalformedPacketError(f"unknown service code 0x{p[0]:02X}", 2) from None
    if k == ServiceKind.WAIT:
        raise MalformedPacketError("WAIT has no wire form", 2)
    if k == ServiceKind.READ_MEM:
        exact(5)
        if p[4] == 0:
            raise MalformedPacketError("zero word count", 6)
        return read_mem(p[1], (p[2] << 8) | p[3], p[4])
    if k in (ServiceKind.READ_RETURN, ServiceKind.WRITE_MEM):
        need(4)
        count = p[3]
        if count == 0:
            raise MalformedPacketError("zero word count", 5)
        exact(4 + 2 * count)
        words = [(p[4 + 2 * i] << 8) | p[5 + 2 * i] for i in range(count)]
        return ServiceMessage(k, address=(p[1] << 8) | p[2], count=count, data=tuple(words))
    if k == ServiceKind.ACTIVATE:
        exact(1)
        return activate()
    if k == ServiceKind.PRINTF:
        exact(4)
        return printf(p[1], (p[2] << 8) | p[3])
    if k == ServiceKind.SCANF:
        exact(2)
        return scanf(p[1])
    if k == ServiceKind.SCANF_RETURN:
        exact(3)
        return scanf_return((p[1] << 8) | p[2])
    exact(2)
    return notify(p[1])


def decode_packet(packet: Packet) -> ServiceMessage:
    return decode_payload(packet.payload)


class CoreRole(str, Enum):
    SERIAL = "serial"
    PROCESSOR = "processor"
    MEMORY = "memory"


@dataclass
class CoreMap:
    """Logical core ids and where they sit in the mesh."""

    entries: dict[int, tuple[NetAddress, CoreRole]] = field(default_factory=dict)

    def __post_init__(self):
        seen = {}
        for cid, (addr, role) in self.entries.items():
            if not 0 <= cid <= 0xFF:
                raise ServiceError(f"core id {cid} does not fit one flit")
            if addr in seen:
                raise ServiceError(f"cores {seen[addr]} and {cid} share address {addr}")
            seen[addr] = cid
            self.entries[cid] = (addr, CoreRole(role))

    @classmethod
    def default(cls) -> "CoreMap":
        return cls({
            0: (NetAddress(0, 0), CoreRole.SERIAL),
            1: (NetAddress(1, 0), CoreRole.PROCESSOR),
            2: (NetAddress(0, 1), CoreRole.PROCESSOR),
            3: (NetAddress(1, 1), CoreRole.MEMORY),
        })

    def resolve(self, core_id: int) -> NetAddress:
        try:
            return self.entries[core_id][0]
        except KeyError:
            raise UnknownCoreError(f"unknown core id {core_id}") from None

    def role(self, core_id: int) -> CoreRole:
        if core_id not in self.entries:
            raise UnknownCoreError(f"unknown core id {core_id}")
        return self.entries[core_id][1]

    def core_at(self, address: NetAddress) -> int:
        for cid, (addr, _) in self.entries.items():
            if addr == address:
                return cid
        raise UnknownCoreError(f"no core at {address}")

    def ids(self, role: CoreRole = None) -> list[int]:
        return sorted(c for c, (_, r) in self.entries.items() if role is None or r == role)

    def __contains__(self, core_id: int) -> bool:
        return core_id in self.entries


def resolve_core(core_id: int, core_map: CoreMap) -> NetAddress:
    return core_map.resolve(core_id)
