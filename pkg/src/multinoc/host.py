"""Host side of the serial link: console commands, sessions, scripts and the
parallel edge-detection demo."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Callable, Optional

import numpy as np

from . import ips
from .ips import host_frame_length
from .r8.asm import assemble
from .r8.objfile import ObjectImage, load_object
from .system import System, SystemConfig, build_system

MAX_FRAME_WORDS = 255
DEFAULT_TIMEOUT = 200_000


class ParseError(ValueError):
    def __init__(self, message: str, position: int = 0):
        super().__init__(f"column {position + 1}: {message}")
        self.position = position


class SessionError(RuntimeError):
    pass


class SessionTimeout(SessionError):
    def __init__(self, what: str, waited: int):
        super().__init__(f"timed out after {waited} cycles waiting for {what}")
        self.waited = waited


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


class CommandKind(Enum):
    SYNC = "sync"
    READ = "read"
    WRITE = "write"
    ACTIVATE = "activate"
    SCANF_REPLY = "scanf"
    LOAD = "load"
    RUN = "run"
    QUIT = "quit"
    EXPECT = "expect"


@dataclass(frozen=True)
class ConsoleCommand:
    kind: CommandKind
    core: int = 0
    count: int = 0
    addr: int = 0
    words: tuple[int, ...] = ()
    word: int = 0
    path: str = ""
    cycles: int = 0
    expect: tuple[str, ...] = ()

    def frames(self) -> list[list[int]]:
        """Host byte frames for this command (empty for host-only commands)."""
        k = self.kind
        if k == CommandKind.SYNC:
            return [[ips.SYNC_BYTE]]
        if k == CommandKind.READ:
            return [[ips.OP_READ, self.core, self.count, self.addr >> 8, self.addr & 0xFF]]
        if k == CommandKind.WRITE:
            out = []
            for s in range(0, len(self.words), MAX_FRAME_WORDS):
                chunk = self.words[s:s + MAX_FRAME_WORDS]
                a = self.addr + s
                f = [ips.OP_WRITE, self.core, len(chunk), a >> 8, a & 0xFF]
                for w in chunk:
                    f += [w >> 8, w & 0xFF]
                out.append(f)
            return out
        if k == CommandKind.ACTIVATE:
            return [[ips.OP_ACTIVATE, self.core]]
        if k == CommandKind.SCANF_REPLY:
            return [[ips.OP_SCANF_RETURN, self.core, self.word >> 8, self.word & 0xFF]]
        return []

    def __str__(self) -> str:
        k = self.kind
        if k == CommandKind.READ:
            return f"read {self.core} {self.count} 0x{self.addr:04X}"
        if k == CommandKind.WRITE:
            return f"write {self.core} 0x{self.addr:04X} " + " ".join(f"0x{w:04X}" for w in self.words)
        if k in (CommandKind.ACTIVATE,):
            return f"activate {self.core}"
        if k == CommandKind.SCANF_REPLY:
            return f"scanf {self.core} 0x{self.word:04X}"
        if k == CommandKind.LOAD:
            return f"load {self.core} {self.path}"
        if k == CommandKind.RUN:
            return f"run {self.cycles}"
        if k == CommandKind.EXPECT:
            return "expect " + " ".join(self.expect)
        return k.value


_HEX_BYTE = re.compile(r"[0-9A-Fa-f]{2}")


def _tokens(text: str) -> list[tuple[str, int]]:
    return [(m.group(), m.start()) for m in re.finditer(r"\S+", text)]


def _int(tok: tuple[str, int], lo: int, hi: int, what: str) -> int:
    t, pos = tok
    try:
        v = int(t, 0)
    except ValueError:
        raise ParseError(f"{what}: {t!r} is not a number", pos) from None
    if not lo <= v <= hi:
        raise ParseError(f"{what} {v} outside {lo}..{hi}", pos)
    return v


def _parse_raw(toks: list[tuple[str, int]]) -> ConsoleCommand:
    b = [int(t, 16) for t, _ in toks]
    if b == [ips.SYNC_BYTE]:
        return ConsoleCommand(CommandKind.SYNC)
    try:
        n = host_frame_length(b)
    except ValueError:
        raise ParseError(f"opcode {toks[0][0]} is not a host command "
                         "(00 read, 01 write, 02 activate, 03 scanf return)", toks[0][1]) from None
    if n is None or len(b) < n:
        want = n if n is not None else 5
        raise ParseError(f"truncated frame: opcode {b[0]:02X} needs {want} bytes, got {len(b)}",
                         toks[-1][1])
    if len(b) > n:
        raise ParseError(f"frame has {len(b) - n} trailing byte(s)", toks[n][1])
    op, core = b[0], b[1]
    if op == ips.OP_READ:
        return ConsoleCommand(CommandKind.READ, core, b[2], (b[3] << 8) | b[4])
    if op == ips.OP_WRITE:
        words = tuple((b[5 + 2 * i] << 8) | b[6 + 2 * i] for i in range(b[2]))
        return ConsoleCommand(CommandKind.WRITE, core, len(words), (b[3] << 8) | b[4], words)
    if op == ips.OP_ACTIVATE:
        return ConsoleCommand(CommandKind.ACTIVATE, core)
    return ConsoleCommand(CommandKind.SCANF_REPLY, core, word=(b[2] << 8) | b[3])


def parse_console_line(text: str) -> Optional[ConsoleCommand]:
    """Parse one console line.  Blank and ``#`` comment lines give None."""
    text = text.split("#", 1)[0].rstrip()
    toks = _tokens(text)
    if not toks:
        return None
    if all(_HEX_BYTE.fullmatch(t) for t, _ in toks):
        return _parse_raw(toks)
    head, pos = toks[0]
    verb = head.lower()
    args = toks[1:]

    def need(n: int, usage: str) -> None:
        if len(args) != n:
            where = args[n][1] if len(args) > n else len(text)
            raise ParseError(f"usage: {usage}", where)

    if verb == "sync":
        need(0, "sync")
        return ConsoleCommand(CommandKind.SYNC)
    if verb == "read":
        need(3, "read <core> <count> <addr>")
        return ConsoleCommand(CommandKind.READ, _int(args[0], 0, 255, "core"),
                              _int(args[1], 1, 255, "count"), _int(args[2], 0, 0xFFFF, "address"))
    if verb == "write":
        if len(args) < 3:
            raise ParseError("usage: write <core> <addr> <word> ...", len(text))
        words = tuple(_int(a, 0, 0xFFFF, "word") for a in args[2:])
        return ConsoleCommand(CommandKind.WRITE, _int(args[0], 0, 255, "core"), len(words),
                              _int(args[1], 0, 0xFFFF, "address"), words)
    if verb == "activate":
        need(1, "activate <core>")
        return ConsoleCommand(CommandKind.ACTIVATE, _int(args[0], 0, 255, "core"))
    if verb in ("scanf", "scanf_reply"):
        need(2, "scanf <core> <word>")
        return ConsoleCommand(CommandKind.SCANF_REPLY, _int(args[0], 0, 255, "core"),
                              word=_int(args[1], 0, 0xFFFF, "word"))
    if verb == "load":
        need(2, "load <core> <object-or-asm-path>")
        return ConsoleCommand(CommandKind.LOAD, _int(args[0], 0, 255, "core"), path=args[1][0])
    if verb == "run":
        need(1, "run <cycles>")
        return ConsoleCommand(CommandKind.RUN, cycles=_int(args[0], 0, 10**9, "cycles"))
    if verb in ("quit", "exit"):
        need(0, "quit")
        return ConsoleCommand(CommandKind.QUIT)
    if verb == "expect":
        if not args:
            raise ParseError("usage: expect <event> ...", len(text))
        kind = args[0][0].lower()
        if kind not in ("printf", "scanf", "read", "error", "warning"):
            raise ParseError(f"unknown event kind {args[0][0]!r}", args[0][1])
        for t in args[1:]:
            if kind != "warning":
                _int(t, 0, 0xFFFF, "value")
        return ConsoleCommand(CommandKind.EXPECT, expect=tuple(t for t, _ in args))
    raise ParseError(f"unknown command {head!r}", pos)


# ---------------------------------------------------------------------------
# Monitor events
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MonitorEvent:
    """Something the host displays: a frame from the platform or a warning."""

    kind: str                       # printf, scanf, read, error, warning
    core: int = 0
    word: int = 0
    addr: int = 0
    words: tuple[int, ...] = ()
    text: str = ""

    def __str__(self) -> str:
        if self.kind == "printf":
            return f"printf {self.core} 0x{self.word:04X}"
        if self.kind == "scanf":
            return f"scanf {self.core}"
        if self.kind == "read":
            return f"read {self.core} 0x{self.addr:04X} " + " ".join(f"0x{w:04X}" for w in self.words)
        if self.kind == "error":
            return f"error 0x{self.word:02X} 0x{self.addr:02X}"
        return f"warning {self.text}"

    def matches(self, spec: tuple[str, ...]) -> bool:
        """Compare with an ``expect`` argument list, numbers compared by value."""
        mine = str(self).split()
        if len(mine) < len(spec) or mine[0] != spec[0].lower():
            return False
        if self.kind == "warning":
            return " ".join(spec[1:]) in self.text
        if len(mine) != len(spec):
            return False
        return all(int(a, 0) == int(b, 0) for a, b in zip(mine[1:], spec[1:]))


def decode_host_frames(buf: bytearray) -> list[MonitorEvent]:
    """Consume complete system->host frames from ``buf``."""
    out = []
    while buf:
        op = buf[0]
        if op == ips.OP_PRINTF:
            n = 4
        elif op == ips.OP_SCANF:
            n = 2
        elif op == ips.OP_READ_RETURN:
            n = 5 + 2 * buf[2] if len(buf) >= 3 else None
        elif op == ips.OP_ERROR:
            n = 3
        else:
            out.append(MonitorEvent("warning", text=f"unexpected byte 0x{op:02X}"))
            del buf[0]
            continue
        if n is None or len(buf) < n:
            break
        f = bytes(buf[:n])
        del buf[:n]
        if op == ips.OP_PRINTF:
            out.append(MonitorEvent("printf", f[1], (f[2] << 8) | f[3]))
        elif op == ips.OP_SCANF:
            out.append(MonitorEvent("scanf", f[1]))
        elif op == ips.OP_READ_RETURN:
            words = tuple((f[5 + 2 * i] << 8) | f[6 + 2 * i] for i in range(f[2]))
            out.append(MonitorEvent("read", f[1], addr=(f[3] << 8) | f[4], words=words))
        else:
            out.append(MonitorEvent("error", f[1], word=f[1], addr=f[2]))
    return out


# ---------------------------------------------------------------------------
# Session
# ---------------------------------------------------------------------------


def load_image_file(path: str) -> ObjectImage:
    if path.endswith((".asm", ".s")):
        with open(path) as f:
            return assemble(f.read())
    return load_object(path)


class Session:
    """A host connection to a simulated platform's serial IP."""

    def __init__(self, system: Optional[System] = None, timeout: int = DEFAULT_TIMEOUT,
                 base_dir: str = "."):
        self.system = system or build_system(SystemConfig())
        if self.system.serial is None:
            raise SessionError("platform has no serial IP")
        self.timeout = timeout
        self.base_dir = base_dir
        self.synced = False
        self.pending_scanf: dict[int, int] = {}
        self.events: list[MonitorEvent] = []
        self.unclaimed: list[MonitorEvent] = []
        self.transcript: list[str] = []
        self._rx = bytearray()

    # -- plumbing ------------------------------------------------------------------

    def _pump(self) -> list[MonitorEvent]:
        self._rx.extend(self.system.host_receive())
        new = decode_host_frames(self._rx)
        for ev in new:
            self._note(ev)
        return new

    def _note(self, ev: MonitorEvent) -> None:
        if ev.kind == "scanf":
            self.pending_scanf[ev.core] = self.pending_scanf.get(ev.core, 0) + 1
        self.events.append(ev)
        self.unclaimed.append(ev)
        self.transcript.append(f"< {ev}")

    def _settled(self, s: System) -> bool:
        if s.serial.rx_queue or s.mesh.busy():
            return False
        return all(getattr(ip, "mem").idle for ip in s._ips if hasattr(ip, "mem"))

    def wait_until(self, pred: Callable[[], bool], what: str,
                   timeout: Optional[int] = None) -> None:
        """Advance the platform until ``pred`` holds, collecting host frames."""
        start = self.system.cycle
        limit = self.timeout if timeout is None else timeout

        def until(s: System) -> bool:
            self._pump()
            return pred()

        self.system.run(max_cycles=limit, until=until)
        self._pump()
        if not pred():
            raise SessionTimeout(what, self.system.cycle - start)

    def _send(self, frames: list[list[int]]) -> None:
        for f in frames:
            self.system.host_send(f)

    def settle(self) -> None:
        self.wait_until(lambda: self._settled(self.system), "the serial link to drain")

    # -- commands ----------------------------------------------------------------

    def execute(self, cmd: ConsoleCommand) -> list[MonitorEvent]:
        """Run one command; returns the monitor events it produced."""
        before = len(self.events)
        k = cmd.kind
        if k not in (CommandKind.SYNC, CommandKind.RUN, CommandKind.QUIT,
                     CommandKind.EXPECT) and not self.synced:
            raise SessionError("not synchronized: send sync (55) first")
        if k == CommandKind.SYNC:
            self._send(cmd.frames())
            self.settle()
            self.synced = True
        elif k == CommandKind.READ:
            self._send(cmd.frames())
            self._await_read(cmd)
        elif k in (CommandKind.WRITE, CommandKind.ACTIVATE):
            self._send(cmd.frames())
            self.settle()
        elif k == CommandKind.SCANF_REPLY:
            if self.pending_scanf.get(cmd.core, 0) == 0:
                self._note(MonitorEvent("warning", cmd.core,
                                        text=f"unsolicited scanf reply for core {cmd.core}"))
            else:
                self.pending_scanf[cmd.core] -= 1
            self._send(cmd.frames())
            self.settle()
        elif k == CommandKind.LOAD:
            path = cmd.path if os.path.isabs(cmd.path) else os.path.join(self.base_dir, cmd.path)
            img = load_image_file(path)
            w = ConsoleCommand(CommandKind.WRITE, cmd.core, len(img.words), img.origin,
                               tuple(img.words))
            self._send(w.frames())
            self.settle()
        elif k == CommandKind.RUN:
            self.system.run(max_cycles=cmd.cycles, stop_on_quiescence=False)
            self._pump()
        return self.events[before:]

    def _await_read(self, cmd: ConsoleCommand) -> None:
        mark = len(self.events)

        def done() -> bool:
            got = sum(len(ev.words) for ev in self.events[mark:]
                      if ev.kind == "read" and ev.core == cmd.core)
            return got >= cmd.count

        self.wait_until(done, f"read_return from core {cmd.core}")

    def expect(self, spec: tuple[str, ...], timeout: Optional[int] = None) -> tuple[bool, str]:
        """Claim the first unclaimed event matching ``spec``, running the
        platform until one arrives.  Returns (ok, message)."""
        def find() -> Optional[int]:
            for i, ev in enumerate(self.unclaimed):
                if ev.matches(spec):
                    return i
            return None

        try:
            self.wait_until(lambda: find() is not None, "expect " + " ".join(spec), timeout)
        except SessionTimeout:
            seen = ", ".join(str(e) for e in self.unclaimed) or "nothing"
            return False, f"expected {' '.join(spec)}, actual: {seen}"
        i = find()
        del self.unclaimed[i]
        return True, "ok"

    def read_words(self, core: int, addr: int, count: int) -> list[int]:
        """Read ``count`` words from a core's memory, in frames of up to 255."""
        out: list[int] = []
        for s in range(0, count, MAX_FRAME_WORDS):
            n = min(MAX_FRAME_WORDS, count - s)
            mark = len(self.events)
            self.execute(ConsoleCommand(CommandKind.READ, core, n, addr + s))
            chunk = {}
            for ev in self.events[mark:]:
                if ev.kind == "read" and ev.core == core:
                    for j, w in enumerate(ev.words):
                        chunk[ev.addr + j] = w
                    self.unclaimed.remove(ev)
            out += [chunk[addr + s + j] for j in range(n)]
        return out


# ---------------------------------------------------------------------------
# Scripts
# ---------------------------------------------------------------------------


@dataclass
class Transcript:
    lines: list[str] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def exit_code(self) -> int:
        return 0 if self.ok else 1

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)


def run_script_text(text: str, session: Session) -> Transcript:
    tr = Transcript()
    session.transcript = tr.lines
    for lineno, raw in enumerate(text.splitlines(), 1):
        try:
            cmd = parse_console_line(raw)
        except ParseError as e:
            tr.lines.append(f"! line {lineno}: {e}")
            tr.failures.append(f"line {lineno}: {e}")
            break
        if cmd is None:
            continue
        tr.lines.append(f"> {cmd}")
        if cmd.kind == CommandKind.QUIT:
            break
        if cmd.kind == CommandKind.EXPECT:
            ok, msg = session.expect(cmd.expect)
            if ok:
                tr.lines.append("= ok")
            else:
                tr.lines.append(f"! {msg}")
                tr.failures.append(f"line {lineno}: {msg}")
            continue
        try:
            session.execute(cmd)
        except (SessionError, OSError, ValueError) as e:
            tr.lines.append(f"! {e}")
            tr.failures.append(f"line {lineno}: {e}")
            break
    return tr


def run_script(path: str, session: Optional[Session] = None) -> Transcript:
    """Execute a console script; relative ``load`` paths resolve against the
    script's directory."""
    with open(path) as f:
        text = f.read()
    if session is None:
        session = Session(base_dir=os.path.dirname(os.path.abspath(path)))
    else:
        session.base_dir = os.path.dirname(os.path.abspath(path))
    return run_script_text(text, session)


# ---------------------------------------------------------------------------
# Edge detection
# ---------------------------------------------------------------------------

PREV_BASE = 0x200
CUR_BASE = 0x240
NEXT_BASE = 0x280
OUT_BASE = 0x2C0
MAX_LINE = CUR_BASE - PREV_BASE - 2
MAX_PIXEL = 0x3FFF


class DimensionError(ValueError):
    pass


def program_path(name: str) -> str:
    return str(resources.files("multinoc") / "programs" / name)


def bundled_images() -> dict[str, np.ndarray]:
    """The test images shipped with the package, by file stem."""
    d = resources.files("multinoc") / "programs" / "images"
    return {f.name.rsplit(".", 1)[0]: parse_matrix(f.read_text())
            for f in sorted(d.iterdir(), key=lambda f: f.name) if f.name.endswith(".txt")}


def edge_reference(image) -> np.ndarray:
    """|gx| + |gy| with central differences and replicated borders."""
    img = np.asarray(image, dtype=np.int64)
    if img.ndim != 2 or img.size == 0:
        raise DimensionError("image must be a non-empty 2-D matrix")
    p = np.pad(img, 1, mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    return np.abs(gx) + np.abs(gy)


def edge_detect_demo(image, session: Optional[Session] = None,
                     processors: tuple[int, int] = (1, 2),
                     line_timeout: int = 100_000) -> np.ndarray:
    """Compute the edge image on the platform, one line per processor turn.

    Both processors run the gradient worker.  For each line the host writes
    the three rows it needs into the processor's memory and answers its scanf
    with the line width; the processor prints the width back when the line is
    done and the host reads the result row.
    """
    img = np.asarray(image, dtype=np.int64)
    if img.ndim != 2 or img.size == 0:
        raise DimensionError("image must be a non-empty 2-D matrix")
    h, w = img.shape
    if w > MAX_LINE:
        raise DimensionError(f"line length {w} exceeds {MAX_LINE}")
    if img.min() < 0 or img.max() > MAX_PIXEL:
        raise DimensionError(f"pixels must lie in 0..{MAX_PIXEL}")
    s = session or Session()
    if not s.synced:
        s.execute(ConsoleCommand(CommandKind.SYNC))
    worker = program_path("gradient.asm")
    used = processors[:1] if h == 1 else processors
    for core in used:
        s.execute(ConsoleCommand(CommandKind.LOAD, core, path=worker))
        s.execute(ConsoleCommand(CommandKind.ACTIVATE, core))
    out = np.zeros((h, w), dtype=np.int64)
    pad = np.pad(img, 1, mode="edge")
    for y0 in range(0, h, len(used)):
        batch = [(y, used[k]) for k, y in enumerate(range(y0, min(h, y0 + len(used))))]
        for y, core in batch:
            ok, msg = s.expect(("scanf", str(core)), line_timeout)
            if not ok:
                raise SessionTimeout(f"scanf from core {core}", line_timeout)
            rows = [(PREV_BASE, pad[y, 1:-1]), (CUR_BASE, pad[y + 1]), (NEXT_BASE, pad[y + 2, 1:-1])]
            for base, row in rows:
                words = tuple(int(v) for v in row)
                s.execute(ConsoleCommand(CommandKind.WRITE, core, len(words), base, words))
            s.execute(ConsoleCommand(CommandKind.SCANF_REPLY, core, word=w))
        for y, core in batch:
            ok, msg = s.expect(("printf", str(core), str(w)), line_timeout)
            if not ok:
                raise SessionTimeout(f"line {y} from core {core}", line_timeout)
            out[y] = s.read_words(core, OUT_BASE, w)
    return out


def parse_matrix(text: str) -> np.ndarray:
    rows = [[int(v) for v in line.split()] for line in text.splitlines() if line.strip()]
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise DimensionError("matrix rows must be non-empty and equally long")
    return np.array(rows, dtype=np.int64)


def format_matrix(m) -> str:
    return "".join(" ".join(str(int(v)) for v in row) + "\n" for row in np.asarray(m))
