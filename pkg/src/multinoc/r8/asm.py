"""Two-pass R8 assembler.

Grammar, one statement per line::

    [label:] [MNEMONIC operand, ...] [; comment]
    [label:] .org  <value>
    [label:] .word <value>[, <value> ...]
             .equ  NAME, <value>

Registers are ``R0``..``R15``.  Values are decimal, ``0x`` hex, ``h``-suffixed
hex (``FFFEh``), ``'c'`` characters, labels/constants, or ``lo(x)``/``hi(x)``.
Immediates may carry a leading ``#``.  Displacement operands given as labels
are made relative to the address after the jump.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .isa import OPCODES, OPERAND_COUNT, Instruction, encode
from .objfile import LOCAL_WORDS, ObjectImage


class AssemblyError(Exception):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


_LABEL = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*:")
_REG = re.compile(r"^[Rr](\d+)$")
_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass
class _Stmt:
    line: int
    addr: int
    op: str
    args: list[str]
    text: str


@dataclass
class Listing:
    rows: list[tuple[int, int, str]] = field(default_factory=list)

    def __str__(self) -> str:
        return "\n".join(f"{a:04X}  {w:04X}  {src}" for a, w, src in self.rows)


def _split_args(rest: str) -> list[str]:
    rest = rest.strip()
    if not rest:
        return []
    return [a.strip() for a in rest.split(",")]


def _strip_comment(line: str) -> str:
    # ';' inside a character literal is not a comment
    out, quote = [], False
    for ch in line:
        if ch == "'":
            quote = not quote
        elif ch == ";" and not quote:
            break
        out.append(ch)
    return "".join(out)


class _Assembler:
    def __init__(self, source: str):
        self.source = source
        self.symbols: dict[str, int] = {}
        self.stmts: list[_Stmt] = []

    def value(self, text: str, line: int) -> int:
        t = text.strip()
        if t.startswith("#"):
            t = t[1:].strip()
        m = re.fullmatch(r"(lo|hi)\((.+)\)", t, re.IGNORECASE)
        if m:
            v = self.value(m.group(2), line) & 0xFFFF
            return v & 0xFF if m.group(1).lower() == "lo" else v >> 8
        neg = t.startswith("-")
        if neg:
            t = t[1:].strip()
        try:
            if re.fullmatch(r"'.'", t):
                v = ord(t[1])
            elif t.lower().startswith("0x"):
                v = int(t[2:], 16)
            elif re.fullmatch(r"[0-9][0-9A-Fa-f]*[hH]", t):
                v = int(t[:-1], 16)
            elif re.fullmatch(r"\d+", t):
                v = int(t)
            elif _NAME.fullmatch(t):
                if t not in self.symbols:
                    raise AssemblyError(f"undefined symbol {t!r}", line)
                v = self.symbols[t]
            else:
                raise AssemblyError(f"bad value {text!r}", line)
        except ValueError:
            raise AssemblyError(f"bad value {text!r}", line) from None
        return -v if neg else v

    def reg(self, text: str, line: int) -> int:
        m = _REG.fullmatch(text.strip())
        if not m or int(m.group(1)) > 15:
            raise AssemblyError(f"expected register R0..R15, got {text!r}", line)
        return int(m.group(1))

    def first_pass(self) -> None:
        addr = 0
        origin = None
        for lineno, raw in enumerate(self.source.splitlines(), 1):
            line = _strip_comment(raw).strip()
            while True:
                m = _LABEL.match(line)
                if not m:
                    break
                name = m.group(1)
                if name in self.symbols:
                    raise AssemblyError(f"duplicate label {name!r}", lineno)
                self.symbols[name] = addr
                line = line[m.end():].strip()
            if not line:
                continue
            parts = line.split(None, 1)
            op = parts[0].upper()
            args = _split_args(parts[1] if len(parts) > 1 else "")
            if op == ".EQU":
                if len(args) != 2 or not _NAME.fullmatch(args[0]):
                    raise AssemblyError(".equ needs NAME, value", lineno)
                if args[0] in self.symbols:
                    raise AssemblyError(f"duplicate label {args[0]!r}", lineno)
                self.symbols[args[0]] = self.value(args[1], lineno)
                continue
            if op == ".ORG":
                if len(args) != 1:
                    raise AssemblyError(".org needs one value", lineno)
                new = self.value(args[0], lineno)
                if origin is not None and new < addr:
                    raise AssemblyError(".org moves backwards", lineno)
                addr = new
                if origin is None:
                    origin = new
                continue
            if origin is None:
                origin = addr
            if op == ".WORD":
                if not args:
                    raise AssemblyError(".word needs at least one value", lineno)
                self.stmts.append(_Stmt(lineno, addr, op, args, raw.strip()))
                addr += len(args)
            elif op in OPCODES:
                self.stmts.append(_Stmt(lineno, addr, op, args, raw.strip()))
                addr += 1
            else:
                raise AssemblyError(f"unknown mnemonic {parts[0]!r}", lineno)
            if addr > 0x10000:
                raise AssemblyError("program exceeds the address space", lineno)
        self.origin = origin if origin is not None else 0
        self.end = addr

    def instruction(self, st: _Stmt) -> Instruction:
        spec = OPCODES[st.op]
        n = OPERAND_COUNT[spec.fmt]
        if len(st.args) != n:
            raise AssemblyError(f"{st.op} expects {n} operand(s), got {len(st.args)}", st.line)
        a = st.args
        if spec.fmt in ("rrr", "rr", "r"):
            ops = tuple(self.reg(x, st.line) for x in a)
        elif spec.fmt == "ri":
            imm = self.value(a[1], st.line)
            if not -128 <= imm <= 255:
                raise AssemblyError(f"immediate {imm} out of range", st.line)
            ops = (self.reg(a[0], st.line), imm & 0xFF)
        elif spec.fmt == "d":
            t = a[0].strip()
            target_is_label = _NAME.fullmatch(t) is not None and not _REG.fullmatch(t)
            v = self.value(t, st.line)
            disp = v - (st.addr + 1) if target_is_label else v
            if not -512 <= disp <= 511:
                raise AssemblyError(f"displacement {disp} out of range", st.line)
            ops = (disp,)
        else:
            ops = ()
        return Instruction(st.op, ops)

    def second_pass(self) -> tuple[ObjectImage, Listing]:
        words = [0] * (self.end - self.origin)
        listing = Listing()
        for st in self.stmts:
            off = st.addr - self.origin
            if st.op == ".WORD":
                for i, arg in enumerate(st.args):
                    v = self.value(arg, st.line)
                    if not -0x8000 <= v <= 0xFFFF:
                        raise AssemblyError(f"word {v} out of range", st.line)
                    words[off + i] = v & 0xFFFF
                    listing.rows.append((st.addr + i, v & 0xFFFF, st.text if i == 0 else ""))
            else:
                w = encode(self.instruction(st))
                words[off] = w
                listing.rows.append((st.addr, w, st.text))
        if self.origin + len(words) > LOCAL_WORDS:
            raise AssemblyError(
                f"image overflow: {self.origin + len(words)} words exceed local memory",
                self.stmts[-1].line if self.stmts else 0)
        return ObjectImage(self.origin, words), listing


def assemble(source: str) -> ObjectImage:
    return assemble_with_listing(source)[0]


def assemble_with_listing(source: str) -> tuple[ObjectImage, Listing]:
    a = _Assembler(source)
    a.first_pass()
    return a.second_pass()


def assemble_with_symbols(source: str) -> tuple[ObjectImage, dict[str, int]]:
    a = _Assembler(source)
    a.first_pass()
    image, _ = a.second_pass()
    return image, dict(a.symbols)
