"""R8 interpreter.

``step`` executes one instruction against the core's local memory and returns
its cycle cost.  Loads and stores are not performed here: they come back as a
:class:`MemEffect` for the processor IP to route (local memory, NoC, I/O).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import MutableSequence

from .isa import decode

LOCAL_MASK = 0x3FF


class R8HaltedError(Exception):
    pass


@dataclass
class R8State:
    regs: list[int] = field(default_factory=lambda: [0] * 16)
    pc: int = 0
    sp: int = 0
    ir: int = 0
    n: bool = False
    z: bool = False
    c: bool = False
    v: bool = False
    halted: bool = False
    stalled: bool = False

    def reset(self) -> None:
        self.regs = [0] * 16
        self.pc = self.sp = self.ir = 0
        self.n = self.z = self.c = self.v = False
        self.halted = self.stalled = False

    @property
    def flags(self) -> str:
        return "".join(ch if f else "-" for ch, f in zip("NZCV", (self.n, self.z, self.c, self.v)))

    def snapshot(self) -> tuple:
        return (tuple(self.regs), self.pc, self.sp, self.ir,
                self.n, self.z, self.c, self.v, self.halted, self.stalled)


@dataclass(frozen=True)
class MemEffect:
    kind: str = "none"      # "load", "store" or "none"
    address: int = 0
    value: int = 0          # stored value
    reg: int = -1           # destination register of a load


NO_EFFECT = MemEffect()


def _nz(s: R8State, r: int) -> None:
    s.n = bool(r & 0x8000)
    s.z = r == 0


def _add(s: R8State, a: int, b: int) -> int:
    r = a + b
    res = r & 0xFFFF
    s.c = r > 0xFFFF
    s.v = bool(~(a ^ b) & (a ^ res) & 0x8000)
    _nz(s, res)
    return res


def _sub(s: R8State, a: int, b: int) -> int:
    res = (a - b) & 0xFFFF
    s.c = a < b  # borrow
    s.v = bool((a ^ b) & (a ^ res) & 0x8000)
    _nz(s, res)
    return res


def step(s: R8State, mem: MutableSequence[int]) -> tuple[R8State, MemEffect, int]:
    """Execute one instruction.  ``mem`` is the 1024-word local memory.

    The state is updated in place and also returned.
    """
    if s.halted:
        raise R8HaltedError("core is halted")
    word = mem[s.pc & LOCAL_MASK]
    s.ir = word
    instr = decode(word)
    s.pc = (s.pc + 1) & 0xFFFF
    m = instr.mnemonic
    ops = instr.operands
    regs = s.regs
    effect = NO_EFFECT

    if m in ("ADD", "SUB", "AND", "OR", "XOR"):
        d, a, b = ops
        x, y = regs[a], regs[b]
        if m == "ADD":
            regs[d] = _add(s, x, y)
        elif m == "SUB":
            regs[d] = _sub(s, x, y)
        else:
            r = x & y if m == "AND" else x | y if m == "OR" else x ^ y
            _nz(s, r)
            regs[d] = r
    elif m == "ADDI":
        regs[ops[0]] = _add(s, regs[ops[0]], ops[1])
    elif m == "SUBI":
        regs[ops[0]] = _sub(s, regs[ops[0]], ops[1])
    elif m == "LDL":
        regs[ops[0]] = (regs[ops[0]] & 0xFF00) | ops[1]
    elif m == "LDH":
        regs[ops[0]] = (regs[ops[0]] & 0x00FF) | (ops[1] << 8)
    elif m == "LD":
        d, b, o = ops
        effect = MemEffect("load", (regs[b] + regs[o]) & 0xFFFF, reg=d)
    elif m == "ST":
        r, b, o = ops
        effect = MemEffect("store", (regs[b] + regs[o]) & 0xFFFF, value=regs[r])
    elif m in ("NOT", "SL0", "SL1", "SR0", "SR1", "MOV", "CMP"):
        d, a = ops
        x = regs[a]
        if m == "NOT":
            r = ~x & 0xFFFF
        elif m == "SL0" or m == "SL1":
            s.c = bool(x & 0x8000)
            r = ((x << 1) & 0xFFFF) | (m == "SL1")
        elif m == "SR0" or m == "SR1":
            s.c = bool(x & 1)
            r = (x >> 1) | (0x8000 if m == "SR1" else 0)
        elif m == "MOV":
            regs[d] = x
            return s, effect, instr.cycles
        else:  # CMP
            _sub(s, regs[d], x)
            return s, effect, instr.cycles
        _nz(s, r)
        regs[d] = r
    elif m == "LDSP":
        s.sp = regs[ops[0]]
    elif m == "PUSH":
        mem[s.sp & LOCAL_MASK] = regs[ops[0]]
        s.sp = (s.sp - 1) & 0xFFFF
    elif m == "POP":
        s.sp = (s.sp + 1) & 0xFFFF
        regs[ops[0]] = mem[s.sp & LOCAL_MASK]
    elif m in ("JSRR", "JSRD"):
        mem[s.sp & LOCAL_MASK] = s.pc
        s.sp = (s.sp - 1) & 0xFFFF
        s.pc = regs[ops[0]] if m == "JSRR" else (s.pc + ops[0]) & 0xFFFF
    elif m == "RTS":
        s.sp = (s.sp + 1) & 0xFFFF
        s.pc = mem[s.sp & LOCAL_MASK]
    elif m.startswith("JMP"):
        cond = m[3:-1]  # "", "N", "Z", "C", "V"
        taken = (cond == "" or (cond == "N" and s.n) or (cond == "Z" and s.z)
                 or (cond == "C" and s.c) or (cond == "V" and s.v))
        if taken:
            s.pc = regs[ops[0]] if m.endswith("R") else (s.pc + ops[0]) & 0xFFFF
    elif m == "HALT":
        s.halted = True
    # NOP: nothing
    return s, effect, instr.cycles


def complete_load(s: R8State, effect: MemEffect, value: int) -> None:
    """Write the value fetched for a load effect into its destination register."""
    s.regs[effect.reg] = value & 0xFFFF


def run(s: R8State, mem: MutableSequence[int], max_steps: int = 100_000) -> int:
    """Run a core standalone until HALT, serving loads and stores from ``mem``
    (addresses wrapped to 10 bits).  Returns the cycles spent."""
    cycles = 0
    for _ in range(max_steps):
        if s.halted:
            break
        _, eff, c = step(s, mem)
        cycles += c
        if eff.kind == "load":
            complete_load(s, eff, mem[eff.address & LOCAL_MASK])
        elif eff.kind == "store":
            mem[eff.address & LOCAL_MASK] = eff.value
    return cycles
