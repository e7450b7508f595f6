"""R8 instruction set: the encoding table, encoder and decoder.

Every instruction is one 16-bit word with a 4-bit major opcode in bits 15..12.

==========  =====  ===================  ===========================================
format      major  fields (bits)        instructions
==========  =====  ===================  ===========================================
RRR         0-4    d[11:8] a[7:4] b[3:0]  ADD SUB AND OR XOR     (Rd <- Ra op Rb)
RI          5-8    d[11:8] imm8[7:0]    ADDI SUBI LDL LDH
RRR         9, A   r[11:8] b[7:4] o[3:0]  LD Rd,Rb,Ro   ST Rs,Rb,Ro
D           B      sel[11:10] disp10    JMPD JSRD JMPND JMPZD
D           C      sel[11:10] disp10    JMPCD JMPVD            (sel 2, 3 undefined)
RR          D      d[11:8] s[7:4] minor NOT SL0 SL1 SR0 SR1 MOV CMP
R           E      r[11:8] 0 minor      LDSP PUSH POP JSRR RTS JMPR JMPNR JMPZR
                                        JMPCR JMPVR NOP HALT
--          F      --                   undefined
==========  =====  ===================  ===========================================

Unused fields must be zero; any other word decodes as data.  Displacements
are signed 10-bit and relative to the program counter after fetch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional


class R8DecodeError(Exception):
    pass


class OpSpec(NamedTuple):
    mnemonic: str
    fmt: str        # rrr, ri, d, rr, r, none
    major: int
    minor: int      # minor opcode (rr/r/none) or selector (d); -1 otherwise
    cycles: int


_TABLE = [
    OpSpec("ADD", "rrr", 0x0, -1, 2),
    OpSpec("SUB", "rrr", 0x1, -1, 2),
    OpSpec("AND", "rrr", 0x2, -1, 2),
    OpSpec("OR", "rrr", 0x3, -1, 2),
    OpSpec("XOR", "rrr", 0x4, -1, 2),
    OpSpec("ADDI", "ri", 0x5, -1, 2),
    OpSpec("SUBI", "ri", 0x6, -1, 2),
    OpSpec("LDL", "ri", 0x7, -1, 2),
    OpSpec("LDH", "ri", 0x8, -1, 2),
    OpSpec("LD", "rrr", 0x9, -1, 4),
    OpSpec("ST", "rrr", 0xA, -1, 4),
    OpSpec("JMPD", "d", 0xB, 0, 3),
    OpSpec("JSRD", "d", 0xB, 1, 3),
    OpSpec("JMPND", "d", 0xB, 2, 3),
    OpSpec("JMPZD", "d", 0xB, 3, 3),
    OpSpec("JMPCD", "d", 0xC, 0, 3),
    OpSpec("JMPVD", "d", 0xC, 1, 3),
    OpSpec("NOT", "rr", 0xD, 0, 2),
    OpSpec("SL0", "rr", 0xD, 1, 2),
    OpSpec("SL1", "rr", 0xD, 2, 2),
    OpSpec("SR0", "rr", 0xD, 3, 2),
    OpSpec("SR1", "rr", 0xD, 4, 2),
    OpSpec("MOV", "rr", 0xD, 5, 2),
    OpSpec("CMP", "rr", 0xD, 6, 2),
    OpSpec("LDSP", "r", 0xE, 0, 2),
    OpSpec("PUSH", "r", 0xE, 1, 3),
    OpSpec("POP", "r", 0xE, 2, 3),
    OpSpec("JSRR", "r", 0xE, 3, 3),
    OpSpec("RTS", "none", 0xE, 4, 3),
    OpSpec("JMPR", "r", 0xE, 5, 3),
    OpSpec("JMPNR", "r", 0xE, 6, 3),
    OpSpec("JMPZR", "r", 0xE, 7, 3),
    OpSpec("JMPCR", "r", 0xE, 8, 3),
    OpSpec("JMPVR", "r", 0xE, 9, 3),
    OpSpec("NOP", "none", 0xE, 0xA, 2),
    OpSpec("HALT", "none", 0xE, 0xB, 2),
]

OPCODES: dict[str, OpSpec] = {s.mnemonic: s for s in _TABLE}
MNEMONICS: tuple[str, ...] = tuple(OPCODES)
assert len(MNEMONICS) == 36

_BY_MAJOR_MINOR = {(s.major, s.minor): s for s in _TABLE}

OPERAND_COUNT = {"rrr": 3, "ri": 2, "d": 1, "rr": 2, "r": 1, "none": 0}


@dataclass(frozen=True)
class Instruction:
    mnemonic: str
    operands: tuple[int, ...] = ()

    def __post_init__(self):
        spec = OPCODES.get(self.mnemonic)
        if spec is None:
            raise ValueError(f"unknown mnemonic {self.mnemonic!r}")
        ops = tuple(self.operands)
        object.__setattr__(self, "operands", ops)
        if len(ops) != OPERAND_COUNT[spec.fmt]:
            raise ValueError(f"{self.mnemonic} takes {OPERAND_COUNT[spec.fmt]} operands")
        if spec.fmt == "ri":
            _check_reg(ops[0])
            if not 0 <= ops[1] <= 0xFF:
                raise ValueError("immediate must be 0..255")
        elif spec.fmt == "d":
            if not -512 <= ops[0] <= 511:
                raise ValueError("displacement must be -512..511")
        else:
            for r in ops:
                _check_reg(r)

    @property
    def spec(self) -> OpSpec:
        return OPCODES[self.mnemonic]

    @property
    def cycles(self) -> int:
        return self.spec.cycles

    def __str__(self) -> str:
        fmt = self.spec.fmt
        ops = self.operands
        if fmt == "none":
            return self.mnemonic
        if fmt == "ri":
            return f"{self.mnemonic} R{ops[0]},#{ops[1]}"
        if fmt == "d":
            return f"{self.mnemonic} {ops[0]}"
        return f"{self.mnemonic} " + ",".join(f"R{r}" for r in ops)


def _check_reg(r: int) -> None:
    if not 0 <= r <= 15:
        raise ValueError(f"register index {r} out of range")


def encode(instr: Instruction) -> int:
    s = instr.spec
    ops = instr.operands
    word = s.major << 12
    if s.fmt == "rrr":
        word |= (ops[0] << 8) | (ops[1] << 4) | ops[2]
    elif s.fmt == "ri":
        word |= (ops[0] << 8) | ops[1]
    elif s.fmt == "d":
        word |= (s.minor << 10) | (ops[0] & 0x3FF)
    elif s.fmt == "rr":
        word |= (ops[0] << 8) | (ops[1] << 4) | s.minor
    elif s.fmt == "r":
        word |= (ops[0] << 8) | s.minor
    else:
        word |= s.minor
    return word


def decode(word: int) -> Instruction:
    """Decode a word; raises :class:`R8DecodeError` for undefined encodings."""
    instr = disassemble(word)
    if instr is None:
        raise R8DecodeError(f"undefined instruction word 0x{word:04X}")
    return instr


def disassemble(word: int) -> Optional[Instruction]:
    """Inverse of :func:`encode`; ``None`` for words that are not instructions."""
    word &= 0xFFFF
    major = word >> 12
    a, b, c = (word >> 8) & 0xF, (word >> 4) & 0xF, word & 0xF
    if major <= 0x4 or major in (0x9, 0xA):
        return Instruction(_BY_MAJOR_MINOR[(major, -1)].mnemonic, (a, b, c))
    if 0x5 <= major <= 0x8:
        return Instruction(_BY_MAJOR_MINOR[(major, -1)].mnemonic, (a, word & 0xFF))
    if major in (0xB, 0xC):
        s = _BY_MAJOR_MINOR.get((major, (word >> 10) & 0x3))
        if s is None:
            return None
        disp = word & 0x3FF
        if disp & 0x200:
            disp -= 0x400
        return Instruction(s.mnemonic, (disp,))
    if major == 0xD:
        s = _BY_MAJOR_MINOR.get((major, c))
        return Instruction(s.mnemonic, (a, b)) if s else None
    if major == 0xE:
        s = _BY_MAJOR_MINOR.get((major, c))
        if s is None or b != 0:
            return None
        if s.fmt == "none":
            return Instruction(s.mnemonic) if a == 0 else None
        return Instruction(s.mnemonic, (a,))
    return None


def disassemble_text(word: int) -> str:
    instr = disassemble(word)
    return str(instr) if instr is not None else f".word 0x{word & 0xFFFF:04X}  ; undefined/data"
