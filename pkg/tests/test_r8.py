import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from multinoc.r8 import (MNEMONICS, OPCODES, AssemblyError, Instruction, ObjectFormatError,
                         ObjectImage, R8DecodeError, R8State, assemble, assemble_with_listing,
                         assemble_with_symbols, decode, disassemble, disassemble_text, encode,
                         load_object, parse_object, run, step)
from multinoc.r8.cpu import R8HaltedError


def run_words(words, regs=None, steps=1, mem_size=1024):
    mem = list(words) + [0] * (mem_size - len(words))
    s = R8State()
    for r, v in (regs or {}).items():
        s.regs[r] = v
    out = []
    for _ in range(steps):
        out.append(step(s, mem))
    return s, mem, out


def signed(v):
    return v - 0x10000 if v & 0x8000 else v


def flag_oracle(op, a, b):
    if op == "ADD":
        wide = a + b
        sw = signed(a) + signed(b)
        c = wide > 0xFFFF
    else:
        wide = a - b
        sw = signed(a) - signed(b)
        c = a < b
    res = wide & 0xFFFF
    return res, res >= 0x8000, res == 0, c, not -0x8000 <= sw <= 0x7FFF


# -- ISA table ---------------------------------------------------------------------


def test_thirty_six_instructions_with_cpi_in_range():
    assert len(MNEMONICS) == 36
    assert all(2 <= OPCODES[m].cycles <= 4 for m in MNEMONICS)


def test_encodings_are_unique():
    seen = {}
    for word in range(0x10000):
        i = disassemble(word)
        if i is not None:
            assert encode(i) == word
            assert word not in seen
            seen[word] = i
    assert {i.mnemonic for i in seen.values()} == set(MNEMONICS)


def test_nop_disassembles():
    w = encode(Instruction("NOP"))
    assert str(disassemble(w)) == "NOP"


def test_undefined_word_is_data():
    assert disassemble(0xF000) is None
    assert "undefined" in disassemble_text(0xF000)
    with pytest.raises(R8DecodeError):
        decode(0xF123)


def test_instruction_validation():
    with pytest.raises(ValueError):
        Instruction("ADD", (16, 0, 0))
    with pytest.raises(ValueError):
        Instruction("JMPD", (512,))
    with pytest.raises(ValueError):
        Instruction("FOO")


# -- interpreter -------------------------------------------------------------------


def test_nop_step():
    s, _, [(_, eff, cycles)] = run_words([encode(Instruction("NOP"))])
    assert s.pc == 1 and cycles == 2 and eff.kind == "none"
    assert s.flags == "----"


def test_sub_self_is_zero():
    w = encode(Instruction("SUB", (1, 2, 2)))
    s, _, [(_, _, cycles)] = run_words([w], {2: 1234})
    assert s.regs[1] == 0 and s.z and not s.n and cycles == 2


def test_store_effect_for_wait_address():
    w = encode(Instruction("ST", (3, 1, 2)))
    s, _, [(_, eff, cycles)] = run_words([w], {3: 2, 1: 0, 2: 0xFFFE})
    assert (eff.kind, eff.address, eff.value, cycles) == ("store", 0xFFFE, 2, 4)


def test_load_effect_carries_destination():
    w = encode(Instruction("LD", (5, 1, 2)))
    _, _, [(_, eff, _)] = run_words([w], {1: 0x0800, 2: 3})
    assert (eff.kind, eff.address, eff.reg) == ("load", 0x0803, 5)


def test_ldl_ldh_build_a_word():
    img = assemble("LDL R1,#0x20\nLDH R1,#0x00")
    s, _, _ = run_words(img.words, {1: 0xABCD}, steps=2)
    assert s.regs[1] == 0x0020


def test_self_loop_is_a_fixed_point():
    img = assemble("NOP\nHERE: JMPD HERE")
    assert disassemble(img.words[1]).operands == (-1,)
    s, _, _ = run_words(img.words, steps=5)
    assert s.pc == 1


@pytest.mark.parametrize("op,x,res,c", [
    ("SL0", 0x8001, 0x0002, True),
    ("SL1", 0x0001, 0x0003, False),
    ("SR0", 0x0003, 0x0001, True),
    ("SR1", 0x0002, 0x8001, False),
    ("NOT", 0x00FF, 0xFF00, False),
])
def test_shifts_and_not(op, x, res, c):
    s, _, _ = run_words([encode(Instruction(op, (1, 2)))], {2: x})
    assert s.regs[1] == res
    if op != "NOT":
        assert s.c == c


def test_cmp_sets_flags_only():
    s, _, _ = run_words([encode(Instruction("CMP", (1, 2)))], {1: 5, 2: 5})
    assert s.z and s.regs[1] == 5


def test_subroutine_call_and_return():
    src = """
        LDL  R1, #0xFF
        LDH  R1, #0x03
        LDSP R1
        JSRD sub
        HALT
    sub: LDL R2, #9
        RTS
    """
    img = assemble(src)
    mem = img.words + [0] * (1024 - len(img.words))
    s = R8State()
    run(s, mem)
    assert s.halted and s.regs[2] == 9 and s.sp == 0x03FF


def test_push_pop():
    src = """
        LDL  R1, #0xF0
        LDH  R1, #0x03
        LDSP R1
        LDL  R2, #42
        PUSH R2
        POP  R3
        HALT
    """
    img = assemble(src)
    mem = img.words + [0] * (1024 - len(img.words))
    s = R8State()
    cycles = run(s, mem)
    assert s.regs[3] == 42 and mem[0x3F0] == 42 and s.sp == 0x3F0
    assert cycles == 2 * 4 + 3 + 3 + 2


def test_halted_core_refuses_to_step():
    s = R8State(halted=True)
    with pytest.raises(R8HaltedError):
        step(s, [0] * 1024)


def test_conditional_jumps():
    src = """
        SUB  R1, R1, R1      ; Z=1
        JMPZD skip
        LDL  R5, #1
    skip: ADDI R2, #1        ; Z=0, N=0
        JMPND bad
        JMPZD bad
        HALT
    bad: LDL R6, #1
        HALT
    """
    img = assemble(src)
    s = R8State()
    run(s, img.words + [0] * 1000)
    assert s.regs[5] == 0 and s.regs[6] == 0


@given(st.integers(0, 0xFFFF), st.integers(0, 0xFFFF), st.sampled_from(["ADD", "SUB"]))
def test_flags_match_wide_integer_oracle(a, b, op):
    s, _, _ = run_words([encode(Instruction(op, (3, 1, 2)))], {1: a, 2: b})
    res, n, z, c, v = flag_oracle(op, a, b)
    assert (s.regs[3], s.n, s.z, s.c, s.v) == (res, n, z, c, v)


@given(st.integers(0, 0xFFFF), st.integers(0, 0xFF), st.sampled_from(["ADDI", "SUBI"]))
def test_immediate_flags_match_oracle(a, imm, op):
    s, _, _ = run_words([encode(Instruction(op, (1, imm)))], {1: a})
    res, n, z, c, v = flag_oracle(op[:3], a, imm)
    assert (s.regs[1], s.n, s.z, s.c, s.v) == (res, n, z, c, v)


def test_interpreter_is_deterministic():
    rng = random.Random(2)
    words = [rng.choice([w for w in (rng.randrange(0x10000) for _ in range(20))
                         if disassemble(w) is not None and disassemble(w).mnemonic
                         not in ("HALT",)] or [0]) for _ in range(64)]
    a = run_words(words, steps=40)[0].snapshot()
    b = run_words(words, steps=40)[0].snapshot()
    assert a == b


# -- assembler ---------------------------------------------------------------------


def test_nop_assembles():
    assert assemble("NOP").words == [encode(Instruction("NOP"))]


def test_round_trip_through_text_for_every_word():
    for word in range(0x10000):
        i = disassemble(word)
        if i is not None:
            assert assemble(str(i)).words == [word]


@pytest.mark.parametrize("src,line", [
    ("NOP\nFROB R1", 2),
    ("ADD R1,R2", 1),
    ("LDL R1,#300", 1),
    ("X: NOP\nX: NOP", 2),
    ("JMPD 600", 1),
    ("LDL R16,#1", 1),
    ("JMPD nowhere", 1),
])
def test_assembly_errors_carry_line(src, line):
    with pytest.raises(AssemblyError) as e:
        assemble(src)
    assert e.value.line == line


def test_image_overflow():
    with pytest.raises(AssemblyError):
        assemble("NOP\n" * 1025)


def test_directives_and_values():
    src = """
        .equ IO, 0xFFFF
        .org 4
    start: LDL R1, #lo(IO)
        LDH R1, #hi(IO)
        LDL R2, #'A'
        LDL R3, #10h
        .word 1, -1, start
    """
    img, syms = assemble_with_symbols(src)
    assert img.origin == 4 and syms["start"] == 4
    assert img.words[4:] == [1, 0xFFFF, 4]
    s, _, _ = run_words([0] * 4 + img.words[:4], steps=8)
    assert s.regs[1] == 0xFFFF and s.regs[2] == 65 and s.regs[3] == 16


def test_listing_rows():
    _, listing = assemble_with_listing("NOP\nHALT")
    assert [r[0] for r in listing.rows] == [0, 1]
    assert "HALT" in str(listing)


# -- object files ------------------------------------------------------------------


def test_object_minimal():
    img = load_object("@0000\n0000\n")
    assert (img.origin, img.words) == (0, [0])


def test_object_round_trip(tmp_path):
    img = ObjectImage(0x10, [1, 2, 0xBEEF])
    assert parse_object(img.to_text()) == img
    p = tmp_path / "a.obj"
    p.write_text(img.to_text())
    assert load_object(str(p)) == img


def test_object_gap_is_zero_filled():
    img = parse_object("@0000\n0001\n@0003\n0002 ; after a gap\n")
    assert img.words == [1, 0, 0, 2]


@pytest.mark.parametrize("text,line", [("ZZZZ", 1), ("@0000\n123", 2), ("@0002\n0000\n@0000", 3)])
def test_object_errors(text, line):
    with pytest.raises(ObjectFormatError) as e:
        parse_object(text)
    assert e.value.line == line


def test_object_overflow():
    with pytest.raises(ObjectFormatError):
        parse_object("@03FF\n0000\n0000\n")
