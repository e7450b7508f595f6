"""R8 processor: ISA, interpreter, assembler and object files."""

from .asm import AssemblyError, assemble, assemble_with_listing, assemble_with_symbols
from .cpu import MemEffect, R8State, complete_load, run, step
from .isa import (MNEMONICS, OPCODES, Instruction, R8DecodeError, decode, disassemble,
                  disassemble_text, encode)
from .objfile import LOCAL_WORDS, ObjectFormatError, ObjectImage, load_object, parse_object

__all__ = [
    "AssemblyError", "assemble", "assemble_with_listing", "assemble_with_symbols",
    "MemEffect", "R8State", "complete_load", "run", "step",
    "MNEMONICS", "OPCODES", "Instruction", "R8DecodeError", "decode", "disassemble",
    "disassemble_text", "encode",
    "LOCAL_WORDS", "ObjectFormatError", "ObjectImage", "load_object", "parse_object",
]
