"""Data model for parsed and normalized LLVM-IR documents."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

# Opcodes of the textual LLVM instruction set. First word of an instruction
# (after an optional `%res =` and call modifiers) must be one of these or a
# declared extension, otherwise the instruction is flagged as unknown.
LLVM_OPCODES = frozenset({
    # terminators
    "ret", "br", "switch", "indirectbr", "invoke", "callbr", "resume",
    "catchswitch", "catchret", "cleanupret", "unreachable",
    # unary / binary
    "fneg", "add", "fadd", "sub", "fsub", "mul", "fmul",
    "udiv", "sdiv", "fdiv", "urem", "srem", "frem",
    # bitwise
    "shl", "lshr", "ashr", "and", "or", "xor",
    # vector / aggregate
    "extractelement", "insertelement", "shufflevector",
    "extractvalue", "insertvalue",
    # memory
    "alloca", "load", "store", "fence", "cmpxchg", "atomicrmw",
    "getelementptr",
    # conversions
    "trunc", "zext", "sext", "fptrunc", "fpext", "fptoui", "fptosi",
    "uitofp", "sitofp", "ptrtoint", "inttoptr", "bitcast", "addrspacecast",
    # other
    "icmp", "fcmp", "phi", "select", "freeze", "call", "va_arg",
    "landingpad", "catchpad", "cleanuppad",
})

# Words that may precede the opcode on a call instruction.
CALL_MODIFIERS = frozenset({"tail", "musttail", "notail"})

ORIGINS = ("source", "binary", "synthetic")


@dataclass
class IRInstruction:
    """One instruction: opcode plus classified token lists.

    `operand_tokens` preserves textual order and includes the result
    register (when present) as the first entry. `known` is False for
    opcodes outside LLVM_OPCODES and the declared extension list;
    such instructions are kept and reported, never dropped.
    """

    opcode: str
    operand_tokens: list[str] = field(default_factory=list)
    type_tokens: list[str] = field(default_factory=list)
    known: bool = True

    def tokens(self) -> list[str]:
        return [self.opcode, *self.type_tokens, *self.operand_tokens]


@dataclass
class IRBlock:
    canonical_label: str
    instructions: list[IRInstruction] = field(default_factory=list)


@dataclass
class IRFunction:
    canonical_name: str
    blocks: list[IRBlock] = field(default_factory=list)
    # Name as written in the input; normalization erases it from tokens
    # but keeps it here so denylists can act on it.
    original_name: str = ""

    def instructions(self):
        for block in self.blocks:
            yield from block.instructions


@dataclass
class IRDocument:
    """One translation unit of parsed LLVM-IR.

    `raw_excluded` holds comment, metadata, attribute, declaration and
    debug-intrinsic lines that parsing removed from function bodies.
    """

    doc_id: str
    origin: str = "source"
    language_tag: Optional[str] = None
    functions: list[IRFunction] = field(default_factory=list)
    raw_excluded: list[str] = field(default_factory=list)
    unknown_opcodes: list[str] = field(default_factory=list)

    def instruction_count(self) -> int:
        return sum(len(b.instructions) for f in self.functions for b in f.blocks)


@dataclass(frozen=True)
class NormalizePolicy:
    """Switches controlling normalization. Same input + same policy gives
    byte-identical output."""

    rename_registers: bool = True
    rename_globals: bool = True
    strip_metadata: bool = True
    fold_constants_to_class: bool = True
    keep_opcode_types: bool = True
    # Functions whose original name is listed here are dropped before
    # renaming (decompiler runtime stubs, etc.). Empty by default.
    function_denylist: tuple[str, ...] = ()


def copy_document(doc: IRDocument) -> IRDocument:
    """Deep-enough copy so normalization never mutates its input."""
    return IRDocument(
        doc_id=doc.doc_id,
        origin=doc.origin,
        language_tag=doc.language_tag,
        functions=[
            IRFunction(
                canonical_name=f.canonical_name,
                original_name=f.original_name,
                blocks=[
                    IRBlock(
                        canonical_label=b.canonical_label,
                        instructions=[replace(i, operand_tokens=list(i.operand_tokens),
                                              type_tokens=list(i.type_tokens))
                                      for i in b.instructions],
                    )
                    for b in f.blocks
                ],
            )
            for f in doc.functions
        ],
        raw_excluded=list(doc.raw_excluded),
        unknown_opcodes=list(doc.unknown_opcodes),
    )
