"""Canonicalization of parsed IR: renaming, literal folding, metadata removal.

Renaming erases every toolchain-chosen name so binary-derived and
source-derived IR share one vocabulary: registers become %v0,%v1,... in
first-use order per function, block labels bb0,bb1,... in definition
order, globals @g0,@g1,... and named struct types %struct.t0,... in
first-use order per document. The output is fully determined by
(document, policy).
"""

from __future__ import annotations

import re

from .parse import NAMED_TYPE_RE
from .types import IRDocument, IRFunction, NormalizePolicy, copy_document

SENT_INSTR = "<i>"
SENT_FUNC = "<f>"

INT_CLASS = "INT"
FLOAT_CLASS = "FLOAT"
STR_CLASS = "STR"

_INT_LIT_RE = re.compile(r"^[-+]?[0-9]+$")
_FLOAT_LIT_RE = re.compile(
    r"^[-+]?([0-9]+\.[0-9]*|\.[0-9]+)([eE][-+]?[0-9]+)?$|^[-+]?[0-9]+[eE][-+]?[0-9]+$"
)
_HEX_LIT_RE = re.compile(r"^0x([KLMHR]?)([0-9A-Fa-f]+)$")
_STRING_LIT_RE = re.compile(r'^c?".*"$', re.DOTALL)


def classify_literal(tok: str) -> str | None:
    """INT/FLOAT/STR class for a literal token, None for non-literals."""
    if _INT_LIT_RE.match(tok):
        return INT_CLASS
    if _FLOAT_LIT_RE.match(tok):
        return FLOAT_CLASS
    hex_match = _HEX_LIT_RE.match(tok)
    if hex_match:
        # LLVM prints fp constants as 0x + 16 hex digits (or 0xK/0xL/...
        # variants); integer constants print in decimal.
        if hex_match.group(1) or len(hex_match.group(2)) == 16:
            return FLOAT_CLASS
        return INT_CLASS
    if tok.startswith(("%", "@")):
        return None
    if _STRING_LIT_RE.match(tok):
        return STR_CLASS
    return None


class _DocState:
    """First-use rename tables shared across one document."""

    def __init__(self):
        self.globals: dict[str, str] = {}
        self.named_types: dict[str, str] = {}

    def global_name(self, tok: str) -> str:
        if tok not in self.globals:
            self.globals[tok] = f"@g{len(self.globals)}"
        return self.globals[tok]

    def type_name(self, tok: str) -> str:
        base = tok.rstrip("*")
        stars = tok[len(base):]
        if base not in self.named_types:
            self.named_types[base] = f"%struct.t{len(self.named_types)}"
        return self.named_types[base] + stars


def _label_key(tok: str) -> str:
    return tok[1:].strip('"') if tok.startswith("%") else tok.strip('"')


def _normalize_function(func: IRFunction, policy: NormalizePolicy, doc_state: _DocState) -> None:
    labels = {b.canonical_label: f"bb{idx}" for idx, b in enumerate(func.blocks)}
    registers: dict[str, str] = {}

    def rename_operand(tok: str) -> str | None:
        if tok.startswith("%"):
            if NAMED_TYPE_RE.match(tok):
                return doc_state.type_name(tok) if policy.rename_globals else tok
            key = _label_key(tok)
            if key in labels:
                return "%" + labels[key]
            if not policy.rename_registers:
                return tok
            if tok not in registers:
                registers[tok] = f"%v{len(registers)}"
            return registers[tok]
        if tok.startswith("@"):
            return doc_state.global_name(tok) if policy.rename_globals else tok
        if tok.startswith(("!", "#")):
            return None if policy.strip_metadata else tok
        if policy.fold_constants_to_class:
            cls = classify_literal(tok)
            if cls is not None:
                return cls
        return tok

    for block in func.blocks:
        for instr in block.instructions:
            if policy.keep_opcode_types:
                renamed_types = []
                for tok in instr.type_tokens:
                    if NAMED_TYPE_RE.match(tok) and policy.rename_globals:
                        renamed_types.append(doc_state.type_name(tok))
                    else:
                        renamed_types.append(tok)
                instr.type_tokens = renamed_types
            else:
                instr.type_tokens = []
            new_operands = []
            for tok in instr.operand_tokens:
                out = rename_operand(tok)
                if out is not None:
                    new_operands.append(out)
            instr.operand_tokens = new_operands

    for idx, block in enumerate(func.blocks):
        block.canonical_label = f"bb{idx}"


def normalize(doc: IRDocument, policy: NormalizePolicy = NormalizePolicy()) -> IRDocument:
    """Return a canonicalized copy of doc. Total on parsed documents and
    idempotent under a fixed policy."""
    out = copy_document(doc)
    if policy.function_denylist:
        deny = set(policy.function_denylist)
        out.functions = [f for f in out.functions if f.original_name not in deny]
    state = _DocState()
    for idx, func in enumerate(out.functions):
        func.canonical_name = f"fn{idx}"
        _normalize_function(func, policy, state)
    return out


def to_token_stream(doc: IRDocument) -> list[str]:
    """Flatten a normalized document into the pre-BPE token stream.

    Emits [opcode, type_tokens..., operand_tokens...] per instruction,
    with <i> between instructions of a function and <f> between functions.
    """
    stream: list[str] = []
    for f_idx, func in enumerate(doc.functions):
        if f_idx > 0:
            stream.append(SENT_FUNC)
        first = True
        for block in func.blocks:
            for instr in block.instructions:
                if not first:
                    stream.append(SENT_INSTR)
                stream.extend(instr.tokens())
                first = False
    return stream
