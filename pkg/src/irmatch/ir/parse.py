"""Parser for textual LLVM-IR (.ll) producing IRDocument structures.

Only function bodies become structured instructions. Module-level lines
(declares, globals, metadata, attribute groups, target lines), comments,
and llvm.dbg.* intrinsic calls are kept verbatim in the document's
raw_excluded side channel.
"""

from __future__ import annotations

import re
from typing import Optional

from ..errors import EmptyDocument, ParseError
from .types import CALL_MODIFIERS, LLVM_OPCODES, IRBlock, IRDocument, IRFunction, IRInstruction

# Characters that separate tokens but carry no lexical signal themselves.
_SEPARATORS = frozenset(",()[]{}<>")

_LABEL_RE = re.compile(r'^([A-Za-z$._0-9-]+|"[^"]*"):\s*(.*)$')
_RESULT_RE = re.compile(r'^\s*(%(?:[A-Za-z$._0-9-]+|"[^"]*"))\s*=\s*(.*)$')
_OPCODE_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")
_FUNC_NAME_RE = re.compile(r'@([A-Za-z$._0-9-]+|"[^"]*")')

_SCALAR_TYPES = frozenset({
    "void", "half", "bfloat", "float", "double", "fp128", "x86_fp80",
    "ppc_fp128", "x86_mmx", "x86_amx", "label", "token", "metadata",
    "opaque", "ptr",
})
_INT_TYPE_RE = re.compile(r"^i[0-9]+\**$")
_PTR_TYPE_RE = re.compile(
    r"^(void|half|bfloat|float|double|fp128|x86_fp80|ppc_fp128|x86_mmx|x86_amx|ptr|opaque)\*+$"
)
NAMED_TYPE_RE = re.compile(r"^%(struct|union|class)\.")


def is_type_token(tok: str) -> bool:
    """Classify one token as type-like (emitted before operands)."""
    if tok in _SCALAR_TYPES or tok == "x":
        return True
    if _INT_TYPE_RE.match(tok) or _PTR_TYPE_RE.match(tok):
        return True
    if NAMED_TYPE_RE.match(tok):
        return True
    # bare pointer stars split off a composite type
    return bool(tok) and set(tok) == {"*"}


def _strip_comment(line: str) -> str:
    """Remove a trailing ; comment, ignoring semicolons inside strings."""
    in_string = False
    i = 0
    while i < len(line):
        ch = line[i]
        if in_string:
            if ch == "\\":
                i += 1
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == ";":
            return line[:i]
        i += 1
    return line


def _scan_tokens(text: str) -> list[str]:
    """Split operand text into word tokens.

    Whitespace and structural punctuation separate tokens; string
    constants (c"...") and quoted identifiers (%"a b") stay whole.
    """
    tokens: list[str] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace() or ch in _SEPARATORS:
            i += 1
            continue
        if ch == '"' or (ch == "c" and i + 1 < n and text[i + 1] == '"'):
            j = i + (2 if ch == "c" else 1)
            while j < n and text[j] != '"':
                if text[j] == "\\":
                    j += 1
                j += 1
            tokens.append(text[i : min(j + 1, n)])
            i = j + 1
            continue
        j = i
        while j < n and not text[j].isspace() and text[j] not in _SEPARATORS:
            if text[j] == '"':
                j += 1
                while j < n and text[j] != '"':
                    if text[j] == "\\":
                        j += 1
                    j += 1
            j += 1
        tokens.append(text[i:j])
        i = j
    return tokens


def _bracket_depth(text: str, depth: int = 0) -> int:
    """Net bracket depth after scanning text, quote-aware."""
    in_string = False
    i = 0
    while i < len(text):
        ch = text[i]
        if in_string:
            if ch == "\\":
                i += 1
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch in "([{<":
            depth += 1
        elif ch in ")]}>":
            depth -= 1
        i += 1
    return depth


def _find_function_close(line: str) -> Optional[int]:
    """Index of a `}` in line that closes the enclosing function, if any."""
    depth = 0
    in_string = False
    i = 0
    while i < len(line):
        ch = line[i]
        if in_string:
            if ch == "\\":
                i += 1
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            if depth == 0:
                return i
            depth -= 1
        i += 1
    return None


def _parse_instruction(text: str, line_no: int, known: frozenset) -> IRInstruction:
    column = 1
    rest = text
    result_token = None
    m = _RESULT_RE.match(text)
    if m:
        result_token = m.group(1)
        rest = m.group(2)
        column = text.index("=") + 2
    rest = rest.strip()
    if not rest:
        raise ParseError("missing instruction after '='", line_no, column)

    words = rest.split()
    idx = 0
    while idx < len(words) and words[idx] in CALL_MODIFIERS:
        idx += 1
    if idx >= len(words):
        raise ParseError("missing opcode", line_no, column)
    opcode = words[idx]
    if not _OPCODE_RE.match(opcode):
        raise ParseError(f"malformed opcode {opcode!r}", line_no, text.index(opcode) + 1)

    operand_text = rest.split(opcode, 1)[1]
    type_tokens: list[str] = []
    operand_tokens: list[str] = []
    if result_token is not None:
        operand_tokens.append(result_token)
    for tok in _scan_tokens(operand_text):
        if is_type_token(tok):
            type_tokens.append(tok)
        else:
            operand_tokens.append(tok)
    return IRInstruction(
        opcode=opcode,
        operand_tokens=operand_tokens,
        type_tokens=type_tokens,
        known=opcode in known,
    )


def _is_debug_intrinsic(instr: IRInstruction) -> bool:
    if instr.opcode not in ("call", "invoke"):
        return False
    return any(tok.startswith("@llvm.dbg.") for tok in instr.operand_tokens)


def parse_ir_text(
    text: str,
    doc_id: str = "doc",
    origin: str = "source",
    language_tag: Optional[str] = None,
    extra_opcodes: tuple[str, ...] = (),
) -> IRDocument:
    """Parse textual LLVM-IR into an IRDocument.

    Raises ParseError on malformed instruction syntax and EmptyDocument
    when the text contains no function bodies.
    """
    known = LLVM_OPCODES | frozenset(extra_opcodes)
    doc = IRDocument(doc_id=doc_id, origin=origin, language_tag=language_tag)
    seen_unknown: set[str] = set()

    lines = text.split("\n")
    n_lines = len(lines)
    i = 0
    current_func: Optional[IRFunction] = None
    current_block: Optional[IRBlock] = None
    # Statements queued from the same physical line (label remainders,
    # content after `{` on a define line).
    pending: list[tuple[str, int]] = []

    def flush_block():
        nonlocal current_block
        if current_block is not None and current_func is not None:
            current_func.blocks.append(current_block)
        current_block = None

    def add_instruction(stmt: str, line_no: int):
        nonlocal current_block
        instr = _parse_instruction(stmt, line_no, known)
        if _is_debug_intrinsic(instr):
            doc.raw_excluded.append(stmt.strip())
            return
        if not instr.known and instr.opcode not in seen_unknown:
            seen_unknown.add(instr.opcode)
            doc.unknown_opcodes.append(instr.opcode)
        if current_block is None:
            current_block = IRBlock(canonical_label="")
        current_block.instructions.append(instr)

    while i < n_lines or pending:
        if pending:
            raw, line_no = pending.pop(0)
        else:
            original = lines[i]
            raw = _strip_comment(original)
            line_no = i + 1
            i += 1
            if not raw.strip() and original.strip():
                doc.raw_excluded.append(original.strip())
        stripped = raw.strip()
        if not stripped:
            continue

        if current_func is None:
            if stripped.startswith("define"):
                header = stripped
                while "{" not in header and i < n_lines:
                    header += " " + _strip_comment(lines[i]).strip()
                    i += 1
                if "{" not in header:
                    raise ParseError("define without body", line_no)
                head, _, remainder = header.partition("{")
                name_match = _FUNC_NAME_RE.search(head)
                original = name_match.group(1).strip('"') if name_match else ""
                current_func = IRFunction(
                    canonical_name=f"fn{len(doc.functions)}",
                    original_name=original,
                )
                if remainder.strip():
                    pending.append((remainder, line_no))
            else:
                doc.raw_excluded.append(stripped)
            continue

        # inside a function body
        close_idx = _find_function_close(stripped)
        trailing = None
        if close_idx is not None:
            trailing = stripped[close_idx + 1 :]
            stripped = stripped[:close_idx].strip()

        while stripped:
            label_match = _LABEL_RE.match(stripped)
            if label_match:
                flush_block()
                current_block = IRBlock(canonical_label=label_match.group(1).strip('"'))
                stripped = label_match.group(2).strip()
                continue
            stmt = stripped
            stmt_line = line_no
            # merge continuation lines until brackets balance
            depth = _bracket_depth(stmt)
            while depth > 0 and i < n_lines:
                cont = _strip_comment(lines[i])
                i += 1
                stmt += "\n" + cont
                depth = _bracket_depth(cont, depth)
            add_instruction(stmt.replace("\n", " "), stmt_line)
            stripped = ""

        if close_idx is not None:
            flush_block()
            if not current_func.blocks or all(
                not b.instructions for b in current_func.blocks
            ):
                raise ParseError(
                    f"function @{current_func.original_name} has an empty body", line_no
                )
            doc.functions.append(current_func)
            current_func = None
            if trailing and trailing.strip():
                pending.append((trailing, line_no))

    if current_func is not None:
        raise ParseError("unterminated function body", n_lines)
    if not doc.functions:
        raise EmptyDocument(f"no function bodies in document {doc_id!r}")
    return doc
