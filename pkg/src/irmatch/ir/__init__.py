from .types import (
    IRBlock,
    IRDocument,
    IRFunction,
    IRInstruction,
    LLVM_OPCODES,
    NormalizePolicy,
)
from .parse import parse_ir_text
from .normalize import (
    SENT_FUNC,
    SENT_INSTR,
    classify_literal,
    normalize,
    to_token_stream,
)

__all__ = [
    "IRBlock",
    "IRDocument",
    "IRFunction",
    "IRInstruction",
    "LLVM_OPCODES",
    "NormalizePolicy",
    "SENT_FUNC",
    "SENT_INSTR",
    "classify_literal",
    "normalize",
    "parse_ir_text",
    "to_token_stream",
]
