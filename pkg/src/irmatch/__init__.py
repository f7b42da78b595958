"""irmatch: binary-source code matching over normalized LLVM-IR.

Pipeline: parse + normalize .ll text into token streams, BPE-encode,
pre-train a Transformer encoder with masked-LM, fine-tune with a cosine
triplet loss over paired binary/source documents, then match by cosine
threshold and evaluate with precision/recall/F1 sweeps.
"""

from .ir import NormalizePolicy, normalize, parse_ir_text, to_token_stream
from .bpe import Vocabulary, build_model_input, decode, encode, train_bpe
from .encoder import EncoderModel, ModelConfig, attention, gradients, init_model, pool
from .matcher import cosine, embed_document, match_pair, search

__version__ = "0.1.0"

__all__ = [
    "EncoderModel",
    "ModelConfig",
    "NormalizePolicy",
    "Vocabulary",
    "attention",
    "build_model_input",
    "cosine",
    "decode",
    "embed_document",
    "encode",
    "gradients",
    "init_model",
    "match_pair",
    "normalize",
    "parse_ir_text",
    "pool",
    "search",
    "to_token_stream",
    "train_bpe",
]
