"""Exception types shared across the irmatch pipeline."""


class IrmatchError(Exception):
    """Base class for all irmatch errors."""


# --- IR parsing / normalization ---

class ParseError(IrmatchError):
    """Malformed LLVM-IR text. Carries the 1-based line and column."""

    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, col {column}: {message}")
        self.line = line
        self.column = column


class EmptyDocument(IrmatchError):
    """No function bodies found in the input text."""


# --- BPE / model input ---

class EmptyCorpus(IrmatchError):
    """Training corpus contains no documents."""


class VocabTooSmall(IrmatchError):
    """Requested vocabulary cannot hold the base symbols plus specials."""


class UnknownId(IrmatchError):
    """Token id outside the vocabulary."""


# --- encoder ---

class ShapeMismatch(IrmatchError):
    """Attention inputs have incompatible shapes."""


class IdOutOfRange(IrmatchError):
    """Input id >= vocab_size."""


class LengthExceeded(IrmatchError):
    """Sequence longer than the model's max_len."""


class EmptySequence(IrmatchError):
    """Pooling requested over zero rows."""


class NonFiniteLoss(IrmatchError):
    """Loss or gradient became NaN/Inf."""


# --- training ---

class NothingToMask(IrmatchError):
    """Sequence has no maskable (non-special, non-pad) positions."""


class NoMaskedPositions(IrmatchError):
    """MLM loss over a batch with no labeled positions."""


class InsufficientGroups(IrmatchError):
    """Triplet sampling needs at least two distinct group ids."""


class EmptyBatch(IrmatchError):
    """Loss over an empty triplet batch."""


# --- matching / evaluation ---

class ZeroVector(IrmatchError):
    """Cosine of an all-zero vector is undefined."""


class DimensionMismatch(IrmatchError):
    """Embedding dimensions differ."""


class FingerprintMismatch(IrmatchError):
    """Query embedding and index were produced by different checkpoints."""


class EmptyIndex(IrmatchError):
    """Search over an index with no entries."""


class EmptyInput(IrmatchError):
    """Metrics over an empty item list."""
