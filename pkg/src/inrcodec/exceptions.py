"""Exception hierarchy shared by every stage of the codec."""


class CodecError(Exception):
    """Base class for all errors raised by :mod:`inrcodec`."""

    exit_code = 1


class FormatError(CodecError, ValueError):
    """A file or container does not follow the expected layout."""

    exit_code = 3


class UnsupportedError(FormatError):
    """The input is well formed but uses a feature outside the supported subset."""


class CorruptionError(CodecError):
    """Container payload is truncated or fails its checksum."""

    exit_code = 5


class DivergenceError(CodecError, FloatingPointError):
    """Training produced a non-finite loss."""

    exit_code = 4

    def __init__(self, epoch, loss, slice_index=None):
        self.epoch = epoch
        self.loss = loss
        self.slice_index = slice_index
        where = "" if slice_index is None else f" (network {slice_index})"
        super().__init__(f"training diverged at epoch {epoch}{where}: loss={loss!r}")

    def __reduce__(self):
        return type(self), (self.epoch, self.loss, self.slice_index)


class ShapeError(CodecError, ValueError):
    """Array shapes are inconsistent with each other or with a spec."""


class EmptySelectionError(CodecError, ValueError):
    """A selection (shell, mask label) matched nothing."""


class EmptyShellError(EmptySelectionError):
    """No measurement lies within tolerance of the requested b-value."""


class DegenerateSchemeError(CodecError, ValueError):
    """The acquisition scheme cannot determine the requested model."""


class ConsistencyError(CodecError, ValueError):
    """Networks meant to share one architecture do not."""


class QuantizationOverflowError(CodecError, OverflowError):
    """A parameter does not fit the requested quantization format."""
