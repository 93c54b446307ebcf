"""Exception types shared across the compression pipeline."""


class CompressionError(Exception):
    """Base class for all errors raised by this package."""


class ZeroVectorError(CompressionError):
    """A similarity or normalization was requested on a zero-norm vector."""


class InvalidPoolingError(CompressionError):
    """Requested pooling output dimensions are not achievable."""


class AdapterShapeError(CompressionError):
    """Adapter weight/bias shapes do not match the tokens they are applied to."""


class InvalidConfigError(CompressionError):
    """A configuration value is outside its allowed range."""


class InvalidWindowError(CompressionError):
    """Frames inside one pruning window do not share a common shape."""


class EmptyVideoError(CompressionError):
    """The input contains no frames."""


class InvalidNeedleError(CompressionError):
    """Needle frame is incompatible with the haystack it is inserted into."""


class FileFormatError(CompressionError):
    """A serialized input file is malformed or truncated."""


class BudgetInfeasibleError(CompressionError):
    """The token budget cannot be met even after maximal pruning.

    Raised when the anchor frames alone hold more tokens than the budget
    leaves room for; carries both counts for diagnostics.
    """

    def __init__(self, anchor_tokens: int, budget: int):
        self.anchor_tokens = anchor_tokens
        self.budget = budget
        super().__init__(
            f"anchor frames alone hold {anchor_tokens} tokens but only "
            f"{budget} fit in the budget"
        )
