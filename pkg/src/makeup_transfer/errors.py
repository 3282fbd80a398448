"""Exception hierarchy shared by all modules.

Every error carries a ``category`` used by the CLI to pick an exit code.
"""


class MakeupTransferError(Exception):
    category = "internal"


class InputError(MakeupTransferError, ValueError):
    """Bad arguments, shapes, or file contents."""

    category = "input"


class DimensionError(InputError):
    pass


class ConfigError(InputError):
    pass


class ParseError(InputError):
    """Malformed file; the message names the line or field."""


class UsageError(MakeupTransferError, RuntimeError):
    category = "internal"


class DegenerateRegionError(InputError):
    def __init__(self, region, detail="projected mask is empty"):
        self.region = region
        super().__init__(f"degenerate region {region!r}: {detail}")


class MissingLabelsError(InputError):
    def __init__(self, missing):
        # missing: {"before": [ids], "reference": [ids]}
        self.missing = missing
        parts = [f"{who} lacks labels {ids}" for who, ids in missing.items() if ids]
        super().__init__("missing region labels: " + "; ".join(parts))


class NumericalError(MakeupTransferError, ArithmeticError):
    category = "numeric"


class DivergenceError(NumericalError):
    def __init__(self, message, trace):
        self.trace = trace
        super().__init__(message)
