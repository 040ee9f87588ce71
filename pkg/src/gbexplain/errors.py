"""Exception hierarchy shared across the engine."""


class GBExplainError(Exception):
    """Base class for all engine errors."""


class ModelFormatError(GBExplainError):
    """Model document cannot be decoded (bad JSON, missing/invalid fields)."""


class StructuralError(ModelFormatError):
    """Model decoded but violates a structural invariant (names tree/node)."""


class DimensionError(GBExplainError):
    """Feature vector length does not match the model's feature count."""


class CapacityError(GBExplainError):
    """Input exceeds a hard size guard (e.g. brute-force feature limit)."""


class SchemaError(GBExplainError):
    """Tabular input does not match the expected header/column contract."""


class ContractError(GBExplainError):
    """An operation was called outside its precondition."""


class EmptySelectionError(GBExplainError):
    """Alert selection found no eligible sample in any class."""
