"""Exceptions raised by mixgp.

Every error is a ValueError subclass so callers that only know about bad
values can still catch them; the CLI catches MixGPError and reports it.
"""


class MixGPError(ValueError):
    """base class of every mixgp error"""


class NonScalarRoot(MixGPError):
    """backward() was asked to start from a node that is not 1x1"""


class ShapeMismatch(MixGPError):
    """operands of an op have incompatible shapes"""


class NotPositiveDefinite(MixGPError):
    """a Cholesky pivot was not positive, even after jitter"""


class UnsupportedValue(MixGPError):
    """an observation lies outside the support of its likelihood"""


class MissingValue(MixGPError):
    """a missing entry reached a log-probability evaluation"""


class EmptySchema(MixGPError):
    """a schema declares no likelihood columns"""


class NegativeVariance(MixGPError):
    """a conditional variance came out clearly negative"""


class InvalidConfig(MixGPError):
    """a configuration value is out of range"""


class NonFiniteGradient(MixGPError):
    """a gradient contained NaN or Inf"""


class ParseError(MixGPError):
    """a data file cell could not be parsed

    row and column point at the offending cell (row is the 0-based data row,
    column is the column name).
    """
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class SchemaMismatch(MixGPError):
    """a data file does not match its schema"""


class EntryNotHeldOut(MixGPError):
    """a predictive query targets an entry the model was trained on"""


class DegenerateInput(MixGPError):
    """nearest-neighbour metrics got too few or identical points"""


class MissingLabelColumn(MixGPError):
    """a label-dependent metric was requested without labels"""


class TrainingAborted(MixGPError):
    """training could not continue (persistent factorization failure)"""
