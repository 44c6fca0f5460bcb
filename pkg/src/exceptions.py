# error hierarchy shared by all pfcred modules
#
# InputError subclasses are problems with what the user supplied (exit code 2 in main.py),
# NumericalError subclasses are failures of the computation itself (exit code 3).


class PfcError(Exception):
    """Base class for all pfcred errors."""


class InputError(PfcError):
    pass


class NumericalError(PfcError):
    pass


class InvalidInput(InputError):
    pass


class SchemaError(InputError):
    pass


class ParseError(InputError):
    """Unparseable CSV cell. row is the 1-based line number in the file (header = line 1)."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DegenerateResponse(InputError):
    pass


class RankDeficientBasis(InputError):
    pass


class SingularMatrix(NumericalError):
    pass


class NotPSD(NumericalError):
    pass


class ResidualCovSingular(NumericalError):
    pass


class NumericalDegeneracy(NumericalError):
    pass


class IterationDiverged(NumericalError):

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class InternalConsistencyError(NumericalError):
    pass


# warning categories. fits record them as strings prefixed with the class name
class DegenerateSpectrum(UserWarning):
    pass


class StructureClosureWarning(UserWarning):
    pass
