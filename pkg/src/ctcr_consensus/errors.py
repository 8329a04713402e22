"""Exception hierarchy.

Input problems derive from :class:`InputError` (CLI exit code 1), numerical
failures from :class:`NumericalError` (CLI exit code 2).
"""


class CTCRError(Exception):
    pass


class InputError(CTCRError, ValueError):
    pass


class TopologyError(InputError):
    pass


class NoInformersError(TopologyError):
    pass


class SelfLoopError(TopologyError):
    pass


class AgentIndexError(TopologyError):
    pass


class DuplicateEdgeError(TopologyError):
    pass


class NumericalError(CTCRError, ArithmeticError):
    pass


class EigenvalueConvergenceError(NumericalError):
    pass


class DefectiveAdjacencyError(NumericalError):
    """Weighted adjacency matrix is not diagonalizable."""


class DegeneratePointError(NumericalError):
    pass


class NonSimpleCrossingError(NumericalError):
    pass


class UnclassifiablePointError(NumericalError):
    pass


class EmptySpectrumWindowError(NumericalError):
    pass


class NoStabilizingProlongationError(NumericalError):
    pass
