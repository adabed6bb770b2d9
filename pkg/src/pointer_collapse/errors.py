"""Exception hierarchy shared by every module."""


class CollapseError(Exception):
    """Base class for all errors raised by the package."""


class ConfigurationError(CollapseError, ValueError):
    """Invalid or mismatched parameters (lattice specs, config files)."""


class CausalityError(CollapseError):
    """An advance would make the hypersurface non-spacelike."""


class BoundaryError(CollapseError):
    """An operation stepped past the edge of the lattice."""


class SequencingError(CollapseError):
    """A dynamics step was applied to a cell that is not the next advance."""


class CutoffError(CollapseError):
    """A Fock-space truncation guard was violated."""


class UndefinedError(CollapseError):
    """A quantity is undefined for the given state (e.g. zero variance)."""
