"""Exception types shared across the toolkit.

Every contract failure has a dedicated class so tests and the CLI can react
to the precise failure mode instead of parsing messages.
"""


class DsfcError(Exception):
    """Base class for all toolkit errors."""


# --- source models ---------------------------------------------------------

class IncomparableTails(DsfcError):
    """Envelope membership could not be decided symbolically or by horizon scan."""


class NotSummable(DsfcError):
    """The envelope function has infinite total mass."""


class DivergentEntropy(DsfcError):
    """The entropy series has no certifiable finite value."""


class AbsoluteContinuityViolated(DsfcError):
    """Divergence undefined: the reference assigns zero mass where p does not."""


class EntropySeriesDiverges(DsfcError):
    """The tail entropy series of the envelope diverges."""


# --- distortion ------------------------------------------------------------

class LengthMismatch(DsfcError):
    """Block distortion of two blocks with different lengths."""


class LevelOutOfRange(DsfcError):
    """Distortion level outside the valid range for the distortion kind."""


# --- codec -----------------------------------------------------------------

class ConfigInvalid(DsfcError):
    """Codec configuration violates an invariant."""


class InvalidOverflowSymbol(DsfcError):
    """Second-stage symbol lies strictly inside the truncation head (and is not 1)."""


class MalformedStream(DsfcError):
    """Stream container is structurally invalid."""


class TrailingBits(DsfcError):
    """Stream carries payload bits beyond the declared counts."""


class EnvelopeViolation(DsfcError):
    """A pmf claimed to be envelope-dominated is not."""


# --- prefix codes ----------------------------------------------------------

class KraftViolation(DsfcError):
    """A constructed code fails the Kraft-MacMillan inequality (construction bug)."""


class ZeroProbabilitySymbol(DsfcError):
    """SFE construction over a distribution with a zero-mass symbol."""


class BudgetExceeded(DsfcError):
    """Requested exact computation exceeds the configured enumeration budget."""


# --- oracles ---------------------------------------------------------------

class NonConvergence(DsfcError):
    """Iterative solver failed to reach tolerance within its iteration cap."""


class WindowTooSmall(DsfcError):
    """The requested construction does not fit in the given symbol window."""
