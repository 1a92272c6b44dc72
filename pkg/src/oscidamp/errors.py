"""Exception and warning types shared across the package."""


class OscidampError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(OscidampError):
    """Invalid experiment configuration (unknown keys, bad values)."""


class NumericalError(OscidampError):
    """Base class for solver / quadrature / integration failures."""


# -- model ------------------------------------------------------------------

class EmptyFrequencyList(ConfigError):
    pass


class NonPositiveFrequency(ConfigError):
    pass


class DuplicateFrequency(ConfigError):
    """Two frequencies closer than 1e-9: the bank is uncontrollable."""


class DimensionMismatch(OscidampError):
    pass


# -- geometry ---------------------------------------------------------------

class QuadratureNotConverged(NumericalError):
    """Successive quadrature refinements failed to agree within tolerance."""


class SolverNotConverged(NumericalError):
    """Momentum solve did not reduce the residual below tolerance."""


class ZeroCovector(OscidampError):
    pass


class ZeroState(OscidampError):
    pass


class DegenerateDirection(UserWarning):
    """A per-block amplitude fell below 1e-12 of the largest one.

    The evaluation proceeds on the reduced integrand (the gradient of the
    vanished block is exactly zero there); this warning only flags the
    configuration.
    """


# -- controller -------------------------------------------------------------

class BelowCutoff(OscidampError):
    """State is inside the near-origin ball where the feedback law is not used."""


class StepTooLarge(NumericalError):
    """Persistent switching chatter: more than 10 control flips per step even
    after repeated step halving."""


# -- observability ----------------------------------------------------------

class NotObservable(OscidampError):
    pass


class IllConditionedTransform(NumericalError):
    """Canonical-form change of coordinates has condition number > 1e12 or
    fails the certificate check."""


class GridTooCoarse(OscidampError):
    """Sample grid too coarse for the requested differentiation order."""
