"""Exception hierarchy shared by the simulator modules."""


class RescaleError(Exception):
    """Base class for all simulator errors."""


class ConfigError(RescaleError, ValueError):
    """Invalid mesh, scenario or run configuration."""


class MeshTooCoarseError(ConfigError):
    pass


class QuadratureDomainError(RescaleError, ValueError):
    pass


class DomainError(RescaleError, ValueError):
    """Evaluation point outside the mesh."""


class SymmetryError(RescaleError, ValueError):
    """Field is not even where evenness is required."""


class SingularNormalizationError(RescaleError):
    """The modulation system cannot be solved (u(0) = 0 or u_ii(0) = 0)."""


class NumericalBlowupError(RescaleError):
    """A non-finite value appeared in the right-hand side or field."""


class SingularWeightError(RescaleError, ValueError):
    pass


class UnsupportedOrderError(RescaleError, ValueError):
    pass


class InvalidScenarioError(ConfigError):
    pass
