"""Exception types raised across the package."""


class FeatSplatError(Exception):
    pass


class BehindCamera(FeatSplatError, ValueError):
    """Gaussian center lies at or behind the near plane."""


class DegenerateDirection(FeatSplatError, ValueError):
    pass


class NotUnit(FeatSplatError, ValueError):
    pass


class ShapeMismatch(FeatSplatError, ValueError):
    pass


class TooSmall(FeatSplatError, ValueError):
    pass


class NotDivisible(FeatSplatError, ValueError):
    pass


class MissingImage(FeatSplatError, FileNotFoundError):
    pass


class BadManifest(FeatSplatError, ValueError):
    pass


class ResolutionMismatch(FeatSplatError, ValueError):
    pass


class CheckpointError(FeatSplatError, ValueError):
    pass


class ConfigError(FeatSplatError, ValueError):
    pass
