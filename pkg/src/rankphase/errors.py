"""Exception hierarchy shared across the package."""


class RankPhaseError(Exception):
    """Base class for all package errors."""


class InputError(RankPhaseError, ValueError):
    """A caller supplied an invalid argument (bad shape, range, or kind)."""


class ConfigError(InputError):
    """An experiment configuration is malformed or inconsistent."""


class DegenerateFitError(RankPhaseError):
    """A regression target is degenerate (e.g. constant rank vector)."""
