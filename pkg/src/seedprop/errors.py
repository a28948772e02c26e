"""Exception types shared across the package."""


class SeedpropError(Exception):
    """Base class for all seedprop errors."""


class ValidationError(SeedpropError):
    """Malformed input: bad bundle, bad config, unknown concept or layer."""


class InternalError(SeedpropError):
    """An internal invariant was violated; indicates a bug, not bad input."""
