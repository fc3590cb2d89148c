"""Exceptions shared across the package."""


class CapacityError(RuntimeError):
    """An enumeration exceeded its piece or path budget."""


class InexactCalculusError(RuntimeError):
    """A subdifferential rule fell outside its exactness class in strict mode."""
