"""Exception types raised across the package."""


class Spin1QRSError(Exception):
    """Base class for all package errors."""


class ParityError(Spin1QRSError):
    """A state or matrix element violates the parity selection rule."""


class ConvergenceError(Spin1QRSError):
    """Truncation or cutoff is too small for the requested accuracy."""


class CompilationError(Spin1QRSError):
    """A pulse or schedule cannot be compiled within the RWA budget."""


class PropagationError(Spin1QRSError):
    """Time integration failed (step underflow, norm or trace drift, positivity)."""


class LeakageError(Spin1QRSError):
    """Population escaped the spin-1 subspace beyond the allowed budget."""


class ConfigError(Spin1QRSError):
    """Invalid experiment configuration."""
