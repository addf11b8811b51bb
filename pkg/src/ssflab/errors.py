"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class SsfLabError(Exception):
    """Base class for every error raised by ssflab."""


class ParameterError(SsfLabError, ValueError):
    """Invalid construction parameters (ordering, exponents, empty supports)."""


class UnsupportedEnergyError(SsfLabError, ValueError):
    """Energy outside the region where the requested solution exists."""


class EigenvalueProximityError(SsfLabError):
    """The Wronskian nearly vanishes: z sits at (or next to) a pole of the resolvent."""

    def __init__(self, message: str, z: complex | None = None, wronskian: complex | None = None):
        super().__init__(message)
        self.z = z
        self.wronskian = wronskian


class DiscretizationError(SsfLabError):
    """The quadrature grid is too coarse (e.g. Im T has a sizeable negative eigenvalue)."""


class ResonancePointError(SsfLabError):
    """1 + r J T is numerically singular at the requested coupling."""

    def __init__(self, message: str, r: float, sigma_min: float):
        super().__init__(message)
        self.r = r
        self.sigma_min = sigma_min


class TrackingError(SsfLabError):
    """Continuation of eigenphase branches failed to resolve an interval."""

    def __init__(self, message: str, interval: tuple[float, float]):
        super().__init__(message)
        self.interval = interval


class InconsistencyError(SsfLabError):
    """Two routes to the same invariant disagree beyond tolerance."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegenerateDetectionError(SsfLabError):
    """Near-singularity persists over a whole r-interval instead of an isolated point."""

    def __init__(self, message: str, lam: float, interval: tuple[float, float]):
        super().__init__(message)
        self.lam = lam
        self.interval = interval
