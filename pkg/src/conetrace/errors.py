"""Exception hierarchy shared across the library."""


class ConetraceError(Exception):
    """Base class for all library-specific failures."""


# --- operator construction ---

class BadShape(ConetraceError):
    """Coefficient table has inconsistent dimensions."""


class DegenerateLeadingCoefficient(ConetraceError):
    """Top-order coefficient vanishes somewhere on [0, 1]."""


class OutOfRange(ConetraceError):
    """Taylor index outside the stored truncation depth."""


class TruncationExceeded(ConetraceError):
    """Symbolic application requested beyond the stored Taylor depth."""


# --- Laurent / Mellin arithmetic ---

class CenterMismatch(ConetraceError):
    """Laurent arithmetic between series with different centers."""


class ZeroPolynomial(ConetraceError):
    """Inversion of the identically-zero polynomial."""


# --- boundary spectrum ---

class RootFindingFailed(ConetraceError):
    """Indicial roots could not be refined below residual tolerance."""


class StripBoundaryIndeterminate(ConetraceError):
    """An indicial root sits too close to Im(sigma) = +-m/2 to classify."""


class VerificationFailed(ConetraceError):
    """A singular function failed its exact-annihilation check."""


# --- recursion / tails ---

class ResonanceAmbiguity(ConetraceError):
    """The tail step at a resonant point could not be pinned down uniquely."""


class ResonanceOverflow(ConetraceError):
    """Resonances raised the log depth beyond the configured cap."""


# --- domain geometry ---

class RankIndeterminate(ConetraceError):
    """Singular values straddle the rank tolerance; invariance undecidable."""


class ContinuumOfInvariantSubspaces(ConetraceError):
    """Repeated scaling weights make the invariant-subspace family infinite."""


class NotSymmetric(ConetraceError):
    """Operator fails the formal-symmetry identity in the reference space."""


class NotSemibounded(ConetraceError):
    """Rayleigh-quotient probe found the form unbounded below."""


class SelectionAmbiguous(ConetraceError):
    """Friedrichs selection undecidable at a critical-line root."""


# --- ODE engine ---

class SeriesDivergence(ConetraceError):
    """Frobenius series tail will not drop below tolerance at any usable radius."""


class StepSizeUnderflow(ConetraceError):
    """Adaptive integrator stalled."""


class NearEigenvalue(ConetraceError):
    """Spectral parameter too close to an eigenvalue for a resolvent solve."""


class QuadratureNotConverged(ConetraceError):
    """Trace quadrature error estimate above the requested tolerance."""


class ContourThroughZero(ConetraceError):
    """Argument-principle contour passes through (or too near) an eigenvalue."""


class TailDominates(ConetraceError):
    """Spectral-tail estimate exceeds the requested tolerance."""


# --- asymptotics ---

class SectorNotAdmissible(ConetraceError):
    """Requested ray/sector fails the parameter-ellipticity check."""


class IllConditioned(ConetraceError):
    """Expansion fit too ill-conditioned even after peeling."""


class Inconclusive(ConetraceError):
    """Log-detection residual reduction straddles the decision threshold."""


# --- CLI ---

class ConfigError(ConetraceError):
    """Invalid or malformed analysis configuration."""
