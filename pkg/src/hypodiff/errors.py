"""Exception types raised across the package."""


class HypodiffError(Exception):
    """Base class for all package-specific errors."""


# --- structural matrix validation ---

class DimensionMismatch(HypodiffError):
    pass


class NonIncreasingViolation(HypodiffError):
    pass


class RankDeficientBlock(HypodiffError):
    pass


class NonZeroOutsideBlocks(HypodiffError):
    pass


class NonPositiveLambda(HypodiffError):
    pass


# --- kernel evaluation ---

class NonPositiveTau(HypodiffError):
    pass


class IllConditionedCovariance(HypodiffError):
    pass


class DegenerateInterval(HypodiffError):
    pass


class BreakpointEvaluation(HypodiffError):
    pass


# --- Green's operators ---

class GridCoverage(HypodiffError):
    pass


class OutOfWindow(HypodiffError):
    pass


class ZeroDenominator(HypodiffError):
    pass


class ExponentTooSmall(HypodiffError):
    pass


# --- simulation ---

class BadGrid(HypodiffError):
    pass


class NonPSDDiffusion(HypodiffError):
    pass


class HorizonExceeded(HypodiffError):
    pass


class EmptyEnsemble(HypodiffError):
    pass


# --- change of variables ---

class ShapeMismatch(HypodiffError):
    pass


class NoConvergence(HypodiffError):
    pass


class MissingDerivatives(HypodiffError):
    pass


class SingularExtension(HypodiffError):
    pass


class DerivativeBoundUnachievable(HypodiffError):
    pass


# --- harness ---

class ConfigError(HypodiffError):
    pass


class ContractFailure(HypodiffError):
    pass
