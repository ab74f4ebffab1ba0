"""Exception taxonomy shared across the package.

Every error raised on purpose by this package derives from QigError, so callers
(including the command line driver) can tell deliberate domain failures apart
from plain bugs.
"""
from __future__ import annotations


class QigError(Exception):
    """Base class for all deliberate failures in this package."""


# ---------------------------------------------------------------------------
# matrix domain


class NotHermitian(QigError):
    """Matrix is not Hermitian within tolerance."""


class NotPositive(QigError):
    """Matrix has an eigenvalue below the allowed slack."""


class TraceMismatch(QigError):
    """Trace differs from the required value beyond tolerance."""


class NotFaithful(QigError):
    """State has (numerically) vanishing eigenvalues where support is required."""


class NotPure(QigError):
    """State is not rank one within tolerance."""


class DimensionMismatch(QigError):
    """Operands live on spaces of different dimension."""


class KrausDefect(QigError):
    """Kraus family is not trace preserving within tolerance."""


class BadFactorization(QigError):
    """Requested tensor factorization does not match the matrix dimension."""


class DomainError(QigError):
    """Scalar function evaluated outside its domain."""


# ---------------------------------------------------------------------------
# numerics


class NumericalBreakdown(QigError):
    """A finite-difference or linear-algebra step lost all significant digits."""


class NonSmoothDistance(QigError):
    """Distance functional looks non-differentiable where derivatives were taken."""


class NonDifferentiablePoint(QigError):
    """Gradient requested at a point where finite differences do not settle."""


class NewtonDivergence(QigError):
    """Newton iteration left the trust region or stopped making progress."""


class NonConvergence(QigError):
    """Iterative solver hit its iteration cap before reaching tolerance."""


class BlowUp(QigError):
    """Trajectory escaped the configured bounds."""


class StepRejected(QigError):
    """Integrator step kept violating state constraints after maximal halving."""


class DependentObservables(QigError):
    """Observable family is linearly dependent (including the constant)."""


class Infeasible(QigError):
    """Constraint set cannot be met from the given state."""


class ConstraintSolveFailure(QigError):
    """Mixed-coordinate constraint solve did not converge."""


class SingularControlBlock(QigError):
    """Eliminated block is singular or too ill-conditioned to invert."""


class ZeroCoefficient(QigError):
    """Rescaling by a contraction coefficient that is zero or negative."""


# ---------------------------------------------------------------------------
# modular calculus


class NotRepresented(QigError):
    """Superoperator is not the left representation of any matrix."""


class ConePullbackFailure(QigError):
    """Evolved vector left the positive cone beyond tolerance."""


# ---------------------------------------------------------------------------
# histories and propagators


class BadTimes(QigError):
    """History times are not strictly increasing."""


class GridMismatch(QigError):
    """Two histories were combined on different time grids."""


class ZeroOverlap(QigError):
    """Consecutive path vectors are (numerically) orthogonal; phase undefined."""


class QuadratureTooCoarse(QigError):
    """Coherent-state quadrature fails to resolve the identity."""


class BranchDomain(QigError):
    """Prior density base is nonpositive where a fractional power is needed."""


class InvalidPerturbedState(QigError):
    """Path perturbation left the state space even after shrinking."""


# ---------------------------------------------------------------------------
# command line driver


class ConfigInvalid(QigError):
    """Run configuration failed validation; message names the offending field."""


class NumericalFailure(QigError):
    """Engine failure surfaced at the command line."""


class IoError(QigError):
    """Report could not be written."""
