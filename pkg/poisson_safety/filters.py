"""Control barrier function safety filters on sampled safety frames

Both filters enforce a single affine constraint g . u >= rhs on the command, so
the minimum-norm correction is the closed-form projection onto a half-space.
"""

import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .errors import InfeasibleConstraintError
from .model import FilterParams
from .safety import Probe

__all__ = [
    "FilterParams",
    "FilterResult",
    "BackstepTerms",
    "sontag_lambda",
    "sontag_k1",
    "project_halfspace",
    "filter_r1",
    "backstep_eval",
    "filter_r2",
]


@dataclass(frozen=True, eq=False)
class FilterResult:
    """Filtered command

    Attributes:
        command: Velocity (single integrator) or acceleration (double integrator)
        slack: Constraint value hdot + gamma * h at the command, non-negative on success
        active: Whether the nominal command was modified
        h: Safety function at the query state
        h_B: Backstepping safety function at the query state, double integrator only
    """

    command: np.ndarray
    slack: float
    active: bool
    h: float
    h_B: float | None = None


@dataclass(frozen=True, eq=False)
class BackstepTerms:
    """Backstepping safety function and its derivatives at one state

    Attributes:
        h_B: h - |ydot - k1|^2 / (2 mu1)
        grad_y: Gradient of h_B with respect to position
        grad_ydot: Gradient of h_B with respect to velocity
        k1: Sontag velocity at the position
        phi1: Jacobian of k1 applied to ydot
        dk1_dy: Jacobian of k1 with respect to position
    """

    h_B: float
    grad_y: np.ndarray
    grad_ydot: np.ndarray
    k1: np.ndarray
    phi1: np.ndarray
    dk1_dy: np.ndarray


def sontag_lambda(a: float, b: float, sigma: float) -> tuple[float, float, float]:
    """Sontag gain (-a + sqrt(a^2 + sigma b^2)) / (2 b) and its partial derivatives

    Args:
        a: gamma * h
        b: |Dh|^2
        sigma: Sontag parameter

    Returns:
        Tuple of (lambda, d lambda / d a, d lambda / d b), all 0 when b = 0
    """
    if b <= 0:
        return 0.0, 0.0, 0.0
    s = math.sqrt(a * a + sigma * b * b)
    if a >= 0:
        # rationalized form avoids cancellation of -a + s
        lam = sigma * b / (2 * (s + a))
        dlam_da = -sigma * b / (2 * s * (s + a))
    else:
        lam = (s - a) / (2 * b)
        dlam_da = (a / s - 1) / (2 * b)
    dlam_db = sigma / (2 * s) - lam / b
    return lam, dlam_da, dlam_db


def sontag_k1(probe: Probe, params: FilterParams) -> np.ndarray:
    """Sontag velocity lambda(gamma h, |Dh|^2) Dh

    Satisfies Dh . k1 + gamma h > 0 wherever Dh is nonzero.
    """
    gradient = probe.gradient
    lam, _, _ = sontag_lambda(params.gamma * probe.h, float(gradient @ gradient), params.sigma)
    return lam * gradient


def project_halfspace(u_nom: npt.ArrayLike, g: npt.ArrayLike, rhs: float) -> tuple[np.ndarray, bool]:
    """Closest point to u_nom satisfying g . u >= rhs

    Args:
        u_nom: Nominal command
        g: Constraint gradient
        rhs: Constraint bound

    Returns:
        Tuple of (command, whether the constraint was active)

    Raises:
        InfeasibleConstraintError: If g is zero and the constraint does not hold
    """
    u_nom = np.asarray(u_nom, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    gap = float(g @ u_nom) - rhs
    if gap >= 0:
        return u_nom.copy(), False
    norm2 = float(g @ g)
    if norm2 == 0:
        raise InfeasibleConstraintError(f"Constraint is violated by {-gap:.3e} and does not depend on the command")
    return u_nom - gap / norm2 * g, True


def filter_r1(probe: Probe, k_nom: npt.ArrayLike, params: FilterParams) -> FilterResult:
    """Single integrator filter: min |u - k_nom|^2 s.t. dh/dt + Dh . u >= -gamma h

    Args:
        probe: Safety function sample at the current position
        k_nom: Nominal velocity
        params: Filter gains; use_dhdt toggles the dh/dt term

    Returns:
        Filter result with a velocity command

    Raises:
        InfeasibleConstraintError: If Dh is zero and the constraint does not hold
    """
    dh_dt = probe.dh_dt if params.use_dhdt else 0.0
    rhs = -params.gamma * probe.h - dh_dt
    u, active = project_halfspace(k_nom, probe.gradient, rhs)
    slack = dh_dt + float(probe.gradient @ u) + params.gamma * probe.h
    return FilterResult(command=u, slack=slack, active=active, h=probe.h)


def backstep_eval(probe: Probe, ydot: npt.ArrayLike, params: FilterParams) -> BackstepTerms:
    """Backstepping safety function h_B for the double integrator

    Args:
        probe: Safety function sample including the Hessian
        ydot: Current velocity
        params: Filter gains

    Returns:
        h_B, its gradients, k1 and Phi1 = (dk1/dy) ydot
    """
    ydot = np.asarray(ydot, dtype=np.float64)
    gradient, hessian = probe.gradient, probe.hessian
    lam, dlam_da, dlam_db = sontag_lambda(params.gamma * probe.h, float(gradient @ gradient), params.sigma)

    k1 = lam * gradient
    dlam_dy = dlam_da * params.gamma * gradient + dlam_db * 2.0 * (hessian @ gradient)
    dk1_dy = lam * hessian + np.outer(gradient, dlam_dy)

    error = ydot - k1
    h_B = probe.h - float(error @ error) / (2.0 * params.mu1)
    return BackstepTerms(
        h_B=h_B,
        grad_y=gradient + dk1_dy.T @ error / params.mu1,
        grad_ydot=-error / params.mu1,
        k1=k1,
        phi1=dk1_dy @ ydot,
        dk1_dy=dk1_dy,
    )


def filter_r2(probe: Probe, ydot: npt.ArrayLike, w_nom: npt.ArrayLike, params: FilterParams) -> FilterResult:
    """Double integrator filter enforcing dh_B/dt >= -gamma h_B

    dh_B/dt = Dh . ydot - (ydot - k1) . (w - Phi1) / mu1 is affine in the
    acceleration w, so the filter projects w_nom onto one half-space.

    Args:
        probe: Safety function sample at the current position
        ydot: Current velocity
        w_nom: Nominal acceleration
        params: Filter gains

    Returns:
        Filter result with an acceleration command

    Raises:
        InfeasibleConstraintError: If ydot equals k1 and the constant constraint fails
    """
    ydot = np.asarray(ydot, dtype=np.float64)
    terms = backstep_eval(probe, ydot, params)
    error = ydot - terms.k1
    g = -error / params.mu1
    drift = float(probe.gradient @ ydot) + float(error @ terms.phi1) / params.mu1
    w, active = project_halfspace(w_nom, g, -params.gamma * terms.h_B - drift)
    slack = drift + float(g @ w) + params.gamma * terms.h_B
    return FilterResult(command=w, slack=slack, active=active, h=probe.h, h_B=terms.h_B)
