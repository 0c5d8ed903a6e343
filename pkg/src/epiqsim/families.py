"""Estimation-error families and the functionals they induce.

A family assigns to every density a per-node error profile
f(rho, drho/dx).  Three derived objects drive everything else here:

* the energy correction
      D[rho] = integral [ (hbar^2/4m) (rho'/rho) f + (hbar^2/8m) f^2 ] rho dx,
* the induced nonlinear potential N(rho) = dD/drho (a variational
  derivative; this is what multiplies psi in the wave equation),
* the momentum-error correction C[rho] = (hbar^2/4) integral
  (2 (rho'/rho) f + f^2) rho dx, equal to 2 m D for a single particle.

``nonlinearity_N`` offers an analytic route (closed form for the named
families, exact variational calculus for expression-tree families) and a
numeric route (central-difference bump of D at each node) that serves as
an independent oracle for the analytic one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import expressions
from .fields import MadelungFields, spectral_gradient


class FamilyError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorFamily:
    def label(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Zero(ErrorFamily):
    """No systematic error profile; dynamics reduce to the linear equation."""

    def label(self) -> str:
        return "zero"


@dataclass(frozen=True)
class PowerLaw(ErrorFamily):
    """f = lam * rho^alpha.  lam carries dimension 1/length (alpha = 1/2)."""

    lam: float
    alpha: float

    def __post_init__(self):
        if self.alpha == 0:
            raise FamilyError("alpha must be nonzero (alpha = 0 is a constant profile)")
        if not np.isfinite(self.lam) or not np.isfinite(self.alpha):
            raise FamilyError("non-finite family parameters")

    def label(self) -> str:
        return f"powerlaw:{self.lam:g}:{self.alpha:g}"


@dataclass(frozen=True)
class GradPower(ErrorFamily):
    """f = lam * (rho'/rho)^beta for integer beta >= 2.

    Integer exponents keep odd powers of the (sign-changing) log-derivative
    well defined; lam carries dimension length^(beta-1).
    """

    lam: float
    beta: int

    def __post_init__(self):
        if int(self.beta) != self.beta or self.beta < 2:
            raise FamilyError(f"beta must be an integer >= 2, got {self.beta!r}")
        object.__setattr__(self, "beta", int(self.beta))
        if not np.isfinite(self.lam):
            raise FamilyError("non-finite family parameters")

    def label(self) -> str:
        return f"gradpower:{self.lam:g}:{self.beta:d}"


@dataclass(frozen=True)
class Custom(ErrorFamily):
    """f given as an expression over the terminals rho and drho."""

    expression: str

    @cached_property
    def tree(self) -> expressions.Node:
        return expressions.parse_expression(self.expression)

    @cached_property
    def d_rho(self) -> expressions.Node:
        return expressions.differentiate(self.tree, "rho")

    @cached_property
    def d_drho(self) -> expressions.Node:
        return expressions.differentiate(self.tree, "drho")

    def label(self) -> str:
        return f"custom:{self.expression}"


def _clamped_parts_raw(rho: np.ndarray, grid, floor_rel: float):
    floor = floor_rel * float(np.max(rho))
    floored = rho <= floor
    rho_c = np.maximum(rho, floor)
    drho = spectral_gradient(rho, grid)
    drho_c = np.where(floored, 0.0, drho)
    u = np.where(floored, 0.0, drho / rho_c)
    return rho_c, drho_c, u, floored


def _clamped_parts(fields: MadelungFields):
    """(rho_c, drho_c, u): density floored from below, gradient and
    log-derivative zeroed on floored nodes."""
    return _clamped_parts_raw(fields.rho, fields.grid, fields.floor_rel)


def family_f_values(family: ErrorFamily, rho_c, drho_c, u) -> np.ndarray:
    """Pointwise error profile; shape-agnostic (works on joint grids)."""
    if isinstance(family, Zero):
        return np.zeros_like(rho_c)
    if isinstance(family, PowerLaw):
        return family.lam * np.power(rho_c, family.alpha)
    if isinstance(family, GradPower):
        return family.lam * u**family.beta
    if isinstance(family, Custom):
        out = expressions.evaluate(family.tree, rho_c, drho_c)
        return np.broadcast_to(np.asarray(out, dtype=float), rho_c.shape).copy()
    raise FamilyError(f"unknown family {family!r}")


def eval_f(family: ErrorFamily, fields: MadelungFields) -> np.ndarray:
    rho_c, drho_c, u, _ = _clamped_parts(fields)
    return family_f_values(family, rho_c, drho_c, u)


def correction_integrand(family: ErrorFamily, fields: MadelungFields) -> np.ndarray:
    """(2 (rho'/rho) f + f^2) rho per node; zero on floored nodes."""
    rho_c, drho_c, u, floored = _clamped_parts(fields)
    f = family_f_values(family, rho_c, drho_c, u)
    integrand = (2.0 * u * f + f**2) * fields.rho
    return np.where(floored, 0.0, integrand)


def energy_correction_from_rho(
    family: ErrorFamily,
    rho: np.ndarray,
    grid,
    hbar: float,
    mass: float,
    floor_rel: float = 1e-12,
) -> float:
    if isinstance(family, Zero):
        return 0.0
    rho_c, drho_c, u, floored = _clamped_parts_raw(rho, grid, floor_rel)
    f = family_f_values(family, rho_c, drho_c, u)
    integrand = (
        (hbar**2 / (4.0 * mass)) * u * f + (hbar**2 / (8.0 * mass)) * f**2
    ) * rho
    integrand = np.where(floored, 0.0, integrand)
    return float(np.sum(integrand) * grid.dx)


def energy_correction_D(family: ErrorFamily, fields: MadelungFields) -> float:
    """Mean-energy shift produced by the error profile."""
    return energy_correction_from_rho(
        family, fields.rho, fields.grid, fields.hbar, fields.mass, fields.floor_rel
    )


def uncertainty_correction_C(family: ErrorFamily, fields: MadelungFields) -> float:
    """Additive correction to the momentum mean-square estimation error."""
    if isinstance(family, Zero):
        return 0.0
    integrand = correction_integrand(family, fields)
    return float((fields.hbar**2 / 4.0) * np.sum(integrand) * fields.grid.dx)


# --- induced nonlinear potential ---------------------------------------------

def nonlinearity_from_parts(
    family: ErrorFamily,
    rho_c: np.ndarray,
    drho_c: np.ndarray,
    u: np.ndarray,
    deriv,
    hbar: float,
    mass: float,
) -> np.ndarray:
    """Variational derivative of D as a pointwise field.

    ``deriv`` maps a nodal array to its spatial derivative along the
    relevant axis, so the same formulas serve single grids and one axis of
    a joint grid.  For the named families this reduces to their closed
    forms; for expression families the Euler-Lagrange form

        N = dG/drho - d/dx (dG/d(drho)),
        G(rho, drho) = (hbar^2/4m) drho f + (hbar^2/8m) rho f^2

    is assembled from the symbolic partials of f.
    """
    if isinstance(family, Zero):
        return np.zeros_like(rho_c)
    if isinstance(family, PowerLaw):
        omega = hbar**2 * family.lam**2 * (2.0 * family.alpha + 1.0) / (8.0 * mass)
        return omega * np.power(rho_c, 2.0 * family.alpha)
    if isinstance(family, GradPower):
        lam, beta = family.lam, family.beta
        c1 = hbar**2 * lam / (4.0 * mass)
        c2 = hbar**2 * lam**2 / (8.0 * mass)
        t1 = -beta * u ** (beta + 1) - (beta + 1.0) * deriv(u**beta)
        t2 = -(2.0 * beta - 1.0) * u ** (2 * beta) - 2.0 * beta * deriv(
            u ** (2 * beta - 1)
        )
        return c1 * t1 + c2 * t2
    if isinstance(family, Custom):
        f = expressions.evaluate(family.tree, rho_c, drho_c)
        f_r = expressions.evaluate(family.d_rho, rho_c, drho_c)
        f_d = expressions.evaluate(family.d_drho, rho_c, drho_c)
        f = np.broadcast_to(np.asarray(f, dtype=float), rho_c.shape)
        f_r = np.broadcast_to(np.asarray(f_r, dtype=float), rho_c.shape)
        f_d = np.broadcast_to(np.asarray(f_d, dtype=float), rho_c.shape)
        ca = hbar**2 / (4.0 * mass)
        cb = hbar**2 / (8.0 * mass)
        dG_drho = ca * drho_c * f_r + cb * (f**2 + 2.0 * rho_c * f * f_r)
        dG_dd = ca * (f + drho_c * f_d) + 2.0 * cb * rho_c * f * f_d
        return dG_drho - deriv(dG_dd)
    raise FamilyError(f"unknown family {family!r}")


def nonlinearity_from_rho(
    family: ErrorFamily,
    rho: np.ndarray,
    grid,
    hbar: float,
    mass: float,
    floor_rel: float = 1e-12,
    deriv=None,
) -> np.ndarray:
    """Analytic N(rho) straight from a density array.

    Low-overhead variant used inside the time integrators (called twice
    per step).  ``deriv`` overrides the outer spatial derivative (the
    Madelung integrator passes its local finite-difference stencil)."""
    if isinstance(family, Zero):
        return np.zeros_like(rho)
    rho_c, drho_c, u, floored = _clamped_parts_raw(rho, grid, floor_rel)
    if deriv is None:
        deriv = lambda arr: spectral_gradient(arr, grid)
    out = nonlinearity_from_parts(family, rho_c, drho_c, u, deriv, hbar, mass)
    return np.where(floored, 0.0, out)


def nonlinearity_N(
    family: ErrorFamily, fields: MadelungFields, mode: str = "analytic"
) -> np.ndarray:
    """Nonlinear potential N(rho) per node; zero where rho is floored."""
    if mode == "analytic":
        return nonlinearity_from_rho(
            family, fields.rho, fields.grid, fields.hbar, fields.mass,
            fields.floor_rel,
        )
    if mode == "numeric":
        return _nonlinearity_numeric(family, fields)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class NonlinearityEvaluator:
    family: ErrorFamily
    mode: str = "analytic"

    def values(self, fields: MadelungFields) -> np.ndarray:
        return nonlinearity_N(self.family, fields, mode=self.mode)


BUMP_EPS_REL = 1e-6


def functional_derivative_numeric(
    functional, fields: MadelungFields, node: int, eps: float | None = None
) -> float:
    """Central-difference variational derivative of a density functional.

    Bumps rho at one node by +/- eps and divides the response by
    2 eps dx.  The bump breaks normalization on purpose; the functional
    must accept unnormalized fields.
    """
    if eps is None:
        eps = BUMP_EPS_REL * float(np.max(fields.rho))
    if fields.rho[node] - eps < 0.0:
        raise ValueError(
            f"node {node} too close to vacuum for a +/-{eps:g} density bump"
        )
    rho_plus = np.array(fields.rho)
    rho_plus[node] += eps
    rho_minus = np.array(fields.rho)
    rho_minus[node] -= eps
    f_plus = functional(fields.with_rho(rho_plus))
    f_minus = functional(fields.with_rho(rho_minus))
    return (f_plus - f_minus) / (2.0 * eps * fields.grid.dx)


def _nonlinearity_numeric(family: ErrorFamily, fields: MadelungFields) -> np.ndarray:
    eps = BUMP_EPS_REL * float(np.max(fields.rho))
    ok = fields.rho > max(10.0 * eps, fields.density_floor)
    out = np.zeros(fields.grid.n_points)
    functional = lambda flds: energy_correction_D(family, flds)
    for k in np.flatnonzero(ok):
        out[k] = functional_derivative_numeric(functional, fields, int(k), eps)
    return out


def nonlinearity_from_C(family: ErrorFamily, fields: MadelungFields) -> np.ndarray:
    """Numeric (1/2m) dC/drho; must coincide with the potential from D."""
    eps = BUMP_EPS_REL * float(np.max(fields.rho))
    ok = fields.rho > max(10.0 * eps, fields.density_floor)
    out = np.zeros(fields.grid.n_points)
    functional = lambda flds: uncertainty_correction_C(family, flds)
    scale = 1.0 / (2.0 * fields.mass)
    for k in np.flatnonzero(ok):
        out[k] = scale * functional_derivative_numeric(functional, fields, int(k), eps)
    return out


# --- compact text form (CLI / manifests) -------------------------------------

def family_from_label(label: str) -> ErrorFamily:
    """Parse 'zero' | 'powerlaw:LAM:ALPHA' | 'gradpower:LAM:BETA' |
    'custom:EXPR'."""
    kind, _, rest = label.partition(":")
    kind = kind.strip().lower()
    if kind == "zero":
        if rest:
            raise FamilyError("zero takes no parameters")
        return Zero()
    if kind == "powerlaw":
        try:
            lam_s, alpha_s = rest.split(":")
            return PowerLaw(lam=float(lam_s), alpha=float(alpha_s))
        except (ValueError, TypeError) as exc:
            raise FamilyError(f"bad powerlaw spec {label!r}") from exc
    if kind == "gradpower":
        try:
            lam_s, beta_s = rest.split(":")
            beta = float(beta_s)
            return GradPower(lam=float(lam_s), beta=int(beta))
        except FamilyError:
            raise
        except (ValueError, TypeError) as exc:
            raise FamilyError(f"bad gradpower spec {label!r}") from exc
    if kind == "custom":
        if not rest:
            raise FamilyError("custom requires an expression")
        fam = Custom(expression=rest)
        fam.tree  # validate eagerly
        return fam
    raise FamilyError(f"unknown family kind {kind!r}")


def gaussian_correction_c(
    family: ErrorFamily, sigma_q: float, hbar: float = 1.0
) -> float:
    """Closed-form C for a width-sigma_q Gaussian density.

    The cross term 2 (rho'/rho) f rho integrates to zero by parity for the
    power-law profile and contributes Gaussian moments for the
    gradient-power one.
    """
    if isinstance(family, Zero):
        return 0.0
    if isinstance(family, PowerLaw):
        if 2.0 * family.alpha + 1.0 <= 0.0:
            raise FamilyError("closed form needs 2 alpha + 1 > 0")
        norm_power = (2.0 * np.pi * sigma_q**2) ** (-family.alpha)
        return float(
            hbar**2 * family.lam**2 / 4.0 * norm_power
            / math.sqrt(2.0 * family.alpha + 1.0)
        )
    if isinstance(family, GradPower):
        lam, beta = family.lam, family.beta
        first = 2.0 * lam * _gaussian_u_moment(beta + 1, sigma_q)
        second = lam**2 * _gaussian_u_moment(2 * beta, sigma_q)
        return float(hbar**2 / 4.0 * (first + second))
    raise FamilyError(f"no closed form for {family!r}")


def _gaussian_u_moment(m: int, sigma_q: float) -> float:
    """integral (rho'/rho)^m rho dx for a Gaussian: (m-1)!! / sigma^m for
    even m, zero for odd m."""
    if m % 2 == 1:
        return 0.0
    return math.prod(range(m - 1, 0, -2)) / sigma_q**m
