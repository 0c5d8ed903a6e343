"""Time evolution under the error-corrected wave equation.

Two integrators solve the same dynamics in different representations:

* ``splitstep_strang``: second-order operator splitting on psi.  Half-step
  phase rotation by V + N(rho), full kinetic step in Fourier space, second
  half-step with N recomputed from the updated density.  The phase
  rotation leaves |psi| unchanged, so N is exact within each sub-step.
* ``madelung_rk4``: classic RK4 on the hydrodynamic pair
      d(rho)/dt = -d/dx (rho dS/dx / m)
      d(S)/dt   = -(dS/dx)^2 / 2m + (hbar^2/2m) (sqrt(rho))''/sqrt(rho)
                  - V - N(rho)
  with fourth-order centred differences.  Local stencils keep wrap-seam
  and vacuum-tail artifacts confined to edge nodes where rho vanishes;
  this integrator exists to cross-check the spectral one, not to replace
  it.

The conserved quantity is the total mean energy: the quadratic-form
energy of psi plus the error-energy shift D[rho].  The psi-energy alone is
NOT conserved once a family is active; the logs expose both so tests can
watch the exchange.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .families import (
    ErrorFamily,
    NonlinearityEvaluator,
    energy_correction_from_rho,
    nonlinearity_from_rho,
)
from .fields import (
    Grid1D,
    IntegrationError,
    MadelungFields,
    Potential,
    WaveFunction,
    fd_gradient,
    fd_second_derivative,
    momentum_estimator,
    spectral_gradient,
    to_madelung,
    to_wavefunction,
)

logger = logging.getLogger(__name__)

INTEGRATORS = ("splitstep_strang", "madelung_rk4")
KINETIC_GUARD = 0.5
NEGATIVITY_TOL = 1e-12
FLOORED_GROWTH_TOL = 0.01


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float
    t_final: float
    integrator: str = "splitstep_strang"
    snapshot_every: int = 0  # steps between stored snapshots; 0 = endpoints only
    log_every: int = 1

    def __post_init__(self):
        if self.dt <= 0.0 or self.t_final < self.dt:
            raise ValueError("need 0 < dt <= t_final")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        if self.snapshot_every < 0 or self.log_every < 1:
            raise ValueError("snapshot_every >= 0 and log_every >= 1 required")

    @property
    def n_steps(self) -> int:
        return max(1, round(self.t_final / self.dt))

    def validate_for(self, grid: Grid1D, hbar: float, mass: float) -> None:
        """Stability guard: dt times the largest kinetic eigenvalue on the
        grid must stay below half an hbar (covers RK4 as well)."""
        k_max = np.pi / grid.dx
        e_max = hbar**2 * k_max**2 / (2.0 * mass)
        if self.dt * e_max / hbar >= KINETIC_GUARD:
            raise ValueError(
                f"dt = {self.dt:g} too large: dt * E_max / hbar = "
                f"{self.dt * e_max / hbar:.3g} >= {KINETIC_GUARD}"
            )


@dataclass
class ConservationLog:
    times: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    total_energy: list = field(default_factory=list)
    quantum_energy: list = field(default_factory=list)
    correction_d: list = field(default_factory=list)

    def append(self, t, norm, total, quantum, d_value):
        self.times.append(t)
        self.norms.append(norm)
        self.total_energy.append(total)
        self.quantum_energy.append(quantum)
        self.correction_d.append(d_value)

    def as_arrays(self):
        return {name: np.asarray(getattr(self, name)) for name in
                ("times", "norms", "total_energy", "quantum_energy", "correction_d")}


@dataclass
class EvolutionResult:
    final: WaveFunction
    log: ConservationLog
    snapshots: list  # (time, WaveFunction) pairs
    final_fields: MadelungFields | None = None


@dataclass(frozen=True)
class EnergyBreakdown:
    flow: float
    potential: float
    osmotic: float
    correction_d: float

    @property
    def quantum(self) -> float:
        return self.flow + self.potential + self.osmotic

    @property
    def total(self) -> float:
        return self.quantum + self.correction_d


def mean_energy(
    fields: MadelungFields,
    potential: Potential,
    family: ErrorFamily,
    method: str = "spectral",
) -> EnergyBreakdown:
    """Hydrodynamic energy split: flow kinetic + potential + osmotic
    (log-derivative) kinetic + error-energy shift.  The first three add up
    to the quadratic-form energy of psi."""
    grid, dx = fields.grid, fields.grid.dx
    v_flow = momentum_estimator(fields, method=method)
    flow = float(np.sum(fields.rho * v_flow**2) * dx / (2.0 * fields.mass))
    pot = float(np.sum(fields.rho * potential.values) * dx)
    floor = fields.density_floor
    drho = spectral_gradient(fields.rho, grid)
    u = np.where(fields.rho > floor, drho / np.maximum(fields.rho, floor), 0.0)
    osmotic = float(
        fields.hbar**2 / (8.0 * fields.mass) * np.sum(u**2 * fields.rho) * dx
    )
    d_val = energy_correction_from_rho(
        family, fields.rho, grid, fields.hbar, fields.mass, fields.floor_rel
    )
    return EnergyBreakdown(flow, pot, osmotic, d_val)


def quantum_energy_of_psi(psi: WaveFunction, potential: Potential) -> float:
    """<psi|H|psi> with the kinetic part evaluated spectrally."""
    dpsi = spectral_gradient(psi.amplitudes, psi.grid)
    dx = psi.grid.dx
    kinetic = float(
        psi.hbar**2 / (2.0 * psi.mass) * np.sum(np.abs(dpsi) ** 2) * dx
    )
    pot = float(np.sum(potential.values * psi.density) * dx)
    return kinetic + pot


def _as_family(family_or_evaluator) -> tuple[ErrorFamily, str]:
    if isinstance(family_or_evaluator, NonlinearityEvaluator):
        return family_or_evaluator.family, family_or_evaluator.mode
    return family_or_evaluator, "analytic"


# --- split-step integrator ----------------------------------------------------

def _splitstep_raw(amp, grid, potential_values, family, dt, hbar, mass, kinetic_phase):
    rho = np.abs(amp) ** 2
    n_val = nonlinearity_from_rho(family, rho, grid, hbar, mass)
    amp = amp * np.exp(-0.5j * dt / hbar * (potential_values + n_val))
    amp = np.fft.ifft(kinetic_phase * np.fft.fft(amp))
    rho = np.abs(amp) ** 2
    n_val = nonlinearity_from_rho(family, rho, grid, hbar, mass)
    amp = amp * np.exp(-0.5j * dt / hbar * (potential_values + n_val))
    return amp


def _kinetic_phase(grid: Grid1D, dt: float, hbar: float, mass: float) -> np.ndarray:
    k = grid.wavenumbers
    return np.exp(-1j * hbar * k**2 * dt / (2.0 * mass))


def step_splitstep(
    psi: WaveFunction, potential: Potential, family, dt: float
) -> WaveFunction:
    fam, _ = _as_family(family)
    amp = _splitstep_raw(
        psi.amplitudes, psi.grid, potential.values, fam, dt, psi.hbar, psi.mass,
        _kinetic_phase(psi.grid, dt, psi.hbar, psi.mass),
    )
    return WaveFunction(psi.grid, amp, hbar=psi.hbar, mass=psi.mass,
                        normalized=psi.normalized)


# --- Madelung integrator -------------------------------------------------------

def _madelung_rhs(rho, s_values, grid, potential_values, family, hbar, mass, floor_rel):
    rho_pos = np.maximum(rho, 0.0)
    floor = floor_rel * float(rho_pos.max())
    # Below the density floor the phase carries no reliable information and the
    # quantum-potential ratio is 0/0; freeze those nodes instead of letting the
    # advection term amplify stencil noise.  The freeze weight ramps over one
    # density decade so no sharp kink forms at the floor horizon.  Mass only
    # drains into such regions for confined flows, so frozen values stay at
    # vacuum scale.
    live = rho_pos > floor
    weight = np.clip((rho_pos - floor) / (9.0 * floor), 0.0, 1.0)
    v = fd_gradient(s_values, grid) / mass
    drho_dt = -fd_gradient(rho * v, grid)
    sq = np.sqrt(rho_pos)
    curv = fd_second_derivative(sq, grid)
    qp = np.where(live, hbar**2 / (2.0 * mass) * curv / np.where(live, sq, 1.0), 0.0)
    n_val = nonlinearity_from_rho(
        family, rho_pos, grid, hbar, mass, floor_rel,
        deriv=lambda arr: fd_gradient(arr, grid),
    )
    ds_dt = -0.5 * mass * v**2 + qp - potential_values - n_val
    return weight * drho_dt, weight * ds_dt


def _madelung_rk4_raw(rho, s_values, grid, potential_values, family, dt, hbar, mass, floor_rel):
    k1r, k1s = _madelung_rhs(rho, s_values, grid, potential_values, family, hbar, mass, floor_rel)
    k2r, k2s = _madelung_rhs(rho + 0.5 * dt * k1r, s_values + 0.5 * dt * k1s,
                             grid, potential_values, family, hbar, mass, floor_rel)
    k3r, k3s = _madelung_rhs(rho + 0.5 * dt * k2r, s_values + 0.5 * dt * k2s,
                             grid, potential_values, family, hbar, mass, floor_rel)
    k4r, k4s = _madelung_rhs(rho + dt * k3r, s_values + dt * k3s,
                             grid, potential_values, family, hbar, mass, floor_rel)
    rho_new = rho + dt / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
    s_new = s_values + dt / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
    return rho_new, s_new


def _check_madelung_state(rho, initial_floored_fraction, floor_rel, step):
    if not np.all(np.isfinite(rho)):
        raise IntegrationError(f"non-finite density at step {step}", step=step)
    peak = float(np.max(rho))
    if peak <= 0.0:
        raise IntegrationError(f"density collapsed at step {step}", step=step)
    if float(np.min(rho)) < -NEGATIVITY_TOL * peak:
        raise IntegrationError(
            f"density negative beyond tolerance at step {step}", step=step
        )
    floored_fraction = float(np.mean(rho <= floor_rel * peak))
    limit = max(FLOORED_GROWTH_TOL, initial_floored_fraction + FLOORED_GROWTH_TOL)
    if floored_fraction > limit:
        raise IntegrationError(
            f"floored region covers {floored_fraction:.1%} of the grid at step "
            f"{step} (limit {limit:.1%}); likely node formation", step=step,
        )
    return np.maximum(rho, 0.0)


def step_madelung(
    fields: MadelungFields, potential: Potential, family, dt: float
) -> MadelungFields:
    """One RK4 step on (rho, S).  S is handled as raw total values; any
    wrap-seam kink stays edge-local thanks to the FD stencils."""
    fam, _ = _as_family(family)
    initial_fraction = float(np.mean(fields.floored_mask))
    rho, s_new = _madelung_rk4_raw(
        fields.rho, fields.s_total(), fields.grid, potential.values, fam, dt,
        fields.hbar, fields.mass, fields.floor_rel,
    )
    rho = _check_madelung_state(rho, initial_fraction, fields.floor_rel, step=1)
    return MadelungFields(
        fields.grid, rho, s_new, hbar=fields.hbar, mass=fields.mass,
        s_slope=0.0, floor_rel=fields.floor_rel, normalized=False,
    )


# --- driver --------------------------------------------------------------------

def evolve(
    initial: WaveFunction,
    potential: Potential,
    family,
    config: EvolutionConfig,
) -> EvolutionResult:
    fam, _ = _as_family(family)
    config.validate_for(initial.grid, initial.hbar, initial.mass)
    if config.integrator == "splitstep_strang":
        return _evolve_splitstep(initial, potential, fam, config)
    return _evolve_madelung(initial, potential, fam, config)


def _log_state(log, t, norm, quantum, d_value):
    log.append(t, norm, quantum + d_value, quantum, d_value)


def _evolve_splitstep(psi0, potential, family, config):
    grid, hbar, mass = psi0.grid, psi0.hbar, psi0.mass
    dx = grid.dx
    kin = _kinetic_phase(grid, config.dt, hbar, mass)
    amp = np.array(psi0.amplitudes)
    snapshots = []
    log = ConservationLog()

    def record(step, amp):
        t = step * config.dt
        rho = np.abs(amp) ** 2
        norm = float(np.sum(rho) * dx)
        dpsi = spectral_gradient(amp, grid)
        quantum = float(hbar**2 / (2.0 * mass) * np.sum(np.abs(dpsi) ** 2) * dx
                        + np.sum(potential.values * rho) * dx)
        d_val = energy_correction_from_rho(family, rho, grid, hbar, mass)
        _log_state(log, t, norm, quantum, d_val)

    record(0, amp)
    if config.snapshot_every:
        snapshots.append((0.0, WaveFunction(grid, amp, hbar=hbar, mass=mass)))
    for step in range(1, config.n_steps + 1):
        amp = _splitstep_raw(amp, grid, potential.values, family, config.dt,
                             hbar, mass, kin)
        if not np.all(np.isfinite(amp)):
            raise IntegrationError(f"non-finite amplitudes at step {step}", step=step)
        if step % config.log_every == 0 or step == config.n_steps:
            record(step, amp)
        if config.snapshot_every and (step % config.snapshot_every == 0
                                      or step == config.n_steps):
            snapshots.append(
                (step * config.dt, WaveFunction(grid, amp, hbar=hbar, mass=mass))
            )
    final = WaveFunction(grid, amp, hbar=hbar, mass=mass)
    logger.info("splitstep run done: %d steps, norm drift %.3e",
                config.n_steps, abs(log.norms[-1] - log.norms[0]))
    return EvolutionResult(final, log, snapshots)


def _evolve_madelung(psi0, potential, family, config):
    fields0 = to_madelung(psi0, max_floored_fraction=1.0)
    grid, hbar, mass = fields0.grid, fields0.hbar, fields0.mass
    dx = grid.dx
    floor_rel = fields0.floor_rel
    rho = np.array(fields0.rho)
    s_values = fields0.s_total()
    initial_fraction = float(np.mean(fields0.floored_mask))
    snapshots = []
    log = ConservationLog()

    def wrap(rho, s_values):
        return MadelungFields(grid, rho, s_values, hbar=hbar, mass=mass,
                              s_slope=0.0, floor_rel=floor_rel, normalized=False)

    def record(step, rho, s_values):
        t = step * config.dt
        norm = float(np.sum(rho) * dx)
        v = fd_gradient(s_values, grid)
        flow = float(np.sum(rho * v**2) * dx / (2.0 * mass))
        pot = float(np.sum(rho * potential.values) * dx)
        sq = np.sqrt(np.maximum(rho, 0.0))
        dsq = fd_gradient(sq, grid)
        osmotic = float(hbar**2 / (2.0 * mass) * np.sum(dsq**2) * dx)
        d_val = energy_correction_from_rho(family, rho, grid, hbar, mass, floor_rel)
        _log_state(log, t, norm, flow + pot + osmotic, d_val)

    record(0, rho, s_values)
    if config.snapshot_every:
        snapshots.append((0.0, to_wavefunction(wrap(rho, s_values))))
    for step in range(1, config.n_steps + 1):
        rho, s_values = _madelung_rk4_raw(
            rho, s_values, grid, potential.values, family, config.dt,
            hbar, mass, floor_rel,
        )
        if not np.all(np.isfinite(s_values)):
            raise IntegrationError(f"non-finite phase at step {step}", step=step)
        rho = _check_madelung_state(rho, initial_fraction, floor_rel, step)
        if step % config.log_every == 0 or step == config.n_steps:
            record(step, rho, s_values)
        if config.snapshot_every and (step % config.snapshot_every == 0
                                      or step == config.n_steps):
            snapshots.append((step * config.dt, to_wavefunction(wrap(rho, s_values))))
    final_fields = wrap(rho, s_values)
    logger.info("madelung run done: %d steps", config.n_steps)
    return EvolutionResult(
        to_wavefunction(final_fields), log, snapshots, final_fields=final_fields
    )
