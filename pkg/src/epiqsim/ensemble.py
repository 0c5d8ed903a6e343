"""Monte Carlo realization of the momentum-estimate decomposition.

Positions are drawn from the density by inverse-CDF sampling on the grid;
each sample also draws the global fluctuation variable (mean zero, mean
square hbar^2) and assembles the momentum value

    p = dS(q) + (xi/2) * (rho'/rho)(q) + (xi/2) * f(q).

All statistical checks use standard-error bands rather than fixed tolerances,
because Monte Carlo convergence is O(n^{-1/2}).  Sampling is reproducible:
one seed fixes the whole stream (positions first, then fluctuations).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import MadelungFields, momentum_estimator
from .families import ErrorFamily, _clamped_parts, family_f_values

XI_KINDS = ("two_point", "gaussian")
# Bins with fewer samples than this carry no statistical weight.
MIN_BIN_COUNT = 100
# Gate width in standard errors; false-failure probability < 1e-5 per gate.
SE_GATE = 5.0


class UnderpopulatedBinError(ValueError):
    pass


@dataclass(frozen=True)
class XiDistribution:
    """Distribution of the global fluctuation variable.

    ``two_point`` puts mass 1/2 on each of +/-hbar (the minimal distribution
    with the required first two moments); ``gaussian`` has mean 0 and standard
    deviation hbar.  Only those two moments enter any derived quantity, which
    the test suite verifies empirically.
    """

    kind: str = "two_point"
    hbar: float = 1.0

    def __post_init__(self):
        if self.kind not in XI_KINDS:
            raise ValueError(f"xi kind must be one of {XI_KINDS}, got {self.kind!r}")
        if self.hbar <= 0.0:
            raise ValueError("hbar must be positive")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "two_point":
            return np.where(rng.random(n) < 0.5, -self.hbar, self.hbar)
        return self.hbar * rng.standard_normal(n)


@dataclass(frozen=True)
class EnsembleSamples:
    """Structure-of-arrays sample collection: one (q, xi, p) row per draw."""

    q: np.ndarray
    xi: np.ndarray
    p: np.ndarray

    @property
    def n(self) -> int:
        return len(self.q)


def _sampling_cdf(fields: MadelungFields) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-linear CDF over cell edges; floored cells carry zero mass."""
    grid = fields.grid
    weights = np.where(fields.floored_mask, 0.0, fields.rho) * grid.dx
    edges = np.concatenate((grid.x - 0.5 * grid.dx, [grid.x[-1] + 0.5 * grid.dx]))
    cdf = np.concatenate(([0.0], np.cumsum(weights)))
    cdf /= cdf[-1]
    return edges, cdf


def _field_interpolators(fields: MadelungFields, family: ErrorFamily):
    """Node arrays (grad_s, u + f) for per-sample linear interpolation."""
    rho_c, drho_c, u, floored = _clamped_parts(fields)
    f = np.where(floored, 0.0, family_f_values(family, rho_c, drho_c, u))
    return momentum_estimator(fields), u + f


def draw_samples(
    fields: MadelungFields,
    family: ErrorFamily,
    xi_dist: XiDistribution,
    n: int,
    seed: int,
) -> EnsembleSamples:
    """Draw n reproducible samples of (position, fluctuation, momentum value).

    Positions come from inverse-CDF sampling of the density with uniform mass
    inside each cell; floored cells are excluded, so no sample ever lands
    where the log-density gradient is unreliable.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    edges, cdf = _sampling_cdf(fields)
    q = np.interp(rng.random(n), cdf, edges)
    xi = xi_dist.draw(rng, n)
    grad_s, err_half = _field_interpolators(fields, family)
    x = fields.grid.x
    p = np.interp(q, x, grad_s) + 0.5 * xi * np.interp(q, x, err_half)
    return EnsembleSamples(q=q, xi=xi, p=p)


@dataclass(frozen=True)
class MsErrorEstimate:
    value: float
    se: float


def empirical_ms_error(samples: EnsembleSamples, fields: MadelungFields) -> MsErrorEstimate:
    """Sample mean square of p - dS(q), with its standard error."""
    grad_s = momentum_estimator(fields)
    err = samples.p - np.interp(samples.q, fields.grid.x, grad_s)
    sq = err**2
    n = samples.n
    return MsErrorEstimate(
        value=float(np.mean(sq)),
        se=float(np.std(sq, ddof=1) / np.sqrt(n)),
    )


def conditional_mean_p(samples: EnsembleSamples, q_bin: tuple[float, float]) -> float:
    """Average momentum value among samples with q in [q_bin[0], q_bin[1])."""
    lo, hi = q_bin
    mask = (samples.q >= lo) & (samples.q < hi)
    count = int(np.sum(mask))
    if count < MIN_BIN_COUNT:
        raise UnderpopulatedBinError(
            f"bin [{lo}, {hi}) holds {count} samples; need {MIN_BIN_COUNT}"
        )
    return float(np.mean(samples.p[mask]))


@dataclass(frozen=True)
class ConditionalMeanTable:
    centers: np.ndarray
    mean_p: np.ndarray
    se: np.ndarray
    counts: np.ndarray
    populated: np.ndarray  # bool per bin; underpopulated bins are flagged off


def conditional_mean_table(
    samples: EnsembleSamples, n_bins: int = 50
) -> ConditionalMeanTable:
    """Binned conditional mean of p given q over the sampled range."""
    lo = float(np.min(samples.q))
    hi = float(np.max(samples.q)) * (1.0 + 1e-12)
    edges = np.linspace(lo, hi, n_bins + 1)
    idx = np.clip(np.digitize(samples.q, edges) - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    sums = np.bincount(idx, weights=samples.p, minlength=n_bins)
    sq_sums = np.bincount(idx, weights=samples.p**2, minlength=n_bins)
    populated = counts >= MIN_BIN_COUNT
    safe = np.maximum(counts, 1)
    mean_p = sums / safe
    var = np.maximum(sq_sums / safe - mean_p**2, 0.0)
    se = np.sqrt(var / safe)
    return ConditionalMeanTable(
        centers=0.5 * (edges[:-1] + edges[1:]),
        mean_p=mean_p,
        se=se,
        counts=counts,
        populated=populated,
    )


@dataclass(frozen=True)
class OptimalityRow:
    """One perturbed estimator against the baseline phase gradient."""

    ms_error: float
    margin_observed: float
    margin_predicted: float
    margin_se: float
    within_gate: bool
    strictly_larger: bool


def predicted_margin(fields: MadelungFields, delta_t: np.ndarray) -> float:
    """Analytic MS-error increase of estimator dS + delta_t over dS."""
    return float(np.sum(delta_t**2 * fields.rho) * fields.grid.dx)


def verify_optimal_estimator(
    fields: MadelungFields,
    family: ErrorFamily,
    perturbations: list[np.ndarray],
    n: int,
    xi_dist: XiDistribution | None = None,
    seed: int = 0,
) -> list[OptimalityRow]:
    """Empirical MS error of each perturbed estimator, with paired margins.

    The margin of dS + delta_t over dS is computed per sample (the pairing
    cancels the shared fluctuation variance), so its standard error reflects
    only the perturbation term and the gate stays tight.
    """
    if xi_dist is None:
        xi_dist = XiDistribution(hbar=fields.hbar)
    samples = draw_samples(fields, family, xi_dist, n, seed)
    x = fields.grid.x
    grad_s_at_q = np.interp(samples.q, x, momentum_estimator(fields))
    base_err = samples.p - grad_s_at_q
    base_sq = base_err**2
    base_ms = float(np.mean(base_sq))
    rows = []
    for delta_t in perturbations:
        dt_at_q = np.interp(samples.q, x, delta_t)
        pert_sq = (base_err - dt_at_q) ** 2
        margins = pert_sq - base_sq
        margin_obs = float(np.mean(margins))
        margin_se = float(np.std(margins, ddof=1) / np.sqrt(samples.n))
        margin_pred = predicted_margin(fields, delta_t)
        nonzero = margin_pred > 0.0
        rows.append(OptimalityRow(
            ms_error=base_ms + margin_obs,
            margin_observed=margin_obs,
            margin_predicted=margin_pred,
            margin_se=margin_se,
            within_gate=abs(margin_obs - margin_pred) <= SE_GATE * margin_se
            if nonzero else abs(margin_obs) <= SE_GATE * max(margin_se, 1e-300),
            strictly_larger=(margin_obs > 0.0) if nonzero else True,
        ))
    return rows


def standard_perturbation_battery(fields: MadelungFields) -> list[np.ndarray]:
    """Ten fixed estimator perturbations used by the optimality checks.

    Deterministic by construction (no randomness) so verdicts are
    reproducible: constants, linear and quadratic trends centred on the mean
    position, low-order harmonics on the box, and a localized bump.
    """
    x = fields.grid.x
    L = fields.grid.length
    dx = fields.grid.dx
    mean_q = float(np.sum(x * fields.rho) * dx)
    var_q = float(np.sum((x - mean_q) ** 2 * fields.rho) * dx)
    sig = np.sqrt(var_q)
    z = (x - mean_q) / sig
    k = 2.0 * np.pi / L
    return [
        np.full_like(x, 0.25),
        np.full_like(x, -1.0),
        0.5 * z,
        0.2 * z**2,
        0.3 * np.sin(k * x),
        0.3 * np.cos(k * x),
        0.2 * np.sin(2.0 * k * x),
        0.15 * np.cos(3.0 * k * x),
        0.4 * np.exp(-0.5 * z**2),
        0.1 * z + 0.2 * np.sin(2.0 * k * x),
    ]


@dataclass(frozen=True)
class BranchMean:
    xi_label: str
    mean_error: float
    se: float
    count: int

    @property
    def unbiased(self) -> bool:
        return abs(self.mean_error) <= SE_GATE * self.se


def unbiasedness_check(
    fields: MadelungFields,
    family: ErrorFamily,
    n: int,
    xi_dist: XiDistribution | None = None,
    seed: int = 0,
) -> list[BranchMean]:
    """Mean of p - dS(q) per fluctuation branch; zero for mean-free profiles.

    Branches are the two signs of the fluctuation variable (exact values for
    the two-point kind).  The whole-density average of the error field
    vanishes when the profile integrates to zero against rho, which holds for
    the trivial family on any density decaying at the box edges.
    """
    if xi_dist is None:
        xi_dist = XiDistribution(hbar=fields.hbar)
    samples = draw_samples(fields, family, xi_dist, n, seed)
    err = samples.p - np.interp(samples.q, fields.grid.x, momentum_estimator(fields))
    out = []
    for label, mask in (("xi<0", samples.xi < 0.0), ("xi>0", samples.xi > 0.0)):
        count = int(np.sum(mask))
        if count < 2:
            continue
        vals = err[mask]
        out.append(BranchMean(
            xi_label=label,
            mean_error=float(np.mean(vals)),
            se=float(np.std(vals, ddof=1) / np.sqrt(count)),
            count=count,
        ))
    return out
