"""Monte Carlo sampling tests: reproducibility, statistical agreement with
the quadrature predictions, estimator optimality, and branch bias."""

import numpy as np
import pytest

from epiqsim.ensemble import (
    MIN_BIN_COUNT,
    SE_GATE,
    XI_KINDS,
    UnderpopulatedBinError,
    XiDistribution,
    conditional_mean_p,
    conditional_mean_table,
    draw_samples,
    empirical_ms_error,
    predicted_margin,
    standard_perturbation_battery,
    unbiasedness_check,
    verify_optimal_estimator,
)
from epiqsim.families import GradPower, PowerLaw, Zero, uncertainty_correction_C
from epiqsim.fields import Grid1D, gaussian_fields, plane_wave_fields
from epiqsim.uncertainty import fisher_information


def _packet(p_o=0.7):
    grid = Grid1D(1024, -12.0, 12.0)
    return gaussian_fields(grid, 1.0, p_o=p_o)


class TestXiDistribution:
    def test_kind_validation(self):
        assert XI_KINDS == ("two_point", "gaussian")
        with pytest.raises(ValueError):
            XiDistribution(kind="uniform")
        with pytest.raises(ValueError):
            XiDistribution(hbar=0.0)

    def test_two_point_support(self):
        xi = XiDistribution("two_point", hbar=0.8)
        draws = xi.draw(np.random.default_rng(0), 10_000)
        assert set(np.unique(draws)) == {-0.8, 0.8}

    @pytest.mark.parametrize("kind", XI_KINDS)
    def test_first_two_moments(self, kind):
        n = 400_000
        hbar = 1.3
        draws = XiDistribution(kind, hbar=hbar).draw(np.random.default_rng(1), n)
        mean_se = float(np.std(draws) / np.sqrt(n))
        assert abs(float(np.mean(draws))) < SE_GATE * mean_se, f"{kind} mean biased"
        sq = draws**2
        sq_se = max(float(np.std(sq) / np.sqrt(n)), 1e-12)
        assert abs(float(np.mean(sq)) - hbar**2) < SE_GATE * sq_se, (
            f"{kind} mean square off: {np.mean(sq)} vs {hbar**2}"
        )


class TestDrawSamples:
    def test_rejects_empty_request(self):
        with pytest.raises(ValueError):
            draw_samples(_packet(), Zero(), XiDistribution(), 0, 1)

    def test_bit_exact_reproducibility(self):
        fields = _packet()
        a = draw_samples(fields, PowerLaw(1.0, 0.5), XiDistribution(), 5000, 17)
        b = draw_samples(fields, PowerLaw(1.0, 0.5), XiDistribution(), 5000, 17)
        assert np.array_equal(a.q, b.q)
        assert np.array_equal(a.xi, b.xi)
        assert np.array_equal(a.p, b.p)

    def test_different_seeds_differ(self):
        fields = _packet()
        a = draw_samples(fields, Zero(), XiDistribution(), 1000, 1)
        b = draw_samples(fields, Zero(), XiDistribution(), 1000, 2)
        assert not np.array_equal(a.q, b.q)

    def test_positions_avoid_floored_region(self):
        grid = Grid1D(512, -20.0, 20.0)
        fields = gaussian_fields(grid, 0.5)  # tails floored
        s = draw_samples(fields, Zero(), XiDistribution(), 100_000, 9)
        healthy = grid.x[~fields.floored_mask]
        lo, hi = float(healthy.min()) - grid.dx, float(healthy.max()) + grid.dx
        assert float(s.q.min()) >= lo and float(s.q.max()) <= hi, (
            f"samples strayed into the floored tails: [{s.q.min()}, {s.q.max()}]"
        )

    def test_position_distribution_matches_density(self):
        fields = _packet()
        s = draw_samples(fields, Zero(), XiDistribution(), 400_000, 3)
        mean = float(np.mean(s.q))
        var = float(np.var(s.q))
        assert abs(mean) < 5e-3, f"sampled mean {mean}"
        assert abs(var - 1.0) < 2e-2, f"sampled variance {var}"


class TestPlaneWaveExactness:
    def test_uniform_density_gives_zero_error_exactly(self):
        # u = 0 and f = 0 everywhere: every sampled momentum equals the slope
        pw = plane_wave_fields(Grid1D(256, -10.0, 10.0), 1.5)
        s = draw_samples(pw, Zero(), XiDistribution(), 20_000, 1)
        assert float(np.max(np.abs(s.p - pw.s_slope))) == 0.0
        est = empirical_ms_error(s, pw)
        assert est.value == 0.0 and est.se == 0.0


class TestEmpiricalMsError:
    @pytest.mark.parametrize(
        "fam", [Zero(), PowerLaw(1.0, 0.5), GradPower(-0.2, 3)], ids=lambda f: f.label()
    )
    def test_matches_quadrature_prediction(self, fam):
        fields = _packet()
        s = draw_samples(fields, fam, XiDistribution(), 200_000, 42)
        est = empirical_ms_error(s, fields)
        predicted = 0.25 * fisher_information(fields) + uncertainty_correction_C(
            fam, fields
        )
        pull = abs(est.value - predicted) / est.se
        assert pull < SE_GATE, (
            f"{fam.label()}: empirical {est.value:.6f} vs predicted {predicted:.6f} "
            f"({pull:.2f} standard errors)"
        )

    def test_two_fluctuation_kinds_agree(self):
        fields = _packet()
        fam = PowerLaw(1.0, 0.5)
        a = empirical_ms_error(
            draw_samples(fields, fam, XiDistribution("two_point"), 200_000, 7), fields
        )
        b = empirical_ms_error(
            draw_samples(fields, fam, XiDistribution("gaussian"), 200_000, 8), fields
        )
        gap = abs(a.value - b.value)
        combined = np.hypot(a.se, b.se)
        assert gap < SE_GATE * combined, (
            f"two-point {a.value:.6f} vs gaussian {b.value:.6f}: gap {gap:.2e} "
            f"exceeds {SE_GATE} combined standard errors ({combined:.2e})"
        )


class TestConditionalMean:
    def test_populated_bins_recover_phase_gradient(self):
        fields = _packet(p_o=0.7)
        s = draw_samples(fields, PowerLaw(1.0, 0.5), XiDistribution(), 200_000, 42)
        tab = conditional_mean_table(s, n_bins=40)
        assert int(np.sum(tab.counts)) == s.n
        pop = tab.populated
        assert int(np.sum(pop)) >= 20, "too few populated bins for the check"
        pulls = np.abs(tab.mean_p[pop] - 0.7) / np.maximum(tab.se[pop], 1e-30)
        assert float(np.max(pulls)) < SE_GATE, (
            f"conditional mean strayed from the phase gradient by "
            f"{np.max(pulls):.2f} standard errors"
        )

    def test_single_bin_api_and_underpopulation(self):
        fields = _packet(p_o=0.7)
        s = draw_samples(fields, Zero(), XiDistribution(), 50_000, 5)
        center = conditional_mean_p(s, (-0.25, 0.25))
        assert abs(center - 0.7) < 0.05
        with pytest.raises(UnderpopulatedBinError) as exc:
            conditional_mean_p(s, (9.0, 9.5))  # deep tail: essentially empty
        assert str(MIN_BIN_COUNT) in str(exc.value)


class TestOptimality:
    def test_battery_has_ten_fixed_members(self):
        fields = _packet()
        battery = standard_perturbation_battery(fields)
        assert len(battery) == 10
        again = standard_perturbation_battery(fields)
        for a, b in zip(battery, again):
            assert np.array_equal(a, b), "battery must be deterministic"

    def test_every_perturbation_raises_the_error(self):
        fields = _packet()
        fam = PowerLaw(1.0, 0.5)
        rows = verify_optimal_estimator(
            fields, fam, standard_perturbation_battery(fields), 200_000, seed=5
        )
        for i, row in enumerate(rows):
            assert row.strictly_larger, f"perturbation {i} did not raise the MS error"
            assert row.within_gate, (
                f"perturbation {i}: observed margin {row.margin_observed:.6f} vs "
                f"predicted {row.margin_predicted:.6f} "
                f"(se {row.margin_se:.2e})"
            )

    def test_constant_perturbation_margin_is_its_square(self):
        fields = _packet()
        delta = np.full(fields.grid.n_points, 0.25)
        assert predicted_margin(fields, delta) == pytest.approx(0.0625, rel=1e-9)

    def test_null_perturbation_is_neutral(self):
        fields = _packet()
        row = verify_optimal_estimator(
            fields, Zero(), [np.zeros(fields.grid.n_points)], 50_000, seed=5
        )[0]
        assert row.margin_observed == 0.0
        assert row.within_gate and row.strictly_larger


class TestUnbiasedness:
    def test_mean_free_profile_is_unbiased_per_branch(self):
        fields = _packet()
        rows = unbiasedness_check(fields, Zero(), 200_000, seed=3)
        assert [r.xi_label for r in rows] == ["xi<0", "xi>0"]
        for r in rows:
            assert r.unbiased, f"{r.xi_label}: mean error {r.mean_error:.5f} (se {r.se:.5f})"

    def test_odd_gradient_profile_is_unbiased_per_branch(self):
        # f = lam u^3 has zero density average on a symmetric packet
        fields = _packet()
        rows = unbiasedness_check(fields, GradPower(-0.2, 3), 200_000, seed=3)
        for r in rows:
            assert r.unbiased, f"{r.xi_label}: mean error {r.mean_error:.5f}"

    def test_positive_profile_shows_opposite_branch_biases(self):
        # f = rho^(1/2) > 0 pushes the two fluctuation branches apart
        fields = _packet()
        rows = unbiasedness_check(fields, PowerLaw(1.0, 0.5), 200_000, seed=3)
        lo = next(r for r in rows if r.xi_label == "xi<0")
        hi = next(r for r in rows if r.xi_label == "xi>0")
        assert not lo.unbiased and not hi.unbiased
        assert lo.mean_error < 0.0 < hi.mean_error
        # magnitude: half the density average of rho^(1/2)
        expected = 0.5 * float(
            np.sum(fields.rho**1.5) * fields.grid.dx
        )
        assert abs(hi.mean_error - expected) < SE_GATE * hi.se, (
            f"branch bias {hi.mean_error:.5f} vs analytic {expected:.5f}"
        )
