import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from oamsec.bounds import (BoundParams, BoundReport, ValidationReport,
                           azuma_bound, bound_terms, convergence_probability,
                           empirical_convergence_check, hoeffding_mgf_bound,
                           sanov_bound, save_validation_csv)
from oamsec.errors import InvalidInputError
from oamsec.mfg import MFGGrid, NoiseSpec
from oamsec.runner import AlgorithmConfig

#: reference constants: n=100, c1=0.5, c2=3, c3=1, unit density norm
REF = BoundParams(n=100, c1=0.5, c2=3.0, c3=1.0, m_norm_max=1.0)
REF_A = 7.453306344157342e-06          # 2 exp(-12.5)
REF_B = 0.022217993076484612           # 2 exp(-4.5)
REF_C = 0.36787944117144233            # exp(-1)
REF_P1 = 0.97777471921468
REF_P2 = 0.6180715019184195


def small_config(**over):
    grid = MFGGrid(t_max=1.0, x_min=-1.0, x_max=2.0, nt=31, nx=31)
    return AlgorithmConfig(grid=grid, mode="P1", r_conv=1e-3, **over)


# --------------------------------------------------------------------------
# parameters and raw factors
# --------------------------------------------------------------------------

class TestBoundParams:
    def test_defaults_are_valid(self):
        BoundParams()

    @pytest.mark.parametrize("kwargs", [
        dict(n=-1), dict(c1=-0.5), dict(c3=math.inf),
        dict(m_norm_max=-1.0), dict(varsigma1=math.nan),
        dict(theta_eve_plus=math.inf), dict(set_size=-2.0),
    ])
    def test_invalid_parameters_rejected(self, kwargs):
        with pytest.raises(InvalidInputError):
            BoundParams(**kwargs)


class TestBoundTerms:
    def test_reference_factors(self):
        a, b, c = bound_terms(REF)
        assert a == pytest.approx(2.0 * math.exp(-100 * 0.25 / 2.0), rel=1e-15)
        assert b == pytest.approx(2.0 * math.exp(-9.0 / 2.0), rel=1e-15)
        assert c == pytest.approx(math.exp(-1.0), rel=1e-15)
        assert (a, b, c) == pytest.approx((REF_A, REF_B, REF_C), rel=1e-12)

    def test_eve_gap_inflates_the_coupling_factor(self):
        params = replace(REF, theta_eve_minus=2.0, theta_eve_plus=-2.0)
        _, _, c = bound_terms(params)
        assert c == pytest.approx(math.exp(16.0 / 8.0 - 1.0), rel=1e-15)

    def test_degenerate_density_norm_rejected(self):
        with pytest.raises(InvalidInputError):
            bound_terms(BoundParams(m_norm_max=0.0))

    def test_raw_factors_are_not_clamped(self):
        a, _, _ = bound_terms(BoundParams(n=0))
        assert a == 2.0


# --------------------------------------------------------------------------
# assembled guarantee
# --------------------------------------------------------------------------

class TestConvergenceProbability:
    def test_reference_assembly(self):
        report = convergence_probability(REF, problem="P2")
        assert report.p1 == pytest.approx(REF_P1, abs=1e-12)
        assert report.p2 == pytest.approx(REF_P2, abs=1e-12)
        assert report.p2 == pytest.approx(report.p1 * (1.0 - report.c),
                                          rel=1e-12)
        assert not any(report.clamped.values())

    def test_problem_selects_the_failure_mass(self):
        p1_report = convergence_probability(REF, problem="P1")
        p2_report = convergence_probability(REF, problem="P2")
        assert p1_report.varrho == pytest.approx(1.0 - REF_P1, abs=1e-12)
        assert p2_report.varrho == pytest.approx(1.0 - REF_P2, abs=1e-12)
        for rep in (p1_report, p2_report):
            assert rep.complexity == pytest.approx(math.log(1.0 / rep.varrho))

    def test_vacuous_factors_are_clamped_and_flagged(self):
        report = convergence_probability(BoundParams(n=0), problem="P1")
        assert report.a == 2.0
        assert report.p1 == 0.0
        assert report.clamped["a"]
        assert report.varrho == 1.0
        assert report.complexity == 0.0

    def test_perfect_bound_flags_infinite_complexity(self):
        params = BoundParams(n=10_000, c1=20.0, c2=100.0, c3=800.0)
        report = convergence_probability(params, problem="P2")
        assert report.p2 == 1.0
        assert report.varrho == 0.0
        assert math.isinf(report.complexity)
        assert report.clamped["complexity"]

    def test_unknown_problem_rejected(self):
        with pytest.raises(InvalidInputError):
            convergence_probability(REF, problem="P3")

    @pytest.mark.parametrize("axis", ["c1", "c2", "c3"])
    def test_guarantee_monotone_in_each_constant(self, axis):
        values = [convergence_probability(replace(REF, **{axis: v}),
                                          problem="P2").p2
                  for v in np.linspace(0.0, 3.0, 7)]
        assert all(b >= a - 1e-15 for a, b in zip(values, values[1:]))

    def test_report_serializes(self, tmp_path):
        report = convergence_probability(REF)
        payload = report.to_dict()
        assert payload["problem"] == "P2"
        assert set(payload["clamped"]) == {"a", "b", "c", "p1", "p2",
                                           "complexity"}
        path = tmp_path / "bounds.json"
        report.save_json(path)
        assert path.read_text().endswith("}\n")


class TestAzumaBound:
    def test_reference_value(self):
        params = BoundParams(c0=3.0, varsigma1=0.0, varsigma2=1.0)
        assert azuma_bound(params, steps=10) == pytest.approx(
            2.0 * math.exp(-1.8), rel=1e-15)

    def test_loose_bound_clamps_to_one(self):
        params = BoundParams(c0=1.0, varsigma1=0.0, varsigma2=1.0)
        # raw value 2 exp(-0.2) > 1
        assert azuma_bound(params, steps=10) == 1.0

    def test_degenerate_increments(self):
        equal = BoundParams(c0=1.0, varsigma1=1.0, varsigma2=1.0)
        assert azuma_bound(equal, steps=5) == 0.0
        trivial = BoundParams(c0=0.0, varsigma1=1.0, varsigma2=1.0)
        assert azuma_bound(trivial, steps=5) == 1.0
        assert azuma_bound(BoundParams(c0=1.0, varsigma2=1.0), steps=0) == 0.0
        assert azuma_bound(BoundParams(c0=0.0, varsigma2=1.0), steps=0) == 1.0

    def test_invalid_inputs_rejected(self):
        with pytest.raises(InvalidInputError):
            azuma_bound(BoundParams(), steps=-1)
        with pytest.raises(InvalidInputError):
            azuma_bound(BoundParams(varsigma1=2.0, varsigma2=1.0), steps=5)


class TestSanovAndHoeffding:
    def test_sanov_reference(self):
        params = BoundParams(n=100, kl_inf=0.05, set_size=8.0)
        assert sanov_bound(params) == pytest.approx(8.0 * math.exp(-5.0),
                                                    rel=1e-15)

    def test_sanov_zero_divergence_is_the_set_size(self):
        assert sanov_bound(BoundParams(n=100, kl_inf=0.0, set_size=8.0)) == 8.0

    def test_hoeffding_reference(self):
        assert hoeffding_mgf_bound(3.0, -1.0) == pytest.approx(
            math.exp(2.0), rel=1e-15)
        assert hoeffding_mgf_bound(0.0, 0.0) == 1.0

    def test_hoeffding_dominates_centered_two_point_mgf(self):
        # extremal centered law X = +-d/2 with equal mass: E exp(X) =
        # cosh(d/2), the worst case of the lemma
        for d in (0.1, 0.5, 1.0, 2.0, 4.0):
            bound = hoeffding_mgf_bound(d / 2.0, -d / 2.0)
            assert math.cosh(d / 2.0) <= bound + 1e-15

    def test_hoeffding_rejects_unbounded_support(self):
        with pytest.raises(InvalidInputError):
            hoeffding_mgf_bound(math.inf, 0.0)


# --------------------------------------------------------------------------
# empirical validation
# --------------------------------------------------------------------------

class TestEmpiricalCheck:
    def test_always_converging_stub_passes(self):
        report = empirical_convergence_check(
            small_config(), REF, reps=50, problem="P1",
            run=lambda cfg, seed: True)
        assert report.frequency == 1.0
        assert report.successes == 50
        assert report.slack == 0.0
        assert report.passed
        assert len(report.config_hash) == 16

    def test_vacuous_bound_passes_even_without_successes(self):
        report = empirical_convergence_check(
            small_config(), BoundParams(n=0), reps=50, problem="P1",
            run=lambda cfg, seed: False)
        assert report.frequency == 0.0
        assert report.bound == 0.0
        assert report.passed

    def test_failing_frequency_is_reported_honestly(self):
        report = empirical_convergence_check(
            small_config(), REF, reps=50, problem="P1",
            run=lambda cfg, seed: False)
        assert report.bound == pytest.approx(REF_P1, abs=1e-12)
        assert not report.passed

    def test_small_budgets_rejected(self):
        with pytest.raises(InvalidInputError):
            empirical_convergence_check(small_config(), REF, reps=49,
                                        run=lambda cfg, seed: True)

    def test_replication_seeds_are_deterministic(self):
        def collect(cfg):
            seen = []

            def run(c, seed):
                seen.append(seed)
                return True

            empirical_convergence_check(cfg, REF, reps=50, run=run)
            return seen

        base = small_config()
        assert collect(base) == collect(base)
        other = small_config(noise=NoiseSpec(seed=1))
        assert collect(base) != collect(other)

    def test_replication_failures_name_the_seed(self):
        calls = {"n": 0}

        def run(cfg, seed):
            calls["n"] += 1
            if calls["n"] == 3:
                raise InvalidInputError("inner solver exploded")
            return True

        with pytest.raises(InvalidInputError, match=r"replication 2 \(seed"):
            empirical_convergence_check(small_config(), REF, reps=50, run=run)

    def test_real_runner_meets_the_quiet_bound(self):
        # the full outer loop without injected noise converges every time,
        # clearing the reference guarantee with room to spare
        report = empirical_convergence_check(small_config(), REF, reps=50,
                                             problem="P1")
        assert report.frequency == 1.0
        assert report.passed

    def test_density_forcing_degrades_convergence_monotonically(self):
        amps = (0.0, 0.05, 0.3)
        freqs = []
        for amp in amps:
            config = small_config(noise=NoiseSpec(w4=amp, seed=0))
            report = empirical_convergence_check(config, REF, reps=50,
                                                 problem="P1")
            freqs.append(report.frequency)
        assert freqs[0] == 1.0
        assert freqs[-1] < 0.5
        tau = sps.kendalltau(amps, freqs).statistic
        assert tau < 0.0


class TestValidationCsv:
    def test_matrix_rows(self, tmp_path):
        reports = [
            ValidationReport(reps=50, successes=50, frequency=1.0, bound=0.9,
                             slack=0.0, passed=True, problem="P1",
                             config_hash="a" * 16),
            ValidationReport(reps=50, successes=10, frequency=0.2, bound=0.9,
                             slack=0.1697, passed=False, problem="P2",
                             config_hash="b" * 16),
        ]
        path = tmp_path / "validation.csv"
        save_validation_csv(reports, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "config_hash,frequency,bound,passed"
        assert lines[1].startswith("a" * 16 + ",1.0,0.9,1")
        assert lines[2].endswith(",0")


# --------------------------------------------------------------------------
# properties
# --------------------------------------------------------------------------

@given(st.floats(0.0, 10.0), st.floats(0.0, 10.0), st.floats(0.0, 10.0),
       st.integers(1, 10_000))
@settings(max_examples=50, deadline=None)
def test_assembled_probabilities_are_probabilities(c1, c2, c3, n):
    params = BoundParams(n=n, c1=c1, c2=c2, c3=c3)
    report = convergence_probability(params, problem="P2")
    assert 0.0 <= report.p1 <= 1.0
    assert 0.0 <= report.p2 <= 1.0
    assert report.p2 <= report.p1 + 1e-15
    assert 0.0 <= report.varrho <= 1.0


@given(st.floats(-5.0, 5.0), st.floats(-5.0, 5.0))
@settings(max_examples=50, deadline=None)
def test_hoeffding_bound_is_symmetric_and_at_least_one(lo, hi):
    bound = hoeffding_mgf_bound(hi, lo)
    assert bound >= 1.0
    assert bound == pytest.approx(hoeffding_mgf_bound(lo, hi), rel=1e-12)
