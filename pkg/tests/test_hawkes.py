import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize, stats as sps

from oamsec.errors import (ConfigurationError, InvalidInputError,
                           StabilityError)
from oamsec.hawkes import (AdversaryState, EveTrajectory, HawkesModel,
                           HawkesState, LatticeRegion, adversary_report,
                           compensator, eve_control_law,
                           extinction_probability, intensity_eval,
                           intensity_path, load_events_csv, save_events_csv,
                           secrecy_outage, simulate_hawkes,
                           time_rescaled_gaps, volume_to_noise_ratio)
from oamsec.mfg import MFGGrid, NoiseSpec


def subcritical_model(horizon=200.0):
    # stationary rate gamma / (1 - m) = 2 with m = 1/2
    return HawkesModel.univariate(gamma=1.0, alpha=0.5, beta=1.0,
                                  horizon=horizon)


def smallest_root(m):
    # independent root of q = exp(m (q - 1)) on (0, 1) for m > 1
    return optimize.brentq(lambda q: q - math.exp(m * (q - 1.0)), 0.0, 0.5,
                           xtol=1e-14)


# --------------------------------------------------------------------------
# model container
# --------------------------------------------------------------------------

class TestHawkesModel:
    def test_scalars_broadcast(self):
        model = HawkesModel(dims=2, gamma=1.0, trig_alpha=0.2, trig_beta=1.5,
                            horizon=10.0)
        assert model.gamma.shape == (2,)
        assert model.trig_alpha.shape == (2, 2)
        assert np.all(model.trig_beta == 1.5)

    def test_branching_matrix_and_ratio(self):
        alpha = np.array([[0.5, 0.3], [0.2, 0.4]])
        model = HawkesModel(dims=2, gamma=1.0, trig_alpha=alpha,
                            trig_beta=1.0, horizon=10.0)
        assert np.allclose(model.branching_matrix, alpha)
        # eigenvalues of [[.5,.3],[.2,.4]] are 0.7 and 0.2
        assert model.branching_ratio == pytest.approx(0.7, abs=1e-12)

    def test_inactive_kernel_tolerates_zero_decay(self):
        model = HawkesModel.univariate(gamma=1.0, alpha=0.0, beta=0.0,
                                       horizon=5.0)
        assert model.branching_ratio == 0.0

    @pytest.mark.parametrize("kwargs", [
        dict(dims=0, gamma=1.0, trig_alpha=0.1, trig_beta=1.0, horizon=1.0),
        dict(dims=1, gamma=-1.0, trig_alpha=0.1, trig_beta=1.0, horizon=1.0),
        dict(dims=1, gamma=1.0, trig_alpha=-0.1, trig_beta=1.0, horizon=1.0),
        dict(dims=1, gamma=1.0, trig_alpha=0.1, trig_beta=0.0, horizon=1.0),
        dict(dims=1, gamma=1.0, trig_alpha=0.1, trig_beta=1.0, horizon=0.0),
        dict(dims=1, gamma=np.inf, trig_alpha=0.1, trig_beta=1.0, horizon=1.0),
    ])
    def test_invalid_models_rejected(self, kwargs):
        with pytest.raises(InvalidInputError):
            HawkesModel(**kwargs)


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------

class TestSimulateHawkes:
    def test_event_stream_is_well_formed(self):
        state = simulate_hawkes(subcritical_model(50.0), seed=0)
        ev = state.events[0]
        assert ev.size > 0
        assert np.all(np.diff(ev) > 0)
        assert ev[0] >= 0 and ev[-1] <= 50.0
        assert state.event_intensities[0].min() >= 1.0   # >= baseline
        assert state.roots[0].dtype == bool
        assert state.total_events == ev.size

    def test_stationary_rate(self):
        state = simulate_hawkes(subcritical_model(500.0), seed=1)
        rate = state.total_events / 500.0
        assert rate == pytest.approx(2.0, rel=0.1)

    def test_poisson_limit_without_excitation(self):
        model = HawkesModel.univariate(gamma=2.0, alpha=0.0, beta=1.0,
                                       horizon=100.0)
        state = simulate_hawkes(model, seed=2)
        assert np.all(state.roots[0])              # no offspring possible
        assert state.total_events == pytest.approx(200, abs=4 * math.sqrt(200))

    def test_silent_model_produces_nothing(self):
        model = HawkesModel.univariate(gamma=0.0, alpha=0.0, beta=1.0,
                                       horizon=10.0)
        state = simulate_hawkes(model, seed=0)
        assert state.total_events == 0

    def test_supercritical_needs_opt_in(self):
        model = HawkesModel.univariate(gamma=0.5, alpha=2.0, beta=1.0,
                                       horizon=3.0)
        with pytest.raises(StabilityError):
            simulate_hawkes(model, seed=0)
        state = simulate_hawkes(model, seed=0, allow_supercritical=True)
        assert state.horizon == 3.0

    def test_critical_ratio_also_refused(self):
        model = HawkesModel.univariate(gamma=1.0, alpha=1.0, beta=1.0,
                                       horizon=3.0)
        with pytest.raises(StabilityError):
            simulate_hawkes(model, seed=0)

    def test_seeded_runs_repeat(self):
        a = simulate_hawkes(subcritical_model(20.0), seed=9)
        b = simulate_hawkes(subcritical_model(20.0), seed=9)
        assert np.array_equal(a.events[0], b.events[0])
        assert np.array_equal(a.roots[0], b.roots[0])

    def test_cross_excitation_fills_both_streams(self):
        model = HawkesModel(dims=2, gamma=np.array([1.0, 0.0]),
                            trig_alpha=np.array([[0.0, 0.0], [0.6, 0.0]]),
                            trig_beta=1.0, horizon=200.0)
        state = simulate_hawkes(model, seed=3)
        # dimension 1 has no baseline; all its events are triggered
        assert state.events[1].size > 0
        assert not np.any(state.roots[1])


class TestStateHelpers:
    def test_count_before_and_root_times(self):
        state = HawkesState(
            events=[np.array([0.5, 1.5]), np.array([1.0])],
            roots=[np.array([True, False]), np.array([True])],
            event_intensities=[np.zeros(2), np.zeros(1)],
            horizon=2.0,
        )
        assert state.count_before(0, 1.0) == 1
        assert state.count_before(0, 1.5) == 2
        assert np.array_equal(state.root_times(), [0.5, 1.0])


# --------------------------------------------------------------------------
# intensity calculus
# --------------------------------------------------------------------------

class TestIntensity:
    def test_recursive_matches_direct(self):
        model = HawkesModel(dims=2, gamma=np.array([0.8, 0.4]),
                            trig_alpha=np.array([[0.3, 0.2], [0.1, 0.25]]),
                            trig_beta=np.array([[1.0, 2.0], [1.5, 0.7]]),
                            horizon=30.0)
        state = simulate_hawkes(model, seed=4)
        for t in (0.0, 3.7, 11.1, 30.0):
            rec = intensity_eval(model, state, t, method="recursive")
            direct = intensity_eval(model, state, t, method="direct")
            assert np.abs(rec - direct).max() < 1e-10

    def test_baseline_at_time_zero(self):
        model = subcritical_model(10.0)
        state = simulate_hawkes(model, seed=0)
        assert intensity_eval(model, state, 0.0)[0] == pytest.approx(1.0)

    def test_bad_method_and_time_rejected(self):
        model = subcritical_model(10.0)
        state = simulate_hawkes(model, seed=0)
        with pytest.raises(InvalidInputError):
            intensity_eval(model, state, 1.0, method="magic")
        with pytest.raises(InvalidInputError):
            intensity_eval(model, state, 11.0)

    def test_path_matches_pointwise_eval(self):
        model = subcritical_model(20.0)
        state = simulate_hawkes(model, seed=5)
        times = np.linspace(0.0, 20.0, 17)
        path = intensity_path(model, state, times)
        for i, t in enumerate(times):
            assert np.allclose(path[i], intensity_eval(model, state, t),
                               atol=1e-10)


class TestCompensator:
    def test_zero_at_the_origin(self):
        model = subcritical_model(10.0)
        state = simulate_hawkes(model, seed=0)
        assert np.allclose(compensator(model, state, 0.0), 0.0)

    def test_centered_over_realizations(self):
        # Lambda(T) - N(T) is a martingale increment; its mean vanishes
        model = subcritical_model(50.0)
        vals = np.array([float(compensator(model, simulate_hawkes(model, s),
                                           50.0)[0])
                         for s in range(120)])
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean()) < 4.0 * se + 1e-9

    def test_time_range_checked(self):
        model = subcritical_model(10.0)
        state = simulate_hawkes(model, seed=0)
        with pytest.raises(InvalidInputError):
            compensator(model, state, -1.0)


class TestTimeRescaling:
    def test_gaps_are_unit_exponential(self):
        model = subcritical_model(1000.0)
        state = simulate_hawkes(model, seed=6)
        gaps = time_rescaled_gaps(model, state)
        assert gaps.size > 1000
        assert sps.kstest(gaps, "expon").pvalue > 0.01

    def test_empty_stream_gives_empty_gaps(self):
        model = HawkesModel.univariate(gamma=0.0, alpha=0.0, beta=1.0,
                                       horizon=5.0)
        state = simulate_hawkes(model, seed=0)
        assert time_rescaled_gaps(model, state).size == 0

    def test_dim_checked(self):
        model = subcritical_model(10.0)
        state = simulate_hawkes(model, seed=0)
        with pytest.raises(InvalidInputError):
            time_rescaled_gaps(model, state, dim=1)


# --------------------------------------------------------------------------
# extinction calculus
# --------------------------------------------------------------------------

class TestExtinctionProbability:
    @pytest.mark.parametrize("m", [0.0, 0.3, 0.999, 1.0])
    def test_subcritical_and_critical_die_surely(self, m):
        assert extinction_probability(m) == 1.0

    def test_supercritical_matches_the_root_finder(self):
        q = extinction_probability(2.0)
        assert q == pytest.approx(smallest_root(2.0), abs=1e-9)
        assert q == pytest.approx(0.2031878699799583, abs=1e-9)
        assert abs(q - math.exp(2.0 * (q - 1.0))) < 1e-12

    @pytest.mark.parametrize("m", [1.1, 1.5, 3.0, 6.0])
    def test_fixed_point_residual_is_tiny(self, m):
        q = extinction_probability(m)
        assert 0.0 < q < 1.0
        assert abs(q - math.exp(m * (q - 1.0))) < 1e-12

    @pytest.mark.parametrize("m", [-0.1, math.inf, math.nan])
    def test_bad_means_rejected(self, m):
        with pytest.raises(InvalidInputError):
            extinction_probability(m)


class TestLatticeRegion:
    def test_volume_and_ratio(self):
        region = LatticeRegion(omega_sides=(2.0, 2.0))
        assert region.volume == 4.0
        # |Omega|^(cte/n) / var = 4^(2/2) / 1
        assert volume_to_noise_ratio(region) == pytest.approx(4.0)

    def test_exponent_uses_dimension(self):
        region = LatticeRegion(omega_sides=(8.0,), var_pp=2.0)
        assert volume_to_noise_ratio(region) == pytest.approx(64.0 / 2.0)

    @pytest.mark.parametrize("kwargs", [
        dict(omega_sides=()),
        dict(omega_sides=(0.0,)),
        dict(omega_sides=(1.0,), n_dim=0),
        dict(omega_sides=(1.0,), var_pp=0.0),
        dict(omega_sides=(1.0,), err_prob=1.5),
    ])
    def test_invalid_regions_rejected(self, kwargs):
        with pytest.raises(InvalidInputError):
            LatticeRegion(**kwargs)


class TestAdversaryState:
    def test_from_offspring_mean_fills_q(self):
        adv = AdversaryState.from_offspring_mean(2.0)
        assert adv.extinction_prob == pytest.approx(smallest_root(2.0),
                                                    abs=1e-9)

    def test_subcritical_q_must_be_one(self):
        with pytest.raises(InvalidInputError):
            AdversaryState(offspring_mean=0.5, extinction_prob=0.5)
        AdversaryState(offspring_mean=0.5, extinction_prob=1.0)

    def test_probability_and_rate_validated(self):
        with pytest.raises(InvalidInputError):
            AdversaryState(offspring_mean=2.0, extinction_prob=1.5)
        with pytest.raises(InvalidInputError):
            AdversaryState(offspring_mean=0.5, extinction_prob=1.0,
                           r_conv=0.0)


class TestSecrecyOutage:
    def test_default_is_survival_probability(self):
        adv = AdversaryState.from_offspring_mean(2.0)
        out = secrecy_outage(adv)
        assert out + adv.extinction_prob == pytest.approx(1.0, abs=1e-15)

    def test_subcritical_outage_is_zero(self):
        adv = AdversaryState.from_offspring_mean(0.5)
        assert secrecy_outage(adv) == 0.0

    def test_custom_map_is_validated(self):
        adv = AdversaryState.from_offspring_mean(2.0)
        assert secrecy_outage(adv, outage_map=lambda q: q) == \
            pytest.approx(adv.extinction_prob)
        with pytest.raises(InvalidInputError):
            secrecy_outage(adv, outage_map=lambda q: 2.0)


# --------------------------------------------------------------------------
# augmented control law
# --------------------------------------------------------------------------

def empty_adversary(m=2.0, horizon=1.0):
    model = HawkesModel.univariate(gamma=0.0, alpha=0.0, beta=1.0,
                                   horizon=horizon)
    state = simulate_hawkes(model, seed=0)
    return AdversaryState.from_offspring_mean(m, hawkes_model=model,
                                              hawkes_state=state)


class TestEveControlLaw:
    def test_requires_attached_realization(self):
        grid = MFGGrid(t_max=1.0, x_min=-1.0, x_max=1.0, nt=5, nx=5)
        adv = AdversaryState.from_offspring_mean(2.0)
        with pytest.raises(ConfigurationError):
            eve_control_law(grid, np.zeros((5, 5)), adv, NoiseSpec())

    def test_unknown_mode_rejected(self):
        grid = MFGGrid(t_max=1.0, x_min=-1.0, x_max=1.0, nt=5, nx=5)
        with pytest.raises(ConfigurationError):
            eve_control_law(grid, np.zeros((5, 5)), empty_adversary(),
                            NoiseSpec(), mode="other")

    def test_theta_shape_checked(self):
        grid = MFGGrid(t_max=1.0, x_min=-1.0, x_max=1.0, nt=5, nx=5)
        with pytest.raises(InvalidInputError):
            eve_control_law(grid, np.zeros((4, 5)), empty_adversary(),
                            NoiseSpec())

    def test_eventless_extinction_drift_is_unit(self):
        # no cluster roots: drift q^0 = 1, so x grows linearly under zero
        # control and zero path noise
        grid = MFGGrid(t_max=1.0, x_min=-2.0, x_max=2.0, nt=11, nx=5)
        traj = eve_control_law(grid, np.zeros((11, 5)), empty_adversary(),
                               NoiseSpec(), mode="extinction", x0=0.0)
        assert np.allclose(traj.drift, 1.0)
        assert np.allclose(traj.states, grid.times, atol=1e-12)
        assert np.allclose(traj.theta_eve, 0.0)

    def test_extinction_drift_counts_roots(self):
        model = HawkesModel.univariate(gamma=1.0, alpha=0.5, beta=1.0,
                                       horizon=1.0)
        state = HawkesState(
            events=[np.array([0.25, 0.6, 0.75])],
            roots=[np.array([True, False, True])],
            event_intensities=[np.ones(3)],
            horizon=1.0,
        )
        adv = AdversaryState.from_offspring_mean(2.0, hawkes_model=model,
                                                 hawkes_state=state)
        grid = MFGGrid(t_max=1.0, x_min=-1.0, x_max=1.0, nt=5, nx=5)
        traj = eve_control_law(grid, np.zeros((5, 5)), adv, NoiseSpec())
        q = adv.extinction_prob
        assert np.allclose(traj.drift, q ** np.array([0, 1, 1, 2, 2]))

    def test_compensated_drift_starts_at_zero(self):
        model = subcritical_model(1.0)
        state = simulate_hawkes(model, seed=7)
        adv = AdversaryState.from_offspring_mean(0.5, hawkes_model=model,
                                                 hawkes_state=state)
        grid = MFGGrid(t_max=1.0, x_min=-1.0, x_max=1.0, nt=5, nx=5)
        traj = eve_control_law(grid, np.zeros((5, 5)), adv, NoiseSpec(),
                               mode="compensated")
        assert traj.drift[0] == 0.0
        assert traj.states.shape == (5,)

    def test_path_noise_is_reproducible(self):
        grid = MFGGrid(t_max=1.0, x_min=-2.0, x_max=2.0, nt=11, nx=5)
        adv = empty_adversary()
        a = eve_control_law(grid, np.zeros((11, 5)), adv, NoiseSpec(w7=0.1,
                                                                    seed=3))
        b = eve_control_law(grid, np.zeros((11, 5)), adv, NoiseSpec(w7=0.1,
                                                                    seed=3))
        c = eve_control_law(grid, np.zeros((11, 5)), adv, NoiseSpec(w7=0.1,
                                                                    seed=4))
        assert np.array_equal(a.states, b.states)
        assert not np.array_equal(a.states, c.states)


# --------------------------------------------------------------------------
# persistence and reporting
# --------------------------------------------------------------------------

class TestEventCsv:
    def test_round_trip(self, tmp_path):
        model = HawkesModel(dims=2, gamma=np.array([1.0, 0.5]),
                            trig_alpha=0.2, trig_beta=1.0, horizon=20.0)
        state = simulate_hawkes(model, seed=8)
        path = tmp_path / "events.csv"
        save_events_csv(state, path)
        back = load_events_csv(path, dims=2, horizon=20.0)
        for d in range(2):
            assert np.array_equal(back.events[d], state.events[d])
            assert np.all(back.roots[d])

    def test_rows_are_time_sorted(self, tmp_path):
        state = HawkesState(events=[np.array([1.5, 3.0]), np.array([0.5])],
                            roots=[np.ones(2, bool), np.ones(1, bool)],
                            event_intensities=[np.zeros(2), np.zeros(1)],
                            horizon=5.0)
        path = tmp_path / "events.csv"
        save_events_csv(state, path)
        lines = path.read_text().splitlines()
        stamps = [float(ln.split(",")[1]) for ln in lines[1:]]
        assert stamps == sorted(stamps)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,dim\n0.5,0\n")
        with pytest.raises(InvalidInputError):
            load_events_csv(path, dims=1, horizon=1.0)

    def test_out_of_range_dimension_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("dimension,timestamp\n3,0.5\n")
        with pytest.raises(InvalidInputError):
            load_events_csv(path, dims=2, horizon=1.0)


class TestAdversaryReport:
    def test_supercritical_report(self):
        adv = AdversaryState.from_offspring_mean(
            2.0, region=LatticeRegion(omega_sides=(2.0, 2.0), err_prob=0.1))
        report = adversary_report(adv, mode="extinction")
        assert report["m"] == 2.0
        assert report["supercritical"] is True
        assert "note" in report
        assert report["volume_to_noise_ratio"] == pytest.approx(4.0)
        assert report["err_prob"] == 0.1
        assert report["secrecy_outage"] == pytest.approx(
            1.0 - report["q"], abs=1e-15)

    def test_subcritical_report_is_quiet(self):
        report = adversary_report(AdversaryState.from_offspring_mean(0.5))
        assert report["supercritical"] is False
        assert "note" not in report
        assert "volume_to_noise_ratio" not in report
        assert report["secrecy_outage"] == 0.0


# --------------------------------------------------------------------------
# properties
# --------------------------------------------------------------------------

@given(st.floats(0.0, 5.0, allow_nan=False))
@settings(max_examples=60, deadline=None)
def test_extinction_probability_law(m):
    q = extinction_probability(m)
    assert 0.0 < q <= 1.0
    if m <= 1.0:
        assert q == 1.0
    else:
        assert q < 1.0
        assert abs(q - math.exp(m * (q - 1.0))) < 1e-10


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_simulated_streams_stay_ordered_and_bounded(seed):
    state = simulate_hawkes(subcritical_model(20.0), seed=seed)
    ev = state.events[0]
    if ev.size:
        assert np.all(np.diff(ev) > 0)
        assert 0.0 <= ev[0] and ev[-1] <= 20.0
    assert state.roots[0].size == ev.size
