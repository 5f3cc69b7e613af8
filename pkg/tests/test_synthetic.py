from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import quad

from merge_planner.errors import DomainError
from merge_planner.synthetic import (
    AGGRESSIVE_PARAMS,
    NORMAL_PARAMS,
    EpisodeProfile,
    NoiseStd,
    ScenarioSpec,
    StyleParams,
    default_scenario,
    generate_dataset,
    generate_episode,
)
from merge_planner.trajectory import AGGRESSIVE, DT, NORMAL, RAMP_LANE, TARGET_LANE, extract_merging_episode

QUIET = NoiseStd(0.0, 0.0, 0.0, 0.0, 0.0)


class TestGenerateEpisode:
    def test_same_seed_is_bit_identical(self):
        a = generate_episode(AGGRESSIVE, seed=42)
        b = generate_episode(AGGRESSIVE, seed=42)
        assert a.same_as(b)
        assert not a.same_as(generate_episode(AGGRESSIVE, seed=43))

    def test_label_and_lanes(self, normal_episode):
        assert normal_episode.style == NORMAL
        assert normal_episode.origin_lane == RAMP_LANE
        assert normal_episode.target_lane == TARGET_LANE
        assert normal_episode.t_s < normal_episode.t_lc < normal_episode.t_e

    def test_invalid_style(self):
        with pytest.raises(DomainError):
            generate_episode(3)

    def test_noiseless_velocity_is_template(self):
        params = replace(NORMAL_PARAMS, noise=QUIET, osc_amplitude=0.0)
        ep = generate_episode(NORMAL, params, seed=9)
        prof = EpisodeProfile.sample(NORMAL, params, 9)
        t = ep.track.t
        expected = (prof.speed.base
                    + params.bump_amplitude * np.exp(-0.5 * ((t - prof.speed.bump_center) / params.bump_width) ** 2))
        assert np.max(np.abs(ep.track.v_y - expected)) < 1e-9

    @pytest.mark.parametrize("style", [NORMAL, AGGRESSIVE])
    def test_displacement_matches_quadrature(self, style):
        params = replace(AGGRESSIVE_PARAMS if style == AGGRESSIVE else NORMAL_PARAMS, noise=QUIET)
        ep = generate_episode(style, params, seed=4)
        speed = EpisodeProfile.sample(style, params, 4).speed
        for k in (0, 100, 700, len(ep.track.t) - 1):
            t = float(ep.track.t[k])
            ref, _ = quad(lambda s: float(speed.velocity(s)), 0.0, t, limit=200, epsabs=1e-12)
            assert ep.track.y[k] == pytest.approx(ref, abs=1e-8)

    def test_acceleration_is_derivative_of_velocity(self):
        speed = EpisodeProfile.sample(AGGRESSIVE, AGGRESSIVE_PARAMS, 2).speed
        t = np.linspace(1.0, 40.0, 57)
        h = 1e-5
        fd = (speed.velocity(t + h) - speed.velocity(t - h)) / (2 * h)
        np.testing.assert_allclose(speed.acceleration(t), fd, atol=1e-6)

    def test_lateral_profile_hits_centrelines(self):
        lat = EpisodeProfile.sample(NORMAL, NORMAL_PARAMS, 5).lateral
        assert lat.position(lat.t_on) == pytest.approx(RAMP_LANE.center_x, abs=1e-12)
        assert lat.position(lat.t_on + lat.duration) == pytest.approx(TARGET_LANE.center_x, abs=1e-12)

    def test_lcd_margin_between_styles(self):
        lcd = {AGGRESSIVE: [], NORMAL: []}
        for ep in generate_dataset(200, 0.5, seed=1):
            lcd[ep.style].append(ep.lcd)
        assert np.mean(lcd[NORMAL]) - np.mean(lcd[AGGRESSIVE]) >= 1.0

    def test_gap_margin_between_styles(self):
        gaps = {AGGRESSIVE: [], NORMAL: []}
        for ep in generate_dataset(200, 0.5, seed=1):
            gaps[ep.style].append(ep.neighbors.gap_lead[ep.track.index_of(ep.t_lc)])
        assert np.mean(gaps[NORMAL]) - np.mean(gaps[AGGRESSIVE]) >= 5.0

    def test_episodes_round_trip_through_extraction(self):
        for ep in generate_dataset(40, 0.5, seed=12):
            got = extract_merging_episode(ep.track)
            assert abs(got.t_lc - ep.t_lc) <= 2 * DT + 1e-9


class TestParams:
    def test_validation(self):
        with pytest.raises(DomainError):
            StyleParams(mean_lcd=0.0)
        with pytest.raises(DomainError):
            StyleParams(osc_amplitude=-0.1)
        with pytest.raises(DomainError):
            StyleParams(gap_at_merge=-1.0)
        with pytest.raises(DomainError):
            NoiseStd(x=-1.0)

    def test_pulse_arrays_must_align(self):
        with pytest.raises(DomainError):
            StyleParams(pulse_times=(1.0,), pulse_widths=(), pulse_depths=())


class TestGenerateDataset:
    def test_paper_sized_split(self, dataset_202):
        styles = [ep.style for ep in dataset_202]
        assert styles.count(AGGRESSIVE) == 99
        assert styles.count(NORMAL) == 103

    def test_all_normal(self):
        assert {ep.style for ep in generate_dataset(10, 0.0, seed=3)} == {NORMAL}

    def test_empty(self):
        assert generate_dataset(0) == []

    def test_deterministic(self):
        a = generate_dataset(8, 0.5, seed=21)
        b = generate_dataset(8, 0.5, seed=21)
        assert all(x.same_as(y) for x, y in zip(a, b))

    def test_vehicle_ids_unique(self):
        eps = generate_dataset(5, 0.4, seed=2)
        ids = [tr.vehicle_id for ep in eps for tr in (ep.track, ep.lead, ep.follow)]
        assert len(ids) == len(set(ids))

    def test_bad_fraction(self):
        with pytest.raises(DomainError):
            generate_dataset(4, 1.5)


class TestScenarioSpec:
    def test_duration_must_cover_episode(self):
        with pytest.raises(DomainError):
            ScenarioSpec(NORMAL, duration=10.0)

    def test_default_scenarios(self):
        a, n = default_scenario(AGGRESSIVE), default_scenario(NORMAL)
        assert a.ads_speed == n.ads_speed == 13.72
        assert a.ads_merge_gap < n.ads_merge_gap
        assert a.episode().same_as(a.episode())
