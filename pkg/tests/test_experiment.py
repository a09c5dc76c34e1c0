import math

import numpy as np
import pytest
from scipy.stats import binom

from metamerlab.experiment import (Condition, DisplayGeometry, ExperimentConfig,
                                   RandomObserver, ScheduleShortfall,
                                   SimulatedObserver, TrialRecord, TrialSpec,
                                   deg_to_px, degrees_per_screen,
                                   generate_trials, run_simulated_session,
                                   score_session, table_to_csv)
from metamerlab.image import ImageBuffer, save_png
from metamerlab.stimuli import ingest_stimulus_set

from conftest import structured_scene

PAPER_GEOMETRY = DisplayGeometry((3440, 1440), (80.0, 34.0), 50.0)


# ---------------------------------------------------------------------------
# Display geometry
# ---------------------------------------------------------------------------

def test_vertical_angle_formula():
    _, vertical = degrees_per_screen(PAPER_GEOMETRY)
    assert vertical == pytest.approx(2 * math.atan(17.0 / 50.0) * 180 / math.pi)


def test_half_height_equals_distance_gives_90deg():
    g = DisplayGeometry((100, 100), (40.0, 40.0), 20.0)
    h, v = degrees_per_screen(g)
    assert v == pytest.approx(90.0)


def test_angle_vanishes_at_distance():
    g = DisplayGeometry((100, 100), (40.0, 40.0), 1e9)
    _, v = degrees_per_screen(g)
    assert v < 1e-5


def test_stimulus_width_maps_to_256px():
    px = deg_to_px(6.67, PAPER_GEOMETRY)
    assert abs(px - 256.0) <= 1.0


def test_deg_to_px_zero_and_linear():
    assert deg_to_px(0.0, PAPER_GEOMETRY) == 0.0
    assert deg_to_px(4.0, PAPER_GEOMETRY) == pytest.approx(
        2 * deg_to_px(2.0, PAPER_GEOMETRY))
    with pytest.raises(ValueError):
        deg_to_px(-1.0, PAPER_GEOMETRY)


def test_geometry_validation_and_aspect_warning():
    with pytest.raises(ValueError):
        DisplayGeometry((0, 100), (10.0, 10.0), 50.0)
    with pytest.warns(UserWarning):
        DisplayGeometry((1000, 500), (10.0, 10.0), 50.0)


# ---------------------------------------------------------------------------
# Config and schedules
# ---------------------------------------------------------------------------

def test_mask_defaults_per_task():
    odd = ExperimentConfig(task="oddity", eccentricities_deg=[0],
                           conditions=[Condition("texform", "orig_vs_synth")],
                           trials_per_cell=1)
    afc = ExperimentConfig(task="match2afc", eccentricities_deg=[0],
                           conditions=[Condition("texform", "orig_vs_synth")],
                           trials_per_cell=1)
    assert odd.mask_ms == 500 and afc.mask_ms == 1000
    assert odd.stimulus_ms == afc.stimulus_ms == 100
    assert odd.chance == pytest.approx(1 / 3) and afc.chance == 0.5


def test_config_json_roundtrip():
    cfg = ExperimentConfig(task="oddity", eccentricities_deg=[5, 10],
                           conditions=[Condition("robust", "synth_vs_synth")],
                           trials_per_cell=9, seed=4)
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back.to_dict() == cfg.to_dict()


def test_exact_cell_counts_and_counterbalance(noise_set_80):
    cfg = ExperimentConfig(task="oddity", eccentricities_deg=[0, 10, 20],
                           conditions=[Condition("texform", "orig_vs_synth"),
                                       Condition("standard", "orig_vs_synth"),
                                       Condition("texform", "synth_vs_synth"),
                                       Condition("standard", "synth_vs_synth")],
                           trials_per_cell=72, seed=5)
    specs = generate_trials(cfg, noise_set_80)
    assert len(specs) == 72 * 3 * 4
    cells = {}
    for s in specs:
        cells.setdefault((s.condition, s.eccentricity_deg), []).append(s)
    assert all(len(v) == 72 for v in cells.values())
    for cell in cells.values():
        counts = np.bincount([s.correct_index for s in cell], minlength=3)
        assert list(counts) == [24, 24, 24]
        images = [(s.stimuli[0].class_name, s.stimuli[0].image_id) for s in cell]
        assert len(set(images)) == len(images)


def test_counterbalance_remainder_within_one(noise_set_80):
    cfg = ExperimentConfig(task="oddity", eccentricities_deg=[0],
                           conditions=[Condition("texform", "orig_vs_synth")],
                           trials_per_cell=70, seed=2)   # 70 = 3*23 + 1
    specs = generate_trials(cfg, noise_set_80)
    counts = np.bincount([s.correct_index for s in specs], minlength=3)
    assert counts.sum() == 70
    assert counts.max() - counts.min() <= 1


def test_schedule_determinism(noise_set_80):
    cfg = ExperimentConfig(task="match2afc", eccentricities_deg=[0, 10],
                           conditions=[Condition("texform", "synth_vs_synth")],
                           trials_per_cell=80, seed=9)
    a = [s.to_dict() for s in generate_trials(cfg, noise_set_80)]
    b = [s.to_dict() for s in generate_trials(cfg, noise_set_80)]
    assert a == b
    cfg2 = ExperimentConfig.from_dict({**cfg.to_dict(), "seed": 10})
    c = [s.to_dict() for s in generate_trials(cfg2, noise_set_80)]
    assert a != c
    counts_a = {}
    counts_c = {}
    for s in a:
        counts_a[(s["condition"], s["eccentricity_deg"])] = \
            counts_a.get((s["condition"], s["eccentricity_deg"]), 0) + 1
    for s in c:
        counts_c[(s["condition"], s["eccentricity_deg"])] = \
            counts_c.get((s["condition"], s["eccentricity_deg"]), 0) + 1
    assert counts_a == counts_c


def test_shortfall_is_itemized(noise_set_80):
    cfg = ExperimentConfig(task="oddity", eccentricities_deg=[0],
                           conditions=[Condition("texform", "orig_vs_synth")],
                           trials_per_cell=100, seed=1)
    with pytest.raises(ScheduleShortfall) as err:
        generate_trials(cfg, noise_set_80)
    assert "texform:orig_vs_synth" in str(err.value)


def test_oddity_composition_rules(noise_set_80):
    cfg = ExperimentConfig(task="oddity", eccentricities_deg=[0],
                           conditions=[Condition("texform", "orig_vs_synth"),
                                       Condition("texform", "synth_vs_synth")],
                           trials_per_cell=20, seed=3)
    for spec in generate_trials(cfg, noise_set_80):
        odd = spec.stimuli[spec.correct_index]
        others = [s for i, s in enumerate(spec.stimuli) if i != spec.correct_index]
        assert others[0] == others[1]                     # one sample twice
        assert others[0].family != "original"
        if spec.condition.endswith("orig_vs_synth"):
            assert odd.family == "original"
        else:
            assert odd.family == others[0].family
            assert odd.seed != others[0].seed             # seeds discriminate


def test_match2afc_composition(noise_set_80):
    cfg = ExperimentConfig(task="match2afc", eccentricities_deg=[0],
                           conditions=[Condition("texform", "synth_vs_synth")],
                           trials_per_cell=20, seed=3)
    for spec in generate_trials(cfg, noise_set_80):
        template, left, right = spec.stimuli
        match = (left, right)[spec.correct_index]
        foil = (left, right)[1 - spec.correct_index]
        assert match == template
        assert foil.seed != template.seed


# ---------------------------------------------------------------------------
# Scoring and observers
# ---------------------------------------------------------------------------

def test_all_correct_scores_one(noise_set_80):
    cfg = ExperimentConfig(task="oddity", eccentricities_deg=[0, 10],
                           conditions=[Condition("texform", "orig_vs_synth")],
                           trials_per_cell=12, seed=7)
    specs = generate_trials(cfg, noise_set_80)
    records = [TrialRecord(trial_id=s.id, response_index=s.correct_index,
                           correct=True) for s in specs]
    table = score_session(records, specs)
    assert all(cell["p"] == 1.0 for cell in table.values())
    assert "condition,eccentricity_deg,k,n,p" in table_to_csv(table)


def test_random_responder_within_chance_bands(noise_set_80):
    lo72, hi72 = binom.ppf([0.005, 0.995], 72, 1 / 3) / 72
    cfg = ExperimentConfig(task="oddity", eccentricities_deg=[0, 10],
                           conditions=[Condition("texform", "orig_vs_synth")],
                           trials_per_cell=72, seed=5)
    specs, records = run_simulated_session(cfg, noise_set_80, RandomObserver(seed=1))
    for cell in score_session(records, specs).values():
        assert lo72 <= cell["p"] <= hi72

    lo80, hi80 = binom.ppf([0.005, 0.995], 80, 0.5) / 80
    cfg2 = ExperimentConfig(task="match2afc", eccentricities_deg=[0, 10],
                            conditions=[Condition("texform", "synth_vs_synth")],
                            trials_per_cell=80, seed=5)
    specs2, records2 = run_simulated_session(cfg2, noise_set_80, RandomObserver(seed=3))
    for cell in score_session(records2, specs2).values():
        assert lo80 <= cell["p"] <= hi80


@pytest.fixture(scope="module")
def scene_set(tmp_path_factory):
    """Originals plus grossly-different 'standard' stimuli (noise)."""
    root = tmp_path_factory.mktemp("scenes")
    rng = np.random.default_rng(0)
    for i in range(14):
        scene = structured_scene(300 + i)
        d = root / "scenes" / f"img{i:02d}"
        save_png(scene, d / "original.png", bit_depth=16)
        for s in (0, 1):
            save_png(ImageBuffer(rng.random((32, 32))),
                     d / f"standard_seed{s}.png", bit_depth=16)
    return ingest_stimulus_set(root)


def test_zero_noise_standard_trials_always_correct(scene_set):
    cfg = ExperimentConfig(task="oddity", eccentricities_deg=[0.0],
                           conditions=[Condition("standard", "orig_vs_synth")],
                           trials_per_cell=12, seed=1)
    observer = SimulatedObserver(scene_set, noise=0.0, seed=0)
    specs, records = run_simulated_session(cfg, scene_set, observer)
    assert all(r.correct for r in records)


def test_infinite_noise_recovers_chance(scene_set):
    cfg = ExperimentConfig(task="oddity", eccentricities_deg=[0.0, 20.0],
                           conditions=[Condition("standard", "orig_vs_synth")],
                           trials_per_cell=12, seed=1)
    observer = SimulatedObserver(scene_set, noise=float("inf"), seed=0)
    specs, records = run_simulated_session(cfg, scene_set, observer)
    k = sum(r.correct for r in records)
    lo, hi = binom.ppf([0.005, 0.995], len(records), 1 / 3)
    assert lo <= k <= hi


def test_observer_deterministic(scene_set):
    cfg = ExperimentConfig(task="match2afc", eccentricities_deg=[0.0, 10.0],
                           conditions=[Condition("standard", "orig_vs_synth")],
                           trials_per_cell=8, seed=2)
    specs = generate_trials(cfg, scene_set)
    obs = SimulatedObserver(scene_set, noise=0.01, seed=5)
    r1 = [obs.respond(s) for s in specs]
    obs2 = SimulatedObserver(scene_set, noise=0.01, seed=5)
    r2 = [obs2.respond(s) for s in specs]
    assert r1 == r2


def test_trial_record_timestamp_invariant():
    with pytest.raises(ValueError):
        TrialRecord(trial_id="t0", response_index=0, correct=True,
                    interval_timestamps=[0.0, 100.0, 50.0])
    rec = TrialRecord(trial_id="t1", response_index=1, correct=False,
                      interval_timestamps=[0.0, 100.0, 600.0])
    assert rec.to_dict()["trial_id"] == "t1"


def test_trial_spec_validation():
    ref = dict(class_name="a", image_id="b", family="texform", seed=0)
    from metamerlab.experiment import StimulusRef
    with pytest.raises(ValueError):
        TrialSpec(id="t0", task="oddity", condition="x", eccentricity_deg=0.0,
                  stimuli=[StimulusRef(**ref)] * 3, correct_index=3)
