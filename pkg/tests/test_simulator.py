import numpy as np
import pytest

from src.models import InterventionSpec, Mark, SubjectPath
from src.simulation import (cohort_frame, export_cohort, import_cohort, law_models, sample_cohort, sample_path,
                            subject_rng)
from src.utils import ConfigError


def test_same_substream_gives_same_path(example3):
    first = sample_path(example3, None, subject_rng(7, 12), subject_id=12)
    second = sample_path(example3, None, subject_rng(7, 12), subject_id=12)
    assert first == second


def test_paths_respect_the_mark_rules(example1):
    cohort = sample_cohort(example1, None, 400, seed=2)
    for path in cohort.paths:
        marks = [mark for _, mark in path.jumps]
        assert marks.count(Mark.Z) <= 1 and marks.count(Mark.ELL) <= 1
        assert all(0 < t <= example1.tau for t, _ in path.jumps)
        assert all(not Mark.is_terminal(m) for m in marks[:-1])
    assert cohort.counts(Mark.CENSOR).sum() > 0


def test_intervened_law_has_no_censoring(example2):
    cohort = sample_cohort(example2, InterventionSpec(arm=1, alpha=2.0), 300, seed=4)
    assert cohort.counts(Mark.CENSOR).sum() == 0
    assert all(path.a0 == 1 for path in cohort.paths)


def test_alpha_zero_removes_z(example1):
    cohort = sample_cohort(example1, InterventionSpec(alpha=0.0), 300, seed=5)
    assert cohort.counts(Mark.Z).sum() == 0
    assert not law_models(example1, InterventionSpec(alpha=0.0))[Mark.Z].active


def test_common_random_numbers_share_baseline_draws(example2):
    treated = sample_cohort(example2, InterventionSpec(arm=1, alpha=0.5), 50, seed=9)
    control = sample_cohort(example2, InterventionSpec(arm=0, alpha=2.0), 50, seed=9)
    observed = sample_cohort(example2, None, 50, seed=9)
    for a, b, c in zip(treated.paths, control.paths, observed.paths):
        assert a.l0 == b.l0 == c.l0


def test_cohort_does_not_depend_on_threads(example3):
    single = sample_cohort(example3, None, 40, seed=21, threads=1)
    multi = sample_cohort(example3, None, 40, seed=21, threads=3)
    assert single.paths == multi.paths


def test_prefix_stability_across_cohort_sizes(example3):
    small = sample_cohort(example3, None, 10, seed=8)
    large = sample_cohort(example3, None, 30, seed=8)
    assert small.paths == large.paths[:10]


def test_batches_with_offsets_equal_one_run(example2):
    whole = sample_cohort(example2, None, 100, seed=6)
    first = sample_cohort(example2, None, 50, seed=6)
    second = sample_cohort(example2, None, 50, seed=6, start_index=50)
    assert first.paths + second.paths == whole.paths


def test_sampling_errors(example1):
    with pytest.raises(ConfigError):
        sample_cohort(example1, None, 0, seed=1)
    with pytest.raises(ConfigError):
        sample_path(example1, InterventionSpec(arm=1), subject_rng(1, 0))


def test_z_first_jump_frequency_matches_closed_form(exponential_scenario):
    # with constant hazards the first jump is z with probability r_z / (r_1 + r_ell + r_z + r_c)
    cohort = sample_cohort(exponential_scenario, None, 4000, seed=13)
    firsts = np.array([path.jumps[0][1] == Mark.Z for path in cohort.paths if path.jumps])
    expected = 0.2 / (0.3 + 0.1 + 0.2 + 0.05)
    se = np.sqrt(expected * (1 - expected) / firsts.size)
    assert abs(firsts.mean() - expected) <= 4 * se


def test_cohort_round_trip(tmp_path, example2):
    cohort = sample_cohort(example2, None, 60, seed=17)
    csv_path, manifest_path = export_cohort(cohort, tmp_path / "cohort.csv")
    assert manifest_path.name == "cohort.json"
    restored = import_cohort(csv_path)
    assert [p.dict() for p in restored.paths] == [p.dict() for p in cohort.paths]
    assert restored.tau == cohort.tau
    assert restored.scenario == cohort.scenario
    frame = cohort_frame(restored)
    assert list(frame.columns) == ["id", "l0", "a0", "time", "mark"]


def test_subject_without_jumps_is_kept(tmp_path, example1):
    path = SubjectPath(id=0, l0=0.4, jumps=[], tau=example1.tau)
    cohort = sample_cohort(example1, None, 3, seed=1).copy(update={"paths": [path]})
    csv_path, _ = export_cohort(cohort, tmp_path / "empty.csv")
    restored = import_cohort(csv_path)
    assert restored.n == 1
    assert restored.paths[0].jumps == []
    assert restored.paths[0].a0 is None


def test_tied_times_are_perturbed(tmp_path):
    csv_path = tmp_path / "ties.csv"
    csv_path.write_text("id,l0,a0,time,mark\n0,0.5,,1.0,z\n0,0.5,,1.0,ell\n0,0.5,,2.0,outcome1\n")
    cohort = import_cohort(csv_path, tau=3.0)
    jumps = cohort.paths[0].jumps
    assert jumps[0] == (pytest.approx(1.0, abs=1e-8), Mark.ELL) and jumps[0][0] < 1.0
    assert jumps[1] == (1.0, Mark.Z)
    assert cohort.paths[0].terminal_mark == "outcome_1"


def test_terminal_mark_stays_last_on_ties(tmp_path, caplog):
    csv_path = tmp_path / "terminal_ties.csv"
    csv_path.write_text("id,l0,a0,time,mark\n"
                        "0,0.5,1,1.5,outcome1\n0,0.5,1,1.5,z\n"
                        "1,0.2,0,3.0,censor\n1,0.2,0,3.0,ell\n1,0.2,0,3.0,z\n")
    cohort = import_cohort(csv_path, tau=3.0)
    first, second = cohort.paths
    assert [mark for _, mark in first.jumps] == [Mark.Z, "outcome_1"]
    assert first.jumps[1][0] == 1.5 and first.jumps[0][0] < 1.5
    assert [mark for _, mark in second.jumps] == [Mark.ELL, Mark.Z, Mark.CENSOR]
    times = [t for t, _ in second.jumps]
    assert times[-1] == 3.0 and times[0] < times[1] < 3.0
    assert sum("Tied event times" in record.getMessage() for record in caplog.records) == 3


def test_import_needs_tau(tmp_path):
    csv_path = tmp_path / "bare.csv"
    csv_path.write_text("id,l0,a0,time,mark\n0,0.5,,1.0,z\n")
    with pytest.raises(ConfigError):
        import_cohort(csv_path)
