from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trusttransfer.data import (
    FORMAT_HEADER,
    POST,
    PRE,
    DatasetError,
    SyntheticConfig,
    build_batch,
    dumps_dataset,
    generate_synthetic,
    likert_from_logit,
    load_dataset,
    loads_dataset,
    normalize_likert,
    synthetic_world,
    to_observations,
)

HEADER = ("participant_id,domain,obs1_task,obs1_outcome,obs1_score,obs2_task,obs2_outcome,obs2_score,"
          "test1_task,test1_pre,test1_post,test2_task,test2_pre,test2_post,test3_task,test3_pre,test3_post,grouping")
GROUPING = "A1=A/easy;A2=A/easy;A3=A/easy;A4=A/difficult;B1=B/easy"


def one_record(obs="A1,+1,6,A2,+1,7", tested="A3,4,6,A4,3,4,B1,4,4", grouping=GROUPING):
    return f"{FORMAT_HEADER}\n{HEADER}\np01,household,{obs},{tested},{grouping}\n"


@pytest.mark.parametrize("score, value", [(1, 0.01), (2, 1 / 6), (4, 0.5), (7, 0.99)])
def test_normalize_likert(score, value):
    assert normalize_likert(score) == pytest.approx(value, abs=1e-15)


@pytest.mark.parametrize("bad", [0, 8, 3.5, -1])
def test_normalize_likert_rejects(bad):
    with pytest.raises(DatasetError):
        normalize_likert(bad)


def test_minimal_file():
    ds = loads_dataset(one_record())
    assert len(ds) == 1
    rec = ds.records[0]
    assert rec.score("A3", 0) == 4 and rec.score("A3", 2) == 6 and rec.score("A2", 2) == 7
    assert rec.grouping["A4"] == ("A", "difficult")


@pytest.mark.parametrize("text, match", [
    (one_record(tested="A3,4,8,A4,3,4,B1,4,4"), "Likert"),
    (one_record(obs="A1,+1,6,A2,-1,7"), "successes or all failures"),
    (one_record(obs="A1,+2,6,A2,+2,7"), r"\+1 or -1"),
    (one_record(tested="A3,4,6,A3,3,4,B1,4,4"), "repeat"),
    (one_record(tested="A1,4,6,A4,3,4,B1,4,4"), "also observed"),
    (one_record(obs="A1,+1,6,A4,+1,7", tested="A3,4,6,A5,3,4,B1,4,4", grouping=GROUPING + ";A5=A/difficult"),
     "different cells"),
    (one_record(tested="A3,4,6,A4,3,4,B1,x,4"), "integer"),
    (one_record().replace(FORMAT_HEADER, "# other v9"), "header"),
    (f"{FORMAT_HEADER}\n{HEADER}\np01,household,A1\n", "fields"),
])
def test_schema_errors(text, match):
    with pytest.raises(DatasetError, match=match):
        loads_dataset(text)


def test_errors_name_record_index():
    text = one_record() + "p02,household,A1,+1,6,A2,+1,9,A3,4,6,A4,3,4,B1,4,4,\n"
    with pytest.raises(DatasetError, match="record 1"):
        loads_dataset(text)


def test_round_trip_is_canonical(tmp_path):
    ds = generate_synthetic(SyntheticConfig(n_participants=5, dim=4))
    text = dumps_dataset(ds)
    (tmp_path / "d.csv").write_text(text)
    again = load_dataset(tmp_path / "d.csv", ds.features)
    assert dumps_dataset(again) == text
    assert again.records == ds.records


def test_to_observations():
    ds = loads_dataset(one_record())
    feats = {t: np.full(3, i, dtype=float) for i, t in enumerate(["A1", "A2", "A3", "A4", "B1"])}
    obs = to_observations(ds.records[0], feats)
    assert [o.outcome for o in obs] == [1.0, 1.0]
    np.testing.assert_array_equal(obs[1].features, feats["A2"])
    with pytest.raises(DatasetError, match="features"):
        to_observations(ds.records[0], {"A1": np.ones(3)})
    fail = loads_dataset(one_record(obs="A1,-1,2,A2,-1,1")).records[0]
    assert [o.outcome for o in to_observations(fail, feats)] == [-1.0, -1.0]


def test_batch_layout():
    ds = loads_dataset(one_record(), features={t: np.ones(2) for t in ["A1", "A2", "A3", "A4", "B1"]})
    b = build_batch(ds)
    assert b.tgt_y.shape == (1, 8)
    np.testing.assert_array_equal(b.tgt_step[0], [0, 0, 0, 1, 2, 2, 2, 2])
    np.testing.assert_array_equal(b.tgt_kind[0], [PRE] * 3 + [1, 1] + [POST] * 3)
    np.testing.assert_allclose(b.tgt_y[0, :3], [0.5, 1 / 3, 0.5])
    assert [b.task_ids[i] for i in b.tgt_task[0]] == ["A3", "A4", "B1", "A1", "A2", "A3", "A4", "B1"]


def test_missing_features_rejected():
    with pytest.raises(DatasetError, match="features"):
        loads_dataset(one_record(), features={"A1": np.ones(2)})


def test_synthetic_is_deterministic_and_valid():
    a = generate_synthetic(SyntheticConfig(seed=11))
    b = generate_synthetic(SyntheticConfig(seed=11))
    assert dumps_dataset(a) == dumps_dataset(b)
    assert len(a) == 32 and len(a.task_ids) <= 12 and len(a.features) == 12
    assert all(np.shape(v) == (50,) for v in a.features.values())
    assert dumps_dataset(generate_synthetic(SyntheticConfig(seed=12))) != dumps_dataset(a)


@pytest.mark.parametrize("cfg", [dict(n_groups=3), dict(n_tasks=10), dict(n_tasks=8), dict(noise=-1),
                                 dict(group_separation=2.0), dict(n_participants=0)])
def test_synthetic_config_errors(cfg):
    with pytest.raises(DatasetError):
        generate_synthetic(SyntheticConfig(**cfg))


def _all_scores(world, participant, history):
    return likert_from_logit(world.competence(participant, history))


def test_within_group_scores_closer_than_between_groups():
    # H1 analog from the planted state: after observing a task, scores inside its group stay closer together
    for seed in range(5):
        world = synthetic_world(SyntheticConfig(seed=seed, noise=0.0))
        g = world.groups
        within, between = [], []
        for p in range(world.cfg.n_participants):
            for o in range(len(g)):
                for c in (1, -1):
                    s = _all_scores(world, p, [(o, c), (o, c)])
                    d = np.abs(s[:, None] - s[None, :])
                    same = g[:, None] == g[None, :]
                    off = ~np.eye(len(g), dtype=bool)
                    within.append(d[same & off].mean())
                    between.append(d[~same].mean())
        assert np.mean(within) < np.mean(between)


def test_same_group_changes_more_noise_free():
    # H2 analog on generated records
    for seed in range(5):
        ds = generate_synthetic(SyntheticConfig(seed=seed, noise=0.0))
        same = [abs(e.post - e.pre) for r in ds.records for e in r.tested[:2]]
        other = [abs(r.tested[2].post - r.tested[2].pre) for r in ds.records]
        assert np.mean(same) > np.mean(other)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_larger_success_shift_never_lowers_same_group_scores(seed, s1, s2):
    lo, hi = sorted((s1, s2))
    base = SyntheticConfig(seed=seed, noise=0.0, n_participants=8, success_rate=1.0)
    a = generate_synthetic(replace(base, local_shift=lo))
    b = generate_synthetic(replace(base, local_shift=hi))
    for ra, rb in zip(a.records, b.records):
        assert [e.task for e in ra.tested] == [e.task for e in rb.tested]
        for ea, eb in zip(ra.tested[:2], rb.tested[:2]):
            assert eb.post >= ea.post


def test_shift_asymmetry_at_equal_distance():
    # a success moves an easier task more than an equally distant harder one; a failure the reverse
    world = synthetic_world(SyntheticConfig(seed=0))
    world.positions = np.array([[0.0, 0.0], [0.0, 1.0], [0.0, -1.0], [1.0, 0.0]] + [[9.0, 0.0]] * 8)
    up, down = world.shift(0, 1.0), world.shift(0, -1.0)
    assert up[1] > up[2] > 0
    assert down[2] < down[1] < 0
    assert up[3] == pytest.approx(-down[3])  # no difficulty gap, no asymmetry


def test_likert_quantization():
    np.testing.assert_array_equal(likert_from_logit([-50, 0, 50]), [1, 4, 7])
