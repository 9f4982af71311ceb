import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mrtact import scenario as scen


def test_generate_base_size_in_ranges():
    s = scen.generate(50, 6, 11)
    assert s.n_tasks == 50 and s.n_robots == 6
    assert [t.id for t in s.tasks] == list(range(1, 51))
    assert np.all((s.task_xy >= 0) & (s.task_xy <= 1))
    assert np.all((s.deadlines >= 165) & (s.deadlines <= 550))
    assert set(s.demands.tolist()) <= set(range(1, 11))
    assert 0 <= s.depot[0] <= 1 and 0 <= s.depot[1] <= 1
    assert scen.check_ranges(s) == []


def test_single_task_scenario():
    s = scen.generate(1, 1, 3)
    assert s.n_tasks == 1 and s.n_robots == 1


def test_fleet_defaults():
    f = scen.generate(5, 2, 0).fleet
    assert (f.speed, f.max_range, f.max_capacity) == (0.01, 4.0, 10)


@given(st.integers(0, 2**63 - 1))
def test_generation_is_deterministic(seed):
    a, b = scen.generate(20, 3, seed), scen.generate(20, 3, seed)
    assert a == b
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_different_seeds_differ():
    assert scen.generate(10, 2, 1) != scen.generate(10, 2, 2)


def test_distribution_sanity():
    demands, deadlines = [], []
    for s in scen.derive_seeds(5, 250):
        sc = scen.generate(50, 6, s)
        demands.append(sc.demands)
        deadlines.append(sc.deadlines)
    demands, deadlines = np.concatenate(demands), np.concatenate(deadlines)
    assert demands.size >= 10_000
    assert 5.3 <= demands.mean() <= 5.7
    assert 350 <= deadlines.mean() <= 365


@pytest.mark.parametrize("s_t,s_r,count,n_t,n_r", [(2, 2, 100, 100, 24), (1, 1, 100, 50, 6), (10, 1, 1, 500, 60)])
def test_scaled_batch_sizes(s_t, s_r, count, n_t, n_r):
    batch = scen.scaled_batch(s_t, s_r, count, 42)
    assert len(batch) == count
    assert all(s.n_tasks == n_t and s.n_robots == n_r for s in batch)
    assert len({s.seed for s in batch}) == count


def test_derive_seeds_prefix_stable_and_distinct():
    a, b = scen.derive_seeds(9, 10), scen.derive_seeds(9, 20)
    assert a == b[:10]
    assert len(set(b)) == 20


def test_fleet_validation():
    with pytest.raises(ValueError):
        scen.FleetSpec(n_robots=0)
    with pytest.raises(ValueError):
        scen.FleetSpec(n_robots=1, speed=0)
    with pytest.raises(ValueError):
        scen.FleetSpec(n_robots=1, max_range=-1)
    with pytest.raises(ValueError):
        scen.FleetSpec(n_robots=1, max_capacity=0)


def test_generate_rejects_empty():
    with pytest.raises(ValueError):
        scen.generate(0, 1, 0)


@given(st.integers(0, 2**32), st.integers(1, 30), st.integers(1, 8))
def test_save_load_roundtrip(tmp_path_factory, seed, n_t, n_r):
    path = tmp_path_factory.mktemp("sc") / "s.json"
    s = scen.generate(n_t, n_r, seed, max_range=3.25, max_capacity=7)
    scen.save(s, path)
    back = scen.load(path)
    assert back == s
    assert np.array_equal(back.task_xy, s.task_xy)
    assert np.array_equal(back.deadlines, s.deadlines)


def test_out_of_range_deadline_warns_or_fails_in_strict(tmp_path):
    d = scen.generate(3, 1, 0).to_dict()
    d["tasks"][1]["deadline"] = 100.0
    path = tmp_path / "s.json"
    path.write_text(json.dumps(d))
    with pytest.warns(scen.ScenarioRangeWarning):
        s = scen.load(path)
    assert s.tasks[1].deadline == 100.0
    with pytest.raises(scen.ScenarioFormatError, match="deadline"):
        scen.load(path, strict=True)


def test_truncated_file_is_a_parse_error(tmp_path):
    path = tmp_path / "s.json"
    scen.save(scen.generate(4, 2, 0), path)
    path.write_text(path.read_text()[:57])
    with pytest.raises(scen.ScenarioFormatError):
        scen.load(path)


@pytest.mark.parametrize("edit,field", [
    (lambda d: d.pop("fleet"), "fleet"),
    (lambda d: d["tasks"][0].pop("demand"), "tasks[0].demand"),
    (lambda d: d["tasks"][2].__setitem__("x", "far"), "tasks[2].x"),
    (lambda d: d["tasks"][1].__setitem__("id", 7), "tasks[1].id"),
    (lambda d: d.__setitem__("format", 2), "format"),
])
def test_malformed_fields_are_named(tmp_path, edit, field):
    d = scen.generate(3, 1, 0).to_dict()
    edit(d)
    with pytest.raises(scen.ScenarioFormatError) as info:
        scen.from_dict(d)
    assert info.value.field == field


def test_digest_tracks_content():
    a = scen.generate(5, 1, 1)
    assert a.digest() == scen.generate(5, 1, 1).digest()
    assert a.digest() != scen.generate(5, 1, 2).digest()
