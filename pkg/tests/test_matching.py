import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linear_sum_assignment

from mrtact import sim
from mrtact.expert import ExpertIncentive, expert_weight
from mrtact.matching import (BigraphAllocator, FeasRnd, build_bigraph, decide, feas_rnd, hungarian_max,
                             max_weight_matching, pairwise)
from mrtact.scenario import FleetSpec, Scenario, TaskSpec, generate
from tests.support import brute_force_matching, random_masked_matrix

# slack * exp(-arrival / 550) evaluated by hand for the world in two_by_three_world()
HAND_2x3 = np.array([
    [2.739302148846787, 0.0, 1.6675058361503612],
    [1.3696510744233934, 0.0, 0.15281042458514948],
])


def two_by_three_world():
    tasks = (TaskSpec(1, 0.3, 0.4, 500.0, 4), TaskSpec(2, 0.6, 0.8, 80.0, 4), TaskSpec(3, 1.0, 0.0, 300.0, 4))
    w = sim.init(Scenario(tasks=tasks, depot=(0.0, 0.0), fleet=FleetSpec(n_robots=2), seed=0))
    w.robot_xy[1] = (0.3, 0.4)
    w.robot_range[1], w.robot_cap[1], w.robot_t_next[:] = 2.0, 5, [0.0, 50.0]
    w.robot_at_depot[1] = False
    return w


def test_expert_bigraph_matches_hand_values():
    g = build_bigraph(two_by_three_world(), ExpertIncentive())
    assert g.mask.tolist() == [[True, False, True], [True, False, True]]
    assert np.allclose(g.weights, HAND_2x3, rtol=1e-12, atol=0)
    assert g.task_ids.tolist() == [1, 2, 3]


def test_expired_column_and_short_range_row_are_masked():
    w = two_by_three_world()
    w.task_status[0] = sim.EXPIRED
    w.robot_range[1] = 0.1
    g = build_bigraph(w, ExpertIncentive())
    assert not g.mask[:, 0].any()
    assert not g.mask[1].any()


@pytest.mark.parametrize("bad", [-1.0, np.nan])
def test_bad_weight_function_is_rejected(bad):
    with pytest.raises(ValueError):
        build_bigraph(two_by_three_world(), lambda world, r, t, mask=None: np.full((len(r), len(t)), bad))


def test_pairwise_lifts_scalar_weights():
    w = two_by_three_world()
    scalar = pairwise(lambda world, r, i: expert_weight(r, i, world))
    assert np.allclose(build_bigraph(w, scalar).weights, HAND_2x3, rtol=1e-12, atol=0)


def test_two_by_two_example():
    m = max_weight_matching(np.array([[1.0, 2.0], [2.0, 4.0]]))
    assert set(m.pairs) == {(0, 0), (1, 1)} and m.objective == 5.0


def test_single_edge():
    m = max_weight_matching(np.array([[0.7]]), np.array([[True]]))
    assert m.pairs == [(0, 0)] and m.objective == 0.7


def test_all_masked():
    m = max_weight_matching(np.ones((3, 4)), np.zeros((3, 4), dtype=bool))
    assert m.pairs == [] and m.objective == 0.0


def test_ties_resolve_to_lexicographically_smallest():
    assert max_weight_matching(np.ones((2, 3))).pairs == [(0, 0), (1, 1)]
    # "unmatched" ranks after every task, so a zero-weight edge is taken when it is free
    w = np.array([[0.0, 0.0], [1.0, 0.0]])
    assert max_weight_matching(w).pairs == [(0, 1), (1, 0)]
    w = np.array([[0.0], [1.0]])
    assert max_weight_matching(w).pairs == [(1, 0)]


def test_rectangular_inputs():
    m = max_weight_matching(np.array([[5.0, 1.0, 9.0]]))
    assert m.pairs == [(0, 2)]
    m = max_weight_matching(np.array([[5.0], [6.0], [1.0]]))
    assert m.pairs == [(1, 0)]


@settings(max_examples=300)
@given(st.integers(0, 2**32), st.booleans())
def test_agrees_with_exhaustive_search(seed, integer):
    w, mask = random_masked_matrix(np.random.default_rng(seed), max_n=6, integer=integer)
    obj, pairs = brute_force_matching(w, mask)
    m = max_weight_matching(w, mask)
    assert m.objective == obj
    assert m.pairs == pairs
    assert all(mask[r, c] for r, c in m.pairs)
    assert len({c for _, c in m.pairs}) == len(m.pairs)


@given(st.integers(0, 2**32), st.floats(1e-3, 1e3))
def test_scaling_leaves_pairs_unchanged(seed, lam):
    rng = np.random.default_rng(seed)
    w, mask = random_masked_matrix(rng)
    assert max_weight_matching(w * lam, mask).pairs == max_weight_matching(w, mask).pairs


@given(st.integers(0, 2**32))
def test_column_relabeling_permutes_pairs(seed):
    rng = np.random.default_rng(seed)
    w, mask = random_masked_matrix(rng)  # continuous weights: optimum is unique almost surely
    perm = rng.permutation(w.shape[1])
    base = max_weight_matching(w, mask)
    moved = max_weight_matching(w[:, perm], mask[:, perm])
    assert moved.objective == pytest.approx(base.objective, rel=1e-12)
    assert sorted((r, int(perm[c])) for r, c in moved.pairs) == base.pairs


def test_rejects_negative_weights():
    with pytest.raises(ValueError):
        max_weight_matching(np.array([[-1.0]]))


def mid_episode_world(seed, n_tasks=50, n_robots=6, steps=20):
    sc = generate(n_tasks, n_robots, seed)
    w = sim.init(sc)
    alloc = BigraphAllocator(ExpertIncentive())
    for _ in range(steps):
        r = sim.next_decider(w)
        sim.apply(w, r, alloc(w, r) if len(sim.feasibility(w, r)) else sim.DEPOT)
    return w


def test_decide_matches_independent_assignment_solver():
    for seed in range(5):
        w = mid_episode_world(seed)
        r = sim.next_decider(w)
        g = build_bigraph(w, ExpertIncentive())
        # forbidden edges get a large negative profit; dummy columns let robots stay unmatched
        profit = np.where(g.mask, g.weights, -1e6)
        padded = np.hstack([profit, np.zeros((g.shape[0], g.shape[0]))])
        rows, cols = linear_sum_assignment(padded, maximize=True)
        col = dict(zip(rows, cols))[r]
        expected = int(g.task_ids[col]) if col < g.shape[1] else sim.DEPOT
        assert decide(w, ExpertIncentive(), r) == expected


def test_decide_without_feasible_tasks_goes_to_depot():
    w = two_by_three_world()
    w.robot_range[0] = 0.1
    assert decide(w, ExpertIncentive(), 0) == sim.DEPOT


def test_decide_single_feasible_task():
    w = two_by_three_world()
    w.task_status[2] = sim.EXPIRED
    assert decide(w, ExpertIncentive(), 1) == sim.DEPOT  # robot 0 takes the only task
    assert decide(w, ExpertIncentive(), 0) == 1


@settings(max_examples=20)
@given(st.integers(0, 2**32))
def test_decide_is_always_feasible(seed):
    sc = generate(20, 4, seed)
    w = sim.init(sc)
    alloc = BigraphAllocator(ExpertIncentive())
    while not w.robot_retired.all():
        r = sim.next_decider(w)
        feasible = set(sim.feasibility(w, r).tolist())
        a = alloc(w, r) if feasible else sim.DEPOT
        assert a == sim.DEPOT or a in feasible
        sim.apply(w, r, a)


def test_feas_rnd_edge_cases():
    w = two_by_three_world()
    w.robot_range[0] = 0.1
    rng = np.random.default_rng(0)
    assert feas_rnd(w, 0, rng) == sim.DEPOT
    tasks = tuple(TaskSpec(k, 0.1, 0.0, 500.0, 5) for k in range(1, 11))
    w = sim.init(Scenario(tasks=tasks, depot=(0.0, 0.0), fleet=FleetSpec(n_robots=1), seed=0))
    w.task_status[:] = sim.EXPIRED
    w.task_status[6] = sim.ACTIVE
    assert {feas_rnd(w, 0, rng) for _ in range(20)} == {7}


def test_feas_rnd_is_uniform():
    tasks = tuple(TaskSpec(k, 0.1 * k, 0.0, 500.0, 5) for k in range(1, 4))
    w = sim.init(Scenario(tasks=tasks, depot=(0.0, 0.0), fleet=FleetSpec(n_robots=1), seed=0))
    alloc = FeasRnd(123)
    n = 10_000
    draws = np.array([alloc(w, 0) for _ in range(n)])
    counts = np.array([(draws == k).sum() for k in (1, 2, 3)])
    sd = np.sqrt(n * (1 / 3) * (2 / 3))
    assert np.all(np.abs(counts - n / 3) <= 3 * sd)


def test_hungarian_max_on_bigraph():
    g = build_bigraph(two_by_three_world(), ExpertIncentive())
    m = hungarian_max(g)
    # 1.6675 + 1.3697 beats 2.7393 + 0.1528
    assert m.pairs == [(0, 2), (1, 0)]
    assert m.objective == pytest.approx(HAND_2x3[0, 2] + HAND_2x3[1, 0], rel=1e-12)
