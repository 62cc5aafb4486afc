import numpy as np
import pytest

from wolpertinger.action_index import ActionSet, IndexConfig, NeighborResult, build
from wolpertinger.nets import Mlp, forward, init_mlp
from wolpertinger.policy import (
    ExplorationConfig,
    PolicyConfig,
    PolicyDecision,
    WolpertingerPolicy,
    make_actor,
    make_critic,
    noise_sigma_for,
    proto_action,
)


def linear_action_critic(state_dim: int, weight: float = 10.0) -> Mlp:
    """Q(s, a) = weight * a for a 1-D action: exposes re-ranking decisions."""
    w = np.zeros((1, state_dim + 1))
    w[0, -1] = weight
    return Mlp(layer_sizes=(state_dim + 1, 1), weights=[w], biases=[np.zeros(1)])


def simple_policy(rng, n_actions=9, state_dim=3, k=3, refine=True, critic=None):
    acts = ActionSet(np.linspace(0.0, 1.0, n_actions)[:, None])
    actor = make_actor(state_dim, acts, rng, hidden=(8, 8))
    critic = critic if critic is not None else make_critic(state_dim, 1, rng, hidden=(8, 8))
    index = build(acts, IndexConfig.exact())
    return WolpertingerPolicy(actor, critic, index, acts, k=k, refine=refine)


# ---------------------------------------------------------------------------
# PolicyConfig resolution

def test_fractional_k_resolution():
    assert PolicyConfig(k=0.005).resolve_k(1_000_000) == 5_000  # "0.5% of 1e6"
    assert PolicyConfig(k=0.05).resolve_k(256) == 13
    assert PolicyConfig(k=1.0).resolve_k(49) == 49
    assert PolicyConfig(k=0.0001).resolve_k(10) == 1  # floor at 1
    assert PolicyConfig(k=7).resolve_k(10) == 7


def test_k_resolution_validation():
    with pytest.raises(ValueError):
        PolicyConfig(k=0).resolve_k(10)
    with pytest.raises(ValueError):
        PolicyConfig(k=11).resolve_k(10)
    with pytest.raises(ValueError):
        PolicyConfig(k=1.5).resolve_k(10)
    with pytest.raises(ValueError):
        PolicyConfig(k=True).resolve_k(10)


# ---------------------------------------------------------------------------
# Proto-action

def test_zero_weight_actor_emits_box_center():
    acts = ActionSet(np.array([[-2.0, 0.0], [4.0, 1.0]]))
    lo, hi = acts.bounding_box()
    actor = Mlp(
        layer_sizes=(3, 2),
        weights=[np.zeros((2, 3))],
        biases=[np.zeros(2)],
        output_activation="tanh_box",
        output_low=lo,
        output_high=hi,
    )
    assert np.array_equal(proto_action(actor, np.ones(3)), [1.0, 0.5])


def test_proto_action_deterministic_and_inside_box():
    rng = np.random.default_rng(0)
    acts = ActionSet(rng.uniform(-1, 2, size=(20, 4)))
    actor = make_actor(5, acts, rng)
    state = rng.normal(size=5)
    a1, a2 = proto_action(actor, state), proto_action(actor, state)
    assert np.array_equal(a1, a2)
    lo, hi = acts.bounding_box()
    assert np.all(a1 >= lo) and np.all(a1 <= hi)


def test_proto_action_matches_network_forward():
    rng = np.random.default_rng(1)
    acts = ActionSet(rng.uniform(0, 1, size=(10, 2)))
    actor = make_actor(3, acts, rng)
    state = rng.normal(size=3)
    assert np.array_equal(proto_action(actor, state), forward(actor, state))


# ---------------------------------------------------------------------------
# Full selection

def test_full_k_exact_equals_brute_force_argmax():
    """With k = |A| and an exact index the decision equals the plain greedy
    argmax of Q over all actions (independent per-action critic loop)."""
    rng = np.random.default_rng(2)
    acts = ActionSet(rng.uniform(0, 1, size=(49, 4)))
    actor = make_actor(6, acts, rng)
    critic = make_critic(6, 4, rng)
    policy = WolpertingerPolicy(actor, critic, build(acts, IndexConfig.exact()), acts, k=49)
    for _ in range(100):
        state = rng.normal(size=6)
        qs = [float(forward(critic, np.concatenate([state, acts.vector(j)]))[0]) for j in range(49)]
        best_q = max(qs)
        want = min(j for j, q in enumerate(qs) if q == best_q)
        assert policy.select_action(state).chosen == want


def test_k1_takes_nearest_regardless_of_q():
    rng = np.random.default_rng(3)
    # critic strongly prefers large embeddings, but k = 1 never consults it
    critic = linear_action_critic(3, weight=100.0)
    policy = simple_policy(rng, k=1, critic=critic)
    state = np.zeros(3)
    proto = policy.proto_action(state)
    want = int(np.argmin(np.abs(policy.actions.vectors[:, 0] - proto[0])))
    decision = policy.select_action(state)
    assert decision.chosen == want
    assert decision.chosen == decision.candidates.ids[0]


def test_refinement_off_matches_k1_behavior():
    rng = np.random.default_rng(4)
    critic = linear_action_critic(3, weight=100.0)
    policy = simple_policy(rng, k=5, refine=False, critic=critic)
    state = rng.normal(size=3)
    assert policy.select_action(state).chosen == policy.select_action(state).candidates.ids[0]


def test_candidate_re_ranking_picks_highest_q():
    # actions at 0, 0.5, 1.0; proto-action pinned near 0.1; k = 2 retrieves
    # {0, 0.5}; a critic scoring Q = 10*a must pick the 0.5 action
    acts = ActionSet(np.array([[0.0], [0.5], [1.0]]))
    actor = Mlp(
        layer_sizes=(2, 1),
        weights=[np.zeros((1, 2))],
        biases=[np.array([np.arctanh(2.0 * 0.1 - 1.0)])],  # tanh_box -> 0.1
        output_activation="tanh_box",
        output_low=np.array([0.0]),
        output_high=np.array([1.0]),
    )
    critic = linear_action_critic(2, weight=10.0)
    policy = WolpertingerPolicy(actor, critic, build(acts, IndexConfig.exact()), acts, k=2)
    decision = policy.select_action(np.zeros(2))
    assert np.allclose(decision.proto_action, [0.1])
    assert sorted(decision.candidates.ids.tolist()) == [0, 1]
    assert decision.chosen == 1
    assert decision.q_values.max() == pytest.approx(5.0)


def test_q_ties_break_on_smaller_id():
    acts = ActionSet(np.array([[0.0], [0.2], [0.4]]))
    constant_critic = Mlp(layer_sizes=(2, 1), weights=[np.zeros((1, 2))], biases=[np.array([1.0])])
    actor = make_actor(1, acts, np.random.default_rng(5))
    policy = WolpertingerPolicy(actor, constant_critic, build(acts, IndexConfig.exact()), acts, k=3)
    assert policy.select_action(np.zeros(1)).chosen == 0


def test_refinement_dominance_in_k():
    """With an exact index, Q(s, chosen) is non-decreasing in k for the same
    critic (more candidates can only help)."""
    rng = np.random.default_rng(6)
    acts = ActionSet(rng.uniform(0, 1, size=(30, 3)))
    actor = make_actor(4, acts, rng)
    critic = make_critic(4, 3, rng)
    index = build(acts, IndexConfig.exact())
    for trial in range(10):
        state = rng.normal(size=4)
        prev = -np.inf
        for k in range(1, 31):
            policy = WolpertingerPolicy(actor, critic, index, acts, k=k)
            d = policy.select_action(state)
            q = float(d.q_values[d.candidates.ids == d.chosen][0])
            assert q >= prev - 1e-12
            prev = q


def test_decision_invariants_enforced():
    with pytest.raises(ValueError):
        PolicyDecision(
            proto_action=np.zeros(1),
            candidates=NeighborResult(np.array([1, 2]), np.array([0.0, 1.0])),
            q_values=np.zeros(2),
            chosen=5,
        )
    with pytest.raises(ValueError):
        PolicyDecision(
            proto_action=np.zeros(1),
            candidates=NeighborResult(np.array([1]), np.array([0.0])),
            q_values=np.zeros(3),
            chosen=1,
        )


# ---------------------------------------------------------------------------
# Exploration

def test_explore_zero_epsilon_zero_noise_equals_greedy():
    rng = np.random.default_rng(7)
    policy = simple_policy(rng, k=3)
    state = rng.normal(size=3)
    explore = ExplorationConfig(epsilon=0.0, noise_sigma=0.0)
    a = policy.select_action(state)
    b = policy.select_action_explore(state, explore, np.random.default_rng(0))
    assert a.chosen == b.chosen
    assert np.array_equal(a.proto_action, b.proto_action)


def test_explore_epsilon_one_with_singleton_support():
    rng = np.random.default_rng(8)
    policy = simple_policy(rng, k=3)
    explore = ExplorationConfig(epsilon=1.0, noise_sigma=0.0, support=np.array([7]))
    draws = {policy.select_action_explore(np.zeros(3), explore, rng).chosen for _ in range(20)}
    assert draws == {7}


def test_explore_uniform_frequencies_within_3_sigma():
    rng = np.random.default_rng(9)
    policy = simple_policy(rng, n_actions=10, k=1)
    explore = ExplorationConfig(epsilon=1.0, noise_sigma=0.0)
    n = 100_000
    counts = np.zeros(10)
    for _ in range(n):
        counts[policy.select_action_explore(np.zeros(3), explore, rng).chosen] += 1
    sigma = np.sqrt(0.1 * 0.9 / n)
    assert np.all(np.abs(counts / n - 0.1) <= 3.0 * sigma)


def test_explore_empty_support_raises():
    rng = np.random.default_rng(10)
    policy = simple_policy(rng)
    explore = ExplorationConfig(epsilon=1.0, support=np.array([], dtype=np.int64))
    with pytest.raises(ValueError):
        policy.select_action_explore(np.zeros(3), explore, rng)


def test_gaussian_noise_perturbs_proto_action():
    rng = np.random.default_rng(11)
    policy = simple_policy(rng, k=1)
    state = rng.normal(size=3)
    clean = policy.select_action(state).proto_action
    noisy = policy.select_action_explore(
        state, ExplorationConfig(epsilon=0.0, noise_sigma=0.5), np.random.default_rng(1)
    ).proto_action
    assert not np.array_equal(clean, noisy)


def test_noise_sigma_scales_with_box_extent():
    acts = ActionSet(np.array([[0.0, -1.0], [2.0, 1.0]]))
    assert np.array_equal(noise_sigma_for(acts, 0.1), [0.2, 0.2])


# ---------------------------------------------------------------------------
# Batched selection

def test_select_batch_matches_single_selection():
    rng = np.random.default_rng(12)
    acts = ActionSet(rng.uniform(0, 1, size=(25, 3)))
    actor = make_actor(4, acts, rng)
    critic = make_critic(4, 3, rng)
    index = build(acts, IndexConfig.exact())
    for refine in (True, False):
        policy = WolpertingerPolicy(actor, critic, index, acts, k=6, refine=refine)
        states = rng.normal(size=(15, 4))
        sel = policy.select_batch(states)
        for i, state in enumerate(states):
            d = policy.select_action(state)
            assert sel.ids[i] == d.chosen
            assert np.array_equal(sel.embeddings[i], acts.vectors[d.chosen])
            want_q = float(d.q_values[d.candidates.ids == d.chosen][0])
            assert sel.q_values[i] == pytest.approx(want_q, rel=1e-9, abs=1e-12)
