import math

import numpy as np
import pytest

import wolpertinger.ddpg as ddpg
from wolpertinger.action_index import ActionSet, IndexConfig, build
from wolpertinger.ddpg import (
    Batch,
    ReplayBuffer,
    Trainer,
    TrainerConfig,
    Transition,
    actor_gradient,
    actor_update,
    critic_targets,
    critic_update,
    load_checkpoint,
    save_checkpoint,
    train,
)
from wolpertinger.nets import Mlp, adam_state, clone_mlp, forward, params_digest
from wolpertinger.policy import WolpertingerPolicy, make_actor, make_critic

from helpers import ChainMdp, TwoStateMdp, chain5_optimal_return, fd_gradient, rel_err


def constant_critic(state_dim: int, action_dim: int, value: float) -> Mlp:
    return Mlp(
        layer_sizes=(state_dim + action_dim, 1),
        weights=[np.zeros((1, state_dim + action_dim))],
        biases=[np.array([value])],
    )


def two_state_policy(rng, critic=None, k=2, hidden=(8, 8)):
    env = TwoStateMdp()
    acts = env.action_set
    actor = make_actor(env.observation_dim, acts, rng, hidden=hidden)
    critic = critic if critic is not None else make_critic(env.observation_dim, acts.dim, rng, hidden=hidden)
    index = build(acts, IndexConfig.exact())
    return env, WolpertingerPolicy(actor, critic, index, acts, k=k)


def make_batch(states, action_ids, action_embs, rewards, next_states, terminals) -> Batch:
    return Batch(
        states=np.asarray(states, dtype=np.float64),
        action_ids=np.asarray(action_ids, dtype=np.int64),
        action_embs=np.asarray(action_embs, dtype=np.float64),
        rewards=np.asarray(rewards, dtype=np.float64),
        next_states=np.asarray(next_states, dtype=np.float64),
        terminals=np.asarray(terminals, dtype=bool),
    )


# ---------------------------------------------------------------------------
# Transitions and replay buffer

def test_transition_rejects_non_finite():
    with pytest.raises(ValueError):
        Transition(np.array([np.inf]), 0, np.zeros(1), 0.0, np.zeros(1), False)
    with pytest.raises(ValueError):
        Transition(np.zeros(1), 0, np.zeros(1), math.nan, np.zeros(1), False)


def test_buffer_fifo_and_sampling():
    buf = ReplayBuffer(capacity=4, state_dim=1, action_dim=1)
    for i in range(6):
        buf.add(Transition(np.array([float(i)]), i, np.array([0.0]), float(i), np.array([0.0]), False))
    assert len(buf) == 4
    batch = buf.sample(4, np.random.default_rng(0))
    # oldest two transitions (0 and 1) were evicted
    assert set(batch.rewards.tolist()) <= {2.0, 3.0, 4.0, 5.0}
    with pytest.raises(RuntimeError):
        buf.sample(5, np.random.default_rng(0))
    with pytest.raises(ValueError):
        ReplayBuffer(capacity=0, state_dim=1, action_dim=1)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(gamma=1.5)
    with pytest.raises(ValueError):
        TrainerConfig(tau=0.0)
    with pytest.raises(ValueError):
        TrainerConfig(minibatch_size=0)
    with pytest.raises(ValueError):
        TrainerConfig(buffer_capacity=8, minibatch_size=16)


# ---------------------------------------------------------------------------
# Bellman targets

def test_terminal_transition_ignores_bootstrap():
    rng = np.random.default_rng(0)
    env, policy = two_state_policy(rng)
    batch = make_batch([[1, 0]], [0], [[0.0]], [5.0], [[0, 1]], [True])
    y = critic_targets(batch, policy, gamma=0.99)
    assert y.tolist() == [5.0]


def test_gamma_zero_targets_are_rewards():
    rng = np.random.default_rng(1)
    env, policy = two_state_policy(rng)
    batch = make_batch(
        [[1, 0], [0, 1]], [0, 1], [[0.0], [1.0]], [1.5, -2.0], [[0, 1], [1, 0]], [False, False]
    )
    assert critic_targets(batch, policy, gamma=0.0).tolist() == [1.5, -2.0]


def test_constant_critic_bellman_backup():
    # fixed critic == 2 everywhere, r = 1, gamma = 0.9 -> y = 2.8
    rng = np.random.default_rng(2)
    critic = constant_critic(2, 1, 2.0)
    env, policy = two_state_policy(rng, critic=critic)
    batch = make_batch([[1, 0]], [0], [[0.0]], [1.0], [[0, 1]], [False])
    assert critic_targets(batch, policy, gamma=0.9).tolist() == pytest.approx([2.8])


def test_targets_use_full_target_policy_not_raw_actor():
    """The bootstrap Q must come from the candidate re-ranked action, which
    can differ from the nearest neighbor of the target actor's output."""
    acts = ActionSet(np.array([[0.0], [1.0]]))
    # actor pinned near 0.1: nearest neighbor is action 0
    actor = Mlp(
        layer_sizes=(2, 1),
        weights=[np.zeros((1, 2))],
        biases=[np.array([np.arctanh(2.0 * 0.1 - 1.0)])],
        output_activation="tanh_box",
        output_low=np.array([0.0]),
        output_high=np.array([1.0]),
    )
    # Q(s, a) = 3a: re-ranking with k = 2 picks action 1 (Q = 3), k = 1 picks 0
    w = np.zeros((1, 3))
    w[0, -1] = 3.0
    critic = Mlp(layer_sizes=(3, 1), weights=[w], biases=[np.zeros(1)])
    index = build(acts, IndexConfig.exact())
    batch = make_batch([[1, 0]], [0], [[0.0]], [0.0], [[0, 1]], [False])
    full = WolpertingerPolicy(actor, critic, index, acts, k=2)
    nearest_only = WolpertingerPolicy(actor, critic, index, acts, k=1)
    assert critic_targets(batch, full, gamma=1.0).tolist() == pytest.approx([3.0])
    assert critic_targets(batch, nearest_only, gamma=1.0).tolist() == pytest.approx([0.0])


# ---------------------------------------------------------------------------
# Critic regression

def test_critic_update_zero_residual_keeps_parameters():
    critic = constant_critic(2, 1, 2.0)
    state = adam_state(critic, 1e-3)
    batch = make_batch([[1, 0], [0, 1]], [0, 1], [[0.0], [1.0]], [0, 0], [[1, 0], [0, 1]], [False, False])
    before = params_digest(critic)
    loss = critic_update(critic, batch, np.array([2.0, 2.0]), state)
    assert loss == 0.0
    assert params_digest(critic) == before  # zero gradient, Adam is exact no-op


def test_critic_update_loss_is_mean_square_residual():
    critic = constant_critic(2, 1, 0.0)
    state = adam_state(critic, 1e-5)
    batch = make_batch([[1, 0], [0, 1]], [0, 1], [[0.0], [1.0]], [0, 0], [[1, 0], [0, 1]], [False, False])
    # residuals q - y = {-1, +1} -> loss 1.0
    loss = critic_update(critic, batch, np.array([1.0, -1.0]), state)
    assert loss == pytest.approx(1.0)


def test_critic_update_converges_to_fixed_target():
    rng = np.random.default_rng(3)
    critic = make_critic(2, 1, rng, hidden=(16, 16))
    state = adam_state(critic, 3e-3)
    batch = make_batch([[1, 0]], [0], [[0.3]], [0.0], [[1, 0]], [False])
    target = np.array([1.7])
    for _ in range(2000):
        critic_update(critic, batch, target, state)
    q = forward(critic, np.array([1.0, 0.0, 0.3]))[0]
    assert abs(q - 1.7) < 1e-3


def test_critic_update_validates_and_aborts():
    critic = constant_critic(2, 1, 0.0)
    state = adam_state(critic, 1e-3)
    batch = make_batch([[1, 0]], [0], [[0.0]], [0.0], [[1, 0]], [False])
    with pytest.raises(ValueError):
        critic_update(critic, batch, np.array([1.0, 2.0]), state)
    with pytest.raises(RuntimeError):
        critic_update(critic, batch, np.array([np.inf]), state)


# ---------------------------------------------------------------------------
# Actor updates

def test_actor_update_noop_when_critic_ignores_action():
    rng = np.random.default_rng(4)
    critic = constant_critic(2, 1, 3.0)  # flat in the action
    env, policy = two_state_policy(rng, critic=critic)
    state = adam_state(policy.actor, 1e-3)
    before = params_digest(policy.actor)
    gnorm = actor_update(policy.actor, critic, np.array([[1.0, 0.0]]), state)
    assert gnorm == 0.0
    assert params_digest(policy.actor) == before


def test_actor_update_climbs_to_critic_optimum():
    """Critic with a single peak at a = 0.7 (V-shaped, exactly representable
    with relu units): repeated ascent drives the actor's output there."""
    rng = np.random.default_rng(5)
    acts = ActionSet(np.array([[0.0], [1.0]]))
    actor = make_actor(1, acts, rng, hidden=(8,))
    # Q(s, a) = -relu(a - 0.7) - relu(0.7 - a) = -|a - 0.7|
    critic = Mlp(
        layer_sizes=(2, 2, 1),
        weights=[np.array([[0.0, 1.0], [0.0, -1.0]]), np.array([[-1.0, -1.0]])],
        biases=[np.array([-0.7, 0.7]), np.zeros(1)],
    )
    state = adam_state(actor, 1e-2)
    states = np.array([[0.5]])
    for _ in range(400):
        actor_update(actor, critic, states, state)
    assert abs(forward(actor, np.array([0.5]))[0] - 0.7) < 1e-2


def test_actor_chained_gradient_matches_finite_differences():
    """The chain rule through critic and actor agrees with finite differences
    of mean_i Q(s_i, f(s_i)) w.r.t. the actor parameters."""
    rng = np.random.default_rng(6)
    acts = ActionSet(rng.uniform(-1, 1, size=(6, 2)))
    actor = make_actor(3, acts, rng, hidden=(5,))
    critic = make_critic(3, 2, rng, hidden=(6,))
    states = rng.normal(size=(4, 3))

    def objective() -> float:
        protos = forward(actor, states)
        x = np.concatenate([states, protos], axis=1)
        return float(np.mean(forward(critic, x)[:, 0]))

    got = actor_gradient(actor, critic, states)
    want_w = fd_gradient(objective, actor.weights)
    want_b = fd_gradient(objective, actor.biases)
    for a, b in zip(got.weights, want_w):
        assert rel_err(a, b) <= 1e-4
    for a, b in zip(got.biases, want_b):
        assert rel_err(a, b) <= 1e-4


# ---------------------------------------------------------------------------
# Trainer loop contracts

def test_zero_step_budget_trains_nothing():
    rng = np.random.default_rng(7)
    env, policy = two_state_policy(rng)
    before = params_digest(policy.actor) + params_digest(policy.critic)
    log = train(env, policy, TrainerConfig(max_env_steps=0, seed=0))
    assert len(log) == 0
    log = train(env, policy, TrainerConfig(max_env_steps=100, max_steps_per_episode=0, seed=0))
    assert len(log) == 0
    assert params_digest(policy.actor) + params_digest(policy.critic) == before


def test_training_log_deterministic_for_fixed_seed():
    def run():
        rng = np.random.default_rng(8)
        env, policy = two_state_policy(rng)
        cfg = TrainerConfig(
            max_env_steps=300, max_steps_per_episode=25, warmup_steps=32,
            minibatch_size=16, seed=11,
        )
        return train(env, policy, cfg).deterministic_rows()

    assert run() == run()


def test_no_sampling_before_warmup():
    rng = np.random.default_rng(9)
    env, policy = two_state_policy(rng)
    cfg = TrainerConfig(max_env_steps=100, max_steps_per_episode=50, warmup_steps=40,
                        minibatch_size=16, seed=1)
    trainer = Trainer(env, policy, cfg)
    sizes_at_sample = []
    orig = trainer.buffer.sample

    def spying_sample(n, rng_):
        sizes_at_sample.append(len(trainer.buffer))
        return orig(n, rng_)

    trainer.buffer.sample = spying_sample
    trainer.train()
    assert sizes_at_sample  # updates did happen
    assert min(sizes_at_sample) >= max(cfg.warmup_steps, cfg.minibatch_size)


def test_buffer_actions_feed_critic_and_actor_uses_own_output(monkeypatch):
    """On every update of a 100-step run: the critic regresses on the stored
    executed embeddings, and the actor's gradient point is its current output
    (checked against an independent forward pass)."""
    rng = np.random.default_rng(10)
    env, policy = two_state_policy(rng)
    acts = policy.actions
    checked = {"critic": 0, "actor": 0}

    real_critic_update = ddpg.critic_update
    real_actor_gradient = ddpg.actor_gradient

    def checking_critic_update(critic, batch, targets, opt):
        assert np.array_equal(batch.action_embs, acts.vectors[batch.action_ids])
        checked["critic"] += 1
        return real_critic_update(critic, batch, targets, opt)

    def checking_actor_gradient(actor, critic, states):
        g = real_actor_gradient(actor, critic, states)
        protos = forward(actor, states)
        x = np.concatenate([states, protos], axis=1)
        n = states.shape[0]
        from wolpertinger.nets import backward

        dq = backward(critic, x, np.full((n, 1), 1.0 / n)).input_grad[:, states.shape[1]:]
        manual = backward(actor, states, dq)
        for a, b in zip(g.weights, manual.weights):
            assert np.array_equal(a, b)
        checked["actor"] += 1
        return g

    monkeypatch.setattr(ddpg, "critic_update", checking_critic_update)
    monkeypatch.setattr(ddpg, "actor_gradient", checking_actor_gradient)
    cfg = TrainerConfig(max_env_steps=100, max_steps_per_episode=50, warmup_steps=32,
                        minibatch_size=8, seed=2)
    train(env, policy, cfg)
    assert checked["critic"] == checked["actor"] == 100 - 32 + 1


def test_target_drift_shrinks_by_one_minus_tau():
    rng = np.random.default_rng(11)
    env, policy = two_state_policy(rng)
    cfg = TrainerConfig(max_env_steps=10, seed=3, tau=0.25)
    trainer = Trainer(env, policy, cfg)
    # freeze the source, push the target away, apply one soft update
    from wolpertinger.nets import soft_update

    for tp in trainer.target_policy.critic.weights:
        tp += 1.0
    before = max(
        np.max(np.abs(tp - sp))
        for tp, sp in zip(trainer.target_policy.critic.weights, policy.critic.weights)
    )
    soft_update(trainer.target_policy.critic, policy.critic, cfg.tau)
    after = max(
        np.max(np.abs(tp - sp))
        for tp, sp in zip(trainer.target_policy.critic.weights, policy.critic.weights)
    )
    assert after == pytest.approx((1.0 - cfg.tau) * before, rel=1e-12)


def test_trainer_initializes_targets_as_copies():
    rng = np.random.default_rng(12)
    env, policy = two_state_policy(rng)
    trainer = Trainer(env, policy, TrainerConfig(seed=4))
    assert params_digest(trainer.target_policy.actor) == params_digest(policy.actor)
    assert params_digest(trainer.target_policy.critic) == params_digest(policy.critic)
    assert trainer.target_policy.k == policy.k
    trainer2 = Trainer(env, policy, TrainerConfig(seed=4, target_k=1))
    assert trainer2.target_policy.k == 1


def test_epsilon_anneals_linearly_over_first_fifth():
    rng = np.random.default_rng(13)
    env, policy = two_state_policy(rng)
    cfg = TrainerConfig(max_env_steps=1000, epsilon_start=1.0, epsilon_final=0.05,
                        epsilon_anneal_frac=0.2, seed=5)
    trainer = Trainer(env, policy, cfg)
    assert trainer.epsilon_at(0) == 1.0
    assert trainer.epsilon_at(100) == pytest.approx(1.0 + 0.5 * (0.05 - 1.0))
    assert trainer.epsilon_at(200) == pytest.approx(0.05)
    assert trainer.epsilon_at(900) == pytest.approx(0.05)


def test_two_state_mdp_critic_converges_to_fixed_point():
    """gamma = 0.9 and unit rewards: trained Q approaches 1/(1-gamma) = 10
    at all four state-action pairs (desk-scale version of the full check)."""
    rng = np.random.default_rng(0)
    env, policy = two_state_policy(rng, hidden=(32, 32))
    warm = 64
    cfg = TrainerConfig(gamma=0.9, tau=0.01, minibatch_size=64, warmup_steps=warm,
                        max_env_steps=4000 + warm - 1, max_steps_per_episode=10**9,
                        critic_lr=1e-3, seed=0, epsilon_final=0.3)
    train(env, policy, cfg)
    for s in range(2):
        obs = np.zeros(2)
        obs[s] = 1.0
        for a in range(2):
            q = float(forward(policy.critic, np.concatenate([obs, policy.actions.vector(a)]))[0])
            assert abs(q - 10.0) < 0.2


def test_chain_mdp_reaches_dp_optimal_return():
    """5-state chain, 4 actions: greedy return matches the value-iteration
    optimum within 20k env steps (median of 5 seeds; 6k steps suffice)."""
    from wolpertinger.harness.runner import greedy_eval

    optimal = chain5_optimal_return(20)
    finals = []
    for seed in range(5):
        env = ChainMdp()
        acts = env.action_set
        actor = make_actor(5, acts, np.random.default_rng(seed), hidden=(32, 32))
        critic = make_critic(5, 1, np.random.default_rng(seed + 100), hidden=(32, 32))
        policy = WolpertingerPolicy(actor, critic, build(acts, IndexConfig.exact()), acts, k=4)
        cfg = TrainerConfig(gamma=0.95, tau=0.01, minibatch_size=32, warmup_steps=200,
                            max_env_steps=6000, max_steps_per_episode=20,
                            critic_lr=1e-3, actor_lr=1e-4, seed=seed)
        train(env, policy, cfg)
        finals.append(greedy_eval(policy, ChainMdp(), episodes=5, max_steps=20))
    assert float(np.median(finals)) == pytest.approx(optimal, abs=1e-9)


def test_max_episodes_caps_training():
    rng = np.random.default_rng(14)
    env, policy = two_state_policy(rng)
    cfg = TrainerConfig(max_env_steps=10_000, max_episodes=3, max_steps_per_episode=7, seed=6)
    log = train(env, policy, cfg)
    assert len(log) == 3
    assert log.rows[-1].env_steps == 21


def test_training_log_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(15)
    env, policy = two_state_policy(rng)
    cfg = TrainerConfig(max_env_steps=60, max_steps_per_episode=20, warmup_steps=16,
                        minibatch_size=8, seed=7)
    log = train(env, policy, cfg)
    full = tmp_path / "log.csv"
    bare = tmp_path / "log_no_timing.csv"
    log.write_csv(full, include_timing=True)
    log.write_csv(bare, include_timing=False)
    header = full.read_text().splitlines()[0]
    assert header.endswith("steps_per_sec")
    assert not bare.read_text().splitlines()[0].endswith("steps_per_sec")
    assert len(full.read_text().splitlines()) == len(log) + 1


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(16)
    env, policy = two_state_policy(rng)
    cfg = TrainerConfig(max_env_steps=50, warmup_steps=16, minibatch_size=8, seed=8)
    trainer = Trainer(env, policy, cfg)
    trainer.train()
    save_checkpoint(tmp_path / "ckpt", policy, trainer.target_policy, cfg, trainer.env_steps)
    loaded = load_checkpoint(tmp_path / "ckpt")
    assert params_digest(loaded["actor"]) == params_digest(policy.actor)
    assert params_digest(loaded["critic"]) == params_digest(policy.critic)
    assert params_digest(loaded["target_actor"]) == params_digest(trainer.target_policy.actor)
    assert loaded["manifest"]["env_steps"] == trainer.env_steps
    assert loaded["manifest"]["config"]["gamma"] == cfg.gamma
    x = np.array([1.0, 0.0])
    assert np.array_equal(forward(loaded["actor"], x), forward(policy.actor, x))
