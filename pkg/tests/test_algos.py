import numpy as np
import pytest

from marlflow.algos import (CATEGORIES, AlgoConfig, MonotonicMixer, SumMixer, coma_advantage, entropy,
                            epsilon_greedy, make_algorithm, masked_argmax, masked_softmax, one_hot, ppo_surrogate,
                            ppo_surrogate_grad, qmix_mix, vd_q_update, vda2c_mixed_value)
from marlflow.algos.base import team_rows
from marlflow.algos.core import entropy_grad_logits, masked_log_softmax
from marlflow.approx import Mlp, forward
from marlflow.dataflow import collect_episode, merge_episodes
from marlflow.envs import make_env
from marlflow.errors import AlignmentError, ConfigurationError, ModeError, ProtocolViolation
from marlflow.interface import ActionSpace, EnvSpec, MultiAgentEnv, ObservationBundle, StepOutput
from marlflow.mapping import build_policy_map
from oracles import central_diff, monotonic_mix_loops, rel_error, value_iteration


def build(name, env, sharing="full", hidden=(16,), seed=0, **cfg):
    spec = env.spec
    pm = build_policy_map(spec, sharing)
    return make_algorithm(AlgoConfig(name=name, **cfg), spec, pm, hidden=hidden, seed=seed)


def episodes(algo, env, n, start=0):
    return [collect_episode(env, algo.policies, algo.policy_map, np.random.default_rng(start + i), seed=start + i)
            for i in range(n)]


# -- per-sample helpers --------------------------------------------------------------


def test_masked_argmax_and_softmax():
    assert masked_argmax([3.0, 5.0, 5.0], [1, 0, 1]) == 2
    assert masked_argmax([1.0, 1.0]) == 0
    p = masked_softmax(np.array([0.0, 10.0, 0.0]), [1, 0, 1])
    np.testing.assert_allclose(p, [0.5, 0.0, 0.5])
    np.testing.assert_allclose(np.exp(masked_log_softmax([1.0, 2.0, 3.0])), masked_softmax([1.0, 2.0, 3.0]))
    with pytest.raises(ProtocolViolation):
        masked_softmax([1.0, 2.0], [0, 0])


def test_epsilon_greedy_frequencies():
    rng = np.random.default_rng(0)
    q, mask, eps, n = np.array([0.1, 0.9, 0.5, 2.0]), np.array([1, 1, 1, 0]), 0.3, 20000
    counts = np.bincount([epsilon_greedy(q, mask, eps, rng) for _ in range(n)], minlength=4)
    expected = np.array([eps / 3, 1 - eps + eps / 3, eps / 3, 0.0])
    assert counts[3] == 0
    sd = np.sqrt(expected * (1 - expected) / n)
    assert np.all(np.abs(counts / n - expected) <= 5 * sd + 1e-12)
    assert epsilon_greedy(q, mask, 0.0, rng) == 1


def test_entropy_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    z = rng.normal(size=4)
    g = entropy_grad_logits(masked_softmax(z))
    np.testing.assert_allclose(g, central_diff(lambda: float(entropy(masked_softmax(z))), z), atol=1e-8)
    assert entropy([0.5, 0.5]) == pytest.approx(np.log(2))


def test_ppo_surrogate_and_gradient():
    assert ppo_surrogate(1.5, 2.0, 0.2) == pytest.approx(2.4)
    assert ppo_surrogate(0.5, -1.0, 0.2) == pytest.approx(-0.8)
    assert ppo_surrogate(0.5, 1.0, 0.2) == pytest.approx(0.5)
    rng = np.random.default_rng(2)
    for _ in range(200):
        r, a = rng.uniform(0.5, 1.5), rng.normal()
        if min(abs(r - 0.8), abs(r - 1.2)) < 1e-3:
            continue
        h = 1e-6
        fd = (ppo_surrogate(r + h, a, 0.2) - ppo_surrogate(r - h, a, 0.2)) / (2 * h)
        assert ppo_surrogate_grad(r, a, 0.2) == pytest.approx(fd, abs=1e-6)


def test_coma_advantage_has_zero_policy_mean():
    rng = np.random.default_rng(3)
    q, p = rng.normal(size=4), masked_softmax(rng.normal(size=4))
    assert sum(p[a] * coma_advantage(q, p, a) for a in range(4)) == pytest.approx(0.0, abs=1e-12)


def test_one_hot_negative_is_zero_row():
    np.testing.assert_array_equal(one_hot([1, -1], 3), [[0, 1, 0], [0, 0, 0]])


# -- mixers ----------------------------------------------------------------------------


def test_width_one_mixer_matches_hand_computation():
    mixer = MonotonicMixer(2, 1, embed=1, hyper_hidden=(3,), seed=0)
    # hypernet output layout: W1 (2 values), b1, w2, b2
    mixer.net = Mlp([1, 3, 5], [np.zeros((1, 3)), np.zeros((3, 5))], [np.zeros(3), np.array([-2.0, 0.5, 0.1, -3.0, 0.7])])
    q = np.array([0.4, -1.0])
    expected = 3.0 * np.tanh(2.0 * 0.4 + 0.5 * -1.0 + 0.1) + 0.7
    assert mixer.forward(q, np.array([0.3])) == pytest.approx(expected, abs=1e-12)


def test_mixer_forward_matches_loop_oracle():
    rng = np.random.default_rng(4)
    for _ in range(20):
        n, m, sd = int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 4))
        mixer = MonotonicMixer(n, sd, embed=m, hyper_hidden=(6,), seed=int(rng.integers(1000)))
        q, s = rng.normal(size=n), rng.normal(size=sd)
        h = forward(mixer.net, s)
        w1 = h[: n * m].reshape(m, n)
        ref = monotonic_mix_loops(q, w1, h[n * m: n * m + m], h[n * m + m: n * m + 2 * m], h[-1])
        assert mixer.forward(q, s) == pytest.approx(ref, abs=1e-12)
        assert qmix_mix(q, s, mixer) == pytest.approx(ref, abs=1e-12)


def test_mixer_backward_matches_finite_differences():
    rng = np.random.default_rng(5)
    mixer = MonotonicMixer(3, 2, embed=4, hyper_hidden=(5,), seed=1)
    q, s, up = rng.normal(size=(4, 3)), rng.normal(size=(4, 2)), rng.normal(size=4)

    def loss():
        return float(np.sum(up * mixer.forward(q, s)))

    dq, g = mixer.backward(q, s, up)
    assert rel_error(dq, central_diff(loss, q)) < 1e-5
    for (_, p), (_, gp) in zip(mixer.net.named_params(), g.named()):
        assert rel_error(gp, central_diff(loss, p)) < 1e-4


def test_mixer_is_monotonic_in_each_agent():
    rng = np.random.default_rng(6)
    for _ in range(200):
        mixer = MonotonicMixer(3, 2, embed=4, hyper_hidden=(5,), seed=int(rng.integers(10**6)))
        q, s = rng.normal(size=3) * 3, rng.normal(size=2)
        dq, _ = mixer.backward(q, s, 1.0)
        assert np.all(dq >= 0)


def test_sum_mixer_and_mode_guard():
    mixer = SumMixer(3)
    assert mixer.forward(np.array([[1.0, 2.0, 3.0]]))[0] == 6.0
    dq, g = mixer.backward(np.ones((2, 3)), None, np.array([1.0, 2.0]))
    np.testing.assert_array_equal(dq, [[1, 1, 1], [2, 2, 2]])
    assert g is None
    with pytest.raises(ModeError):
        vda2c_mixed_value(np.zeros(2), np.zeros(2), mixer, "competitive")


# -- learners --------------------------------------------------------------------------


def test_unknown_algorithm_and_mode_mismatch():
    with pytest.raises(ConfigurationError):
        build("qtran", make_env("matrix"))
    for name in ("vdn", "qmix", "vda2c"):
        with pytest.raises(ModeError):
            build(name, make_env("matrix", {"preset": "matching_pennies"}))
        with pytest.raises(ModeError):
            build(name, make_env("turn_game"))


def test_team_rows_rejects_misaligned_buffers():
    env = make_env("matrix")
    algo = build("vdn", env)
    bufs = episodes(algo, env, 1)[0]
    bufs["a0"].transitions[1].step = 7
    with pytest.raises(AlignmentError):
        team_rows(bufs, env.spec)


def test_vd_gradient_matches_finite_differences():
    env = make_env("matrix", {"preset": "coordination", "horizon": 3})
    for name in ("vdn", "qmix"):
        algo = build(name, env, sharing="none", hidden=(4,), mixer_hidden=3)
        merged = merge_episodes(episodes(algo, env, 2))
        pol = algo.policies["a1"]
        for p in pol.target.weights:
            p += 0.1  # make the bootstrap non-trivial

        def loss():
            processed = algo.postprocess(merged, spec=env.spec, value_fn=algo._chosen_q,
                                         mixer_kind=algo.mixer.kind, target_fn=algo._target_max)
            return vd_q_update(processed, algo.policies, algo.policy_map, env.spec, algo.mixer,
                               algo.target_mixer, 0.9)[0]

        processed = algo.postprocess(merged, spec=env.spec, value_fn=algo._chosen_q,
                                     mixer_kind=algo.mixer.kind, target_fn=algo._target_max)
        _, grads, mgrads = vd_q_update(processed, algo.policies, algo.policy_map, env.spec, algo.mixer,
                                       algo.target_mixer, 0.9)
        for (_, p), (_, gp) in zip(pol.q.named_params(), grads["a1"].named()):
            assert rel_error(gp, central_diff(loss, p)) < 1e-4, name
        if mgrads is not None:
            (_, p), (_, gp) = next(algo.mixer.net.named_params()), next(mgrads.named())
            assert rel_error(gp, central_diff(loss, p)) < 1e-4


@pytest.mark.parametrize("name", ["ia2c", "ippo", "mappo"])
def test_actor_gradient_matches_finite_differences(name):
    env = make_env("matrix", {"preset": "masked_coordination", "horizon": 4})
    algo = build(name, env, hidden=(5,))
    processed = algo.process(episodes(algo, env, 2))
    ts = [t for b in processed.values() for t in b.transitions]
    pol = algo.policies["shared_0"]
    for p in pol.actor.weights:
        p += np.random.default_rng(0).normal(scale=0.3, size=p.shape)  # move the ratio away from 1
    adv = np.random.default_rng(1).normal(size=len(ts))
    _, _, g = algo.actor_loss_and_grads("shared_0", ts, adv)
    for (_, p), (_, gp) in zip(pol.actor.named_params(), g.named()):
        fd = central_diff(lambda: algo.actor_loss_and_grads("shared_0", ts, adv)[0], p)
        assert rel_error(gp, fd) < 1e-4


@pytest.mark.parametrize("name", ["mappo", "coma", "vda2c"])
def test_critic_gradient_matches_finite_differences(name):
    env = make_env("matrix", {"preset": "coordination", "horizon": 3})
    algo = build(name, env, hidden=(5,), mixer_hidden=3)
    processed = algo.process(episodes(algo, env, 2))
    pol = algo.policies["shared_0"]
    if name == "vda2c":
        _, grads, _ = algo.mixed_critic_loss_and_grads(processed)
        g = grads["shared_0"]
        merged = merge_episodes(episodes(algo, env, 2))

        def loss():
            # fresh peer values from the perturbed critic, returns held fixed
            fresh = algo.postprocess(merged, spec=env.spec, value_fn=algo._state_value, mixer_kind=algo.mixer.kind)
            for a in fresh:
                for f, t in zip(fresh[a].transitions, processed[a].transitions):
                    f.return_ = t.return_
            return algo.mixed_critic_loss_and_grads(fresh)[0]
    else:
        ts = [t for b in processed.values() for t in b.transitions]
        _, g = algo.critic_loss_and_grads("shared_0", ts)

        def loss():
            return algo.critic_loss_and_grads("shared_0", ts)[0]
    for (_, p), (_, gp) in zip(pol.critic.named_params(), g.named()):
        assert rel_error(gp, central_diff(loss, p)) < 1e-4


def test_coma_critic_sees_other_actions_and_slot():
    env = make_env("spread_grid", {"n_agents": 3})
    algo = build("coma", env)
    processed = algo.process(episodes(algo, env, 1))
    x = algo.critic_inputs("a1", processed["a1"].transitions)
    spec = env.spec
    assert x.shape[1] == spec.state_dim + 2 * spec.n_actions + spec.obs_dim + 3
    assert np.all(x[:, -3:] == [0, 1, 0])
    assert processed["a1"].transitions[0].critic_q.shape == (spec.n_actions,)


class TwoState(MultiAgentEnv):
    """s0: a0 -> s1 (r 0), a1 -> end (r 0.5); s1: a0 -> end (r 1), a1 -> s0 (r 0)."""

    P, R, END = [[1, 0], [0, 0]], [[0.0, 0.5], [1.0, 0.0]], [[False, True], [True, False]]

    def __init__(self):
        super().__init__()
        self.spec = EnvSpec(("a0",), 2, 0, ActionSpace.discrete(2), "cooperative", "synchronous",
                            {"a0": "team"}, 60)
        self.s = 0

    def _obs(self):
        return {"a0": ObservationBundle(np.eye(2)[self.s])}

    def _reset(self, rng):
        self.s = 0
        return StepOutput(self._obs(), {}, False)

    def _step(self, actions):
        a = int(actions["a0"])
        r, done = self.R[self.s][a], self.END[self.s][a] or self.t >= self.spec.episode_limit
        self.s = self.P[self.s][a]
        return StepOutput({} if done else self._obs(), {"a0": r}, done)


def test_tabular_iql_recovers_value_iteration():
    env = TwoState()
    gamma = 0.9
    spec, pm = env.spec, build_policy_map(env.spec, "full")
    algo = make_algorithm(AlgoConfig(name="iql", gamma=gamma, lr_critic=0.5, batch_episodes=8,
                                     target_update_period=50), spec, pm, model_kind="tabular", seed=0)
    for pol in algo.policies.values():
        pol.epsilon = 0.5
    steps = 0
    for it in range(400):
        eps = episodes(algo, env, 4, start=4 * it)
        steps += sum(b["a0"].env_steps for b in eps)
        algo.train_iteration(eps, steps)
    q_star = value_iteration(TwoState.P, TwoState.R, gamma, TwoState.END)
    pol = algo.policies["shared_0"]
    learned = np.stack([pol.q_values(np.eye(2)[s]) for s in range(2)])
    np.testing.assert_allclose(learned, q_star, atol=0.05)


@pytest.mark.parametrize("name", ["ia2c", "ippo", "maa2c", "mappo", "coma", "iql"])
def test_single_agent_bandit_finds_best_arm(name):
    env = make_env("matrix", {"n_agents": 1, "n_actions": 3, "horizon": 1, "payoff": {"team": [0.0, 1.0, 0.3]}})
    algo = build(name, env, hidden=(8,), lr_actor=0.01, lr_critic=0.01, batch_episodes=8, episodes_per_iter=8)
    steps = 0
    for it in range(150):
        algo.set_exploration(steps, 600)
        eps = episodes(algo, env, 8, start=8 * it)
        steps += 8
        algo.train_iteration(eps, steps)
    bundle = env.reset(seed=0).observations["a0"]
    assert algo.greedy_actions("shared_0", [bundle]) == [1]


@pytest.mark.parametrize("name", sorted(CATEGORIES))
def test_checkpoint_arrays_round_trip(name):
    env = make_env("matrix")
    algo = build(name, env, batch_episodes=2)
    algo.train_iteration(episodes(algo, env, 4), 20)
    fresh = build(name, env, seed=99, batch_episodes=2)
    assert fresh.checksum() != algo.checksum()
    fresh.load_arrays(algo.to_arrays())
    assert fresh.checksum() == algo.checksum()
