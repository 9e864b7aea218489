import itertools

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psdrl.envs import (
    DEFAULT_MAZE,
    DeepSeaChain,
    EnvSpec,
    EpisodeOver,
    GridMaze,
    TabularMDP,
    TwoRooms,
    bellman_residual,
    exact_value_iteration,
    make_env,
)

ALL_ENVS = [lambda: DeepSeaChain(5), lambda: GridMaze(), lambda: TwoRooms()]


def play(env, actions):
    env.reset()
    total = 0.0
    for a in actions:
        r, _, done = env.step(a)
        total += r
        if done:
            break
    return total


class TestEnvSpec:
    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            EnvSpec(obs_dim=1, n_actions=0, max_steps=1)
        with pytest.raises(ValueError):
            EnvSpec(obs_dim=1, n_actions=1, max_steps=0)


class TestDeepSea:
    def test_reset_is_top_left_one_hot(self):
        obs = DeepSeaChain(5).reset()
        expected = np.zeros(25)
        expected[0] = 1.0
        npt.assert_array_equal(obs, expected)

    def test_resets_are_identical(self):
        env = DeepSeaChain(5)
        a = env.reset()
        env.step(1)
        npt.assert_array_equal(env.reset(), a)

    def test_always_right_is_optimal_return(self):
        env = DeepSeaChain(5)
        assert play(env, [1] * 5) == pytest.approx(0.99, abs=1e-12)
        assert env.optimal_return == pytest.approx(0.99)

    def test_any_left_forfeits_goal(self):
        env = DeepSeaChain(4)
        for actions in itertools.product((0, 1), repeat=4):
            ret = play(env, actions)
            if all(actions):
                assert ret == pytest.approx(0.99)
            else:
                # only the per-step costs remain
                assert ret == pytest.approx(-0.01 / 4 * sum(actions))

    def test_episode_length_and_absorbing_observation(self):
        env = DeepSeaChain(3)
        env.reset()
        for t in range(3):
            r, obs, done = env.step(0)
            assert done == int(t == 2)
        npt.assert_array_equal(obs, 0.0)

    def test_step_after_done_raises(self):
        env = DeepSeaChain(2)
        env.reset()
        env.step(1)
        env.step(1)
        with pytest.raises(EpisodeOver):
            env.step(0)

    def test_step_before_reset_raises(self):
        with pytest.raises(EpisodeOver):
            DeepSeaChain(2).step(0)

    def test_invalid_action(self):
        env = DeepSeaChain(2)
        env.reset()
        with pytest.raises(ValueError):
            env.step(2)


class TestGridMaze:
    def test_reset_has_agent_and_goal_pixels(self):
        env = GridMaze()
        obs = env.reset()
        assert obs.shape == (144,)
        assert np.count_nonzero(obs) == 2
        img = obs.reshape(12, 12)
        assert img[1, 1] == 1.0 and img[6, 3] == 0.5

    def test_wall_bump_keeps_position(self):
        env = GridMaze()
        obs0 = env.reset()
        r, obs, done = env.step(0)  # up from (1, 1) hits the border wall
        assert r == 0.0 and done == 0
        npt.assert_array_equal(obs, obs0)
        r, obs, done = env.step(3)  # left into the border wall
        npt.assert_array_equal(obs, obs0)

    def test_shortest_path_reaches_goal(self):
        env = GridMaze()
        # down 5 rows, right 2 columns from (1, 1) to (6, 3)
        env.reset()
        rewards = [env.step(a) for a in [2, 2, 2, 2, 2, 1]]
        assert all(r == 0.0 for r, _, _ in rewards)
        r, obs, done = env.step(1)
        assert (r, done) == (1.0, 1)
        assert np.count_nonzero(obs) == 1 and obs.reshape(12, 12)[6, 3] == 1.0

    def test_time_limit(self):
        env = GridMaze(max_steps=7)
        env.reset()
        dones = [env.step(0)[2] for _ in range(7)]
        assert dones == [0] * 6 + [1]

    def test_observation_values_in_unit_interval(self):
        env = GridMaze()
        for s in range(env.n_states):
            obs = env.observe(s)
            assert obs.min() >= 0.0 and obs.max() <= 1.0

    def test_layout_validation(self):
        with pytest.raises(ValueError):
            GridMaze(layout=("###", "#.#", "###"))
        with pytest.raises(ValueError):
            GridMaze(layout=("####", "#S#", "####"))


class TestTwoRooms:
    def test_small_reward_is_close(self):
        env = TwoRooms()
        env.reset()
        # start (3, 2): down twice then left reaches 's' at (5, 1)
        r1 = [env.step(a)[0] for a in (2, 2)]
        r, _, done = env.step(3)
        assert r1 == [0.0, 0.0] and r == pytest.approx(0.1) and done == 1

    def test_dp_prefers_large_reward(self):
        env = TwoRooms()
        v, _ = exact_value_iteration(env, 0.99)
        # the large room payoff discounted over the long route still beats 0.1
        assert v[env.initial_state] > 0.1


class TestTabularMDP:
    def test_validation(self):
        with pytest.raises(ValueError):
            TabularMDP([[0, 1]], [[0.0]])

    def test_one_hot_observation(self):
        env = TabularMDP([[1], [1]], [[0.0], [0.0]])
        npt.assert_array_equal(env.reset(), [1.0, 0.0])


class TestExactValueIteration:
    def test_single_absorbing_state(self):
        env = TabularMDP([[0]], [[0.0]], absorbing=[True])
        v, pi = exact_value_iteration(env, 0.9)
        npt.assert_array_equal(v, [0.0])

    def test_all_zero_rewards(self):
        env = TabularMDP([[1, 2], [2, 0], [0, 1]], np.zeros((3, 2)))
        v, _ = exact_value_iteration(env, 0.9)
        npt.assert_array_equal(v, 0.0)

    def test_two_state_chain_geometric_series(self):
        # state 0 -> state 1; state 1 loops on itself paying 1 each step
        env = TabularMDP([[1], [1]], [[0.0], [1.0]])
        v, _ = exact_value_iteration(env, 0.5)
        # V(1) = sum 0.5^k = 2, V(0) = 0.5 * V(1)
        npt.assert_allclose(v, [1.0, 2.0], atol=1e-10)

    def test_deep_sea_policy(self):
        n = 5
        env = DeepSeaChain(n)
        v, pi = exact_value_iteration(env, 0.99)
        # every state visited by the always-right policy chooses right
        assert all(pi[k * n + k] == 1 for k in range(n))
        for s in range(n * n):
            row, col = divmod(s, n)
            # right is needed only while a left move would lose the goal;
            # with slack to spare the free left move is better
            expected = 1 if col - row in (0, 1) else 0
            assert pi[s] == expected, (row, col)
        # the start value is the discounted optimal path
        cost = 0.01 / n
        start = sum(-cost * 0.99**t for t in range(n)) + 0.99 ** (n - 1)
        assert v[0] == pytest.approx(start, abs=1e-10)

    def test_ties_go_to_lowest_action(self):
        env = TabularMDP([[1, 1], [1, 1]], np.zeros((2, 2)))
        _, pi = exact_value_iteration(env, 0.9)
        npt.assert_array_equal(pi, 0)

    def test_rejects_bad_discount(self):
        with pytest.raises(ValueError):
            exact_value_iteration(DeepSeaChain(2), 1.0)

    @pytest.mark.parametrize("make", ALL_ENVS)
    def test_bellman_residual_at_convergence(self, make):
        env = make()
        v, _ = exact_value_iteration(env, 0.95)
        assert bellman_residual(env, 0.95, v) < 1e-10

    @given(st.integers(2, 6), st.integers(1, 3), st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_random_mdp_residual(self, n, n_actions, seed):
        rng = np.random.default_rng(seed)
        env = TabularMDP(rng.integers(0, n, (n, n_actions)), rng.normal(size=(n, n_actions)), rng.random(n) < 0.3)
        v, _ = exact_value_iteration(env, 0.9)
        assert bellman_residual(env, 0.9, v) < 1e-10


class TestInvariants:
    @pytest.mark.parametrize("make", ALL_ENVS)
    def test_transition_is_pure(self, make):
        env = make()
        for s in range(env.n_states):
            if env.is_absorbing(s):
                continue
            for a in range(env.spec.n_actions):
                assert env.transition(s, a) == env.transition(s, a)

    @given(st.integers(0, 2), st.lists(st.integers(0, 3), min_size=1, max_size=120))
    @settings(max_examples=40, deadline=None)
    def test_episode_length_bounded(self, which, actions):
        env = ALL_ENVS[which]()
        env.reset()
        steps = 0
        for a in actions:
            steps += 1
            _, _, done = env.step(a % env.spec.n_actions)
            if done:
                break
        assert steps <= env.spec.max_steps

    def test_state_roundtrip(self):
        env = GridMaze()
        env.reset()
        env.step(2)
        saved = env.get_state()
        after = env.step(1)
        env.set_state(saved)
        assert env.step(1)[0] == after[0]


class TestMakeEnv:
    def test_names(self):
        assert isinstance(make_env("deepsea", size=4), DeepSeaChain)
        assert isinstance(make_env("GridMaze"), GridMaze)
        assert isinstance(make_env("tworooms"), TwoRooms)
        with pytest.raises(ValueError):
            make_env("pong")

    def test_default_maze_is_twelve_by_twelve(self):
        assert len(DEFAULT_MAZE) == 12 and all(len(r) == 12 for r in DEFAULT_MAZE)
