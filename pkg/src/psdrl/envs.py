"""Deterministic episodic toy environments and an exact value-iteration oracle.

Every environment here is enumerable: it exposes integer states, a pure
``transition(state, action) -> (reward, next_state, absorbing)`` function and
an ``observe(state)`` renderer. The stepping interface is shared.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    obs_dim: int
    n_actions: int
    max_steps: int
    enumerable: bool = True
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        if self.n_actions < 1:
            raise ValueError("action count must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max episode length must be >= 1")


class EpisodeOver(RuntimeError):
    """Raised when stepping an environment whose episode has terminated."""


class Env:
    spec: EnvSpec
    n_states: int
    initial_state: int = 0

    def transition(self, state: int, action: int) -> tuple[float, int, bool]:
        raise NotImplementedError

    def observe(self, state: int) -> np.ndarray:
        raise NotImplementedError

    def is_absorbing(self, state: int) -> bool:
        return False

    # shared episodic interface -------------------------------------------
    def reset(self) -> np.ndarray:
        self._state = self.initial_state
        self._t = 0
        self._done = False
        return self.observe(self._state)

    def step(self, action: int):
        if getattr(self, "_done", True):
            raise EpisodeOver("step() called on a terminated episode; call reset()")
        if not 0 <= action < self.spec.n_actions:
            raise ValueError(f"invalid action {action}")
        reward, nxt, absorbing = self.transition(self._state, int(action))
        self._state = nxt
        self._t += 1
        self._done = absorbing or self._t >= self.spec.max_steps
        return float(reward), self.observe(nxt), int(self._done)

    @property
    def state(self) -> int:
        return self._state

    def get_state(self) -> np.ndarray:
        return np.array([self._state, self._t, float(self._done)], dtype=np.float64)

    def set_state(self, arr) -> None:
        self._state, self._t, self._done = int(arr[0]), int(arr[1]), bool(arr[2])


class DeepSeaChain(Env):
    """``N x N`` grid descended one row per step; action 1 moves right, action 0 left.

    Each right move costs ``0.01 / N``; moving right from the bottom-right cell
    pays 1.0. After ``N`` steps the agent drops into an absorbing state
    observed as the all-zero vector.
    """

    def __init__(self, size: int = 8):
        if size < 1:
            raise ValueError("size must be >= 1")
        self.size = size
        self.n_states = size * size + 1
        self.absorbing = size * size
        self.spec = EnvSpec(obs_dim=size * size, n_actions=2, max_steps=size, image_shape=(size, size))

    def transition(self, state, action):
        n = self.size
        row, col = divmod(state, n)
        if action == 1:
            reward = -0.01 / n
            if row == n - 1 and col == n - 1:
                reward += 1.0
            col = min(col + 1, n - 1)
        else:
            reward = 0.0
            col = max(col - 1, 0)
        row += 1
        if row == n:
            return reward, self.absorbing, True
        return reward, row * n + col, False

    def is_absorbing(self, state):
        return state == self.absorbing

    def observe(self, state):
        obs = np.zeros(self.size * self.size)
        if state != self.absorbing:
            obs[state] = 1.0
        return obs

    @property
    def optimal_return(self) -> float:
        return 1.0 - 0.01


MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))  # up, right, down, left

DEFAULT_MAZE = (
    "############",
    "#S.........#",
    "#..........#",
    "#...####...#",
    "#......#...#",
    "#......#...#",
    "#..G...#...#",
    "#......#...#",
    "#..........#",
    "#..........#",
    "#..........#",
    "############",
)


class _Grid(Env):
    """Grid world parsed from a text layout; ``#`` marks walls."""

    AGENT = 1.0

    def __init__(self, layout, max_steps: int):
        self.layout = tuple(layout)
        self.height = len(self.layout)
        self.width = len(self.layout[0])
        if any(len(row) != self.width for row in self.layout):
            raise ValueError("layout rows must have equal length")
        self.cells = [(r, c) for r in range(self.height) for c in range(self.width) if self.layout[r][c] != "#"]
        self.index = {cell: i for i, cell in enumerate(self.cells)}
        self.absorbing = len(self.cells)
        self.n_states = len(self.cells) + 1
        starts = [cell for cell in self.cells if self.layout[cell[0]][cell[1]] == "S"]
        if len(starts) != 1:
            raise ValueError("layout needs exactly one start cell 'S'")
        self.initial_state = self.index[starts[0]]
        self.spec = EnvSpec(
            obs_dim=self.height * self.width, n_actions=4, max_steps=max_steps, image_shape=(self.height, self.width)
        )

    def _move(self, state, action):
        r, c = self.cells[state]
        dr, dc = MOVES[action]
        nr, nc = r + dr, c + dc
        if self.layout[nr][nc] == "#":
            return r, c
        return nr, nc

    def is_absorbing(self, state):
        return state == self.absorbing

    def _canvas(self) -> np.ndarray:
        return np.zeros((self.height, self.width))


class GridMaze(_Grid):
    """Maze with invisible walls and a sparse goal reward of 1.0.

    Observation: flattened grayscale image with the agent at 1.0 and the goal
    at 0.5. Reaching the goal is absorbing; the absorbing observation shows
    the agent standing on the goal.
    """

    GOAL = 0.5

    def __init__(self, layout=DEFAULT_MAZE, max_steps: int = 50):
        super().__init__(layout, max_steps)
        goals = [cell for cell in self.cells if self.layout[cell[0]][cell[1]] == "G"]
        if len(goals) != 1:
            raise ValueError("layout needs exactly one goal cell 'G'")
        self.goal = goals[0]

    def transition(self, state, action):
        cell = self._move(state, action)
        if cell == self.goal:
            return 1.0, self.absorbing, True
        return 0.0, self.index[cell], False

    def observe(self, state):
        img = self._canvas()
        if state == self.absorbing:
            img[self.goal] = self.AGENT
        else:
            img[self.goal] = self.GOAL
            img[self.cells[state]] = self.AGENT
        return img.ravel()


DEFAULT_TWO_ROOMS = (
    "#############",
    "#.....#.....#",
    "#.....#.....#",
    "#.S.........#",
    "#.....#.....#",
    "#s....#....L#",
    "#############",
)


class TwoRooms(_Grid):
    """Two rooms joined by a doorway.

    ``s`` is a small terminal reward near the start; ``L`` a large terminal
    reward in the far room. Both are drawn in the observation (0.25 and 0.5).
    """

    def __init__(self, layout=DEFAULT_TWO_ROOMS, max_steps: int = 60, small_reward: float = 0.1, large_reward: float = 1.0):
        super().__init__(layout, max_steps)
        self.payoffs = {}
        for cell in self.cells:
            ch = self.layout[cell[0]][cell[1]]
            if ch == "s":
                self.payoffs[cell] = (small_reward, 0.25)
            elif ch == "L":
                self.payoffs[cell] = (large_reward, 0.5)
        if len(self.payoffs) != 2:
            raise ValueError("layout needs one 's' and one 'L' cell")

    def transition(self, state, action):
        cell = self._move(state, action)
        if cell in self.payoffs:
            return self.payoffs[cell][0], self.absorbing, True
        return 0.0, self.index[cell], False

    def observe(self, state):
        img = self._canvas()
        for cell, (_, shade) in self.payoffs.items():
            img[cell] = shade
        if state != self.absorbing:
            img[self.cells[state]] = self.AGENT
        return img.ravel()


class TabularMDP(Env):
    """Explicit deterministic MDP with one-hot observations.

    ``next_state[s, a]`` and ``reward[s, a]`` define the dynamics; entering a
    state flagged in ``absorbing`` ends the episode.
    """

    def __init__(self, next_state, reward, absorbing=None, initial_state: int = 0, max_steps: int = 100):
        self.next_state = np.asarray(next_state, dtype=np.int64)
        self.reward = np.asarray(reward, dtype=np.float64)
        if self.next_state.shape != self.reward.shape or self.next_state.ndim != 2:
            raise ValueError("next_state and reward must both be (states, actions)")
        self.n_states, n_actions = self.next_state.shape
        self.absorbing_mask = (
            np.zeros(self.n_states, dtype=bool) if absorbing is None else np.asarray(absorbing, dtype=bool)
        )
        self.initial_state = int(initial_state)
        self.spec = EnvSpec(obs_dim=self.n_states, n_actions=n_actions, max_steps=max_steps, image_shape=(1, self.n_states))

    def transition(self, state, action):
        nxt = int(self.next_state[state, action])
        return float(self.reward[state, action]), nxt, bool(self.absorbing_mask[nxt])

    def is_absorbing(self, state):
        return bool(self.absorbing_mask[state])

    def observe(self, state):
        obs = np.zeros(self.n_states)
        obs[state] = 1.0
        return obs


def exact_value_iteration(env: Env, gamma: float, tol: float = 1e-11, max_iter: int = 1_000_000):
    """Optimal values and policy of an enumerable environment (time limits ignored).

    Absorbing states have value 0. Ties in the policy go to the lowest
    action id. Iterates until the sup-norm change falls below ``tol``.
    """
    if not env.spec.enumerable:
        raise ValueError("exact value iteration needs an enumerable environment")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must be in [0, 1)")
    n, n_actions = env.n_states, env.spec.n_actions
    if n > 10_000:
        raise ValueError("too many states for exact value iteration")
    rewards = np.zeros((n, n_actions))
    nxt = np.zeros((n, n_actions), dtype=np.int64)
    cont = np.zeros((n, n_actions))
    absorbing = np.array([env.is_absorbing(s) for s in range(n)])
    for s in range(n):
        if absorbing[s]:
            nxt[s] = s
            continue
        for a in range(n_actions):
            r, s2, done = env.transition(s, a)
            rewards[s, a], nxt[s, a] = r, s2
            cont[s, a] = 0.0 if done else 1.0
    values = np.zeros(n)
    for _ in range(max_iter):
        q = rewards + gamma * cont * values[nxt]
        new = np.where(absorbing, 0.0, q.max(axis=1))
        delta = float(np.max(np.abs(new - values)))
        values = new
        if delta < tol:
            break
    q = rewards + gamma * cont * values[nxt]
    policy = np.argmax(q, axis=1)
    return values, policy


def bellman_residual(env: Env, gamma: float, values: np.ndarray) -> float:
    worst = 0.0
    for s in range(env.n_states):
        if env.is_absorbing(s):
            continue
        best = -np.inf
        for a in range(env.spec.n_actions):
            r, s2, done = env.transition(s, a)
            best = max(best, r + (0.0 if done else gamma * values[s2]))
        worst = max(worst, abs(best - values[s]))
    return worst


def make_env(name: str, **params) -> Env:
    name = name.lower()
    if name in ("deepsea", "deepseachain", "deep_sea"):
        return DeepSeaChain(**params)
    if name in ("gridmaze", "grid_maze", "maze"):
        return GridMaze(**params)
    if name in ("tworooms", "two_rooms"):
        return TwoRooms(**params)
    raise ValueError(f"unknown environment {name!r}")
