"""Built-in 2-D point-mass environment and its behavior policies.

Deterministic Euler dynamics on (position, velocity) with friction; the agent
accelerates toward a fixed goal at (1, 1) from a start drawn uniformly in
[-1, 0]^2. Reward is the negative Euclidean distance between the current
position and the goal, so returns are negative and increase as the policy
gets better at reaching and holding the goal. Episodes run a fixed horizon.

Behavior policies span a quality range used to build mixed datasets:
uniform-random, two PD controllers with different gains and noise, and an
expert (the strong controller with near-zero noise).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, InvalidActionError

ENV_NAME = "point_mass"
DT = 0.1
FRICTION = 0.1
HORIZON = 64
GOAL = np.array([1.0, 1.0])
ACTION_LOW = np.array([-1.0, -1.0])
ACTION_HIGH = np.array([1.0, 1.0])
STATE_DIM = 4
ACTION_DIM = 2


def dynamics_step(pos, vel, action):
    """One Euler step: position advances with the old velocity."""
    new_pos = pos + DT * vel
    new_vel = vel + DT * action - FRICTION * vel
    return new_pos, new_vel


def reward_fn(pos):
    return -float(np.linalg.norm(pos - GOAL))


def step(state, action):
    """Pure transition: (state, action) -> (next_state, reward, done-fraction).

    `state` is (pos[2], vel[2], step_count). Actions are clamped to bounds.
    The reward is evaluated at the pre-transition position.
    """
    pos, vel, count = state[:2], state[2:4], int(state[4])
    a = np.asarray(action, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise InvalidActionError(f"non-finite action {action}")
    a = np.clip(a, ACTION_LOW, ACTION_HIGH)
    r = reward_fn(pos)
    new_pos, new_vel = dynamics_step(pos, vel, a)
    count += 1
    next_state = np.concatenate([new_pos, new_vel, [count]])
    return next_state, r, count >= HORIZON


class PointMassEnv:
    """Stateful wrapper over the pure transition function."""

    name = ENV_NAME
    state_dim = STATE_DIM
    action_dim = ACTION_DIM
    action_low = ACTION_LOW
    action_high = ACTION_HIGH
    horizon = HORIZON

    def __init__(self):
        self._state = None

    def reset(self, rng):
        pos = rng.uniform(-1.0, 0.0, size=2)
        vel = np.zeros(2)
        self._state = np.concatenate([pos, vel, [0]])
        return self.observation()

    def observation(self):
        return self._state[:4].copy()

    def step(self, action):
        self._state, r, done = step(self._state, action)
        return self.observation(), r, done


def _pd_policy(kp, kd, noise_std):
    def act(obs, rng):
        pos, vel = obs[:2], obs[2:4]
        a = kp * (GOAL - pos) - kd * vel
        if noise_std > 0.0:
            a = a + rng.normal(0.0, noise_std, size=2)
        return np.clip(a, ACTION_LOW, ACTION_HIGH)
    return act


def _random_policy(obs, rng):
    return rng.uniform(ACTION_LOW, ACTION_HIGH)


POLICIES = {
    "random": lambda: _random_policy,
    "pd_weak": lambda: _pd_policy(kp=0.6, kd=0.4, noise_std=0.30),
    "pd_strong": lambda: _pd_policy(kp=2.0, kd=1.0, noise_std=0.15),
    "expert": lambda: _pd_policy(kp=2.0, kd=1.0, noise_std=0.02),
}


def make_policy(name):
    if name not in POLICIES:
        raise ConfigError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}")
    return POLICIES[name]()


def run_episode(policy, rng, env=None):
    """Roll one full episode; returns (states, actions, rewards) arrays."""
    env = env or PointMassEnv()
    obs = env.reset(rng)
    states, actions, rewards = [], [], []
    done = False
    while not done:
        a = policy(obs, rng)
        states.append(obs)
        actions.append(np.asarray(a, dtype=np.float64))
        obs, r, done = env.step(a)
        rewards.append(r)
    return np.array(states), np.array(actions), np.array(rewards)
