"""Classification MDP, replay buffer, epsilon schedule and the DQN training loop.

Each episode walks once through a shuffled dataset; the action is a class
guess and the reward depends only on whether it was right. The next state is
simply the next sample, so the discount factor has little to act on.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientDataError,
    InvalidParameterError,
    NumericError,
    StateError,
)
from .qnet import adam_step, backward, forward, regularization_loss

__all__ = [
    "RewardStructure",
    "ClassificationEnv",
    "Transition",
    "ReplayBuffer",
    "EpsilonSchedule",
    "DqnHyper",
    "StepRecord",
    "TrainingLog",
    "env_reset",
    "env_step",
    "epsilon_at",
    "greedy_action",
    "td_targets",
    "huber",
    "dqn_train",
    "greedy_policy",
    "run_episode",
    "evaluate_reward_accuracy",
    "episode_return",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RewardStructure:
    r_correct: float = 1.0
    r_incorrect: float = 0.0

    def __post_init__(self):
        if self.r_incorrect > 0:
            raise InvalidParameterError(f"incorrect reward must be <= 0, got {self.r_incorrect}")
        if not self.r_correct > self.r_incorrect:
            raise InvalidParameterError(
                f"reward for a correct guess ({self.r_correct}) must exceed the "
                f"incorrect one ({self.r_incorrect})"
            )

    def __str__(self):
        return f"({self.r_correct:g}, {self.r_incorrect:g})"


class ClassificationEnv:
    """Gym-style environment that serves one dataset sample per step.

    ``reset`` reshuffles the visiting order; ``step`` rewards the guess for the
    current sample and moves on. The episode ends after every sample has been
    seen once; the terminal observation is all zeros.
    """

    def __init__(self, observations, labels, n_classes, rewards=RewardStructure()):
        self.observations = np.asarray(observations, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        if len(self.observations) != len(self.labels):
            raise InvalidParameterError("one label per observation required")
        self.n_classes = int(n_classes)
        self.rewards = rewards
        self.order = np.arange(len(self.labels))
        self.cursor = len(self.labels)
        self.episode_return = 0.0

    @classmethod
    def from_features(cls, features, n_classes=None, rewards=RewardStructure()):
        n = n_classes if n_classes is not None else int(features.labels.max()) + 1
        return cls(features.data, features.labels, n, rewards)

    def __len__(self):
        return len(self.labels)

    @property
    def observation_shape(self):
        return self.observations.shape[1:]

    @property
    def done(self):
        return self.cursor >= len(self.labels)

    @property
    def current_index(self):
        return int(self.order[self.cursor])

    def reset(self, rng):
        return env_reset(self, rng)

    def step(self, action):
        return env_step(self, action)


def env_reset(env, rng):
    if len(env.labels) == 0:
        raise InsufficientDataError("environment dataset is empty")
    env.order = rng.permutation(len(env.labels))
    env.cursor = 0
    env.episode_return = 0.0
    return env.observations[env.order[0]]


def env_step(env, action):
    if env.done:
        raise StateError("step called on a finished episode; call reset first")
    action = int(action)
    if not 0 <= action < env.n_classes:
        raise InvalidParameterError(f"action {action} outside [0, {env.n_classes})")
    label = env.labels[env.order[env.cursor]]
    reward = env.rewards.r_correct if action == label else env.rewards.r_incorrect
    env.cursor += 1
    env.episode_return += reward
    if env.done:
        nxt = np.zeros(env.observation_shape)
    else:
        nxt = env.observations[env.order[env.cursor]]
    return nxt, float(reward), env.done


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity, state_shape):
        if capacity < 1:
            raise InvalidParameterError("replay capacity must be >= 1")
        self.capacity = int(capacity)
        self.states = np.zeros((self.capacity, *state_shape))
        self.next_states = np.zeros((self.capacity, *state_shape))
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity)
        self.dones = np.zeros(self.capacity, dtype=bool)
        self.size = 0
        self._head = 0
        self.pushed = 0

    def __len__(self):
        return self.size

    def push(self, tr):
        i = self._head
        self.states[i] = tr.state
        self.next_states[i] = tr.next_state
        self.actions[i] = tr.action
        self.rewards[i] = tr.reward
        self.dones[i] = tr.done
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.pushed += 1

    def _ordered(self):
        start = (self._head - self.size) % self.capacity
        return (start + np.arange(self.size)) % self.capacity

    def transitions(self):
        """Stored transitions, oldest first."""
        return [self._get(i) for i in self._ordered()]

    def _get(self, i):
        return Transition(self.states[i].copy(), int(self.actions[i]), float(self.rewards[i]),
                          self.next_states[i].copy(), bool(self.dones[i]))

    def sample(self, rng, batch_size):
        """Uniform draw with replacement; returns arrays ``(s, a, r, s', done)``."""
        if self.size == 0:
            raise InsufficientDataError("cannot sample from an empty replay buffer")
        idx = self._ordered()[rng.choice(self.size, batch_size)]
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.dones[idx])


@dataclass(frozen=True)
class EpsilonSchedule:
    eps_start: float = 1.0
    eps_end: float = 0.0
    tau: float = 600.0

    def __post_init__(self):
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise InvalidParameterError("need 0 <= eps_end <= eps_start <= 1")
        if not self.tau > 0:
            raise InvalidParameterError("tau must be positive")


def epsilon_at(schedule, step):
    """``eps_end + (eps_start - eps_end) * exp(-step / tau)``."""
    if step < 0:
        raise InvalidParameterError("step must be >= 0")
    return schedule.eps_end + (schedule.eps_start - schedule.eps_end) * math.exp(-step / schedule.tau)


def greedy_action(q_values):
    """Index of the largest Q-value; ties go to the lowest index."""
    q = np.asarray(q_values, dtype=np.float64)
    if q.size == 0:
        raise InvalidParameterError("empty Q-value vector")
    if not np.all(np.isfinite(q)):
        raise NumericError("non-finite Q-values")
    return int(np.argmax(q))


def td_targets(rewards, next_states, dones, target_params, spec, gamma):
    """``y = r + (1 - done) * gamma * max_a' Q_target(s', a')``, target net in inference mode."""
    if not 0.0 <= gamma <= 1.0:
        raise InvalidParameterError(f"gamma must lie in [0, 1], got {gamma}")
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if gamma == 0.0 or dones.all():
        return rewards.copy()
    q_next, _ = forward(target_params, spec, _as_batch(next_states, spec), "inference")
    return rewards + (~dones) * gamma * q_next.max(axis=1)


def huber(diff, delta=1.0):
    """Elementwise Huber loss and its derivative."""
    a = np.abs(diff)
    quad = a <= delta
    loss = np.where(quad, 0.5 * diff * diff, delta * (a - 0.5 * delta))
    grad = np.where(quad, diff, delta * np.sign(diff))
    return loss, grad


def _as_batch(states, spec):
    s = np.asarray(states, dtype=np.float64)
    return s.reshape(len(s), spec.channels_in, spec.time_in)


@dataclass(frozen=True)
class DqnHyper:
    gamma: float = 0.99
    lr0: float = 0.0055
    decay: float = 0.0001
    batch_size: int = 32
    warmup: int = 100
    target_sync: int = 200
    replay_capacity: int = 10000
    huber_delta: float = 1.0
    clip_norm: float = 1.0
    exploit_epsilon: float = 0.0


@dataclass
class StepRecord:
    step: int
    interval: int
    epsilon: float
    reward: float
    loss: float | None


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)
    refused_steps: list = field(default_factory=list)
    intervals: list = field(default_factory=list)

    def interval_summary(self):
        out = []
        for k, length in enumerate(self.intervals):
            recs = [r for r in self.records if r.interval == k]
            losses = [r.loss for r in recs if r.loss is not None]
            out.append({
                "interval": k,
                "steps": length,
                "mean_reward": float(np.mean([r.reward for r in recs])) if recs else float("nan"),
                "mean_loss": float(np.mean(losses)) if losses else None,
                "final_epsilon": recs[-1].epsilon if recs else None,
            })
        return out

    @property
    def env_steps(self):
        return len(self.records)


def dqn_train(env, online, spec, schedule, intervals, hyper=DqnHyper(), rng=None, target=None):
    """Train ``online`` in place on ``env`` and return the :class:`TrainingLog`.

    The first interval explores with ``epsilon_at(schedule, t)``; later
    intervals act with ``hyper.exploit_epsilon`` (0 by default) while still
    learning. Every env step is followed by one gradient update once the
    buffer holds ``hyper.warmup`` transitions.
    """
    if env.n_classes != spec.n_actions:
        raise InvalidParameterError(
            f"environment has {env.n_classes} classes but the network has {spec.n_actions} actions"
        )
    if rng is None:
        raise InvalidParameterError("dqn_train needs an Rng")
    explore_rng = rng.spawn("exploration")
    replay_rng = rng.spawn("replay")
    dropout_rng = rng.spawn("dropout")
    shuffle_rng = rng.spawn("shuffle")

    target = online.copy() if target is None else target
    target.load_weights_from(online)
    buffer = ReplayBuffer(hyper.replay_capacity, env.observation_shape)
    tlog = TrainingLog(intervals=[int(n) for n in intervals])

    obs = env.reset(shuffle_rng)
    step = 0
    for k, length in enumerate(tlog.intervals):
        for _ in range(length):
            eps = epsilon_at(schedule, step) if k == 0 else hyper.exploit_epsilon
            if explore_rng.uniform() < eps:
                action = explore_rng.integers(env.n_classes)
            else:
                q, _ = forward(online, spec, _as_batch(obs[None], spec), "inference")
                action = greedy_action(q[0])
            nxt, reward, done = env.step(action)
            buffer.push(Transition(obs, action, reward, nxt, done))
            obs = env.reset(shuffle_rng) if done else nxt

            loss = None
            if len(buffer) >= hyper.warmup:
                try:
                    loss = _learn(online, target, spec, buffer, hyper, replay_rng, dropout_rng)
                except NumericError as exc:
                    tlog.refused_steps.append((step, str(exc)))
                    log.warning("step %d refused: %s", step, exc)
            step += 1
            if step % hyper.target_sync == 0:
                target.load_weights_from(online)
            tlog.records.append(StepRecord(step, k, float(eps), reward, loss))
        summary = tlog.interval_summary()[k]
        log.info("interval %d: mean reward %.4f, mean loss %s", k, summary["mean_reward"],
                 summary["mean_loss"])
    return tlog


def _learn(online, target, spec, buffer, hyper, replay_rng, dropout_rng):
    s, a, r, s2, d = buffer.sample(replay_rng, hyper.batch_size)
    y = td_targets(r, s2, d, target, spec, hyper.gamma)
    q, cache = forward(online, spec, _as_batch(s, spec), "train", dropout_rng)
    n = len(a)
    diff = q[np.arange(n), a] - y
    losses, dl = huber(diff, hyper.huber_delta)
    out_grad = np.zeros_like(q)
    out_grad[np.arange(n), a] = dl / n
    grads = backward(online, spec, cache, out_grad)
    loss = float(losses.mean()) + regularization_loss(online, spec)
    adam_step(online, grads, hyper.lr0, hyper.decay, clip_norm=hyper.clip_norm)
    return loss


def greedy_policy(params, spec):
    """Policy callable ``obs -> action`` acting greedily in inference mode."""
    def act(obs):
        q, _ = forward(params, spec, _as_batch(np.asarray(obs)[None], spec), "inference")
        return greedy_action(q[0])
    return act


def run_episode(env, policy, rng):
    """Play one full episode; returns the list of rewards."""
    obs = env.reset(rng)
    rewards = []
    done = False
    while not done:
        obs, r, done = env.step(policy(obs))
        rewards.append(r)
    return rewards


def evaluate_reward_accuracy(env, policy, episodes=10, rng=None):
    """Mean greedy episode return over the best attainable return, clamped to [0, 1].

    ``policy`` is a callable ``obs -> action`` (see :func:`greedy_policy`).
    Under the (1, 0) reward structure this is exactly the classification
    accuracy of the policy.
    """
    if env.rewards.r_correct <= 0:
        raise InvalidParameterError("reward-based accuracy needs a positive correct reward")
    if episodes < 1:
        raise InvalidParameterError("episodes must be >= 1")
    returns = [sum(run_episode(env, policy, rng)) for _ in range(episodes)]
    value = float(np.mean(returns)) / (len(env) * env.rewards.r_correct)
    return min(max(value, 0.0), 1.0)


def episode_return(rewards, gamma):
    """Discounted return ``sum_k gamma**k * r_k`` from the first reward."""
    if not 0.0 <= gamma <= 1.0:
        raise InvalidParameterError(f"gamma must lie in [0, 1], got {gamma}")
    total = 0.0
    for r in reversed(list(rewards)):
        total = r + gamma * total
    return total
