"""Tabular Q-learning over placement decisions.

The agent sees a coarse snapshot of the system at each request arrival
(active users, edge and cloud utilization bins, bandwidth tier, app) and
picks a placement from the monotone enumeration for that pipeline. Rewards
arrive when the request completes, as negative response time, optionally
with an energy term folded in. The state space is small by construction, so
the table is dense: every state-action pair exists from the start, which
makes coverage auditable and serialization trivially stable.

Exploration is epsilon-greedy with an exponential decay across training
episodes. Discounting defaults to zero: a placement's consequences are
captured by its own completion, and treating each decision as contextual
bandit keeps learned values directly interpretable as expected negative
response time. Both the discount and the bin boundaries are configurable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .edgesim import (
    BANDWIDTH_TIERS,
    Snapshot,
    WorkloadSpec,
    enumerate_placements,
    simulate,
)
from .seeding import child_seed, rng_for

__all__ = [
    "UTIL_BINS",
    "DEFAULT_TERCILES",
    "QState",
    "RewardSpec",
    "QTable",
    "observe",
    "choose_action",
    "q_update",
    "train",
    "sim_episode_env",
    "evaluate_greedy",
    "save_qtable",
    "load_qtable",
]

UTIL_BINS = ("low", "med", "high")

# Utilization bin edges. A value exactly on an edge goes to the lower bin.
DEFAULT_TERCILES = (0.33, 0.66)


@dataclass(frozen=True, order=True)
class QState:
    users_bin: int
    edge_bin: str
    cloud_bin: str
    bandwidth_tier: str
    app: str


@dataclass(frozen=True)
class RewardSpec:
    """Reward for a completed request: ``-(response_s + w * energy_j)``.

    The default weight of zero reduces to pure negative response time, so
    all rewards are non-positive and a greedy value approximates expected
    negative latency.
    """

    energy_weight: float = 0.0

    def __post_init__(self):
        if self.energy_weight < 0:
            raise ValueError("energy_weight must be non-negative")

    def of(self, record) -> float:
        energy_j = (record.energy_compute_nj + record.energy_transfer_nj) * 1e-9
        return -(record.response_us / 1e6 + self.energy_weight * energy_j)


def _util_bin(value: float, boundaries) -> str:
    if value <= boundaries[0]:
        return UTIL_BINS[0]
    if value <= boundaries[1]:
        return UTIL_BINS[1]
    return UTIL_BINS[2]


def observe(snapshot: Snapshot, max_users: int, boundaries=DEFAULT_TERCILES) -> QState:
    """Discretize a simulator snapshot into a table state.

    The admitted-user count saturates at ``max_users``; utilizations fall
    into terciles with boundary values assigned to the lower bin.
    """
    if not 0.0 <= snapshot.edge_utilization <= 1.0:
        raise ValueError("edge utilization outside [0, 1]")
    if not 0.0 <= snapshot.cloud_utilization <= 1.0:
        raise ValueError("cloud utilization outside [0, 1]")
    return QState(
        users_bin=max(1, min(max_users, snapshot.workload_users)),
        edge_bin=_util_bin(snapshot.edge_utilization, boundaries),
        cloud_bin=_util_bin(snapshot.cloud_utilization, boundaries),
        bandwidth_tier=snapshot.bandwidth_tier,
        app=snapshot.app,
    )


class QTable:
    """Dense state-action values with visit counts and hyperparameters."""

    def __init__(self, states, n_actions: int, alpha: float = 0.3, gamma: float = 0.0):
        if not 0 <= alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0 <= gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if n_actions < 1:
            raise ValueError("need at least one action")
        self.alpha = alpha
        self.gamma = gamma
        self.n_actions = n_actions
        states = sorted(set(states))
        if not states:
            raise ValueError("need at least one state")
        self.values = {s: [0.0] * n_actions for s in states}
        self.visits = {s: [0] * n_actions for s in states}

    @classmethod
    def build(cls, apps, n_actions: int, max_users: int = 5,
              alpha: float = 0.3, gamma: float = 0.0) -> "QTable":
        """Enumerate the full state space for the given apps.

        Size is max_users x 3 x 3 x 3 x len(apps).
        """
        if max_users < 1:
            raise ValueError("max_users must be at least 1")
        apps = tuple(apps)
        if not apps:
            raise ValueError("need at least one app")
        states = [
            QState(u, eb, cb, tier, app)
            for u in range(1, max_users + 1)
            for eb in UTIL_BINS
            for cb in UTIL_BINS
            for tier in BANDWIDTH_TIERS
            for app in apps
        ]
        return cls(states, n_actions, alpha=alpha, gamma=gamma)

    def __contains__(self, state) -> bool:
        return state in self.values

    def __len__(self) -> int:
        return len(self.values)

    def qmax(self, state) -> float:
        return max(self.values[state])

    def greedy_action(self, state) -> int:
        return int(np.argmax(self.values[state]))


def choose_action(table: QTable, state: QState, epsilon: float, rng) -> int:
    """Epsilon-greedy action; greedy ties resolve to the lowest index."""
    if state not in table:
        raise ValueError("state %r is outside the table domain" % (state,))
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(table.n_actions))
    return table.greedy_action(state)


def q_update(table: QTable, state: QState, action: int, reward: float,
             next_state: QState | None = None) -> QTable:
    """One Bellman step on a single entry; ``next_state`` None is terminal."""
    if state not in table:
        raise ValueError("state %r is outside the table domain" % (state,))
    if not 0 <= action < table.n_actions:
        raise ValueError("action %d out of range" % action)
    bootstrap = 0.0 if next_state is None else table.gamma * table.qmax(next_state)
    q = table.values[state][action]
    table.values[state][action] = q + table.alpha * (reward + bootstrap - q)
    table.visits[state][action] += 1
    return table


def train(table: QTable, env, episodes: int, seed: int,
          eps_start: float = 1.0, eps_end: float = 0.05):
    """Run episodes with decaying exploration; returns (table, curve).

    ``env(table, epsilon, rng_seed, episode)`` runs one episode, applying
    its own q_update calls, and returns the episode's mean response time in
    seconds; the curve collects those means. Epsilon decays exponentially
    from ``eps_start`` to ``eps_end`` across the run. Training is
    deterministic for a fixed seed: each episode gets a derived sub-seed.
    """
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    if not (0 <= eps_end <= eps_start <= 1):
        raise ValueError("need 0 <= eps_end <= eps_start <= 1")
    curve = []
    for k in range(episodes):
        frac = k / max(1, episodes - 1)
        eps = eps_start * (eps_end / eps_start) ** frac if eps_start > 0 else 0.0
        curve.append(float(env(table, eps, child_seed(seed, "episode", str(k)), k)))
    return table, curve


def sim_episode_env(pipeline, topology, *, bandwidth_tier, sampling_level,
                    user_counts, period_s, duration_s, jitter_frac=0.1,
                    reward: RewardSpec = RewardSpec(), max_users: int = 5,
                    boundaries=DEFAULT_TERCILES):
    """Training environment over the execution simulator.

    Each episode simulates one workload; ``user_counts`` is cycled by
    episode index so one agent trains across load levels. Decisions happen
    per request arrival; the learning update fires at that request's
    completion with the completion-time snapshot as the successor state.
    """
    user_counts = tuple(user_counts)
    if not user_counts:
        raise ValueError("need at least one user count")
    placements = enumerate_placements(pipeline.n_stages)

    def env(table, epsilon, rng_seed, episode):
        if table.n_actions != len(placements):
            raise ValueError(
                "table has %d actions but the pipeline admits %d placements"
                % (table.n_actions, len(placements))
            )
        users = user_counts[episode % len(user_counts)]
        rng = rng_for(rng_seed, "explore")
        pending = {}

        def decide(snapshot):
            state = observe(snapshot, max_users, boundaries)
            action = choose_action(table, state, epsilon, rng)
            pending[snapshot.request_id] = (state, action)
            return placements[action]

        def learn(record, snapshot):
            state, action = pending.pop(record.request_id)
            nxt = observe(snapshot, max_users, boundaries)
            q_update(table, state, action, reward.of(record), nxt)

        trace = simulate(
            pipeline, topology,
            WorkloadSpec(users=users, period_s=period_s, duration_s=duration_s,
                         jitter_frac=jitter_frac),
            decide,
            bandwidth_tier=bandwidth_tier, sampling_level=sampling_level,
            seed=rng_seed, on_complete=learn,
        )
        return trace.mean_response_s()

    return env


def evaluate_greedy(table: QTable, pipeline, topology, *, bandwidth_tier,
                    sampling_level, users, period_s, duration_s, seeds,
                    jitter_frac=0.1, max_users: int = 5,
                    boundaries=DEFAULT_TERCILES) -> float:
    """Mean response time of the frozen greedy policy over eval seeds."""
    placements = enumerate_placements(pipeline.n_stages)

    def decide(snapshot):
        state = observe(snapshot, max_users, boundaries)
        return placements[table.greedy_action(state)]

    totals = []
    for seed in seeds:
        trace = simulate(
            pipeline, topology,
            WorkloadSpec(users=users, period_s=period_s, duration_s=duration_s,
                         jitter_frac=jitter_frac),
            decide,
            bandwidth_tier=bandwidth_tier, sampling_level=sampling_level,
            seed=seed,
        )
        totals.append(trace.mean_response_s())
    return float(np.mean(totals))


_QTABLE_FIELDS = ("users_bin", "edge_bin", "cloud_bin", "bandwidth_tier",
                  "app", "action", "value", "visits")


def save_qtable(table: QTable, path, header: str | None = None) -> None:
    """CSV serialization, one row per state-action pair, stable order.

    A leading comment line carries the hyperparameters so a table
    round-trips without sidecar files; an optional extra comment
    (provenance, typically) can be written above it.
    """
    with open(path, "w", newline="") as fh:
        if header is not None:
            fh.write(header.rstrip("\n") + "\n")
        fh.write("# alpha=%r gamma=%r n_actions=%d\n"
                 % (table.alpha, table.gamma, table.n_actions))
        writer = csv.writer(fh)
        writer.writerow(_QTABLE_FIELDS)
        for state in sorted(table.values):
            for action in range(table.n_actions):
                writer.writerow([
                    state.users_bin, state.edge_bin, state.cloud_bin,
                    state.bandwidth_tier, state.app, action,
                    repr(table.values[state][action]),
                    table.visits[state][action],
                ])


def load_qtable(path) -> QTable:
    meta: dict = {}
    with open(path, newline="") as fh:
        while True:
            pos = fh.tell()
            line = fh.readline()
            if not line.startswith("#"):
                fh.seek(pos)
                break
            for part in line[1:].split():
                key, eq, value = part.partition("=")
                if eq:
                    meta[key] = value
        rows = list(csv.DictReader(fh))
    if not {"alpha", "gamma", "n_actions"} <= meta.keys():
        raise ValueError("missing hyperparameter header line")
    n_actions = int(meta["n_actions"])
    states = set()
    for row in rows:
        states.add(QState(int(row["users_bin"]), row["edge_bin"], row["cloud_bin"],
                          row["bandwidth_tier"], row["app"]))
    table = QTable(states, n_actions,
                   alpha=float(meta["alpha"]), gamma=float(meta["gamma"]))
    for row in rows:
        state = QState(int(row["users_bin"]), row["edge_bin"], row["cloud_bin"],
                       row["bandwidth_tier"], row["app"])
        action = int(row["action"])
        table.values[state][action] = float(row["value"])
        table.visits[state][action] = int(row["visits"])
    return table
