"""Empirical transition-model estimation from sampled trajectories.

Maintains per-transition visit counts U(s,a,s'), running mean rewards
R̂(s,a,s'), and a reward-weighted adjacency matrix

    D(s,s') = D_prior + Σ_a U(s,a,s') · e^{−v·|R̂(s,a,s')|},

so that transitions carrying reward are progressively cut out of the
adjacency structure as v grows.  D is recomputed from U and R̂ after every
update batch, which keeps it exactly consistent with the accumulators.
"""

from __future__ import annotations

import numpy as np

from spectral_options.env import N_ACTIONS, GridWorld, Trajectory


class EstimatedModel:
    """Counts, mean rewards, and reward-weighted adjacency for a tabular MDP."""

    def __init__(self, n_states: int, n_actions: int = N_ACTIONS, v: float = 0.0,
                 d_prior: float = 0.0, u_prior: float = 0.0):
        if n_states < 1 or n_actions < 1:
            raise ValueError("n_states and n_actions must be positive")
        if d_prior < 0 or u_prior < 0:
            raise ValueError("priors must be non-negative")
        self.n_states = n_states
        self.n_actions = n_actions
        self.v = float(v)
        self.d_prior = float(d_prior)
        self.u_prior = float(u_prior)
        self.U = np.full((n_states, n_actions, n_states), u_prior, dtype=float)
        self.R_sum = np.zeros((n_states, n_actions, n_states))
        self.R_count = np.zeros((n_states, n_actions, n_states))
        self.D = np.full((n_states, n_states), d_prior, dtype=float)
        self._rebuild_adjacency()

    def _rebuild_adjacency(self):
        R_hat = np.zeros_like(self.R_sum)
        seen = self.R_count > 0
        R_hat[seen] = self.R_sum[seen] / self.R_count[seen]
        weighted = self.U * np.exp(-self.v * np.abs(R_hat))
        self.D = self.d_prior + weighted.sum(axis=1)


def update_counts(model: EstimatedModel, traj: Trajectory) -> EstimatedModel:
    """Fold one trajectory into the model's counts; returns the same model.

    Each observed (s, a, s') increments U and the reward accumulators, then D
    is rebuilt under the e^{−v|R̂|} weighting.  An empty trajectory leaves the
    model unchanged.
    """
    n = model.n_states
    for st in traj:
        if not (0 <= st.state < n and 0 <= st.next_state < n):
            raise IndexError(f"state index out of range: ({st.state}, {st.next_state})")
        if not 0 <= st.action < model.n_actions:
            raise IndexError(f"action index out of range: {st.action}")
    for st in traj:
        model.U[st.state, st.action, st.next_state] += 1.0
        model.R_sum[st.state, st.action, st.next_state] += st.reward
        model.R_count[st.state, st.action, st.next_state] += 1.0
    if len(traj):
        model._rebuild_adjacency()
    return model


def transition_probabilities(model: EstimatedModel) -> dict:
    """Normalized count estimates P(s,a,·) for every visited (s, a).

    Unvisited pairs are absent from the returned map; callers must treat a
    missing key as "no estimate" rather than a uniform guess.
    """
    P: dict[tuple[int, int], np.ndarray] = {}
    totals = model.U.sum(axis=2)
    for s, a in zip(*np.nonzero(totals)):
        P[(int(s), int(a))] = model.U[s, a] / totals[s, a]
    return P


def adjacency(model: EstimatedModel) -> np.ndarray:
    """Symmetrized adjacency W = (D + Dᵀ)/2, giving the spectral stage a real spectrum."""
    return (model.D + model.D.T) / 2.0


def exhaustive_model(world: GridWorld, v: float = 0.0, d_prior: float = 0.0,
                     u_prior: float = 0.0) -> EstimatedModel:
    """Model built by enumerating every (s, a) of a deterministic world once.

    Terminal goal states contribute no outgoing transitions, matching what any
    amount of trajectory sampling could observe.  Requires slip_prob = 0.
    """
    if world.slip_prob != 0.0:
        raise ValueError("exhaustive enumeration requires deterministic dynamics")
    model = EstimatedModel(world.n_states, N_ACTIONS, v=v, d_prior=d_prior,
                           u_prior=u_prior)
    for s in range(world.n_states):
        if world.is_terminal(s):
            continue
        for a in range(N_ACTIONS):
            s2 = world.move(s, a)
            r = world.goal_reward if s2 in world.goals else world.step_reward
            model.U[s, a, s2] += 1.0
            model.R_sum[s, a, s2] += r
            model.R_count[s, a, s2] += 1.0
    model._rebuild_adjacency()
    return model


def save_triplets(model: EstimatedModel, path) -> None:
    """Write visited transitions as CSV rows (s, a, next_s, count, reward_mean)."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s", "a", "next_s", "count", "reward_mean"])
        for s, a, s2 in zip(*np.nonzero(model.R_count)):
            mean_r = model.R_sum[s, a, s2] / model.R_count[s, a, s2]
            writer.writerow([int(s), int(a), int(s2),
                             repr(float(model.U[s, a, s2])), repr(float(mean_r))])


def load_triplets(path, n_states: int, n_actions: int = N_ACTIONS, v: float = 0.0,
                  d_prior: float = 0.0, u_prior: float = 0.0) -> EstimatedModel:
    """Rebuild a model from a triplet CSV written by save_triplets."""
    import csv

    model = EstimatedModel(n_states, n_actions, v=v, d_prior=d_prior, u_prior=u_prior)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["s", "a", "next_s", "count", "reward_mean"]:
            raise ValueError(f"unrecognized triplet header: {header}")
        for row in reader:
            s, a, s2 = int(row[0]), int(row[1]), int(row[2])
            count, mean_r = float(row[3]), float(row[4])
            model.U[s, a, s2] += count
            model.R_sum[s, a, s2] += mean_r * count
            model.R_count[s, a, s2] += count
    model._rebuild_adjacency()
    return model
