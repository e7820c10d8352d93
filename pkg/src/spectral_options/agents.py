"""Value learning over the option-augmented SMDP.

A QTable keys values by (state, choice), where a choice is either a primitive
action id or the key ("opt", i) for the i-th option of the current option set.
SMDP Q-learning updates one entry per completed option with the
duration-discounted target; intra-option learning updates, per primitive
transition, the primitive entry and every option whose policy is consistent
with the executed action.  The flat Q-learning baseline is the k = 1 special
case of the SMDP update with primitive choices only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from spectral_options.env import GridWorld, Step, step
from spectral_options.options import Option


def option_key(index: int) -> tuple:
    """Choice key of the index-th option in the current option set."""
    return ("opt", index)


class QTable:
    """Sparse action/option value table; unvisited entries read as 0."""

    def __init__(self, alpha: float = 0.1, gamma: float = 0.99):
        if not 0 <= alpha <= 1:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        if not 0 < gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
        self.alpha = alpha
        self.gamma = gamma
        self.values: dict[tuple, float] = {}

    def get(self, s: int, choice) -> float:
        return self.values.get((s, choice), 0.0)

    def set(self, s: int, choice, value: float):
        if not np.isfinite(value):
            raise ValueError(f"non-finite Q value for ({s}, {choice})")
        self.values[(s, choice)] = float(value)

    def max_value(self, s: int, available) -> float:
        return max(self.get(s, c) for c in available)

    def argmax(self, s: int, available):
        """Greedy choice with ties broken toward the earliest list position."""
        best, best_v = None, -np.inf
        for c in available:
            v = self.get(s, c)
            if v > best_v:
                best, best_v = c, v
        return best

    def drop_options(self):
        """Remove every option entry (used when the option set is replaced)."""
        self.values = {k: v for k, v in self.values.items() if isinstance(k[1], int)}


@dataclass
class EpisodeLog:
    episode: int
    cumulative_reward: float
    decision_epochs: int
    primitive_steps: int
    options_invoked: list = field(default_factory=list)   # (option label, duration)


class OptionOutcome(NamedTuple):
    segment: list           # primitive Steps executed under the option
    reward: float           # Σ γᵗ rₜ₊₁ over the segment
    duration: int           # primitive steps taken (k)
    end_state: int
    truncated: bool         # max_steps cap hit
    missing_policy: bool    # reached a state with no μ row; terminated, flagged


def smdp_q_update(Q: QTable, s: int, choice, r: float, k: int, s2: int,
                  available) -> QTable:
    """One SMDP Q-learning update: Q(s,o) += α[r + γᵏ·max Q(s',·) − Q(s,o)].

    ``r`` must already be the caller-accumulated discounted option reward and
    ``k`` the option duration in primitive steps; primitive actions are the
    k = 1 case.  The bootstrap maximizes over every choice available at s'
    (options and primitives alike).
    """
    if k <= 0:
        raise ValueError(f"option duration must be positive, got {k}")
    target = r + Q.gamma ** k * Q.max_value(s2, available)
    Q.set(s, choice, Q.get(s, choice) + Q.alpha * (target - Q.get(s, choice)))
    return Q


def q_update(Q: QTable, s: int, a: int, r: float, s2: int, available) -> QTable:
    """Flat one-step Q-learning update (the k = 1 SMDP case)."""
    return smdp_q_update(Q, s, a, r, 1, s2, available)


def available_choices(s: int, options: list[Option], n_actions: int) -> list:
    """Choices executable at s: initiated options first, then primitives.

    An option is offered only where its policy has a row (initiation states
    with no observed actions cannot be executed).  Options come first so that
    exact value ties at a greedy decision resolve toward the temporally
    extended choice.
    """
    choices = [option_key(i) for i, o in enumerate(options)
               if s in o.initiation and s in o.policy]
    choices.extend(range(n_actions))
    return choices


def intra_option_update(Q: QTable, transition, options: list[Option],
                        n_actions: int = 4) -> int:
    """Off-policy updates for one primitive transition (s, a, r, s').

    Every option whose policy at s gives the executed action positive
    probability receives Q(s,o) += α[r + γ·U(s',o) − Q(s,o)] with
    U(s',o) = (1−β_o(s'))·Q(s',o) + β_o(s')·max Q(s',·); the primitive entry
    gets the standard one-step update.  Returns the number of entries updated.
    """
    s, a, r, s2 = transition
    avail2 = available_choices(s2, options, n_actions)
    best2 = Q.max_value(s2, avail2)
    updated = 0
    for i, o in enumerate(options):
        mu = o.policy.get(s)
        if not mu or mu.get(a, 0.0) <= 0.0:
            continue
        key = option_key(i)
        beta2 = o.termination_prob(s2)
        u = (1.0 - beta2) * Q.get(s2, key) + beta2 * best2
        target = r + Q.gamma * u
        Q.set(s, key, Q.get(s, key) + Q.alpha * (target - Q.get(s, key)))
        updated += 1
    target = r + Q.gamma * best2
    Q.set(s, a, Q.get(s, a) + Q.alpha * (target - Q.get(s, a)))
    return updated + 1


def epsilon_greedy(Q: QTable, s: int, available, epsilon: float,
                   rng: np.random.Generator):
    """ε-greedy behavioral choice over whatever is available at s.

    Ties under the greedy branch resolve to the earliest position in
    ``available``.
    """
    if not available:
        raise ValueError(f"no available choices at state {s}")
    if rng.random() < epsilon:
        return available[int(rng.integers(len(available)))]
    return Q.argmax(s, available)


def run_option(world: GridWorld, option: Option, s0: int,
               rng: np.random.Generator, max_steps: int,
               gamma: float = 0.99) -> OptionOutcome:
    """Execute an option from s0 until β fires, the episode ends, or the cap.

    Actions are sampled from μ; termination is sampled from β at each state
    the option enters.  Returns the SMDP quantities (discounted reward, k)
    for smdp_q_update.  A state with no μ row terminates the option
    immediately, flagged via ``missing_policy``.
    """
    if s0 not in option.initiation:
        raise ValueError(f"state {s0} is not in the option's initiation set")
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    segment: list[Step] = []
    reward = 0.0
    s = s0
    for t in range(max_steps):
        mu = option.policy.get(s)
        if not mu:
            return OptionOutcome(segment, reward, t, s, False, True)
        acts = list(mu)
        probs = np.array([mu[a] for a in acts])
        a = acts[int(rng.choice(len(acts), p=probs))]
        s2, r, done = step(world, s, a, rng)
        segment.append(Step(s, a, r, s2, done))
        reward += gamma ** t * r
        s = s2
        if done or rng.random() < option.termination_prob(s2):
            return OptionOutcome(segment, reward, t + 1, s2, False, False)
    return OptionOutcome(segment, reward, max_steps, s, True, False)
