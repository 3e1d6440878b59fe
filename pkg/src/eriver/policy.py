"""Mean policy: a probability vector over feasible actions at every decision state."""

from __future__ import annotations

from collections.abc import Iterable, Mapping

import numpy as np

from .mdp import Action, State, StateSpace

SIMPLEX_TOL = 1e-12


class MeanPolicy:
    """Fleet-wide mixture policy.

    ``probs[s][k]`` is the probability of ``actions[s][k]``. Iterates of the
    fixed-point loop are convex mixtures of these, so the representation is
    closed under :meth:`mix`.
    """

    def __init__(self, actions: Mapping[State, tuple[Action, ...]], probs: Mapping[State, np.ndarray]):
        self.actions = dict(actions)
        self.probs = {s: np.asarray(probs[s], dtype=float) for s in self.actions}

    @classmethod
    def from_space(cls, space: StateSpace, probs: Mapping[State, np.ndarray]) -> "MeanPolicy":
        return cls(space.actions, probs)

    @classmethod
    def uniform(cls, space: StateSpace) -> "MeanPolicy":
        return cls(space.actions, {s: np.full(len(a), 1.0 / len(a)) for s, a in space.actions.items()})

    @classmethod
    def random(cls, space: StateSpace, seed: int, noise: float = 1.0) -> "MeanPolicy":
        """Uniform over feasible actions, perturbed by seeded noise and renormalized."""
        rng = np.random.default_rng(seed)
        probs = {}
        for s in space.states:
            p = 1.0 + noise * rng.random(len(space.actions[s]))
            probs[s] = p / p.sum()
        return cls(space.actions, probs)

    @classmethod
    def deterministic(cls, space: StateSpace, choose) -> "MeanPolicy":
        """Put all mass on ``choose(state, actions)`` at every state."""
        probs = {}
        for s, acts in space.actions.items():
            p = np.zeros(len(acts))
            p[acts.index(choose(s, acts))] = 1.0
            probs[s] = p
        return cls(space.actions, probs)

    def __len__(self) -> int:
        return len(self.actions)

    def __contains__(self, s: object) -> bool:
        return s in self.actions

    def __getitem__(self, s: State) -> np.ndarray:
        return self.probs[s]

    def items(self) -> Iterable[tuple[State, tuple[Action, ...], np.ndarray]]:
        for s, acts in self.actions.items():
            yield s, acts, self.probs[s]

    def prob(self, s: State, a: Action) -> float:
        acts = self.actions[s]
        return float(self.probs[s][acts.index(a)]) if a in acts else 0.0

    def mix(self, other: "MeanPolicy", eta: float) -> "MeanPolicy":
        """``(1 - eta) * self + eta * other``."""
        self._check_same_space(other)
        return MeanPolicy(self.actions, {s: (1.0 - eta) * p + eta * other.probs[s] for s, p in self.probs.items()})

    def _check_same_space(self, other: "MeanPolicy") -> None:
        if self.actions.keys() != other.actions.keys() or any(
                self.actions[s] != other.actions[s] for s in self.actions):
            raise ValueError("policies are defined on different state/action spaces")

    def validate(self, tol: float = SIMPLEX_TOL) -> list[str]:
        errors = []
        for s, acts, p in self.items():
            if p.shape != (len(acts),):
                errors.append(f"{s}: {p.size} probabilities for {len(acts)} actions")
            elif (p < -tol).any() or abs(p.sum() - 1.0) > tol * max(1, len(p)):
                errors.append(f"{s}: not a probability vector ({p})")
        return errors

    def copy(self) -> "MeanPolicy":
        return MeanPolicy(self.actions, {s: p.copy() for s, p in self.probs.items()})

    def rows(self) -> list[tuple[int, str, int, int, str, float]]:
        return [(s.t, s.kind, s.index, s.soc, str(a), float(p[k]))
                for s, acts, p in self.items() for k, a in enumerate(acts)]

    @classmethod
    def from_rows(cls, space: StateSpace, rows: Iterable[tuple]) -> "MeanPolicy":
        probs = {s: np.zeros(len(a)) for s, a in space.actions.items()}
        for t, kind, index, soc, action, p in rows:
            s = State(int(t), kind, int(index), int(soc))
            if s not in probs:
                raise ValueError(f"policy row for unknown state {s}")
            acts = space.actions[s]
            a = Action.parse(action)
            if a not in acts:
                raise ValueError(f"policy row for infeasible action {a} at {s}")
            probs[s][acts.index(a)] = float(p)
        policy = cls(space.actions, probs)
        errors = policy.validate(1e-9)
        if errors:
            raise ValueError("invalid policy table: " + "; ".join(errors[:5]))
        return policy
