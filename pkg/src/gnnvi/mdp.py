"""MDP data model, validity rules and the JSON dataset format.

Transitions are stored in compressed sparse rows. Row ``a * num_states + s``
holds the successors of state ``s`` under action ``a`` in ascending order,
which is also the edge layout the executor consumes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

FORMAT_VERSION = 1
PROB_SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Mdp:
    num_states: int
    num_actions: int
    gamma: float
    # CSR over rows (a, s): successors indices[indptr[r]:indptr[r+1]]
    indptr: np.ndarray
    indices: np.ndarray
    probs: np.ndarray
    rewards: np.ndarray  # (num_states, num_actions)

    def __post_init__(self):
        for name in ("indptr", "indices", "probs", "rewards"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @classmethod
    def from_lists(
        cls,
        num_states: int,
        num_actions: int,
        gamma: float,
        transitions: Sequence[Sequence[Sequence[tuple[int, float]]]],
        rewards,
    ) -> "Mdp":
        """Build from ``transitions[s][a] = [(s', p), ...]`` and a dense reward table.

        Successor lists are sorted by ``s'``; nothing else is checked here, see
        :func:`validate`.
        """
        indptr = [0]
        indices: list[int] = []
        probs: list[float] = []
        for a in range(num_actions):
            for s in range(num_states):
                row = sorted(transitions[s][a], key=lambda t: t[0])
                indices.extend(int(t[0]) for t in row)
                probs.extend(float(t[1]) for t in row)
                indptr.append(len(indices))
        return cls(
            num_states=int(num_states),
            num_actions=int(num_actions),
            gamma=float(gamma),
            indptr=np.asarray(indptr, dtype=np.int64),
            indices=np.asarray(indices, dtype=np.int64),
            probs=np.asarray(probs, dtype=np.float64),
            rewards=np.asarray(rewards, dtype=np.float64).reshape(num_states, num_actions).copy(),
        )

    def _row(self, s: int, a: int) -> int:
        if not 0 <= s < self.num_states:
            raise IndexError(f"state {s} out of range [0, {self.num_states})")
        if not 0 <= a < self.num_actions:
            raise IndexError(f"action {a} out of range [0, {self.num_actions})")
        return a * self.num_states + s

    def successors(self, s: int, a: int) -> list[tuple[int, float]]:
        r = self._row(s, a)
        lo, hi = self.indptr[r], self.indptr[r + 1]
        return [(int(j), float(p)) for j, p in zip(self.indices[lo:hi], self.probs[lo:hi])]

    def edge_set(self) -> set[tuple[int, int]]:
        rows = np.repeat(np.arange(self.num_actions * self.num_states), np.diff(self.indptr))
        src = rows % self.num_states
        keep = self.probs > 0
        return set(zip(src[keep].tolist(), self.indices[keep].tolist()))

    @cached_property
    def transition_matrix(self) -> sp.csr_matrix:
        """Sparse ``(A*S, S)`` matrix with ``P[a*S + s, s'] = p(s'|s,a)``."""
        n_rows = self.num_actions * self.num_states
        return sp.csr_matrix(
            (self.probs, self.indices, self.indptr), shape=(n_rows, self.num_states)
        )

    @property
    def row_states(self) -> np.ndarray:
        """Source state of every stored transition, aligned with ``indices``."""
        rows = np.repeat(np.arange(self.num_actions * self.num_states), np.diff(self.indptr))
        return rows % self.num_states

    @property
    def row_actions(self) -> np.ndarray:
        rows = np.repeat(np.arange(self.num_actions * self.num_states), np.diff(self.indptr))
        return rows // self.num_states

    def transitions(self) -> list[list[list[tuple[int, float]]]]:
        return [
            [self.successors(s, a) for a in range(self.num_actions)]
            for s in range(self.num_states)
        ]

    def permute_states(self, perm: Sequence[int]) -> "Mdp":
        """Relabel states so that old state ``s`` becomes ``perm[s]``."""
        perm = np.asarray(perm)
        new = [[None] * self.num_actions for _ in range(self.num_states)]
        rewards = np.empty_like(self.rewards)
        for s in range(self.num_states):
            rewards[perm[s]] = self.rewards[s]
            for a in range(self.num_actions):
                new[perm[s]][a] = [(int(perm[j]), p) for j, p in self.successors(s, a)]
        return Mdp.from_lists(self.num_states, self.num_actions, self.gamma, new, rewards)

    def permute_actions(self, perm: Sequence[int]) -> "Mdp":
        """Relabel actions so that old action ``a`` becomes ``perm[a]``."""
        perm = np.asarray(perm)
        new = [[None] * self.num_actions for _ in range(self.num_states)]
        rewards = np.empty_like(self.rewards)
        for s in range(self.num_states):
            for a in range(self.num_actions):
                new[s][perm[a]] = self.successors(s, a)
                rewards[s, perm[a]] = self.rewards[s, a]
        return Mdp.from_lists(self.num_states, self.num_actions, self.gamma, new, rewards)

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "gamma": self.gamma,
            "rewards": self.rewards.tolist(),
            "transitions": [
                [[[j, p] for j, p in self.successors(s, a)] for a in range(self.num_actions)]
                for s in range(self.num_states)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mdp":
        version = d.get("version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported MDP format version {version!r}")
        trans = [[[(int(j), float(p)) for j, p in acts] for acts in row] for row in d["transitions"]]
        return cls.from_lists(d["num_states"], d["num_actions"], d["gamma"], trans, d["rewards"])

    def equals(self, other: "Mdp", atol: float = 1e-12) -> bool:
        return (
            self.num_states == other.num_states
            and self.num_actions == other.num_actions
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and abs(self.gamma - other.gamma) <= atol
            and np.allclose(self.probs, other.probs, rtol=0, atol=atol)
            and np.allclose(self.rewards, other.rewards, rtol=0, atol=atol)
        )


def dumps(mdp: Mdp) -> str:
    # sort_keys + fixed separators keep files byte-stable across platforms
    return json.dumps(mdp.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"


def loads(text: str) -> Mdp:
    return Mdp.from_dict(json.loads(text))


def save(mdp: Mdp, path: str | Path) -> None:
    Path(path).write_text(dumps(mdp), encoding="utf-8", newline="\n")


def load(path: str | Path) -> Mdp:
    return loads(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    state: int | None = None
    action: int | None = None


def validate(mdp: Mdp) -> list[Violation]:
    """Return every invariant violation; an empty list means the MDP is valid."""
    out: list[Violation] = []
    if not (0.0 <= mdp.gamma < 1.0):
        out.append(Violation("gamma", f"gamma {mdp.gamma} out of range [0, 1)"))
    if mdp.num_states < 1 or mdp.num_actions < 1:
        out.append(Violation("shape", "num_states and num_actions must be positive"))
        return out
    if mdp.rewards.shape != (mdp.num_states, mdp.num_actions):
        out.append(Violation("shape", f"rewards shape {mdp.rewards.shape} mismatched"))
    elif not np.all(np.isfinite(mdp.rewards)):
        out.append(Violation("reward", "non-finite reward entries"))
    n_rows = mdp.num_states * mdp.num_actions
    if len(mdp.indptr) != n_rows + 1:
        out.append(Violation("shape", "transition row pointer has wrong length"))
        return out
    for a in range(mdp.num_actions):
        for s in range(mdp.num_states):
            r = a * mdp.num_states + s
            lo, hi = mdp.indptr[r], mdp.indptr[r + 1]
            idx, p = mdp.indices[lo:hi], mdp.probs[lo:hi]
            if hi == lo:
                out.append(Violation("empty", "no successors", s, a))
                continue
            if np.any((idx < 0) | (idx >= mdp.num_states)):
                out.append(Violation("index", "successor index out of range", s, a))
            if len(np.unique(idx)) != len(idx):
                out.append(Violation("duplicate", "duplicate successor entries", s, a))
            if np.any(~(p > 0) | (p > 1)):
                out.append(Violation("probability", "probability outside (0, 1]", s, a))
            total = float(p.sum())
            if abs(total - 1.0) > PROB_SUM_TOL:
                out.append(
                    Violation("sum", f"probabilities sum to {total:g} != 1", s, a)
                )
    return out


def successors(mdp: Mdp, s: int, a: int) -> list[tuple[int, float]]:
    return mdp.successors(s, a)


def edge_set(mdp: Mdp) -> set[tuple[int, int]]:
    return mdp.edge_set()

