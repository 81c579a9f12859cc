"""Sparse decision processes and their exact/approximate solvers.

Meta-MDPs, compact meta-MDPs and turn-based games are all stored as a
``SparseProcess``: a list of hashable state keys, per-state choice rows and
per-choice outcome edges (see :mod:`advrl.kernels` for the layout). Finite
horizon processes are time-expanded (time is part of the key) and ordered so
that every edge points to a strictly later stage; they are solved by a single
backward sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels


@dataclass
class SparseProcess:
    keys: list
    state_ptr: np.ndarray
    choice_action: np.ndarray
    reward: np.ndarray  # attacker (meta-MDP) or second-player reward per choice
    victim_reward: np.ndarray  # victim reward per choice
    out_ptr: np.ndarray
    out_next: np.ndarray
    out_prob: np.ndarray
    init: np.ndarray
    gamma: float
    finite: bool
    stage_ptr: np.ndarray | None = None
    owner: np.ndarray | None = None  # +1 maximizer (victim), -1 minimizer (attacker); games only
    choice_label: list | None = None
    index: dict = field(init=False, repr=False)
    edge_choice: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {k: i for i, k in enumerate(self.keys)}
        self.edge_choice = np.repeat(
            np.arange(self.n_choices, dtype=np.int64), np.diff(self.out_ptr)
        )
        if self.stage_ptr is None:
            self.stage_ptr = np.array([0, self.n_states], dtype=np.int64)

    @property
    def n_states(self) -> int:
        return len(self.keys)

    @property
    def n_choices(self) -> int:
        return self.choice_action.shape[0]

    def choices(self, i: int) -> range:
        return range(self.state_ptr[i], self.state_ptr[i + 1])

    def edges(self, c: int):
        lo, hi = self.out_ptr[c], self.out_ptr[c + 1]
        return self.out_next[lo:hi], self.out_prob[lo:hi]

    def choice_state(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_states), np.diff(self.state_ptr))

    def restrict(self, keep: np.ndarray) -> "SparseProcess":
        """Sub-process keeping only the flagged choices (each state keeps >= 1)."""
        keep = np.asarray(keep, dtype=bool)
        counts = np.add.reduceat(keep.astype(np.int64), self.state_ptr[:-1])
        if np.any(counts == 0):
            raise ValueError("restriction leaves a state without choices")
        edge_keep = keep[self.edge_choice]
        deg = np.diff(self.out_ptr)[keep]
        labels = None
        if self.choice_label is not None:
            labels = [lab for lab, k in zip(self.choice_label, keep) if k]
        return SparseProcess(
            keys=self.keys,
            state_ptr=np.concatenate([[0], np.cumsum(counts)]).astype(np.int64),
            choice_action=self.choice_action[keep],
            reward=self.reward[keep],
            victim_reward=self.victim_reward[keep],
            out_ptr=np.concatenate([[0], np.cumsum(deg)]).astype(np.int64),
            out_next=self.out_next[edge_keep],
            out_prob=self.out_prob[edge_keep],
            init=self.init,
            gamma=self.gamma,
            finite=self.finite,
            stage_ptr=self.stage_ptr,
            owner=self.owner,
            choice_label=labels,
        )

    def fix(self, choice_per_state: np.ndarray) -> "SparseProcess":
        keep = np.zeros(self.n_choices, dtype=bool)
        keep[np.asarray(choice_per_state)] = True
        return self.restrict(keep)

    def sign(self) -> np.ndarray:
        if self.owner is None:
            return np.ones(self.n_states)
        return self.owner.astype(float)

    def transition_matrix(self, choice_per_state) -> sp.csr_matrix:
        """State-to-state matrix induced by one choice per state."""
        c = np.asarray(choice_per_state)
        lo, hi = self.out_ptr[c], self.out_ptr[c + 1]
        deg = hi - lo
        rows = np.repeat(np.arange(self.n_states), deg)
        edge_idx = np.concatenate([np.arange(a, b) for a, b in zip(lo, hi)]) if deg.sum() else np.zeros(0, int)
        return sp.csr_matrix(
            (self.out_prob[edge_idx], (rows, self.out_next[edge_idx])),
            shape=(self.n_states, self.n_states),
        )


def q_values(proc: SparseProcess, V: np.ndarray, reward: np.ndarray | None = None) -> np.ndarray:
    reward = proc.reward if reward is None else reward
    cont = np.bincount(
        proc.edge_choice, weights=proc.out_prob * V[proc.out_next], minlength=proc.n_choices
    )
    return reward + proc.gamma * cont


def solve_finite(proc: SparseProcess, sign=None, reward=None):
    """Exact backward induction. Returns (values, best choice per state)."""
    sign = proc.sign() if sign is None else np.asarray(sign, dtype=float)
    reward = proc.reward if reward is None else reward
    return kernels.dag_backward(
        proc.gamma, reward, proc.out_ptr, proc.out_next, proc.out_prob,
        proc.state_ptr, sign, proc.edge_choice, proc.stage_ptr,
    )


def evaluate_fixed(proc: SparseProcess, choice_per_state, reward=None) -> np.ndarray:
    """Exact value of a deterministic choice rule, for the given reward stream."""
    reward = proc.reward if reward is None else reward
    c = np.asarray(choice_per_state)
    if proc.finite:
        sub = proc.fix(c)
        r = reward[c]
        V, _ = kernels.dag_backward(
            proc.gamma, r, sub.out_ptr, sub.out_next, sub.out_prob,
            sub.state_ptr, np.ones(proc.n_states), sub.edge_choice, sub.stage_ptr,
        )
        return V
    K = proc.transition_matrix(c)
    A = sp.identity(proc.n_states, format="csc") - proc.gamma * K.tocsc()
    return np.asarray(spla.spsolve(A, reward[c]), dtype=float).reshape(-1)


def value_iteration(proc: SparseProcess, eps: float, sign=None, max_iter: int = 1_000_000):
    """Synchronous value iteration with the eps(1-g)/(2g) stopping gap."""
    sign = proc.sign() if sign is None else np.asarray(sign, dtype=float)
    g = proc.gamma
    thresh = np.inf if g == 0 else eps * (1 - g) / (2 * g)
    V = np.zeros(proc.n_states)
    for _ in range(max_iter):
        V_new, best = kernels.bellman(
            V, g, proc.reward, proc.out_ptr, proc.out_next, proc.out_prob,
            proc.state_ptr, sign, proc.edge_choice,
        )
        gap = np.max(np.abs(V_new - V)) if V.size else 0.0
        V = V_new
        if gap <= thresh:
            break
    _, best = kernels.bellman(
        V, g, proc.reward, proc.out_ptr, proc.out_next, proc.out_prob,
        proc.state_ptr, sign, proc.edge_choice,
    )
    return V, best


def polish_policy(proc: SparseProcess, best: np.ndarray, sign=None, max_rounds: int = 200):
    """Policy-improvement rounds with exact evaluation, starting from ``best``.

    Single-controller use only (one sign for all states, or a game whose
    other player is already fixed). A choice is replaced only on a strict
    improvement beyond round-off, which guarantees termination.
    """
    sign = proc.sign() if sign is None else np.asarray(sign, dtype=float)
    best = np.asarray(best).copy()
    starts = proc.state_ptr[:-1]
    counts = np.diff(proc.state_ptr)
    sg = np.repeat(sign, counts)
    for _ in range(max_rounds):
        V = evaluate_fixed(proc, best)
        sQ = sg * q_values(proc, V)
        top = np.maximum.reduceat(sQ, starts)
        current = sQ[best]
        tol = 1e-11 * np.maximum(1.0, np.abs(top))
        improve = top > current + tol
        if not improve.any():
            return V, best
        ok = sQ >= np.repeat(top - 1e-12 * np.maximum(1.0, np.abs(top)), counts)
        first = np.minimum.reduceat(np.where(ok, np.arange(proc.n_choices), proc.n_choices), starts)
        best = np.where(improve, first, best)
    return evaluate_fixed(proc, best), best


def solve_discounted(proc: SparseProcess, eps: float, sign=None, polish: bool = True):
    V, best = value_iteration(proc, eps, sign)
    if polish:
        V, best = polish_policy(proc, best, sign)
    return V, best
