"""The attacker's meta-MDP and the victim-attacker turn-based game.

Both processes advance one subtime per step through tagged tuples whose
components are the post-attack values seen so far within the current time
step:

    AtState(s) -> AtObs(s, o) -> AtAction(s, o, a) -> AtReward(s, o, a, r) -> AtState(s')

The game inserts a victim-owned ``VictimTurn(s, o)`` between AtObs and
AtAction. Keys are ``(h, MetaState)``; ``h`` is the time step in
finite-horizon mode and always 0 in discounted mode.

Construction is vectorized per stratum: reachable tuples are found with
boolean masks, then choices and outcome edges are emitted in canonical order
(time, subtime tag, lexicographic components).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

import numpy as np

from .constraints import AttackConstraints, AttackerObjective
from .errors import DimensionMismatch, ModelError, PreconditionViolated
from .mdp import TabularPOMDP, VictimPolicy, validate_pomdp
from .sparse import SparseProcess


class Tag(IntEnum):
    STATE = 0
    OBS = 1
    VICTIM = 2
    ACTION = 3
    REWARD = 4


class MetaState(NamedTuple):
    tag: int
    s: int
    o: int = -1
    a: int = -1
    r: int = -1

    def __str__(self):
        name = Tag(self.tag).name
        comps = [c for c in (self.s, self.o, self.a, self.r) if c >= 0]
        return f"{name}({','.join(str(c) for c in comps)})"


# subtime position of each tag inside one time step
META_CYCLE = (Tag.STATE, Tag.OBS, Tag.ACTION, Tag.REWARD)
GAME_CYCLE = (Tag.STATE, Tag.OBS, Tag.VICTIM, Tag.ACTION, Tag.REWARD)

VICTIM_OWNER = 1.0
ATTACKER_OWNER = -1.0


@dataclass
class MetaMDP:
    """A meta-process plus the ingredients it was built from.

    ``kind`` is ``"full"``, ``"compact"`` or ``"game"``. ``gamma_bar`` is the
    per-subtime discount (1 in finite-horizon mode) and ``value_scale`` the
    factor between subtime-weighted values and per-step objectives.
    """

    proc: SparseProcess
    model: TabularPOMDP
    policy: VictimPolicy | None
    constraints: AttackConstraints
    objective: AttackerObjective
    kind: str
    gamma_bar: float
    value_scale: float

    @property
    def finite(self) -> bool:
        return self.model.finite

    @property
    def horizon(self) -> int | None:
        return self.model.horizon

    @property
    def meta_horizon(self) -> int | None:
        if not self.finite:
            return None
        return len(self.cycle) * self.model.horizon if self.kind != "compact" else self.model.horizon

    @property
    def cycle(self) -> tuple:
        return GAME_CYCLE if self.kind == "game" else META_CYCLE

    @property
    def keys(self) -> list:
        return self.proc.keys

    @property
    def n_states(self) -> int:
        return self.proc.n_states

    def tags(self) -> np.ndarray:
        if self.kind == "compact":
            return np.zeros(self.n_states, dtype=int)
        return np.array([k[1].tag for k in self.proc.keys], dtype=int)

    def feasible(self, key) -> np.ndarray:
        i = self.proc.index[key]
        return self.proc.choice_action[self.proc.state_ptr[i] : self.proc.state_ptr[i + 1]]

    def identity_choices(self) -> np.ndarray:
        """Global choice index of the no-attack element at every meta-state."""
        out = np.empty(self.n_states, dtype=np.int64)
        for i, key in enumerate(self.proc.keys):
            lo, hi = self.proc.state_ptr[i], self.proc.state_ptr[i + 1]
            if self.kind == "compact":
                out[i] = lo
                continue
            ms = key[1]
            ident = {Tag.STATE: ms.s, Tag.OBS: ms.o, Tag.ACTION: ms.a, Tag.REWARD: ms.r}.get(ms.tag)
            if ident is None:  # victim turn: no identity, take the first action
                out[i] = lo
                continue
            hit = np.flatnonzero(self.proc.choice_action[lo:hi] == ident)
            out[i] = lo + hit[0]
        return out

    def to_environment(self) -> dict:
        """Export as an environment description (validate_pomdp round-trips it).

        Meta-actions are tagged labels ``"s:i"``, ``"o:i"``, ``"a:i"``,
        ``"r:i"``; labels infeasible at a meta-state are marked unavailable
        and lead to an absorbing zero-reward sink, as do terminal choices of
        the last time step. Finite-horizon exports are time-expanded, so the
        kernels are stationary with horizon equal to the meta-horizon.
        """
        if self.kind != "full":
            raise ModelError("only full meta-MDPs are exported")
        proc = self.proc
        M = self.model
        labels = (
            [f"s:{i}" for i in range(M.n_states)]
            + [f"o:{i}" for i in range(M.n_obs)]
            + [f"a:{i}" for i in range(M.n_actions)]
            + [f"r:{i}" for i in range(M.n_rewards)]
        )
        offset = {Tag.STATE: 0, Tag.OBS: M.n_states, Tag.ACTION: M.n_states + M.n_obs,
                  Tag.REWARD: M.n_states + M.n_obs + M.n_actions}
        n = proc.n_states + 1
        sink = n - 1
        nA = len(labels)
        support, inv = np.unique(proc.reward, return_inverse=True)
        if not np.any(support == 0.0):
            support = np.append(support, 0.0)
            support.sort()
            inv = np.searchsorted(support, proc.reward)
        zero = int(np.searchsorted(support, 0.0))
        P = np.zeros((n, nA, n))
        Rd = np.zeros((n, nA, support.shape[0]))
        P[:, :, sink] = 1.0
        Rd[:, :, zero] = 1.0
        avail = np.zeros((n, nA), dtype=bool)
        avail[sink, 0] = True
        for i, key in enumerate(proc.keys):
            base = offset[Tag(key[1].tag)]
            for c in proc.choices(i):
                j = base + int(proc.choice_action[c])
                avail[i, j] = True
                nxt, prob = proc.edges(c)
                if nxt.size:
                    P[i, j, sink] = 0.0
                    np.add.at(P[i, j], nxt, prob)
                Rd[i, j, zero] = 0.0
                Rd[i, j, inv[c]] = 1.0
        mu = np.append(proc.init, 0.0)
        names = [f"{k[0]}:{k[1]}" for k in proc.keys] + ["SINK"]
        out = {
            "states": names,
            "observations": names,
            "actions": labels,
            "reward_support": support.tolist(),
            "transition": P.tolist(),
            "reward_dist": Rd.tolist(),
            "obs_dist": np.eye(n).tolist(),
            "mu": mu.tolist(),
            "available": avail.astype(int).tolist(),
        }
        if self.finite:
            out["horizon"] = int(self.meta_horizon)
        else:
            out["gamma"] = float(self.gamma_bar)
        return out


# ---------------------------------------------------------------- builders


def _check_inputs(M, B, pi=None):
    if not B.shape_matches(M):
        raise DimensionMismatch("constraints were built for a different model")
    if pi is not None:
        if pi.table.shape[-2:] != (M.n_obs, M.n_actions):
            raise DimensionMismatch("policy observation/action sets differ from the model's")
        if pi.kind == "time_indexed" and not M.finite:
            raise DimensionMismatch("time-indexed policy needs a finite-horizon model")


class _Layer:
    """Reachable tuples (boolean masks) and their global indices for one time step."""

    def __init__(self, S, O, A, R, game):
        self.state = np.zeros(S, dtype=bool)
        self.obs = np.zeros((S, O), dtype=bool)
        self.vic = np.zeros((S, O), dtype=bool) if game else None
        self.act = np.zeros((S, O, A), dtype=bool)
        self.rew = np.zeros((S, O, A, R), dtype=bool)

    def masks(self, game):
        if game:
            return [self.state, self.obs, self.vic, self.act, self.rew]
        return [self.state, self.obs, self.act, self.rew]


def _propagate(layer, B, O_h, pi_h, R_h, avail, game, full):
    """Fill strata masks of one layer from its AtState mask."""
    if full:
        layer.obs[:] = True
        if game:
            layer.vic[:] = True
        layer.act[:] = True
        layer.rew[:] = True
        return
    s_dag = (layer.state[:, None] & B.state_sets).any(axis=0)
    layer.obs = s_dag[:, None] & (O_h > 0)
    o_dag = (layer.obs[:, :, None] & B.obs_sets).any(axis=1)  # [s, o†]
    if game:
        layer.vic = o_dag
        layer.act = o_dag[:, :, None] & avail[:, None, :]
    else:
        layer.act = o_dag[:, :, None] & (pi_h > 0)[None, :, :]
    a_dag = (layer.act[..., None] & B.action_sets).any(axis=2)  # [s, o, a†]
    layer.rew = a_dag[..., None] & (R_h > 0)[:, None, :, :]


def _next_states(layer, P_h):
    """AtState mask reachable after the reward step of a layer."""
    sa = layer.rew.any(axis=(1, 3))  # [s, a]: some tuple with these components
    return (sa[..., None] & (P_h > 0)).any(axis=(0, 1))


def _emit(rows_idx, choice_mask, prob_rows, target_rows):
    """Choices and edges for one stratum.

    ``rows_idx``: tuple of component arrays (lexicographic) of the stratum's
    states; ``choice_mask[n, m]`` feasible elements per state;
    ``prob_rows(states, elems)`` and ``target_rows(states, elems)`` give, per
    choice, dense successor probabilities and global successor indices.
    """
    st, el = np.nonzero(choice_mask)
    counts = choice_mask.sum(axis=1)
    probs = prob_rows(st, el)
    targets = target_rows(st, el)
    ci, k = np.nonzero(probs > 0)
    deg = np.bincount(ci, minlength=st.shape[0])
    return st, el, counts, deg, targets[ci, k], probs[ci, k]


def _build(M, B, g, pi, game, prune):
    S, O, A, R = M.n_states, M.n_obs, M.n_actions, M.n_rewards
    finite = M.finite
    H = M.horizon if finite else 1
    gvals = g.values(M)
    pi_tab = None if game else pi.layered(M.n_steps)
    full = not prune

    # pass 1: reachability per layer
    layers = []
    for h in range(H):
        layer = _Layer(S, O, A, R, game)
        if full or game:
            layer.state[:] = True
        elif h == 0:
            layer.state = M.mu > 0
        else:
            layer.state = _next_states(layers[-1], M.P(h - 1))
        _propagate(layer, B, M.O(h), None if game else pi_tab[h], M.R(h), M.available, game, full)
        layers.append(layer)
    if not finite and not (full or game):
        # discounted: iterate the single layer to a fixed point
        layer = layers[0]
        while True:
            nxt = layer.state | _next_states(layer, M.P(0))
            if np.array_equal(nxt, layer.state):
                break
            layer.state = nxt
            _propagate(layer, B, M.O(0), pi_tab[0], M.R(0), M.available, game, full)

    # global indices in canonical order
    idx = []
    keys = []
    stage_ptr = [0]
    cycle = GAME_CYCLE if game else META_CYCLE
    base = 0
    for h, layer in enumerate(layers):
        li = []
        for tag, mask in zip(cycle, layer.masks(game)):
            arr = np.full(mask.shape, -1, dtype=np.int64)
            nz = np.nonzero(mask)
            n = nz[0].shape[0]
            arr[nz] = base + np.arange(n)
            base += n
            stage_ptr.append(base)
            comps = np.stack(nz, axis=1).tolist()
            if tag == Tag.STATE:
                keys.extend((h, MetaState(int(tag), c[0])) for c in comps)
            elif tag in (Tag.OBS, Tag.VICTIM):
                keys.extend((h, MetaState(int(tag), c[0], c[1])) for c in comps)
            elif tag == Tag.ACTION:
                keys.extend((h, MetaState(int(tag), c[0], c[1], c[2])) for c in comps)
            else:
                keys.extend((h, MetaState(int(tag), c[0], c[1], c[2], c[3])) for c in comps)
            li.append(arr)
        idx.append(li)

    # pass 2: choices and edges
    blocks = []
    for h, layer in enumerate(layers):
        lidx = idx[h]
        i_obs = lidx[1]
        i_vic = lidx[2] if game else None
        i_act, i_rew = lidx[-2], lidx[-1]
        if finite:
            nxt_state = idx[h + 1][0] if h + 1 < H else None
        else:
            nxt_state = idx[0][0]
        O_h, R_h, P_h = M.O(h), M.R(h), M.P(h)

        # AtState(s) --s†--> AtObs(s†, o) w.p. O(o|s†)
        (s_,) = np.nonzero(layer.state)
        blocks.append(_emit(
            (s_,), B.state_sets[s_],
            lambda st, el: O_h[el],
            lambda st, el: i_obs[el],
        ) + (np.zeros(0), None))

        # AtObs(s, o) --o†--> AtAction(s, o†, a) w.p. pi(a|o†)  |  VictimTurn(s, o†) w.p. 1
        s_, o_ = np.nonzero(layer.obs)
        if game:
            blocks.append(_emit(
                (s_, o_), B.obs_sets[s_, o_],
                lambda st, el: np.ones((st.shape[0], 1)),
                lambda st, el: i_vic[s_[st], el][:, None],
            ) + (np.zeros(0), None))
            # VictimTurn(s, o) --a--> AtAction(s, o, a) w.p. 1
            s_, o_ = np.nonzero(layer.vic)
            blocks.append(_emit(
                (s_, o_), M.available[s_],
                lambda st, el: np.ones((st.shape[0], 1)),
                lambda st, el: i_act[s_[st], o_[st], el][:, None],
            ) + (np.zeros(0), None))
        else:
            pi_h = pi_tab[h]
            blocks.append(_emit(
                (s_, o_), B.obs_sets[s_, o_],
                lambda st, el: pi_h[el],
                lambda st, el: i_act[s_[st], el],
            ) + (np.zeros(0), None))

        # AtAction(s, o, a) --a†--> AtReward(s, o, a†, r) w.p. R(r|s, a†)
        s_, o_, a_ = np.nonzero(layer.act)
        blocks.append(_emit(
            (s_, o_, a_), B.action_sets[s_, o_, a_],
            lambda st, el: R_h[s_[st], el],
            lambda st, el: i_rew[s_[st], o_[st], el],
        ) + (np.zeros(0), None))

        # AtReward(s, o, a, r) --r†--> AtState(s') w.p. P(s'|s, a), paying g(s, a, r†)
        s_, o_, a_, r_ = np.nonzero(layer.rew)
        if nxt_state is None:
            probs = lambda st, el: np.zeros((st.shape[0], 1))
            targets = lambda st, el: np.zeros((st.shape[0], 1), dtype=np.int64)
        else:
            probs = lambda st, el: P_h[s_[st], a_[st]]
            targets = lambda st, el: np.broadcast_to(nxt_state, (st.shape[0], S))
        blk = _emit((s_, o_, a_, r_), B.reward_sets[s_, o_, a_, r_], probs, targets)
        st, el = blk[0], blk[1]
        g_c = gvals[h if finite else 0][s_[st], a_[st], el]
        blocks.append(blk + (g_c, M.reward_support[el]))

    choice_action, reward, vreward, counts, degs, nexts, probs = [], [], [], [], [], [], []
    for st, el, cnt, deg, nx, pr, g_c, v_c in blocks:
        choice_action.append(el)
        counts.append(cnt)
        degs.append(deg)
        nexts.append(nx)
        probs.append(pr)
        reward.append(g_c if g_c.size else np.zeros(el.shape[0]))
        vreward.append(v_c if v_c is not None else np.zeros(el.shape[0]))
    counts = np.concatenate(counts)
    degs = np.concatenate(degs)
    n = len(keys)
    if np.any(counts == 0):
        raise ModelError("a meta-state has no feasible meta-action")
    if np.any(np.concatenate(nexts) < 0):
        raise ModelError("internal error: edge to an unmaterialized meta-state")

    init = np.zeros(n)
    first = idx[0][0]
    init[first[first >= 0]] = M.mu[first >= 0]

    owner = None
    if game:
        owner = np.full(n, ATTACKER_OWNER)
        for h in range(H):
            vic = idx[h][2]
            owner[vic[vic >= 0]] = VICTIM_OWNER

    proc = SparseProcess(
        keys=keys,
        state_ptr=np.concatenate([[0], np.cumsum(counts)]).astype(np.int64),
        choice_action=np.concatenate(choice_action).astype(np.int64),
        reward=np.concatenate(reward).astype(float),
        victim_reward=np.concatenate(vreward).astype(float),
        out_ptr=np.concatenate([[0], np.cumsum(degs)]).astype(np.int64),
        out_next=np.concatenate(nexts).astype(np.int64),
        out_prob=np.concatenate(probs).astype(float),
        init=init,
        gamma=1.0,
        finite=finite,
        stage_ptr=np.asarray(stage_ptr, dtype=np.int64) if finite else None,
        owner=owner,
    )
    return proc


def meta_discount(gamma: float, period: int = 4) -> float:
    return float(gamma) ** (1.0 / period)


def build_meta_mdp(
    M: TabularPOMDP,
    pi: VictimPolicy,
    B: AttackConstraints,
    g: AttackerObjective,
    *,
    prune: bool = True,
) -> MetaMDP:
    """The attacker's meta-MDP for a fixed victim policy.

    With ``prune`` (default) only meta-states reachable from the initial
    distribution under some feasible meta-action sequence are built;
    otherwise every tuple of every stratum is materialized.
    """
    _check_inputs(M, B, pi)
    proc = _build(M, B, g, pi, game=False, prune=prune)
    if M.finite:
        gbar, scale = 1.0, 1.0
    else:
        gbar = meta_discount(M.gamma, 4)
        scale = gbar**3
        proc.gamma = gbar
    return MetaMDP(proc, M, pi, B, g, "full", gbar, scale)


def build_meta_game(
    M: TabularPOMDP, B: AttackConstraints, g: AttackerObjective, *, prune: bool = True
) -> MetaMDP:
    """Victim-attacker turn-based game (5 subtimes per step).

    AtState tuples for every state (and every time step) are materialized so
    the victim's policy is defined everywhere; ``prune=False`` materializes
    every stratum in full. ``proc.reward`` is the attacker's reward and
    ``proc.victim_reward`` the victim's.
    """
    _check_inputs(M, B)
    proc = _build(M, B, g, None, game=True, prune=prune)
    if M.finite:
        gbar, scale = 1.0, 1.0
    else:
        gbar = meta_discount(M.gamma, 5)
        scale = gbar**4
        proc.gamma = gbar
    return MetaMDP(proc, M, None, B, g, "game", gbar, scale)


def game_is_zero_sum(G: MetaMDP) -> bool:
    return bool(np.array_equal(G.proc.reward, -G.proc.victim_reward))


def game_fully_observable(G: MetaMDP) -> bool:
    return G.model.fully_observable and not G.constraints.enabled("observation")


# ---------------------------------------------------------------- compact


def _compact_checks(M, pi, B):
    if not M.fully_observable:
        raise PreconditionViolated("compact construction needs a fully observable model")
    if not M.deterministic_rewards:
        raise PreconditionViolated("compact construction needs deterministic rewards")
    if not pi.deterministic:
        raise PreconditionViolated("compact construction needs a deterministic victim policy")
    if not M.finite:
        raise PreconditionViolated("compact construction needs finite-horizon mode")
    active = B.active_surfaces
    if len(active) > 1:
        raise PreconditionViolated(f"compact construction allows one attack surface, got {active}")
    return active[0] if active else None


def build_meta_mdp_compact(
    M: TabularPOMDP, pi: VictimPolicy, B: AttackConstraints, g: AttackerObjective
) -> MetaMDP:
    """Meta-MDP over S itself for deterministic policies and rewards.

    Meta-actions at (h, s) are the feasible manipulations of the single
    active surface; ``proc.choice_action`` holds the manipulated element
    and ``proc.choice_label`` the surface name. The true-state case pays
    g at the attacked state (the post-attack state whose reward is realized),
    which is what the full construction pays.
    """
    _check_inputs(M, B, pi)
    surface = _compact_checks(M, pi, B)
    S, H = M.n_states, M.horizon
    acts = np.argmax(pi.layered(H), axis=-1)  # [h, s] (O = S)
    gvals = g.values(M)
    support = M.reward_support
    keys, counts, choice_action, labels = [], [], [], []
    reward, vreward, nexts, probs, degs = [], [], [], [], []
    stage_ptr = [0]
    for h in range(H):
        ridx = np.argmax(M.R(h), axis=-1)  # [s, a] deterministic reward index
        P_h = M.P(h)
        for s in range(S):
            keys.append((h, s))
            a0 = acts[h, s]
            if surface == "observation":
                elems = np.flatnonzero(B.obs_sets[s, s])
                trip = [(s, acts[h, e], ridx[s, acts[h, e]], s, acts[h, e]) for e in elems]
            elif surface == "action":
                elems = np.flatnonzero(B.action_sets[s, s, a0])
                trip = [(s, e, ridx[s, e], s, e) for e in elems]
            elif surface == "state":
                elems = np.flatnonzero(B.state_sets[s])
                trip = [(e, acts[h, e], ridx[e, acts[h, e]], e, acts[h, e]) for e in elems]
            elif surface == "reward":
                elems = np.flatnonzero(B.reward_sets[s, s, a0, ridx[s, a0]])
                trip = [(s, a0, e, s, a0) for e in elems]
            else:
                elems = np.array([a0])
                trip = [(s, a0, ridx[s, a0], s, a0)]
            counts.append(len(elems))
            for e, (gs, ga, gr, ps, pa) in zip(elems, trip):
                choice_action.append(int(e))
                labels.append(surface or "none")
                reward.append(gvals[h, gs, ga, gr])
                vreward.append(support[gr])
                if h + 1 < H:
                    row = P_h[ps, pa]
                    nz = np.flatnonzero(row > 0)
                    nexts.append((h + 1) * S + nz)
                    probs.append(row[nz])
                    degs.append(nz.size)
                else:
                    degs.append(0)
        stage_ptr.append(len(keys))
    init = np.zeros(len(keys))
    init[:S] = M.mu
    proc = SparseProcess(
        keys=keys,
        state_ptr=np.concatenate([[0], np.cumsum(counts)]).astype(np.int64),
        choice_action=np.asarray(choice_action, dtype=np.int64),
        reward=np.asarray(reward, dtype=float),
        victim_reward=np.asarray(vreward, dtype=float),
        out_ptr=np.concatenate([[0], np.cumsum(degs)]).astype(np.int64),
        out_next=np.concatenate(nexts).astype(np.int64) if nexts else np.zeros(0, np.int64),
        out_prob=np.concatenate(probs).astype(float) if probs else np.zeros(0),
        init=init,
        gamma=1.0,
        finite=True,
        stage_ptr=np.asarray(stage_ptr, dtype=np.int64),
        choice_label=labels,
    )
    return MetaMDP(proc, M, pi, B, g, "compact", 1.0, 1.0)


def compact_surface(meta: MetaMDP) -> str | None:
    active = meta.constraints.active_surfaces
    return active[0] if active else None


def roundtrip_environment(meta: MetaMDP) -> TabularPOMDP:
    return validate_pomdp(meta.to_environment())
