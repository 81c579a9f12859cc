"""Hot loops over the sparse choice graph and the episode sampler.

Each kernel has a numba implementation (``*_nb``) and a vectorized numpy
implementation (``*_np``) with identical semantics: same tie-breaking (lowest
choice whose value is within 1e-12 relative of the best), same summation
order, same inverse-CDF sampling rule. The public names dispatch on
``advrl._accel.USE_NUMBA``.

Sparse layout (CSR twice over): state ``i`` owns choices
``state_ptr[i]:state_ptr[i+1]``; choice ``c`` owns outcome edges
``out_ptr[c]:out_ptr[c+1]`` with targets ``out_next`` and probabilities
``out_prob``. A choice with no edges is terminal (continuation value 0).
"""

import numpy as np

from . import _accel
from ._accel import njit

TIE_RTOL = 1e-12


# ---------------------------------------------------------------- backups


@njit(cache=True)
def _bellman_nb(V, gamma, reward, out_ptr, out_next, out_prob, state_ptr, sign):
    n = state_ptr.shape[0] - 1
    V_new = np.empty(n)
    best = np.empty(n, dtype=np.int64)
    Q = np.empty(reward.shape[0])
    for i in range(n):
        c0 = state_ptr[i]
        c1 = state_ptr[i + 1]
        sg = sign[i]
        top = -np.inf
        for c in range(c0, c1):
            acc = 0.0
            for e in range(out_ptr[c], out_ptr[c + 1]):
                acc += out_prob[e] * V[out_next[e]]
            Q[c] = sg * (reward[c] + gamma * acc)
            if Q[c] > top:
                top = Q[c]
        tol = TIE_RTOL * max(1.0, abs(top))
        pick = c0
        for c in range(c0, c1):
            if Q[c] >= top - tol:
                pick = c
                break
        V_new[i] = sg * top
        best[i] = pick
    return V_new, best


def _choice_values_np(V, gamma, reward, out_ptr, out_next, out_prob, edge_choice, c0, c1):
    e0, e1 = out_ptr[c0], out_ptr[c1]
    cont = np.bincount(
        edge_choice[e0:e1] - c0,
        weights=out_prob[e0:e1] * V[out_next[e0:e1]],
        minlength=c1 - c0,
    )
    return reward[c0:c1] + gamma * cont


def _pick_np(Q, state_ptr, sign, c0):
    """Per-state extremum and first near-optimal choice for a slice of states."""
    starts = state_ptr[:-1] - c0
    counts = np.diff(state_ptr)
    sg = np.repeat(sign, counts)
    sQ = sg * Q
    top = np.maximum.reduceat(sQ, starts)
    tol = TIE_RTOL * np.maximum(1.0, np.abs(top))
    ok = sQ >= np.repeat(top - tol, counts)
    idx = np.where(ok, np.arange(Q.shape[0]), Q.shape[0])
    best = np.minimum.reduceat(idx, starts) + c0
    return sign * top, best.astype(np.int64)


def _bellman_np(V, gamma, reward, out_ptr, out_next, out_prob, state_ptr, sign, edge_choice):
    C = reward.shape[0]
    Q = _choice_values_np(V, gamma, reward, out_ptr, out_next, out_prob, edge_choice, 0, C)
    return _pick_np(Q, state_ptr, sign, 0)


def bellman(V, gamma, reward, out_ptr, out_next, out_prob, state_ptr, sign, edge_choice):
    """One synchronous backup: returns (V_new, best_choice)."""
    if _accel.USE_NUMBA:
        return _bellman_nb(V, gamma, reward, out_ptr, out_next, out_prob, state_ptr, sign)
    return _bellman_np(V, gamma, reward, out_ptr, out_next, out_prob, state_ptr, sign, edge_choice)


@njit(cache=True)
def _dag_nb(gamma, reward, out_ptr, out_next, out_prob, state_ptr, sign):
    n = state_ptr.shape[0] - 1
    V = np.zeros(n)
    best = np.empty(n, dtype=np.int64)
    Q = np.empty(reward.shape[0])
    for i in range(n - 1, -1, -1):
        c0 = state_ptr[i]
        c1 = state_ptr[i + 1]
        sg = sign[i]
        top = -np.inf
        for c in range(c0, c1):
            acc = 0.0
            for e in range(out_ptr[c], out_ptr[c + 1]):
                acc += out_prob[e] * V[out_next[e]]
            Q[c] = sg * (reward[c] + gamma * acc)
            if Q[c] > top:
                top = Q[c]
        tol = TIE_RTOL * max(1.0, abs(top))
        pick = c0
        for c in range(c0, c1):
            if Q[c] >= top - tol:
                pick = c
                break
        V[i] = sg * top
        best[i] = pick
    return V, best


def _dag_np(gamma, reward, out_ptr, out_next, out_prob, state_ptr, sign, edge_choice, stage_ptr):
    n = state_ptr.shape[0] - 1
    V = np.zeros(n)
    best = np.empty(n, dtype=np.int64)
    for k in range(stage_ptr.shape[0] - 2, -1, -1):
        s0, s1 = stage_ptr[k], stage_ptr[k + 1]
        if s1 == s0:
            continue
        c0, c1 = state_ptr[s0], state_ptr[s1]
        Q = _choice_values_np(V, gamma, reward, out_ptr, out_next, out_prob, edge_choice, c0, c1)
        V[s0:s1], best[s0:s1] = _pick_np(Q, state_ptr[s0 : s1 + 1], sign[s0:s1], c0)
    return V, best


def dag_backward(gamma, reward, out_ptr, out_next, out_prob, state_ptr, sign, edge_choice, stage_ptr):
    """Exact backward induction over a graph whose edges point to later stages."""
    if _accel.USE_NUMBA:
        return _dag_nb(gamma, reward, out_ptr, out_next, out_prob, state_ptr, sign)
    return _dag_np(gamma, reward, out_ptr, out_next, out_prob, state_ptr, sign, edge_choice, stage_ptr)


# ---------------------------------------------------------------- rollouts
#
# Per step the uniforms u[t+1, 0..3] drive, in order: observation, victim
# action, environment reward, next state. u[0, 0] draws the initial state.
# Sampling rule: index = #{k < n-1 : cdf[k] <= u}.


@njit(cache=True)
def _draw(cdf, u):
    n = cdf.shape[0]
    k = 0
    while k < n - 1 and cdf[k] <= u:
        k += 1
    return k


@njit(cache=True)
def _rollout_nb(
    U, T, tdep, gamma, mu_cdf, obs_cdf, pi_cdf, rew_cdf, trans_cdf,
    nu_s, nu_o, nu_a, nu_r, g, support, record,
):
    n = U.shape[0]
    ret1 = np.zeros(n)
    ret2 = np.zeros(n)
    steps = np.zeros((n if record else 0, T, 8), dtype=np.int64)
    final = np.zeros(n, dtype=np.int64)
    for e in range(n):
        s = _draw(mu_cdf, U[e, 0, 0])
        disc = 1.0
        for t in range(T):
            h = t if tdep else 0
            sd = nu_s[h, s]
            o = _draw(obs_cdf[h, sd], U[e, t + 1, 0])
            od = nu_o[h, sd, o]
            a = _draw(pi_cdf[h, od], U[e, t + 1, 1])
            ad = nu_a[h, sd, od, a]
            r = _draw(rew_cdf[h, sd, ad], U[e, t + 1, 2])
            rd = nu_r[h, sd, od, ad, r]
            s_next = _draw(trans_cdf[h, sd, ad], U[e, t + 1, 3])
            ret1[e] += disc * support[rd]
            ret2[e] += disc * g[h, sd, ad, rd]
            disc *= gamma
            if record:
                steps[e, t, 0] = s
                steps[e, t, 1] = sd
                steps[e, t, 2] = o
                steps[e, t, 3] = od
                steps[e, t, 4] = a
                steps[e, t, 5] = ad
                steps[e, t, 6] = r
                steps[e, t, 7] = rd
            s = s_next
        final[e] = s
    return ret1, ret2, steps, final


def _draw_np(cdf_rows, u):
    return np.sum(cdf_rows[:, :-1] <= u[:, None], axis=1)


def _rollout_np(
    U, T, tdep, gamma, mu_cdf, obs_cdf, pi_cdf, rew_cdf, trans_cdf,
    nu_s, nu_o, nu_a, nu_r, g, support, record,
):
    n = U.shape[0]
    ret1 = np.zeros(n)
    ret2 = np.zeros(n)
    steps = np.zeros((n if record else 0, T, 8), dtype=np.int64)
    s = _draw_np(np.broadcast_to(mu_cdf, (n, mu_cdf.shape[0])), U[:, 0, 0])
    disc = 1.0
    for t in range(T):
        h = t if tdep else 0
        sd = nu_s[h, s]
        o = _draw_np(obs_cdf[h, sd], U[:, t + 1, 0])
        od = nu_o[h, sd, o]
        a = _draw_np(pi_cdf[h, od], U[:, t + 1, 1])
        ad = nu_a[h, sd, od, a]
        r = _draw_np(rew_cdf[h, sd, ad], U[:, t + 1, 2])
        rd = nu_r[h, sd, od, ad, r]
        s_next = _draw_np(trans_cdf[h, sd, ad], U[:, t + 1, 3])
        ret1 += disc * support[rd]
        ret2 += disc * g[h, sd, ad, rd]
        disc *= gamma
        if record:
            steps[:, t] = np.stack([s, sd, o, od, a, ad, r, rd], axis=1)
        s = s_next
    return ret1, ret2, steps, s.astype(np.int64)


def rollout(*args):
    """Simulate a batch of attacked episodes from pre-drawn uniforms.

    Returns (victim_returns, attacker_returns, steps, final_states); ``steps``
    is empty unless ``record`` is set.
    """
    if _accel.USE_NUMBA:
        return _rollout_nb(*args)
    return _rollout_np(*args)
