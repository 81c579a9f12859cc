"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py --repeat 5

Both paths run in the same process (the ``*_nb`` and ``*_np`` functions are
called directly), so ADVRL_DISABLE_NUMBA does not need to be toggled.
"""

import argparse
import timeit

import numpy as np

from advrl import AttackerObjective, build_constraints, build_meta_mdp, reference_layout, value_iteration
from advrl import kernels as K
from advrl._accel import HAVE_NUMBA
from advrl.gridworld import build_gridworld, build_region_constraints
from advrl.mdp import backward_induction, make_pomdp
from advrl.policy import AttackPolicy
from advrl.sim import _rollout_args, episode_uniforms


def grid_process():
    layout = reference_layout()
    M = build_gridworld(layout)
    _, pi = backward_induction(M)
    B = build_region_constraints(layout, "action", M)
    return build_meta_mdp(M, pi, B, AttackerObjective.negate_reward()).proc


def discounted_process(rng, S, A):
    P = rng.dirichlet(np.ones(S) * 0.2, size=(S, A))
    M = make_pomdp(P, rewards=rng.integers(-3, 4, size=(S, A)).astype(float), gamma=0.95)
    _, pi = value_iteration(M, 1e-8)
    B = build_constraints({"action": "all"}, M)
    return M, pi, B, build_meta_mdp(M, pi, B, AttackerObjective.negate_reward()).proc


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--states", type=int, default=200)
    parser.add_argument("--actions", type=int, default=5)
    parser.add_argument("--episodes", type=int, default=20000)
    args = parser.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is unavailable or disabled; only the numpy path can be timed")

    rng = np.random.default_rng(0)
    dag = grid_process()
    M, pi, B, disc = discounted_process(rng, args.states, args.actions)
    V = rng.normal(size=disc.n_states)
    T = 60
    U = episode_uniforms(0, 0, args.episodes, T)
    nu = AttackPolicy.identity(B, AttackerObjective.negate_reward())
    rargs = _rollout_args(M, pi, nu, AttackerObjective.negate_reward(), T)

    def csr(p):
        return p.out_ptr, p.out_next, p.out_prob, p.state_ptr

    cases = {
        f"dag_backward ({dag.n_states} meta-states)": (
            lambda: K._dag_nb(dag.gamma, dag.reward, *csr(dag), dag.sign()),
            lambda: K._dag_np(dag.gamma, dag.reward, *csr(dag), dag.sign(), dag.edge_choice, dag.stage_ptr),
        ),
        f"bellman sweep ({disc.n_states} meta-states)": (
            lambda: K._bellman_nb(V, disc.gamma, disc.reward, *csr(disc), disc.sign()),
            lambda: K._bellman_np(V, disc.gamma, disc.reward, *csr(disc), disc.sign(), disc.edge_choice),
        ),
        f"rollout ({args.episodes} episodes x {T} steps)": (
            lambda: K._rollout_nb(U, *rargs, False),
            lambda: K._rollout_np(U, *rargs, False),
        ),
    }
    print(f"{'kernel':45s} {'numba [ms]':>12s} {'numpy [ms]':>12s} {'speedup':>8s}")
    for name, (nb, npf) in cases.items():
        t_np = best_of(npf, args.repeat)
        if HAVE_NUMBA:
            nb()  # compile
            t_nb = best_of(nb, args.repeat)
            print(f"{name:45s} {1e3 * t_nb:12.3f} {1e3 * t_np:12.3f} {t_np / t_nb:8.1f}")
        else:
            print(f"{name:45s} {'-':>12s} {1e3 * t_np:12.3f} {'-':>8s}")


if __name__ == "__main__":
    main()
