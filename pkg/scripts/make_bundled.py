"""Regenerate the bundled CMDP documents and their golden oracle reports."""

import json

import numpy as np

from pdr_anpg.cmdp import DATA_DIR, CmdpSpec, UtilityFn
from pdr_anpg.oracle import policy_evaluation, solve_constrained_optimum
from pdr_anpg.policy import PolicyParams


def greedy_violates():
    return CmdpSpec(reward=[[1.0, 0.2], [0.8, 0.1]], cost=[[-0.6, 0.5], [-0.4, 0.6]],
                    transition=[[[0.7, 0.3], [0.4, 0.6]], [[0.5, 0.5], [0.2, 0.8]]],
                    gamma=0.9, rho=[0.5, 0.5], name="greedy_violates")


def three_state():
    rng = np.random.default_rng(0)
    n_s, n_a = 3, 2
    p = np.round(rng.dirichlet(np.full(n_s, 2.0), size=(n_s, n_a)), 4)
    p[..., -1] = 1.0 - p[..., :-1].sum(axis=-1)
    r = rng.uniform(0, 1, (n_s, n_a)).round(3)
    c = rng.uniform(-1, 1, (n_s, n_a)).round(3)
    spec = CmdpSpec(reward=r, cost=c, transition=np.round(p, 4), gamma=0.8, rho=np.full(n_s, 1 / 3),
                    name="three_state")
    feats = np.random.default_rng(1).normal(size=(n_s, n_a, 3)).round(3)
    return spec, feats


def bandit():
    return CmdpSpec(reward=[[1.0, 0.6, 0.2]], cost=[[-0.8, 0.1, 0.9]], transition=[[[1.0], [1.0], [1.0]]],
                    gamma=0.5, rho=[1.0], name="bandit")


def golden(spec):
    params = PolicyParams.tabular(spec.n_states, spec.n_actions)
    opt = solve_constrained_optimum(spec)
    return {
        "policy": "uniform",
        "reward": policy_evaluation(spec, params, UtilityFn.reward()).to_dict(),
        "cost": policy_evaluation(spec, params, UtilityFn.cost()).to_dict(),
        "regularized_lam0.5_tau0.1": policy_evaluation(
            spec, params, UtilityFn.regularized(0.5, 0.1, params)).to_dict(),
        "j_r_star": opt.j_r_star,
        "lambda_star": opt.lambda_star,
        "max_j_c": opt.max_jc,
    }


def main():
    spec3, feats = three_state()
    for spec, extra in ((greedy_violates(), {}), (spec3, {"features": feats.tolist()}), (bandit(), {})):
        doc = spec.to_dict()
        doc.update(extra)
        (DATA_DIR / f"{spec.name}.json").write_text(json.dumps(doc, indent=1) + "\n")
        (DATA_DIR / f"{spec.name}.golden.json").write_text(json.dumps(golden(spec), indent=1) + "\n")


if __name__ == "__main__":
    main()
