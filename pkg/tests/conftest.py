import numpy as np
import pytest

from pdr_anpg.cmdp import CmdpSpec, load_cmdp, load_features


@pytest.fixture(scope="session")
def three_state():
    return load_cmdp("bundled:three_state")


@pytest.fixture(scope="session")
def three_state_features():
    return load_features("bundled:three_state")


@pytest.fixture(scope="session")
def greedy_violates():
    return load_cmdp("bundled:greedy_violates")


@pytest.fixture(scope="session")
def bandit():
    return load_cmdp("bundled:bandit")


@pytest.fixture(scope="session", params=["three_state", "greedy_violates", "bandit"])
def bundled_spec(request):
    return load_cmdp(f"bundled:{request.param}")


def random_spec(rng, n_states=3, n_actions=2, gamma=0.9):
    """Random CMDP with full-support rho; cost in [-1, 1], reward in [0, 1]."""
    p = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    return CmdpSpec(reward=rng.uniform(0, 1, (n_states, n_actions)),
                    cost=rng.uniform(-1, 1, (n_states, n_actions)),
                    transition=p, gamma=gamma, rho=rng.dirichlet(np.ones(n_states)))


def chain_spec(gamma=0.9):
    """Two states; action a moves deterministically to state a; r(s, a) = s."""
    p = np.zeros((2, 2, 2))
    for s in range(2):
        for a in range(2):
            p[s, a, a] = 1.0
    return CmdpSpec(reward=[[0.0, 0.0], [1.0, 1.0]], cost=np.zeros((2, 2)), transition=p,
                    gamma=gamma, rho=[1.0, 0.0])


def random_policy(rng, n_states, n_actions):
    return rng.dirichlet(np.ones(n_actions), size=n_states)


def grid_optimum(spec, step=1e-3):
    """Brute force over (pi(a0|s0), pi(a0|s1)) for a 2-state, 2-action CMDP.

    Returns the best feasible J_r on the grid and the maximizing probabilities.
    """
    grid = np.linspace(0.0, 1.0, int(round(1 / step)) + 1)
    p0, p1 = np.meshgrid(grid, grid, indexing="ij")
    pis = np.stack([np.stack([p0, 1 - p0], -1), np.stack([p1, 1 - p1], -1)], axis=-2)  # (..., s, a)
    p_pi = np.einsum("...sa,sat->...st", pis, spec.transition)
    lhs = np.eye(2) - spec.gamma * p_pi
    out = {}
    for name, table in (("r", spec.reward), ("c", spec.cost)):
        g = np.einsum("...sa,sa->...s", pis, table)
        v = np.linalg.solve(lhs, g[..., None])[..., 0]
        out[name] = v @ spec.rho
    j_r = np.where(out["c"] >= 0, out["r"], -np.inf)
    idx = np.unravel_index(np.argmax(j_r), j_r.shape)
    return j_r[idx], np.array([grid[idx[0]], grid[idx[1]]])


# --------------------------------------------------------------------------- acceptance report

@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; lines are repeated in the terminal summary."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        print(line)
        lines.append((number, line))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda x: x[0]):
            terminalreporter.write_line(line)
