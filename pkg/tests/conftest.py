import os
import sys

import numpy as np
import pytest
from dotenv import load_dotenv

# --- Path Setup ---
# Puts the repository root on the path so 'dualdp' imports without installation.
ROOT_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..")
sys.path.insert(0, ROOT_DIR)
# --- End Path Setup ---

# Tests always use the in-process pool and quiet logs unless the env says otherwise
load_dotenv()
os.environ.setdefault("LOG_LEVEL", "WARNING")
os.environ.setdefault("DEFAULT_WORKERS", "1")
RUN_SLOW = os.getenv("RUN_SLOW", "0").lower() in ("1", "true", "yes")

from dualdp import storage
from dualdp.models.problem_model import PiecewiseLinearCost, Scenario, StageBlock, TwoStageLowerLevel, build_instance
from dualdp.schemas.schemas import EdParams, ReservoirParams
from dualdp.services import benchmarks
from dualdp.services.hddp import HierarchicalInstance


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running solver runs, enabled with RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip_slow = pytest.mark.skip(reason="set RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# --- Instances ---

def chain_row(offset: float = 0.0, cost=None) -> Scenario:
    """x >= x_prev / 2 + offset with cost x."""
    return Scenario(A=[[1.0]], B=[[0.5]], b=[offset], is_equality=[False],
                    cost=cost or PiecewiseLinearCost.linear([1.0]))


@pytest.fixture(scope="module")
def chain():
    """
    The one-dimensional chain: x >= x_prev / 2 on [0, 1], cost x, x0 = 1, discount 0.5.
    Its optimal value is 2/3 and V(x) = 2x/3.
    """
    return benchmarks.gen_chain()


@pytest.fixture(scope="module")
def mirrored_chain():
    """The chain with two identical scenarios."""
    row = chain_row()
    return build_instance([0.0], [1.0], [1.0], row, [row, row], 0.5, name="chain-mirrored")


@pytest.fixture(scope="module")
def zero_cost_chain():
    row = chain_row(cost=PiecewiseLinearCost.zero(1))
    return build_instance([0.0], [1.0], [1.0], row, [row], 0.5, name="chain-zero")


def random_instance(seed: int, n: int | None = None, N: int | None = None):
    """
    Small random instance with rows x >= M x_prev + b on the unit box.
    Entries of M and b are small enough that x = upper is always feasible.
    """
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(1, 3))
    N = N or int(rng.integers(1, 4))
    discount = float(rng.uniform(0.3, 0.6))

    def scenario():
        pieces = int(rng.integers(1, 3))
        cost = PiecewiseLinearCost(rng.uniform(0.0, 1.0, size=(pieces, n)), rng.uniform(0.0, 0.5, size=pieces))
        return Scenario(A=np.eye(n), B=rng.uniform(0.0, 0.3, size=(n, n)), b=rng.uniform(0.0, 0.2, size=n),
                        is_equality=np.zeros(n, dtype=bool), cost=cost)

    root = scenario()
    return build_instance(np.zeros(n), np.ones(n), rng.uniform(0.0, 1.0, size=n), root,
                          [scenario() for _ in range(N)], discount, name=f"random-{seed}")


@pytest.fixture
def make_random_instance():
    """Factory fixture for seeded random instances (n <= 2, N <= 3, discount <= 0.6)."""
    return random_instance


@pytest.fixture(scope="module")
def small_reservoir():
    return benchmarks.gen_reservoir(ReservoirParams(num_reservoirs=1, num_scenarios=2, discount=0.5), seed=3)


@pytest.fixture(scope="module")
def small_dispatch():
    """One region, one generator, two top scenarios and two second-stage samples."""
    params = EdParams(generators=1, regions=1, N1=2, N2=2, discount=0.5, demand_range=(5.0, 6.0))
    return benchmarks.gen_ed(params, seed=11)


def degenerate_hierarchy(top, eps_lo: float = 0.05) -> HierarchicalInstance:
    """A lower level that costs nothing and constrains nothing: z1 >= 0 and z2 >= 0 on unit boxes."""
    n = top.n
    first = StageBlock(A=[[1.0]], B=np.zeros((1, n)), b=[0.0], is_equality=[False],
                       cost=PiecewiseLinearCost.zero(1), lower=[0.0], upper=[1.0])
    second = StageBlock(A=[[1.0]], B=[[0.0]], b=[0.0], is_equality=[False],
                        cost=PiecewiseLinearCost.zero(1), lower=[0.0], upper=[1.0])
    return HierarchicalInstance(top=top, lower=TwoStageLowerLevel(first=(first,), second_samples=(second,)),
                                eps_lo=eps_lo, rho=0.1, eps0=1.0, G_bar=0.0)


@pytest.fixture(scope="module")
def chain_hierarchy(chain):
    return degenerate_hierarchy(chain)


# --- Files ---

@pytest.fixture
def chain_file(tmp_path, chain):
    path = tmp_path / "chain.prob"
    storage.write_instance(chain, path)
    return path


@pytest.fixture
def dispatch_file(tmp_path, small_dispatch):
    path = tmp_path / "ed.prob"
    storage.write_hierarchical(small_dispatch, path)
    return path
