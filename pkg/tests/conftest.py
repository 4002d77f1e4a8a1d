import numpy as np
import pytest

from krongp.grid import BERNOULLI, GAUSSIAN, GridComponent, GridDesign, OutcomeMatrix
from krongp.kernels import KernelSpec


def make_design(sizes=(2, 2, 1), families=(GAUSSIAN, BERNOULLI), seed=0, kinds=None):
    """Small design with one continuous covariate per component."""
    rng = np.random.default_rng(seed)
    kinds = kinds or ("se_ard",) * 3
    comps = [
        GridComponent(np.sort(rng.uniform(-2, 2, n))[:, None], KernelSpec(kind=k))
        for n, k in zip(sizes, kinds)
    ]
    return GridDesign(comps, list(families))


def make_outcomes(design, seed=0, missing=()):
    """Random outcomes for a design; ``missing`` lists (output, cell) pairs."""
    rng = np.random.default_rng(seed + 100)
    v = rng.normal(size=(design.n_outputs, design.n_cells))
    ng = design.n_gaussian
    v[ng:] = (v[ng:] > 0).astype(float)
    obs = np.ones_like(v, dtype=bool)
    for k, c in missing:
        obs[k, c] = False
    return OutcomeMatrix(v, obs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
