import logging

import numpy as np
import pytest

from hjidecomp.core.grid import build_grid
from hjidecomp.core.model import ControlGrid, GameSpec, TargetSet
from hjidecomp.games import P1Params, P3Params, make_p1, make_p3


@pytest.fixture
def p3():
    return make_p3(P3Params(alpha=0.5), control_samples=3)


@pytest.fixture
def p1():
    return make_p1(P1Params(m=2, alpha=(0.5, 0.5), beta=1.0, r=0.1), control_samples=3)


@pytest.fixture
def eikonal_1d():
    """
    x' = b with |b| <= 1 against a still evader; target |x| <= 0.1, so u(x) = |x| - 0.1
    """
    return GameSpec(state_dim=1, dynamics=lambda x, a, b: np.zeros_like(x) + b[0],
                    control_set_a=ControlGrid.singleton(0.0), control_set_b=ControlGrid.interval(-1.0, 1.0, 3),
                    targets=(TargetSet(signed_distance=lambda x: np.abs(x[..., 0]) - 0.1, label="0"),),
                    name="eikonal")


@pytest.fixture
def line_grid():
    return build_grid([(-1.0, 1.0)], [201])


@pytest.fixture(autouse=True)
def restore_logging():
    """
    The command line reconfigures (or disables) logging; undo that after every test
    """
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    logging.disable(logging.NOTSET)
    root.handlers[:] = handlers
    root.setLevel(level)
