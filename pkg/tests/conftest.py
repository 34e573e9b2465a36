import numpy as np
import pytest

from foldbs import folded_params, table1_spec
from foldbs.core import Grid1D
from foldbs.gains import assemble_feedback, assemble_h
from foldbs.kernel_aux import solve_qr
from foldbs.kernel_ctrl import solve_row1, solve_row2

C = 5.0


class Bundle:
    def __init__(self, y0, n=101, yhat0=0.05):
        self.spec = table1_spec(y0, yhat0)
        self.fp = folded_params(self.spec)
        self.row1 = solve_row1(self.fp, C, n)
        self.row2 = solve_row2(self.row1, self.fp, C)
        self.qr = solve_qr(self.row2.g_trace, self.fp, C, C)
        self.h = assemble_h(self.row1, self.row2, self.qr)
        self.grid = Grid1D(-1.0, 1.0, 401)
        self.gains = assemble_feedback(self.row1, self.h, y0, self.grid)


_cache = {}


def bundle(y0, n=101):
    key = (y0, n)
    if key not in _cache:
        _cache[key] = Bundle(y0, n)
    return _cache[key]


@pytest.fixture(scope="session")
def b005():
    return bundle(-0.05)


@pytest.fixture(scope="session")
def b030():
    return bundle(-0.30)


@pytest.fixture(scope="session")
def b000():
    return bundle(0.0)


def smooth_pair(n, seed):
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, n)
    a = rng.normal(size=(2, 4))
    return tuple(sum(a[c, k] * np.cos((k + 1) * np.pi * x + a[c, 0]) for k in range(4)) for c in range(2))
