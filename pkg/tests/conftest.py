import numpy as np
import pytest

from delayheat.monitor import big_m
from delayheat.predictor import place_poles
from delayheat.reduction import build_reduced_system
from delayheat.sim import SimConfig, simulate
from delayheat.spectral import Grid, Potential, decompose


class Bench:
    """c = 2 on [0, pi]: one unstable mode with lambda_1 = 1."""

    def __init__(self, c=2.0, N=2000, J=15):
        self.L = np.pi
        self.grid = Grid(N, self.L)
        self.pot = Potential.constant(c, self.L)
        self.M, self.dec, self.coeffs = decompose(self.pot, self.grid, J=J)
        self.sys = build_reduced_system(self.dec, self.coeffs)
        self._designs = {}

    def design(self, D):
        if D not in self._designs:
            self._designs[D] = place_poles(self.sys, D)
        return self._designs[D]

    def run(self, D=1.0, dt=1e-3, t_final=12.0, open_loop=False, y0=None, weights=True,
            **kw):
        cfg = SimConfig(dt=dt, t_final=t_final, D=D,
                        y0=y0 if y0 is not None else {"mode": 1, "amplitude": 1.0},
                        open_loop=open_loop, **kw)
        des = None if open_loop else self.design(D)
        W = big_m(self.sys, des, self.pot, self.grid) if weights and not open_loop else None
        return simulate(cfg, self.dec, self.coeffs, self.sys, des, self.pot, self.grid, W)


@pytest.fixture(scope="session")
def bench():
    return Bench()


@pytest.fixture(scope="session")
def headline(bench):
    return bench.run()


@pytest.fixture(scope="session")
def zero_bench():
    return Bench(c=0.0, J=15)
