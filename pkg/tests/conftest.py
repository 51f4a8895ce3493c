from __future__ import annotations

import numpy as np
import pytest

from dynrescale.mesh import TensorMesh, build_graded_mesh


@pytest.fixture(scope="session")
def mesh_1d():
    """The reference production mesh: 500 nodes on [0, 1e4], quadratic grading."""
    return TensorMesh.from_axis(build_graded_mesh(500, 1e4, "algebraic", 2.0))


@pytest.fixture(scope="session")
def mesh_small():
    return TensorMesh.from_axis(build_graded_mesh(200, 1e3, "algebraic", 2.0))


@pytest.fixture(scope="session")
def mesh_2d():
    return TensorMesh.from_axis(build_graded_mesh(60, 200.0, "algebraic", 2.0), 2)


def ubar(*coords):
    return 1.0 / (1.0 + sum(np.asarray(c, dtype=float) ** 2 for c in coords) / 8.0)


# -- long reference runs, shared across the acceptance and regime tests ------

class LongRun:
    """Outputs of one reference run: config, summary, time series and final state."""

    def __init__(self, config, out):
        from dynrescale.cli_runner import read_checkpoint, read_timeseries, run

        self.config = config
        self.out = out
        self.summary = run(config, out)
        self.rows = read_timeseries(out / "timeseries.csv")
        self.final = read_checkpoint(out / "checkpoint.txt")

    def column(self, name):
        return np.array([float(r[name]) for r in self.rows])


@pytest.fixture(scope="session")
def run_1d(tmp_path_factory):
    from dynrescale.cli_runner import RunConfig

    cfg = RunConfig(scenario="paper_1d", M=(500,), L=(1e4,), grading="algebraic", grading_param=2.0,
                    max_tau=500.0, record_every=250)
    return LongRun(cfg, tmp_path_factory.mktemp("run_1d"))


@pytest.fixture(scope="session")
def run_2d(tmp_path_factory):
    from dynrescale.cli_runner import RunConfig

    cfg = RunConfig(scenario="paper_2d", M=(100, 100), L=(400.0,), grading="algebraic", grading_param=2.0,
                    max_tau=200.0, record_every=250)
    return LongRun(cfg, tmp_path_factory.mktemp("run_2d"))


def theorem_config(amplitude):
    from dynrescale.cli_runner import RunConfig

    return RunConfig(scenario="theorem", amplitude=amplitude, lambda0=(0.01,), M=(500,), L=(1e4,),
                     max_tau=100.0, record_every=100)


@pytest.fixture(scope="session")
def run_theorem(tmp_path_factory):
    return LongRun(theorem_config(0.01), tmp_path_factory.mktemp("run_theorem"))


@pytest.fixture(scope="session")
def run_theorem_profile(tmp_path_factory):
    return LongRun(theorem_config(0.0), tmp_path_factory.mktemp("run_theorem_profile"))
