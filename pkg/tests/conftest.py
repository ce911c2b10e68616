from pathlib import Path

import numpy as np
import pytest

from platoonstab.model import ControllerSpec, PlantSpec, ScenarioConfig
from platoonstab.rational import RationalFunction
from platoonstab.stability import check_closed_loop

FIXTURES = Path(__file__).parent / "fixtures"


def pi(kp, ki, label):
    return ControllerSpec(RationalFunction([ki, kp], [0.0, 1.0]), label)


def lag_plant(tau):
    return PlantSpec(RationalFunction([1.0], [0.0, 1.0, tau]))


def random_stable_config(rng, **overrides):
    """PI loops on an integrator-plus-lag plant with both closed loops stable."""
    while True:
        cfg = ScenarioConfig(
            v0=float(rng.uniform(10, 30)),
            p=float(rng.uniform(0.05, 0.5)),
            T=float(rng.uniform(0.5, 3.0)),
            r=float(rng.uniform(5, 20)),
            plant=lag_plant(float(rng.uniform(0.2, 1.0))),
            leader_controller=pi(float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.2, 1.5)), "leader"),
            predecessor_controller=pi(float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.2, 1.5)), "predecessor"),
            **overrides,
        )
        if check_closed_loop(cfg).stable:
            return cfg


def rhp_points(rng, count=20, re=(0.05, 3.0), im=(-4.0, 4.0)):
    return rng.uniform(*re, count) + 1j * rng.uniform(*im, count)


@pytest.fixture
def default_config():
    return ScenarioConfig()


@pytest.fixture
def fixtures_dir():
    return FIXTURES
