from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from services.barrier import BarrierProblem
from services.geometry import Polytope, box_polytope
from services.problem import DeclaredConstants, quadratic_instance

CONFIG_DIR = Path(__file__).resolve().parent.parent / "resources" / "configs"

Q_G_5D = np.diag([1.0, 2.0, 1.5, 1.0, 1.2])
Q_F_5D = np.diag([1.0, 0.5, 1.0, 2.0, 1.0])
C_F_5D = np.array([0.3, 0.7, 0.15, 0.85, 0.5])


def random_polytope(rng: np.random.Generator, d: int, extra_cuts: int) -> Polytope:
    """Box [-1, 1]^d plus random cuts a.y <= b that keep the origin strictly inside."""
    cuts = rng.standard_normal((extra_cuts, d))
    offsets = rng.uniform(0.5, 1.5, size=extra_cuts) * np.linalg.norm(cuts, axis=1)
    eye = np.eye(d)
    A = np.vstack([eye, -eye, cuts])
    b = np.concatenate([np.ones(2 * d), offsets])
    return Polytope(A=A, b=b, interior_witness=np.zeros(d))


def random_interior_point(rng: np.random.Generator, P: Polytope, fraction: float = 0.5) -> np.ndarray:
    """A point `fraction` of the way from the witness to the boundary along a random direction."""
    direction = rng.standard_normal(P.d)
    direction /= np.linalg.norm(direction)
    rates = P.A @ direction
    slack = P.b - P.A @ P.interior_witness
    reach = float((slack[rates > 0] / rates[rates > 0]).min())
    return P.interior_witness + fraction * reach * direction


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def unit_interval_instance():
    """f = y^2/2, g = (y - x)^2/2 on [0, 1]."""
    P = box_polytope([0.0], [1.0])
    return quadratic_instance(
        Q_f=[[1.0]], c_f=[0.0], Q_g=[[1.0]], c_g_matrix=[[1.0]], c_g_offset=[0.0], polytope=P,
        declared=DeclaredConstants(l_g1=1.0, l_f0=1.0, l_f1=1.0, l_g0=1.0), name="interval",
    )


@pytest.fixture
def box5_instance():
    P = box_polytope(np.zeros(5), np.ones(5))
    return quadratic_instance(
        Q_f=Q_F_5D, c_f=C_F_5D, Q_g=Q_G_5D, c_g_matrix=np.eye(5), c_g_offset=np.zeros(5), polytope=P,
        declared=DeclaredConstants(l_g1=2.0, l_f0=2.2, l_f1=2.0, l_g0=3.2), name="box5",
    )


@pytest.fixture
def box5_problem(box5_instance):
    return BarrierProblem(box5_instance, 0.01)


@pytest.fixture
def quadratic5d_config_dict():
    return json.loads((CONFIG_DIR / "quadratic5d.json").read_text())
