import numpy as np
import pytest

from pmsfm.geometry import RigidTransform, random_rotation


def stable_rot_err_deg(ra: np.ndarray, rb: np.ndarray) -> float:
    """Geodesic distance in degrees via ||Ra - Rb||_F = 2*sqrt(2)*|sin(theta/2)|.

    Exact identity on SO(3); unlike the arccos form it resolves angles
    far below 1e-6 degrees, so exact-recovery tests can assert at 1e-8.
    """
    f = np.linalg.norm(ra - rb)
    return float(np.degrees(2.0 * np.arcsin(min(1.0, f / (2.0 * np.sqrt(2.0))))))


def random_rigid(rng: np.random.Generator, t_scale: float = 1.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.normal(size=3) * t_scale)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
