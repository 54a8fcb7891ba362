import numpy as np
import pytest

from mskoopman.dictionary import build_dictionary
from mskoopman.dynamics import PlantSpec, SamplingSpec, generate_dataset

A_TRUE = np.array([[0.9, 0.1], [-0.2, 0.8]])
B_TRUE = np.array([[0.0], [0.1]])


def rk4_discretisation(A, B, h):
    """Exact one-step map of RK4 with zero-order hold on x' = A x + B u."""
    n = A.shape[0]
    hA = h * A
    I = np.eye(n)
    Phi = I + hA + hA @ hA / 2 + hA @ hA @ hA / 6 + hA @ hA @ hA @ hA / 24
    Gam = h * (I + hA / 2 + hA @ hA / 6 + hA @ hA @ hA / 24) @ B
    return Phi, Gam


def simulate_discrete(A, B, x0, U):
    """Roll out x+ = A x + B u for a batch; returns states (M, H+1, n)."""
    M, H, _ = U.shape
    X = np.empty((M, H + 1, A.shape[0]))
    X[:, 0] = x0
    for k in range(H):
        X[:, k + 1] = X[:, k] @ A.T + U[:, k] @ B.T
    return X


@pytest.fixture(scope="session")
def linear_dataset():
    """Noiseless data from the discrete system x+ = A_TRUE x + B_TRUE u."""
    from mskoopman.dynamics import TrajectoryDataset
    rng = np.random.default_rng(0)
    M, H = 60, 5
    x0 = rng.uniform(-1, 1, (M, 2))
    U = rng.choice([-1.0, 1.0], (M, H, 1))
    return TrajectoryDataset(simulate_discrete(A_TRUE, B_TRUE, x0, U), U)


@pytest.fixture(scope="session")
def raw_dictionary():
    """Raw state plus the constant observable."""
    return build_dictionary(2, "total", 0)


@pytest.fixture(scope="session")
def small_vdp():
    plant = PlantSpec.van_der_pol()
    box = ((-2.0, 2.0), (-2.0, 2.0))
    train = generate_dataset(plant, SamplingSpec(10, 0.01, 800, box, 0.5, 1))
    test = generate_dataset(plant, SamplingSpec(10, 0.01, 400, box, 0.5, 2))
    return plant, train, test, build_dictionary(2, "total", 4, scale_box=box)
