"""Shared fixtures for the test suite."""

import numpy as np
import pytest

from bramp.dynamics import SystemModel, cartpole_model, first_order_model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cartpole():
    return cartpole_model()


@pytest.fixture
def first_order():
    return first_order_model()


@pytest.fixture
def decay_model():
    """dx/dt = -x with a known closed-form solution; ignores u and theta."""

    def drift(state, u, theta):
        return -np.asarray(state, dtype=float)

    return SystemModel(
        name="decay",
        drift=drift,
        dt=0.05,
        noise_std=np.array([0.1]),
        param_box=np.array([[0.0, 1.0]]),
    )
