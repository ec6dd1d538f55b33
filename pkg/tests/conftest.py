"""Shared fixtures and test helpers."""
from __future__ import annotations

import numpy as np
import pytest

from gatedpf.ctm import DemandProfile, DemandSchedule, FreewayNetwork, LinkParams
from gatedpf.particles import MeasurementDensity, ParticleEnsemble


class StubDensity(MeasurementDensity):
    """Density returning preset per-particle values, ignoring the measurement."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def log_density(self, value, states):
        with np.errstate(divide="ignore"):
            return np.log(self.values)


class GaussianStateDensity(MeasurementDensity):
    """Gaussian around one state component, fixed scale."""

    def __init__(self, index: int = 0, std: float = 1.0):
        self.index = index
        self.std = std

    def log_density(self, value, states):
        z = (value - np.atleast_2d(states)[:, self.index]) / self.std
        return -0.5 * z * z - np.log(self.std) - 0.5 * np.log(2 * np.pi)

    def predict(self, states):
        mean = np.atleast_2d(states)[:, self.index]
        return mean, np.full_like(mean, self.std)


def ensemble_from(states, weights=None) -> ParticleEnsemble:
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] == 1 and states.shape[1] > 1 and weights is not None:
        states = states.T
    return ParticleEnsemble.from_states(states, weights)


def scalar_ensemble(values, weights=None) -> ParticleEnsemble:
    """Ensemble of one-dimensional states from a list of scalars."""
    states = np.asarray(values, dtype=float)[:, None]
    return ParticleEnsemble.from_states(states, weights)


@pytest.fixture
def single_link_network() -> FreewayNetwork:
    return FreewayNetwork(
        links=(LinkParams(length=100.0, vf=10.0, w=5.0, qmax=1.0, rho_jam=0.125),),
        dt=10.0,
    )


def small_network(n_links: int = 3, qmax: float = 4.0, **overrides) -> FreewayNetwork:
    links = tuple(
        LinkParams(
            length=500.0,
            vf=20.0,
            w=5.0,
            qmax=overrides.get(f"qmax_{i}", qmax),
            rho_jam=0.125,
            onramp=i in overrides.get("onramps", ()),
            offramp=i in overrides.get("offramps", ()),
            beta=overrides.get("beta", 0.1) if i in overrides.get("offramps", ()) else 0.0,
        )
        for i in range(n_links)
    )
    return FreewayNetwork(links=links, dt=10.0, onramp_priority=overrides.get("priority", 0.5))


def flat_schedule(level: float, n_onramps: int = 0, noise: float = 0.0) -> DemandSchedule:
    profile = DemandProfile(base=level, peak=level, rise=(0.0, 0.0), fall=(1e9, 1e9), noise_frac=noise)
    ramp = DemandProfile(base=0.0, peak=0.0, rise=(0.0, 0.0), fall=(1e9, 1e9), noise_frac=0.0)
    return DemandSchedule(dt=10.0, upstream=profile, onramps=(ramp,) * n_onramps)
