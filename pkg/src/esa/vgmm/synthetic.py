"""Two-dimensional clustering benchmarks.

Setting A is a well-specified three-component Gaussian mixture with
heterogeneous covariances; setting B draws two interleaved noisy
semicircles, which a Gaussian mixture can only approximate.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["SETTING_A", "gen_setting_a", "gen_setting_b", "rotation"]


def rotation(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


_R = rotation(math.pi / 3)

SETTING_A = {
    "weights": np.array([0.35, 0.5, 0.15]),
    "means": np.array([[-4.0, 0.0], [0.0, 0.0], [4.0, 0.0]]),
    "covs": np.array([
        [[2.0, 0.0], [0.0, 1.0]],
        _R @ np.diag([2.0, 0.2]) @ _R.T,
        0.15 * np.eye(2),
    ]),
}

SEMICIRCLE_NOISE_VAR = 0.15


def gen_setting_a(n: int, seed):
    rng = np.random.default_rng(seed)
    labels = rng.choice(3, size=n, p=SETTING_A["weights"])
    chol = np.linalg.cholesky(SETTING_A["covs"])
    z = rng.standard_normal((n, 2))
    X = SETTING_A["means"][labels] + np.einsum("nij,nj->ni", chol[labels], z)
    return X, labels


def semicircle_means(branch, phi):
    upper = np.column_stack([np.cos(phi), np.sin(phi)])
    lower = np.column_stack([0.8 - np.cos(phi), 0.5 - np.sin(phi)])
    return np.where(np.asarray(branch)[:, None] == 0, upper, lower)


def gen_setting_b(n: int, seed, noise_var: float = SEMICIRCLE_NOISE_VAR):
    """Two semicircles plus isotropic Gaussian noise of variance ``noise_var``."""
    if not noise_var >= 0:
        raise ValueError("noise_var must be >= 0")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    phi = rng.uniform(0.0, math.pi, size=n)
    noise = math.sqrt(noise_var) * rng.standard_normal((n, 2))
    return semicircle_means(labels, phi) + noise, labels
