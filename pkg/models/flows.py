# models/flows.py

"""Velocity fields for flow-matching samplers on t in [0, 1].

Time runs from noise (t=0, N(0, I)) to data (t=1). The conditional-OT path
x_t = (1 - t) z + t x1 has, for an isotropic Gaussian target N(mu, v I), the
marginal N(t mu, S I) with S = (1-t)^2 + t^2 v and the exact velocity
E[x1 - z | x_t] = mu + (t v - (1 - t)) / S * (x - t mu). A mixture target
weights these per-component fields by their responsibilities under p_t.
"""

import math
from typing import Protocol

import numpy as np
from scipy.special import logsumexp

from core_utils.numerics import Vec, check_same_dim
from models.priors import GmmPrior


class FlowModel(Protocol):
    dim: int

    def velocity(self, x: Vec, t: float) -> Vec: ...

    def velocity_vjp(self, x: Vec, t: float, cotangent: Vec) -> Vec: ...


class GmmFlow:
    def __init__(self, target: GmmPrior):
        self.target = target
        self.dim = target.dim

    def _components(self, x: Vec, t: float):
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"flow time must lie in [0, 1], got {t}")
        prior = self.target
        spread = (1.0 - t) ** 2 + t * t * prior.variances
        means_t = t * prior.means
        diff = np.asarray(x)[..., None, :] - means_t
        logits = (
            np.log(prior.weights)
            - 0.5 * prior.dim * np.log(2.0 * math.pi * spread)
            - 0.5 * np.sum(diff * diff, axis=-1) / spread
        )
        r = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
        gain = (t * prior.variances - (1.0 - t)) / spread
        v_k = prior.means + gain[:, None] * diff
        g_k = -diff / spread[:, None]
        return r, gain, v_k, g_k

    def velocity(self, x: Vec, t: float) -> Vec:
        r, _, v_k, _ = self._components(x, t)
        return np.einsum("...k,...kd->...d", r, v_k)

    def velocity_vjp(self, x: Vec, t: float, cotangent: Vec) -> Vec:
        """J^T c with J = sum_k r_k gain_k I + sum_k r_k v_k (g_k - g_bar)^T."""
        check_same_dim(x, cotangent, "state and cotangent")
        r, gain, v_k, g_k = self._components(x, t)
        g_bar = np.einsum("...k,...kd->...d", r, g_k)
        vc = np.einsum("...kd,...d->...k", v_k, cotangent)
        out = np.einsum("...k,k->...", r, gain)[..., None] * cotangent
        return out + np.einsum("...k,...kd->...d", r * vc, g_k - g_bar[..., None, :])
