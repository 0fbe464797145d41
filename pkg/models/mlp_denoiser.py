# models/mlp_denoiser.py

"""A small trainable epsilon-prediction network.

Three dense layers with tanh activations. The network sees the state
concatenated with the scalar time embedding sqrt(1 - alpha_bar[t]).

Flat binary layout (little endian)::

    8 bytes   magic b"NDTMMLP\\x01"
    uint32    d       state dimension
    uint32    h       hidden width
    float64   W1 (d+1, h), b1 (h), W2 (h, h), b2 (h), W3 (h, d), b3 (d), row-major
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from core_utils.errors import InvalidDimensionError, TrainingDivergedError
from core_utils.numerics import Vec, adam_step, check_same_dim
from core_utils.schedule import NoiseSchedule
from models.priors import ScoreModel

logger = logging.getLogger(__name__)

MAGIC = b"NDTMMLP\x01"
PARAM_ORDER = ("W1", "b1", "W2", "b2", "W3", "b3")


def _param_shapes(dim: int, hidden: int) -> Dict[str, tuple]:
    return {
        "W1": (dim + 1, hidden),
        "b1": (hidden,),
        "W2": (hidden, hidden),
        "b2": (hidden,),
        "W3": (hidden, dim),
        "b3": (dim,),
    }


class MlpDenoiser(ScoreModel):
    def __init__(self, sched: NoiseSchedule, params: Dict[str, np.ndarray]):
        dim = params["b3"].shape[0]
        super().__init__(sched, dim)
        self.hidden = params["b1"].shape[0]
        for name, shape in _param_shapes(dim, self.hidden).items():
            if params[name].shape != shape:
                raise InvalidDimensionError(f"{name} has shape {params[name].shape}, expected {shape}")
            if not np.all(np.isfinite(params[name])):
                raise ValueError(f"{name} contains non-finite weights")
        self.params = {k: np.asarray(params[k], dtype=np.float64) for k in PARAM_ORDER}
        self.loss_history: List[float] = []

    @classmethod
    def initialize(cls, sched: NoiseSchedule, dim: int, hidden: int, rng: np.random.Generator) -> "MlpDenoiser":
        params = {}
        for name, shape in _param_shapes(dim, hidden).items():
            if name.startswith("W"):
                params[name] = rng.standard_normal(shape) / math.sqrt(shape[0])
            else:
                params[name] = np.zeros(shape)
        return cls(sched, params)

    def _embed(self, x: Vec, t) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        emb = np.sqrt(1.0 - self.sched.alpha_bar[np.asarray(t)])
        emb = np.broadcast_to(emb, x.shape[:-1])[..., None]
        return np.concatenate([x, emb], axis=-1)

    def _forward(self, inp: np.ndarray):
        p = self.params
        h1 = np.tanh(inp @ p["W1"] + p["b1"])
        h2 = np.tanh(h1 @ p["W2"] + p["b2"])
        return h2 @ p["W3"] + p["b3"], h1, h2

    def _backward_to_input(self, cot: np.ndarray, h1: np.ndarray, h2: np.ndarray) -> np.ndarray:
        p = self.params
        g_a2 = (cot @ p["W3"].T) * (1.0 - h2 * h2)
        g_a1 = (g_a2 @ p["W2"].T) * (1.0 - h1 * h1)
        return g_a1 @ p["W1"].T

    def epsilon(self, x: Vec, t: int) -> Vec:
        self._check(x)
        out, _, _ = self._forward(self._embed(x, t))
        return out

    def epsilon_vjp(self, x: Vec, t: int, cotangent: Vec) -> Vec:
        self._check(x)
        check_same_dim(x, cotangent, "state and cotangent")
        _, h1, h2 = self._forward(self._embed(x, t))
        return self._backward_to_input(np.asarray(cotangent), h1, h2)[..., : self.dim]

    def loss_and_grads(self, x_t: np.ndarray, t: np.ndarray, noise: np.ndarray):
        """Mean squared denoising error over a minibatch and its parameter gradients."""
        p = self.params
        inp = self._embed(x_t, t)
        out, h1, h2 = self._forward(inp)
        resid = out - noise
        batch = x_t.shape[0]
        loss = float(np.sum(resid * resid) / batch)

        g_out = 2.0 * resid / batch
        g_a2 = (g_out @ p["W3"].T) * (1.0 - h2 * h2)
        g_a1 = (g_a2 @ p["W2"].T) * (1.0 - h1 * h1)
        grads = {
            "W3": h2.T @ g_out,
            "b3": g_out.sum(axis=0),
            "W2": h1.T @ g_a2,
            "b2": g_a2.sum(axis=0),
            "W1": inp.T @ g_a1,
            "b1": g_a1.sum(axis=0),
        }
        return loss, grads

    def to_bytes(self) -> bytes:
        header = MAGIC + np.array([self.dim, self.hidden], dtype="<u4").tobytes()
        body = b"".join(self.params[k].astype("<f8").tobytes(order="C") for k in PARAM_ORDER)
        return header + body

    @classmethod
    def from_bytes(cls, blob: bytes, sched: NoiseSchedule) -> "MlpDenoiser":
        if blob[: len(MAGIC)] != MAGIC:
            raise ValueError("not an MLP denoiser file (bad magic bytes)")
        dim, hidden = (int(v) for v in np.frombuffer(blob, dtype="<u4", count=2, offset=len(MAGIC)))
        offset = len(MAGIC) + 8
        params = {}
        for name, shape in _param_shapes(dim, hidden).items():
            count = int(np.prod(shape))
            params[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
            offset += 8 * count
        if offset != len(blob):
            raise ValueError(f"MLP denoiser file has {len(blob) - offset} trailing bytes")
        return cls(sched, params)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: Union[str, Path], sched: NoiseSchedule) -> "MlpDenoiser":
        return cls.from_bytes(Path(path).read_bytes(), sched)


def train_mlp_denoiser(
    dataset: np.ndarray,
    sched: NoiseSchedule,
    epochs: int,
    lr: float,
    rng: np.random.Generator,
    hidden: int = 64,
    batch_size: int = 128,
    model: Optional[MlpDenoiser] = None,
) -> MlpDenoiser:
    """Denoising score matching by minibatch Adam.

    Each epoch reshuffles the dataset and draws fresh times and noise, so the
    objective is E||eps - eps_theta(sqrt(a) x0 + sqrt(1-a) eps, t)||^2.
    """
    data = np.atleast_2d(np.asarray(dataset, dtype=np.float64))
    if data.shape[0] == 0:
        raise ValueError("training dataset is empty")
    if model is None:
        model = MlpDenoiser.initialize(sched, data.shape[1], hidden, rng)
    elif model.dim != data.shape[1]:
        raise InvalidDimensionError(f"dataset dimension {data.shape[1]} != network dimension {model.dim}")

    states = {k: None for k in PARAM_ORDER}
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(data.shape[0])
        epoch_loss, n_batches = 0.0, 0
        for begin in range(0, data.shape[0], batch_size):
            x0 = data[order[begin : begin + batch_size]]
            t = rng.integers(1, sched.T + 1, size=x0.shape[0])
            noise = rng.standard_normal(x0.shape)
            a = sched.alpha_bar[t][:, None]
            x_t = np.sqrt(a) * x0 + np.sqrt(1.0 - a) * noise

            loss, grads = model.loss_and_grads(x_t, t, noise)
            if not math.isfinite(loss):
                logger.error(f"Denoiser training diverged at epoch {epoch}")
                raise TrainingDivergedError(f"training loss became {loss} at epoch {epoch}", epoch=epoch)
            step += 1
            for name in PARAM_ORDER:
                model.params[name], states[name] = adam_step(model.params[name], grads[name], states[name], lr, step)
            epoch_loss += loss
            n_batches += 1
        model.loss_history.append(epoch_loss / n_batches)
        if epoch % 50 == 0:
            logger.info(f"Epoch {epoch}: denoising loss {model.loss_history[-1]:.5f}")
    return model
