"""Double-precision MLP with hand-written backprop, SGD/Adam and checkpoints.

Weights are stored input-major (``W[i]`` has shape ``(fan_in, fan_out)``) so a
batch ``X`` of shape ``(B, d_in)`` maps through ``X @ W + b``. Hidden layers
use ReLU; the output layer is linear.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError


@dataclass
class Mlp:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    @property
    def d_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def d_out(self) -> int:
        return self.layer_sizes[-1]


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


def init(layer_sizes: Sequence[int], seed: int) -> Mlp:
    """He-uniform weights (bound ``sqrt(6 / fan_in)``), zero biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ConfigError("layer_sizes: need at least an input and an output size")
    if any(s < 1 for s in sizes):
        raise ConfigError("layer_sizes: every size must be positive")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(sizes, weights, biases)


def _check_input(net: Mlp, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.d_in:
        raise ShapeError(f"input shape {x.shape} incompatible with d_in={net.d_in}")
    return x


def forward_cache(net: Mlp, x: np.ndarray) -> list[np.ndarray]:
    """Return ``[x, h1, ..., output]`` with post-activation hidden values."""
    h = _check_input(net, x)
    acts = [h]
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ W + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    return forward_cache(net, x)[-1]


def backward(net: Mlp, x: np.ndarray, upstream_grad: np.ndarray,
             cache: list[np.ndarray] | None = None) -> Gradients:
    """Gradient of ``sum(upstream_grad * forward(net, x))`` w.r.t. the parameters.

    Batched inputs sum their per-example contributions.
    """
    acts = cache if cache is not None else forward_cache(net, x)
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != acts[-1].shape:
        raise ShapeError(f"upstream gradient shape {g.shape} != output shape {acts[-1].shape}")
    batched = g.ndim == 2
    n = len(net.weights)
    dW: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    db: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for i in range(n - 1, -1, -1):
        a_in = acts[i]
        if batched:
            dW[i] = a_in.T @ g
            db[i] = g.sum(axis=0)
        else:
            dW[i] = np.outer(a_in, g)
            db[i] = g.copy()
        if i > 0:
            g = (g @ net.weights[i].T) * (acts[i] > 0)
    return Gradients(dW, db)


@dataclass
class OptimizerState:
    algorithm: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.algorithm not in ("sgd", "adam"):
            raise ConfigError(f"algorithm: expected 'sgd' or 'adam', got {self.algorithm!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate: must be > 0")


def apply_update(net: Mlp, grads: Gradients, opt: OptimizerState) -> None:
    """In-place parameter update. Non-finite gradients abort with no change."""
    params, gs = net.params, grads.params
    if len(params) != len(gs) or any(p.shape != g.shape for p, g in zip(params, gs)):
        raise ShapeError("gradients are not shape-congruent with the network")
    if not all(np.isfinite(g).all() for g in gs):
        raise NumericError("non-finite gradient; update aborted")

    opt.step += 1
    lr = opt.learning_rate
    if opt.algorithm == "sgd":
        for p, g in zip(params, gs):
            p -= lr * g
        return
    if not opt.m:
        opt.m = [np.zeros_like(p) for p in params]
        opt.v = [np.zeros_like(p) for p in params]
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1**opt.step
    c2 = 1.0 - b2**opt.step
    for p, g, m, v in zip(params, gs, opt.m, opt.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)


def clone(net: Mlp) -> Mlp:
    return Mlp(net.layer_sizes, [W.copy() for W in net.weights], [b.copy() for b in net.biases])


def copy_into(src: Mlp, dst: Mlp) -> None:
    if src.layer_sizes != dst.layer_sizes:
        raise ShapeError(f"layer sizes differ: {src.layer_sizes} vs {dst.layer_sizes}")
    for s, d in zip(src.params, dst.params):
        np.copyto(d, s)


# -- checkpoints -------------------------------------------------------------
#
# A checkpoint is an uncompressed .npz archive:
#   "meta"                 JSON string: {"networks": {name: layer_sizes},
#                          "optimizer": {...scalars...}, "step_count": int,
#                          "config": {...}}
#   "<net>.W<i>", "<net>.b<i>"   float64 parameters of each named network
#   "opt.m<j>", "opt.v<j>"       Adam moments, in Mlp.params order


def save_checkpoint(path, networks: dict[str, Mlp], opt: OptimizerState | None = None,
                    step_count: int = 0, config: dict | None = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    meta = {"networks": {}, "step_count": int(step_count), "config": config or {}}
    for name, net in networks.items():
        meta["networks"][name] = list(net.layer_sizes)
        for i, (W, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{name}.W{i}"] = W
            arrays[f"{name}.b{i}"] = b
    if opt is not None:
        meta["optimizer"] = {
            "algorithm": opt.algorithm, "learning_rate": opt.learning_rate,
            "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
            "step": opt.step, "n_moments": len(opt.m),
        }
        for j, (m, v) in enumerate(zip(opt.m, opt.v)):
            arrays[f"opt.m{j}"] = m
            arrays[f"opt.v{j}"] = v
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    # same layout as np.savez, but with fixed entry timestamps so identical
    # checkpoints are byte-identical files
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asanyarray(arr), allow_pickle=False)


def load_checkpoint(path) -> tuple[dict[str, Mlp], OptimizerState | None, int, dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        nets = {}
        for name, sizes in meta["networks"].items():
            n = len(sizes) - 1
            nets[name] = Mlp(
                tuple(sizes),
                [data[f"{name}.W{i}"].copy() for i in range(n)],
                [data[f"{name}.b{i}"].copy() for i in range(n)],
            )
        opt = None
        if "optimizer" in meta:
            o = dict(meta["optimizer"])
            k = o.pop("n_moments")
            opt = OptimizerState(**o)
            opt.m = [data[f"opt.m{j}"].copy() for j in range(k)]
            opt.v = [data[f"opt.v{j}"].copy() for j in range(k)]
    return nets, opt, meta["step_count"], meta["config"]
