"""ISTA unrolled into a feed-forward chain of calculator stages.

Every stage computes

    out = b_in + A (soft(x, theta) - z_prev - c)

with the wiring

    I:  x = y (raw patch), b_in = 0, z_prev = 0, theta = 0 at init
    M:  x = b_t,  b_in = b_t,  z_prev = shrunk input of the previous M stage
    F:  x = b_{T-1}, b_in = 0, z_prev = 0

so I -> (T-2) x M -> F reproduces ISTA's z_{t+1} = soft(b_t),
b_{t+1} = b_t + S (z_{t+1} - z_t) and returns D z_T.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .pipeline import ycbcr422_matrix
from .sparse import ConcatDictionary, SolverConfig, soft_threshold

log = logging.getLogger(__name__)

OUTPUT_SPACES = ("RGB192", "YCBCR422_128")


class InvalidStateError(RuntimeError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Stage:
    kind: str
    A: np.ndarray
    theta: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if self.kind not in ("I", "M", "F"):
            raise ValueError(f"unknown stage kind {self.kind!r}")
        self.A = np.array(self.A, dtype=np.float64)
        n_in = self.A.shape[1]
        self.theta = np.broadcast_to(np.asarray(self.theta, dtype=np.float64), (n_in,)).copy()
        self.c = np.broadcast_to(np.asarray(self.c, dtype=np.float64), (n_in,)).copy()
        if np.any(self.theta < 0):
            raise ValueError("thresholds must be non-negative")

    @property
    def in_dim(self) -> int:
        return self.A.shape[1]

    @property
    def out_dim(self) -> int:
        return self.A.shape[0]


@dataclass
class NetworkParams:
    layers: list[Stage]
    output_space: str = "RGB192"
    revision: int = 0

    def __post_init__(self):
        if self.output_space not in OUTPUT_SPACES:
            raise ValueError(f"unknown output space {self.output_space!r}")
        kinds = "".join(s.kind for s in self.layers)
        if len(kinds) < 3 or kinds[0] != "I" or kinds[-1] != "F" or set(kinds[1:-1]) != {"M"}:
            raise ValueError(f"layers must be I, M..., F; got {kinds}")
        m = self.layers[0].out_dim
        for s in self.layers[1:-1]:
            if s.A.shape != (m, m):
                raise ValueError(f"M stage has shape {s.A.shape}, expected {(m, m)}")
        if self.layers[-1].in_dim != m:
            raise ValueError("F stage input does not match the coefficient width")
        expected_out = 192 if self.output_space == "RGB192" else 128
        if self.layers[-1].out_dim != expected_out:
            raise ValueError(f"F stage produces {self.layers[-1].out_dim} values, {self.output_space} needs {expected_out}")

    @property
    def T(self) -> int:
        return len(self.layers)

    @property
    def m(self) -> int:
        return self.layers[0].out_dim

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def copy(self) -> "NetworkParams":
        return copy.deepcopy(self)

    def target(self, x_rgb: np.ndarray) -> np.ndarray:
        """Map channel-major RGB targets into this network's output space."""
        x_rgb = np.asarray(x_rgb, dtype=np.float64)
        if self.output_space == "RGB192":
            return x_rgb
        return x_rgb @ ycbcr422_matrix().T


@dataclass
class Intermediates:
    params: NetworkParams
    revision: int
    inputs: list[np.ndarray]       # x seen by each stage (pre-activations b_t)
    shrunk: list[np.ndarray]       # soft(x, theta)
    mac_inputs: list[np.ndarray]   # vector fed to the matrix
    output: np.ndarray


def init_from_ista(dictionary: ConcatDictionary, cfg: SolverConfig, T: int,
                   output_space: str = "RGB192", m: int | None = None,
                   init: str | int = "block") -> NetworkParams:
    """Build I/M/F stages from ISTA on the projected dictionary.

    With ``m = q k`` (default) the network is ISTA itself.  With a smaller
    ``m`` the coefficient space is compressed: ``init`` is a block index
    (``"block"`` means the last, most defocused, block; requires m = k) or
    ``"pca"`` (leading right singular vectors of [P; D_Psi-synthesis]).
    """
    if T < 3:
        raise ValueError("T must be >= 3")
    if output_space not in OUTPUT_SPACES:
        raise ValueError(f"unknown output space {output_space!r}")
    p = dictionary.projected
    synth = dictionary.synthesis
    full = dictionary.q * dictionary.k
    if m is None or m == full:
        pass
    elif init == "pca":
        _, _, vt = np.linalg.svd(np.vstack([p, synth]), full_matrices=False)
        if m > vt.shape[0]:
            raise ValueError(f"m={m} exceeds the rank bound {vt.shape[0]} of the PCA initialisation")
        v = vt[:m].T
        p, synth = p @ v, synth @ v
    else:
        if m != dictionary.k:
            raise ValueError(f"block initialisation needs m = k = {dictionary.k}, got {m}")
        j = dictionary.q - 1 if init == "block" else int(init)
        if not 0 <= j < dictionary.q:
            raise ValueError(f"block index {j} out of range")
        sl = dictionary.block_slice(j)
        p, synth = p[:, sl], dictionary.clear.atoms
    cfg = cfg.resolved(p)
    width = p.shape[1]
    theta = np.broadcast_to(np.asarray(cfg.theta, dtype=np.float64), (width,))
    s = np.eye(width) - (p.T @ p) / cfg.L
    final = synth if output_space == "RGB192" else ycbcr422_matrix() @ synth
    layers = [Stage("I", p.T / cfg.L, 0.0, 0.0)]
    layers += [Stage("M", s, theta, 0.0) for _ in range(T - 2)]
    layers.append(Stage("F", final, theta, 0.0))
    return NetworkParams(layers, output_space)


def forward(params: NetworkParams, y: np.ndarray) -> tuple[np.ndarray, Intermediates]:
    """Run the chain on one patch (64,) or a batch (N, 64)."""
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    x = y[None, :] if single else y
    if x.shape[1] != params.in_dim:
        raise ValueError(f"input has {x.shape[1]} samples, network expects {params.in_dim}")
    inputs, shrunk, macs = [], [], []
    prev_u = None
    for st in params.layers:
        u = soft_threshold(x, st.theta)
        v = u - st.c
        if st.kind == "M" and prev_u is not None:
            v = v - prev_u
        out = v @ st.A.T
        if st.kind == "M":
            out = out + x
        inputs.append(x)
        shrunk.append(u)
        macs.append(v)
        prev_u = u if st.kind == "M" else None
        x = out
    inter = Intermediates(params, params.revision, inputs, shrunk, macs, x)
    return (x[0] if single else x), inter


def loss_mse(x_hat: np.ndarray, x_star: np.ndarray) -> float:
    """Mean over rows of 0.5 ||x* - x_hat||^2 (a single vector counts as one row)."""
    x_hat = np.atleast_2d(np.asarray(x_hat, dtype=np.float64))
    x_star = np.atleast_2d(np.asarray(x_star, dtype=np.float64))
    if x_hat.shape != x_star.shape:
        raise ValueError(f"shape mismatch {x_hat.shape} vs {x_star.shape}")
    d = x_star - x_hat
    return float(0.5 * np.einsum("ij,ij->i", d, d).mean())


@dataclass
class Gradients:
    dA: list[np.ndarray]
    dtheta: list[np.ndarray]
    dc: list[np.ndarray]


def backward(params: NetworkParams, inter: Intermediates, x_star: np.ndarray) -> Gradients:
    """Exact gradients of ``loss_mse(forward(params, y), x_star)``.

    ``x_star`` is in the network's output space.  The shrinkage derivative is
    taken as 0 at |x| = theta.
    """
    if inter.params is not params or inter.revision != params.revision:
        raise InvalidStateError("intermediates were produced by a different parameter state")
    out = inter.output
    target = np.atleast_2d(np.asarray(x_star, dtype=np.float64))
    if target.shape != out.shape:
        raise ValueError(f"target shape {target.shape} does not match output {out.shape}")
    n = out.shape[0]
    g = (out - target) / n
    layers = params.layers
    dA: list = [None] * len(layers)
    dth: list = [None] * len(layers)
    dc: list = [None] * len(layers)
    g_u_next = 0.0
    for i in range(len(layers) - 1, -1, -1):
        st = layers[i]
        x, v = inter.inputs[i], inter.mac_inputs[i]
        g_v = g @ st.A
        dA[i] = g.T @ v
        dc[i] = -g_v.sum(axis=0)
        g_u = g_v + g_u_next
        feeds_back = st.kind == "M" and i > 0 and layers[i - 1].kind == "M"
        g_u_next = -g_v if feeds_back else 0.0
        active = np.abs(x) > st.theta
        g_u = g_u * active
        dth[i] = -(np.sign(x) * g_u).sum(axis=0)
        g_x = g_u
        if st.kind == "M":
            g_x = g_x + g
        g = g_x
    return Gradients(dA, dth, dc)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    dataset_path: str | None = None
    validation_fraction: float = 0.1
    train_thresholds: bool = True
    train_offsets: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class TrainResult:
    params: NetworkParams
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0


def batched_loss(params: NetworkParams, ys: np.ndarray, targets: np.ndarray, chunk: int = 4096) -> float:
    total = 0.0
    for s in range(0, len(ys), chunk):
        out, _ = forward(params, ys[s:s + chunk])
        total += loss_mse(out, targets[s:s + chunk]) * len(out)
    return total / max(len(ys), 1)


def sgd_step(params: NetworkParams, grads: Gradients, lr: float, cfg: TrainConfig) -> None:
    for st, ga, gt, gc in zip(params.layers, grads.dA, grads.dtheta, grads.dc):
        st.A -= lr * ga
        if cfg.train_thresholds and st.kind != "I":
            st.theta = np.maximum(st.theta - lr * gt, 0.0)
        if cfg.train_offsets:
            st.c -= lr * gc
    params.revision += 1


def sgd_train(params: NetworkParams, ys: np.ndarray, xs: np.ndarray, cfg: TrainConfig,
              val: tuple[np.ndarray, np.ndarray] | None = None) -> TrainResult:
    """Shuffled minibatch SGD on 0.5 ||x* - x_hat||^2.

    ``xs`` are RGB targets (converted to the output space here).  Without an
    explicit ``val`` pair, ``cfg.validation_fraction`` of the data is held out.
    The returned parameters are the best seen on validation, so they never do
    worse than the initialisation.
    """
    ys = np.asarray(ys, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    if len(ys) == 0 or len(ys) != len(xs):
        raise ValueError("training set must be non-empty with matching inputs and targets")
    rng = np.random.default_rng(cfg.seed)
    targets = params.target(xs)
    if val is None and cfg.validation_fraction > 0 and len(ys) >= 10:
        order = rng.permutation(len(ys))
        n_val = max(1, int(round(cfg.validation_fraction * len(ys))))
        val = (ys[order[:n_val]], xs[order[:n_val]])
        ys, targets = ys[order[n_val:]], targets[order[n_val:]]
    if val is None:
        val_y, val_t = ys, targets
    else:
        val_y, val_t = np.asarray(val[0], dtype=np.float64), params.target(val[1])

    work = params.copy()
    best = params.copy()
    best_val = batched_loss(work, val_y, val_t)
    init_train = batched_loss(work, ys, targets)
    result = TrainResult(best, [init_train], [best_val], 0)
    log.info("epoch 0: train %.6g val %.6g", init_train, best_val)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(ys))
        total = 0.0
        for s in range(0, len(ys), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            out, inter = forward(work, ys[idx])
            total += loss_mse(out, targets[idx]) * len(idx)
            if cfg.learning_rate > 0:
                sgd_step(work, backward(work, inter, targets[idx]), cfg.learning_rate, cfg)
        train_loss = total / len(ys)
        if not np.isfinite(train_loss) or train_loss > 10.0 * init_train:
            raise TrainingDiverged(f"epoch {epoch}: training loss {train_loss:.4g} exceeds 10x the initial {init_train:.4g}")
        val_loss = batched_loss(work, val_y, val_t)
        result.train_loss.append(train_loss)
        result.val_loss.append(val_loss)
        log.info("epoch %d: train %.6g val %.6g", epoch, train_loss, val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best = work.copy()
            result.best_epoch = epoch
    result.params = best if cfg.learning_rate > 0 else params
    return result
