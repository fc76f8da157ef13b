"""Clear/blurred/concatenated patch dictionaries and the pursuit solvers.

Patch vectors are channel-major: ``[R(8x8), G(8x8), B(8x8)]`` with each plane
flattened row-major, so ``n = 3 * 64 = 192``.  The Bayer projection ``B`` keeps
the 64 samples a CFA patch actually records.

The pursuit objective is ``F(z) = ||y - P z||^2 + mu ||z||_1`` with
``P = B D_Psi``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .optics import BlurKernelSet
from .sensor import BOUNDARY_MODE, cfa_channel_map

log = logging.getLogger(__name__)

PATCH = 8
PATCH_AREA = PATCH * PATCH

# orthonormal luminance / opponent colour directions
_OPPONENT = np.array([
    [1.0, 1.0, 1.0],
    [1.0, 0.0, -1.0],
    [1.0, -2.0, 1.0],
])
_OPPONENT = _OPPONENT / np.linalg.norm(_OPPONENT, axis=1, keepdims=True)


class RankDeficientWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Dictionary:
    atoms: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.array(self.atoms, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] % 3:
            raise ValueError(f"atoms must be an (3*area) x k matrix, got {a.shape}")
        a.setflags(write=False)
        object.__setattr__(self, "atoms", a)

    @property
    def atom_dim(self) -> int:
        return self.atoms.shape[0]

    @property
    def atom_count(self) -> int:
        return self.atoms.shape[1]


def _odct_1d(n: int, a: int) -> np.ndarray:
    t = np.arange(n)[:, None]
    j = np.arange(a)[None, :]
    basis = np.cos(np.pi * j * (2 * t + 1) / (2 * a))
    basis[:, 1:] -= basis[:, 1:].mean(axis=0)
    return basis / np.linalg.norm(basis, axis=0)


def dct_dictionary(patch_side: int = PATCH, k: int = 192, color_basis: str = "opponent") -> Dictionary:
    """Separable (overcomplete) 2-D DCT atoms, one set per colour direction.

    ``k`` must be ``3 * a**2`` with ``a >= patch_side``.  With
    ``color_basis='opponent'`` each spatial atom is paired with the luminance
    and two opponent colour vectors; ``'rgb'`` keeps the channels separate.
    Atom 0 is the luminance (or red) DC atom.
    """
    if k % 3:
        raise ValueError(f"k={k} is not a multiple of 3")
    a = int(round(np.sqrt(k // 3)))
    if a * a * 3 != k or a < patch_side:
        raise ValueError(f"k={k} must equal 3*a^2 with a >= {patch_side}")
    if color_basis == "opponent":
        colors = _OPPONENT
    elif color_basis == "rgb":
        colors = np.eye(3)
    else:
        raise ValueError(f"unknown colour basis {color_basis!r}")
    d1 = _odct_1d(patch_side, a)
    spatial = np.kron(d1, d1)  # (area, a*a), row-major pixel order
    blocks = [np.kron(col[:, None], spatial) for col in colors]
    atoms = np.hstack(blocks)
    atoms /= np.linalg.norm(atoms, axis=0)
    return Dictionary(atoms)


def blur_operator_matrix(kernel: np.ndarray, patch_side: int = PATCH) -> np.ndarray:
    """Matrix of convolution with ``kernel`` on an isolated patch, symmetric boundary."""
    n = patch_side * patch_side
    h = np.empty((n, n))
    e = np.zeros((patch_side, patch_side))
    for i in range(n):
        e.flat[i] = 1.0
        h[:, i] = ndimage.convolve(e, kernel, mode=BOUNDARY_MODE).ravel()
        e.flat[i] = 0.0
    return h


def channel_blur_matrix(kernels: BlurKernelSet, psi_index: int, patch_side: int = PATCH) -> np.ndarray:
    """Block-diagonal H_psi acting on a channel-major RGB patch vector."""
    n = patch_side * patch_side
    h = np.zeros((3 * n, 3 * n))
    for c in range(3):
        h[c * n:(c + 1) * n, c * n:(c + 1) * n] = blur_operator_matrix(kernels.kernels[c, psi_index], patch_side)
    return h


def bayer_projection(pattern: str = "RGGB", lattice_phase: tuple[int, int] = (0, 0),
                     patch_side: int = PATCH) -> np.ndarray:
    """Selection matrix mapping an RGB patch vector to its CFA samples."""
    n = patch_side * patch_side
    cmap = cfa_channel_map(pattern, patch_side, patch_side, lattice_phase).ravel()
    b = np.zeros((n, 3 * n))
    b[np.arange(n), cmap * n + np.arange(n)] = 1.0
    return b


@dataclass(frozen=True)
class ConcatDictionary:
    clear: Dictionary
    psi_grid: tuple[float, ...]
    blocks: tuple[np.ndarray, ...] = field(repr=False)
    bayer: np.ndarray = field(repr=False)
    pattern: str = "RGGB"
    lattice_phase: tuple[int, int] = (0, 0)

    def __post_init__(self):
        n = self.clear.atom_dim
        k = self.clear.atom_count
        blocks = []
        for b in self.blocks:
            b = np.array(b, dtype=np.float64)
            if b.shape != (n, k):
                raise ValueError(f"blurred block has shape {b.shape}, expected {(n, k)}")
            b.setflags(write=False)
            blocks.append(b)
        if len(blocks) != len(self.psi_grid) or not blocks:
            raise ValueError("need one blurred block per psi value")
        object.__setattr__(self, "blocks", tuple(blocks))
        object.__setattr__(self, "psi_grid", tuple(float(p) for p in self.psi_grid))
        concat = np.hstack(blocks)
        concat.setflags(write=False)
        object.__setattr__(self, "concat", concat)
        bayer = np.array(self.bayer, dtype=np.float64)
        bayer.setflags(write=False)
        object.__setattr__(self, "bayer", bayer)
        projected = bayer @ concat
        projected.setflags(write=False)
        object.__setattr__(self, "projected", projected)

    @property
    def q(self) -> int:
        return len(self.blocks)

    @property
    def k(self) -> int:
        return self.clear.atom_count

    @property
    def synthesis(self) -> np.ndarray:
        """Clear dictionary repeated q times: (D, ..., D)."""
        return np.tile(self.clear.atoms, (1, self.q))

    def block_slice(self, j: int) -> slice:
        return slice(j * self.k, (j + 1) * self.k)

    def sub(self, indices: Sequence[int]) -> "ConcatDictionary":
        idx = list(indices)
        return ConcatDictionary(self.clear, tuple(self.psi_grid[i] for i in idx),
                                tuple(self.blocks[i] for i in idx), self.bayer,
                                self.pattern, self.lattice_phase)


def build_concat_dictionary(d: Dictionary, kernels: BlurKernelSet, pattern: str = "RGGB",
                            lattice_phase: tuple[int, int] = (0, 0)) -> ConcatDictionary:
    if len(kernels) == 0:
        raise ValueError("kernel grid is empty")
    side = int(round(np.sqrt(d.atom_dim // 3)))
    order = np.argsort(kernels.psi_grid, kind="stable")
    blocks = tuple(channel_blur_matrix(kernels, int(j), side) @ d.atoms for j in order)
    psi = tuple(kernels.psi_grid[int(j)] for j in order)
    return ConcatDictionary(d, psi, blocks, bayer_projection(pattern, lattice_phase, side),
                            pattern, tuple(lattice_phase))


def lipschitz_upper(p: np.ndarray, rtol: float = 1e-6, max_iter: int = 10000) -> float:
    """(1 + 1e-3) times the largest eigenvalue of P^T P, by power iteration.

    The iteration runs on whichever of P P^T / P^T P is smaller.
    """
    p = np.asarray(p, dtype=np.float64)
    if not np.any(p):
        raise ValueError("cannot bound the spectrum of a zero matrix")
    g = p @ p.T if p.shape[0] <= p.shape[1] else p.T @ p
    v = np.random.default_rng(0).standard_normal(g.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = g @ v
        lam_new = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            break
        v = w / norm
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    return (1.0 + 1e-3) * lam


def soft_threshold(x, theta):
    """sign(x) * max(|x| - theta, 0), elementwise."""
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(theta < 0):
        raise ValueError("threshold must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - theta, 0.0)


@dataclass
class SolverConfig:
    """``theta`` defaults to mu / (2 L), the shrinkage matching the objective's scaling."""

    mu: float = 0.002
    L: float | None = None
    theta: float | np.ndarray | None = None
    iterations: int = 100
    tolerance: float = 0.0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.L is not None and self.L <= 0:
            raise ValueError("L must be positive")

    def resolved(self, p: np.ndarray) -> "SolverConfig":
        L = self.L if self.L is not None else lipschitz_upper(p)
        theta = self.theta if self.theta is not None else self.mu / (2.0 * L)
        return SolverConfig(self.mu, L, theta, self.iterations, self.tolerance)


def _as_matrix(dictionary) -> np.ndarray:
    if isinstance(dictionary, ConcatDictionary):
        return dictionary.projected
    return np.asarray(dictionary, dtype=np.float64)


def objective(y: np.ndarray, p: np.ndarray, z: np.ndarray, mu: float) -> float:
    r = y - p @ z
    return float(r @ r + mu * np.abs(z).sum())


def ista(y, dictionary, cfg: SolverConfig) -> tuple[np.ndarray, list[float]]:
    """Iterative shrinkage in the b-form of the unrolled network.

    z_{t+1} = soft(b_t, theta);  b_{t+1} = b_t + S (z_{t+1} - z_t), with
    b_1 = P^T y / L and S = I - P^T P / L.  Runs ``cfg.iterations`` shrinkage
    steps (fewer if successive iterates move less than ``cfg.tolerance``) and
    returns the last z with the objective value after every step.
    """
    p = _as_matrix(dictionary)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (p.shape[0],):
        raise ValueError(f"y has shape {y.shape}, expected ({p.shape[0]},)")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite values")
    cfg = cfg.resolved(p)
    s = np.eye(p.shape[1]) - (p.T @ p) / cfg.L
    b = p.T @ y / cfg.L
    z = np.zeros(p.shape[1])
    trace = []
    for _ in range(cfg.iterations):
        z_new = soft_threshold(b, cfg.theta)
        b = b + s @ (z_new - z)
        step = np.max(np.abs(z_new - z), initial=0.0)
        z = z_new
        trace.append(objective(y, p, z, cfg.mu))
        if cfg.tolerance > 0 and step < cfg.tolerance:
            break
    return z, trace


def ista_batch(y: np.ndarray, dictionary, cfg: SolverConfig) -> np.ndarray:
    """Fixed-iteration ISTA on many measurement vectors (rows of ``y``) at once."""
    p = _as_matrix(dictionary)
    cfg = cfg.resolved(p)
    s = np.eye(p.shape[1]) - (p.T @ p) / cfg.L
    b = np.asarray(y, dtype=np.float64) @ p / cfg.L
    z = np.zeros_like(b)
    for _ in range(cfg.iterations):
        z_new = soft_threshold(b, cfg.theta)
        b = b + (z_new - z) @ s
        z = z_new
    return z


def omp(y, dictionary, max_atoms: int, residual_tol: float = 1e-10) -> np.ndarray:
    """Orthogonal matching pursuit on the columns of P.

    Atoms are ranked by |p_i^T r| / ||p_i||.  An atom that would make the
    selected set rank deficient is dropped (with a ``RankDeficientWarning``)
    and the search continues.
    """
    if max_atoms < 1:
        raise ValueError("max_atoms must be >= 1")
    p = _as_matrix(dictionary)
    y = np.asarray(y, dtype=np.float64)
    norms = np.linalg.norm(p, axis=0)
    usable = norms > 1e-12
    inv_norms = np.where(usable, 1.0 / np.where(usable, norms, 1.0), 0.0)
    z = np.zeros(p.shape[1])
    support: list[int] = []
    banned = ~usable
    residual = y.copy()
    coef = np.zeros(0)
    y_norm = np.linalg.norm(y)
    while len(support) < max_atoms and np.linalg.norm(residual) > residual_tol * max(y_norm, 1.0):
        corr = np.abs(p.T @ residual) * inv_norms
        corr[banned] = -1.0
        corr[support] = -1.0
        i = int(np.argmax(corr))
        if corr[i] <= 0:
            break
        trial = support + [i]
        sub = p[:, trial]
        if np.linalg.matrix_rank(sub) < len(trial):
            warnings.warn(f"atom {i} makes the selected set rank deficient; dropped", RankDeficientWarning)
            banned[i] = True
            continue
        coef, *_ = np.linalg.lstsq(sub, y, rcond=None)
        support = trial
        residual = y - sub @ coef
    if support:
        z[support] = coef
    return z


def reconstruct_patch(z: np.ndarray, dictionary: ConcatDictionary) -> np.ndarray:
    """x = sum_j D z_j over the q coefficient blocks."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != dictionary.q * dictionary.k:
        raise ValueError(f"coefficient vector has {z.shape[-1]} entries, expected {dictionary.q * dictionary.k}")
    summed = z.reshape(z.shape[:-1] + (dictionary.q, dictionary.k)).sum(axis=-2)
    return summed @ dictionary.clear.atoms.T


def dominant_block(z: np.ndarray, dictionary: ConcatDictionary) -> int:
    mass = np.abs(z).reshape(dictionary.q, dictionary.k).sum(axis=1)
    return int(np.argmax(mass))


def select_mu(ys: np.ndarray, xs: np.ndarray, dictionary: ConcatDictionary,
              grid: Sequence[float] | None = None, iterations: int = 200) -> float:
    """Pick mu from a log grid by patch reconstruction error on a held-out set."""
    grid = np.logspace(-4, -1, 7) if grid is None else np.asarray(grid)
    best, best_err = float(grid[0]), np.inf
    for mu in grid:
        z = ista_batch(ys, dictionary, SolverConfig(mu=float(mu), iterations=iterations))
        err = float(np.mean((reconstruct_patch(z, dictionary) - xs) ** 2))
        log.debug("mu=%g mse=%g", mu, err)
        if err < best_err:
            best, best_err = float(mu), err
    return best
