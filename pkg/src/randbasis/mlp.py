"""One-hidden-layer sigmoid network ``sum_i c_i / (1 + exp(w_i . x + b_i))``.

Training is first-order: Adam steps on minibatches of inputs drawn uniformly
from the unit cube, with a cosine step-size decay and a revert-and-halve
safeguard when the monitored loss jumps. ``linear_only`` masks the hidden
parameters so only the output weights move.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np

from randbasis._backend import kernels
from randbasis.basis import RANDOM_BOX, SIGMOID, sample_params_batch, tabulate_params
from randbasis.grid import normalized_error, GridFunction

FULL = "full"
LINEAR_ONLY = "linear_only"
DIVERGENCE_LOSS = 1e6


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class MlpParams:
    w: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(np.atleast_2d(np.asarray(self.w, dtype=np.float64)))
        b = np.ascontiguousarray(np.asarray(self.b, dtype=np.float64).reshape(-1))
        c = np.ascontiguousarray(np.asarray(self.c, dtype=np.float64).reshape(-1))
        if not (w.shape[0] == b.shape[0] == c.shape[0]) or w.shape[0] < 1:
            raise ValueError("w, b and c must describe the same n >= 1 hidden units")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def n(self):
        return self.b.shape[0]

    @property
    def d(self):
        return self.w.shape[1]

    def flat(self):
        return np.concatenate([self.w.ravel(), self.b, self.c])

    @classmethod
    def from_flat(cls, vec, n, d):
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[: n * d].reshape(n, d), vec[n * d : n * d + n], vec[n * d + n :])


def _points(x, d):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, d) if d > 1 else x[:, None]
    if x.shape[1] != d:
        raise ValueError(f"inputs have dimension {x.shape[1]}, network expects {d}")
    return np.ascontiguousarray(x)


def mlp_eval(p, x):
    """Network output at a point or an array of points."""
    scalar = np.ndim(x) == 0 or (np.ndim(x) == 1 and p.d > 1 and len(x) == p.d)
    out = kernels.mlp_forward(_points(x, p.d), p.w, p.b, p.c)
    return float(out[0]) if scalar else out


def loss_and_grad(p, x, y, mode=FULL):
    """Mean squared error on (x, y) and its gradient as an MlpParams."""
    x = _points(x, p.d)
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64).reshape(-1))
    loss, gw, gb, gc = kernels.mlp_loss_grad(x, y, p.w, p.b, p.c)
    if mode == LINEAR_ONLY:
        gw = np.zeros_like(gw)
        gb = np.zeros_like(gb)
    return loss, MlpParams(gw, gb, gc)


def grad_check(p, x, y, step=1e-6, mode=FULL):
    """Largest relative gap between analytic and central-difference gradients.

    Entries are compared relative to ``max(|analytic|, |numeric|)`` with a
    floor at 1e-3 of the largest gradient entry, so tiny entries are judged
    on an absolute scale.
    """
    x = _points(x, p.d)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    _, g = loss_and_grad(p, x, y, mode)
    analytic = g.flat()
    theta = p.flat()
    numeric = np.zeros_like(theta)
    n, d = p.n, p.d
    trainable = np.ones_like(theta, dtype=bool)
    if mode == LINEAR_ONLY:
        trainable[: n * d + n] = False
    for i in np.flatnonzero(trainable):
        hi = theta.copy()
        lo = theta.copy()
        hi[i] += step
        lo[i] -= step
        l_hi = loss_and_grad(MlpParams.from_flat(hi, n, d), x, y)[0]
        l_lo = loss_and_grad(MlpParams.from_flat(lo, n, d), x, y)[0]
        numeric[i] = (l_hi - l_lo) / (2.0 * step)
    floor = max(1e-3 * float(np.max(np.abs(analytic), initial=0.0)), 1e-12)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


@dataclass(frozen=True)
class TrainConfig:
    mode: str = FULL
    max_epochs: int = 1000
    batch_size: int = 512
    sample_count: int = 512
    step_size: float = 0.3
    output_step_size: float = 0.003
    decay: str = "cosine"
    init: str = "pursuit"
    init_scale: float = 300.0
    init_candidates: int = 2000
    init_samples: int = 2000
    monitor_samples: int = 1024
    monitor_every: int = 25
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (FULL, LINEAR_ONLY):
            raise ValueError(f"mode must be {FULL!r} or {LINEAR_ONLY!r}")
        if self.max_epochs < 1 or self.batch_size < 1 or self.sample_count < 1:
            raise ValueError("max_epochs, batch_size and sample_count must be >= 1")
        if not (self.step_size > 0 and self.output_step_size > 0):
            raise ValueError("step sizes must be positive")
        if self.decay not in ("cosine", "none"):
            raise ValueError("decay must be 'cosine' or 'none'")
        if self.init not in ("pursuit", "uniform"):
            raise ValueError("init must be 'pursuit' or 'uniform'")

    def step_factor(self, epoch):
        """Multiplier on the base step sizes at ``epoch`` (0-based)."""
        if self.decay == "none":
            return 1.0
        return 0.5 * (1.0 + math.cos(math.pi * epoch / self.max_epochs))


def init_uniform(n, d, rng):
    """w, b uniform in [-1, 1] / sqrt(d); c = 0."""
    s = 1.0 / math.sqrt(d)
    return MlpParams(rng.uniform(-s, s, (n, d)), rng.uniform(-s, s, n), np.zeros(n))


def init_random_basis(n, rng, box=RANDOM_BOX):
    """Hidden units drawn from a parameter box; c = 0. Used for linear-only training."""
    w, b = sample_params_batch(box, rng, n)
    return MlpParams(w, b, np.zeros(n))


def init_pursuit(n, target, rng, d=1, scale=300.0, candidates=2000, samples=2000):
    """Pick n hidden units from random candidates by orthogonal matching pursuit.

    Candidates have w uniform in [-scale, scale]^d and a transition point t
    uniform in the unit cube (b = -w . t). Selection and the output weights
    use ``samples`` random inputs; no grid values are touched.
    """
    x = rng.uniform(0.0, 1.0, (samples, d))
    y = np.asarray(target(x), dtype=np.float64).reshape(-1)
    w = rng.uniform(-scale, scale, (candidates, d))
    t = rng.uniform(0.0, 1.0, (candidates, d))
    b = -np.sum(w * t, axis=1)
    S = kernels.tabulate_many(np.ascontiguousarray(w), np.ascontiguousarray(b), np.ascontiguousarray(x), 1).T
    norms = np.linalg.norm(S, axis=0)
    norms[norms == 0] = np.inf
    chosen = []
    resid = y.copy()
    c = np.zeros(0)
    for _ in range(min(n, candidates)):
        score = np.abs(S.T @ resid) / norms
        score[chosen] = -1.0
        chosen.append(int(np.argmax(score)))
        A = S[:, chosen]
        c = np.linalg.lstsq(A, y, rcond=None)[0]
        resid = y - A @ c
    return MlpParams(w[chosen], b[chosen], c)


def initial_params(n, target, cfg, rng, d=1):
    if cfg.mode == LINEAR_ONLY:
        return init_random_basis(n, rng)
    if cfg.init == "uniform":
        return init_uniform(n, d, rng)
    return init_pursuit(n, target, rng, d, cfg.init_scale, cfg.init_candidates, cfg.init_samples)


@dataclass
class TrainResult:
    params: MlpParams
    bar_e: float
    best_loss: float
    history: list = field(default_factory=list)
    reverts: int = 0


def train(p0, target, cfg, rng, grid=None):
    """Train from ``p0`` on inputs drawn uniformly from [0, 1]^d.

    ``target`` maps (m, d) points to values. The returned parameters are the
    best seen on a fixed monitor sample; ``bar_e`` is their normalised error
    on ``grid`` when a grid is given.
    """
    d = p0.d
    mask = np.ones(p0.n * d + 2 * p0.n)
    if cfg.mode == LINEAR_ONLY:
        mask[: p0.n * d + p0.n] = 0.0
    base = np.concatenate([
        np.full(p0.n * (d + 1), cfg.step_size),
        np.full(p0.n, cfg.output_step_size),
    ]) * mask
    xm = rng.uniform(0.0, 1.0, (cfg.monitor_samples, d))
    ym = np.asarray(target(xm), dtype=np.float64).reshape(-1)

    def monitor(p):
        return loss_and_grad(p, xm, ym)[0]

    theta = p0.flat()
    n = p0.n
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-8
    best = p0
    best_loss = monitor(p0)
    if not best_loss < DIVERGENCE_LOSS:
        raise TrainingDiverged(f"initial loss {best_loss:.3g} exceeds {DIVERGENCE_LOSS:g}")
    history = [best_loss]
    shrink = 1.0
    reverts = 0
    t = 0
    steps_per_epoch = max(1, cfg.sample_count // cfg.batch_size)
    for epoch in range(cfg.max_epochs):
        lr = base * (cfg.step_factor(epoch) * shrink)
        for _ in range(steps_per_epoch):
            x = rng.uniform(0.0, 1.0, (cfg.batch_size, d))
            y = np.asarray(target(x), dtype=np.float64).reshape(-1)
            p = MlpParams.from_flat(theta, n, d)
            _, g = loss_and_grad(p, x, y, cfg.mode)
            g = g.flat()
            t += 1
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta = theta - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        if (epoch + 1) % cfg.monitor_every == 0 or epoch + 1 == cfg.max_epochs:
            if not np.all(np.isfinite(theta)):
                raise TrainingDiverged(f"non-finite parameters at epoch {epoch + 1}")
            p = MlpParams.from_flat(theta, n, d)
            loss = monitor(p)
            history.append(loss)
            if not loss < DIVERGENCE_LOSS:
                raise TrainingDiverged(f"loss {loss:.3g} at epoch {epoch + 1}")
            if loss < best_loss:
                best, best_loss = p, loss
            elif loss > 2.0 * best_loss:
                # safeguard: fall back to the best iterate and halve the steps
                theta = best.flat()
                m[:] = 0.0
                v[:] = 0.0
                t = 0
                shrink *= 0.5
                reverts += 1
    if cfg.mode == LINEAR_ONLY:
        # hidden weights are untouched by construction; keep them bit-identical
        best = MlpParams(p0.w.copy(), p0.b.copy(), best.c)
    bar_e = float("nan")
    if grid is not None:
        bar_e = mlp_normalized_error(best, target, grid)
    return TrainResult(best, bar_e, best_loss, history, reverts)


def mlp_grid_function(p, grid):
    return GridFunction(grid, kernels.mlp_forward(grid.nodes, p.w, p.b, p.c))


def mlp_normalized_error(p, target, grid):
    f = GridFunction(grid, np.asarray(target(grid.nodes), dtype=np.float64).reshape(-1))
    return normalized_error(mlp_grid_function(p, grid), f)


def train_network(n, target, cfg, rng, grid, d=1):
    """Initialise according to ``cfg`` and train; returns a TrainResult."""
    p0 = initial_params(n, target, cfg, rng, d)
    return train(p0, target, cfg, rng, grid)


def unit_sigmoid_table(p, grid):
    """Tabulated hidden-unit outputs, shape (n, grid.size)."""
    return tabulate_params(SIGMOID, p.w, p.b, grid)


def linear_config(**kw):
    return replace(TrainConfig(mode=LINEAR_ONLY, output_step_size=0.01), **kw)
