"""Ridge basis functions g(w.x + b) and uniform sampling of their parameters."""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from randbasis._backend import kernels
from randbasis.grid import GridFunction

GAUSSIAN = "gaussian"
SIGMOID = "sigmoid"
KINDS = (GAUSSIAN, SIGMOID)
_KIND_CODE = {GAUSSIAN: 0, SIGMOID: 1}


def kind_code(kind):
    try:
        return _KIND_CODE[kind]
    except KeyError:
        raise ValueError(f"unknown basis kind {kind!r}; expected one of {KINDS}") from None


def activation(kind, s):
    """g(s): exp(-s^2) for gaussian, 1/(1 + e^s) for sigmoid."""
    s = np.asarray(s, dtype=np.float64)
    if kind == GAUSSIAN:
        return np.exp(-(s * s))
    if kind == SIGMOID:
        return expit(-s)
    raise ValueError(f"unknown basis kind {kind!r}")


@dataclass(frozen=True)
class BasisElement:
    kind: str
    w: tuple
    b: float

    def __post_init__(self):
        kind_code(self.kind)
        w = tuple(float(v) for v in np.atleast_1d(self.w))
        if not w:
            raise ValueError("w must have at least one component")
        b = float(self.b)
        if not (np.all(np.isfinite(w)) and np.isfinite(b)):
            raise ValueError("basis parameters must be finite")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)

    @property
    def d(self):
        return len(self.w)

    def __call__(self, x):
        return eval_basis(self, x)


def eval_basis(e, x):
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape[-1] != e.d:
        raise ValueError(f"point has dimension {x.shape[-1]}, element expects {e.d}")
    s = x @ np.asarray(e.w) + e.b
    out = activation(e.kind, s)
    return float(out) if out.ndim == 0 else out


def _check_dim(grid, d):
    if grid.d != d:
        raise ValueError(f"grid dimension {grid.d} does not match parameter dimension {d}")


def tabulate(e, grid):
    _check_dim(grid, e.d)
    w = np.asarray([e.w], dtype=np.float64)
    b = np.asarray([e.b], dtype=np.float64)
    return GridFunction(grid, kernels.tabulate_many(w, b, grid.nodes, kind_code(e.kind))[0])


def tabulate_params(kind, w, b, grid):
    """Rows ``g(w[k] . x + b[k])`` on the grid, shape (len(b), grid.size)."""
    w = np.ascontiguousarray(np.atleast_2d(w), dtype=np.float64)
    b = np.ascontiguousarray(np.atleast_1d(b), dtype=np.float64)
    _check_dim(grid, w.shape[1])
    return kernels.tabulate_many(w, b, grid.nodes, kind_code(kind))


def tabulate_pool(pool, grid):
    if not pool:
        return np.zeros((0, grid.size))
    kinds = {e.kind for e in pool}
    if len(kinds) != 1:
        raise ValueError("pool mixes basis kinds")
    w = np.array([e.w for e in pool], dtype=np.float64)
    b = np.array([e.b for e in pool], dtype=np.float64)
    return tabulate_params(kinds.pop(), w, b, grid)


@dataclass(frozen=True)
class ParameterBox:
    """Axis-aligned sampling box: w in [w_lo, w_hi] per coordinate, b in [b_lo, b_hi]."""

    w_lo: tuple
    w_hi: tuple
    b_lo: float
    b_hi: float

    def __post_init__(self):
        w_lo = tuple(float(v) for v in np.atleast_1d(self.w_lo))
        w_hi = tuple(float(v) for v in np.atleast_1d(self.w_hi))
        if len(w_lo) != len(w_hi):
            raise ValueError("w_lo and w_hi differ in length")
        if any(lo > hi for lo, hi in zip(w_lo, w_hi)) or self.b_lo > self.b_hi:
            raise ValueError("box lower bounds must not exceed upper bounds")
        object.__setattr__(self, "w_lo", w_lo)
        object.__setattr__(self, "w_hi", w_hi)
        object.__setattr__(self, "b_lo", float(self.b_lo))
        object.__setattr__(self, "b_hi", float(self.b_hi))

    @classmethod
    def uniform(cls, w_range, b_range, d=1):
        return cls((w_range[0],) * d, (w_range[1],) * d, b_range[0], b_range[1])

    @property
    def d(self):
        return len(self.w_lo)

    def contains(self, w, b):
        w = np.atleast_1d(w)
        return bool(
            np.all(w >= self.w_lo) and np.all(w <= self.w_hi) and self.b_lo <= b <= self.b_hi
        )

    def to_dict(self):
        return {"w_lo": list(self.w_lo), "w_hi": list(self.w_hi), "b_lo": self.b_lo, "b_hi": self.b_hi}

    @classmethod
    def from_dict(cls, data, d=1):
        if "w" in data:
            return cls.uniform(data["w"], data["b"], d=d)
        return cls(data["w_lo"], data["w_hi"], data["b_lo"], data["b_hi"])


# search box for the greedy selection and the wider box for the random basis
GREEDY_BOX = ParameterBox.uniform((0.0, 200.0), (-100.0, 0.0))
RANDOM_BOX = ParameterBox.uniform((0.0, 200.0), (-200.0, 200.0))


def sample_params_batch(box, rng, size):
    """Draw ``size`` independent uniform (w, b) pairs; w has shape (size, d)."""
    w = rng.uniform(box.w_lo, box.w_hi, size=(size, box.d))
    b = rng.uniform(box.b_lo, box.b_hi, size=size)
    return np.ascontiguousarray(w), b


def sample_params(box, rng):
    w, b = sample_params_batch(box, rng, 1)
    return w[0], float(b[0])


def sample_element(box, rng, kind=GAUSSIAN):
    w, b = sample_params(box, rng)
    return BasisElement(kind, w, b)
