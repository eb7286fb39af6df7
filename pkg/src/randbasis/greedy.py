"""Jones/Barron greedy approximation over a ridge-function dictionary.

The approximant is built by convex updates ``f_{n+1} = (1 - a_n) f_n + a_n g_n``
with ``a_n = e_n^2 / (M''^2 + e_n^2)``. Each ``g_n`` is found by random search:
the first sampled element whose inner-product condition value falls below the
step threshold is taken.
"""

from dataclasses import dataclass, field
import warnings

import numpy as np

from randbasis._backend import kernels
from randbasis.basis import GAUSSIAN, GREEDY_BOX, BasisElement, kind_code, sample_params_batch
from randbasis.grid import GridFunction, inner_product, norm_sq


@dataclass(frozen=True)
class GreedyConfig:
    M_prime: float = 1.5
    M_double_prime: float = 2.0
    epsilon: float = 1e-6
    max_steps: int = 100
    max_attempts: int = 1_000_000
    search_box: object = GREEDY_BOX
    kind: str = GAUSSIAN
    batch_size: int = 256

    def __post_init__(self):
        if not self.M_double_prime > self.M_prime > 0:
            raise ValueError("need M'' > M' > 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_steps < 1 or self.max_attempts < 1 or self.batch_size < 1:
            raise ValueError("max_steps, max_attempts and batch_size must be >= 1")
        kind_code(self.kind)

    def step_threshold(self, n, e_n_sq):
        """Acceptance threshold for the condition at iteration ``n`` (0-based)."""
        if n == 0:
            return self.epsilon
        mpp2 = self.M_double_prime**2
        return (mpp2 - self.M_prime**2) * e_n_sq / (2.0 * mpp2)


@dataclass(frozen=True)
class SearchResult:
    element: BasisElement
    condition_value: float
    attempts_used: int
    shortfall: bool
    values: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class GreedyStep:
    n: int
    alpha: float
    element: BasisElement
    e_n_sq: float
    bar_e_n: float
    bound_n: float
    attempts_used: int
    condition_value: float
    threshold: float
    shortfall: bool


@dataclass
class GreedyTrace:
    e0_sq: float
    steps: list = field(default_factory=list)
    approximant: GridFunction = None

    @property
    def bar_e(self):
        return np.array([s.bar_e_n for s in self.steps])

    @property
    def e_sq(self):
        return np.array([s.e_n_sq for s in self.steps])

    @property
    def alphas(self):
        return np.array([s.alpha for s in self.steps])

    @property
    def bounds(self):
        return np.array([s.bound_n for s in self.steps])

    @property
    def elements(self):
        return [s.element for s in self.steps]

    @property
    def shortfall_count(self):
        return sum(s.shortfall for s in self.steps)

    def coefficients(self):
        return unroll_coefficients(self.alphas)


def candidate_search(f_n, f, threshold, box, max_attempts, rng, kind=GAUSSIAN, batch_size=256):
    """Sample elements until ``<f_n - f, g - f> < threshold``.

    Falls back to the best candidate seen (flagged as a shortfall) once
    ``max_attempts`` samples are exhausted.
    """
    grid = f.grid
    resid = np.ascontiguousarray((f_n - f).values)
    # <r, g - f> = <r, g> - <r, f>
    offset = inner_product(f_n - f, f)
    code = kind_code(kind)
    attempts = 0
    best_val = np.inf
    best_w = best_b = None
    while attempts < max_attempts:
        size = min(batch_size, max_attempts - attempts)
        w, b = sample_params_batch(box, rng, size)
        first, first_val, best, bval = kernels.scan_candidates(
            w, b, grid.nodes, resid, offset, threshold, grid.cell_weight, code
        )
        if best >= 0 and bval < best_val:
            best_val, best_w, best_b = bval, w[best], b[best]
        if first >= 0:
            attempts += first + 1
            elem = BasisElement(kind, w[first], b[first])
            return SearchResult(elem, float(first_val), attempts, False, _tab(kind, w[first], b[first], grid))
        attempts += size
    elem = BasisElement(kind, best_w, best_b)
    return SearchResult(elem, float(best_val), attempts, True, _tab(kind, best_w, best_b, grid))


def _tab(kind, w, b, grid):
    vals = kernels.tabulate_many(
        np.ascontiguousarray(np.atleast_2d(w), dtype=np.float64),
        np.array([b], dtype=np.float64),
        grid.nodes,
        kind_code(kind),
    )[0]
    return vals


def jones_step(f_n, e_n_sq, g_n, M_double_prime):
    """One convex update; ``g_n`` is a tabulated GridFunction."""
    if e_n_sq < 0:
        raise ValueError("squared error must be nonnegative")
    alpha = e_n_sq / (M_double_prime**2 + e_n_sq)
    return (1.0 - alpha) * f_n + alpha * g_n, alpha


def bound_n(e0_sq, M_prime, n):
    """Upper bound ``M'^2 e0^2 / (n e0^2 + M'^2)`` on the squared error after n steps."""
    mp2 = M_prime**2
    return mp2 * e0_sq / (n * e0_sq + mp2)


def bound_curve(e0_sq, M_prime, n_max):
    """Bound values for n = 1..n_max."""
    if not e0_sq > 0 or not M_prime > 0:
        raise ValueError("e0_sq and M_prime must be positive")
    n = np.arange(1, n_max + 1, dtype=np.float64)
    return bound_n(e0_sq, M_prime, n)


def unroll_coefficients(alphas):
    """Expand the recursion into ``f_n = sum_i c_i g_i``.

    ``c_i = a_i (1 - a_{i+1}) ... (1 - a_n)``, computed as a reversed running
    product.
    """
    a = np.asarray(alphas, dtype=np.float64)
    if a.size == 0:
        return a.copy()
    if np.any(a < 0) or np.any(a >= 1):
        raise ValueError("step sizes must lie in [0, 1)")
    tail = np.ones_like(a)
    # tail[i] = prod_{j > i} (1 - a_j)
    tail[:-1] = np.cumprod((1.0 - a[::-1])[:-1])[::-1]
    return a * tail


def lattice_min_condition(f_n, f, box, per_axis=100, kind=GAUSSIAN):
    """Minimum condition value over a regular (w, b) lattice in ``box`` (d = 1).

    Brute-force reference for ``candidate_search``.
    """
    if box.d != 1:
        raise ValueError("lattice scan is implemented for d = 1")
    ws = np.linspace(box.w_lo[0], box.w_hi[0], per_axis)
    bs = np.linspace(box.b_lo, box.b_hi, per_axis)
    W, B = np.meshgrid(ws, bs, indexing="ij")
    G = kernels.tabulate_many(
        np.ascontiguousarray(W.reshape(-1, 1)), np.ascontiguousarray(B.ravel()), f.grid.nodes, kind_code(kind)
    )
    r = (f_n - f).values
    vals = f.grid.cell_weight * (G @ r) - inner_product(f_n - f, f)
    return float(vals.min())


def check_constants(config, f):
    """Warn when M' does not exceed sup ||g|| + ||f||."""
    # every gaussian or sigmoid ridge function on the unit cube has norm <= 1
    sup_g = 1.0
    f_norm = np.sqrt(norm_sq(f))
    if not config.M_prime > sup_g + f_norm:
        warnings.warn(
            f"M'={config.M_prime} does not exceed sup||g|| + ||f|| = {sup_g + f_norm:.4g}; "
            "the rate bound is not guaranteed",
            RuntimeWarning,
            stacklevel=3,
        )
        return False
    return True


def run_greedy(config, f, rng):
    e0_sq = norm_sq(f)
    if not e0_sq > 0:
        raise ValueError("target has zero norm")
    if config.search_box.d != f.grid.d:
        raise ValueError("search box dimension does not match the grid")
    check_constants(config, f)
    grid = f.grid
    f_n = grid.zeros()
    e_sq = e0_sq
    trace = GreedyTrace(e0_sq=e0_sq)
    for n in range(config.max_steps):
        thr = config.step_threshold(n, e_sq)
        res = candidate_search(
            f_n, f, thr, config.search_box, config.max_attempts, rng,
            kind=config.kind, batch_size=config.batch_size,
        )
        f_n, alpha = jones_step(f_n, e_sq, GridFunction(grid, res.values), config.M_double_prime)
        # recomputed from the tabulated residual, never from the recursion
        e_sq = norm_sq(f_n - f)
        trace.steps.append(
            GreedyStep(
                n=n + 1,
                alpha=alpha,
                element=res.element,
                e_n_sq=e_sq,
                bar_e_n=e_sq / e0_sq,
                bound_n=float(bound_n(e0_sq, config.M_prime, n + 1)),
                attempts_used=res.attempts_used,
                condition_value=res.condition_value,
                threshold=thr,
                shortfall=res.shortfall,
            )
        )
    trace.approximant = f_n
    return trace
