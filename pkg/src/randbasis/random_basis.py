"""Random-basis approximation: frozen random ridge functions, linear fit only.

Two routes live here. The least-squares route samples (w, b) uniformly,
tabulates the pool and solves the normal equations in the quadrature inner
product, discarding elements that would make the Gram matrix ill-conditioned.
The direct Monte-Carlo route samples (y, w, u) and uses formula-driven weights
with no optimisation at all.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.linalg import lapack, solve_triangular
from scipy.special import erf

from randbasis._backend import kernels
from randbasis.basis import GAUSSIAN, RANDOM_BOX, BasisElement, kind_code, sample_params_batch, tabulate_pool
from randbasis.grid import GridFunction, norm_sq

DEFAULT_COND_THRESHOLD = 1e12
# elements whose tabulated norm^2 falls below this carry no usable direction
NULL_NORM_SQ = 1e-20


def grow_pool(pool, box, rng, kind=GAUSSIAN):
    """Return ``pool`` extended by one freshly sampled element."""
    w, b = sample_params_batch(box, rng, 1)
    return tuple(pool) + (BasisElement(kind, w[0], b[0]),)


def sample_pool(n, box, rng, kind=GAUSSIAN):
    pool = ()
    for _ in range(n):
        pool = grow_pool(pool, box, rng, kind)
    return pool


@dataclass(frozen=True)
class RandomBasisModel:
    pool: tuple
    coefficients: np.ndarray = field(repr=False)
    retained: np.ndarray = field(repr=False)
    gram_condition: float
    discarded_count: int
    bar_e: float
    orthogonality: float
    approximant: GridFunction = field(repr=False, default=None)
    note: str = ""

    @property
    def n(self):
        return len(self.pool)


class IncrementalFit:
    """Least-squares fit that accepts pool elements one at a time.

    The Gram matrix is kept in unit-diagonal (Jacobi-scaled) form together
    with its Cholesky factor. A candidate is rejected when it is numerically
    null, when it is linearly dependent on the retained set, or when the
    condition estimate of the enlarged Gram matrix exceeds ``cond_threshold``.
    Acceptance of element k depends only on elements before it, so the
    retained set for any prefix is the same as a fit of that prefix alone.
    """

    def __init__(self, f, cond_threshold=DEFAULT_COND_THRESHOLD, capacity=128):
        if not cond_threshold >= 1:
            raise ValueError("cond_threshold must be >= 1")
        self.f = f
        self.h = f.grid.cell_weight
        self.f_sq = norm_sq(f)
        self.cond_threshold = float(cond_threshold)
        self._cap = capacity
        self._L = np.zeros((capacity, capacity))
        self._C = np.zeros((capacity, capacity))
        self._rows = np.zeros((capacity, f.grid.size))
        self._scale = np.zeros(capacity)
        self._z = np.zeros(capacity)
        self._proj = 0.0
        self.k = 0
        self.cond = 1.0
        self.pool = []
        self.retained = []

    def _grow(self):
        cap = self._cap * 2
        for name in ("_L", "_C"):
            new = np.zeros((cap, cap))
            old = getattr(self, name)
            new[: self._cap, : self._cap] = old
            setattr(self, name, new)
        rows = np.zeros((cap, self.f.grid.size))
        rows[: self._cap] = self._rows
        self._rows = rows
        for name in ("_scale", "_z"):
            new = np.zeros(cap)
            new[: self._cap] = getattr(self, name)
            setattr(self, name, new)
        self._cap = cap

    def add(self, element, values):
        """Offer one tabulated element; returns True if it was retained."""
        self.pool.append(element)
        values = np.asarray(values, dtype=np.float64)
        gii = self.h * float(values @ values)
        if not gii > NULL_NORM_SQ:
            self.retained.append(False)
            return False
        s = math.sqrt(gii)
        k = self.k
        rhs = self.h * float(values @ self.f.values) / s
        if k == 0:
            l = np.zeros(0)
            d2 = 1.0
            cond = 1.0
        else:
            cvec = self.h * (self._rows[:k] @ values) / (self._scale[:k] * s)
            l = solve_triangular(self._L[:k, :k], cvec, lower=True, check_finite=False)
            d2 = 1.0 - float(l @ l)
            if not d2 > 0.0:
                self.retained.append(False)
                return False
            self._C[k, :k] = cvec
            self._C[:k, k] = cvec
            self._C[k, k] = 1.0
            self._L[k, :k] = l
            self._L[k, k] = math.sqrt(d2)
            C = self._C[: k + 1, : k + 1]
            anorm = float(np.abs(C).sum(axis=0).max())
            rcond, info = lapack.dpocon(self._L[: k + 1, : k + 1], anorm, uplo="L")
            cond = 1.0 / rcond if rcond > 0 else np.inf
            if info != 0 or cond > self.cond_threshold:
                self._C[k, : k + 1] = 0.0
                self._C[: k + 1, k] = 0.0
                self._L[k, : k + 1] = 0.0
                self.retained.append(False)
                return False
        if k + 1 > self._cap:
            self._grow()
        self._C[k, k] = 1.0
        self._L[k, k] = math.sqrt(d2)
        self._rows[k] = values
        self._scale[k] = s
        zk = (rhs - float(l @ self._z[:k])) / math.sqrt(d2)
        self._z[k] = zk
        self._proj += zk * zk
        self.k = k + 1
        self.cond = max(1.0, cond)
        self.retained.append(True)
        if self.k == self._cap:
            self._grow()
        return True

    @property
    def bar_e(self):
        """Normalised optimal residual ``(||f||^2 - ||P f||^2) / ||f||^2``.

        Accumulated from the Cholesky projection, so it can only decrease as
        elements are retained.
        """
        return max(self.f_sq - self._proj, 0.0) / self.f_sq

    def solve(self, refine=True):
        """Coefficients of the retained elements (unscaled)."""
        k = self.k
        if k == 0:
            return np.zeros(0)
        L = self._L[:k, :k]
        cs = solve_triangular(L.T, self._z[:k], lower=False, check_finite=False)
        if refine:
            rows = self._rows[:k]
            scale = self._scale[:k]
            resid = (cs / scale) @ rows - self.f.values
            g = self.h * (rows @ resid) / scale
            y = solve_triangular(L, g, lower=True, check_finite=False)
            cs = cs - solve_triangular(L.T, y, lower=False, check_finite=False)
        return cs / self._scale[:k]

    def model(self, ridge=0.0):
        k = self.k
        grid = self.f.grid
        mask = np.array(self.retained, dtype=bool)
        coeffs = np.zeros(len(self.pool))
        note = ""
        if k == 0:
            approx = grid.zeros()
            orth = 0.0
            note = "all elements discarded; zero model"
            cond = 1.0
        else:
            rows = self._rows[:k]
            if ridge > 0:
                G = self.h * rows @ rows.T
                rhs = self.h * rows @ self.f.values
                c = np.linalg.solve(G + ridge * np.eye(k), rhs)
            else:
                c = self.solve()
            coeffs[mask] = c
            approx = GridFunction(grid, c @ rows)
            resid = approx.values - self.f.values
            dots = self.h * (rows @ resid)
            norms = self._scale[:k] * math.sqrt(self.f_sq)
            orth = float(np.max(np.abs(dots) / norms))
            cond = float(np.linalg.cond(self._C[:k, :k]))
        bar_e = norm_sq(approx - self.f) / self.f_sq
        return RandomBasisModel(
            pool=tuple(self.pool),
            coefficients=coeffs,
            retained=mask,
            gram_condition=max(cond, 1.0),
            discarded_count=int((~mask).sum()),
            bar_e=bar_e,
            orthogonality=orth,
            approximant=approx,
            note=note,
        )


def fit_linear(pool, f, cond_threshold=DEFAULT_COND_THRESHOLD, ridge=0.0):
    """Least-squares fit of ``f`` over the span of ``pool`` with the conditioning guard.

    ``ridge`` > 0 adds ``ridge * I`` to the Gram matrix of the retained
    elements; it is a diagnostic and off by default.
    """
    pool = tuple(pool)
    if not pool:
        raise ValueError("pool is empty")
    fit = IncrementalFit(f, cond_threshold, capacity=max(8, len(pool) + 1))
    table = tabulate_pool(pool, f.grid)
    for e, row in zip(pool, table):
        fit.add(e, row)
    return fit.model(ridge=ridge)


@dataclass
class RandomRun:
    bar_e: np.ndarray
    pool: tuple
    models: list = None
    final: RandomBasisModel = None


def run_random_basis(box, f, n_max, cond_threshold=DEFAULT_COND_THRESHOLD, rng=None,
                     kind=GAUSSIAN, keep_models=False):
    """Grow a random pool one element at a time and record the fitted error at every size."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    fit = IncrementalFit(f, cond_threshold, capacity=n_max + 1)
    pool = ()
    bar_e = np.empty(n_max)
    models = [] if keep_models else None
    code = kind_code(kind)
    for n in range(n_max):
        pool = grow_pool(pool, box, rng, kind)
        e = pool[-1]
        row = kernels.tabulate_many(
            np.array([e.w], dtype=np.float64), np.array([e.b]), f.grid.nodes, code
        )[0]
        fit.add(e, row)
        bar_e[n] = fit.bar_e
        if keep_models:
            models.append(fit.model())
    return RandomRun(bar_e=bar_e, pool=pool, models=models, final=fit.model())


@dataclass
class ReinitResult:
    model: RandomBasisModel
    reinit_count: int
    met: bool
    history: list


def fit_with_reinit(box, f, n, quality_threshold, max_reinits, cond_threshold=DEFAULT_COND_THRESHOLD,
                    rng=None, kind=GAUSSIAN):
    """Resample the whole pool until the fitted error meets ``quality_threshold``.

    Returns the first acceptable model, or the best of ``max_reinits + 1``
    attempts with ``met=False``.
    """
    if quality_threshold < 0:
        raise ValueError("quality_threshold must be nonnegative")
    if rng is None:
        rng = np.random.default_rng()
    best = None
    history = []
    for attempt in range(max_reinits + 1):
        model = fit_linear(sample_pool(n, box, rng, kind), f, cond_threshold)
        history.append(model.bar_e)
        if best is None or model.bar_e < best.bar_e:
            best = model
        if model.bar_e <= quality_threshold:
            return ReinitResult(model, attempt, True, history)
    return ReinitResult(best, max_reinits, False, history)


# ---------------------------------------------------------------------------
# direct Monte-Carlo weights
# ---------------------------------------------------------------------------

MC_ALPHA = 1.0
MC_OMEGA = 20.0


@dataclass(frozen=True)
class MCSamples:
    """n draws of (y, w, u) with the target evaluated at each y.

    ``b`` and ``weights`` are derived on access, never stored.
    """

    y: np.ndarray
    w: np.ndarray
    u: np.ndarray
    f_y: np.ndarray
    alpha: float = MC_ALPHA
    Omega: float = MC_OMEGA
    kind: str = GAUSSIAN

    @property
    def n(self):
        return len(self.u)

    @property
    def d(self):
        return self.y.shape[1]

    @property
    def b(self):
        return -self.alpha * (np.sum(self.w * self.y, axis=1) + self.u)

    @property
    def weights(self):
        return self.alpha * np.prod(self.w, axis=1) / 2.0 ** (self.d - 1) * self.f_y

    def head(self, n):
        return MCSamples(self.y[:n], self.w[:n], self.u[:n], self.f_y[:n], self.alpha, self.Omega, self.kind)


def sample_mc(n, target, rng, alpha=MC_ALPHA, Omega=MC_OMEGA, d=1, kind=GAUSSIAN):
    """Uniform draws over the finite parameter box.

    y in [0, 1]^d, w in [0, Omega] x [-Omega, Omega]^(d-1), u in [-2 d Omega, 2 d Omega].
    ``target`` maps an (n, d) array of points to values.
    """
    y = rng.uniform(0.0, 1.0, size=(n, d))
    w = rng.uniform(-Omega, Omega, size=(n, d))
    w[:, 0] = rng.uniform(0.0, Omega, size=n)
    u = rng.uniform(-2.0 * d * Omega, 2.0 * d * Omega, size=n)
    f_y = np.asarray(target(y), dtype=np.float64).reshape(n)
    return MCSamples(y, w, u, f_y, float(alpha), float(Omega), kind)


def mc_direct_eval(samples, x):
    """``(4 / n) sum_k c_k g(alpha w_k . x + b_k)`` at points ``x`` of shape (m, d)."""
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    if samples.n == 0:
        return np.zeros(x.shape[0])
    G = kernels.tabulate_many(
        np.ascontiguousarray(samples.alpha * samples.w), np.ascontiguousarray(samples.b), x, kind_code(samples.kind)
    )
    return (4.0 / samples.n) * (samples.weights @ G)


def mc_direct_weights(samples, grid):
    return GridFunction(grid, mc_direct_eval(samples, grid.nodes))


def mc_expected_value(x, target, alpha=MC_ALPHA, Omega=MC_OMEGA, n_y=4000, n_w=400):
    """Expectation of the d = 1 direct Monte-Carlo estimator at ``x``.

    The u-integral of the gaussian is done in closed form with erf; y and w
    use midpoint rules. Independent of the sampling path.
    """
    yq = (np.arange(n_y) + 0.5) / n_y
    wq = (np.arange(n_w) + 0.5) / n_w * Omega
    fy = np.asarray(target(yq[:, None]), dtype=np.float64).reshape(-1)
    a = np.outer(wq, x - yq)
    # mean over u ~ U[-2 Omega, 2 Omega] of exp(-alpha^2 (a - u)^2)
    gu = (math.sqrt(math.pi) / (2.0 * alpha)) * (erf(alpha * (a + 2 * Omega)) - erf(alpha * (a - 2 * Omega)))
    gu /= 4.0 * Omega
    # E[4 alpha w f(y) g], w ~ U[0, Omega], y ~ U[0, 1]
    return float(4.0 * alpha * np.mean(wq[:, None] * fy[None, :] * gu))


@dataclass(frozen=True)
class VarianceEstimate:
    n: int
    x: object
    empirical_var: float
    sigma_sq: float
    gamma: float
    empirical_coverage: float
    epsilon: float
    mean: float
    reference: float
    runs: int


MIN_RUNS = 30


def estimate_variance(values, reference, epsilon, n=None, x=None):
    """Pointwise spread of independent runs and the Chebyshev accuracy bound.

    ``values`` holds f_n(x) from independent runs at the same n. ``gamma`` is
    the plug-in Chebyshev bound ``Var / epsilon^2`` on
    ``P(|f_n(x) - reference| >= epsilon)``; coverage is the observed frequency
    of the complementary event.
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size < MIN_RUNS:
        raise ValueError(f"need at least {MIN_RUNS} independent runs, got {v.size}")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    var = float(np.var(v, ddof=1))
    gamma = var / epsilon**2 if np.isfinite(epsilon) else 0.0
    coverage = float(np.mean(np.abs(v - reference) < epsilon))
    return VarianceEstimate(
        n=n,
        x=x,
        empirical_var=var,
        sigma_sq=var * n if n else var,
        gamma=gamma,
        empirical_coverage=coverage,
        epsilon=float(epsilon),
        mean=float(v.mean()),
        reference=float(reference),
        runs=int(v.size),
    )


def variance_slope(ns, variances):
    """Least-squares slope of log(variance) against log(n)."""
    slope, _ = np.polyfit(np.log(np.asarray(ns, dtype=np.float64)), np.log(np.asarray(variances)), 1)
    return float(slope)


def mc_variance_study(target, rng, x=0.5, ns=(32, 128, 512, 2048), sets=200,
                      alpha=MC_ALPHA, Omega=MC_OMEGA):
    """Values of the direct estimator at ``x`` for ``sets`` independent sample sets per n."""
    xs = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = {}
    for n in ns:
        out[n] = np.array(
            [mc_direct_eval(sample_mc(n, target, rng, alpha, Omega, d=xs.shape[1]), xs)[0] for _ in range(sets)]
        )
    return out
