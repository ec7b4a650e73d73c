"""Distribution kernels: densities, region probabilities, and samplers.

Everything stochastic draws from an explicit :class:`RandomStream`, so results
are reproducible for a given (seed, stream_id) no matter how the caller
schedules work across threads.  Monte Carlo estimates are returned together
with a standard error; closed-form paths report a standard error of zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import linprog

# Fixed Monte Carlo chunk size.  Estimates are accumulated chunk by chunk in a
# fixed order, which makes the result independent of how many chunks the total
# draw count is split into.
CHUNK = 4096

_LP_TOL = 1e-9
_RANK_TOL = 1e-10

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class RandomStream:
    """A named, reproducible stream of randomness.

    Identical (seed, stream_id) pairs yield identical draw sequences.  Child
    streams are derived with :meth:`child`; ids are tree-coded so that
    children of different parents never collide (for fan-outs below 2**16).
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, index: int) -> "RandomStream":
        if not 0 <= index < (1 << 16):
            raise ValueError("child index out of range")
        return RandomStream(self.seed, ((self.stream_id << 16) | index) & (2**64 - 1))


@dataclass(frozen=True)
class GaussianSpec:
    """Multivariate normal with mean vector and SPD covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, float)))
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, float)))
        if self.cov.shape != (self.dim, self.dim):
            raise ValueError("cov shape does not match mean")
        if not np.allclose(self.cov, self.cov.T, atol=1e-12 * (1 + abs(self.cov).max())):
            raise ValueError("cov must be symmetric")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class StudentTSpec:
    """Multivariate Student t with location, scale matrix and df > 0."""

    location: np.ndarray
    scale: np.ndarray
    df: float

    def __post_init__(self):
        object.__setattr__(self, "location", np.atleast_1d(np.asarray(self.location, float)))
        object.__setattr__(self, "scale", np.atleast_2d(np.asarray(self.scale, float)))
        if self.df <= 0:
            raise ValueError("df must be positive")
        if self.scale.shape != (self.dim, self.dim):
            raise ValueError("scale shape does not match location")

    @property
    def dim(self) -> int:
        return self.location.shape[0]


@dataclass(frozen=True)
class Region:
    """The open polyhedral region {x : A x > b}."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", np.atleast_2d(np.asarray(self.A, float)))
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, float)))
        if self.A.shape[0] != self.b.shape[0]:
            raise ValueError("A and b row counts differ")


# ---------------------------------------------------------------------------
# Densities


def mvn_logpdf(x, g: GaussianSpec) -> float:
    x = np.atleast_1d(np.asarray(x, float))
    c, low = cho_factor(g.cov, lower=True)
    dev = cho_solve((c, low), x - g.mean)
    maha = float((x - g.mean) @ dev)
    logdet = 2.0 * np.sum(np.log(np.diag(c)))
    return -0.5 * (g.dim * LOG_2PI + logdet + maha)


def mvn_pdf(x, g: GaussianSpec) -> float:
    return math.exp(mvn_logpdf(x, g))


def mvt_logpdf(x, t: StudentTSpec) -> float:
    x = np.atleast_1d(np.asarray(x, float))
    d, df = t.dim, t.df
    c, low = cho_factor(t.scale, lower=True)
    dev = cho_solve((c, low), x - t.location)
    maha = float((x - t.location) @ dev)
    logdet = 2.0 * np.sum(np.log(np.diag(c)))
    return float(
        special.gammaln((df + d) / 2.0)
        - special.gammaln(df / 2.0)
        - 0.5 * (d * math.log(df * math.pi) + logdet)
        - 0.5 * (df + d) * math.log1p(maha / df)
    )


def mvt_pdf(x, t: StudentTSpec) -> float:
    return math.exp(mvt_logpdf(x, t))


def invgamma_logpdf(x: float, shape: float, scale: float) -> float:
    if x <= 0:
        return -np.inf
    return shape * math.log(scale) - special.gammaln(shape) - (shape + 1) * math.log(x) - scale / x


def invgamma_pdf(x: float, shape: float, scale: float) -> float:
    return math.exp(invgamma_logpdf(x, shape, scale))


def invgamma_cdf(x, shape: float, scale: float):
    """P(X <= x) for X ~ inverse-gamma(shape, scale), via incomplete gamma."""
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = special.gammaincc(shape, scale / x[pos])
    return out if out.ndim else float(out)


def invgamma_sf(x, shape: float, scale: float):
    x = np.asarray(x, float)
    out = np.ones_like(x)
    pos = x > 0
    out[pos] = special.gammainc(shape, scale / x[pos])
    return out if out.ndim else float(out)


def invgamma_ppf(q: float, shape: float, scale: float) -> float:
    return scale / special.gammainccinv(shape, q)


def invgamma_region_prob(lo: float, hi: float, shape: float, scale: float) -> float:
    """P(lo < X < hi) for an inverse-gamma variate."""
    hi_c = invgamma_cdf(hi, shape, scale) if np.isfinite(hi) else 1.0
    lo_c = invgamma_cdf(lo, shape, scale) if lo > 0 else 0.0
    return float(max(hi_c - lo_c, 0.0))


def invgamma_less_prob(a1: float, c1: float, a2: float, c2: float) -> float:
    """P(X1 < X2) for independent inverse-gamma variates.

    With X_i = c_i / W_i and W_i ~ Gamma(a_i), the event c1/W1 < c2/W2 is
    W1/(W1+W2) > c1/(c1+c2), a Beta(a1, a2) tail probability.
    """
    return float(special.betainc(a2, a1, c2 / (c1 + c2)))


def chi2_logpdf(x: float, df: float) -> float:
    if x <= 0:
        return -np.inf
    k = df / 2.0
    return (k - 1) * math.log(x) - x / 2.0 - k * math.log(2.0) - special.gammaln(k)


def chi2_pdf(x: float, df: float) -> float:
    return math.exp(chi2_logpdf(x, df))


def f_logpdf(x: float, d1: float, d2: float) -> float:
    if x <= 0:
        return -np.inf
    return (
        0.5 * (d1 * math.log(d1) + d2 * math.log(d2))
        + (d1 / 2.0 - 1) * math.log(x)
        - 0.5 * (d1 + d2) * math.log(d2 + d1 * x)
        - special.betaln(d1 / 2.0, d2 / 2.0)
    )


def f_pdf(x: float, d1: float, d2: float) -> float:
    return math.exp(f_logpdf(x, d1, d2))


# ---------------------------------------------------------------------------
# Region probabilities


def _clean_region(r: Region):
    """Drop vacuous rows; return None when a zero row is violated."""
    A, b = r.A, r.b
    norms = np.abs(A).max(axis=1) if A.size else np.zeros(len(b))
    keep, violated = [], False
    for i in range(A.shape[0]):
        if norms[i] < 1e-13:
            # constant constraint 0 > b_i
            if b[i] >= 1e-13:
                violated = True
            continue
        keep.append(i)
    if violated:
        return None
    return A[keep], b[keep]


def _region_feasible(A: np.ndarray, b: np.ndarray) -> bool:
    """True when {x : A x > b} has an interior point (LP max-slack test)."""
    m, d = A.shape
    if m == 0:
        return True
    # maximize s  s.t.  A x - s >= b,  s <= 1
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-A, np.ones((m, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=-b, bounds=[(None, None)] * d + [(None, 1.0)],
                  method="highs")
    return bool(res.status == 0 and res.x is not None and res.x[-1] > _LP_TOL)


def _norm_sf(z):
    return 0.5 * special.erfc(z / math.sqrt(2.0))


def _bvn_upper(b1: float, b2: float, m, S) -> float:
    """P(Y1 > b1, Y2 > b2) for (Y1,Y2) ~ N(m, S) by 1-D quadrature."""
    s1 = math.sqrt(S[0, 0])
    beta = S[0, 1] / S[0, 0]
    resid = S[1, 1] - S[0, 1] ** 2 / S[0, 0]
    if resid <= 0:  # perfectly correlated pair
        resid = 0.0

    def f(y1):
        mu2 = m[1] + beta * (y1 - m[0])
        tail = _norm_sf((b2 - mu2) / math.sqrt(resid)) if resid > 0 else float(mu2 > b2)
        z = (y1 - m[0]) / s1
        return math.exp(-0.5 * z * z) / (s1 * math.sqrt(2 * math.pi)) * tail

    hi = m[0] + 10.0 * s1
    if b1 >= hi:
        return 0.0
    val, _ = integrate.quad(f, b1, hi, limit=200, epsabs=1e-12)
    return float(min(max(val, 0.0), 1.0))


def mvn_region_prob(r: Region, g: GaussianSpec, stream: RandomStream | None = None,
                    n_draws: int = 100_000) -> tuple[float, float]:
    """P(A X > b) for X ~ g.  Returns (estimate, standard error).

    Exact (zero-SE) paths: empty regions detected by LP, single rows, rows
    whose images are uncorrelated, and pairs of rows (1-D quadrature).
    Everything else is antithetic Monte Carlo.
    """
    cleaned = _clean_region(r)
    if cleaned is None:
        return 0.0, 0.0
    A, b = cleaned
    if A.shape[0] == 0:
        return 1.0, 0.0
    if not _region_feasible(A, b):
        return 0.0, 0.0

    m = A @ g.mean
    S = A @ g.cov @ A.T
    q = A.shape[0]
    if q == 1:
        return float(_norm_sf((b[0] - m[0]) / math.sqrt(S[0, 0]))), 0.0
    off = S - np.diag(np.diag(S))
    if np.abs(off).max() < 1e-12 * max(np.diag(S).max(), 1.0):
        p = np.prod(_norm_sf((b - m) / np.sqrt(np.diag(S))))
        return float(p), 0.0
    if q == 2:
        return _bvn_upper(b[0], b[1], m, S), 0.0

    if stream is None:
        raise ValueError("Monte Carlo path requires a RandomStream")
    L = np.linalg.cholesky(g.cov)
    AL = A @ L
    rng = stream.generator()
    shift = b - m
    n_pairs = max(int(n_draws) // 2, CHUNK)
    pair_means = np.empty(n_pairs)
    done = 0
    while done < n_pairs:
        k = min(CHUNK, n_pairs - done)
        z = rng.standard_normal((k, g.dim))
        y = z @ AL.T
        hit_plus = np.all(y > shift, axis=1)
        hit_minus = np.all(-y > shift, axis=1)
        pair_means[done:done + k] = 0.5 * (hit_plus + hit_minus)
        done += k
    p = float(pair_means.mean())
    se = float(pair_means.std(ddof=1) / math.sqrt(n_pairs)) if n_pairs > 1 else 0.0
    return p, se


def mvt_region_prob(r: Region, t: StudentTSpec, stream: RandomStream | None = None,
                    n_draws: int = 100_000) -> tuple[float, float]:
    """P(A X > b) for X multivariate Student t.

    Single rows use the exact univariate t tail; larger systems sample the
    scale mixture (one chi-square mixing weight per antithetic pair).
    """
    cleaned = _clean_region(r)
    if cleaned is None:
        return 0.0, 0.0
    A, b = cleaned
    if A.shape[0] == 0:
        return 1.0, 0.0
    if not _region_feasible(A, b):
        return 0.0, 0.0

    m = A @ t.location
    S = A @ t.scale @ A.T
    if A.shape[0] == 1:
        z = (b[0] - m[0]) / math.sqrt(S[0, 0])
        return float(special.stdtr(t.df, -z)), 0.0

    if stream is None:
        raise ValueError("Monte Carlo path requires a RandomStream")
    L = np.linalg.cholesky(t.scale)
    AL = A @ L
    rng = stream.generator()
    shift = b - m
    n_pairs = max(int(n_draws) // 2, CHUNK)
    pair_means = np.empty(n_pairs)
    done = 0
    while done < n_pairs:
        k = min(CHUNK, n_pairs - done)
        z = rng.standard_normal((k, t.dim))
        w = rng.chisquare(t.df, size=k) / t.df
        y = (z @ AL.T) / np.sqrt(w)[:, None]
        hit_plus = np.all(y > shift, axis=1)
        hit_minus = np.all(-y > shift, axis=1)
        pair_means[done:done + k] = 0.5 * (hit_plus + hit_minus)
        done += k
    p = float(pair_means.mean())
    se = float(pair_means.std(ddof=1) / math.sqrt(n_pairs)) if n_pairs > 1 else 0.0
    return p, se


# ---------------------------------------------------------------------------
# Conditioning and degenerate-covariance helpers


def condition_gaussian(g: GaussianSpec, A: np.ndarray, r: np.ndarray):
    """Moments of X | AX = r.  The returned covariance is PSD (rank-deficient)."""
    A = np.atleast_2d(A)
    r = np.atleast_1d(r)
    SA = g.cov @ A.T
    c, low = cho_factor(A @ SA, lower=True)
    gain = cho_solve((c, low), SA.T).T
    mean_c = g.mean + gain @ (r - A @ g.mean)
    cov_c = g.cov - gain @ SA.T
    return mean_c, 0.5 * (cov_c + cov_c.T)


def condition_student(t: StudentTSpec, A: np.ndarray, r: np.ndarray):
    """Location/scale/df of X | AX = r for multivariate t (df grows by rank A)."""
    A = np.atleast_2d(A)
    r = np.atleast_1d(r)
    SA = t.scale @ A.T
    c, low = cho_factor(A @ SA, lower=True)
    dev = r - A @ t.location
    gain = cho_solve((c, low), SA.T).T
    loc_c = t.location + gain @ dev
    base = t.scale - gain @ SA.T
    q = A.shape[0]
    maha = float(dev @ cho_solve((c, low), dev))
    df_c = t.df + q
    scale_c = (t.df + maha) / df_c * base
    return loc_c, 0.5 * (scale_c + scale_c.T), df_c


def psd_factor(cov: np.ndarray, tol: float = _RANK_TOL) -> np.ndarray:
    """Factor N with cov = N N^T, keeping only numerically positive directions."""
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    cut = tol * max(vals.max(), 0.0) if vals.size else 0.0
    keep = vals > cut
    return vecs[:, keep] * np.sqrt(vals[keep])


# ---------------------------------------------------------------------------
# Samplers


def sample_inverse_wishart(scale: np.ndarray, df: float, stream: RandomStream,
                           size: int = 1) -> np.ndarray:
    """Draw inverse-Wishart matrices with E[X] = scale / (df - dim - 1).

    Uses the Bartlett decomposition of the underlying Wishart(df, scale^{-1});
    returns an array of shape (size, dim, dim).
    """
    scale = np.atleast_2d(np.asarray(scale, float))
    p = scale.shape[0]
    if df <= p - 1:
        raise ValueError("df must exceed dim - 1")
    rng = stream.generator()
    C = np.linalg.cholesky(scale)
    A = np.zeros((size, p, p))
    for i in range(p):
        A[:, i, i] = np.sqrt(rng.chisquare(df - i, size=size))
        if i > 0:
            A[:, i, :i] = rng.standard_normal((size, i))
    # X^{-1} = C A^{-T} A^{-1} C^T  for X ~ Wishart(df, scale^{-1})
    Ainv = np.linalg.inv(A)
    M = C @ np.swapaxes(Ainv, 1, 2)
    return M @ np.swapaxes(M, 1, 2)


def sample_invgamma(shape: float, scale, stream_or_rng, size: int) -> np.ndarray:
    """Vectorized inverse-gamma draws, scale may be an array broadcast over size."""
    rng = stream_or_rng.generator() if isinstance(stream_or_rng, RandomStream) else stream_or_rng
    return np.asarray(scale, float) / rng.standard_gamma(shape, size=size)


def sample_uniform_corr(dim: int, stream_or_rng, size: int = 1) -> np.ndarray:
    """Correlation matrices drawn uniformly from the positive-definite body.

    Onion construction: the Cholesky factor is grown one row at a time, with
    the squared off-diagonal mass Beta-distributed and its direction uniform
    on the sphere.  Returns shape (size, dim, dim).
    """
    if dim < 2:
        raise ValueError("dim must be at least 2")
    rng = stream_or_rng.generator() if isinstance(stream_or_rng, RandomStream) else stream_or_rng
    L = np.zeros((size, dim, dim))
    L[:, 0, 0] = 1.0
    for k in range(1, dim):
        beta = 1.0 + (dim - 1 - k) / 2.0
        y = rng.beta(k / 2.0, beta, size=size)
        u = rng.standard_normal((size, k))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        L[:, k, :k] = np.sqrt(y)[:, None] * u
        L[:, k, k] = np.sqrt(1.0 - y)
    return L @ np.swapaxes(L, 1, 2)
