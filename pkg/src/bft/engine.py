"""Core Bayes factor machinery.

For every hypothesis the engine computes four quantities: the unconstrained
posterior and prior densities at the equality point (fit_E, comp_E) and the
conditional posterior and prior probabilities of the order region (fit_O,
comp_O).  Bayes factors against the unconstrained model are
``BF = (fit_E / comp_E) * (fit_O / comp_O)``; posterior hypothesis
probabilities are prior-weighted normalized Bayes factors.

Model families plug in through small spec classes (Gaussian, Student t,
matrix t by Monte Carlo mixture, group variances, correlations), each knowing
how to produce its unconstrained posterior, its default prior for a given
hypothesis, and samples for union/complement estimation.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .distributions import (
    GaussianSpec,
    Region,
    RandomStream,
    StudentTSpec,
    _region_feasible,
    condition_gaussian,
    condition_student,
    invgamma_less_prob,
    mvn_logpdf,
    mvn_region_prob,
    mvt_logpdf,
    mvt_region_prob,
    psd_factor,
    sample_inverse_wishart,
    sample_invgamma,
    sample_uniform_corr,
)
from .parser import ConstraintMatrices
from .spaces import ConstraintError, boundary_point

TARGET_SE = 0.002  # escalate draws once when an order-measure SE exceeds this


@dataclass
class Measures:
    """The four relative fit/complexity measures for one hypothesis."""

    comp_e: float = 1.0
    comp_o: float = 1.0
    fit_e: float = 1.0
    fit_o: float = 1.0
    comp_e_se: float = 0.0
    comp_o_se: float = 0.0
    fit_e_se: float = 0.0
    fit_o_se: float = 0.0

    @property
    def bf_e(self) -> float:
        return self.fit_e / self.comp_e

    @property
    def bf_o(self) -> float:
        return self.fit_o / self.comp_o

    @property
    def bf(self) -> float:
        return self.bf_e * self.bf_o

    def max_order_se(self) -> float:
        return max(self.comp_o_se, self.fit_o_se)


@dataclass
class MeasureTable:
    labels: list
    measures: list
    weights: np.ndarray
    php: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.php is None:
            self.php = posterior_probs(self.measures, self.weights)

    def bayes_factors(self) -> np.ndarray:
        return np.array([m.bf for m in self.measures])

    def evidence_matrix(self) -> np.ndarray:
        return evidence_matrix(self.measures)


def posterior_probs(measures, prior_weights) -> np.ndarray:
    w = np.asarray(prior_weights, float)
    if w.sum() <= 0:
        raise ValueError("all prior weights are zero")
    bf = np.array([m.bf for m in measures])
    num = w * bf
    return num / num.sum()


def evidence_matrix(measures) -> np.ndarray:
    bf = np.array([m.bf for m in measures])
    return bf[:, None] / bf[None, :]


# ---------------------------------------------------------------------------
# Gaussian / Student t measure kernels


def _check_equality_rank(RE: np.ndarray):
    if RE.shape[0] and np.linalg.matrix_rank(RE) < RE.shape[0]:
        raise ConstraintError("redundant equality constraints")


def _gaussian_half(spec: GaussianSpec, cm: ConstraintMatrices, stream, n_draws):
    """(density at equality point, conditional order probability, order SE)."""
    log_e, p_o, se_o = 0.0, 1.0, 0.0
    if cm.n_eq:
        marg = GaussianSpec(cm.RE @ spec.mean, cm.RE @ spec.cov @ cm.RE.T)
        log_e = mvn_logpdf(cm.rE, marg)
    if cm.n_order:
        if cm.n_eq:
            mean_c, cov_c = condition_gaussian(spec, cm.RE, cm.rE)
            N = psd_factor(cov_c)
            region = Region(cm.RO @ N, cm.rO - cm.RO @ mean_c)
            base = GaussianSpec(np.zeros(N.shape[1]), np.eye(N.shape[1]))
            p_o, se_o = mvn_region_prob(region, base, stream, n_draws)
        else:
            p_o, se_o = mvn_region_prob(Region(cm.RO, cm.rO), spec, stream, n_draws)
    return math.exp(log_e), p_o, se_o


def _student_half(spec: StudentTSpec, cm: ConstraintMatrices, stream, n_draws):
    log_e, p_o, se_o = 0.0, 1.0, 0.0
    if cm.n_eq:
        marg = StudentTSpec(cm.RE @ spec.location, cm.RE @ spec.scale @ cm.RE.T, spec.df)
        log_e = mvt_logpdf(cm.rE, marg)
    if cm.n_order:
        if cm.n_eq:
            loc_c, scale_c, df_c = condition_student(spec, cm.RE, cm.rE)
            N = psd_factor(scale_c)
            region = Region(cm.RO @ N, cm.rO - cm.RO @ loc_c)
            base = StudentTSpec(np.zeros(N.shape[1]), np.eye(N.shape[1]), df_c)
            p_o, se_o = mvt_region_prob(region, base, stream, n_draws)
        else:
            p_o, se_o = mvt_region_prob(Region(cm.RO, cm.rO), spec, stream, n_draws)
    return math.exp(log_e), p_o, se_o


# ---------------------------------------------------------------------------
# Model families


@dataclass
class GaussianModel:
    """Gaussian posterior over named parameters with a unit-information-style
    default prior: N(boundary, cov * n / q) where q counts the constraints."""

    names: list
    estimates: np.ndarray
    cov: np.ndarray
    n: int
    exploratory_center: float = 0.0

    def __post_init__(self):
        self.estimates = np.asarray(self.estimates, float)
        self.cov = np.asarray(self.cov, float)
        np.linalg.cholesky(self.cov)  # SPD check up front

    @property
    def posterior(self) -> GaussianSpec:
        return GaussianSpec(self.estimates, self.cov)

    def prior_for(self, cm: ConstraintMatrices) -> GaussianSpec:
        q = cm.n_eq + cm.n_order
        if q >= self.n:
            raise ValueError("sample size must exceed the number of constraints")
        theta0 = boundary_point(cm).theta0
        return GaussianSpec(theta0, self.cov * (self.n / q))

    def measures(self, cm: ConstraintMatrices, stream: RandomStream, n_draws: int) -> Measures:
        if cm.n_eq + cm.n_order == 0:
            return Measures()
        _check_equality_rank(cm.RE)
        fit_e, fit_o, fit_se = _gaussian_half(self.posterior, cm, stream.child(0), n_draws)
        comp_e, comp_o, comp_se = _gaussian_half(self.prior_for(cm), cm, stream.child(1), n_draws)
        return Measures(comp_e, comp_o, fit_e, fit_o,
                        comp_o_se=comp_se, fit_o_se=fit_se)

    def sample_posterior(self, stream: RandomStream, n: int) -> np.ndarray:
        rng = stream.generator()
        L = np.linalg.cholesky(self.cov)
        return self.estimates + rng.standard_normal((n, len(self.estimates))) @ L.T

    def sample_prior(self, cm: ConstraintMatrices, stream: RandomStream, n: int) -> np.ndarray:
        g = self.prior_for(cm)
        rng = stream.generator()
        L = np.linalg.cholesky(g.cov)
        return g.mean + rng.standard_normal((n, g.dim)) @ L.T

    def exploratory(self, stream: RandomStream, n_draws: int):
        return _triad_rows(self, stream, n_draws, self.exploratory_center)


@dataclass
class StudentTModel:
    """Student-t posterior with a boundary-centered Student-t default prior.

    The prior scale matrix and df are fixed by the adapter (fractional
    calculations); only the prior location moves with the hypothesis.
    """

    names: list
    post: StudentTSpec
    prior_scale: np.ndarray
    prior_df: float
    exploratory_center: float = 0.0

    def prior_for(self, cm: ConstraintMatrices) -> StudentTSpec:
        theta0 = boundary_point(cm).theta0
        return StudentTSpec(theta0, self.prior_scale, self.prior_df)

    def measures(self, cm, stream, n_draws) -> Measures:
        if cm.n_eq + cm.n_order == 0:
            return Measures()
        _check_equality_rank(cm.RE)
        fit_e, fit_o, fit_se = _student_half(self.post, cm, stream.child(0), n_draws)
        comp_e, comp_o, comp_se = _student_half(self.prior_for(cm), cm, stream.child(1), n_draws)
        return Measures(comp_e, comp_o, fit_e, fit_o,
                        comp_o_se=comp_se, fit_o_se=fit_se)

    def _sample_t(self, spec: StudentTSpec, stream, n):
        rng = stream.generator()
        L = np.linalg.cholesky(spec.scale)
        z = rng.standard_normal((n, spec.dim)) @ L.T
        w = rng.chisquare(spec.df, size=n) / spec.df
        return spec.location + z / np.sqrt(w)[:, None]

    def sample_posterior(self, stream, n):
        return self._sample_t(self.post, stream, n)

    def sample_prior(self, cm, stream, n):
        return self._sample_t(self.prior_for(cm), stream, n)

    def exploratory(self, stream, n_draws):
        return _triad_rows(self, stream, n_draws, self.exploratory_center)


@dataclass
class MatrixTModel:
    """Coefficient matrix of a (multivariate) normal linear model.

    theta = vec(B) stacked by outcome: names are ``pred`` for a single
    outcome and ``pred_on_outcome`` otherwise.  The posterior mixes a matrix
    normal over an inverse-Wishart residual covariance; the default prior is
    the same object built from fraction-powered blocks and centered at the
    hypothesis boundary.  Hypotheses whose constraints live on one outcome (or
    one predictor across outcomes) are evaluated through the exact
    multivariate-t marginals instead of the mixture.
    """

    names: list
    Bhat: np.ndarray        # (k, p)
    V: np.ndarray           # (k, k): (X'X)^{-1}
    S: np.ndarray           # (p, p): residual SSCP
    nu: float               # posterior inverse-Wishart df
    V0: np.ndarray          # prior analog of V
    S0: np.ndarray          # prior analog of S
    nu0: float              # prior inverse-Wishart df
    exploratory_center: float = 0.0
    mixture_divisor: int = 10

    @property
    def k(self) -> int:
        return self.Bhat.shape[0]

    @property
    def p(self) -> int:
        return self.Bhat.shape[1]

    def _theta(self) -> np.ndarray:
        return self.Bhat.T.reshape(-1)  # outcome-major stacking

    # ----- analytic specialization -------------------------------------

    def _block_spec(self, cols: np.ndarray):
        """Exact Student-t marginals when `cols` fit one outcome or predictor."""
        k, p = self.k, self.p
        outcome = np.unique(cols // k)
        df, df0 = self.nu - p + 1, self.nu0 - p + 1
        if outcome.size == 1:
            j = int(outcome[0])
            idx = np.arange(j * k, (j + 1) * k)
            post = StudentTSpec(self.Bhat[:, j], self.S[j, j] / df * self.V, df)
            prior = (self.S0[j, j] / df0 * self.V0, df0)
            return idx, post, prior
        pred = np.unique(cols % k)
        if pred.size == 1:
            i = int(pred[0])
            idx = i + k * np.arange(p)
            post = StudentTSpec(self.Bhat[i, :], self.V[i, i] / df * self.S, df)
            prior = (self.V0[i, i] / df0 * self.S0, df0)
            return idx, post, prior
        return None

    # ----- Monte Carlo mixture ------------------------------------------

    def _mixture_half(self, loc, V, S, nu, cm, stream, n_draws):
        """One side (posterior or prior) of the measures by covariance mixing."""
        R = max(int(n_draws) // self.mixture_divisor, 200)
        sigmas = sample_inverse_wishart(S, nu, stream.child(0), size=R)
        k = V.shape[0]

        def cross(A, B):
            # E_r[(A theta)(B theta)'] per draw: contract the p x p blocks
            Ar = A.reshape(A.shape[0], self.p, k)
            Br = B.reshape(B.shape[0], self.p, k)
            G = np.einsum("iak,kl,jbl->abij", Ar, V, Br)
            return np.einsum("abij,rab->rij", G, sigmas)

        log_w = np.zeros(R)
        C_ee = dev = None
        if cm.n_eq:
            C_ee = cross(cm.RE, cm.RE)
            dev = cm.rE - cm.RE @ loc
            _, logdet = np.linalg.slogdet(C_ee)
            sol = np.linalg.solve(C_ee, np.broadcast_to(dev, (R, dev.size))[..., None])
            maha = np.einsum("ri,i->r", sol[..., 0], dev)
            log_w = -0.5 * (cm.n_eq * math.log(2 * math.pi) + logdet + maha)

        if cm.n_order:
            keep, extra_rows, extra_rhs = _independent_order_rows(cm)
            RO_k = cm.RO[keep]
            rO_k = cm.rO[keep]
            if cm.n_eq:
                C_oe = cross(RO_k, cm.RE)
                C_oo = cross(RO_k, RO_k)
                gain = np.linalg.solve(C_ee, np.swapaxes(C_oe, 1, 2))
                mean_c = RO_k @ loc + np.einsum("rij,j->ri", np.swapaxes(gain, 1, 2), dev)
                cov_c = C_oo - C_oe @ gain
            else:
                mean_c = np.broadcast_to(RO_k @ loc, (R, len(keep))).copy()
                cov_c = cross(RO_k, RO_k)

            if len(keep) == 1 and extra_rows.shape[0] == 0:
                z = (rO_k[0] - mean_c[:, 0]) / np.sqrt(cov_c[:, 0, 0])
                probs = 0.5 * special.erfc(z / math.sqrt(2.0))
            else:
                inner = max(self.mixture_divisor, 16)
                rng = stream.child(1).generator()
                z = rng.standard_normal((inner, len(keep)))
                Lc = np.linalg.cholesky(cov_c)
                y = mean_c[:, None, :] + np.einsum("nj,rij->rni", z, Lc)
                ok = np.all(y > rO_k, axis=2)
                if extra_rows.shape[0]:
                    vals = np.einsum("mi,rni->rnm", extra_rows, y)
                    ok &= np.all(vals > extra_rhs, axis=2)
                probs = ok.mean(axis=1)
        else:
            probs = np.ones(R)

        # importance-weighted combination across covariance draws
        log_norm = special.logsumexp(log_w)
        dens = math.exp(log_norm - math.log(R)) if cm.n_eq else 1.0
        w = np.exp(log_w - log_norm)
        p_cond = float(w @ probs)

        n_batch = 20
        idx = np.array_split(np.arange(R), n_batch)
        batch_d, batch_p = [], []
        for ii in idx:
            lw = log_w[ii]
            batch_d.append(math.exp(special.logsumexp(lw) - math.log(len(ii))))
            ww = np.exp(lw - special.logsumexp(lw))
            batch_p.append(float(ww @ probs[ii]))
        dens_se = float(np.std(batch_d, ddof=1) / math.sqrt(n_batch)) if cm.n_eq else 0.0
        p_se = float(np.std(batch_p, ddof=1) / math.sqrt(n_batch)) if cm.n_order else 0.0
        return dens, dens_se, (p_cond if cm.n_order else 1.0), p_se

    def measures(self, cm, stream, n_draws) -> Measures:
        if cm.n_eq + cm.n_order == 0:
            return Measures()
        _check_equality_rank(cm.RE)
        cols = np.nonzero(np.abs(np.vstack([cm.RE, cm.RO])).sum(axis=0))[0]
        theta0 = boundary_point(cm).theta0
        block = self._block_spec(cols)
        if block is not None:
            idx, post_t, (prior_scale, prior_df) = block
            sub = ConstraintMatrices(cm.RE[:, idx], cm.rE, cm.RO[:, idx], cm.rO)
            prior_t = StudentTSpec(theta0[idx], prior_scale, prior_df)
            fit_e, fit_o, fit_se = _student_half(post_t, sub, stream.child(0), n_draws)
            comp_e, comp_o, comp_se = _student_half(prior_t, sub, stream.child(1), n_draws)
            return Measures(comp_e, comp_o, fit_e, fit_o,
                            comp_o_se=comp_se, fit_o_se=fit_se)
        fit_e, fe_se, fit_o, fo_se = self._mixture_half(
            self._theta(), self.V, self.S, self.nu, cm, stream.child(0), n_draws)
        comp_e, ce_se, comp_o, co_se = self._mixture_half(
            theta0, self.V0, self.S0, self.nu0, cm, stream.child(1), n_draws)
        return Measures(comp_e, comp_o, fit_e, fit_o,
                        comp_e_se=ce_se, comp_o_se=co_se,
                        fit_e_se=fe_se, fit_o_se=fo_se)

    def _sample(self, loc, V, S, nu, stream, n):
        sigmas = sample_inverse_wishart(S, nu, stream.child(0), size=n)
        Ls = np.linalg.cholesky(sigmas)
        rng = stream.child(1).generator()
        zk = rng.standard_normal((n, self.p, self.k))
        Lv = np.linalg.cholesky(V)
        draws = np.einsum("rab,rbk->rak", Ls, zk) @ Lv.T
        return loc + draws.reshape(n, -1)

    def sample_posterior(self, stream, n):
        return self._sample(self._theta(), self.V, self.S, self.nu, stream, n)

    def sample_prior(self, cm, stream, n):
        theta0 = boundary_point(cm).theta0
        return self._sample(theta0, self.V0, self.S0, self.nu0, stream, n)

    def exploratory(self, stream, n_draws):
        return _triad_rows(self, stream, n_draws, self.exploratory_center)


def _independent_order_rows(cm: ConstraintMatrices):
    """Split RO into rows independent of [RE; earlier RO rows] and the rest.

    Dependent rows are rewritten as linear constraints on the values of the
    kept rows (given the equalities), so the conditional Gaussian of the kept
    rows fully determines membership.
    Returns (kept_indices, extra_rows, extra_rhs) with extra in kept-space.
    """
    RE, RO = cm.RE, cm.RO
    base = RE.copy() if RE.size else np.zeros((0, cm.P))
    keep = []
    for i in range(RO.shape[0]):
        trial = np.vstack([base, RO[i:i + 1]])
        if np.linalg.matrix_rank(trial) > np.linalg.matrix_rank(base):
            keep.append(i)
            base = trial
    dep = [i for i in range(RO.shape[0]) if i not in keep]
    if not dep:
        return keep, np.zeros((0, len(keep))), np.zeros(0)
    # solve RO_dep' = [RE; RO_kept]' @ coef  =>  row = alpha @ RE + beta @ RO_kept
    basis = np.vstack([RE, RO[keep]])
    coef, *_ = np.linalg.lstsq(basis.T, RO[dep].T, rcond=None)
    alpha = coef[:RE.shape[0], :].T
    beta = coef[RE.shape[0]:, :].T
    extra_rhs = cm.rO[dep] - (alpha @ cm.rE if RE.shape[0] else 0.0)
    return keep, beta, extra_rhs


@dataclass
class VarianceModel:
    """Group variances under independent scaled chi-square likelihoods.

    Equality constraints cluster the groups; the equality Bayes factor has a
    closed form from fraction-powered marginal likelihoods.  Order constraints
    compare clusters through independent inverse-gamma posteriors and
    boundary-matched fractional priors.
    """

    names: list
    ss: np.ndarray
    n: np.ndarray

    def __post_init__(self):
        self.ss = np.asarray(self.ss, float)
        self.n = np.asarray(self.n, float)

    # ----- closed-form equality factor -----------------------------------

    def _log_marginal(self, clusters, fractional: bool) -> float:
        total = 0.0
        for c in clusters:
            idx = np.array(sorted(c))
            b = 2.0 / self.n[idx] if fractional else np.ones(idx.size)
            a = (float(b @ self.n[idx]) - idx.size) / 2.0
            scale = float(b @ self.ss[idx]) / 2.0
            total += (
                -a * math.log(2 * math.pi)
                - 0.5 * np.sum(np.log(b * self.n[idx]))
                + special.gammaln(a)
                - a * math.log(scale)
            )
        return total

    def _log_bf_equality(self, clusters) -> float:
        singletons = [{j} for j in range(len(self.names))]
        num = self._log_marginal(clusters, False) - self._log_marginal(clusters, True)
        den = self._log_marginal(singletons, False) - self._log_marginal(singletons, True)
        return num - den

    # ----- constraint interpretation --------------------------------------

    def _pairs(self, R: np.ndarray, rhs: np.ndarray, kind: str):
        out = []
        for row, r in zip(R, rhs):
            nz = np.nonzero(row)[0]
            ok = (nz.size == 2 and r == 0
                  and sorted(row[nz].tolist()) == [-1.0, 1.0])
            if not ok:
                raise ConstraintError(
                    f"variance {kind} constraints must compare two group "
                    "variances (e.g. 'a = b' or 'a > b')")
            i, j = nz
            if row[i] < 0:
                i, j = j, i
            out.append((int(i), int(j)))  # variance i (> or =) variance j
        return out

    def _clusters(self, eq_pairs):
        parent = list(range(len(self.names)))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i, j in eq_pairs:
            parent[find(i)] = find(j)
        groups = {}
        for g in range(len(self.names)):
            groups.setdefault(find(g), set()).add(g)
        return list(groups.values())

    def measures(self, cm, stream, n_draws) -> Measures:
        eq_pairs = self._pairs(cm.RE, cm.rE, "equality")
        ord_pairs = self._pairs(cm.RO, cm.rO, "order")
        clusters = self._clusters(eq_pairs)
        cluster_of = {}
        for ci, c in enumerate(clusters):
            for g in c:
                cluster_of[g] = ci
        relations = []
        for i, j in ord_pairs:
            a, b = cluster_of[i], cluster_of[j]
            if a == b:
                raise ConstraintError("order constraint contradicts an equality")
            relations.append((a, b))  # cluster a exceeds cluster b

        fit_e = math.exp(self._log_bf_equality(clusters)) if eq_pairs else 1.0

        sizes = np.array([len(c) for c in clusters], float)
        n_c = np.array([self.n[list(c)].sum() for c in clusters])
        ss_c = np.array([self.ss[list(c)].sum() for c in clusters])
        post_shape, post_scale = (n_c - sizes) / 2.0, ss_c / 2.0
        prior_shape, prior_scale = sizes / 2.0, sizes

        fit_o, fit_se = self._order_prob(relations, post_shape, post_scale,
                                         stream.child(0), n_draws)
        comp_o, comp_se = self._order_prob(relations, prior_shape, prior_scale,
                                           stream.child(1), n_draws)
        return Measures(1.0, comp_o, fit_e, fit_o,
                        comp_o_se=comp_se, fit_o_se=fit_se)

    def _order_prob(self, relations, shapes, scales, stream, n_draws):
        if not relations:
            return 1.0, 0.0
        if len(relations) == 1:
            a, b = relations[0]
            # P(v_a > v_b) = P(v_b < v_a)
            return invgamma_less_prob(shapes[b], scales[b], shapes[a], scales[a]), 0.0
        rng = stream.generator()
        draws = np.column_stack([sample_invgamma(sh, sc, rng, n_draws)
                                 for sh, sc in zip(shapes, scales)])
        ok = np.ones(n_draws, bool)
        for a, b in relations:
            ok &= draws[:, a] > draws[:, b]
        p = float(ok.mean())
        return p, math.sqrt(max(p * (1 - p), 1e-12) / n_draws)

    def sample_posterior(self, stream, n):
        rng = stream.generator()
        return np.column_stack([
            sample_invgamma((nj - 1) / 2.0, ssj / 2.0, rng, n)
            for nj, ssj in zip(self.n, self.ss)])

    def sample_prior(self, cm, stream, n):
        rng = stream.generator()
        J = len(self.names)
        return sample_invgamma(0.5, 1.0, rng, n * J).reshape(n, J)

    def homogeneity_probs(self) -> tuple:
        b0 = math.exp(self._log_bf_equality([set(range(len(self.names)))]))
        return b0 / (1.0 + b0), 1.0 / (1.0 + b0)

    def exploratory(self, stream, n_draws):
        p0, p1 = self.homogeneity_probs()
        return (["variances"], ["homogeneity", "no homogeneity"],
                np.array([[p0, p1]]))


@dataclass
class CorrelationModel:
    """Correlations of one or more groups.

    The posterior is Gaussian on the Fisher-z scale.  The prior is the joint
    uniform distribution over positive-definite correlation matrices, sampled
    once per group and shared across hypotheses: prior order probabilities are
    constraint-satisfaction fractions, prior equality densities come from a
    moment-matched Gaussian on the z scale.
    """

    names: list
    z_mean: np.ndarray
    z_cov: np.ndarray
    group_dims: list          # number of variables per group
    prior_stream: RandomStream
    prior_draws: int = 100_000
    exploratory_center: float = 0.0

    def __post_init__(self):
        self.z_mean = np.asarray(self.z_mean, float)
        self.z_cov = np.asarray(self.z_cov, float)
        expect = sum(d * (d - 1) // 2 for d in self.group_dims)
        if expect != len(self.names):
            raise ValueError(
                f"group dimensions imply {expect} correlations, "
                f"got {len(self.names)} names")
        self._prior_cache = {}

    @property
    def posterior(self) -> GaussianSpec:
        return GaussianSpec(self.z_mean, self.z_cov)

    def _prior_z(self, n: int) -> np.ndarray:
        if n not in self._prior_cache:
            blocks = []
            for gi, d in enumerate(self.group_dims):
                mats = sample_uniform_corr(d, self.prior_stream.child(gi), size=n)
                rows, cols = np.tril_indices(d, -1)
                blocks.append(np.arctanh(mats[:, rows, cols]))
            self._prior_cache = {n: np.hstack(blocks)}  # keep only the latest
        return self._prior_cache[n]

    def _z_constraints(self, cm: ConstraintMatrices) -> ConstraintMatrices:
        """Map constraints on correlations to the Fisher-z scale.

        Rows must compare one correlation to a constant in (-1, 1) or two
        correlations to each other; both transform monotonically.
        """

        def convert(R, rhs, kind):
            R = R.copy()
            rhs = rhs.copy()
            for i, (row, r) in enumerate(zip(R, rhs)):
                scale = np.abs(row).max()  # rows are scale-free
                if scale > 0:
                    row = row / scale
                    r = r / scale
                    R[i] = row
                    rhs[i] = r
                nz = np.nonzero(row)[0]
                vals = sorted(row[nz].tolist())
                if nz.size == 1:
                    if abs(r) >= 1.0:
                        raise ConstraintError(
                            f"correlation bound must lie in (-1, 1), got {r}")
                    rhs[i] = math.atanh(r)
                elif nz.size == 2 and vals == [-1.0, 1.0] and r == 0.0:
                    pass  # difference of two correlations, invariant under atanh
                else:
                    raise ConstraintError(
                        f"correlation {kind} constraints must compare one "
                        "correlation to a constant or to another correlation")
            return R, rhs

        RE, rE = convert(cm.RE, cm.rE, "equality")
        RO, rO = convert(cm.RO, cm.rO, "order")
        return ConstraintMatrices(RE, rE, RO, rO)

    def measures(self, cm, stream, n_draws) -> Measures:
        _check_equality_rank(cm.RE)
        zcm = self._z_constraints(cm)
        fit_e, fit_o, fit_se = _gaussian_half(self.posterior, zcm, stream.child(0), n_draws)

        comp_e, comp_o = 1.0, 1.0
        comp_e_se = comp_o_se = 0.0
        if zcm.n_eq or zcm.n_order:
            draws = self._prior_z(n_draws)
            if zcm.n_eq:
                vals = draws @ zcm.RE.T
                g = GaussianSpec(vals.mean(axis=0), np.atleast_2d(np.cov(vals.T)))
                comp_e = mvn_pdf_safe(zcm.rE, g)
            if zcm.n_order:
                ok = np.all(draws @ zcm.RO.T > zcm.rO, axis=1)
                comp_o = float(ok.mean())
                comp_o_se = math.sqrt(max(comp_o * (1 - comp_o), 1e-12) / draws.shape[0])
        return Measures(comp_e, comp_o, fit_e, fit_o,
                        comp_o_se=comp_o_se, fit_o_se=fit_se, comp_e_se=comp_e_se)

    def sample_posterior(self, stream, n):
        rng = stream.generator()
        L = np.linalg.cholesky(self.z_cov)
        return self.z_mean + rng.standard_normal((n, len(self.z_mean))) @ L.T

    def sample_prior(self, cm, stream, n):
        return self._prior_z(n)

    def exploratory(self, stream, n_draws):
        return _triad_rows(self, stream, n_draws, self.exploratory_center)


def mvn_pdf_safe(x, g: GaussianSpec) -> float:
    try:
        return math.exp(mvn_logpdf(x, g))
    except np.linalg.LinAlgError:
        return 0.0


# ---------------------------------------------------------------------------
# Exploratory, complement, and system-level evaluation


def _triad_cms(P: int, k: int, center: float):
    row = np.zeros((1, P))
    row[0, k] = 1.0
    r = np.array([center])
    z = np.zeros((0, P))
    zr = np.zeros(0)
    eq = ConstraintMatrices(row.copy(), r.copy(), z.copy(), zr.copy())
    lt = ConstraintMatrices(z.copy(), zr.copy(), -row.copy(), -r.copy())
    gt = ConstraintMatrices(z.copy(), zr.copy(), row.copy(), r.copy())
    return eq, lt, gt


def _triad_rows(model, stream: RandomStream, n_draws: int, center: float):
    P = len(model.names)
    rows = np.zeros((P, 3))
    for k in range(P):
        child = stream.child(k)
        bfs = []
        for ci, cm in enumerate(_triad_cms(P, k, center)):
            m = model.measures(cm, child.child(ci), n_draws)
            bfs.append(m.bf)
        bfs = np.array(bfs)
        rows[k] = bfs / bfs.sum()
    c = f"{center:g}"
    return list(model.names), [f"Pr(={c})", f"Pr(<{c})", f"Pr(>{c})"], rows


def exploratory_triad(model, stream: RandomStream, n_draws: int):
    """Per-parameter (equal / below / above) posterior probabilities."""
    return model.exploratory(stream, n_draws)


def grouped_effect_test(model, subset_names, stream: RandomStream, n_draws: int):
    """Joint test that a subset of coefficients is zero vs unconstrained."""
    if not subset_names:
        raise ValueError("empty coefficient subset")
    P = len(model.names)
    idx = [list(model.names).index(nm) for nm in subset_names]
    RE = np.zeros((len(idx), P))
    for r, i in enumerate(idx):
        RE[r, i] = 1.0
    cm = ConstraintMatrices(RE, np.zeros(len(idx)), np.zeros((0, P)), np.zeros(0))
    m = model.measures(cm, stream, n_draws)
    return m.bf / (1.0 + m.bf), 1.0 / (1.0 + m.bf)


def _cones_disjoint(a: ConstraintMatrices, b: ConstraintMatrices) -> bool:
    A = np.vstack([a.RO, b.RO])
    rhs = np.concatenate([a.rO, b.rO])
    return not _region_feasible(A, rhs)


def complement_measures(model, others, other_measures, stream: RandomStream,
                        n_draws: int) -> Measures:
    """Measures of the automatic complement hypothesis.

    Hypotheses containing equality constraints occupy measure-zero regions, so
    only order-only hypotheses contribute.  When their cones are pairwise
    disjoint the union is the sum of the already-computed order measures;
    otherwise the union is estimated by direct membership Monte Carlo (for the
    prior side, each cone is measured under its own hypothesis prior, reduced
    by the overlap with cones of earlier hypotheses).
    """
    order = [(cm, m) for cm, m in zip(others, other_measures) if cm.order_only()]
    if not order:
        return Measures()

    disjoint = all(_cones_disjoint(a, b)
                   for (a, _), (b, _) in itertools.combinations(order, 2))
    if disjoint:
        fit_u = sum(m.fit_o for _, m in order)
        comp_u = sum(m.comp_o for _, m in order)
        fit_se = math.sqrt(sum(m.fit_o_se ** 2 for _, m in order))
        comp_se = math.sqrt(sum(m.comp_o_se ** 2 for _, m in order))
    else:
        post = model.sample_posterior(stream.child(0), n_draws)
        inside = np.zeros(post.shape[0], bool)
        for cm, _ in order:
            inside |= np.all(post @ cm.RO.T > cm.rO, axis=1)
        fit_u = float(inside.mean())
        fit_se = math.sqrt(max(fit_u * (1 - fit_u), 1e-12) / post.shape[0])
        comp_u, var_u = 0.0, 0.0
        for t, (cm, _) in enumerate(order):
            draws = model.sample_prior(cm, stream.child(1 + t), n_draws)
            piece = np.all(draws @ cm.RO.T > cm.rO, axis=1)
            for prev, _ in order[:t]:
                piece &= ~np.all(draws @ prev.RO.T > prev.rO, axis=1)
            p = float(piece.mean())
            comp_u += p
            var_u += p * (1 - p) / draws.shape[0]
        comp_se = math.sqrt(var_u)

    fit_c = min(max(1.0 - fit_u, 0.0), 1.0)
    comp_c = min(max(1.0 - comp_u, 0.0), 1.0)
    return Measures(1.0, comp_c, 1.0, fit_c, comp_o_se=comp_se, fit_o_se=fit_se)


def evaluate_system(model, system, seed: int, n_draws: int) -> MeasureTable:
    """Measures, Bayes factors and PHPs for a full hypothesis system."""
    measures = [None] * len(system.hypotheses)
    regular = [(i, cm) for i, cm in enumerate(system.hypotheses) if not cm.complement]
    for i, cm in regular:
        stream = RandomStream(seed, i + 1)
        m = model.measures(cm, stream, n_draws)
        if m.max_order_se() > TARGET_SE:
            m = model.measures(cm, stream.child(9), 10 * n_draws)
        measures[i] = m

    labels = list(system.labels)
    weights = np.asarray(system.prior_weights, float)
    comp_idx = [i for i, cm in enumerate(system.hypotheses) if cm.complement]
    if comp_idx:
        i = comp_idx[0]
        others = [cm for j, cm in regular]
        m = complement_measures(model, others, [measures[j] for j, _ in regular],
                                RandomStream(seed, len(system.hypotheses) + 1), n_draws)
        measures[i] = m
        if m.comp_o <= 1e-12:
            # the listed hypotheses already cover the space; drop the complement
            del measures[i], labels[i]
            weights = weights[np.arange(len(weights)) != i]
            weights = weights / weights.sum()
    return MeasureTable(labels, measures, weights)


def aggregate_imputations(tables) -> MeasureTable:
    """Average the four measures across imputed datasets, then recombine."""
    if len(tables) < 2:
        raise ValueError("need at least two imputed datasets")
    first = tables[0]
    for t in tables[1:]:
        if t.labels != first.labels:
            raise ValueError("hypothesis systems differ across imputations")
        if not np.allclose(t.weights, first.weights):
            raise ValueError("prior weights differ across imputations")
    M = len(tables)
    out = []
    for i in range(len(first.measures)):
        ms = [t.measures[i] for t in tables]
        out.append(Measures(
            comp_e=float(np.mean([m.comp_e for m in ms])),
            comp_o=float(np.mean([m.comp_o for m in ms])),
            fit_e=float(np.mean([m.fit_e for m in ms])),
            fit_o=float(np.mean([m.fit_o for m in ms])),
            comp_e_se=float(np.sqrt(sum(m.comp_e_se ** 2 for m in ms)) / M),
            comp_o_se=float(np.sqrt(sum(m.comp_o_se ** 2 for m in ms)) / M),
            fit_e_se=float(np.sqrt(sum(m.fit_e_se ** 2 for m in ms)) / M),
            fit_o_se=float(np.sqrt(sum(m.fit_o_se ** 2 for m in ms)) / M),
        ))
    return MeasureTable(list(first.labels), out, first.weights.copy())
