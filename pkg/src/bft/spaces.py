"""Linear-algebra support for constrained hypotheses.

Builds the one-to-one transformation that splits a parameter vector into an
equality-restricted block, an order-restricted block, and a nuisance block.
When the order rows are linearly dependent given the equality rows, a reduced
order system on the post-equality coordinates is produced instead, using
Moore-Penrose inverses.  Also locates the boundary point of the constrained
region, where default priors are centered.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

_RANK_TOL = 1e-10


class ConstraintError(ValueError):
    pass


@dataclass
class Transformation:
    """Stacked transformation and (optionally) the reduced order system.

    In the full-rank case ``T`` is ``[RE; RO; D]`` with ``D`` a QR completion,
    and ``reduced`` is None.  When RO is rank-deficient given RE, ``T`` is the
    invertible ``[RE; D]`` with ``D`` spanning the orthogonal complement of the
    equality rows, and ``reduced = (RO_tilde, rO_tilde)`` expresses the order
    constraints on the coordinates ``theta_O = D @ theta``.
    """

    T: np.ndarray
    D: np.ndarray
    reduced: tuple | None = None


def _rank(M: np.ndarray) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > _RANK_TOL * s[0])) if s.size else 0


def _qr_completion(rows: np.ndarray, P: int) -> np.ndarray:
    """Rows spanning the orthogonal complement of the row space of `rows`."""
    if rows.shape[0] == 0:
        return np.eye(P)
    q = _rank(rows)
    Q, _ = qr(rows.T, mode="full")
    return Q[:, q:].T


def _projector_rows(RE: np.ndarray, P: int) -> np.ndarray:
    """Independent rows of the projector onto the complement of span(RE).

    The projector I - RE^T (RE RE^T)^{-1} RE has rank P - q_E; a maximal
    linearly independent subset of its rows is selected by pivoted QR, which
    is deterministic for a given input.
    """
    proj = np.eye(P) - RE.T @ np.linalg.solve(RE @ RE.T, RE)
    r = _rank(proj)
    _, _, piv = qr(proj.T, mode="economic", pivoting=True)
    return proj[np.sort(piv[:r])]


def build_transformation(cm, P: int) -> Transformation:
    """Build the transformation isolating equality/order/nuisance blocks."""
    RE, RO = cm.RE, cm.RO
    if RE.shape[0]:
        if _rank(RE) < RE.shape[0]:
            raise ConstraintError("redundant equality constraints")
        aug = np.hstack([RE, cm.rE[:, None]])
        if _rank(aug) > _rank(RE):
            raise ConstraintError("infeasible hypothesis: inconsistent equalities")

    stacked = np.vstack([RE, RO])
    full_rank = _rank(stacked) == RE.shape[0] + RO.shape[0]
    if full_rank:
        D = _qr_completion(stacked, P)
        T = np.vstack([RE, RO, D])
        return Transformation(T=T, D=D, reduced=None)

    # order rows dependent given the equalities: reduce onto the
    # post-equality coordinates theta_O = D_tilde @ theta
    if RE.shape[0]:
        D_tilde = _projector_rows(RE, P)
        rE_sol = np.linalg.pinv(RE) @ cm.rE
    else:
        D_tilde = np.eye(P)
        rE_sol = np.zeros(P)
    RO_tilde = RO @ np.linalg.pinv(D_tilde)
    rO_tilde = cm.rO - RO @ rE_sol
    T = np.vstack([RE, D_tilde])
    return Transformation(T=T, D=D_tilde, reduced=(RO_tilde, rO_tilde))


@dataclass
class BoundaryPoint:
    theta0: np.ndarray
    exact: bool = True


def boundary_point(cm) -> BoundaryPoint:
    """Minimum-norm point on the boundary of the constrained region.

    Solves the stacked system [RE; RO] theta = [rE; rO] (order constraints
    active).  If that system is inconsistent, the equalities are satisfied
    exactly and the order bounds matched in least squares, with exact=False.
    """
    P = cm.P
    stacked = np.vstack([cm.RE, cm.RO])
    rhs = np.concatenate([cm.rE, cm.rO])
    if stacked.shape[0] == 0:
        return BoundaryPoint(np.zeros(P), exact=True)
    theta, *_ = np.linalg.lstsq(stacked, rhs, rcond=None)
    if np.allclose(stacked @ theta, rhs, atol=1e-10 * (1.0 + np.abs(rhs).max())):
        return BoundaryPoint(theta, exact=True)
    if cm.n_eq == 0:
        return BoundaryPoint(theta, exact=False)
    base = np.linalg.pinv(cm.RE) @ cm.rE
    N = _qr_completion(cm.RE, P).T  # columns span null(RE)
    z, *_ = np.linalg.lstsq(cm.RO @ N, cm.rO - cm.RO @ base, rcond=None)
    return BoundaryPoint(base + N @ z, exact=False)
