"""Grouped elastic net with one penalty weight per covariate group.

The training criterion is

    (1/2)||y - X theta||^2_T + sum_j lambda_j (||theta_(j)||_1
                                               + (w/2)||theta_(j)||^2)

solved by cyclic coordinate descent with soft-thresholding.  Every
returned fit carries a post-hoc KKT certificate.  On the active set the
solution is smooth in lambda, so its derivative follows from the reduced
Hessian there.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from penreg.data import Dataset, LambdaBox
from penreg.ridge import GroupedDesign

KKT_TOL = 1e-8
BREAKPOINT_TOL = 1e-10
MAX_SWEEPS = 100_000


class EnetConvergenceError(RuntimeError):
    """Coordinate descent hit the sweep cap before the change tolerance."""

    def __init__(self, sweeps: int, kkt_residual: float):
        super().__init__(
            f"no convergence in {sweeps} sweeps, KKT residual {kkt_residual:.3e}"
        )
        self.kkt_residual = kkt_residual


class BreakpointError(RuntimeError):
    """The active set is changing at this lambda; the derivative is undefined."""


@dataclass
class EnetFit:
    """Coordinate-descent solution with its KKT certificate."""

    theta: np.ndarray
    lam: np.ndarray
    w: float
    design: GroupedDesign
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    kkt_residual: float = 0.0
    thresholded_at: float | None = None

    @property
    def n_T(self) -> int:
        return self.x.shape[0]

    @property
    def active(self) -> np.ndarray:
        return np.nonzero(self.theta != 0.0)[0]


def _kkt_residual(x, y, theta, lam_by_col, w) -> float:
    n = x.shape[0]
    grad = -x.T @ (y - x @ theta) / n
    worst = 0.0
    for i in range(theta.size):
        if theta[i] != 0.0:
            worst = max(
                worst,
                abs(grad[i] + lam_by_col[i] * (np.sign(theta[i]) + w * theta[i])),
            )
        else:
            worst = max(worst, max(0.0, abs(grad[i]) - lam_by_col[i]))
    return worst


def fit_enet(train: Dataset, design: GroupedDesign, lam: np.ndarray, w: float) -> EnetFit:
    """Cyclic coordinate descent until the largest coordinate change is
    below 1e-12, then certify the KKT conditions."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (design.J,):
        raise ValueError(f"lambda has shape {lam.shape}, expected ({design.J},)")
    if np.any(lam <= 0) or w <= 0:
        raise ValueError("lambda and w must be strictly positive")
    x, y = train.x, train.y
    if x.shape[1] != design.p:
        raise ValueError(f"design has {x.shape[1]} columns, groups cover {design.p}")
    n = x.shape[0]
    lam_by_col = lam[design.column_group]
    col_sq = np.sum(x * x, axis=0) / n
    theta = np.zeros(design.p)
    resid = y.copy()
    for sweep in range(MAX_SWEEPS):
        max_change = 0.0
        for i in range(design.p):
            old = theta[i]
            rho = x[:, i] @ resid / n + col_sq[i] * old
            li = lam_by_col[i]
            new = np.sign(rho) * max(abs(rho) - li, 0.0) / (col_sq[i] + li * w)
            if new != old:
                resid -= x[:, i] * (new - old)
                theta[i] = new
                max_change = max(max_change, abs(new - old))
        if max_change < 1e-12:
            break
    else:
        raise EnetConvergenceError(MAX_SWEEPS, _kkt_residual(x, y, theta, lam_by_col, w))
    kkt = _kkt_residual(x, y, theta, lam_by_col, w)
    if kkt >= KKT_TOL:
        raise EnetConvergenceError(sweep + 1, kkt)
    return EnetFit(theta=theta, lam=lam, w=w, design=design, x=x, y=y, kkt_residual=kkt)


def threshold_fit(fit: EnetFit, k0prime: float) -> EnetFit:
    """Clip each coefficient to [-k0prime, k0prime]; idempotent."""
    if k0prime <= 0:
        raise ValueError("threshold must be strictly positive")
    theta = np.sign(fit.theta) * np.minimum(np.abs(fit.theta), k0prime)
    return EnetFit(
        theta=theta,
        lam=fit.lam,
        w=fit.w,
        design=fit.design,
        x=fit.x,
        y=fit.y,
        kkt_residual=fit.kkt_residual,
        thresholded_at=k0prime,
    )


def enet_predict(fit: EnetFit, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (fit.design.p,):
        raise ValueError(f"x has shape {x.shape}, expected ({fit.design.p},)")
    return float(x @ fit.theta)


def enet_predict_many(fit: EnetFit, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return x @ fit.theta


def enet_active_jacobian(fit: EnetFit) -> np.ndarray:
    """d theta / d lambda on the active set; zero rows elsewhere.

    Raises BreakpointError when a coordinate sits at the boundary between
    active and inactive, where the solution path has a kink.
    """
    n = fit.n_T
    lam_by_col = fit.lam[fit.design.column_group]
    grad = -fit.x.T @ (fit.y - fit.x @ fit.theta) / n
    for i in range(fit.design.p):
        near_zero = abs(fit.theta[i]) < BREAKPOINT_TOL
        tight = abs(abs(grad[i]) - lam_by_col[i]) < BREAKPOINT_TOL
        if near_zero and tight:
            raise BreakpointError(f"coordinate {i} is at an active-set breakpoint")
    active = fit.active
    jac = np.zeros((fit.design.p, fit.design.J))
    if active.size == 0:
        return jac
    xa = fit.x[:, active]
    h = xa.T @ xa / n + np.diag(lam_by_col[active] * fit.w)
    groups = fit.design.column_group[active]
    rhs = np.zeros((active.size, fit.design.J))
    for a, i in enumerate(active):
        rhs[a, groups[a]] = -(np.sign(fit.theta[i]) + fit.w * fit.theta[i])
    jac[active] = scipy.linalg.solve(h, rhs, assume_a="pos")
    return jac


def enet_penalty_total(design: GroupedDesign, theta: np.ndarray, w: float) -> float:
    """Sum over groups of ||theta_(j)||_1 + (w/2)||theta_(j)||^2."""
    theta = np.asarray(theta, dtype=float)
    return float(np.sum(np.abs(theta)) + 0.5 * w * theta @ theta)


def enet_lipschitz(
    train: Dataset,
    design: GroupedDesign,
    lambda_box: LambdaBox,
    w: float,
    theta_star_penalties: float,
    noise_sq_norm: float,
):
    """Prediction-stability factor with the strong-convexity modulus
    m(T) = lambda_min * w guaranteed by the quadratic penalty part."""
    from penreg.bounds import lemma1_factor

    x = train.x
    m_t = lambda_box.lambda_min * w
    c_star = lambda_box.lambda_max * theta_star_penalties
    slices = design.slices()
    ell_sq_t = np.array([np.mean(np.sum(x[:, sl] ** 2, axis=1)) for sl in slices])

    def factor(point: np.ndarray) -> float:
        point = np.asarray(point, dtype=float)
        ell_sq_x = np.array([np.sum(point[sl] ** 2) for sl in slices])
        return lemma1_factor(
            m_t=m_t,
            lambda_min=lambda_box.lambda_min,
            noise_sq_norm=noise_sq_norm,
            c_star=c_star,
            ell_sq_train=ell_sq_t,
            ell_sq_point=ell_sq_x,
        )

    factor.m_t = m_t
    factor.c_star = c_star
    return factor
