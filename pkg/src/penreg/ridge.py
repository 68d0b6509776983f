"""Multi-penalty ridge regression with grouped covariates.

Each covariate group j carries its own quadratic penalty weight, so the
training criterion is

    (1/2)||y - X theta||^2_T + sum_j (lambda_j / 2) ||theta_(j)||^2

with ||.||^2_T the mean squared norm over training rows.  The fit is a
single symmetric positive definite solve; the derivative of the
coefficients in the penalty vector follows from implicit differentiation
of the normal equations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from penreg.data import Dataset, LambdaBox


@dataclass
class GroupedDesign:
    """Contiguous partition of design columns into J penalty groups."""

    group_sizes: list[int]

    def __post_init__(self) -> None:
        if not self.group_sizes or any(s < 1 for s in self.group_sizes):
            raise ValueError("group sizes must be positive")
        self.group_sizes = [int(s) for s in self.group_sizes]

    @property
    def J(self) -> int:
        return len(self.group_sizes)

    @property
    def p(self) -> int:
        return sum(self.group_sizes)

    @property
    def column_group(self) -> np.ndarray:
        """Group index of each design column."""
        return np.repeat(np.arange(self.J), self.group_sizes)

    def slices(self) -> list[slice]:
        edges = np.concatenate([[0], np.cumsum(self.group_sizes)])
        return [slice(int(edges[j]), int(edges[j + 1])) for j in range(self.J)]


@dataclass
class RidgeFit:
    """Solution of the grouped ridge normal equations at a fixed penalty."""

    theta: np.ndarray
    lam: np.ndarray
    design: GroupedDesign
    gram: np.ndarray  # X'X / n_T
    xty: np.ndarray  # X'y / n_T
    n_T: int
    penalty_diag: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.penalty_diag = self.lam[self.design.column_group]
        resid = self.gram @ self.theta + self.penalty_diag * self.theta - self.xty
        if np.max(np.abs(resid)) >= 1e-10:
            raise ValueError(
                f"normal equations not satisfied, residual {np.max(np.abs(resid)):.3e}"
            )

    def group_theta(self, j: int) -> np.ndarray:
        return self.theta[self.design.slices()[j]]


def fit_ridge(train: Dataset, design: GroupedDesign, lam: np.ndarray) -> RidgeFit:
    """Solve (X'X/n + diag(lambda by group)) theta = X'y/n.

    Zero penalties are allowed only when the Gram matrix is nonsingular.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (design.J,):
        raise ValueError(f"lambda has shape {lam.shape}, expected ({design.J},)")
    if np.any(lam < 0):
        raise ValueError("penalty parameters must be nonnegative")
    x = train.x
    if x.shape[1] != design.p:
        raise ValueError(f"design has {x.shape[1]} columns, groups cover {design.p}")
    n = train.n
    gram = x.T @ x / n
    xty = x.T @ train.y / n
    h = gram + np.diag(lam[design.column_group])
    try:
        c, low = scipy.linalg.cho_factor(h)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular ridge system; increase lambda") from exc
    theta = scipy.linalg.cho_solve((c, low), xty)
    return RidgeFit(theta=theta, lam=lam, design=design, gram=gram, xty=xty, n_T=n)


def ridge_predict(fit: RidgeFit, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (fit.design.p,):
        raise ValueError(f"x has shape {x.shape}, expected ({fit.design.p},)")
    return float(x @ fit.theta)


def ridge_predict_many(fit: RidgeFit, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != fit.design.p:
        raise ValueError(f"x has {x.shape[1]} columns, expected {fit.design.p}")
    return x @ fit.theta


def ridge_lambda_jacobian(fit: RidgeFit) -> np.ndarray:
    """d theta / d lambda, one column per group.

    Differentiating the normal equations gives
    H d(theta)/d(lambda_j) = -e_(j) theta_(j) with H the penalized Gram.
    """
    h = fit.gram + np.diag(fit.penalty_diag)
    rhs = np.zeros((fit.design.p, fit.design.J))
    for j, sl in enumerate(fit.design.slices()):
        rhs[sl, j] = -fit.theta[sl]
    c, low = scipy.linalg.cho_factor(h)
    return scipy.linalg.cho_solve((c, low), rhs)


def ridge_penalty_total(design: GroupedDesign, theta: np.ndarray) -> float:
    """Sum of the per-group ridge penalty functions P_j at unit weights."""
    theta = np.asarray(theta, dtype=float)
    return float(0.5 * theta @ theta)


def ridge_lipschitz(
    train: Dataset,
    design: GroupedDesign,
    lambda_box: LambdaBox,
    theta_star_penalties: float,
    noise_sq_norm: float,
):
    """Prediction-stability factor x -> C(x|T).

    ``theta_star_penalties`` is sum_j P_j at the population coefficients and
    ``noise_sq_norm`` is the mean squared training noise.  The returned
    callable bounds |g(lambda1)(x) - g(lambda2)(x)| / ||lambda1 - lambda2||.
    """
    from penreg.bounds import lemma1_factor

    x = train.x
    n = train.n
    gram = x.T @ x / n
    m_t = float(
        np.linalg.eigvalsh(gram + lambda_box.lambda_min * np.eye(design.p)).min()
    )
    c_star = lambda_box.lambda_max * theta_star_penalties
    slices = design.slices()
    # mean squared group norms over training rows
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
