"""Additive smoothing-spline model with one curvature penalty per component.

Each additive component g_j lives in the second-order Sobolev space on
[0, 1] and is penalized by lambda_j times the integrated squared second
derivative.  By the representer property the minimizer is

    g(x) = alpha0 + sum_j [ alpha1_j x_j + sum_i theta_ij R(knot_ij, x_j) ]

with the reproducing kernel R of the curvature seminorm, so fitting is a
finite-dimensional quadratic problem in (alpha0, alpha1, theta).

Stationarity in theta forces every theta_j to equal r / (n lambda_j) for
the shared training residual r, so the whole solve reduces to one n x n
system (I + sum_j K_j / (n lambda_j)) r = y - A alpha with A = [1, x],
plus the normal equations A' r = 0 for the linear part.  The same
structure gives the derivative of all coefficients in lambda by implicit
differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from penreg.data import Dataset, LambdaBox

CLAMP_HI = 1.05  # evaluation points slightly beyond the training range


def sobolev_kernel(s, t):
    """Reproducing kernel of the curvature seminorm on [0, 1].

    R(s, t) = integral of (s - u)_+ (t - u)_+ du, which evaluates to
    s t m - ((s + t) / 2) m^2 + m^3 / 3 with m = min(s, t).  Symmetric,
    zero when either argument is zero, linear in t for t >= s.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise ValueError("kernel arguments must be nonnegative")
    m = np.minimum(s, t)
    return s * t * m - 0.5 * (s + t) * m * m + m * m * m / 3.0


def kernel_cross(knots: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Matrix R(points_a, knots_i), one row per evaluation point."""
    return sobolev_kernel(points[:, None], knots[None, :])


@dataclass
class Rescaler:
    """Affine maps taking each coordinate's (lo, hi) range onto [0, 1]."""

    bounds: list[tuple[float, float]]

    def __post_init__(self) -> None:
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ValueError(f"need lo < hi, got ({lo}, {hi})")

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return np.clip((x - lo) / (hi - lo), 0.0, CLAMP_HI)


@dataclass
class GamFit:
    """Fitted additive smoothing-spline model.

    ``alpha0`` is the raw intercept.  The component accessor subtracts each
    component's training mean ``centers[j]``, so centered component values
    average to zero and predictions equal
    alpha0 + sum(centers) + sum of centered component values.
    """

    alpha0: float
    alpha1: np.ndarray  # (J,)
    theta: np.ndarray  # (n_T, J)
    knots: np.ndarray  # (n_T, J), rescaled training covariates
    rescale: Rescaler
    grams: list[np.ndarray]  # J kernel matrices K_j
    lam: np.ndarray
    centers: np.ndarray  # (J,), training means of the raw components
    residual: np.ndarray = field(repr=False)  # shared training residual r
    solver_cho: tuple = field(repr=False)  # factor of I + sum K_j/(n lam_j)
    a_mat: np.ndarray = field(repr=False)  # [1, knots]
    ata_cho: tuple = field(repr=False)  # factor of A' M^-1 A

    @property
    def n_T(self) -> int:
        return self.knots.shape[0]

    @property
    def J(self) -> int:
        return self.knots.shape[1]

    def component_values(self, j: int, xj_rescaled: np.ndarray) -> np.ndarray:
        """Centered component g_j at already-rescaled coordinate values."""
        xj = np.asarray(xj_rescaled, dtype=float)
        cross = kernel_cross(self.knots[:, j], xj)
        return self.alpha1[j] * xj + cross @ self.theta[:, j] - self.centers[j]


def _dedup_knots(col: np.ndarray) -> np.ndarray:
    """Break exact ties with deterministic occurrence-ranked jitter."""
    rng_span = col.max() - col.min()
    eps = 1e-9 * (rng_span if rng_span > 0 else 1.0)
    out = col.copy()
    order = np.argsort(col, kind="stable")
    sorted_vals = col[order]
    run = 0
    for pos in range(1, col.size):
        if sorted_vals[pos] == sorted_vals[pos - 1]:
            run += 1
            out[order[pos]] += run * eps
        else:
            run = 0
    return out


def gam_workspace(train: Dataset, bounds) -> dict:
    """Penalty-independent solver state: rescaled knots, kernel Gram
    matrices, and the linear-part design [1, knots]."""
    j_dim = train.x.shape[1]
    rescale = Rescaler(bounds=list(bounds))
    if len(rescale.bounds) != j_dim:
        raise ValueError("bounds length must match the number of covariates")
    knots = rescale.apply(train.x)
    for j in range(j_dim):
        if np.unique(knots[:, j]).size < knots.shape[0]:
            knots[:, j] = _dedup_knots(knots[:, j])
    grams = [
        sobolev_kernel(knots[:, j][:, None], knots[:, j][None, :]) for j in range(j_dim)
    ]
    a = np.column_stack([np.ones(knots.shape[0]), knots])
    if np.linalg.matrix_rank(a.T @ a) < a.shape[1]:
        raise ValueError("singular linear part; covariates are collinear")
    return {"rescale": rescale, "knots": knots, "grams": grams, "a": a}


def fit_gam(train: Dataset, lam: np.ndarray, bounds, workspace: dict | None = None
            ) -> GamFit:
    """Penalized least squares fit of the additive spline model.

    Minimizes the mean squared training error plus
    sum_j (lambda_j / 2) theta_j' K_j theta_j.
    """
    lam = np.asarray(lam, dtype=float)
    n, j_dim = train.x.shape
    if lam.shape != (j_dim,):
        raise ValueError(f"lambda has shape {lam.shape}, expected ({j_dim},)")
    if np.any(lam <= 0):
        raise ValueError("penalty parameters must be strictly positive")
    if workspace is None:
        workspace = gam_workspace(train, bounds)
    rescale = workspace["rescale"]
    knots = workspace["knots"]
    grams = workspace["grams"]

    m = np.eye(n)
    for j in range(j_dim):
        m += grams[j] / (n * lam[j])
    # eigenvalues of M are >= 1, so the factorization cannot fail
    solver_cho = scipy.linalg.cho_factor(m)
    a = workspace["a"]
    minv_a = scipy.linalg.cho_solve(solver_cho, a)
    minv_y = scipy.linalg.cho_solve(solver_cho, train.y)
    ata_cho = scipy.linalg.cho_factor(a.T @ minv_a)
    alpha = scipy.linalg.cho_solve(ata_cho, a.T @ minv_y)
    r = minv_y - minv_a @ alpha
    theta = r[:, None] / (n * lam[None, :])

    centers = np.array(
        [alpha[1 + j] * knots[:, j].mean() + (grams[j] @ theta[:, j]).mean() for j in range(j_dim)]
    )
    return GamFit(
        alpha0=float(alpha[0]),
        alpha1=alpha[1:].copy(),
        theta=theta,
        knots=knots,
        rescale=rescale,
        grams=grams,
        lam=lam,
        centers=centers,
        residual=r,
        solver_cho=solver_cho,
        a_mat=a,
        ata_cho=ata_cho,
    )


def gam_predict_many(fit: GamFit, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != fit.J:
        raise ValueError(f"x has {x.shape[1]} columns, expected {fit.J}")
    xt = fit.rescale.apply(x)
    out = np.full(x.shape[0], fit.alpha0 + fit.centers.sum())
    for j in range(fit.J):
        out += fit.component_values(j, xt[:, j])
    return out


def gam_predict(fit: GamFit, x: np.ndarray) -> float:
    return float(gam_predict_many(fit, np.atleast_2d(x))[0])


def gam_fitted_values(fit: GamFit) -> np.ndarray:
    """In-sample predictions at the training rows."""
    out = np.full(fit.n_T, fit.alpha0 + fit.centers.sum())
    for j in range(fit.J):
        out += fit.component_values(j, fit.knots[:, j])
    return out


def gam_lambda_jacobian(fit: GamFit) -> np.ndarray:
    """Derivative of the stacked coefficients (alpha0, alpha1, theta) in lambda.

    Differentiating (I + S) r = y - A alpha and A' r = 0 in lambda_l gives
    (I + S) dr + A dalpha = K_l r / (n lambda_l^2) with A' dr = 0, and
    dtheta_j = dr / (n lambda_j) - [j == l] r / (n lambda_l^2).
    """
    n, j_dim = fit.n_T, fit.J
    p = 1 + j_dim + n * j_dim
    jac = np.zeros((p, j_dim))
    for ell in range(j_dim):
        b = fit.grams[ell] @ fit.residual / (n * fit.lam[ell] ** 2)
        minv_b = scipy.linalg.cho_solve(fit.solver_cho, b)
        dalpha = scipy.linalg.cho_solve(fit.ata_cho, fit.a_mat.T @ minv_b)
        dr = minv_b - scipy.linalg.cho_solve(fit.solver_cho, fit.a_mat @ dalpha)
        dtheta = dr[:, None] / (n * fit.lam[None, :])
        dtheta[:, ell] -= fit.residual / (n * fit.lam[ell] ** 2)
        jac[0, ell] = dalpha[0]
        jac[1 : 1 + j_dim, ell] = dalpha[1:]
        jac[1 + j_dim :, ell] = dtheta.reshape(-1, order="F")
    return jac


def gam_param_features(fit: GamFit, x: np.ndarray) -> np.ndarray:
    """Feature map phi(x) with prediction = phi(x) . (alpha0, alpha1, theta)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xt = fit.rescale.apply(x)
    blocks = [np.ones((x.shape[0], 1)), xt]
    for j in range(fit.J):
        blocks.append(kernel_cross(fit.knots[:, j], xt[:, j]))
    return np.hstack(blocks)


@dataclass
class SplineDiagnostics:
    """Second derivatives at interior knots and minimal knot spacings."""

    gamma: list[np.ndarray]
    h_min: np.ndarray
    sorted_knots: list[np.ndarray]
    sorted_values: list[np.ndarray]


def _natural_spline_qr(knots_sorted: np.ndarray):
    """Banded second-difference matrices of the natural cubic spline."""
    n = knots_sorted.size
    h = np.diff(knots_sorted)
    q = np.zeros((n, n - 2))
    r = np.zeros((n - 2, n - 2))
    for i in range(1, n - 1):
        c = i - 1
        q[i - 1, c] = 1.0 / h[i - 1]
        q[i, c] = -1.0 / h[i - 1] - 1.0 / h[i]
        q[i + 1, c] = 1.0 / h[i]
        r[c, c] = (h[i - 1] + h[i]) / 3.0
        if c + 1 < n - 2:
            r[c, c + 1] = h[i] / 6.0
            r[c + 1, c] = h[i] / 6.0
    return q, r


def spline_diagnostics(fit: GamFit) -> SplineDiagnostics:
    """Per-component second derivatives gamma_j = R^-1 Q' g_j at the knots."""
    gammas, hmins, sknots, svals = [], [], [], []
    for j in range(fit.J):
        order = np.argsort(fit.knots[:, j])
        ks = fit.knots[:, j][order]
        if np.unique(ks).size < 3:
            raise ValueError(f"component {j} has fewer than 3 distinct knots")
        gvals = (fit.grams[j] @ fit.theta[:, j])[order]
        q, r = _natural_spline_qr(ks)
        gamma = scipy.linalg.solve(r, q.T @ gvals)
        gammas.append(gamma)
        hmins.append(np.diff(ks).min())
        sknots.append(ks)
        svals.append(gvals)
    return SplineDiagnostics(
        gamma=gammas, h_min=np.asarray(hmins), sorted_knots=sknots, sorted_values=svals
    )


def spline_interp_eval(diag: SplineDiagnostics, j: int, t: np.ndarray) -> np.ndarray:
    """Evaluate the nonlinear part of component j from knot values and
    second derivatives via the piecewise-cubic interpolation formula."""
    ks = diag.sorted_knots[j]
    g = diag.sorted_values[j]
    gam_full = np.concatenate([[0.0], diag.gamma[j], [0.0]])  # natural boundary
    t = np.asarray(t, dtype=float)
    idx = np.clip(np.searchsorted(ks, t, side="right") - 1, 0, ks.size - 2)
    tl, tr = ks[idx], ks[idx + 1]
    h = tr - tl
    left, right = tr - t, t - tl
    lin = (left * g[idx] + right * g[idx + 1]) / h
    cub = (left * right / 6.0) * (
        (1.0 + left / h) * gam_full[idx] + (1.0 + right / h) * gam_full[idx + 1]
    )
    return lin - cub


def gam_hessian(fit: GamFit, lam: np.ndarray, jitter: float = 1e-10) -> np.ndarray:
    """Full Hessian of the objective in (alpha0, alpha1, theta) at penalty lam.

    A small diagonal jitter (relative to each Gram's trace scale) is added
    to the kernel blocks so the matrix is positive definite even when a
    rescaled knot sits exactly at zero.
    """
    n, j_dim = fit.n_T, fit.J
    lam = np.asarray(lam, dtype=float)
    grams = [
        k + jitter * (np.trace(k) / n if np.trace(k) > 0 else 1.0) * np.eye(n)
        for k in fit.grams
    ]
    phi = np.hstack([fit.a_mat] + grams)
    h = phi.T @ phi / n
    off = 1 + j_dim
    for j in range(j_dim):
        sl = slice(off + j * n, off + (j + 1) * n)
        h[sl, sl] += lam[j] * grams[j]
    return h


def gam_lipschitz(fit: GamFit, lambda_box: LambdaBox, mode: str, *,
                  noise_sq_norm: float = 0.0, c_star: float = 0.0,
                  train_y: np.ndarray | None = None, constant: float = 1.0):
    """Prediction-stability factor x -> C(x|T).

    Mode "lemma1_numeric" uses the generic strong-convexity bound with the
    feature-norm weights; mode "sobolev_closed_form" evaluates the explicit
    spline-specific expression (reporting only, with its absolute constant
    exposed as ``constant``).
    """
    from penreg.bounds import lemma1_factor

    if mode == "lemma1_numeric":
        hess = gam_hessian(fit, np.full(fit.J, lambda_box.lambda_min))
        m_t = float(np.linalg.eigvalsh(hess).min())
        train_feats = [
            np.column_stack(
                [fit.knots[:, j], fit.grams[j]]
            )
            for j in range(fit.J)
        ]
        ell_sq_t = np.array([np.mean(np.sum(f * f, axis=1)) for f in train_feats])

        def factor(point: np.ndarray) -> float:
            point = np.atleast_1d(np.asarray(point, dtype=float))
            xt = fit.rescale.apply(point[None, :])[0]
            ell_sq_x = np.array(
                [
                    xt[j] ** 2
                    + np.sum(sobolev_kernel(fit.knots[:, j], np.full(fit.n_T, xt[j])) ** 2)
                    for j in range(fit.J)
                ]
            )
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

    if mode == "sobolev_closed_form":
        if train_y is None:
            raise ValueError("sobolev_closed_form needs the training responses")
        diag = spline_diagnostics(fit)
        a = fit.a_mat
        pinv_norm = 1.0 / np.linalg.svd(a, compute_uv=False).min()
        n = fit.n_T
        y_norm = float(np.sqrt(np.mean(np.asarray(train_y, dtype=float) ** 2)))
        value = (
            (fit.J * pinv_norm + np.sum(constant / diag.h_min ** 2))
            * np.sqrt(fit.J)
            * n
            * lambda_box.lambda_min ** -2
            * y_norm
        )

        def factor(point: np.ndarray) -> float:
            return float(value)

        factor.value = float(value)
        return factor

    raise ValueError(f"unknown mode {mode!r}")
