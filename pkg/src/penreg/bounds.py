"""Stability constants and selection-error bound calculators.

The Lipschitz factor C(x|T) bounds how fast fitted predictions move per
unit change of the penalty vector; the covering-number and remainder
calculators turn that factor into explicit bound shapes for split tuning
and averaged cross-validation.  Unnamed absolute constants are explicit
caller inputs (default 1): these functions compute bound shapes, not
certified constants.  An empirical harness verifies the Lipschitz
inequality by direct refits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from penreg.data import Dataset, LambdaBox, TyingMap
from penreg.tuner import TuneConfig, default_starts, minimize_multistart


def lemma1_factor(m_t: float, lambda_min: float, noise_sq_norm: float,
                  c_star: float, ell_sq_train: np.ndarray,
                  ell_sq_point: np.ndarray) -> float:
    """Generic strong-convexity Lipschitz factor

    C(x|T) = (1 / (m(T) lambda_min))
             sqrt((||eps||_T^2 + 2 C*) sum_j ||l_j||_T^2 l_j(x)^2).
    """
    if m_t <= 0:
        raise ValueError("strong-convexity modulus m(T) must be positive")
    inner = (noise_sq_norm + 2.0 * c_star) * float(
        np.sum(np.asarray(ell_sq_train) * np.asarray(ell_sq_point))
    )
    return math.sqrt(max(inner, 0.0)) / (m_t * lambda_min)


def lambda_entropy(u: float, J: int, c_norm: float, delta_lambda: float) -> float:
    """Metric-entropy upper bound H(u) = J log((4 c Delta + 2u) / u)."""
    if u <= 0:
        raise ValueError("u must be positive")
    return J * math.log((4.0 * c_norm * delta_lambda + 2.0 * u) / u)


def entropy_integral(R: float, J: int, c_norm: float, delta_lambda: float,
                     n: int, c: float) -> float:
    """Entropy integral J(R) = c R sqrt(J log(c_norm Delta n + 1))."""
    if R <= 1.0 / n:
        raise ValueError(f"R must exceed 1/n = {1.0 / n}")
    return c * R * math.sqrt(J * math.log(c_norm * delta_lambda * n + 1.0))


@dataclass
class BoundInputs:
    """Scalar inputs to the bound calculators; constants default to 1."""

    J: int
    n: int
    n_V: int
    delta_lambda: float
    c_norm: float
    oracle_risk: float = 0.0
    c: float = 1.0
    n_T: int = 0
    a: float = 1.0
    K0: float = 1.0
    sigma0: float = 1.0
    h_tilde: float = 1.0
    c1: float = 1.0
    c_K0b: float = 1.0

    def __post_init__(self) -> None:
        if min(self.J, self.n, self.n_V) <= 0:
            raise ValueError("J, n, n_V must be positive")
        if self.delta_lambda < 0:
            raise ValueError("delta_lambda must be nonnegative")
        if self.oracle_risk < 0:
            raise ValueError("oracle_risk must be nonnegative")
        if min(self.c, self.a, self.K0, self.sigma0, self.h_tilde, self.c1,
               self.c_K0b, self.c_norm) <= 0:
            raise ValueError("all constants must be strictly positive")


def theorem1_delta2(inputs: BoundInputs) -> float:
    """Smallest delta^2 of the split-tuning oracle inequality:
    c max(A, sqrt(A R)) with A = J log(c_norm Delta n + 1) / n_V."""
    a = inputs.J * math.log(inputs.c_norm * inputs.delta_lambda * inputs.n + 1.0) / inputs.n_V
    return inputs.c * max(a, math.sqrt(a * inputs.oracle_risk))


def cv_remainder(inputs: BoundInputs) -> float:
    """Averaged cross-validation remainder

    c1 ((1+a)/a)^2 (J log n_V / n_V) K0 [log(Delta c n sigma0 + 1) + 1] h,

    with the Delta >= 1 convention applied."""
    delta = max(inputs.delta_lambda, 1.0)
    return (
        inputs.c1
        * ((1.0 + inputs.a) / inputs.a) ** 2
        * (inputs.J * math.log(inputs.n_V) / inputs.n_V)
        * inputs.K0
        * (math.log(delta * inputs.c_K0b * inputs.n * inputs.sigma0 + 1.0) + 1.0)
        * inputs.h_tilde
    )


@dataclass
class LipschitzReport:
    """Outcome of the empirical Lipschitz verification."""

    m_t: float
    c_star: float
    empirical_max_ratio: float
    pairs_tested: int
    per_point: list


def empirical_lipschitz_ratio(family, train: Dataset, box: LambdaBox, factor,
                              test_points: np.ndarray, m_pairs: int, seed: int
                              ) -> LipschitzReport:
    """Sample penalty pairs in the box, refit both, and record the largest
    ratio |g(l1)(x) - g(l2)(x)| / (C(x) ||l1 - l2||) over the test points.
    A valid factor keeps the ratio at or below 1."""
    if m_pairs < 1:
        raise ValueError("need at least one pair")
    rng = np.random.default_rng(seed)
    test_points = np.atleast_2d(np.asarray(test_points, dtype=float))
    cvals = np.array([factor(p) for p in test_points])
    usable = cvals > 0
    if not np.any(usable):
        raise ValueError("the factor vanishes at every test point")
    max_ratio = 0.0
    tested = 0
    while tested < m_pairs:
        l1, l2 = box.sample(rng), box.sample(rng)
        if np.array_equal(l1, l2):
            continue  # degenerate pair, resample
        f1 = family.fit(train, l1)
        f2 = family.fit(train, l2)
        gap = np.abs(family.predict_many(f1, test_points)
                     - family.predict_many(f2, test_points))
        denom = cvals * float(np.linalg.norm(l1 - l2))
        ratio = float(np.max(gap[usable] / denom[usable]))
        max_ratio = max(max_ratio, ratio)
        tested += 1
    return LipschitzReport(
        m_t=getattr(factor, "m_t", float("nan")),
        c_star=getattr(factor, "c_star", float("nan")),
        empirical_max_ratio=max_ratio,
        pairs_tested=tested,
        per_point=[(p, c) for p, c in zip(test_points, cvals)],
    )


def truth_loss(family, fit, val: Dataset) -> float:
    """Mean squared distance between predictions and the noise-free truth."""
    if val.truth is None:
        raise ValueError("validation set carries no truth vector")
    resid = val.truth - family.predict_many(fit, val.x)
    return float(np.mean(resid**2))


def excess_validation_loss(family, train: Dataset, val: Dataset,
                           lambda_hat: np.ndarray, box: LambdaBox,
                           tmap: TyingMap, config: TuneConfig | None = None):
    """Selection cost: truth loss at the selected penalty minus the best
    truth loss over the box.

    The inner minimum is found by the same multi-start optimizer applied
    to the truth-based objective, with the selected penalty injected as an
    extra start so the excess is nonnegative by construction.

    Returns (excess, oracle_loss, oracle_lambda).
    """
    if val.truth is None:
        raise ValueError("validation set carries no truth vector")
    cfg = config or TuneConfig()
    lambda_hat = np.asarray(lambda_hat, dtype=float)

    def objective(free):
        lam = free[tmap.assignment]
        return truth_loss(family, family.fit(train, lam), val)

    def gradient(free):
        lam = free[tmap.assignment]
        fit = family.fit(train, lam)
        resid = val.truth - family.predict_many(fit, val.x)
        jac = family.lambda_jacobian(fit)
        feats = family.param_features(fit, val.x)
        grad_full = -2.0 * (resid @ (feats @ jac)) / val.n
        return tmap.reduce(grad_full)

    hat_free = box.clip(lambda_hat[tmap.representatives()])
    starts = default_starts(box, tmap.k) + [hat_free]
    oracle_free, oracle_loss, _, _, _ = minimize_multistart(
        objective, gradient, box, tmap, starts, cfg
    )
    sel_loss = truth_loss(family, family.fit(train, lambda_hat), val)
    oracle_loss = min(oracle_loss, sel_loss)
    return sel_loss - oracle_loss, oracle_loss, oracle_free[tmap.assignment]
