import numpy as np
import pytest

from penreg.data import Dataset, LambdaBox
from penreg.ridge import (
    GroupedDesign,
    fit_ridge,
    ridge_lambda_jacobian,
    ridge_lipschitz,
    ridge_penalty_total,
    ridge_predict,
    ridge_predict_many,
)


def toy_1d():
    return Dataset(x=np.array([[1.0], [1.0]]), y=np.array([2.0, 2.0]))


def random_instance(seed, n=30, groups=(2, 1, 3)):
    rng = np.random.default_rng(seed)
    design = GroupedDesign(list(groups))
    x = rng.standard_normal((n, design.p))
    y = rng.standard_normal(n)
    return Dataset(x=x, y=y), design


class TestFit:
    def test_hand_solved_single_coordinate(self):
        fit = fit_ridge(toy_1d(), GroupedDesign([1]), np.array([1.0]))
        assert fit.theta[0] == pytest.approx(1.0, abs=1e-12)

    def test_infinite_penalty_limit(self):
        fit = fit_ridge(toy_1d(), GroupedDesign([1]), np.array([1e12]))
        assert abs(fit.theta[0]) < 3e-12

    def test_zero_penalty_matches_least_squares(self):
        d, design = random_instance(0)
        fit = fit_ridge(d, design, np.zeros(design.J))
        ols, *_ = np.linalg.lstsq(d.x, d.y, rcond=None)
        np.testing.assert_allclose(fit.theta, ols, atol=1e-10)

    def test_zero_penalty_singular_rejected(self):
        x = np.array([[1.0, 1.0], [2.0, 2.0]])  # rank 1
        d = Dataset(x=x, y=np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            fit_ridge(d, GroupedDesign([1, 1]), np.zeros(2))

    def test_matches_iterative_minimizer(self):
        d, design = random_instance(1)
        lam = np.array([0.5, 1.5, 0.2])
        fit = fit_ridge(d, design, lam)
        # plain gradient descent on the same objective, run to tolerance
        pen = lam[design.column_group]
        theta = np.zeros(design.p)
        gram = d.x.T @ d.x / d.n
        xty = d.x.T @ d.y / d.n
        step = 1.0 / (np.linalg.eigvalsh(gram).max() + pen.max())
        for _ in range(200_000):
            grad = gram @ theta + pen * theta - xty
            if np.max(np.abs(grad)) < 1e-12:
                break
            theta -= step * grad
        np.testing.assert_allclose(fit.theta, theta, atol=1e-8)

    def test_optimality_residual_invariant(self):
        d, design = random_instance(2)
        fit = fit_ridge(d, design, np.array([0.1, 2.0, 0.7]))
        resid = fit.gram @ fit.theta + fit.penalty_diag * fit.theta - fit.xty
        assert np.max(np.abs(resid)) < 1e-10


class TestPredict:
    def test_zero_input(self):
        d, design = random_instance(3)
        fit = fit_ridge(d, design, np.ones(design.J))
        assert ridge_predict(fit, np.zeros(design.p)) == 0.0

    def test_basis_vector_reads_coefficient(self):
        d, design = random_instance(4)
        fit = fit_ridge(d, design, np.ones(design.J))
        e2 = np.zeros(design.p)
        e2[2] = 1.0
        assert ridge_predict(fit, e2) == pytest.approx(fit.theta[2])

    def test_linearity(self):
        d, design = random_instance(5)
        fit = fit_ridge(d, design, np.ones(design.J))
        x = np.arange(design.p, dtype=float)
        assert ridge_predict(fit, 2 * x) == pytest.approx(2 * ridge_predict(fit, x))

    def test_dimension_mismatch(self):
        d, design = random_instance(6)
        fit = fit_ridge(d, design, np.ones(design.J))
        with pytest.raises(ValueError):
            ridge_predict(fit, np.zeros(design.p + 1))

    def test_predict_many_matches_single(self):
        d, design = random_instance(7)
        fit = fit_ridge(d, design, np.ones(design.J))
        pts = np.random.default_rng(0).standard_normal((4, design.p))
        many = ridge_predict_many(fit, pts)
        for i in range(4):
            assert many[i] == pytest.approx(ridge_predict(fit, pts[i]))


class TestJacobian:
    def test_hand_solved_derivative(self):
        fit = fit_ridge(toy_1d(), GroupedDesign([1]), np.array([1.0]))
        jac = ridge_lambda_jacobian(fit)
        assert jac[0, 0] == pytest.approx(-0.5, abs=1e-12)

    def test_finite_difference_oracle(self):
        d, design = random_instance(8)
        lam = np.array([0.3, 1.1, 0.6])
        jac = ridge_lambda_jacobian(fit_ridge(d, design, lam))
        h = 1e-6
        for j in range(design.J):
            up, dn = lam.copy(), lam.copy()
            up[j] += h
            dn[j] -= h
            fd = (fit_ridge(d, design, up).theta - fit_ridge(d, design, dn).theta) / (2 * h)
            np.testing.assert_allclose(jac[:, j], fd, rtol=1e-5, atol=1e-10)

    def test_huge_penalty_flat(self):
        d, design = random_instance(9)
        jac = ridge_lambda_jacobian(fit_ridge(d, design, np.full(design.J, 1e10)))
        assert np.max(np.abs(jac)) < 1e-12

    def test_orthogonal_groups_decouple(self):
        rng = np.random.default_rng(10)
        design = GroupedDesign([2, 2])
        # block design: groups live on disjoint rows, so the Gram is block diagonal
        x = np.zeros((20, 4))
        x[:10, :2] = rng.standard_normal((10, 2))
        x[10:, 2:] = rng.standard_normal((10, 2))
        d = Dataset(x=x, y=rng.standard_normal(20))
        jac = ridge_lambda_jacobian(fit_ridge(d, design, np.array([0.5, 0.8])))
        assert np.max(np.abs(jac[:2, 1])) < 1e-12
        assert np.max(np.abs(jac[2:, 0])) < 1e-12


class TestLipschitz:
    def setup_method(self):
        rng = np.random.default_rng(11)
        self.design = GroupedDesign([2, 2])
        x = rng.standard_normal((40, 4))
        theta_star = rng.standard_normal(4)
        self.noise = 0.3 * rng.standard_normal(40)
        self.d = Dataset(x=x, y=x @ theta_star + self.noise, noise=self.noise)
        self.box = LambdaBox(0.1, 5.0, 2)
        self.factor = ridge_lipschitz(
            self.d,
            self.design,
            self.box,
            ridge_penalty_total(self.design, theta_star),
            float(np.mean(self.noise**2)),
        )

    def test_zero_point(self):
        assert self.factor(np.zeros(4)) == 0.0

    def test_homogeneity(self):
        x = np.array([1.0, -2.0, 0.5, 3.0])
        assert self.factor(2 * x) == pytest.approx(2 * self.factor(x), rel=1e-12)

    def test_bounds_prediction_differences(self):
        rng = np.random.default_rng(12)
        pts = rng.standard_normal((20, 4))
        worst = 0.0
        for _ in range(60):
            l1, l2 = self.box.sample(rng), self.box.sample(rng)
            f1 = fit_ridge(self.d, self.design, l1)
            f2 = fit_ridge(self.d, self.design, l2)
            gap = np.abs(ridge_predict_many(f1, pts) - ridge_predict_many(f2, pts))
            cvals = np.array([self.factor(p) for p in pts])
            worst = max(worst, float(np.max(gap / (cvals * np.linalg.norm(l1 - l2)))))
        assert worst <= 1 + 1e-9
