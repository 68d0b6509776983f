import numpy as np
import pytest

from penreg.data import (
    Dataset,
    LambdaBox,
    SimSpec,
    SplitPlan,
    TyingMap,
    expand_lambda,
    generate_simulation,
    make_kfold,
    split_train_val,
    tying_nested,
)
from penreg.ridge import GroupedDesign, fit_ridge
from penreg.tuner import (
    CvResult,
    GamFamily,
    RidgeFamily,
    TuneConfig,
    averaged_predict,
    default_starts,
    hyper_gradient,
    minimize_multistart,
    tune_grid,
    tune_kfold,
    tune_multistart,
    tune_train_val,
    validation_loss,
)


def ridge_toy():
    """train x=(1,1), y=(2,2): theta_hat(lambda) = 2/(1+lambda)."""
    return Dataset(x=np.array([[1.0], [1.0]]), y=np.array([2.0, 2.0]))


def random_ridge(seed, n=40, groups=(2, 2)):
    rng = np.random.default_rng(seed)
    design = GroupedDesign(list(groups))
    x = rng.standard_normal((n, design.p))
    y = x @ rng.standard_normal(design.p) + 0.3 * rng.standard_normal(n)
    return Dataset(x=x, y=y), design


class TestValidationLoss:
    def test_perfect_fit_zero(self):
        d, design = random_ridge(0)
        fam = RidgeFamily(design)
        fit = fit_ridge(d, design, np.full(design.J, 1e-12))
        perfect = Dataset(x=d.x, y=d.x @ fit.theta)
        assert validation_loss(fam, fit, perfect) == pytest.approx(0.0, abs=1e-20)

    def test_constant_zero_predictor(self):
        fam = RidgeFamily(GroupedDesign([1]))
        fit = fit_ridge(ridge_toy(), GroupedDesign([1]), np.array([1e12]))
        val = Dataset(x=np.array([[0.0], [0.0]]), y=np.array([2.0, 2.0]))
        assert validation_loss(fam, fit, val) == pytest.approx(2.0)

    def test_row_permutation_invariance(self):
        d, design = random_ridge(1)
        fam = RidgeFamily(design)
        fit = fit_ridge(d, design, np.ones(design.J))
        perm = np.random.default_rng(2).permutation(d.n)
        shuffled = Dataset(x=d.x[perm], y=d.y[perm])
        assert validation_loss(fam, fit, shuffled) == pytest.approx(
            validation_loss(fam, fit, d), rel=1e-12
        )

    def test_empty_validation_rejected(self):
        with pytest.raises(ValueError):
            Dataset(x=np.empty((0, 2)), y=np.empty(0))


class TestGrid:
    def test_argmin_of_constructed_problem(self):
        d, design = random_ridge(4)
        fam = RidgeFamily(design)
        val = Dataset(x=d.x, y=d.y)
        tmap = TyingMap(J=design.J, k=design.J, assignment=np.arange(design.J))
        grid = [np.full(design.J, v) for v in (0.01, 0.1, 1.0, 10.0)]
        res = tune_grid(fam, d, val, grid, tmap)
        losses = [
            validation_loss(fam, fam.fit(d, expand_lambda(tmap, g)), val) for g in grid
        ]
        assert res.val_loss == pytest.approx(min(losses))
        np.testing.assert_array_equal(res.selected_free, grid[int(np.argmin(losses))])

    def test_tie_breaks_to_smaller_norm(self):
        class ConstantFamily:
            def fit(self, train, lam):
                return None

            def predict_many(self, fit, x):
                return np.zeros(len(x))

        d = Dataset(x=np.array([[1.0], [1.0]]), y=np.array([0.0, 0.0]))
        tmap = TyingMap(J=1, k=1, assignment=np.array([0]))
        res = tune_grid(ConstantFamily(), d, d, [np.array([5.0]), np.array([2.0])], tmap)
        assert res.selected_free[0] == 2.0

    def test_empty_grid_rejected(self):
        d, design = random_ridge(5)
        tmap = tying_nested(design.J, design.J)
        with pytest.raises(ValueError):
            tune_grid(RidgeFamily(design), d, d, [], tmap)

    def test_singleton_grid_returns_point(self):
        d, design = random_ridge(6)
        tmap = tying_nested(design.J, 1)
        res = tune_grid(RidgeFamily(design), d, d, [np.array([0.7])], tmap)
        assert res.selected_free[0] == 0.7


class TestHyperGradient:
    def test_analytic_single_coordinate(self):
        # theta_hat(1) = 1, d theta / d lambda = -1/2; val x=(1), y=(0):
        # loss = theta^2 / 2, gradient = theta * theta' = -0.5
        fam = RidgeFamily(GroupedDesign([1]))
        val = Dataset(x=np.array([[1.0]]), y=np.array([0.0]))
        tmap = TyingMap(J=1, k=1, assignment=np.array([0]))
        g = hyper_gradient(fam, ridge_toy(), val, np.array([1.0]), tmap)
        assert g[0] == pytest.approx(-0.5, abs=1e-12)

    def test_zero_residual_zero_gradient(self):
        fam = RidgeFamily(GroupedDesign([1]))
        val = Dataset(x=np.array([[1.0]]), y=np.array([1.0]))
        tmap = TyingMap(J=1, k=1, assignment=np.array([0]))
        g = hyper_gradient(fam, ridge_toy(), val, np.array([1.0]), tmap)
        assert g[0] == pytest.approx(0.0, abs=1e-12)

    def _fd_check(self, fam, train, val, tmap, lam_free, rel_tol):
        g = hyper_gradient(fam, train, val, expand_lambda(tmap, lam_free), tmap)
        h = 1e-6
        for i in range(tmap.k):
            up, dn = np.log(lam_free.copy()), np.log(lam_free.copy())
            up[i] += h
            dn[i] -= h

            def loss(logf):
                fit = fam.fit(train, expand_lambda(tmap, np.exp(logf)))
                return validation_loss(fam, fit, val)

            fd = (loss(up) - loss(dn)) / (2 * h)
            analytic = g[i] * lam_free[i]  # chain rule through log
            assert fd == pytest.approx(analytic, rel=rel_tol, abs=1e-12)

    def test_matches_finite_differences_ridge(self):
        for seed in range(3):
            d, design = random_ridge(seed + 10, n=50)
            train = d.subset(np.arange(30))
            val = d.subset(np.arange(30, 50))
            tmap = tying_nested(design.J, design.J)
            lam_free = np.random.default_rng(seed).uniform(0.2, 2.0, tmap.k)
            self._fd_check(RidgeFamily(design), train, val, tmap, lam_free, 1e-5)

    def test_matches_finite_differences_gam(self):
        d = generate_simulation(SimSpec(variant="sim1", J=2, n=40), seed=0)
        split = split_train_val(d, 25, 15, seed=0)
        train, val = d.subset(split.train_idx), d.subset(split.val_idx)
        fam = GamFamily(d.domain_bounds)
        tmap = tying_nested(2, 2)
        self._fd_check(fam, train, val, tmap, np.array([0.5, 0.05]), 1e-5)

    def test_tying_sums_full_gradient(self):
        d, design = random_ridge(20, n=50, groups=(1, 1, 1, 1))
        train = d.subset(np.arange(30))
        val = d.subset(np.arange(30, 50))
        fam = RidgeFamily(design)
        full_map = tying_nested(4, 4)
        tied_map = tying_nested(4, 2)
        lam_free = np.array([0.4, 0.9])
        lam = expand_lambda(tied_map, lam_free)
        g_full = hyper_gradient(fam, train, val, lam, full_map)
        g_tied = hyper_gradient(fam, train, val, lam, tied_map)
        np.testing.assert_allclose(
            g_tied, [g_full[0] + g_full[1], g_full[2] + g_full[3]], rtol=1e-12
        )


class TestMultistart:
    def golden_section(self, f, lo, hi, tol=1e-10):
        phi = (np.sqrt(5) - 1) / 2
        a, b = lo, hi
        c, d = b - phi * (b - a), a + phi * (b - a)
        fc, fd = f(c), f(d)
        while b - a > tol:
            if fc < fd:
                b, d, fd = d, c, fc
                c = b - phi * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, d, fd
                d = a + phi * (b - a)
                fd = f(d)
        return 0.5 * (a + b)

    @pytest.mark.parametrize("method", ["grad", "neldermead"])
    def test_convex_problem_matches_golden_section(self, method):
        # noisy instance whose validation optimum lies strictly inside the box
        rng = np.random.default_rng(0)
        design = GroupedDesign([3])
        x = rng.standard_normal((30, 3))
        y = x @ rng.standard_normal(3) + 1.5 * rng.standard_normal(30)
        d = Dataset(x=x, y=y)
        train = d.subset(np.arange(15))
        val = d.subset(np.arange(15, 30))
        fam = RidgeFamily(design)
        tmap = tying_nested(1, 1)
        box = LambdaBox(1e-4, 1e3, 1)

        def f_log(u):
            fit = fam.fit(train, expand_lambda(tmap, np.array([np.exp(u)])))
            return validation_loss(fam, fit, val)

        oracle = np.exp(self.golden_section(f_log, np.log(1e-4), np.log(1e3)))
        res = tune_multistart(
            fam, train, val, box, tmap, config=TuneConfig(method=method)
        )
        assert res.selected_free[0] == pytest.approx(oracle, rel=1e-4)
        for _, end, _ in res.per_start:
            assert end[0] == pytest.approx(oracle, rel=1e-4)

    def test_collapsed_box_returns_point(self):
        d, design = random_ridge(31)
        tmap = tying_nested(design.J, 1)
        box = LambdaBox(0.5, 0.5, design.J)
        res = tune_multistart(RidgeFamily(design), d, d, box, tmap, starts=[[0.5]])
        assert res.selected_free[0] == 0.5
        assert len(res.trace) <= 2

    def test_descent_property(self):
        d, design = random_ridge(32, n=60)
        train = d.subset(np.arange(40))
        val = d.subset(np.arange(40, 60))
        fam = RidgeFamily(design)
        tmap = tying_nested(design.J, design.J)
        box = LambdaBox(1e-6, 1e2, design.J)
        res = tune_multistart(fam, train, val, box, tmap)
        initial = [
            validation_loss(fam, fam.fit(train, expand_lambda(tmap, s)), val)
            for s in default_starts(box, tmap.k)
        ]
        assert res.val_loss <= min(initial) + 1e-15

    def test_objective_scaling_leaves_selection_unchanged(self):
        d, design = random_ridge(33, n=60)
        train = d.subset(np.arange(40))
        val = d.subset(np.arange(40, 60))
        fam = RidgeFamily(design)
        tmap = tying_nested(design.J, design.J)
        box = LambdaBox(1e-6, 1e2, design.J)

        def obj(free):
            fit = fam.fit(train, expand_lambda(tmap, free))
            return validation_loss(fam, fit, val)

        starts = default_starts(box, tmap.k)
        cfg = TuneConfig(method="neldermead")
        best1, *_ = minimize_multistart(obj, None, box, tmap, starts, cfg)
        best7, *_ = minimize_multistart(
            lambda f: 7.0 * obj(f), None, box, tmap, starts, cfg
        )
        np.testing.assert_allclose(best1, best7, rtol=1e-8)

    def test_start_outside_box_rejected(self):
        d, design = random_ridge(34)
        tmap = tying_nested(design.J, 1)
        box = LambdaBox(0.1, 1.0, design.J)
        with pytest.raises(ValueError):
            tune_multistart(RidgeFamily(design), d, d, box, tmap, starts=[[10.0]])

    def test_selected_lambda_inside_box(self):
        d, design = random_ridge(35, n=60)
        train = d.subset(np.arange(40))
        val = d.subset(np.arange(40, 60))
        tmap = tying_nested(design.J, design.J)
        box = LambdaBox(1e-6, 1e2, design.J)
        res = tune_multistart(RidgeFamily(design), train, val, box, tmap)
        assert box.contains(res.selected_lambda)
        for free, _ in res.trace:
            assert box.contains(expand_lambda(tmap, free))


class TestTrainVal:
    def test_grid_containing_oracle_selects_it(self):
        d, design = random_ridge(40, n=60)
        split = SplitPlan(train_idx=np.arange(40), val_idx=np.arange(40, 60))
        tmap = tying_nested(design.J, 1)
        box = LambdaBox(1e-6, 1e2, design.J)
        cfg = TuneConfig(grid=[np.array([0.3])])
        res = tune_train_val(RidgeFamily(design), d, split, box, tmap, cfg)
        assert res.selected_free[0] == 0.3

    def test_deterministic(self):
        d = generate_simulation(SimSpec(variant="sim1", J=2, n=40), seed=5)
        split = split_train_val(d, 25, 15, seed=5)
        fam = GamFamily(d.domain_bounds)
        tmap = tying_nested(2, 2)
        box = LambdaBox(1e-6, 1e2, 2)
        r1 = tune_train_val(fam, d, split, box, tmap)
        r2 = tune_train_val(fam, d, split, box, tmap)
        np.testing.assert_array_equal(r1.selected_lambda, r2.selected_lambda)
        assert r1.val_loss == r2.val_loss


class TestKfold:
    def test_two_symmetric_folds(self):
        # duplicated rows split into identical folds
        x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        y = np.array([1.0, 2.0, 1.0, 2.0])
        d = Dataset(x=x, y=y)
        plan_folds = [np.array([0, 1]), np.array([2, 3])]
        from penreg.data import FoldPlan

        plan = FoldPlan(folds=plan_folds)
        design = GroupedDesign([1, 1])
        tmap = tying_nested(2, 1)
        box = LambdaBox(1e-6, 1e2, 2)
        cv = tune_kfold(RidgeFamily(design), d, plan, box, tmap,
                        TuneConfig(grid=[np.array([0.5])]))
        np.testing.assert_allclose(cv.fold_fits[0].theta, cv.fold_fits[1].theta)
        single = validation_loss(
            RidgeFamily(design), cv.fold_fits[0], d.subset(plan_folds[0])
        )
        assert cv.cv_loss == pytest.approx(single)

    def test_singleton_grid(self):
        d, design = random_ridge(50, n=40)
        plan = make_kfold(d.n, 4, seed=0)
        tmap = tying_nested(design.J, design.J)
        box = LambdaBox(1e-6, 1e2, design.J)
        cv = tune_kfold(RidgeFamily(design), d, plan, box, tmap,
                        TuneConfig(grid=[np.array([1.0, 2.0])]))
        np.testing.assert_array_equal(cv.selected_free, [1.0, 2.0])
        assert len(cv.fold_fits) == 4

    def test_descent_over_starts(self):
        d, design = random_ridge(51, n=40)
        plan = make_kfold(d.n, 3, seed=1)
        fam = RidgeFamily(design)
        tmap = tying_nested(design.J, design.J)
        box = LambdaBox(1e-6, 1e2, design.J)
        cv = tune_kfold(fam, d, plan, box, tmap)

        def objective(free):
            lam = expand_lambda(tmap, free)
            return float(np.mean([
                validation_loss(fam, fam.fit(d.subset(plan.complement(i)), lam),
                                d.subset(plan.folds[i]))
                for i in range(plan.k)
            ]))

        for s in default_starts(box, tmap.k):
            assert cv.cv_loss <= objective(s) + 1e-15


class TestAveragedPredict:
    class _ConstFamily:
        def predict_many(self, fit, x):
            return np.full(len(np.atleast_2d(x)), fit)

    def test_mean_of_constants(self):
        cv = CvResult(
            selected_lambda=np.array([1.0]),
            selected_free=np.array([1.0]),
            fold_fits=[1.0, 3.0],
            cv_loss=0.0,
            family=self._ConstFamily(),
        )
        assert averaged_predict(cv, np.zeros((1, 1)))[0] == pytest.approx(2.0)

    def test_identical_folds_equal_single(self):
        d, design = random_ridge(60, n=30)
        fam = RidgeFamily(design)
        fit = fit_ridge(d, design, np.ones(design.J))
        cv = CvResult(
            selected_lambda=np.ones(design.J),
            selected_free=np.ones(design.J),
            fold_fits=[fit, fit, fit],
            cv_loss=0.0,
            family=fam,
        )
        pts = np.random.default_rng(0).standard_normal((5, design.p))
        np.testing.assert_allclose(
            averaged_predict(cv, pts), fam.predict_many(fit, pts), rtol=1e-15
        )

    def test_equals_mean_of_fold_predictions(self):
        d, design = random_ridge(61, n=40)
        plan = make_kfold(d.n, 4, seed=2)
        tmap = tying_nested(design.J, design.J)
        box = LambdaBox(1e-6, 1e2, design.J)
        cv = tune_kfold(RidgeFamily(design), d, plan, box, tmap,
                        TuneConfig(grid=[np.ones(design.J)]))
        pts = np.random.default_rng(1).standard_normal((100, design.p))
        stacked = np.stack([cv.family.predict_many(f, pts) for f in cv.fold_fits])
        np.testing.assert_allclose(averaged_predict(cv, pts), stacked.mean(axis=0),
                                   atol=1e-12)


class TestBasicInequality:
    def test_grid_selection_satisfies_rearranged_argmin(self):
        # For grid-selected lambda_hat and any candidate lambda_tilde:
        #   ||g*-ghat(lh)||_V^2 - ||g*-ghat(lt)||_V^2
        #     <= 2 <eps, ghat(lh) - ghat(lt)>_V
        # exactly, by rearranging the argmin property of lambda_hat.
        for seed in range(5):
            d = generate_simulation(SimSpec(variant="sim1", J=2, n=50), seed=seed)
            split = split_train_val(d, 30, 20, seed=seed)
            train, val = d.subset(split.train_idx), d.subset(split.val_idx)
            fam = GamFamily(d.domain_bounds)
            tmap = tying_nested(2, 2)
            grid = [np.array([a, b]) for a in (0.01, 0.5, 10.0) for b in (0.01, 0.5, 10.0)]
            res = tune_grid(fam, train, val, grid, tmap)
            pred_hat = fam.predict_many(res.fit, val.x)
            eps = val.noise
            lhs_hat = np.mean((val.truth - pred_hat) ** 2)
            for g in grid:
                fit_t = fam.fit(train, expand_lambda(tmap, g))
                pred_t = fam.predict_many(fit_t, val.x)
                lhs = lhs_hat - np.mean((val.truth - pred_t) ** 2)
                rhs = 2 * np.mean(eps * (pred_hat - pred_t))
                assert lhs <= rhs + 1e-10
