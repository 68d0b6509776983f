"""Penalty-parameter selection on held-out data.

A model family exposes fit / predict / lambda-Jacobian / feature-map
capabilities; the tuner minimizes the validation loss over the penalty
box, either on a finite grid or by multi-start local search in log-lambda
coordinates (positivity and box constraints hold by construction).  The
gradient of the validation loss in lambda comes from the chain rule
through the family's implicit-differentiation Jacobian.  K-fold
cross-validation uses the same machinery on the fold-averaged objective
and predicts with the average of the fold-trained models.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from penreg import enet as enet_mod
from penreg import gam as gam_mod
from penreg import ridge as ridge_mod
from penreg.data import Dataset, FoldPlan, LambdaBox, SplitPlan, TyingMap, expand_lambda
from penreg.enet import BreakpointError
from penreg.ridge import GroupedDesign


class RidgeFamily:
    """Grouped ridge regression as a tunable model family."""

    def __init__(self, design: GroupedDesign):
        self.design = design

    def fit(self, train: Dataset, lam: np.ndarray):
        return ridge_mod.fit_ridge(train, self.design, lam)

    def predict_many(self, fit, x: np.ndarray) -> np.ndarray:
        return ridge_mod.ridge_predict_many(fit, x)

    def lambda_jacobian(self, fit) -> np.ndarray:
        return ridge_mod.ridge_lambda_jacobian(fit)

    def param_features(self, fit, x: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(x, dtype=float))


class EnetFamily:
    """Grouped elastic net as a tunable model family."""

    def __init__(self, design: GroupedDesign, w: float):
        self.design = design
        self.w = w

    def fit(self, train: Dataset, lam: np.ndarray):
        return enet_mod.fit_enet(train, self.design, lam, self.w)

    def predict_many(self, fit, x: np.ndarray) -> np.ndarray:
        return enet_mod.enet_predict_many(fit, x)

    def lambda_jacobian(self, fit) -> np.ndarray:
        return enet_mod.enet_active_jacobian(fit)

    def param_features(self, fit, x: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(x, dtype=float))


class GamFamily:
    """Additive smoothing-spline model as a tunable model family.

    Penalty-independent solver state (knots, kernel Gram matrices) and the
    feature matrices of repeated evaluation points are cached per array
    identity, since the tuner refits the same data at many penalties.
    """

    _CACHE_CAP = 16

    def __init__(self, bounds):
        self.bounds = list(bounds)
        self._workspaces: dict = {}
        self._features: dict = {}

    def _cache_get(self, cache: dict, key_obj, build):
        entry = cache.get(id(key_obj))
        if entry is not None and entry[0] is key_obj:
            return entry[1]
        value = build()
        if len(cache) >= self._CACHE_CAP:
            cache.pop(next(iter(cache)))
        cache[id(key_obj)] = (key_obj, value)
        return value

    def fit(self, train: Dataset, lam: np.ndarray):
        ws = self._cache_get(
            self._workspaces, train.x, lambda: gam_mod.gam_workspace(train, self.bounds)
        )
        return gam_mod.fit_gam(train, lam, self.bounds, workspace=ws)

    def predict_many(self, fit, x: np.ndarray) -> np.ndarray:
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        key = (id(x2) if x2 is x else None, id(fit.knots))
        entry = self._features.get(key)
        if entry is not None and entry[0] is x and entry[1] is fit.knots:
            feats = entry[2]
        else:
            feats = gam_mod.gam_param_features(fit, x2)
            if key[0] is not None:
                if len(self._features) >= self._CACHE_CAP:
                    self._features.pop(next(iter(self._features)))
                self._features[key] = (x, fit.knots, feats)
        params = np.concatenate(
            [[fit.alpha0], fit.alpha1,
             fit.theta.reshape(-1, order="F")]
        )
        return feats @ params

    def lambda_jacobian(self, fit) -> np.ndarray:
        return gam_mod.gam_lambda_jacobian(fit)

    def param_features(self, fit, x: np.ndarray) -> np.ndarray:
        return gam_mod.gam_param_features(fit, x)


@dataclass
class TuneConfig:
    """Local-search settings for the multi-start optimizer."""

    method: str = "grad"  # or "neldermead"
    max_iters: int = 200
    grad_tol: float = 1e-8
    armijo_c: float = 1e-4
    shrink: float = 0.5
    stall_tol: float = 1e-11  # absolute loss progress per accepted step
    stall_iters: int = 5
    grid: list | None = None  # bypasses local search when set

    def __post_init__(self) -> None:
        if self.method not in ("grad", "neldermead"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class TuneResult:
    selected_lambda: np.ndarray
    selected_free: np.ndarray
    val_loss: float
    trace: list
    per_start: list
    fit: object
    warning: bool = False


@dataclass
class CvResult:
    selected_lambda: np.ndarray
    selected_free: np.ndarray
    fold_fits: list
    cv_loss: float
    family: object
    trace: list = field(default_factory=list)


def validation_loss(family, fit, val: Dataset) -> float:
    """Half the mean squared prediction error on the validation rows."""
    if val.n == 0:
        raise ValueError("validation set is empty")
    resid = val.y - family.predict_many(fit, val.x)
    return float(0.5 * np.mean(resid**2))


def hyper_gradient(family, train: Dataset, val: Dataset, lam: np.ndarray,
                   tmap: TyingMap) -> np.ndarray:
    """Gradient of the validation loss in the free penalty parameters.

    Chain rule: d loss / d lambda_j = -(1/n_V) sum_i resid_i phi(x_i)' J[:, j],
    then tied coordinates are summed per the tying map.
    """
    fit = family.fit(train, np.asarray(lam, dtype=float))
    resid = val.y - family.predict_many(fit, val.x)
    jac = family.lambda_jacobian(fit)
    feats = family.param_features(fit, val.x)
    grad_full = -(resid @ (feats @ jac)) / val.n
    return tmap.reduce(grad_full)


def default_starts(box: LambdaBox, k: int) -> list[np.ndarray]:
    """Constant start vectors 1, 0.1, 0.01, clipped into the box."""
    return [np.clip(np.full(k, s), box.lambda_min, box.lambda_max) for s in (1.0, 0.1, 0.01)]


def _select_best(trace, tmap: TyingMap):
    """Argmin over (free, loss) pairs; ties go to the smallest expanded
    lambda norm, then to lexicographically smallest free vector."""
    def key(entry):
        free, loss = entry
        lam = expand_lambda(tmap, free)
        return (loss, float(lam @ lam), tuple(free))

    return min(trace, key=key)


def tune_grid(family, train: Dataset, val: Dataset, grid, tmap: TyingMap) -> TuneResult:
    """Exhaustive search over a finite list of free penalty vectors."""
    grid = [np.asarray(g, dtype=float) for g in grid]
    if not grid:
        raise ValueError("grid is empty")
    trace = []
    for free in grid:
        fit = family.fit(train, expand_lambda(tmap, free))
        trace.append((free, validation_loss(family, fit, val)))
    best_free, best_loss = _select_best(trace, tmap)
    best_lam = expand_lambda(tmap, best_free)
    return TuneResult(
        selected_lambda=best_lam,
        selected_free=best_free,
        val_loss=best_loss,
        trace=trace,
        per_start=[],
        fit=family.fit(train, best_lam),
    )


def _fd_gradient(objective, u: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(u)
    for i in range(u.size):
        up, dn = u.copy(), u.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (objective(up) - objective(dn)) / (2 * h)
    return g


def _descend_log(objective, gradient, u0: np.ndarray, lo: float, hi: float,
                 cfg: TuneConfig):
    """Projected gradient descent with Armijo backtracking in log-lambda."""
    u = np.clip(u0, lo, hi)
    f = objective(u)
    stalled = 0
    for _ in range(cfg.max_iters):
        try:
            g = gradient(u)
        except BreakpointError:
            g = _fd_gradient(objective, u)
        if np.linalg.norm(g) < cfg.grad_tol:
            break
        accepted = False
        t = 1.0
        for _ in range(40):
            u_trial = np.clip(u - t * g, lo, hi)
            move = u - u_trial
            if not np.any(move):
                break
            f_trial = objective(u_trial)
            if f_trial <= f - cfg.armijo_c * float(g @ move):
                if f - f_trial < cfg.stall_tol:
                    stalled += 1
                else:
                    stalled = 0
                u, f = u_trial, f_trial
                accepted = True
                break
            t *= cfg.shrink
        if not accepted or stalled >= cfg.stall_iters:
            break
    return u, f


def _minimize_start(objective, gradient, u0: np.ndarray, lo: float, hi: float,
                    cfg: TuneConfig):
    if hi - lo < 1e-15:
        u = np.full_like(u0, lo)
        return u, objective(u)
    if cfg.method == "grad":
        return _descend_log(objective, gradient, u0, lo, hi, cfg)
    res = scipy.optimize.minimize(
        objective,
        np.clip(u0, lo, hi),
        method="Nelder-Mead",
        bounds=[(lo, hi)] * u0.size,
        options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 400 * u0.size},
    )
    return np.clip(res.x, lo, hi), float(res.fun)


def minimize_multistart(objective_free, gradient_free, box: LambdaBox,
                        tmap: TyingMap, starts, cfg: TuneConfig):
    """Run the local optimizer from each start in log coordinates and keep
    every evaluation in a shared trace.  Returns (best free lambda, loss,
    trace, per-start records, warning flag)."""
    lo, hi = np.log(box.lambda_min), np.log(box.lambda_max)
    trace = []

    def obj_u(u):
        # round-trip through exp can overshoot the box edge by one ulp
        free = np.clip(np.exp(u), box.lambda_min, box.lambda_max)
        loss = objective_free(free)
        trace.append((free, loss))
        return loss

    def grad_u(u):
        free = np.exp(u)
        return gradient_free(free) * free  # chain rule through exp

    per_start = []
    improved = False
    for start in starts:
        start = np.asarray(start, dtype=float)
        if not box.contains(start):
            raise ValueError(f"start {start} lies outside the penalty box")
        f0 = obj_u(np.log(start))
        u_fin, f_fin = _minimize_start(obj_u, grad_u, np.log(start), lo, hi, cfg)
        per_start.append(
            (start, np.clip(np.exp(u_fin), box.lambda_min, box.lambda_max), f_fin)
        )
        if f_fin < f0 - 1e-15:
            improved = True
    best_free, best_loss = _select_best(trace, tmap)
    return best_free, best_loss, trace, per_start, not improved


def tune_multistart(family, train: Dataset, val: Dataset, box: LambdaBox,
                    tmap: TyingMap, starts=None, config: TuneConfig | None = None
                    ) -> TuneResult:
    """Multi-start local minimization of the validation loss."""
    cfg = config or TuneConfig()
    if starts is None:
        starts = default_starts(box, tmap.k)

    def objective(free):
        fit = family.fit(train, expand_lambda(tmap, free))
        return validation_loss(family, fit, val)

    def gradient(free):
        return hyper_gradient(family, train, val, expand_lambda(tmap, free), tmap)

    best_free, best_loss, trace, per_start, warning = minimize_multistart(
        objective, gradient, box, tmap, starts, cfg
    )
    best_lam = expand_lambda(tmap, best_free)
    return TuneResult(
        selected_lambda=best_lam,
        selected_free=best_free,
        val_loss=best_loss,
        trace=trace,
        per_start=per_start,
        fit=family.fit(train, best_lam),
        warning=warning,
    )


def tune_train_val(family, dataset: Dataset, split: SplitPlan, box: LambdaBox,
                   tmap: TyingMap, config: TuneConfig | None = None) -> TuneResult:
    """Split tuning: fit on the training rows, select on the held-out rows."""
    cfg = config or TuneConfig()
    train = dataset.subset(split.train_idx)
    val = dataset.subset(split.val_idx)
    if cfg.grid is not None:
        return tune_grid(family, train, val, cfg.grid, tmap)
    return tune_multistart(family, train, val, box, tmap, config=cfg)


def tune_kfold(family, dataset: Dataset, foldplan: FoldPlan, box: LambdaBox,
               tmap: TyingMap, config: TuneConfig | None = None) -> CvResult:
    """Averaged K-fold selection: one lambda minimizing the mean held-out
    loss, with the K fold-trained fits retained for averaged prediction."""
    cfg = config or TuneConfig()
    k = foldplan.k
    trains = [dataset.subset(foldplan.complement(i)) for i in range(k)]
    vals = [dataset.subset(foldplan.folds[i]) for i in range(k)]

    def objective(free):
        lam = expand_lambda(tmap, free)
        return float(
            np.mean([validation_loss(family, family.fit(trains[i], lam), vals[i])
                     for i in range(k)])
        )

    def gradient(free):
        lam = expand_lambda(tmap, free)
        return np.mean(
            [hyper_gradient(family, trains[i], vals[i], lam, tmap) for i in range(k)],
            axis=0,
        )

    if cfg.grid is not None:
        grid = [np.asarray(g, dtype=float) for g in cfg.grid]
        if not grid:
            raise ValueError("grid is empty")
        trace = [(g, objective(g)) for g in grid]
        best_free, best_loss = _select_best(trace, tmap)
    else:
        starts = default_starts(box, tmap.k)
        best_free, best_loss, trace, _, _ = minimize_multistart(
            objective, gradient, box, tmap, starts, cfg
        )
    best_lam = expand_lambda(tmap, best_free)
    return CvResult(
        selected_lambda=best_lam,
        selected_free=best_free,
        fold_fits=[family.fit(t, best_lam) for t in trains],
        cv_loss=best_loss,
        family=family,
        trace=trace,
    )


def averaged_predict(cv: CvResult, x: np.ndarray) -> np.ndarray:
    """Arithmetic mean of the fold-trained predictions."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    preds = np.stack([cv.family.predict_many(f, x) for f in cv.fold_fits])
    return preds.mean(axis=0)
