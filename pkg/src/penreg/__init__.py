"""Multi-penalty regression models with split-sample penalty tuning.

Model families (multi-penalty ridge, additive smoothing splines with one
curvature penalty per component, grouped elastic net) share a common tuning
layer: train/validation split or averaged K-fold cross-validation over a
hyper-rectangle of penalty parameters, optimized by multi-start descent with
implicit-differentiation hypergradients.  The ``bounds`` module computes the
Lipschitz constants and oracle-inequality quantities that describe the cost
of tuning many penalty parameters, and the CLI reproduces the sinusoid
simulation studies.
"""

from penreg.data import (
    Dataset,
    FoldPlan,
    LambdaBox,
    SimSpec,
    SplitPlan,
    TyingMap,
    expand_lambda,
    generate_simulation,
    load_dataset_csv,
    make_kfold,
    save_dataset_csv,
    split_train_val,
    tying_nested,
)

__all__ = [
    "Dataset",
    "FoldPlan",
    "LambdaBox",
    "SimSpec",
    "SplitPlan",
    "TyingMap",
    "expand_lambda",
    "generate_simulation",
    "load_dataset_csv",
    "make_kfold",
    "save_dataset_csv",
    "split_train_val",
    "tying_nested",
]

__version__ = "0.1.0"
