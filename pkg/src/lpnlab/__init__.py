"""lp-constrained softmax loss classifiers on a minimal reverse-mode
autodiff engine, with a synthetic Gaussian-mixture test bed, a Bayes-optimal
reference, compactness metrics, and a declarative experiment runner."""

from .autodiff import (
    DimensionError,
    NumericsError,
    Parameter,
    Tape,
    Tensor,
    add_bias,
    backward,
    matmul,
    multiply,
    softmax_cross_entropy,
    tanh,
    tensor_sum,
)
from .lpnorm import (
    LpNormLayer,
    NormOrder,
    RadiusParam,
    cp_ratio,
    grad_wrt_alpha,
    grad_wrt_input,
    grad_wrt_p,
    logit_decomposition,
    lp_norm,
    lp_normalize,
    magnitude_interval,
    normalize_forward,
    normalize_rows,
)
from .models import (
    Classifier,
    ClassifierSpec,
    NormConfig,
    build_poc,
    build_probe,
    load_checkpoint,
    save_checkpoint,
)
from .synthetic import (
    Dataset,
    GmmComponent,
    GmmSpec,
    bayes_deviation,
    bayes_predict,
    load_dataset_csv,
    log_density,
    poc_spec,
    sample,
    save_dataset_csv,
)
from .training import (
    RunRecord,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    evaluate_accuracy,
    sgd_step,
    train,
    write_run_csv,
)
from .metrics import (
    SilhouetteReport,
    representation_snapshot,
    silhouette,
    silhouette_oracle,
)
from .render import (
    decision_grid,
    read_pgm,
    write_grid_csv,
    write_pgm,
    write_scatter_ppm,
)

__version__ = "0.1.0"
