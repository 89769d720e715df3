"""Concrete autoencoders: differentiable selection of k input features.

A concrete selector layer picks features through relaxed one-hot samples
whose temperature is annealed during training; a decoder reconstructs the
full input (or predicts labels) from the selected features.
"""

import os as _os

# Must run before numpy loads its BLAS.
if _os.environ.get("CAE_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["CAE_THREADS"])

from .cae import (  # noqa: E402
    CaeModel,
    TrainConfig,
    TrainReport,
    impute,
    predict_labels,
    schedule_ablation,
    select_features,
    train,
)
from .dataio import load_csv, load_idx, load_model, save_model, split, subsample_split  # noqa: E402
from .errors import (  # noqa: E402
    CaeError,
    DataError,
    FormatError,
    ModeError,
    ParameterError,
    ParseError,
    RankError,
    ShapeError,
    TrainingDivergenceError,
)
from .selector import AnnealSchedule, feature_groups, temperature  # noqa: E402

__version__ = "0.1.0"
