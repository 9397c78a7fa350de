"""Time-series transformer forecasting with hand-rolled backpropagation.

The package is organized bottom-up: float64 array kernels (:mod:`.tensor`),
a reverse-mode autodiff tape over them (:mod:`.autodiff`), the transformer
architecture and its checkpoint format (:mod:`.model`), the training loop
and metrics (:mod:`.training`), CSV/windowing utilities and synthetic
generators (:mod:`.data`), and a CLI (:mod:`.cli`).
"""

from .autodiff import GradCheckReport, Tape, Var, grad_check
from .data import (
    Normalizer,
    RawSeries,
    TimeSeriesDataset,
    chrono_split,
    fit_normalizer,
    load_csv,
    make_windows,
    prepare_datasets,
    synth_ar1,
    synth_sine,
)
from .errors import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointFormatError,
    ConfigError,
    DataError,
    DimensionError,
    NumericError,
    TsformerError,
)
from .model import (
    AttentionRecord,
    ModelConfig,
    ModelParams,
    build_forward,
    forward,
    init_params,
    load_params,
    param_items,
    positional_encoding,
    save_params,
)
from .tensor import RngState
from .training import (
    AdamState,
    TrainConfig,
    TrainReport,
    adam_step,
    evaluate,
    export_report,
    mae,
    mse,
    sgd_step,
    train,
)

__version__ = "0.1.0"
