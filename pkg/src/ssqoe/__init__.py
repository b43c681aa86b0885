"""Continuous video QoE prediction with a Hammerstein nonlinear
state-space model: feature extraction from playout traces, forward
simulation, prediction-error training, controllability/observability
analysis, and the leave-one-out evaluation protocol."""

from .analysis import (RankAnalysis, analyze, controllability_matrix, ctrb,
                       numeric_rank, obsv, observability_matrix,
                       spectral_radius)
from .dataio import (Dataset, GeneratorSpec, SplitPlan, generate_synthetic,
                     load_dataset, make_loocv_splits, split_satisfies_exclusion,
                     write_dataset)
from .errors import (DataFormatError, DimensionError, NumericOverflowError,
                     ProtocolError, QoeError, SchemaVersionError, TrainingError,
                     ValidationError)
from .evaluate import EvalReport, predict_trace, run_loocv, run_split
from .features import (FeatureSeries, SessionTrace, build_features, extract_pi,
                       extract_tr, fit_normalization)
from .identify import (TrainConfig, TrainReport, initialize_structured,
                       objective, objective_gradient, pack_parameters,
                       select_initial_state, train, unpack_parameters)
from .metrics import EvalScores, lcc, mean_scores, rmse_n, score_pair, srocc
from .model import (ChannelNorm, ModelConfig, NonlinearityParams, QoeModel,
                    StateSpaceParams, StateVector, apply_nonlinearity,
                    load_model, model_from_doc, model_to_doc, normalize_features,
                    save_model, simulate, step)
from .version import __version__
