"""Permutation-aware re-ranking: beam-searched candidate lists scored by a
Bi-LSTM list model, plus a cascade-click simulator to train and judge them."""

from .datamodel import (InteractionRecord, ItemProfile, Schema, UserProfile,
                        load_dataset, save_dataset, split_records)
from .errors import (ConfigError, DomainError, FormatError, MetricError,
                     ParseError, PermrankError, ResourceGuardError,
                     ShapeError, TrainingError)
from .evaluation import (alpha_sweep, auc, exhaustive_oracle,
                         list_metric_pearson, pearson, relative_improvement)
from .pmatch import (BeamEntry, CandidateSet, PointwiseModel, ScoredCandidate,
                     calc_estimated_reward, fpsa, greedy_ctr_list,
                     merge_candidates, score_candidates, train_pointwise)
from .prank import (DpwnModel, dpwn_score, lr_metric, select_best, sr_metric,
                    train_dpwn)
from .simulator import (SimSpec, gen_catalog, gen_logs, simulate_session,
                        true_expected_reward)
from .training import TrainConfig

__version__ = "0.1.0"
