"""Fixed-contract evaluation of sparse spatiotemporal fire forecasts.

An evaluation contract fixes the task, metric, matching rule, scope and
head family; scores are only comparable under identical contracts.
"""

from .checks import (CheckReport, RegretRow, SeedStat, SweepRow, fixed_feature_check,
                     fixed_output_check, rank_deltas, rank_map, seed_aggregate)
from .contracts import (Contract, HeadFamilySpec, ScopeSpec, TaskForm, builtin_contract,
                        builtin_contracts, comparable, contract_variants,
                        derive_fire_prone_scope, rank_within_contract, spread_region_scope)
from .errors import ContractViolation, DataError, FireContractError
from .grid import (FireSet, GridSpec, LabelField, OutputRecord, ScopeMask, ScoreField,
                   TimeSplit, global_scope, observed_set, threshold_scores)
from .heads import (DecisionF1, HeadKind, HeadParams, RankingPRAUC, TrainConfig, head_forward,
                    select_head, selection_regret, train_head)
from .matching import (EXACT, Exact, MatchCounts, Tolerated, Union, brute_force_counts,
                       decision_f1, dilated_counts, f1_from_counts)
from .metrics import (MetricSpec, average_precision, ndcg_at_k, pearson_r, pr_auc,
                      select_threshold, spearman_rho)

__version__ = "0.1.0"
