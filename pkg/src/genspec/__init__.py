"""Safe query specialization for counterfactual learning to rank."""
from .core import (
    FixedScorePolicy,
    Policy,
    Query,
    RelevanceTable,
    ScoreSortPolicy,
    UniformPolicy,
    dcg_weight,
    ndcg,
    ranking_quality,
    true_reward,
)
from .estimate import BoundConfig, RelativeEstimate, ips_reward, relative_bound, sea_bound, sea_decision
from .metapolicy import DeploymentDecision, GenSpecPolicy, initialize
from .models import LinearRanker, TabularRanker, infer_tabular, train_feature_based
from .simulate import ClickModel, LogSlice, simulate_clicks, split_log, train_logging_policy

__version__ = "0.1.0"
