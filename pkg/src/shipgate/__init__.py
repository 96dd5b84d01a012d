"""Multiple-testing corrections, ship decisions and planning for online experiments."""

from shipgate.adjust import AdjustMethod, AdjustedPValues, adjust, closure_oracle, effective_count, reject_set
from shipgate.decision import (
    DecisionConfig,
    Direction,
    FamilyMode,
    MetricResult,
    MetricRole,
    SrmCheck,
    ship_decision,
)
from shipgate.errors import DomainError, FactorizationError, NumericWarning, ValidationError
from shipgate.intervals import Interval, bonferroni_cis, fcr_cis
from shipgate.planning import PlanInputs, plan_experiment, sample_size_guardrail, sample_size_success
from shipgate.sequential import LookSchedule, SpendingFunction, bonferroni_over_time, gst_boundaries

__all__ = [
    "AdjustMethod",
    "AdjustedPValues",
    "DecisionConfig",
    "Direction",
    "DomainError",
    "FactorizationError",
    "FamilyMode",
    "Interval",
    "LookSchedule",
    "MetricResult",
    "MetricRole",
    "NumericWarning",
    "PlanInputs",
    "SpendingFunction",
    "SrmCheck",
    "ValidationError",
    "adjust",
    "bonferroni_cis",
    "bonferroni_over_time",
    "closure_oracle",
    "effective_count",
    "fcr_cis",
    "gst_boundaries",
    "plan_experiment",
    "reject_set",
    "sample_size_guardrail",
    "sample_size_success",
    "ship_decision",
]
