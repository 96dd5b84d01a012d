"""Strict JSON input documents for the command line.

Unknown fields are rejected and ``schema_version`` must match. Errors are
collected into a single :class:`shipgate.errors.ValidationError` whose message
lists every offending field.
"""

from __future__ import annotations

import json
from typing import Literal, TypeVar

from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic import ValidationError as PydanticError

from shipgate.adjust import AdjustMethod
from shipgate.decision import DecisionConfig, Direction, FamilyMode, MetricResult, MetricRole, SrmCheck
from shipgate.errors import ValidationError
from shipgate.planning import PlanInputs
from shipgate.sequential import LookSchedule, SpendingFunction

SCHEMA_VERSION = "1"

_Strict = ConfigDict(extra="forbid", frozen=True)


class _Doc(BaseModel):
    model_config = _Strict
    schema_version: Literal["1"]


class MetricEntry(BaseModel):
    model_config = _Strict
    name: str = Field(min_length=1)
    role: MetricRole
    direction: Direction
    estimate: float = Field(allow_inf_nan=False)
    se: float = Field(gt=0, allow_inf_nan=False)
    nim_margin: float | None = Field(default=None, ge=0)
    n_treat: int | None = Field(default=None, ge=0)
    n_ctrl: int | None = Field(default=None, ge=0)

    @model_validator(mode="before")
    @classmethod
    def _aliases(cls, data):
        if isinstance(data, dict) and isinstance(data.get("direction"), str):
            data = dict(data)
            data["direction"] = Direction.parse(data["direction"])
        return data

    @model_validator(mode="after")
    def _margin(self):
        if self.role is MetricRole.GUARDRAIL and self.nim_margin is None:
            raise ValueError(f"guardrail {self.name!r} needs nim_margin")
        return self

    def to_result(self) -> MetricResult:
        return MetricResult(
            self.name, self.role, self.direction, self.estimate, self.se, self.nim_margin, self.n_treat, self.n_ctrl
        )


class SrmEntry(BaseModel):
    model_config = _Strict
    counts: list[int] = Field(min_length=2)
    ratios: list[float] = Field(min_length=2)


class ExperimentSpecDocument(_Doc):
    alpha: float = Field(default=0.05, gt=0, lt=0.5)
    method: AdjustMethod = AdjustMethod.BONFERRONI
    family_mode: FamilyMode = FamilyMode.SUCCESS_ONLY
    srm_alpha: float = Field(default=0.001, gt=0, lt=1)
    metrics: list[MetricEntry] = Field(min_length=1)
    srm: SrmEntry | None = None

    @model_validator(mode="after")
    def _unique(self):
        names = [m.name for m in self.metrics]
        if len(set(names)) != len(names):
            raise ValueError("metric names must be unique")
        return self

    def decision_config(self) -> DecisionConfig:
        return DecisionConfig(self.alpha, self.method, self.family_mode, self.srm_alpha)

    def metric_results(self) -> list[MetricResult]:
        return [m.to_result() for m in self.metrics]

    def srm_check(self) -> SrmCheck | None:
        return None if self.srm is None else SrmCheck(tuple(self.srm.counts), tuple(self.srm.ratios))


class PlanDocument(_Doc):
    alpha: float = Field(gt=0, lt=1)
    beta: float = Field(gt=0, lt=1)
    delta: float = Field(gt=0)
    sigma: float = Field(gt=0)
    S: int = Field(ge=1)
    margins: list[float] = Field(default_factory=list)
    beta_weights: list[float] | None = None
    guardrail_effect: float = 0.0
    relative_mde: float | None = None

    def inputs(self) -> PlanInputs:
        return PlanInputs(
            alpha=self.alpha,
            beta=self.beta,
            delta=self.delta,
            sigma=self.sigma,
            S=self.S,
            G=len(self.margins),
            margins=tuple(self.margins),
            beta_weights=None if self.beta_weights is None else tuple(self.beta_weights),
            guardrail_effect=self.guardrail_effect,
            relative_mde=self.relative_mde,
        )


class ScheduleEntry(BaseModel):
    model_config = _Strict
    metric: str = Field(min_length=1)
    fractions: list[float] = Field(min_length=1)
    sides: Literal[1, 2] = 2
    spending: SpendingFunction | None = None


class ScheduleDocument(_Doc):
    alpha: float = Field(default=0.05, gt=0, lt=1)
    S: int | None = Field(default=None, ge=1)
    spending: SpendingFunction = SpendingFunction.OBF_TYPE
    schedules: list[ScheduleEntry] = Field(min_length=1)

    def look_schedules(self) -> list[LookSchedule]:
        return [LookSchedule(s.metric, tuple(s.fractions), self.alpha, s.sides) for s in self.schedules]

    def spending_map(self) -> dict[str, SpendingFunction]:
        return {s.metric: s.spending or self.spending for s in self.schedules}

    @property
    def family_size(self) -> int:
        return self.S if self.S is not None else len(self.schedules)


D = TypeVar("D", bound=BaseModel)


def _describe(exc: PydanticError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<document>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_document(model: type[D], data) -> D:
    """Validate a decoded JSON object (or JSON text) against ``model``."""
    if isinstance(data, (str, bytes)):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if isinstance(data, dict) and "schema_version" in data and data["schema_version"] != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {data['schema_version']!r}; expected {SCHEMA_VERSION!r}")
    try:
        return model.model_validate(data)
    except PydanticError as exc:
        raise ValidationError(_describe(exc)) from None
    except ValueError as exc:  # domain constructors raising inside validators
        raise ValidationError(str(exc)) from None
