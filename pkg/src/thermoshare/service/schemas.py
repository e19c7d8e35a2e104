"""Request/response models for the HTTP service.

Monetary fields travel as decimal strings exactly as they appear in the event
log; `*_display` fields are rounded for screens and must never be used for
arithmetic.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class EnergyConfigModel(BaseModel):
    ua: float = 50.0
    internal_gains: float = 400.0
    cop: float = 3.0
    price: float = 0.25
    interval: float = 0.5


class WeatherModel(BaseModel):
    mode: str = "constant"
    outdoor_c: float = 32.0
    samples: list[tuple[str, float]] | None = None


class SessionCreateRequest(BaseModel):
    occupants: list[str]
    temp_lower: int = 22
    temp_upper: int = 26
    round_length_s: float = 1800.0
    phase: str = "preference_collection"
    base_setpoint: int = 22
    initial_temp: int = 22
    smoothing: float = 1.0
    payment_rule: str = "generalized"
    energy: EnergyConfigModel = Field(default_factory=EnergyConfigModel)
    weather: WeatherModel = Field(default_factory=WeatherModel)
    initial_prior_counts: dict | None = None


class SessionCreateResponse(BaseModel):
    session_id: str
    admin_token: str
    occupant_tokens: dict[str, str]
    config: dict


class OutcomeCard(BaseModel):
    kind: str
    setpoint: int
    incremental_cost: str          # exact decimal string
    incremental_cost_display: str  # rounded to $0.0001 for screens


class DecisionView(BaseModel):
    outcome_kind: str
    setpoint: int
    sum_valuations: str
    incremental_cost: str
    welfare: str
    my_payment: str | None = None
    my_balance: str | None = None


class RoundView(BaseModel):
    session_id: str
    round_index: int | None
    phase: str
    t0: int
    state: str
    deadline: float | None
    reports_submitted: int
    outcomes: list[OutcomeCard]
    my_report: int | None = None
    decision: DecisionView | None = None


class ReportRequest(BaseModel):
    token: str
    type_id: int = Field(ge=1, le=9)


class ReportAck(BaseModel):
    occupant: str
    type_id: int
    source: str
    timestamp: float


class LedgerEntryModel(BaseModel):
    round_index: int
    amount: str
    reason: str
    balance: str


class LedgerResponse(BaseModel):
    occupant: str
    balance: str
    entries: list[LedgerEntryModel]


class EventModel(BaseModel):
    seq: int
    kind: str
    payload: dict


class EventsResponse(BaseModel):
    events: list[EventModel]
    last_seq: int


class AdminRequest(BaseModel):
    token: str


class ErrorBody(BaseModel):
    code: str
    message: str
    field: str | None = None
