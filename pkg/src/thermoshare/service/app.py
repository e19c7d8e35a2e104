"""HTTP facade over the session engine.

Every state transition visible here corresponds one-to-one to a session
event; the service keeps no state of its own beyond the registry. Occupants
authenticate with their per-session token and only ever see their own
payments and ledger entries; the admin token drives the round clock.
"""

from __future__ import annotations

from fastapi import FastAPI, Query
from fastapi.responses import JSONResponse

from ..energy import EnergyModelConfig
from ..session import (
    ConfigError,
    MembershipError,
    Phase,
    RoundStateError,
    SessionConfig,
    SessionError,
    WeatherSpec,
    fmt_money,
)
from .registry import SessionRegistry, UnknownSessionError
from .schemas import (
    AdminRequest,
    DecisionView,
    EventModel,
    EventsResponse,
    LedgerEntryModel,
    LedgerResponse,
    OutcomeCard,
    ReportAck,
    ReportRequest,
    RoundView,
    SessionCreateRequest,
    SessionCreateResponse,
)


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, field: str | None = None):
        self.status = status
        self.code = code
        self.message = message
        self.field = field


def _display(amount: float) -> str:
    return f"{amount:.4f}"


def _resolve_occupant(session, token: str) -> str:
    for occ, tok in session.occupant_tokens.items():
        if tok == token:
            return occ
    raise ApiError(401, "auth", "unknown occupant token")


def _require_admin(session, token: str) -> None:
    if token != session.admin_token:
        raise ApiError(401, "auth", "admin token required")


def _round_view(session, occupant: str | None) -> RoundView:
    rnd = session.current_round()
    if rnd is None:
        return RoundView(
            session_id=session.session_id,
            round_index=None,
            phase=session.phase.value,
            t0=session.t0,
            state="NotStarted",
            deadline=None,
            reports_submitted=0,
            outcomes=[],
        )
    cards = [
        OutcomeCard(
            kind=e.outcome.kind.value,
            setpoint=e.outcome.setpoint,
            incremental_cost=fmt_money(e.incremental),
            incremental_cost_display=_display(e.incremental),
        )
        for e in rnd.costs.entries
    ]
    decision = None
    if rnd.decision is not None:
        d = rnd.decision
        my_payment = None
        my_balance = None
        if occupant is not None:
            if d["payments"]:
                my_payment = d["payments"].get(occupant)
            my_balance = fmt_money(session.balances[occupant])
        decision = DecisionView(
            outcome_kind=d["outcome"]["kind"],
            setpoint=d["outcome"]["setpoint"],
            sum_valuations=d["welfare"]["sum_valuations"],
            incremental_cost=d["welfare"]["incremental_cost"],
            welfare=d["welfare"]["welfare"],
            my_payment=my_payment,
            my_balance=my_balance,
        )
    my_report = None
    if occupant is not None and occupant in rnd.reports:
        my_report = rnd.reports[occupant]["type_id"]
    return RoundView(
        session_id=session.session_id,
        round_index=rnd.index,
        phase=rnd.phase.value,
        t0=rnd.t0,
        state=rnd.state,
        deadline=rnd.deadline,
        reports_submitted=len(rnd.reports),
        outcomes=cards,
        my_report=my_report,
        decision=decision,
    )


def _redact_event(event, occupant: str | None, is_admin: bool) -> EventModel:
    payload = event.payload
    if not is_admin and event.kind == "RoundDecided" and payload.get("payments"):
        payload = dict(payload)
        payload["payments"] = (
            {occupant: payload["payments"][occupant]}
            if occupant and occupant in payload["payments"]
            else {}
        )
    elif not is_admin and event.kind == "LedgerPosted":
        payload = dict(payload)
        payload["entries"] = [
            item for item in payload["entries"] if item["occupant"] == occupant
        ]
    elif not is_admin and event.kind == "SessionCreated":
        payload = dict(payload)
        payload["occupant_tokens"] = {}
        payload["admin_token"] = ""
    return EventModel(seq=event.seq, kind=event.kind, payload=payload)


def create_app(registry: SessionRegistry | None = None, ui_dir: str | None = None) -> FastAPI:
    registry = registry or SessionRegistry()
    app = FastAPI(title="thermoshare", version="0.1.0")
    app.state.registry = registry
    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    @app.exception_handler(ApiError)
    def _api_error(_, exc: ApiError):
        body = {"code": exc.code, "message": exc.message}
        if exc.field:
            body["field"] = exc.field
        return JSONResponse(status_code=exc.status, content=body)

    def _handle(session_id: str):
        try:
            return registry.get(session_id)
        except UnknownSessionError:
            raise ApiError(404, "not_found", f"unknown session {session_id!r}")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "sessions": len(registry.session_ids())}

    @app.post("/sessions", response_model=SessionCreateResponse, status_code=201)
    def create_session(req: SessionCreateRequest):
        weather = (
            WeatherSpec("constant", req.weather.outdoor_c)
            if req.weather.mode == "constant"
            else WeatherSpec("trace", samples=[(t, c) for t, c in (req.weather.samples or [])])
        )
        try:
            config = SessionConfig(
                occupants=req.occupants,
                temp_lower=req.temp_lower,
                temp_upper=req.temp_upper,
                round_length_s=req.round_length_s,
                phase=Phase(req.phase),
                base_setpoint=req.base_setpoint,
                initial_temp=req.initial_temp,
                smoothing=req.smoothing,
                payment_rule=req.payment_rule,
                energy=EnergyModelConfig(
                    ua=req.energy.ua,
                    internal_gains=req.energy.internal_gains,
                    cop=req.energy.cop,
                    price=req.energy.price,
                    interval=req.energy.interval,
                    base_setpoint=req.base_setpoint,
                ),
                weather=weather,
                initial_prior_counts=req.initial_prior_counts,
            )
        except (ConfigError, ValueError) as exc:
            raise ApiError(400, "invalid_config", str(exc))
        handle = registry.create(config)
        session = handle.session
        return SessionCreateResponse(
            session_id=session.session_id,
            admin_token=session.admin_token,
            occupant_tokens=dict(session.occupant_tokens),
            config=session.config.to_dict(),
        )

    @app.get("/sessions/{session_id}/round", response_model=RoundView)
    def get_round(session_id: str, token: str | None = Query(default=None)):
        handle = _handle(session_id)

        def view(session):
            occupant = _resolve_occupant(session, token) if token else None
            return _round_view(session, occupant)

        return handle.read(view)

    @app.post("/sessions/{session_id}/reports", response_model=ReportAck)
    def post_report(session_id: str, req: ReportRequest):
        handle = _handle(session_id)

        def submit(session):
            occupant = _resolve_occupant(session, req.token)
            try:
                record = session.submit_report(occupant, req.type_id)
            except RoundStateError as exc:
                raise ApiError(409, "round_closed", str(exc))
            except MembershipError as exc:
                raise ApiError(401, "auth", str(exc))
            except SessionError as exc:
                raise ApiError(400, "invalid_report", str(exc), field="type_id")
            return ReportAck(
                occupant=occupant,
                type_id=record["type_id"],
                source=record["source"],
                timestamp=record["timestamp"],
            )

        return handle.mutate(submit)

    @app.get("/sessions/{session_id}/ledger", response_model=LedgerResponse)
    def get_ledger(session_id: str, token: str = Query(...)):
        handle = _handle(session_id)

        def view(session):
            occupant = _resolve_occupant(session, token)
            entries = [
                LedgerEntryModel(
                    round_index=e.round_index,
                    amount=fmt_money(e.amount),
                    reason=e.reason,
                    balance=fmt_money(e.balance),
                )
                for e in session.ledger_entries(occupant)
            ]
            return LedgerResponse(
                occupant=occupant,
                balance=fmt_money(session.ledger_balance(occupant)),
                entries=entries,
            )

        return handle.read(view)

    @app.get("/sessions/{session_id}/events", response_model=EventsResponse)
    def get_events(
        session_id: str,
        after: int = Query(default=0, ge=0),
        token: str = Query(...),
        wait_ms: int = Query(default=0, ge=0, le=30000),
    ):
        handle = _handle(session_id)

        def who(session):
            if token == session.admin_token:
                return None, True
            return _resolve_occupant(session, token), False

        occupant, is_admin = handle.read(who)
        events = handle.wait_for_events(after, wait_ms / 1000.0)
        models = [_redact_event(e, occupant, is_admin) for e in events]
        last = events[-1].seq if events else after
        return EventsResponse(events=models, last_seq=last)

    @app.post("/sessions/{session_id}/admin/open-round", response_model=RoundView)
    def open_round(session_id: str, req: AdminRequest):
        handle = _handle(session_id)

        def run(session):
            _require_admin(session, req.token)
            try:
                session.open_round()
            except RoundStateError as exc:
                raise ApiError(409, "round_open", str(exc))
            return _round_view(session, None)

        return handle.mutate(run)

    @app.post("/sessions/{session_id}/admin/close-round", response_model=RoundView)
    def close_round(session_id: str, req: AdminRequest):
        handle = _handle(session_id)

        def run(session):
            _require_admin(session, req.token)
            try:
                session.close_round()
            except RoundStateError as exc:
                raise ApiError(409, "no_open_round", str(exc))
            return _round_view(session, None)

        return handle.mutate(run)

    return app
