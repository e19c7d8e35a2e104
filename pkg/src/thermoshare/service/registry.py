"""In-process session store with single-writer discipline and durable logs.

Each session has one lock: every mutation runs under it, so the HTTP layer
can serve any number of concurrent readers while commands stay serialized.
New events are appended to the session's line-delimited log file immediately,
which makes graceful shutdown a no-op for durability.
"""

from __future__ import annotations

import os
import threading
from pathlib import Path

from ..session import Event, Session, SessionConfig, read_event_log


class UnknownSessionError(KeyError):
    pass


class SessionHandle:
    def __init__(self, session: Session, log_path: Path | None):
        self.session = session
        self.lock = threading.RLock()
        self.changed = threading.Condition(self.lock)
        self.log_path = log_path
        self._persisted = 0

    def mutate(self, fn):
        """Run a command under the writer lock, persist new events, wake waiters."""
        with self.lock:
            result = fn(self.session)
            self._persist_new_events()
            self.changed.notify_all()
            return result

    def read(self, fn):
        with self.lock:
            return fn(self.session)

    def wait_for_events(self, after_seq: int, timeout: float) -> list[Event]:
        with self.lock:
            events = [e for e in self.session.events if e.seq > after_seq]
            if events or timeout <= 0:
                return events
            self.changed.wait(timeout)
            return [e for e in self.session.events if e.seq > after_seq]

    def _persist_new_events(self):
        if self.log_path is None:
            return
        events = self.session.events
        if self._persisted >= len(events):
            return
        with open(self.log_path, "a") as fh:
            for event in events[self._persisted:]:
                fh.write(event.to_json() + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._persisted = len(events)


class SessionRegistry:
    def __init__(self, data_dir: str | None = None):
        self._handles: dict[str, SessionHandle] = {}
        self._lock = threading.Lock()
        self.data_dir = Path(data_dir) if data_dir else None
        if self.data_dir:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            self._recover()

    def _recover(self):
        for log_file in sorted(self.data_dir.glob("*.ndjson")):
            session = Session.replay(read_event_log(log_file))
            handle = SessionHandle(session, log_file)
            handle._persisted = len(session.events)
            self._handles[session.session_id] = handle

    def create(self, config: SessionConfig) -> SessionHandle:
        session = Session.create(config)
        log_path = (
            self.data_dir / f"{session.session_id}.ndjson" if self.data_dir else None
        )
        handle = SessionHandle(session, log_path)
        with self._lock:
            self._handles[session.session_id] = handle
        with handle.lock:
            handle._persist_new_events()
        return handle

    def get(self, session_id: str) -> SessionHandle:
        with self._lock:
            try:
                return self._handles[session_id]
            except KeyError:
                raise UnknownSessionError(session_id) from None

    def session_ids(self) -> list[str]:
        with self._lock:
            return list(self._handles)
