"""Session-oriented HTTP API for interactive diagnosis.

Endpoints (JSON bodies, errors as ``{"code", "message"}``)::

    POST /v1/sessions                  {explicit: [[name, status], ...], mode, t_max}
    POST /v1/sessions/{id}/answer      {status: 0|1|2}
    GET  /v1/sessions/{id}             current state (lets a client recover after refresh)
    GET  /v1/vocab                     {symptoms: [...], diseases: [...]}
    GET  /v1/healthz                   {status: "ok"}

Session state lives server-side under unguessable ids with idle expiry; the
model is shared read-only and each session is serialized by its own lock, so
concurrent sessions never interleave state. When ``static_dir`` is given,
anything outside ``/v1`` is served from that directory (the web client).
"""

from __future__ import annotations

import json
import mimetypes
import re
import secrets
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .corpus import Vocab
from .dialogue import DialogueError, DialogueSession, answer, diagnose, next_inquiry
from .model import CoadModel

__all__ = ["ApiError", "SessionStore", "DiagnosisApi", "build_server"]

_SESSION_PATH = re.compile(r"^/v1/sessions/([A-Za-z0-9_-]+)(/answer)?$")


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class _Entry:
    session: DialogueSession
    lock: threading.Lock = field(default_factory=threading.Lock)
    touched: float = field(default_factory=time.monotonic)


class SessionStore:
    """Threadsafe id -> session map with idle expiry."""

    def __init__(self, idle_ttl: float = 1800.0, clock=time.monotonic):
        self._entries: dict[str, _Entry] = {}
        self._lock = threading.Lock()
        self._ttl = idle_ttl
        self._clock = clock

    def create(self, session: DialogueSession) -> str:
        sid = secrets.token_urlsafe(16)
        with self._lock:
            self._sweep()
            self._entries[sid] = _Entry(session=session, touched=self._clock())
        return sid

    def get(self, sid: str) -> _Entry:
        with self._lock:
            self._sweep()
            entry = self._entries.get(sid)
            if entry is None:
                raise ApiError(404, "unknown_session", f"no session {sid!r} (it may have expired)")
            entry.touched = self._clock()
            return entry

    def _sweep(self) -> None:
        now = self._clock()
        dead = [sid for sid, e in self._entries.items() if now - e.touched > self._ttl]
        for sid in dead:
            del self._entries[sid]

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


class DiagnosisApi:
    """Transport-independent request handlers; the HTTP layer is a thin shim."""

    def __init__(self, model: CoadModel, vocab: Vocab, store: SessionStore, top_k: int = 3):
        self.model = model
        self.vocab = vocab
        self.store = store
        self.top_k = top_k

    def vocab_payload(self) -> dict:
        return {"symptoms": list(self.vocab.symptoms), "diseases": list(self.vocab.diseases)}

    def _state(self, session: DialogueSession) -> dict:
        pending = None if session.pending is None else self.vocab.symptom_name(session.pending)
        diagnosis = None
        if session.terminal is not None:
            predicted, probs = session.terminal
            ranked = [
                {"disease": self.vocab.disease_name(int(d)), "p": float(probs[d])}
                for d in np.argsort(-probs)
            ]
            diagnosis = {
                "disease": self.vocab.disease_name(predicted),
                "ranked": ranked,
                "top": ranked[: self.top_k],
            }
        return {
            "transcript": [[self.vocab.symptom_name(sid), status] for sid, status in session.transcript],
            "n_explicit": session.n_explicit,
            "pending": pending,
            "diagnosis": diagnosis,
            "turns": session.turns,
            "t_max": session.t_max,
            "mode": session.mode,
        }

    def _advance(self, session: DialogueSession) -> None:
        """Ask the next question, or diagnose once the stopping condition holds."""
        if session.terminal is not None:
            return
        if session.turns >= session.t_max:
            diagnose(self.model, session)
            return
        choice = next_inquiry(self.model, session)
        if choice == self.vocab.end_id:
            diagnose(self.model, session)

    def create_session(self, body: dict) -> tuple[int, dict]:
        explicit_raw = body.get("explicit")
        if not isinstance(explicit_raw, list) or not explicit_raw:
            raise ApiError(400, "bad_request", "explicit must be a non-empty list of [name, status]")
        mode = body.get("mode", "limited")
        if mode not in ("limited", "fixed"):
            raise ApiError(400, "bad_request", f"unknown mode {mode!r}")
        t_max = body.get("t_max", 10)
        if not isinstance(t_max, int) or t_max < 0:
            raise ApiError(400, "bad_request", "t_max must be a nonnegative integer")
        if mode == "fixed" and t_max == 0:
            raise ApiError(400, "bad_request", "fixed mode with t_max=0 asks for nothing")
        explicit = []
        for entry in explicit_raw:
            if not isinstance(entry, list) or len(entry) != 2:
                raise ApiError(400, "bad_request", "explicit entries must be [name, status]")
            name, status = entry
            if status not in (0, 1, 2):
                raise ApiError(400, "bad_status", f"status must be 0, 1, or 2, got {status!r}")
            try:
                sid = self.vocab.symptom_id(name)
            except Exception:
                raise ApiError(400, "unknown_symptom", f"unknown symptom name: {name!r}") from None
            explicit.append((sid, int(status)))
        try:
            session = DialogueSession.start(self.vocab, explicit, mode, t_max)
        except DialogueError as exc:
            raise ApiError(400, "bad_request", str(exc)) from None
        self._advance(session)
        sid = self.store.create(session)
        return 201, {"session_id": sid, "state": self._state(session)}

    def get_session(self, sid: str) -> tuple[int, dict]:
        entry = self.store.get(sid)
        with entry.lock:
            return 200, {"session_id": sid, "state": self._state(entry.session)}

    def answer_inquiry(self, sid: str, body: dict) -> tuple[int, dict]:
        entry = self.store.get(sid)
        with entry.lock:
            session = entry.session
            if session.terminal is not None:
                raise ApiError(409, "terminal_session", "session already holds a diagnosis")
            if session.pending is None:
                raise ApiError(409, "no_pending_inquiry", "no inquiry awaiting an answer")
            status = body.get("status")
            if status not in (0, 1, 2):
                raise ApiError(400, "bad_status", f"status must be 0, 1, or 2, got {status!r}")
            answer(session, int(status))
            self._advance(session)
            return 200, {"session_id": sid, "state": self._state(session)}

    def dispatch(self, method: str, path: str, body: dict) -> tuple[int, dict]:
        if method == "GET" and path == "/v1/healthz":
            return 200, {"status": "ok"}
        if method == "GET" and path == "/v1/vocab":
            return 200, self.vocab_payload()
        if method == "POST" and path == "/v1/sessions":
            return self.create_session(body)
        m = _SESSION_PATH.match(path)
        if m:
            sid, is_answer = m.group(1), m.group(2)
            if method == "POST" and is_answer:
                return self.answer_inquiry(sid, body)
            if method == "GET" and not is_answer:
                return self.get_session(sid)
        raise ApiError(404, "not_found", f"no route for {method} {path}")


def build_server(
    model: CoadModel,
    vocab: Vocab,
    host: str = "127.0.0.1",
    port: int = 8000,
    static_dir: str | None = None,
    idle_ttl: float = 1800.0,
) -> ThreadingHTTPServer:
    api = DiagnosisApi(model, vocab, SessionStore(idle_ttl=idle_ttl))
    static_root = Path(static_dir).resolve() if static_dir else None

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # silence request logging in tests
            pass

        def _send_json(self, status: int, payload: dict) -> None:
            blob = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(blob)))
            self.end_headers()
            self.wfile.write(blob)

        def _handle(self, method: str) -> None:
            path = self.path.split("?", 1)[0]
            if not path.startswith("/v1") and method == "GET" and static_root is not None:
                self._serve_static(path)
                return
            body = {}
            length = int(self.headers.get("Content-Length") or 0)
            if length:
                try:
                    body = json.loads(self.rfile.read(length).decode("utf-8"))
                except json.JSONDecodeError:
                    self._send_json(400, {"code": "bad_json", "message": "request body is not valid JSON"})
                    return
            try:
                status, payload = api.dispatch(method, path, body)
            except ApiError as exc:
                self._send_json(exc.status, {"code": exc.code, "message": exc.message})
                return
            self._send_json(status, payload)

        def _serve_static(self, path: str) -> None:
            rel = path.lstrip("/") or "index.html"
            target = (static_root / rel).resolve()
            if not str(target).startswith(str(static_root)) or not target.is_file():
                self._send_json(404, {"code": "not_found", "message": path})
                return
            blob = target.read_bytes()
            ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(blob)))
            self.end_headers()
            self.wfile.write(blob)

        def do_GET(self):
            self._handle("GET")

        def do_POST(self):
            self._handle("POST")

    server = ThreadingHTTPServer((host, port), Handler)
    server.api = api  # exposed for tests
    return server
