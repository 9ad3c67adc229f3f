"""Auto-regressive symptom inquiry against a simulated patient or a human.

Inference runs on the plain transcript with an ordinary causal mask; training
on the repeated layout guarantees anchor activations match this exactly, so no
expansion machinery appears here. Decoding is greedy argmax with already-asked
symptoms, the patient's explicit symptoms, and the bookkeeping tokens masked
out; ties break toward the lowest symptom id. In fixed mode the end token is
also masked until the turn budget is spent; in limited mode the model may stop
any time. Uncertain answers stay in the transcript with status 0: "asked,
unknown" is real context and the status embedding has a code for it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import PatientRecord, SymptomStatus, Token, Vocab
from .model import CoadModel, causal_mask

__all__ = [
    "MODES",
    "DialogueError",
    "SimulatedPatient",
    "DialogueSession",
    "EpisodeResult",
    "next_inquiry",
    "answer",
    "diagnose",
    "run_episode",
    "run_interactive",
]

logger = logging.getLogger(__name__)

MODES = ("limited", "fixed")


class DialogueError(Exception):
    """State-machine misuse: answering without a pending inquiry, etc."""


@dataclass(frozen=True)
class SimulatedPatient:
    """Answers inquiries from a hidden record; anything unrecorded is uncertain."""

    record: PatientRecord

    def answer(self, sid: int) -> int:
        for known, status in self.record.explicit + self.record.implicit:
            if known == sid:
                return status
        return int(SymptomStatus.UNCERTAIN)


@dataclass
class DialogueSession:
    vocab: Vocab
    mode: str
    t_max: int
    transcript: list[Token] = field(default_factory=list)  # starts with the explicit symptoms
    n_explicit: int = 0
    asked: set = field(default_factory=set)
    pending: int | None = None
    turns: int = 0
    end_seen: bool = False
    forced_end: bool = False
    terminal: tuple[int, np.ndarray] | None = None

    @classmethod
    def start(cls, vocab: Vocab, explicit: list[Token], mode: str, t_max: int) -> "DialogueSession":
        if mode not in MODES:
            raise DialogueError(f"unknown mode {mode!r}, pick from {MODES}")
        if t_max < 0:
            raise DialogueError("turn budget must be nonnegative")
        if not explicit:
            raise DialogueError("a session needs at least one explicit symptom")
        seen = set()
        for sid, status in explicit:
            if not 0 <= sid < vocab.n_symptoms:
                raise DialogueError(f"explicit symptom id {sid} outside vocabulary")
            if status not in (0, 1, 2):
                raise DialogueError(f"invalid status code {status}")
            if sid in seen:
                raise DialogueError(f"explicit symptom id {sid} repeated")
            seen.add(sid)
        return cls(
            vocab=vocab, mode=mode, t_max=t_max,
            transcript=list(explicit), n_explicit=len(explicit),
        )

    @property
    def explicit_ids(self) -> set:
        return {sid for sid, _ in self.transcript[: self.n_explicit]}

    @property
    def inquired(self) -> list[int]:
        return [sid for sid, _ in self.transcript[self.n_explicit:]]


def _forward_last(model: CoadModel, session: DialogueSession):
    tokens = np.asarray([sid for sid, _ in session.transcript], dtype=np.int64)
    statuses = np.asarray([st for _, st in session.transcript], dtype=np.int64)
    positions = np.arange(len(tokens), dtype=np.int64)
    _, sym_logits, dis_logits = model.forward(
        tokens, statuses, positions, causal_mask(len(tokens)), train_mode=False
    )
    return sym_logits.data[0, -1], dis_logits.data[0, -1]


def next_inquiry(model: CoadModel, session: DialogueSession) -> int:
    """Greedy choice of the next symptom to ask, or the end token id."""
    if session.terminal is not None:
        raise DialogueError("session is terminal")
    if session.pending is not None:
        raise DialogueError("previous inquiry is still unanswered")
    sym_logits, _ = _forward_last(model, session)
    scores = sym_logits.astype(np.float64).copy()
    vocab = session.vocab
    scores[vocab.ignore_id] = -np.inf
    scores[vocab.pad_id] = -np.inf
    for sid in session.explicit_ids | session.asked:
        scores[sid] = -np.inf
    if session.mode == "fixed" and session.turns < session.t_max:
        scores[vocab.end_id] = -np.inf
    if not np.isfinite(scores).any():
        logger.info("symptom vocabulary exhausted after %d turns; forcing end", session.turns)
        session.end_seen = True
        session.forced_end = True
        return vocab.end_id
    choice = int(np.argmax(scores))  # argmax takes the first maximum: lowest id wins ties
    if choice == vocab.end_id:
        session.end_seen = True
    else:
        session.pending = choice
    return choice


def answer(session: DialogueSession, status: int) -> None:
    """Record the patient's reply to the pending inquiry."""
    if session.terminal is not None:
        raise DialogueError("session is terminal")
    if session.pending is None:
        raise DialogueError("no pending inquiry to answer")
    if status not in (0, 1, 2):
        raise DialogueError(f"invalid status code {status}")
    session.transcript.append((session.pending, int(status)))
    session.asked.add(session.pending)
    session.pending = None
    session.turns += 1


def _may_diagnose(session: DialogueSession) -> bool:
    if session.end_seen:
        return True
    if session.mode == "limited":
        return session.turns >= session.t_max
    return session.turns == session.t_max


def diagnose(model: CoadModel, session: DialogueSession) -> tuple[int, np.ndarray]:
    """Disease distribution at the end of inquiry; makes the session terminal."""
    if session.terminal is not None:
        return session.terminal
    if session.pending is not None:
        raise DialogueError("cannot diagnose with an unanswered inquiry")
    if not _may_diagnose(session):
        raise DialogueError(
            f"stopping condition not met: mode={session.mode}, turns={session.turns}, t_max={session.t_max}"
        )
    _, dis_logits = _forward_last(model, session)
    z = dis_logits.astype(np.float64)
    z = z - z.max()
    probs = np.exp(z)
    probs /= probs.sum()
    predicted = int(np.argmax(probs))
    session.terminal = (predicted, probs)
    return session.terminal


@dataclass
class EpisodeResult:
    inquired: list[int]
    transcript: list[Token]
    predicted: int
    probabilities: np.ndarray
    turns: int
    ended_by_end: bool
    vocab_exhausted: bool


def run_episode(
    model: CoadModel, record: PatientRecord, mode: str, t_max: int, vocab: Vocab
) -> EpisodeResult:
    """Play one full inquiry/diagnosis episode against the simulated patient."""
    patient = SimulatedPatient(record)
    session = DialogueSession.start(vocab, list(record.explicit), mode, t_max)
    while session.turns < t_max:
        choice = next_inquiry(model, session)
        if choice == vocab.end_id:
            if mode == "limited" or session.forced_end:
                break
            raise AssertionError("end token escaped the fixed-mode mask")
        answer(session, patient.answer(choice))
    predicted, probs = diagnose(model, session)
    return EpisodeResult(
        inquired=session.inquired,
        transcript=list(session.transcript),
        predicted=predicted,
        probabilities=probs,
        turns=session.turns,
        ended_by_end=session.end_seen,
        vocab_exhausted=session.forced_end,
    )


def run_interactive(
    model: CoadModel,
    vocab: Vocab,
    explicit: list[Token],
    mode: str,
    t_max: int,
    input_fn=input,
    print_fn=print,
) -> tuple[int, np.ndarray]:
    """Terminal loop with the human as the patient. Returns the diagnosis."""
    session = DialogueSession.start(vocab, explicit, mode, t_max)
    replies = {"y": 1, "n": 2, "u": 0}
    while session.turns < t_max:
        choice = next_inquiry(model, session)
        if choice == vocab.end_id:
            break
        name = vocab.symptom_name(choice)
        status = None
        while status is None:
            raw = input_fn(f"Agent asks: {name}? [y/n/u] ").strip().lower()
            if raw in replies:
                status = replies[raw]
            else:
                print_fn("please answer y (yes), n (no), or u (unsure)")
        answer(session, status)
    predicted, probs = diagnose(model, session)
    print_fn(f"Diagnosis after {session.turns} turn(s):")
    for did in np.argsort(-probs)[:3]:
        print_fn(f"  {vocab.disease_name(int(did))}: {probs[did]:.3f}")
    return predicted, probs
