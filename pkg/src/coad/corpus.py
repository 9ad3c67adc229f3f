"""Patient records, vocabularies, corpus files, and a synthetic corpus generator.

A corpus holds diagnosis dialogues in their flattened form: per patient, the
symptoms volunteered up front (explicit), the symptoms elicited afterwards
(implicit), a status per symptom, and the diagnosed disease.

Corpus files are UTF-8 JSON lines. The first line is a header object
``{"symptoms": [...], "diseases": [...]}``; every following line is one
record ``{"explicit": [[name, status], ...], "implicit": [[name, status], ...],
"disease": name, "split": "train"|"test"}``. The ``split`` key is optional and
defaults to ``"train"``. Stored statuses are 1 (confirmed present) or 2
(confirmed absent); the uncertain status 0 only arises at inference time, when
the agent asks about a symptom the record does not mention.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

__all__ = [
    "SymptomStatus",
    "Vocab",
    "PatientRecord",
    "Corpus",
    "SyntheticConfig",
    "CorpusError",
    "CorpusParseError",
    "CorpusValidationError",
    "load_corpus",
    "write_corpus",
    "generate_synthetic",
    "build_prefix_index",
    "PrefixIndex",
]

END_TOKEN = "[END]"
IGNORE_TOKEN = "#"
PAD_TOKEN = "[PAD]"
SPECIAL_TOKENS = (END_TOKEN, IGNORE_TOKEN, PAD_TOKEN)


class SymptomStatus(IntEnum):
    """Tri-state answer a patient can give about one symptom."""

    UNCERTAIN = 0
    PRESENT = 1
    ABSENT = 2


STORED_STATUSES = (SymptomStatus.PRESENT, SymptomStatus.ABSENT)


class CorpusError(Exception):
    """Base class for corpus loading/validation failures."""


class CorpusParseError(CorpusError):
    """The file is not valid JSON lines or misses required keys."""


class CorpusValidationError(CorpusError):
    """The file parsed but violates a record or vocabulary invariant."""


@dataclass(frozen=True)
class Vocab:
    """Bijective name<->id mapping for symptoms and diseases.

    Symptom token ids are laid out as the named symptoms followed by the three
    special tokens END (stop inquiring), IGNORE (a label excluded from
    training), and PAD (batch padding). Disease ids carry no specials.
    """

    symptoms: tuple[str, ...]
    diseases: tuple[str, ...]

    def __post_init__(self):
        for kind, names in (("symptom", self.symptoms), ("disease", self.diseases)):
            if len(set(names)) != len(names):
                raise CorpusValidationError(f"duplicate {kind} names in vocabulary")
        clash = set(self.symptoms) & set(SPECIAL_TOKENS)
        if clash:
            raise CorpusValidationError(f"symptom names collide with special tokens: {sorted(clash)}")

    @cached_property
    def _symptom_ids(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.symptoms)}

    @cached_property
    def _disease_ids(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.diseases)}

    @property
    def n_symptoms(self) -> int:
        return len(self.symptoms)

    @property
    def n_diseases(self) -> int:
        return len(self.diseases)

    @property
    def end_id(self) -> int:
        return len(self.symptoms)

    @property
    def ignore_id(self) -> int:
        return len(self.symptoms) + 1

    @property
    def pad_id(self) -> int:
        return len(self.symptoms) + 2

    @property
    def n_symptom_tokens(self) -> int:
        """Size of the symptom token space including the special tokens."""
        return len(self.symptoms) + len(SPECIAL_TOKENS)

    def symptom_id(self, name: str) -> int:
        try:
            return self._symptom_ids[name]
        except KeyError:
            raise CorpusValidationError(f"unknown symptom name: {name!r}") from None

    def disease_id(self, name: str) -> int:
        try:
            return self._disease_ids[name]
        except KeyError:
            raise CorpusValidationError(f"unknown disease name: {name!r}") from None

    def symptom_name(self, sid: int) -> str:
        if 0 <= sid < len(self.symptoms):
            return self.symptoms[sid]
        specials = {self.end_id: END_TOKEN, self.ignore_id: IGNORE_TOKEN, self.pad_id: PAD_TOKEN}
        if sid in specials:
            return specials[sid]
        raise CorpusValidationError(f"symptom id out of range: {sid}")

    def disease_name(self, did: int) -> str:
        if 0 <= did < len(self.diseases):
            return self.diseases[did]
        raise CorpusValidationError(f"disease id out of range: {did}")


Token = tuple[int, int]  # (symptom id, status code)


@dataclass(frozen=True)
class PatientRecord:
    """One flattened dialogue: explicit symptoms, implicit symptoms, disease."""

    explicit: tuple[Token, ...]
    implicit: tuple[Token, ...]
    disease: int

    def __post_init__(self):
        if len(self.explicit) < 1:
            raise CorpusValidationError("record needs at least one explicit symptom")
        ids = [sid for sid, _ in self.explicit] + [sid for sid, _ in self.implicit]
        if len(set(ids)) != len(ids):
            dupes = sorted(sid for sid, n in Counter(ids).items() if n > 1)
            raise CorpusValidationError(f"symptom ids repeated within one record: {dupes}")
        for _, status in self.explicit + self.implicit:
            if status not in (0, 1, 2):
                raise CorpusValidationError(f"invalid status code: {status}")

    @property
    def n_explicit(self) -> int:
        return len(self.explicit)

    @property
    def n_implicit(self) -> int:
        return len(self.implicit)

    def symptom_set(self) -> frozenset[Token]:
        """The record's full (symptom, status) set, explicit and implicit merged."""
        return frozenset(self.explicit) | frozenset(self.implicit)

    def implicit_ids(self) -> frozenset[int]:
        return frozenset(sid for sid, _ in self.implicit)


@dataclass(frozen=True)
class Corpus:
    train: tuple[PatientRecord, ...]
    test: tuple[PatientRecord, ...]
    vocab: Vocab

    def __post_init__(self):
        for rec in self.train + self.test:
            for sid, _ in rec.explicit + rec.implicit:
                if not 0 <= sid < self.vocab.n_symptoms:
                    raise CorpusValidationError(f"symptom id {sid} outside vocabulary")
            if not 0 <= rec.disease < self.vocab.n_diseases:
                raise CorpusValidationError(f"disease id {rec.disease} outside vocabulary")

    def stats(self) -> dict:
        """Corpus statistics: sizes, vocabulary sizes, status kinds, mean record length."""
        records = self.train + self.test
        lengths = [r.n_explicit + r.n_implicit for r in records]
        has_negative = any(
            status == SymptomStatus.ABSENT for r in records for _, status in r.explicit + r.implicit
        )
        return {
            "diseases": self.vocab.n_diseases,
            "symptoms": self.vocab.n_symptoms,
            "symptom_type": "True/False" if has_negative else "True",
            "average_length": float(np.mean(lengths)) if lengths else 0.0,
            "train": len(self.train),
            "test": len(self.test),
        }


def _record_to_json(record: PatientRecord, vocab: Vocab, split: str) -> dict:
    return {
        "explicit": [[vocab.symptom_name(sid), int(st)] for sid, st in record.explicit],
        "implicit": [[vocab.symptom_name(sid), int(st)] for sid, st in record.implicit],
        "disease": vocab.disease_name(record.disease),
        "split": split,
    }


def _record_from_json(obj: dict, vocab: Vocab, lineno: int) -> PatientRecord:
    try:
        raw_explicit = obj["explicit"]
        raw_implicit = obj.get("implicit", [])
        disease_name = obj["disease"]
    except (KeyError, TypeError) as exc:
        raise CorpusParseError(f"line {lineno}: record misses key {exc}") from None

    def tokens(raw, field):
        out = []
        for entry in raw:
            if not isinstance(entry, (list, tuple)) or len(entry) != 2:
                raise CorpusParseError(f"line {lineno}: {field} entries must be [name, status]")
            name, status = entry
            if status not in (1, 2):
                raise CorpusValidationError(
                    f"line {lineno}: stored status must be 1 or 2, got {status!r}"
                    " (uncertain/0 is a runtime-only answer)"
                )
            out.append((vocab.symptom_id(name), int(status)))
        return tuple(out)

    try:
        return PatientRecord(
            explicit=tokens(raw_explicit, "explicit"),
            implicit=tokens(raw_implicit, "implicit"),
            disease=vocab.disease_id(disease_name),
        )
    except CorpusValidationError as exc:
        raise CorpusValidationError(f"line {lineno}: {exc}") from None


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    """Serialize a corpus to the JSON-lines schema described in the module docstring."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {"symptoms": list(corpus.vocab.symptoms), "diseases": list(corpus.vocab.diseases)}
        fh.write(json.dumps(header) + "\n")
        for split, records in (("train", corpus.train), ("test", corpus.test)):
            for rec in records:
                fh.write(json.dumps(_record_to_json(rec, corpus.vocab, split)) + "\n")


def load_corpus(path: str | Path) -> Corpus:
    """Parse and validate a corpus file.

    The header line is optional; without it the vocabulary is inferred from the
    records in order of first appearance.
    """
    path = Path(path)
    try:
        raw_lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read corpus file: {exc}") from None
    lines: list[tuple[int, dict]] = []
    for lineno, line in enumerate(raw_lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusParseError(f"line {lineno}: not valid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise CorpusParseError(f"line {lineno}: expected a JSON object")
        lines.append((lineno, obj))
    if not lines:
        raise CorpusParseError("empty corpus file")

    first_no, first = lines[0]
    if "symptoms" in first and "diseases" in first:
        vocab = Vocab(symptoms=tuple(first["symptoms"]), diseases=tuple(first["diseases"]))
        record_lines = lines[1:]
    else:
        vocab = _infer_vocab(obj for _, obj in lines)
        record_lines = lines

    train: list[PatientRecord] = []
    test: list[PatientRecord] = []
    for lineno, obj in record_lines:
        split = obj.get("split", "train")
        if split not in ("train", "test"):
            raise CorpusParseError(f"line {lineno}: unknown split {split!r}")
        rec = _record_from_json(obj, vocab, lineno)
        (train if split == "train" else test).append(rec)
    return Corpus(train=tuple(train), test=tuple(test), vocab=vocab)


def _infer_vocab(objs: Iterable[dict]) -> Vocab:
    symptoms: dict[str, None] = {}
    diseases: dict[str, None] = {}
    for obj in objs:
        for field in ("explicit", "implicit"):
            for entry in obj.get(field, []):
                if isinstance(entry, (list, tuple)) and len(entry) == 2:
                    symptoms.setdefault(entry[0], None)
        if "disease" in obj:
            diseases.setdefault(obj["disease"], None)
    return Vocab(symptoms=tuple(symptoms), diseases=tuple(diseases))


# Name pools keep generated corpora readable in the CLI and web client.
# Generation falls back to numbered names past the pool size.
_SYMPTOM_NAME_POOL = (
    "headache", "runny nose", "sneezing", "cough", "fever", "sore throat",
    "fatigue", "nausea", "vomiting", "diarrhea", "rash", "itching",
    "chest pain", "shortness of breath", "wheezing", "dizziness", "chills",
    "muscle ache", "joint pain", "back pain", "abdominal pain", "bloating",
    "loss of taste", "loss of smell", "ear pain", "eye redness", "swelling",
    "night sweats", "palpitations", "numbness", "tingling", "dry mouth",
    "hoarseness", "nasal congestion", "watery eyes", "loss of appetite",
    "weight loss", "insomnia", "confusion", "tremor",
)
_DISEASE_NAME_POOL = (
    "common cold", "allergic rhinitis", "influenza", "gastroenteritis",
    "migraine", "asthma", "dermatitis", "pneumonia", "anemia", "sinusitis",
    "bronchitis", "otitis media",
)


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the synthetic corpus generator.

    Each disease gets a characteristic symptom profile of ``profile_size``
    symptoms. A record draws its disease uniformly, keeps each profile symptom
    with probability ``profile_presence``, and derives its implicit count from
    the kept set (clamped into ``implicit_range``), trimming or padding with
    uniformly chosen noise symptoms only when the clamp forces it. Record
    length is therefore a function of content, which keeps "no more symptoms
    to ask" a learnable property rather than an arbitrary cutoff. Every kept
    symptom is marked absent with probability ``negative_status_prob``
    (present otherwise), and the whole set is randomly permuted before the
    explicit/implicit split, so implicit order carries no information.
    """

    n_diseases: int = 8
    n_symptoms: int = 30
    profile_size: int = 6
    profile_presence: float = 0.75
    negative_status_prob: float = 0.15
    explicit_range: tuple[int, int] = (1, 2)
    implicit_range: tuple[int, int] = (2, 5)
    n_train: int = 500
    n_test: int = 100
    seed: int = 0

    def validate(self) -> None:
        if self.n_diseases < 1 or self.n_symptoms < 1:
            raise ValueError("need at least one disease and one symptom")
        if not (1 <= self.explicit_range[0] <= self.explicit_range[1]):
            raise ValueError(f"bad explicit range {self.explicit_range}")
        if not (1 <= self.implicit_range[0] <= self.implicit_range[1]):
            raise ValueError(f"bad implicit range {self.implicit_range}")
        for name in ("profile_presence", "negative_status_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.profile_size > self.n_symptoms:
            raise ValueError("profile_size exceeds the symptom vocabulary")
        if self.explicit_range[1] + self.implicit_range[1] > self.n_symptoms:
            raise ValueError("a maximal record would need more distinct symptoms than exist")
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("corpus sizes must be nonnegative")


def _pool_names(pool: tuple[str, ...], n: int, prefix: str) -> tuple[str, ...]:
    if n <= len(pool):
        return pool[:n]
    extra = tuple(f"{prefix}-{i:03d}" for i in range(len(pool), n))
    return pool + extra


def generate_synthetic(config: SyntheticConfig) -> Corpus:
    """Generate a corpus deterministically from ``config`` (seed included)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    vocab = Vocab(
        symptoms=_pool_names(_SYMPTOM_NAME_POOL, config.n_symptoms, "symptom"),
        diseases=_pool_names(_DISEASE_NAME_POOL, config.n_diseases, "disease"),
    )
    profiles = [
        rng.choice(config.n_symptoms, size=config.profile_size, replace=False)
        for _ in range(config.n_diseases)
    ]

    def one_record() -> PatientRecord:
        disease = int(rng.integers(config.n_diseases))
        n = int(rng.integers(config.explicit_range[0], config.explicit_range[1] + 1))
        kept = [int(s) for s in profiles[disease] if rng.random() < config.profile_presence]
        m = min(max(len(kept) - n, config.implicit_range[0]), config.implicit_range[1])
        total = n + m
        if len(kept) > total:
            kept = [int(s) for s in rng.permutation(kept)[:total]]
        elif len(kept) < total:
            others = np.setdiff1d(np.arange(config.n_symptoms), kept)
            fill = rng.choice(others, size=total - len(kept), replace=False)
            kept = kept + [int(s) for s in fill]
        order = [int(s) for s in rng.permutation(kept)]
        statuses = [
            int(SymptomStatus.ABSENT) if rng.random() < config.negative_status_prob
            else int(SymptomStatus.PRESENT)
            for _ in order
        ]
        tokens = tuple(zip(order, statuses))
        return PatientRecord(explicit=tokens[:n], implicit=tokens[n:], disease=disease)

    train = tuple(one_record() for _ in range(config.n_train))
    test = tuple(one_record() for _ in range(config.n_test))
    return Corpus(train=train, test=test, vocab=vocab)


class PrefixIndex:
    """Multiset of complete-record symptom sets over a training split.

    The index answers whether a given (symptom, status) set coincides with the
    complete symptom set of some training record, which is the collision test
    behind intermediate disease-label assignment.
    """

    def __init__(self, records: Iterable[PatientRecord]):
        self._counts: Counter[frozenset[Token]] = Counter(r.symptom_set() for r in records)

    def count(self, symptoms: frozenset[Token]) -> int:
        return self._counts.get(symptoms, 0)

    def contains_complete(self, symptoms: frozenset[Token]) -> bool:
        """Is this exact set the complete symptom set of some training record?"""
        return symptoms in self._counts

    def collides(self, symptoms: frozenset[Token], own: frozenset[Token]) -> bool:
        """Does ``symptoms`` equal the complete set of a training record other
        than the one whose complete set is ``own``?"""
        needed = 2 if symptoms == own else 1
        return self._counts.get(symptoms, 0) >= needed


def build_prefix_index(records: Iterable[PatientRecord]) -> PrefixIndex:
    return PrefixIndex(records)
