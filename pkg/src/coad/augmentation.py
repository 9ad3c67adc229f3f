"""Training-view construction: expanded labels, repeated input, attention mask.

One patient record with N explicit and M implicit symptoms becomes a single
training sample laid out as::

    [ s_E^1 .. s_E^{N-1} | g0: s_E^N x M | g1: s_I^1 x (M-1) | ... | g{M-1}: s_I^{M-1} x 1 | s_I^M ]
      explicit prefix      repeated region (M' = M(M+1)/2 + 1 positions)

Group ``g`` repeats one chain token once per still-unseen implicit symptom and
labels those copies with the symptoms ``s_I^{g+1} .. s_I^M`` in order, so every
prefix of the dialogue is supervised against all of its future symptoms, not
just the next recorded one. The last copy in each group (its *anchor*) is the
one later groups attend to; the other copies (*probes*) are invisible to every
other position and only exist to carry extra labels. The final region position
holds the last implicit symptom, carries the end-of-inquiry label and the
record's disease label, and closes the chain.

Disease labels are assigned to a position only when the symptom set it
implies does not collide with the complete symptom set of another training
record (the *availability* rule); colliding positions get an ignore label so
conflicting disease supervision never reaches the model. Availability matches
on (symptom id, status) pairs, split-insensitively, because that is exactly
what the model can observe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import PatientRecord, PrefixIndex, Token, Vocab

__all__ = [
    "DISEASE_IGNORE",
    "WEIGHT_FORMULAS",
    "ExpandedSample",
    "align_d_labels",
    "expand_s_labels",
    "expand_d_labels",
    "build_repeated_input",
    "build_attention_mask",
    "compute_loss_weights",
    "group_anchor_positions",
    "expand_record",
]

# Ignore marker used in disease-label arrays. Symptom labels reuse the
# vocabulary's IGNORE token id instead, since that space has a real # token.
DISEASE_IGNORE = -1

# Per-position loss weight schemes, all normalizing the expanded region:
#   group:   1 / (group size) for every copy in a group; the final position 1.
#            Each chain step then contributes unit total weight. Default.
#   target:  1 / (M - t + 1) where t is the 1-based index of the position's
#            target symptom; the final position 1.
#   shifted: 1 / (group size - 1), clamped to 1 when the group has one copy;
#            the final position 1. Kept for comparison runs only.
WEIGHT_FORMULAS = ("group", "target", "shifted")


@dataclass
class ExpandedSample:
    """One record in training layout. Region-indexed fields have length M'."""

    n_explicit: int
    n_implicit: int
    disease: int
    plain_tokens: list[Token]  # original chain, length N + M
    repeated_tokens: list[Token]  # full input, length (N - 1) + M'
    group_of: list[int]  # region position -> group index in 0..M
    anchors: list[int]  # region-relative anchor of each group, then the final position
    s_labels: list[int]  # region position -> symptom token id (END/IGNORE included)
    d_labels: list[int]  # region position -> disease id or DISEASE_IGNORE
    weights: list[float]
    mask: np.ndarray  # bool, square over the full input length

    @property
    def prefix_len(self) -> int:
        return self.n_explicit - 1

    @property
    def region_len(self) -> int:
        return self.n_implicit * (self.n_implicit + 1) // 2 + 1

    @property
    def total_len(self) -> int:
        return self.prefix_len + self.region_len


def group_anchor_positions(n_implicit: int) -> list[int]:
    """Region-relative (0-based) anchor positions: one per group, then the final.

    For M implicit symptoms the anchors of groups 0..M-1 sit at
    ``(K + 1)(2M - K) / 2 - 1`` and the final position at ``M(M+1)/2``.
    """
    m = n_implicit
    anchors = [(k + 1) * (2 * m - k) // 2 - 1 for k in range(m)]
    anchors.append(m * (m + 1) // 2)
    return anchors


def _chain_sets(record: PatientRecord) -> tuple[frozenset[Token], list[Token]]:
    return frozenset(record.explicit), list(record.implicit)


def align_d_labels(record: PatientRecord, index: PrefixIndex) -> list[int]:
    """Disease label for each implicit step of the original chain.

    Step K gets the record's disease when the set of symptoms seen through
    step K does not equal another training record's complete set, and the
    ignore marker otherwise. Returns a list of length M.
    """
    own = record.symptom_set()
    explicit_set, implicit = _chain_sets(record)
    labels: list[int] = []
    prefix = set(explicit_set)
    for token in implicit:
        prefix.add(token)
        collided = index.collides(frozenset(prefix), own)
        labels.append(DISEASE_IGNORE if collided else record.disease)
    return labels


def expand_s_labels(record: PatientRecord, vocab: Vocab, final_s_label: str = "end") -> list[int]:
    """Symptom labels over the repeated region, length M'.

    Group g carries the future implicit symptoms ``s_I^{g+1} .. s_I^M`` in
    order. The final position carries the end-of-inquiry token by default, or
    the ignore token when ``final_s_label="ignore"``.
    """
    if final_s_label not in ("end", "ignore"):
        raise ValueError(f"final_s_label must be 'end' or 'ignore', got {final_s_label!r}")
    m = record.n_implicit
    labels: list[int] = []
    for g in range(m):
        labels.extend(sid for sid, _ in record.implicit[g:])
    labels.append(vocab.end_id if final_s_label == "end" else vocab.ignore_id)
    return labels


def expand_d_labels(record: PatientRecord, aligned: list[int], index: PrefixIndex) -> list[int]:
    """Disease labels over the repeated region, length M'.

    The copy in group g that targets implicit symptom t gets the disease label
    when the set {explicit, s_I^1..s_I^g, s_I^t} passes the availability rule.
    For t = g + 1 that set equals the aligned chain prefix, so the label is
    taken from ``aligned`` directly. The final position always carries the
    disease label.
    """
    own = record.symptom_set()
    explicit_set, implicit = _chain_sets(record)
    m = record.n_implicit
    labels: list[int] = []
    for g in range(m):
        base = set(explicit_set) | set(implicit[:g])
        for t in range(g, m):  # 0-based target index into implicit
            if t == g:
                labels.append(aligned[g])
                continue
            probe = frozenset(base | {implicit[t]})
            collided = index.collides(probe, own)
            labels.append(DISEASE_IGNORE if collided else record.disease)
    labels.append(record.disease)
    return labels


def build_repeated_input(record: PatientRecord) -> tuple[list[Token], list[int], list[int]]:
    """Full input tokens, per-region group indices, and anchor positions.

    Group 0 repeats the last explicit symptom M times, group g >= 1 repeats
    the g-th implicit symptom M - g times, and the final position holds the
    last implicit symptom (or the last explicit one when M = 0). Statuses are
    copied along with each repetition.
    """
    m = record.n_implicit
    tokens: list[Token] = list(record.explicit[:-1])
    group_of: list[int] = []
    for g in range(m):
        chain_token = record.explicit[-1] if g == 0 else record.implicit[g - 1]
        copies = m - g
        tokens.extend([chain_token] * copies)
        group_of.extend([g] * copies)
    final_token = record.implicit[-1] if m >= 1 else record.explicit[-1]
    tokens.append(final_token)
    group_of.append(m)
    return tokens, group_of, group_anchor_positions(m)


def build_attention_mask(n_explicit: int, n_implicit: int) -> np.ndarray:
    """Visibility matrix over the full input; entry (q, k) means q may attend to k.

    Explicit-prefix positions are causal among themselves. Every region
    position sees the whole prefix, itself, and the anchors of earlier groups,
    so anchors reconstruct exactly the plain causal chain while probes stay
    invisible to everything else.
    """
    if n_explicit < 1 or n_implicit < 0:
        raise ValueError(f"need n_explicit >= 1, n_implicit >= 0, got ({n_explicit}, {n_implicit})")
    p = n_explicit - 1
    region = n_implicit * (n_implicit + 1) // 2 + 1
    total = p + region
    mask = np.zeros((total, total), dtype=bool)
    for q in range(p):
        mask[q, : q + 1] = True
    group_anchors = [p + a for a in group_anchor_positions(n_implicit)[:-1]]
    for r in range(region):
        q = p + r
        mask[q, :p] = True
        mask[q, q] = True
        for a in group_anchors:
            if a < q:
                mask[q, a] = True
    return mask


def compute_loss_weights(n_implicit: int, weight_formula: str = "group") -> list[float]:
    """Per-position loss weights over the repeated region, length M'."""
    if weight_formula not in WEIGHT_FORMULAS:
        raise ValueError(f"unknown weight formula {weight_formula!r}, pick from {WEIGHT_FORMULAS}")
    m = n_implicit
    weights: list[float] = []
    for g in range(m):
        size = m - g
        if weight_formula == "group":
            weights.extend([1.0 / size] * size)
        elif weight_formula == "target":
            # position targeting the (t+1)-th implicit symptom, t in g..m-1
            weights.extend(1.0 / (m - t) for t in range(g, m))
        else:  # shifted
            weights.extend([1.0 / max(size - 1, 1)] * size)
    weights.append(1.0)
    return weights


def expand_record(
    record: PatientRecord,
    index: PrefixIndex,
    vocab: Vocab,
    *,
    final_s_label: str = "end",
    weight_formula: str = "group",
) -> ExpandedSample:
    """Compose the expansion pieces into one coherent training sample."""
    tokens, group_of, anchors = build_repeated_input(record)
    aligned = align_d_labels(record, index)
    sample = ExpandedSample(
        n_explicit=record.n_explicit,
        n_implicit=record.n_implicit,
        disease=record.disease,
        plain_tokens=list(record.explicit + record.implicit),
        repeated_tokens=tokens,
        group_of=group_of,
        anchors=anchors,
        s_labels=expand_s_labels(record, vocab, final_s_label=final_s_label),
        d_labels=expand_d_labels(record, aligned, index),
        weights=compute_loss_weights(record.n_implicit, weight_formula=weight_formula),
        mask=build_attention_mask(record.n_explicit, record.n_implicit),
    )
    assert len(sample.repeated_tokens) == sample.total_len
    assert len(sample.s_labels) == len(sample.d_labels) == len(sample.weights) == sample.region_len
    return sample
