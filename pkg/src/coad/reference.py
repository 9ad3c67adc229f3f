"""Slow, direct reconstruction of the training view, used to cross-check
:mod:`coad.augmentation`.

Everything here is rebuilt from the dialogue-state reading of the layout and
avoids the closed-form shortcuts of the fast path: blocks are materialized one
state at a time, anchors are found as the literal last copy of each block (not
by formula), availability is a linear scan over training records, and the
visibility matrix is filled from the block structure. Keep it free of imports
from ``coad.augmentation``.
"""

from __future__ import annotations

import numpy as np

from .corpus import PatientRecord, Vocab


def reference_expand(
    record: PatientRecord,
    train_records: list[PatientRecord],
    vocab: Vocab,
    final_s_label: str = "end",
) -> dict:
    """Build the expanded sample for ``record`` by direct enumeration.

    ``train_records`` must contain ``record`` itself (matched by object
    identity when deciding what counts as *another* record).
    """
    explicit = list(record.explicit)
    implicit = list(record.implicit)
    m = len(implicit)

    def complete_set(r: PatientRecord) -> frozenset:
        return frozenset(list(r.explicit) + list(r.implicit))

    def collides(probe: frozenset) -> bool:
        return any(r is not record and complete_set(r) == probe for r in train_records)

    # One block per dialogue state g = 0..m-1: the state's last chain token is
    # copied once per future implicit symptom, each copy labeled with one of
    # those futures in order. The trailing block is the single closing position.
    blocks: list[list[dict]] = []
    for g in range(m):
        state_token = explicit[-1] if g == 0 else implicit[g - 1]
        seen = frozenset(explicit) | frozenset(implicit[:g])
        block = []
        for t in range(g, m):
            future_sid, _ = implicit[t]
            available = not collides(frozenset(seen | {implicit[t]}))
            block.append(
                {
                    "token": state_token,
                    "group": g,
                    "s_label": future_sid,
                    "d_label": record.disease if available else -1,
                    "weight": 1.0 / (m - g),
                }
            )
        blocks.append(block)
    closing_token = implicit[-1] if m >= 1 else explicit[-1]
    closing_s = vocab.end_id if final_s_label == "end" else vocab.ignore_id
    blocks.append(
        [{"token": closing_token, "group": m, "s_label": closing_s, "d_label": record.disease, "weight": 1.0}]
    )

    prefix = explicit[:-1]
    region = [pos for block in blocks for pos in block]
    anchors = []
    offset = 0
    for block in blocks:
        anchors.append(offset + len(block) - 1)
        offset += len(block)

    # Visibility: prefix positions are causal among themselves; a region
    # position sees the prefix, itself, and the last copy of every block that
    # closed before it.
    p = len(prefix)
    total = p + len(region)
    mask = np.zeros((total, total), dtype=bool)
    for q in range(p):
        for k in range(q + 1):
            mask[q, k] = True
    block_last_abs = []
    offset = p
    for block in blocks[:-1]:
        block_last_abs.append(offset + len(block) - 1)
        offset += len(block)
    for r in range(len(region)):
        q = p + r
        mask[q, q] = True
        for k in range(p):
            mask[q, k] = True
        for a in block_last_abs:
            if a < q:
                mask[q, a] = True

    return {
        "n_explicit": len(explicit),
        "n_implicit": m,
        "disease": record.disease,
        "plain_tokens": explicit + implicit,
        "repeated_tokens": prefix + [pos["token"] for pos in region],
        "group_of": [pos["group"] for pos in region],
        "anchors": anchors,
        "s_labels": [pos["s_label"] for pos in region],
        "d_labels": [pos["d_label"] for pos in region],
        "weights": [pos["weight"] for pos in region],
        "mask": mask,
    }
