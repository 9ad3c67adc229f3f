import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from coad.corpus import PatientRecord, PrefixIndex, SyntheticConfig, Vocab, generate_synthetic

settings.register_profile(
    "ci",
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
    deadline=None,
)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic(SyntheticConfig(seed=11, n_train=60, n_test=12))


@pytest.fixture(scope="session")
def small_index(small_corpus):
    return PrefixIndex(small_corpus.train)


@pytest.fixture()
def toy_vocab():
    return Vocab(
        symptoms=("fever", "sneezing", "allergy", "rash", "dyspnea", "cough", "itching"),
        diseases=("allergy rash", "common cold", "dermatitis"),
    )


@pytest.fixture()
def walkthrough_record(toy_vocab):
    """Two explicit symptoms ending in sneezing, three implicit ones."""
    v = toy_vocab
    return PatientRecord(
        explicit=((v.symptom_id("fever"), 1), (v.symptom_id("sneezing"), 1)),
        implicit=(
            (v.symptom_id("allergy"), 1),
            (v.symptom_id("rash"), 1),
            (v.symptom_id("dyspnea"), 1),
        ),
        disease=v.disease_id("allergy rash"),
    )


def random_record(rng: np.random.Generator, n_symptoms: int, n_diseases: int,
                  n_explicit: int, n_implicit: int, allow_absent: bool = True) -> PatientRecord:
    ids = rng.choice(n_symptoms, size=n_explicit + n_implicit, replace=False)
    statuses = rng.integers(1, 3 if allow_absent else 2, size=ids.size)
    tokens = tuple((int(s), int(st)) for s, st in zip(ids, statuses))
    return PatientRecord(
        explicit=tokens[:n_explicit],
        implicit=tokens[n_explicit:],
        disease=int(rng.integers(n_diseases)),
    )


def forward_repeated(model, sample):
    """Run the repeated layout; returns (hidden, sym, dis) numpy arrays, batch axis dropped."""
    from coad.model import chain_positions

    tokens = np.asarray([sid for sid, _ in sample.repeated_tokens])
    statuses = np.asarray([st for _, st in sample.repeated_tokens])
    positions = chain_positions(sample.n_explicit, sample.n_implicit)
    hid, sym, dis = model.forward(tokens, statuses, positions, sample.mask)
    return hid.data[0], sym.data[0], dis.data[0]


def forward_plain(model, tokens):
    from coad.model import causal_mask

    t = np.asarray([sid for sid, _ in tokens])
    s = np.asarray([st for _, st in tokens])
    hid, sym, dis = model.forward(t, s, np.arange(len(tokens)), causal_mask(len(tokens)))
    return hid.data[0], sym.data[0], dis.data[0]


def anchor_equivalence_diff(model, sample) -> float:
    """Max |repeated-anchor activation - plain activation| over hidden and heads."""
    hid_r, sym_r, dis_r = forward_repeated(model, sample)
    hid_p, sym_p, dis_p = forward_plain(model, sample.plain_tokens)
    p = sample.prefix_len
    anchor_abs = [p + a for a in sample.anchors]
    plain_idx = list(range(sample.n_explicit - 1, sample.n_explicit + sample.n_implicit))
    worst = 0.0
    for rep, plain in ((hid_r, hid_p), (sym_r, sym_p), (dis_r, dis_p)):
        worst = max(worst, float(np.abs(rep[anchor_abs] - plain[plain_idx]).max()))
        if p:
            worst = max(worst, float(np.abs(rep[:p] - plain[:p]).max()))
    return worst
