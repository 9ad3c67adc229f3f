import math

import numpy as np
import pytest

from coad import engine
from coad.augmentation import DISEASE_IGNORE, expand_record
from coad.corpus import PatientRecord, PrefixIndex, SyntheticConfig, generate_synthetic
from coad.engine import Tape
from coad.model import CoadModel, ModelConfig
from coad.training import (
    Adam,
    TrainConfig,
    TrainingDiverged,
    build_train_sample,
    clip_global_norm,
    collaborative_loss,
    collate,
    expanded_train_sample,
    plain_train_sample,
    train,
)

from conftest import random_record


def tiny_model(vocab, dtype="float64", seed=5, dropout=0.0):
    cfg = ModelConfig(
        n_symptom_tokens=vocab.n_symptom_tokens, n_diseases=vocab.n_diseases,
        layers=1, hidden=16, heads=2, ff=32, dropout=dropout, max_len=48, seed=seed, dtype=dtype,
    )
    return CoadModel(cfg)


def batch_loss(model, batch):
    _, sym, dis = model.forward(batch.tokens, batch.statuses, batch.positions, batch.mask)
    total, sym_t, dis_t = collaborative_loss(sym, dis, batch)
    return total.item(), sym_t.item(), dis_t.item()


class TestVariantLabels:
    @pytest.fixture()
    def sample(self, toy_vocab, walkthrough_record):
        return expand_record(walkthrough_record, PrefixIndex([walkthrough_record]), toy_vocab)

    def test_full_keeps_everything(self, sample, toy_vocab):
        ts = expanded_train_sample(sample, toy_vocab, "full")
        p = sample.prefix_len
        assert ts.s_labels[:p].tolist() == [toy_vocab.ignore_id] * p
        assert ts.s_labels[p:].tolist() == sample.s_labels
        assert ts.d_labels[p:].tolist() == sample.d_labels
        assert ts.weights[p:].tolist() == pytest.approx(sample.weights)

    def test_no_d_keeps_only_final_disease(self, sample, toy_vocab):
        ts = expanded_train_sample(sample, toy_vocab, "no_d")
        assert ts.d_labels[-1] == sample.disease
        assert set(ts.d_labels[:-1].tolist()) == {DISEASE_IGNORE}
        assert ts.s_labels[sample.prefix_len:].tolist() == sample.s_labels

    def test_no_s_reverts_anchors_to_next_symptom(self, sample, toy_vocab, walkthrough_record):
        ts = expanded_train_sample(sample, toy_vocab, "no_s")
        p = sample.prefix_len
        region = ts.s_labels[p:].tolist()
        implicit_sids = [sid for sid, _ in walkthrough_record.implicit]
        for g, anchor in enumerate(sample.anchors[:-1]):
            assert region[anchor] == implicit_sids[g]
        assert region[sample.anchors[-1]] == toy_vocab.end_id
        probes = [r for r in range(sample.region_len) if r not in sample.anchors]
        assert all(region[r] == toy_vocab.ignore_id for r in probes)
        # disease supervision is untouched
        assert ts.d_labels[p:].tolist() == sample.d_labels

    def test_plain_layout(self, toy_vocab, walkthrough_record):
        ts = plain_train_sample(walkthrough_record, toy_vocab)
        chain = list(walkthrough_record.explicit) + list(walkthrough_record.implicit)
        assert ts.length == len(chain)
        assert ts.positions.tolist() == list(range(len(chain)))
        # next-symptom targets start at the last explicit position; no end supervision
        n = walkthrough_record.n_explicit
        for i in range(n - 1, len(chain) - 1):
            assert ts.s_labels[i] == chain[i + 1][0]
        assert ts.s_labels[-1] == toy_vocab.ignore_id
        assert ts.d_labels[-1] == walkthrough_record.disease
        assert set(ts.d_labels[:-1].tolist()) == {DISEASE_IGNORE}

    def test_plain_m1_has_exactly_two_supervised_positions(self, toy_vocab):
        rec = PatientRecord(explicit=((0, 1), (1, 1)), implicit=((2, 1),), disease=1)
        ts = plain_train_sample(rec, toy_vocab)
        assert int((ts.s_labels != toy_vocab.ignore_id).sum()) == 1
        assert int((ts.d_labels != DISEASE_IGNORE).sum()) == 1

    def test_full_with_collided_d_labels_equals_no_d(self, sample, toy_vocab):
        import copy

        collided = copy.deepcopy(sample)
        collided.d_labels = [DISEASE_IGNORE] * (collided.region_len - 1) + [collided.disease]
        a = expanded_train_sample(collided, toy_vocab, "full")
        b = expanded_train_sample(sample, toy_vocab, "no_d")
        model = tiny_model(toy_vocab)
        la = batch_loss(model, collate([a], a.length, toy_vocab))
        lb = batch_loss(model, collate([b], b.length, toy_vocab))
        assert la == pytest.approx(lb)


class TestCollate:
    def test_unpadding_recovers_sample(self, toy_vocab, walkthrough_record):
        index = PrefixIndex([walkthrough_record])
        cfg = TrainConfig(variant="full")
        ts = build_train_sample(walkthrough_record, index, toy_vocab, cfg)
        batch = collate([ts], ts.length + 5, toy_vocab)
        t = int(batch.lengths[0])
        assert t == ts.length
        assert batch.tokens[0, :t].tolist() == ts.tokens.tolist()
        assert (batch.tokens[0, t:] == toy_vocab.pad_id).all()
        assert (batch.s_labels[0, t:] == toy_vocab.ignore_id).all()
        assert (batch.d_labels[0, t:] == DISEASE_IGNORE).all()
        assert (batch.weights[0, t:] == 0).all()
        assert (batch.mask[0, :t, :t] == ts.mask).all()
        # pad keys invisible to real queries; pad queries self-visible only
        assert not batch.mask[0, :t, t:].any()
        for q in range(t, batch.tokens.shape[1]):
            assert set(np.flatnonzero(batch.mask[0, q])) == {q}

    def test_sample_exceeding_pad_rejected(self, toy_vocab, walkthrough_record):
        ts = plain_train_sample(walkthrough_record, toy_vocab)
        with pytest.raises(ValueError, match="exceeds"):
            collate([ts], ts.length - 1, toy_vocab)

    def test_padded_batch_loss_is_mean_of_singles(self, toy_vocab):
        rng = np.random.default_rng(3)
        recs = [random_record(rng, 7, 3, 2, m) for m in (1, 3, 4)]
        index = PrefixIndex(recs)
        cfg = TrainConfig(variant="full")
        samples = [build_train_sample(r, index, toy_vocab, cfg) for r in recs]
        model = tiny_model(toy_vocab)
        pad_to = max(s.length for s in samples)
        joint, _, _ = batch_loss(model, collate(samples, pad_to, toy_vocab))
        singles = [batch_loss(model, collate([s], pad_to, toy_vocab))[0] for s in samples]
        assert joint == pytest.approx(np.mean(singles))

    def test_duplicating_a_sample_keeps_the_loss(self, toy_vocab):
        rng = np.random.default_rng(4)
        rec = random_record(rng, 7, 3, 2, 3)
        index = PrefixIndex([rec])
        ts = build_train_sample(rec, index, toy_vocab, TrainConfig(variant="full"))
        model = tiny_model(toy_vocab)
        one, _, _ = batch_loss(model, collate([ts], ts.length, toy_vocab))
        two, _, _ = batch_loss(model, collate([ts, ts], ts.length, toy_vocab))
        assert one == pytest.approx(two)


class TestLossOracle:
    def test_hand_rolled_scalar_path(self, toy_vocab, walkthrough_record):
        """Weighted cross-entropy terms recomputed with pure-python floats."""
        index = PrefixIndex([walkthrough_record])
        ts = build_train_sample(walkthrough_record, index, toy_vocab, TrainConfig(variant="full"))
        model = tiny_model(toy_vocab)
        batch = collate([ts], ts.length, toy_vocab)
        total, sym_t, dis_t = batch_loss(model, batch)

        _, sym, dis = model.forward(batch.tokens, batch.statuses, batch.positions, batch.mask)

        def hand_term(logit_rows, labels, ignore):
            num, den = 0.0, 0.0
            for i in range(ts.length):
                if labels[i] == ignore:
                    continue
                row = [float(v) for v in logit_rows[i]]
                m = max(row)
                lse = m + math.log(sum(math.exp(v - m) for v in row))
                nll = lse - row[labels[i]]
                w = float(ts.weights[i])
                num += w * nll
                den += w
            return num / den

        want_sym = hand_term(sym.data[0], ts.s_labels.tolist(), toy_vocab.ignore_id)
        want_dis = hand_term(dis.data[0], ts.d_labels.tolist(), DISEASE_IGNORE)
        assert sym_t == pytest.approx(want_sym)
        assert dis_t == pytest.approx(want_dis)
        assert total == pytest.approx(want_sym + want_dis)


class TestGradientFlow:
    def test_ignored_positions_get_zero_logit_gradient(self, toy_vocab, walkthrough_record):
        index = PrefixIndex([walkthrough_record])
        ts = build_train_sample(walkthrough_record, index, toy_vocab, TrainConfig(variant="no_d"))
        model = tiny_model(toy_vocab)
        batch = collate([ts], ts.length, toy_vocab)
        with Tape() as tape:
            _, sym, dis = model.forward(batch.tokens, batch.statuses, batch.positions, batch.mask)
            total, _, _ = collaborative_loss(sym, dis, batch)
            engine.backward(tape, total)
        dis_grad = dis.grad[0]
        labeled = batch.d_labels[0] != DISEASE_IGNORE
        assert labeled.sum() == 1 and labeled[-1]
        assert np.abs(dis_grad[~labeled]).max() == 0.0
        assert np.abs(dis_grad[labeled]).max() > 0.0

    def test_perturbing_ignored_logits_keeps_loss(self, toy_vocab, walkthrough_record):
        index = PrefixIndex([walkthrough_record])
        ts = build_train_sample(walkthrough_record, index, toy_vocab, TrainConfig(variant="no_s"))
        model = tiny_model(toy_vocab)
        batch = collate([ts], ts.length, toy_vocab)
        _, sym, dis = model.forward(batch.tokens, batch.statuses, batch.positions, batch.mask)
        base = collaborative_loss(sym, dis, batch)[0].item()
        ignored = np.flatnonzero(batch.s_labels[0] == toy_vocab.ignore_id)
        bumped = engine.Tensor(sym.data.copy())
        bumped.data[0, ignored] += 17.0
        again = collaborative_loss(bumped, dis, batch)[0].item()
        assert again == pytest.approx(base)

    def test_clip_global_norm(self):
        params = {
            "a": engine.Tensor(np.zeros(3), requires_grad=True),
            "b": engine.Tensor(np.zeros(4), requires_grad=True),
        }
        params["a"].grad = np.full(3, 3.0)
        params["b"].grad = np.full(4, 4.0)
        norm = clip_global_norm(params, 1.0)
        assert norm == pytest.approx(math.sqrt(27 + 64))
        joint = math.sqrt(sum((p.grad**2).sum() for p in params.values()))
        assert joint == pytest.approx(1.0)


class TestAdam:
    def test_matches_reference_update(self):
        p = engine.Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = Adam({"p": p}, lr=0.1)
        g = np.array([0.5, -1.5])
        p.grad = g.copy()
        opt.step()
        m = 0.1 * g
        v = 0.001 * g * g
        m_hat = m / (1 - 0.9)
        v_hat = v / (1 - 0.999)
        want = np.array([1.0, -2.0]) - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
        np.testing.assert_allclose(p.data, want, rtol=1e-12)
        assert p.grad is None


@pytest.fixture(scope="module")
def corpus50():
    return generate_synthetic(SyntheticConfig(seed=21, n_train=50, n_test=10))


class TestTrainLoop:
    def desk_cfg(self, corpus, seed=1):
        return ModelConfig(
            n_symptom_tokens=corpus.vocab.n_symptom_tokens,
            n_diseases=corpus.vocab.n_diseases,
            layers=2, hidden=32, heads=2, ff=64, dropout=0.1, max_len=48, seed=seed,
        )

    def test_loss_decreases_over_200_steps(self, corpus50):
        cfg = TrainConfig(variant="full", steps=200, seed=1, learning_rate=2e-3)
        result = train(corpus50, self.desk_cfg(corpus50), cfg)
        assert result.log[-1]["loss_total"] < result.log[0]["loss_total"]
        assert len(result.log) == 200
        assert {"step", "loss_total", "loss_sym", "loss_dis", "lr", "seed"} <= set(result.log[0])

    def test_same_seed_identical_checkpoints(self, corpus50):
        cfg = TrainConfig(variant="full", steps=25, seed=7)
        a = train(corpus50, self.desk_cfg(corpus50, seed=7), cfg).model.to_arrays()
        b = train(corpus50, self.desk_cfg(corpus50, seed=7), cfg).model.to_arrays()
        assert set(a) == set(b)
        for name in a:
            assert np.array_equal(a[name], b[name]), name

    def test_different_variants_differ(self, corpus50):
        base = TrainConfig(steps=25, seed=7)
        import dataclasses

        full = train(corpus50, self.desk_cfg(corpus50, 7), dataclasses.replace(base, variant="full"))
        plain = train(corpus50, self.desk_cfg(corpus50, 7), dataclasses.replace(base, variant="plain"))
        assert any(
            not np.array_equal(full.model.to_arrays()[n], plain.model.to_arrays()[n])
            for n in full.model.to_arrays()
        )

    def test_divergence_reported_with_step(self, corpus50):
        cfg = TrainConfig(variant="full", steps=60, seed=1, learning_rate=1e12, grad_clip=None)
        with pytest.raises(TrainingDiverged):
            train(corpus50, self.desk_cfg(corpus50), cfg)

    def test_log_round_trips_as_jsonl(self, corpus50, tmp_path):
        import json

        cfg = TrainConfig(variant="plain", steps=5, seed=2)
        result = train(corpus50, self.desk_cfg(corpus50), cfg)
        path = tmp_path / "log.jsonl"
        result.write_log(path)
        lines = [json.loads(l) for l in path.read_text().splitlines()]
        assert [l["step"] for l in lines] == list(range(1, 6))


class TestMemorization:
    def test_teacher_forced_recovery_on_five_records(self):
        corpus = generate_synthetic(
            SyntheticConfig(seed=5, n_train=5, n_test=1, implicit_range=(2, 4))
        )
        model_cfg = ModelConfig(
            n_symptom_tokens=corpus.vocab.n_symptom_tokens,
            n_diseases=corpus.vocab.n_diseases,
            layers=2, hidden=48, heads=2, ff=96, dropout=0.05, max_len=48, seed=3,
        )
        result = train(corpus, model_cfg, TrainConfig(variant="full", steps=400, seed=3, learning_rate=3e-3))
        model = result.model
        vocab = corpus.vocab

        from conftest import forward_plain

        hits = total = 0
        for rec in corpus.train:
            chain = list(rec.explicit) + list(rec.implicit)
            _, sym, _ = forward_plain(model, chain)
            remaining = {sid for sid, _ in rec.implicit}
            for step, pos in enumerate(range(rec.n_explicit - 1, len(chain))):
                scores = sym[pos].copy()
                scores[vocab.ignore_id] = -np.inf
                scores[vocab.pad_id] = -np.inf
                top = int(np.argmax(scores))
                # a correct inquiry is any still-unseen implicit symptom; after
                # the last one the model must choose to stop
                want = remaining if remaining else {vocab.end_id}
                hits += int(top in want)
                total += 1
                if pos < len(chain) - 1:
                    remaining.discard(chain[pos + 1][0])
        assert hits / total >= 0.95
