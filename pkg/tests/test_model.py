"""Mention encoding layout, pair scoring, training, and resolution."""

import numpy as np
import pytest

from typecoref.autograd import Tensor
from typecoref.corpus import Document, MentionSpan
from typecoref.model import (
    DocumentScores,
    VariantError,
    antecedent_distribution,
    clusters_from_links,
    document_loss,
    document_scores,
    encode_mention,
    init_coref_params,
    link_antecedents,
    mention_order,
    mention_rep_dim,
    mention_segments,
    pair_features,
    pair_score,
    PairFeatures,
    quotation_flags,
    resolve,
    response_document,
    train,
    type_consistency,
)
from typecoref.neural import Config, bilstm, bucket_index
from typecoref.store import synth_embeddings

from helpers import reference_lstm_states

SMALL = Config(
    bilstm_hidden=4,
    type_embedding_dim=3,
    feature_embedding_dim=3,
    fc_sizes=(6, 5),
    dropout=0.0,
    max_antecedents=10,
    learning_rate=5e-3,
    epochs=2,
    seed=11,
)


def toy_doc(types=("PER", "LOC", None)):
    sentences = [["Mary", "visited", "Paris", "."], ["She", "loved", "it", "."]]
    mentions = [
        MentionSpan(0, 0, 0, types[0]),   # Mary
        MentionSpan(0, 2, 2, types[1]),   # Paris
        MentionSpan(1, 0, 0, types[2]),   # She
    ]
    return Document("toy", sentences, mentions, {0: [0, 2], 1: [1]})


def embeddings_for(doc, dim=5, seed=0):
    return synth_embeddings(doc, dim, seed).astype(np.float64)


class TestQuotationFlags:
    def test_odd_preceding_quotes_mark_inside(self):
        doc = Document("d", [["He", "said", '"', "hi", '"', "done"]], [], {})
        assert quotation_flags(doc) == [0, 0, 0, 1, 1, 0]

    def test_curly_quotes_and_embedded_characters(self):
        doc = Document("d", [["“hello”", "there"]], [], {})
        assert quotation_flags(doc) == [0, 0]
        doc = Document("d", [["“", "hello", "”", "there"]], [], {})
        assert quotation_flags(doc) == [0, 1, 1, 0]


class TestTypeConsistency:
    @pytest.mark.parametrize(
        "a,b,expected",
        [
            ("PLACE", "PLACE", 0),
            ("PER", "LOC", 1),
            ("NA", "NA", 0),
            (None, None, 0),
            (None, "NA", 0),
            ("PER", None, 1),
        ],
    )
    def test_truth_table(self, a, b, expected):
        assert type_consistency(a, b) == expected


class TestRepresentationLayout:
    def test_default_dimensions(self):
        config = Config()
        assert mention_rep_dim(config, "baseline") == 1240
        assert mention_rep_dim(config, "et_self") == 1260
        assert mention_rep_dim(config, "et_full") == 1260
        assert mention_rep_dim(config, "et_cross") == 1240

    def test_segment_offsets(self):
        config = Config()
        segments = mention_segments(config, "et_full")
        assert segments["start_state"] == slice(0, 400)
        assert segments["end_state"] == slice(400, 800)
        assert segments["attention"] == slice(800, 1200)
        assert segments["width"] == slice(1200, 1220)
        assert segments["quotation"] == slice(1220, 1240)
        assert segments["type"] == slice(1240, 1260)

    def test_width_one_span_repeats_state(self):
        doc = toy_doc()
        emb = embeddings_for(doc)
        params = init_coref_params(SMALL, 5, "baseline", "common", dtype=np.float64)
        states = bilstm(emb, params, SMALL.bilstm_hidden)
        rep = encode_mention(doc, states, doc.mentions[0], "baseline", params, SMALL).data[0]
        segments = mention_segments(SMALL, "baseline")
        np.testing.assert_allclose(rep[segments["start_state"]], rep[segments["end_state"]])
        np.testing.assert_allclose(rep[segments["start_state"]], rep[segments["attention"]])

    def test_et_self_types_differ_only_in_type_segment(self):
        doc_per = toy_doc(types=("PER", "LOC", None))
        doc_loc = toy_doc(types=("LOC", "LOC", None))
        emb = embeddings_for(doc_per)
        params = init_coref_params(SMALL, 5, "et_self", "common", dtype=np.float64)
        states = bilstm(emb, params, SMALL.bilstm_hidden)
        rep_per = encode_mention(doc_per, states, doc_per.mentions[0], "et_self", params, SMALL).data[0]
        rep_loc = encode_mention(doc_loc, states, doc_loc.mentions[0], "et_self", params, SMALL).data[0]
        type_slice = mention_segments(SMALL, "et_self")["type"]
        np.testing.assert_array_equal(rep_per[: type_slice.start], rep_loc[: type_slice.start])
        assert not np.array_equal(rep_per[type_slice], rep_loc[type_slice])

    def test_span_outside_document_is_error(self):
        doc = toy_doc()
        emb = embeddings_for(doc)
        params = init_coref_params(SMALL, 5, "baseline", "common", dtype=np.float64)
        states = bilstm(emb, params, SMALL.bilstm_hidden)
        with pytest.raises(ValueError, match="outside document"):
            encode_mention(doc, states, MentionSpan(9, 0, 0), "baseline", params, SMALL)


class TestPairScore:
    def make_inputs(self, variant, zero=False):
        params = init_coref_params(SMALL, 5, variant, "common", dtype=np.float64)
        if zero:
            for name in params.names():
                if name.startswith("pair."):
                    params[name].data[:] = 0.0
        dim = mention_rep_dim(SMALL, variant)
        rng = np.random.default_rng(3)
        m_j = Tensor(rng.normal(size=(1, dim)))
        m_k = Tensor(rng.normal(size=(1, dim)))
        return params, m_j, m_k

    def test_zero_fc_weights_score_zero(self):
        params, m_j, m_k = self.make_inputs("et_full", zero=True)
        features = PairFeatures(2, 0, consistent=1)
        out = pair_score(m_j, m_k, features, "et_full", params, SMALL)
        assert out.item() == 0.0

    def test_inference_deterministic(self):
        params, m_j, m_k = self.make_inputs("baseline")
        features = PairFeatures(1, 0)
        first = pair_score(m_j, m_k, features, "baseline", params, SMALL).item()
        second = pair_score(m_j, m_k, features, "baseline", params, SMALL).item()
        assert first == second

    def test_consistency_to_baseline_is_error(self):
        params, m_j, m_k = self.make_inputs("baseline")
        with pytest.raises(VariantError, match="does not accept"):
            pair_score(m_j, m_k, PairFeatures(1, 0, consistent=0), "baseline", params, SMALL)

    def test_missing_consistency_for_cross_is_error(self):
        params, m_j, m_k = self.make_inputs("et_cross")
        with pytest.raises(VariantError, match="requires"):
            pair_score(m_j, m_k, PairFeatures(1, 0), "et_cross", params, SMALL)


class TestFullFormulaOracle:
    """Straight-line numpy recomputation of the whole scoring path."""

    def reference_scores(self, doc, emb, params, config, variant, scheme_labels):
        # token states
        fw = reference_lstm_states(emb, params["bilstm.fw.w_ih"].data,
                                   params["bilstm.fw.w_hh"].data, params["bilstm.fw.b"].data)
        bw = reference_lstm_states(emb, params["bilstm.bw.w_ih"].data,
                                   params["bilstm.bw.w_hh"].data, params["bilstm.bw.b"].data,
                                   reverse=True)
        states = np.concatenate([fw, bw], axis=1)
        offsets = [0]
        for s in doc.sentences:
            offsets.append(offsets[-1] + len(s))
        quote_flags = quotation_flags(doc)

        def rep(m):
            lo = offsets[m.sentence_index] + m.start
            hi = offsets[m.sentence_index] + m.end
            span = states[lo : hi + 1]
            scores = span @ params["attention.w"].data + params["attention.b"].data
            weights = np.exp(scores - scores.max())
            weights = weights / weights.sum()
            att = (weights * span).sum(axis=0)
            parts = [
                states[lo],
                states[hi],
                att,
                params["embed.width"].data[bucket_index(m.end - m.start + 1)],
                params["embed.quotation"].data[quote_flags[lo]],
            ]
            if variant in ("et_self", "et_full"):
                label = m.entity_type or "NA"
                parts.append(params["embed.type"].data[scheme_labels.index(label)])
            return np.concatenate(parts)

        order = sorted(range(len(doc.mentions)), key=lambda i: doc.mentions[i].position())
        reps = [rep(doc.mentions[i]) for i in order]
        out = {}
        for k in range(len(order)):
            for j in range(max(0, k - config.max_antecedents), k):
                m_j, m_k = doc.mentions[order[j]], doc.mentions[order[k]]
                x = [
                    reps[j],
                    reps[k],
                    reps[j] * reps[k],
                    params["embed.distance"].data[bucket_index(k - j)],
                    params["embed.nesting"].data[
                        1 if (m_j.contains(m_k) or m_k.contains(m_j)) else 0
                    ],
                ]
                if variant in ("et_cross", "et_full"):
                    tc = 0 if (m_j.entity_type or "NA") == (m_k.entity_type or "NA") else 1
                    x.append(params["embed.consistency"].data[tc])
                h = np.concatenate(x)
                for i in range(len(config.fc_sizes)):
                    h = np.maximum(h @ params[f"pair.fc{i}.w"].data + params[f"pair.fc{i}.b"].data, 0)
                out[(j, k)] = float((h @ params["pair.out.w"].data + params["pair.out.b"].data)[0])
        return out

    @pytest.mark.parametrize("variant", ["baseline", "et_self", "et_cross", "et_full"])
    def test_document_scores_match_reference(self, variant):
        doc = toy_doc()
        emb = embeddings_for(doc)
        params = init_coref_params(SMALL, 5, variant, "common", dtype=np.float64)
        scored = document_scores(doc, emb, params, SMALL, variant, "common")
        from typecoref.schemes import get_scheme

        labels = list(get_scheme("common").labels_with_na)
        expected = self.reference_scores(doc, emb, params, SMALL, variant, labels)
        for k, (lo, hi) in enumerate(scored.slices):
            for pos, j in enumerate(scored.candidates[k]):
                got = float(scored.scores.data[lo + pos, 0])
                assert got == pytest.approx(expected[(j, k)], abs=1e-10)


class TestBaselineTypeInvariance:
    def test_baseline_scores_ignore_types(self):
        config = SMALL
        typed = toy_doc(types=("PER", "LOC", "ORG"))
        untyped = toy_doc(types=(None, None, None))
        emb = embeddings_for(typed)
        params = init_coref_params(config, 5, "baseline", "common", dtype=np.float64)
        scored_typed = document_scores(typed, emb, params, config, "baseline")
        scored_untyped = document_scores(untyped, emb, params, config, "baseline")
        assert scored_typed.scores.data.tobytes() == scored_untyped.scores.data.tobytes()

    def test_et_full_scores_react_to_one_type_change(self):
        config = SMALL
        a = toy_doc(types=("PER", "LOC", "PER"))
        b = toy_doc(types=("PER", "LOC", "LOC"))
        emb = embeddings_for(a)
        params = init_coref_params(config, 5, "et_full", "common", dtype=np.float64)
        scores_a = document_scores(a, emb, params, config, "et_full").scores.data
        scores_b = document_scores(b, emb, params, config, "et_full").scores.data
        assert not np.array_equal(scores_a, scores_b)


class TestAntecedentDistribution:
    def test_no_candidates(self):
        np.testing.assert_allclose(antecedent_distribution([]), [1.0])

    def test_all_zero_scores_uniform(self):
        dist = antecedent_distribution([0.0, 0.0])
        np.testing.assert_allclose(dist, [1 / 3, 1 / 3, 1 / 3])

    def test_log3_gives_three_quarters(self):
        dist = antecedent_distribution([np.log(3.0)])
        np.testing.assert_allclose(dist, [0.75, 0.25])

    def test_sums_to_one(self):
        dist = antecedent_distribution(np.random.default_rng(0).normal(size=7))
        assert dist.sum() == pytest.approx(1.0)


class TestLinksAndClusters:
    def scored(self, scores_per_anaphor):
        slices = []
        flat = []
        candidates = []
        for k, scores in enumerate(scores_per_anaphor):
            lo = len(flat)
            flat.extend(scores)
            slices.append((lo, len(flat)))
            candidates.append(list(range(k)))
        order = list(range(len(scores_per_anaphor)))
        tensor = Tensor(np.asarray(flat, dtype=np.float64).reshape(-1, 1)) if flat else None
        return DocumentScores(order, tensor, slices, candidates)

    def test_chain_closure_one_cluster(self):
        # b links a, c links b -> {a, b, c}
        scored = self.scored([[], [1.0], [-1.0, 2.0]])
        links = link_antecedents(scored)
        assert links == [None, 0, 1]
        assert clusters_from_links(scored.order, links) == [[0, 1, 2]]

    def test_all_negative_scores_yield_singletons(self):
        scored = self.scored([[], [-0.5], [-2.0, -0.1]])
        links = link_antecedents(scored)
        assert links == [None, None, None]
        assert clusters_from_links(scored.order, links) == [[0], [1], [2]]
        assert clusters_from_links(scored.order, links, keep_singletons=False) == []

    def test_dummy_wins_exact_ties(self):
        scored = self.scored([[], [0.0]])
        assert link_antecedents(scored) == [None, None]

    def test_uniform_shift_flips_argmax_against_fixed_dummy(self):
        # the dummy stays at 0, so shifting every pair score down changes the link
        high = self.scored([[], [0.5]])
        low = self.scored([[], [0.5 - 2.0]])
        assert link_antecedents(high) == [None, 0]
        assert link_antecedents(low) == [None, None]

    def test_clusters_map_back_to_original_indices(self):
        links = [None, 0]
        assert clusters_from_links([5, 9], links) == [[5, 9]]


class TestTrainAndResolve:
    def corpus(self, n=3):
        docs = []
        for i in range(n):
            doc = toy_doc()
            docs.append(Document(f"doc{i}", doc.sentences, doc.mentions, doc.clusters))
        return docs

    def embeddings(self, docs, dim=5):
        return {d.doc_id: synth_embeddings(d, dim, seed=1) for d in docs}

    def test_missing_document_fails_before_training(self):
        docs = self.corpus(2)
        emb = self.embeddings(docs[:1])
        with pytest.raises(KeyError, match="doc1"):
            train(docs, emb, "baseline", SMALL)

    def test_single_mention_document_zero_loss(self):
        doc = Document("solo", [["Ann"]], [MentionSpan(0, 0, 0)], {0: [0]})
        emb = {"solo": synth_embeddings(doc, 5, 0)}
        params = init_coref_params(SMALL, 5, "baseline", "common")
        loss = document_loss(doc, emb["solo"], params, SMALL, "baseline")
        assert loss.item() == 0.0

    def test_loss_decreases_over_first_steps(self):
        docs = self.corpus(1)
        emb = self.embeddings(docs)
        config = SMALL.updated(epochs=6, learning_rate=2e-3)
        result = train(docs, emb, "et_full", config)
        first_five = result.step_losses[:5]
        assert all(b < a for a, b in zip(first_five, first_five[1:]))

    def test_same_seed_identical_parameters(self):
        docs = self.corpus(2)
        emb = self.embeddings(docs)
        run_a = train(docs, emb, "et_full", SMALL)
        run_b = train(docs, emb, "et_full", SMALL)
        for name in run_a.params.names():
            assert run_a.params[name].data.tobytes() == run_b.params[name].data.tobytes()

    def test_resolve_partition_covers_all_mentions(self):
        docs = self.corpus(2)
        emb = self.embeddings(docs)
        result = train(docs, emb, "baseline", SMALL)
        clusters = resolve(docs[0], emb, result.params, "baseline", SMALL)
        flat = sorted(i for c in clusters for i in c)
        assert flat == list(range(len(docs[0].mentions)))

    def test_resolve_is_pure(self):
        docs = self.corpus(1)
        emb = self.embeddings(docs)
        result = train(docs, emb, "baseline", SMALL)
        first = resolve(docs[0], emb, result.params, "baseline", SMALL)
        second = resolve(docs[0], emb, result.params, "baseline", SMALL)
        assert first == second

    def test_response_document_carries_clusters(self):
        doc = toy_doc()
        response = response_document(doc, [[0, 2], [1]])
        assert response.clusters == {0: [0, 2], 1: [1]}
        response.validate()


class TestPairFeatures:
    def test_orders_and_buckets(self):
        doc = toy_doc()
        order = mention_order(doc)
        features = pair_features(doc, order, 0, 2, "baseline")
        assert features.distance_bucket == bucket_index(2)
        assert features.nested == 0
        assert features.consistent is None

    def test_nested_flag(self):
        doc = Document(
            "d",
            [["the", "old", "house"]],
            [MentionSpan(0, 0, 2), MentionSpan(0, 1, 2)],
            {0: [0], 1: [1]},
        )
        order = mention_order(doc)
        assert pair_features(doc, order, 0, 1, "baseline").nested == 1

    def test_candidate_must_precede(self):
        doc = toy_doc()
        with pytest.raises(ValueError, match="precede"):
            pair_features(doc, mention_order(doc), 2, 2, "baseline")

    def test_consistency_included_for_cross(self):
        doc = toy_doc(types=("PER", "PER", "LOC"))
        order = mention_order(doc)
        assert pair_features(doc, order, 0, 1, "et_cross").consistent == 0
        assert pair_features(doc, order, 1, 2, "et_full").consistent == 1
