#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"

#include "cusprune/error.hpp"
#include "cusprune/relevance.hpp"
#include "support.hpp"

using namespace cusprune;
using cusprune::testing::TempDir;

namespace {

ToyShape small_shape() {
    ToyShape s;
    s.n_layers = 2;
    s.d_model = 8;
    s.n_heads = 2;
    s.head_dim = 4;
    s.d_ff = 16;
    return s;
}

NeuronUniverse four_ffn() {
    NeuronUniverse u;
    for (std::size_t i = 0; i < 4; ++i) {
        u.ids.push_back(NeuronId::ffn(0, i));
        u.param_weight.push_back(24);
    }
    return u;
}

ImpactMatrix matrix(const std::vector<std::vector<float>>& columns) {
    std::vector<DocumentMeta> docs;
    for (std::size_t d = 0; d < columns.size(); ++d) docs.push_back({"d" + std::to_string(d), "x", "y", "z"});
    ImpactMatrix m(columns.front().size(), docs);
    for (std::size_t d = 0; d < columns.size(); ++d) std::copy(columns[d].begin(), columns[d].end(), m.column(d).begin());
    return m;
}

std::vector<TokenId> random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
    std::vector<TokenId> t(n);
    for (auto& v : t) v = static_cast<TokenId>(rng.below(vocab));
    return t;
}

DimensionCorpus corpus_of(const std::vector<Document>& docs) {
    DimensionCorpus c;
    c.spec = {{Axis::Language, "A"}};
    c.documents = docs;
    return c;
}

}  // namespace

TEST_CASE("ffn impact is activation magnitude times down-column norm") {
    const Bundle b = testing::random_bundle(small_shape(), 3);
    WeightStore w = b.weights;
    Tensor& down = w.at(names::down(0));
    for (std::size_t r = 0; r < down.dim(0); ++r) down.at(r, 5) = r == 2 ? 3.0f : 0.0f;
    const std::vector<TokenId> tok{4};
    ForwardResult fr = forward(b.config, w, tok, true);
    fr.trace->layers[0].act.at(0, 5) = 2.0f;
    const NeuronUniverse u = enumerate_neurons(b.config);
    const auto col = score_trace(b.config, w, *fr.trace, u);
    CHECK(col[*u.position(NeuronId::ffn(0, 5))] == doctest::Approx(6.0));
}

TEST_CASE("a zero down column gives zero impact") {
    const Bundle b = testing::random_bundle(small_shape(), 3);
    WeightStore w = b.weights;
    Tensor& down = w.at(names::down(1));
    for (std::size_t r = 0; r < down.dim(0); ++r) down.at(r, 7) = 0.0f;
    const NeuronUniverse u = enumerate_neurons(b.config);
    Rng rng(1);
    for (int rep = 0; rep < 3; ++rep) {
        const auto col = score_document(b.config, w, random_tokens(rng, 10, 32), u);
        CHECK(col[*u.position(NeuronId::ffn(1, 7))] == 0.0f);
    }
}

TEST_CASE("oracle is zero when the owning sublayer has zero weights") {
    const Bundle b = testing::random_bundle(small_shape(), 4);
    WeightStore w = zero_weights(b.config);
    w.at(names::kEmbed) = b.weights.at(names::kEmbed);
    const std::vector<TokenId> tok{1, 2, 3, 4};
    for (const auto& id : enumerate_neurons(b.config).ids) CHECK(score_document_oracle(b.config, w, tok, id) == 0.0);
}

TEST_CASE("fast-path impacts agree with ablation for every neuron") {
    ModelConfig c = toy_config(small_shape());
    c.set_layer_shapes({LayerShape{16, {4, 4}}, LayerShape{11, {3, 4}}});
    const WeightStore w = random_weights(c, 11);
    const NeuronUniverse u = enumerate_neurons(c);
    Rng rng(2);
    for (int doc = 0; doc < 3; ++doc) {
        const auto tok = random_tokens(rng, 5 + 4 * doc, 32);
        const auto col = score_document(c, w, tok, u);
        for (std::size_t k = 0; k < u.size(); ++k) {
            const double oracle = score_document_oracle(c, w, tok, u.ids[k]);
            CHECK(std::abs(col[k] - oracle) <= 1e-5 * std::max(std::abs(oracle), 1e-6));
        }
    }
}

TEST_CASE("irrelevant set intersects the per-document lowest sets") {
    const NeuronUniverse u = four_ffn();
    // doc A lowest half {n3, n1}; doc B lowest half {n3, n2} (1-based names).
    const ImpactMatrix m = matrix({{1, 5, 0, 6}, {5, 1, 0, 6}});
    const IrrelevantSet s = irrelevant_set(m, u, 50.0);
    REQUIRE(s.neurons.size() == 1);
    CHECK(s.neurons[0] == NeuronId::ffn(0, 2));
    CHECK(s.document_count == 2);

    CHECK(lowest_count(4, 10.0) == 0);
    CHECK(irrelevant_set(m, u, 10.0).neurons.empty());

    const ImpactMatrix single = matrix({{1, 5, 0, 6}});
    const auto one = irrelevant_set(single, u, 50.0).neurons;
    CHECK(one == std::vector<NeuronId>{NeuronId::ffn(0, 0), NeuronId::ffn(0, 2)});

    CHECK(irrelevant_set(m, u, 100.0).neurons.size() == 4);
    CHECK_THROWS_AS(irrelevant_set(m, u, 0.0), ValidationError);
    CHECK_THROWS_AS(irrelevant_set(m, u, 100.5), ValidationError);
}

TEST_CASE("ties rank by canonical order") {
    const NeuronUniverse u = four_ffn();
    const std::vector<std::size_t> pool{0, 1, 2, 3};
    const std::vector<float> col{1, 1, 0, 1};
    CHECK(rank_order(col, pool) == std::vector<std::size_t>{2, 0, 1, 3});
}

TEST_CASE("irrelevant sets grow with tau and shrink with more documents") {
    const Bundle b = testing::random_bundle(small_shape(), 5);
    const auto docs = testing::two_language_docs(6, 40, 5);
    const NeuronUniverse u = enumerate_neurons(b.config);
    const ImpactMatrix all = score_corpus(b.config, b.weights, b.vocab, corpus_of(docs), u, {});
    const ImpactMatrix half = score_corpus(b.config, b.weights, b.vocab,
                                           corpus_of({docs.begin(), docs.begin() + 6}), u, {});
    auto as_set = [](const IrrelevantSet& s) { return std::set<NeuronId>(s.neurons.begin(), s.neurons.end()); };
    std::set<NeuronId> prev;
    for (double tau : {5.0, 20.0, 35.0, 50.0, 80.0, 100.0}) {
        const auto cur = as_set(irrelevant_set(all, u, tau));
        CHECK(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
        const auto sub = as_set(irrelevant_set(half, u, tau));
        CHECK(std::includes(sub.begin(), sub.end(), cur.begin(), cur.end()));
        prev = cur;
    }
}

TEST_CASE("scaling all impacts leaves the set unchanged") {
    const NeuronUniverse u = four_ffn();
    const ImpactMatrix m = matrix({{0.3f, 2, 0.1f, 7}, {4, 0.2f, 0.1f, 6}, {0.5f, 0.25f, 0.05f, 1}});
    const ImpactMatrix scaled = matrix({{3, 20, 1, 70}, {40, 2, 1, 60}, {5, 2.5f, 0.5f, 10}});
    for (double tau : {25.0, 50.0, 75.0}) CHECK(irrelevant_set(m, u, tau).neurons == irrelevant_set(scaled, u, tau).neurons);
}

TEST_CASE("score_corpus columns equal per-document scores and ignore thread count") {
    const Bundle b = testing::random_bundle(small_shape(), 6);
    const auto docs = testing::two_language_docs(3, 30, 6);
    const NeuronUniverse u = enumerate_neurons(b.config);
    ScoreConfig sc;
    const ImpactMatrix one = score_corpus(b.config, b.weights, b.vocab, corpus_of({docs[0]}), u, sc);
    const auto col = score_document(b.config, b.weights, document_tokens(b.vocab, docs[0], sc, b.config), u);
    CHECK(std::equal(col.begin(), col.end(), one.column(0).begin()));

    const ImpactMatrix serial = score_corpus(b.config, b.weights, b.vocab, corpus_of(docs), u, sc);
    sc.threads = 3;
    CHECK(score_corpus(b.config, b.weights, b.vocab, corpus_of(docs), u, sc) == serial);
}

TEST_CASE("impact and irrelevant-set files round-trip") {
    TempDir tmp;
    const NeuronUniverse u = four_ffn();
    const ImpactMatrix m = matrix({{1, 5, 0, 6}, {5, 1, 0, 6}});
    write_impacts(m, tmp / "impacts.bin");
    CHECK(read_impacts(tmp / "impacts.bin") == m);

    IrrelevantSet s = irrelevant_set(m, u, 50.0);
    s.label = "language:A";
    s.corpus_id = "docs.jsonl";
    s.model_fingerprint = "ff00";
    write_irrelevant_set(s, tmp / "set.txt");
    const IrrelevantSet back = read_irrelevant_set(tmp / "set.txt");
    CHECK(back.neurons == s.neurons);
    CHECK(back.label == s.label);
    CHECK(back.corpus_id == s.corpus_id);
    CHECK(back.model_fingerprint == s.model_fingerprint);
    CHECK(back.tau == s.tau);
    CHECK(back.document_count == 2);
    CHECK_THROWS_AS(read_impacts(tmp / "missing.bin"), IoError);
}
