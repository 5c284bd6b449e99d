#include <cmath>

#include "doctest.h"

#include "cusprune/error.hpp"
#include "cusprune/eval_harness.hpp"
#include "cusprune/forward.hpp"
#include "cusprune/neuron_atlas.hpp"
#include "cusprune/prune_engine.hpp"
#include "cusprune/trainer.hpp"
#include "support.hpp"

using namespace cusprune;

namespace {

ModelConfig byte_config(std::size_t layers = 2) {
    ToyShape s;
    s.n_layers = layers;
    s.d_model = 8;
    s.n_heads = 2;
    s.head_dim = 4;
    s.d_ff = 16;
    s.vocab_size = 256;
    s.max_seq_len = 64;
    return toy_config(s);
}

// Model whose residual stream is just the embedding and whose unembedding
// strongly prefers token `favourite` from every position.
WeightStore always_predicts(const ModelConfig& c, TokenId favourite) {
    WeightStore w = zero_weights(c);
    for (float& v : w.at(names::kEmbed).data()) v = 1.0f;
    for (float& v : w.at(names::kFinalNorm).data()) v = 1.0f;
    for (std::size_t i = 0; i < c.d_model; ++i) w.at(names::kUnembed).at(favourite, i) = 20.0f;
    return w;
}

std::vector<TokenId> repeat(TokenId t, std::size_t n) { return std::vector<TokenId>(n, t); }

}  // namespace

TEST_CASE("uniform model has perplexity equal to the vocabulary size") {
    const ModelConfig c = byte_config();
    const WeightStore w = zero_weights(c);
    CHECK(perplexity(c, w, {{1, 2, 3, 4, 5}, {9, 9, 9}}) == doctest::Approx(256.0).epsilon(1e-9));
}

TEST_CASE("a model certain of the next token approaches perplexity one") {
    const ModelConfig c = byte_config();
    const WeightStore w = always_predicts(c, 7);
    const double short_ppl = perplexity(c, w, {repeat(7, 4)});
    const double long_ppl = perplexity(c, w, {repeat(7, 60)});
    CHECK(long_ppl <= short_ppl);
    CHECK(long_ppl == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("perplexity equals exp of the mean token NLL") {
    const ModelConfig c = byte_config();
    const WeightStore w = random_weights(c, 2);
    const TokenSeqs docs{{10, 20, 30, 40, 50, 60}, {3, 1, 4}, {200, 100}};
    double nll = 0.0;
    std::size_t n = 0;
    for (const auto& d : docs) {
        const Matrix logits = forward(c, w, d).logits;
        for (std::size_t t = 0; t + 1 < d.size(); ++t) {
            double z = 0.0;
            for (std::size_t v = 0; v < c.vocab_size; ++v) z += std::exp(static_cast<double>(logits.at(t, v)));
            nll -= static_cast<double>(logits.at(t, d[t + 1])) - std::log(z);
            ++n;
        }
    }
    CHECK(perplexity(c, w, docs) == doctest::Approx(std::exp(nll / static_cast<double>(n))).epsilon(1e-9));
}

TEST_CASE("mcq ties go to the first option") {
    const ModelConfig c = byte_config();
    const WeightStore w = zero_weights(c);
    const McqItem item{{1, 2, 3}, {{4}, {5}, {6, 7}, {8}}, 2};
    CHECK(mcq_choice(c, w, item) == 0);
    CHECK(mcq_accuracy(c, w, {item, item, item}) == 0.0);
    CHECK(mcq_accuracy(c, w, {McqItem{{1}, {{4}, {5}}, 0}, item}) == doctest::Approx(0.5));
    CHECK_THROWS_AS(mcq_accuracy(c, w, {}), ValidationError);
}

TEST_CASE("a model trained on one token picks it as the answer") {
    ToyShape s;
    s.n_layers = 1;
    s.d_model = 8;
    s.n_heads = 2;
    s.head_dim = 4;
    s.d_ff = 16;
    s.vocab_size = 16;
    s.max_seq_len = 32;
    const ModelConfig c = toy_config(s);
    TrainOptions opt;
    opt.steps = 60;
    opt.window = 12;
    opt.batch_size = 2;
    const TrainResult r = train_toy(c, random_weights(c, 8), {repeat(11, 64)}, opt);
    const McqItem item{{11, 11, 11}, {{2}, {11}, {5}, {14}}, 1};
    CHECK(mcq_accuracy(c, r.weights, {item}) == 1.0);
}

TEST_CASE("rouge_l") {
    const RougeScore r = rouge_l("a b c d", "a c e");
    CHECK(r.precision == doctest::Approx(0.5));
    CHECK(r.recall == doctest::Approx(2.0 / 3.0));
    CHECK(r.f1 == doctest::Approx(4.0 / 7.0));
    CHECK(rouge_l("The cat sat", "the cat sat").f1 == doctest::Approx(1.0));
    CHECK(rouge_l("x y z", "a b c").f1 == 0.0);
    CHECK(rouge_l("", "a").f1 == 0.0);
}

TEST_CASE("analytic flops follow from matrix parameter counts") {
    ModelConfig c = byte_config(3);
    c.set_layer_shapes({LayerShape{16, {4, 4}}, LayerShape{9, {2}}, LayerShape{0, {4, 1}}});
    const std::size_t s = 20;
    // Every weight matrix except the embedding lookup costs 2 flops per entry per token.
    const auto w = random_weights(c, 1);
    double matrix_params = 0.0;
    for (const auto& [name, t] : w)
        if (t.rank() == 2 && name != names::kEmbed) matrix_params += static_cast<double>(t.size());
    double attn = 0.0;
    for (std::size_t l = 0; l < 3; ++l) {
        const LayerShape sh = c.layer_shape(l);
        attn += 2.0 * (s * (s + 1) / 2.0) * static_cast<double>(sh.n_heads() * c.head_dim + sh.v_total());
    }
    CHECK(analytic_flops(c, s) == doctest::Approx(2.0 * s * matrix_params + attn));
}

TEST_CASE("quarter ffn pruning of an ffn-heavy model cuts flops by more than a fifth") {
    ToyShape s;
    s.n_layers = 4;
    s.d_model = 64;
    s.n_heads = 4;
    s.head_dim = 16;
    s.d_ff = 512;
    s.vocab_size = 256;
    s.max_seq_len = 512;
    const ModelConfig c = toy_config(s);
    // Same number of channels off every layer, enough to reach a quarter of all parameters.
    const std::uint64_t per_channel = 3 * 64;
    const std::size_t cut = (c.total_parameters() / 4 + 4 * per_channel - 1) / (4 * per_channel);
    std::vector<LayerShape> shapes;
    for (std::size_t l = 0; l < 4; ++l) {
        LayerShape sh = c.layer_shape(l);
        sh.d_ff -= cut;
        shapes.push_back(sh);
    }
    ModelConfig pruned = c;
    pruned.set_layer_shapes(shapes);
    CHECK(static_cast<double>(pruned.total_parameters()) / static_cast<double>(c.total_parameters()) <= 0.75);
    CHECK(analytic_flops(c, 512) / analytic_flops(pruned, 512) >= 1.20);
}

TEST_CASE("benchmarking a model against itself gives unit speedup") {
    const ModelConfig c = byte_config();
    const WeightStore w = random_weights(c, 3);
    TokenSeqs docs;
    Rng rng(1);
    for (int d = 0; d < 40; ++d) {
        std::vector<TokenId> t(64);
        for (auto& v : t) v = static_cast<TokenId>(rng.below(256));
        docs.push_back(t);
    }
    const TimingBlock tb = bench_speed(c, w, c, w, docs, 7);
    CHECK(tb.flop_ratio == 1.0);
    CHECK(tb.speedup == doctest::Approx(1.0).epsilon(0.05));
    CHECK(tb.tokens == 40 * 64);
    CHECK_THROWS_AS(bench_speed(c, w, c, w, docs, 2), ValidationError);
}

TEST_CASE("an unpruned model retains everything") {
    const Bundle b = testing::random_bundle(ToyShape{}, 4);
    const auto docs = testing::two_language_docs(2, 30, 4);
    EvalInputs in;
    for (const auto& d : docs) in.perplexity_sets[d.language == "A" ? "expert" : "general"].push_back(tokenize(b.vocab, d.text));
    in.mcq_sets["quiz"] = {McqItem{{1, 2}, {{3}, {4}}, 1}, McqItem{{5}, {{6}, {7}}, 0}};
    in.summary_sets["sum"] = {SummaryItem{{1, 2, 3}, "a b c"}};
    const EvalReport rep = expert_report(b, b, in);
    REQUIRE(rep.datasets.size() == 4);
    for (const auto& [name, res] : rep.datasets) {
        INFO(name);
        if (res.dense != 0.0) CHECK(res.retention_pct == doctest::Approx(100.0));
        CHECK(res.dense == res.pruned);
    }
    CHECK(rep.dense_parameters == rep.pruned_parameters);
    CHECK(retention_pct("perplexity", 10.0, 20.0) == doctest::Approx(50.0));
    CHECK(retention_pct("accuracy", 0.8, 0.6) == doctest::Approx(75.0));
}
