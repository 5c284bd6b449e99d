#include <cmath>

#include "doctest.h"

#include "cusprune/bundle.hpp"
#include "cusprune/error.hpp"
#include "cusprune/forward.hpp"
#include "cusprune/toy.hpp"
#include "reference_forward.hpp"
#include "support.hpp"

using namespace cusprune;
using cusprune::testing::TempDir;

namespace {

ToyShape golden_shape() {
    ToyShape s;
    s.n_layers = 2;
    s.d_model = 8;
    s.n_heads = 2;
    s.head_dim = 4;
    s.d_ff = 16;
    s.vocab_size = 32;
    s.max_seq_len = 16;
    return s;
}

const std::vector<TokenId> kGoldenTokens{1, 5, 9, 3, 17, 30};

// Frozen output of testing::reference_logits for seed 42.
const std::vector<double> kGoldenFirst{
    0.0818438264, -0.0431878446, -0.508701728, -0.151297307, -0.76344922,  0.94238178,  0.157321872, 0.127522413,
    0.0269729256, -0.117286948,  0.228912775,  0.957238447,  0.199274833,  -0.491969684, 0.0530165336, -0.171317843,
    -0.230142137, 0.442666764,   0.340318087,  -0.607843384, 0.169289632,  -0.635831825, 0.220605609, -0.090966977,
    0.443608956,  0.357018238,   0.168811354,  -0.0528938942, 0.3159823,   0.17459432,  -1.00299503, -0.249343428};
const std::vector<double> kGoldenLast{
    0.0109018782, -0.269493312, -0.239171577, 0.187432776,  -1.13406424,  0.465506678, -0.43256296,  0.331805807,
    -0.186802827, 0.981040406,  0.105375354,  0.808616749,  0.0113167496, 0.138517118, 0.112178439,  0.106096037,
    -0.13288091,  0.182191493,  0.267207251,  -0.911561338, 0.404360054,  -0.161719195, 0.797925713, 0.490446782,
    -0.324450863, 0.0480532352, 0.292286533,  -0.177093824, 0.181995166,  -0.0483678047, -0.882573831, -0.375123481};

void zero_tensor(WeightStore& w, const std::string& name) {
    for (float& v : w.at(name).data()) v = 0.0f;
}

}  // namespace

TEST_CASE("rms_norm of a constant vector is ones") {
    const std::vector<float> x{2, 2, 2, 2}, w{1, 1, 1, 1};
    std::vector<float> out(4);
    rms_norm(x, w, 0.0, out);
    for (float v : out) CHECK(v == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("forward matches the frozen golden logits") {
    const ModelConfig c = toy_config(golden_shape());
    const WeightStore w = random_weights(c, 42);
    const auto res = forward(c, w, kGoldenTokens);
    REQUIRE(res.logits.rows == kGoldenTokens.size());
    REQUIRE(res.logits.cols == 32);
    for (std::size_t v = 0; v < 32; ++v) {
        CHECK(res.logits.at(0, v) == doctest::Approx(kGoldenFirst[v]).epsilon(1e-5));
        CHECK(res.logits.at(5, v) == doctest::Approx(kGoldenLast[v]).epsilon(1e-5));
    }
}

TEST_CASE("forward agrees with the reference on other seeds and overrides") {
    ToyShape s = golden_shape();
    s.n_layers = 3;
    ModelConfig c = toy_config(s);
    c.set_layer_shapes({LayerShape{16, {4, 4}}, LayerShape{10, {3, 1}}, LayerShape{0, {}}});
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const WeightStore w = random_weights(c, seed);
        std::vector<TokenId> toks;
        Rng rng(seed);
        for (int i = 0; i < 12; ++i) toks.push_back(static_cast<TokenId>(rng.below(32)));
        const auto ref = testing::reference_logits(c, w, toks);
        const auto got = forward(c, w, toks).logits;
        for (std::size_t t = 0; t < toks.size(); ++t)
            for (std::size_t v = 0; v < 32; ++v) CHECK(got.at(t, v) == doctest::Approx(ref[t][v]).epsilon(1e-5));
    }
}

TEST_CASE("zeroed sublayers are residual identities") {
    const ModelConfig c = toy_config(golden_shape());
    WeightStore w = random_weights(c, 7);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        zero_tensor(w, names::up(l));
        zero_tensor(w, names::gate(l));
        zero_tensor(w, names::down(l));
    }
    zero_tensor(w, names::wo(1));
    const auto res = forward(c, w, kGoldenTokens, true);
    REQUIRE(res.trace.has_value());
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const LayerTrace& lt = res.trace->layers[l];
        for (float v : lt.h_ffn.data) CHECK(v == 0.0f);
        for (std::size_t i = 0; i < lt.block_out.data.size(); ++i)
            CHECK(lt.block_out.data[i] == lt.block_in.data[i] + lt.h_attn.data[i]);
    }
    const LayerTrace& l1 = res.trace->layers[1];
    CHECK(l1.block_out.data == l1.block_in.data);
}

TEST_CASE("forward is causal") {
    const ModelConfig c = toy_config(golden_shape());
    const WeightStore w = random_weights(c, 42);
    for (std::size_t t = 0; t < kGoldenTokens.size(); ++t) {
        auto toks = kGoldenTokens;
        toks[t] = (toks[t] + 7) % 32;
        const auto a = forward(c, w, kGoldenTokens).logits;
        const auto b = forward(c, w, toks).logits;
        for (std::size_t u = 0; u < t; ++u)
            for (std::size_t v = 0; v < 32; ++v) CHECK(a.at(u, v) == b.at(u, v));
        bool changed = false;
        for (std::size_t v = 0; v < 32; ++v) changed = changed || a.at(t, v) != b.at(t, v);
        CHECK(changed);
    }
}

TEST_CASE("forward is bit-identical across runs") {
    const ModelConfig c = toy_config(golden_shape());
    const WeightStore w = random_weights(c, 42);
    CHECK(forward(c, w, kGoldenTokens).logits.data == forward(c, w, kGoldenTokens).logits.data);
}

TEST_CASE("forward rejects bad input") {
    const ModelConfig c = toy_config(golden_shape());
    const WeightStore w = random_weights(c, 42);
    CHECK_THROWS_AS(forward(c, w, std::vector<TokenId>{1, 32}), ValidationError);
    CHECK_THROWS_AS(forward(c, w, std::vector<TokenId>(17, 1)), ValidationError);
}

TEST_CASE("log_softmax_rows edge cases") {
    Matrix uniform(2, 256);
    for (const auto& row : log_softmax_rows(uniform))
        for (double v : row) CHECK(v == doctest::Approx(-std::log(256.0)).epsilon(1e-12));

    Matrix dominant(1, 8);
    dominant.at(0, 3) = 1e4f;
    const auto lp = log_softmax_rows(dominant);
    CHECK(std::abs(std::exp(lp[0][3]) - 1.0) < 1e-6);
}

TEST_CASE("logprobs match exp-normalized logits and sum to one") {
    const ModelConfig c = toy_config(golden_shape());
    const WeightStore w = random_weights(c, 42);
    const auto logits = forward(c, w, kGoldenTokens).logits;
    const auto lp = logprobs(c, w, kGoldenTokens);
    for (std::size_t t = 0; t < lp.size(); ++t) {
        double z = 0.0, sum = 0.0;
        for (std::size_t v = 0; v < 32; ++v) z += std::exp(static_cast<double>(logits.at(t, v)));
        for (std::size_t v = 0; v < 32; ++v) {
            const double p = std::exp(static_cast<double>(logits.at(t, v))) / z;
            CHECK(std::abs(std::exp(lp[t][v]) - p) < 1e-9);
            sum += std::exp(lp[t][v]);
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("bundle save/load round-trip is byte-identical") {
    TempDir tmp;
    const Bundle b = testing::random_bundle(golden_shape(), 5);
    save_bundle(b.config, b.weights, b.vocab, tmp / "m");
    const Bundle back = load_bundle(tmp / "m");
    CHECK(back.config == b.config);
    CHECK(back.weights == b.weights);
    CHECK(back.vocab == b.vocab);
    CHECK(back.fingerprint == b.fingerprint);

    save_bundle(back.config, back.weights, back.vocab, tmp / "m2");
    CHECK(read_file(tmp / "m" / "tensors.bin") == read_file(tmp / "m2" / "tensors.bin"));
    CHECK(read_file(tmp / "m" / "config.json") == read_file(tmp / "m2" / "config.json"));
    CHECK(read_file(tmp / "m" / "vocab.txt") == read_file(tmp / "m2" / "vocab.txt"));
}

TEST_CASE("vocab escaping round-trips awkward tokens") {
    for (std::string tok : {std::string("a\\b"), std::string("\n"), std::string("\x7f"), std::string(" x "),
                            std::string("\\x41")}) {
        const std::string line = escape_vocab_line(tok);
        CHECK(line.find('\n') == std::string::npos);
        CHECK(unescape_vocab_line(line) == tok);
    }
}

TEST_CASE("bundle validation errors") {
    TempDir tmp;
    const Bundle b = testing::random_bundle(golden_shape(), 5);

    WeightStore missing = b.weights;
    missing.erase(names::down(1));
    CHECK_THROWS_WITH_AS(validate_weights(b.config, missing), doctest::Contains("missing tensor"), ValidationError);

    WeightStore nan = b.weights;
    nan.at(names::kEmbed).data()[3] = std::nanf("");
    CHECK_THROWS_WITH_AS(validate_weights(b.config, nan), doctest::Contains("non-finite"), ValidationError);

    CHECK_THROWS_AS(save_bundle(b.config, b.weights, Vocab{}, tmp / "empty"), ValidationError);
    CHECK_FALSE(std::filesystem::exists(tmp / "empty"));

    save_bundle(b.config, b.weights, b.vocab, tmp / "ok");
    // Corrupt on disk by rewriting tensors without layer.1.ffn.down.
    write_file_atomic(tmp / "ok" / "tensors.bin", encode_tensors(missing));
    CHECK_THROWS_WITH_AS(load_bundle(tmp / "ok"), doctest::Contains("missing tensor"), ValidationError);
    CHECK_THROWS_AS(load_bundle(tmp / "nowhere"), IoError);
}

TEST_CASE("config json round-trips overrides and metadata") {
    ModelConfig c = toy_config(golden_shape());
    c.set_layer_shapes({LayerShape{12, {4, 2}}, LayerShape{16, {4, 4}}});
    c.metadata["source_fingerprint"] = "abc";
    CHECK(config_from_json(config_to_json(c)) == c);
    CHECK(c.total_parameters() == parameter_count(random_weights(c, 1)));
}
