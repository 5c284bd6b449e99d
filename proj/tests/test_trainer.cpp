#include <cmath>

#include "doctest.h"

#include "cusprune/trainer.hpp"
#include "cusprune/forward.hpp"
#include "cusprune/toy.hpp"

using namespace cusprune;

namespace {

ModelConfig tiny() {
    ToyShape s;
    s.n_layers = 2;
    s.d_model = 8;
    s.n_heads = 2;
    s.head_dim = 4;
    s.d_ff = 12;
    s.vocab_size = 16;
    s.max_seq_len = 16;
    return toy_config(s);
}

ParamStore zeros_like(const ParamStore& p) {
    ParamStore g;
    for (const auto& [k, v] : p) g[k].assign(v.size(), 0.0);
    return g;
}

}  // namespace

TEST_CASE("analytic gradients match central differences") {
    const ModelConfig c = tiny();
    ParamStore p = to_params(random_weights(c, 3));
    const std::vector<std::vector<TokenId>> batch{{1, 4, 9, 2, 2, 7}, {15, 0, 3, 3, 8}};
    ParamStore g = zeros_like(p);
    loss_and_grad(c, p, batch, g);

    Rng rng(5);
    const double h = 1e-5;
    for (auto& [name, values] : p) {
        for (int probe = 0; probe < 4; ++probe) {
            const std::size_t i = rng.below(values.size());
            const double saved = values[i];
            ParamStore scratch = zeros_like(p);
            values[i] = saved + h;
            const double up = loss_and_grad(c, p, batch, scratch);
            values[i] = saved - h;
            const double down = loss_and_grad(c, p, batch, scratch);
            values[i] = saved;
            const double numeric = (up - down) / (2 * h);
            INFO(name << "[" << i << "]");
            CHECK(std::abs(numeric - g.at(name)[i]) <= 1e-6 + 1e-4 * std::abs(numeric));
        }
    }
}

TEST_CASE("loss matches the forward pass") {
    const ModelConfig c = tiny();
    const WeightStore w = random_weights(c, 4);
    const std::vector<TokenId> seq{1, 4, 9, 2, 2, 7};
    ParamStore p = to_params(w);
    ParamStore g = zeros_like(p);
    const double loss = loss_and_grad(c, p, {seq}, g);
    const auto lp = logprobs(c, w, seq);
    double nll = 0.0;
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) nll -= lp[t][seq[t + 1]];
    CHECK(loss == doctest::Approx(nll / static_cast<double>(seq.size() - 1)).epsilon(1e-5));
    CHECK(to_weights(c, p) == w);
}

TEST_CASE("training reduces loss on a periodic sequence") {
    const ModelConfig c = tiny();
    std::vector<TokenId> seq;
    for (int i = 0; i < 200; ++i) seq.push_back(static_cast<TokenId>((i * 5) % 16));
    TrainOptions opt;
    opt.steps = 120;
    opt.window = 12;
    opt.batch_size = 4;
    const TrainResult r = train_toy(c, random_weights(c, 6), {seq}, opt);
    CHECK(r.final_loss < 0.5 * r.first_loss);
    for (const auto& [name, t] : r.weights) CHECK(t.all_finite());
}
