#include "cusprune/toy.hpp"

#include <cmath>

#include "cusprune/error.hpp"

namespace cusprune {

ModelConfig toy_config(const ToyShape& shape) {
    ModelConfig c;
    c.n_layers = shape.n_layers;
    c.d_model = shape.d_model;
    c.n_heads = shape.n_heads;
    c.head_dim = shape.head_dim;
    c.d_ff = shape.d_ff;
    c.vocab_size = shape.vocab_size;
    c.max_seq_len = shape.max_seq_len;
    c.validate();
    return c;
}

WeightStore random_weights(const ModelConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    WeightStore w;
    // expected_shapes iterates in name order, so draws are reproducible.
    for (const auto& [name, shape] : config.expected_shapes()) {
        Tensor t(shape);
        auto data = t.data();
        if (shape.size() == 1) {
            for (float& v : data) v = static_cast<float>(rng.uniform(0.8, 1.2));
        } else {
            const double fan_in = static_cast<double>(std::max<std::size_t>(1, shape[1]));
            const double bound = name == names::kEmbed ? 1.0 : 1.0 / std::sqrt(fan_in);
            for (float& v : data) v = static_cast<float>(rng.uniform(-bound, bound));
        }
        w.emplace(name, std::move(t));
    }
    return w;
}

WeightStore zero_weights(const ModelConfig& config) {
    WeightStore w;
    for (const auto& [name, shape] : config.expected_shapes()) w.emplace(name, Tensor(shape));
    return w;
}

Vocab char_vocab(const std::string& alphabet) {
    std::vector<std::string> tokens;
    for (char c : alphabet) tokens.emplace_back(1, c);
    return Vocab(std::move(tokens));
}

SyntheticLanguage::SyntheticLanguage(std::string alphabet, std::uint64_t seed, double fidelity)
    : alphabet_(std::move(alphabet)), fidelity_(fidelity) {
    if (alphabet_.size() < 2) throw ValidationError("synthetic language needs at least two symbols");
    Rng rng(seed);
    table_.resize(alphabet_.size() * 2);
    for (auto& next : table_) next = rng.below(alphabet_.size());
}

std::string SyntheticLanguage::generate(std::size_t length, Rng& rng) const {
    const std::size_t n = alphabet_.size();
    std::vector<std::size_t> seq;
    seq.reserve(length);
    for (std::size_t t = 0; t < length; ++t) {
        if (t < 2 || rng.uniform() >= fidelity_) {
            seq.push_back(rng.below(n));
        } else {
            seq.push_back(table_[seq[t - 1] * 2 + seq[t - 2] % 2]);
        }
    }
    std::string out;
    for (std::size_t s : seq) out += alphabet_[s];
    return out;
}

std::vector<Document> synthetic_documents(const SyntheticLanguage& lang, const std::string& language_tag,
                                          const std::vector<std::string>& domains,
                                          const std::vector<std::string>& tasks, std::size_t count,
                                          std::size_t length, const std::string& prefix, Rng& rng) {
    std::vector<Document> docs;
    for (std::size_t k = 0; k < count; ++k) {
        docs.push_back({prefix + "-" + std::to_string(k), lang.generate(length, rng), language_tag,
                        domains[k % domains.size()], tasks[(k / domains.size()) % tasks.size()]});
    }
    return docs;
}

}  // namespace cusprune
