#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cusprune/corpus.hpp"
#include "cusprune/model_config.hpp"
#include "cusprune/tensor.hpp"
#include "cusprune/vocab.hpp"

namespace cusprune {

// Platform-independent uniform draws (std distributions are implementation-defined).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

  private:
    std::mt19937_64 engine_;
};

struct ToyShape {
    std::size_t n_layers = 2;
    std::size_t d_model = 16;
    std::size_t n_heads = 2;
    std::size_t head_dim = 8;
    std::size_t d_ff = 32;
    std::size_t vocab_size = 32;
    std::size_t max_seq_len = 64;
};

ModelConfig toy_config(const ToyShape& shape);

// Weights uniform in +-1/sqrt(fan_in); norm weights uniform in [0.8, 1.2].
WeightStore random_weights(const ModelConfig& config, std::uint64_t seed);

WeightStore zero_weights(const ModelConfig& config);

// Vocabulary of single-character tokens, one per alphabet character.
Vocab char_vocab(const std::string& alphabet);

// A second-order Markov "language" over its own alphabet: with probability
// `fidelity` the next symbol is table[prev][prev2 % 2], otherwise uniform.
class SyntheticLanguage {
  public:
    SyntheticLanguage(std::string alphabet, std::uint64_t seed, double fidelity = 0.85);

    std::string generate(std::size_t length, Rng& rng) const;
    const std::string& alphabet() const { return alphabet_; }

  private:
    std::string alphabet_;
    std::vector<std::size_t> table_;  // [symbol][parity] -> next symbol
    double fidelity_;
};

// `count` documents with ids "{prefix}-{k}", cycling through the given domains and tasks.
std::vector<Document> synthetic_documents(const SyntheticLanguage& lang, const std::string& language_tag,
                                          const std::vector<std::string>& domains,
                                          const std::vector<std::string>& tasks, std::size_t count,
                                          std::size_t length, const std::string& prefix, Rng& rng);

}  // namespace cusprune
