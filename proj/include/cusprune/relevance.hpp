#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cusprune/corpus.hpp"
#include "cusprune/forward.hpp"
#include "cusprune/model_config.hpp"
#include "cusprune/neuron_atlas.hpp"
#include "cusprune/tensor.hpp"

namespace cusprune {

struct ScoreConfig {
    // Per-document irrelevance percentile, 0 < tau <= 100.
    double tau = 25.0;
    std::size_t max_tokens_per_doc = 512;
    std::size_t threads = 1;

    void validate() const;
};

struct DocumentMeta {
    std::string id;
    std::string language;
    std::string domain;
    std::string task;

    friend bool operator==(const DocumentMeta&, const DocumentMeta&) = default;
};

// Neuron x document impact scores, stored column-major (one column per document).
class ImpactMatrix {
  public:
    ImpactMatrix() = default;
    ImpactMatrix(std::size_t n_neurons, std::vector<DocumentMeta> docs);

    std::size_t n_neurons() const { return n_neurons_; }
    std::size_t n_docs() const { return docs_.size(); }
    const std::vector<DocumentMeta>& docs() const { return docs_; }

    std::span<const float> column(std::size_t doc) const { return {values_.data() + doc * n_neurons_, n_neurons_}; }
    std::span<float> column(std::size_t doc) { return {values_.data() + doc * n_neurons_, n_neurons_}; }
    float at(std::size_t neuron, std::size_t doc) const { return values_[doc * n_neurons_ + neuron]; }

    std::span<const float> values() const { return values_; }

    friend bool operator==(const ImpactMatrix&, const ImpactMatrix&) = default;

  private:
    std::size_t n_neurons_ = 0;
    std::vector<DocumentMeta> docs_;
    std::vector<float> values_;
};

struct IrrelevantSet {
    std::string label;
    std::vector<NeuronId> neurons;  // canonical order
    std::string corpus_id;
    std::string model_fingerprint;
    double tau = 0.0;
    std::size_t document_count = 0;
};

// Impact of every neuron in `universe` computed from one traced forward pass.
// Neurons contribute additively to their sublayer output, so each impact is
// the RMS over tokens of the L2 norm of that contribution.
std::vector<float> score_trace(const ModelConfig& config, const WeightStore& weights, const ForwardTrace& trace,
                               const NeuronUniverse& universe);
std::vector<float> score_document(const ModelConfig& config, const WeightStore& weights,
                                  std::span<const TokenId> tokens, const NeuronUniverse& universe);

// Literal ablation: zero the neuron's coupled slices, recompute the owning
// sublayer from the captured sublayer input in double precision, and return
// RMS over tokens of the L2 difference to the intact sublayer output.
double score_document_oracle(const ModelConfig& config, const WeightStore& weights,
                             std::span<const TokenId> tokens, const NeuronId& neuron);

// Tokenize and truncate to min(max_tokens_per_doc, max_seq_len).
std::vector<TokenId> document_tokens(const Vocab& vocab, const Document& doc, const ScoreConfig& score_config,
                                     const ModelConfig& config);

ImpactMatrix score_corpus(const ModelConfig& config, const WeightStore& weights, const Vocab& vocab,
                          const DimensionCorpus& corpus, const NeuronUniverse& universe,
                          const ScoreConfig& score_config);

// Number of pool members in the lowest-tau percentile of a column.
std::size_t lowest_count(std::size_t pool_size, double tau);

// Pool positions sorted by ascending impact, ties by canonical order.
std::vector<std::size_t> rank_order(std::span<const float> column, std::span<const std::size_t> pool);

// For each pool position, the largest rank it takes in any document column.
// A neuron is in the lowest-k set of every column iff its worst rank < k.
std::vector<std::size_t> worst_ranks(const ImpactMatrix& impacts, std::span<const std::size_t> pool);

IrrelevantSet irrelevant_set(const ImpactMatrix& impacts, const NeuronUniverse& universe, double tau);

void write_impacts(const ImpactMatrix& impacts, const std::filesystem::path& path);
ImpactMatrix read_impacts(const std::filesystem::path& path);

void write_irrelevant_set(const IrrelevantSet& set, const std::filesystem::path& path);
IrrelevantSet read_irrelevant_set(const std::filesystem::path& path);

}  // namespace cusprune
