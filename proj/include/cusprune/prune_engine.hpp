#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cusprune/bundle.hpp"
#include "cusprune/corpus.hpp"
#include "cusprune/neuron_atlas.hpp"
#include "cusprune/relevance.hpp"

namespace cusprune {

struct PlanPhase {
    std::string kind;  // "layer" or "neuron"
    std::vector<NeuronId> ids;
};

struct DimensionProvenance {
    std::string label;
    std::string corpus_id;
    std::size_t documents = 0;
    std::size_t set_size = 0;
};

struct PrunePlan {
    std::string fingerprint;
    std::optional<double> sigma;
    double tau = 0.0;
    double achieved_ratio = 0.0;
    std::uint64_t removed_parameters = 0;
    std::uint64_t total_parameters = 0;
    std::vector<PlanPhase> phases;
    std::vector<DimensionProvenance> provenance;

    std::vector<NeuronId> all_ids() const;
};

std::string plan_to_json(const PrunePlan& plan);
PrunePlan plan_from_json(std::string_view text);
void write_plan(const PrunePlan& plan, const std::filesystem::path& path);
PrunePlan read_plan(const std::filesystem::path& path);

// Exact intersection of 1-3 sets scored against the same model.
std::vector<NeuronId> intersect_dimensions(const std::vector<IrrelevantSet>& sets);

struct DimensionImpacts {
    std::string label;
    std::string corpus_id;
    ImpactMatrix impacts;
};

struct CalibrationOptions {
    double tolerance = 0.005;
    int max_iterations = 20;
    double min_interval = 0.01;  // percentile units
    bool force_closest = false;
};

// Intersected plan at a fixed tau. Ratio is relative to `total_parameters`.
struct TauOutcome {
    double tau = 0.0;
    std::vector<std::size_t> positions;  // universe positions, canonical order
    std::uint64_t removed = 0;
};

// Precomputed worst ranks across every document of every dimension; each
// evaluation of `at` is linear in the pool size.
class TauSearch {
  public:
    TauSearch(const NeuronUniverse& universe, const std::vector<DimensionImpacts>& dims);

    TauOutcome at(double tau) const;
    std::size_t pool_size() const { return pool_.size(); }

  private:
    const NeuronUniverse& universe_;
    std::vector<std::size_t> pool_;
    std::vector<std::size_t> worst_;
};

// Bisects tau so the removed fraction of `total_parameters` is closest to
// target_removed without exceeding target_removed + tolerance * total.
// Throws ValidationError when the closest outcome misses the tolerance and
// force_closest is unset.
TauOutcome search_tau(const TauSearch& search, double target_removed, std::uint64_t total_parameters,
                      const CalibrationOptions& options);

std::vector<DimensionImpacts> score_dimensions(const Bundle& bundle, const std::vector<DimensionCorpus>& corpora,
                                               const NeuronUniverse& universe, const ScoreConfig& score_config);

PrunePlan calibrate(const Bundle& bundle, const std::vector<DimensionCorpus>& corpora, double sigma,
                    const ScoreConfig& score_config, const CalibrationOptions& options = {});

// Plan at a caller-chosen tau, skipping calibration.
PrunePlan plan_at_tau(const Bundle& bundle, const std::vector<DimensionCorpus>& corpora, double tau,
                      const ScoreConfig& score_config);

struct PrunedModel {
    ModelConfig config;
    WeightStore weights;
};

PrunedModel apply_plan(const ModelConfig& config, const WeightStore& weights, const PrunePlan& plan);

struct LayerScore {
    std::size_t layer = 0;
    double importance = 0.0;  // 1 - mean cosine(block input, block output), in [0, 2]
};

// Mean token-wise cosine similarity between two equally shaped activations.
// Rows where either side is zero count as 1 when both are zero, else 0.
double mean_cosine(const Matrix& a, const Matrix& b);

// Sorted by ascending importance (removal priority), ties by layer index.
std::vector<LayerScore> layer_scores(const ModelConfig& config, const WeightStore& weights, const Vocab& vocab,
                                     const std::vector<Document>& docs, const ScoreConfig& score_config);

PrunePlan aggressive_plan(const Bundle& bundle, const std::vector<DimensionCorpus>& corpora, double sigma,
                          std::size_t layer_budget, const ScoreConfig& score_config,
                          const CalibrationOptions& options = {});

}  // namespace cusprune
