#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cusprune/bundle.hpp"
#include "cusprune/vocab.hpp"

namespace cusprune {

using TokenSeqs = std::vector<std::vector<TokenId>>;

// exp(mean next-token NLL) over every predicted position of every sequence.
double perplexity(const ModelConfig& config, const WeightStore& weights, const TokenSeqs& docs);

struct McqItem {
    std::vector<TokenId> prompt;
    std::vector<std::vector<TokenId>> options;
    std::size_t gold = 0;
};

// Mean per-token logprob of `option` appended to `prompt`.
double option_score(const ModelConfig& config, const WeightStore& weights, const McqItem& item, std::size_t option);
// Highest option_score wins; ties go to the lowest option index.
std::size_t mcq_choice(const ModelConfig& config, const WeightStore& weights, const McqItem& item);
double mcq_accuracy(const ModelConfig& config, const WeightStore& weights, const std::vector<McqItem>& items);

struct RougeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// LCS-based ROUGE-L over lowercased whitespace-split words.
RougeScore rouge_l(std::string_view candidate, std::string_view reference);

// Multiply-add FLOPs (2 per MAC) of one forward pass over `seq_len` tokens.
double analytic_flops(const ModelConfig& config, std::size_t seq_len);

struct TimingBlock {
    double dense_tokens_per_sec = 0.0;
    double pruned_tokens_per_sec = 0.0;
    double speedup = 0.0;
    double dense_flops = 0.0;
    double pruned_flops = 0.0;
    double flop_ratio = 0.0;
    std::size_t repetitions = 0;
    std::size_t tokens = 0;
};

TimingBlock bench_speed(const ModelConfig& dense_config, const WeightStore& dense_weights,
                        const ModelConfig& pruned_config, const WeightStore& pruned_weights, const TokenSeqs& docs,
                        std::size_t repetitions);

std::string timing_to_json(const TimingBlock& timing);

struct SummaryItem {
    std::vector<TokenId> prompt;
    std::string reference;
};

struct EvalInputs {
    std::map<std::string, TokenSeqs> perplexity_sets;  // e.g. "expert", "general"
    std::map<std::string, std::vector<McqItem>> mcq_sets;
    std::map<std::string, std::vector<SummaryItem>> summary_sets;
    // Timing runs only when bench_repetitions > 0.
    TokenSeqs bench_docs;
    std::size_t bench_repetitions = 0;
};

struct DatasetResult {
    std::string metric;  // "perplexity" | "accuracy" | "rouge_l_f1"
    double dense = 0.0;
    double pruned = 0.0;
    double retention_pct = 0.0;
};

struct EvalReport {
    std::map<std::string, DatasetResult> datasets;
    std::optional<TimingBlock> timing;
    std::uint64_t dense_parameters = 0;
    std::uint64_t pruned_parameters = 0;
    std::string plan_reference;

    std::string to_json() const;
};

// Retention is pruned/dense, inverted (dense/pruned) for perplexity, in percent.
double retention_pct(std::string_view metric, double dense, double pruned);

EvalReport expert_report(const Bundle& dense, const Bundle& pruned, const EvalInputs& inputs);

}  // namespace cusprune
