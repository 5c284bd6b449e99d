#include "cusprune/eval_harness.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <sstream>

#include "cusprune/corpus.hpp"
#include "cusprune/error.hpp"
#include "cusprune/forward.hpp"
#include "json.hpp"

namespace cusprune {

using nlohmann::json;

double perplexity(const ModelConfig& config, const WeightStore& weights, const TokenSeqs& docs) {
    double nll = 0.0;
    std::size_t count = 0;
    for (const auto& doc : docs) {
        if (doc.size() < 2) continue;
        const auto lp = logprobs(config, weights, doc);
        for (std::size_t t = 0; t + 1 < doc.size(); ++t) nll -= lp[t][doc[t + 1]];
        count += doc.size() - 1;
    }
    if (count == 0) throw ValidationError("perplexity needs at least one document with two or more tokens");
    return std::exp(nll / static_cast<double>(count));
}

double option_score(const ModelConfig& config, const WeightStore& weights, const McqItem& item, std::size_t option) {
    const auto& opt = item.options.at(option);
    if (item.prompt.empty()) throw ValidationError("mcq prompt must not be empty");
    if (opt.empty()) throw ValidationError("empty mcq option");
    std::vector<TokenId> seq = item.prompt;
    seq.insert(seq.end(), opt.begin(), opt.end());
    const auto lp = logprobs(config, weights, seq);
    double sum = 0.0;
    for (std::size_t j = 0; j < opt.size(); ++j) sum += lp[item.prompt.size() + j - 1][opt[j]];
    return sum / static_cast<double>(opt.size());
}

std::size_t mcq_choice(const ModelConfig& config, const WeightStore& weights, const McqItem& item) {
    if (item.options.empty()) throw ValidationError("mcq item has no options");
    std::size_t best = 0;
    double best_score = option_score(config, weights, item, 0);
    for (std::size_t o = 1; o < item.options.size(); ++o) {
        const double s = option_score(config, weights, item, o);
        if (s > best_score) {
            best = o;
            best_score = s;
        }
    }
    return best;
}

double mcq_accuracy(const ModelConfig& config, const WeightStore& weights, const std::vector<McqItem>& items) {
    if (items.empty()) throw ValidationError("mcq set is empty");
    std::size_t correct = 0;
    for (const auto& item : items) {
        if (mcq_choice(config, weights, item) == item.gold) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(items.size());
}

namespace {

std::vector<std::string> words(std::string_view text) {
    std::string lowered(text);
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::istringstream in(lowered);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

}  // namespace

RougeScore rouge_l(std::string_view candidate, std::string_view reference) {
    const auto cand = words(candidate);
    const auto ref = words(reference);
    if (ref.empty()) throw ValidationError("empty reference");
    if (cand.empty()) return {};
    std::vector<std::size_t> prev(ref.size() + 1, 0), cur(ref.size() + 1, 0);
    for (std::size_t i = 1; i <= cand.size(); ++i) {
        for (std::size_t j = 1; j <= ref.size(); ++j) {
            cur[j] = cand[i - 1] == ref[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    const double lcs = static_cast<double>(prev[ref.size()]);
    RougeScore s;
    s.precision = lcs / static_cast<double>(cand.size());
    s.recall = lcs / static_cast<double>(ref.size());
    s.f1 = lcs == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

double analytic_flops(const ModelConfig& config, std::size_t seq_len) {
    const double d = static_cast<double>(config.d_model);
    const double s = static_cast<double>(seq_len);
    const double pairs = s * (s + 1.0) / 2.0;  // causal (query, key) pairs
    double flops = 2.0 * static_cast<double>(config.vocab_size) * d * s;
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        const LayerShape shape = config.layer_shape(l);
        const double qk = static_cast<double>(shape.n_heads() * config.head_dim);
        const double v = static_cast<double>(shape.v_total());
        const double ff = static_cast<double>(shape.d_ff);
        flops += s * 2.0 * d * (2.0 * qk + 2.0 * v + 3.0 * ff);
        flops += pairs * 2.0 * (qk + v);
    }
    return flops;
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double seconds_for(const ModelConfig& config, const WeightStore& weights, const TokenSeqs& docs) {
    const auto start = std::chrono::steady_clock::now();
    for (const auto& doc : docs) {
        const ForwardResult r = forward(config, weights, doc);
        if (r.logits.data.empty() && !doc.empty()) throw std::logic_error("empty logits");
    }
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

TimingBlock bench_speed(const ModelConfig& dense_config, const WeightStore& dense_weights,
                        const ModelConfig& pruned_config, const WeightStore& pruned_weights, const TokenSeqs& docs,
                        std::size_t repetitions) {
    if (repetitions < 3) throw ValidationError("bench needs at least 3 repetitions");
    TimingBlock out;
    out.repetitions = repetitions;
    for (const auto& doc : docs) {
        out.tokens += doc.size();
        out.dense_flops += analytic_flops(dense_config, doc.size());
        out.pruned_flops += analytic_flops(pruned_config, doc.size());
    }
    if (out.tokens == 0) throw ValidationError("bench needs non-empty documents");

    seconds_for(dense_config, dense_weights, docs);
    seconds_for(pruned_config, pruned_weights, docs);
    std::vector<double> dense_tps, pruned_tps;
    const double tokens = static_cast<double>(out.tokens);
    for (std::size_t r = 0; r < repetitions; ++r) {
        dense_tps.push_back(tokens / seconds_for(dense_config, dense_weights, docs));
        pruned_tps.push_back(tokens / seconds_for(pruned_config, pruned_weights, docs));
    }
    out.dense_tokens_per_sec = median(dense_tps);
    out.pruned_tokens_per_sec = median(pruned_tps);
    out.speedup = out.pruned_tokens_per_sec / out.dense_tokens_per_sec;
    out.flop_ratio = out.dense_flops / out.pruned_flops;
    return out;
}

double retention_pct(std::string_view metric, double dense, double pruned) {
    if (metric == "perplexity") return 100.0 * dense / pruned;
    if (dense <= 0.0) return 100.0;
    return 100.0 * pruned / dense;
}

EvalReport expert_report(const Bundle& dense, const Bundle& pruned, const EvalInputs& inputs) {
    if (inputs.perplexity_sets.empty() && inputs.mcq_sets.empty() && inputs.summary_sets.empty()) {
        throw ValidationError("no evaluation datasets supplied");
    }
    EvalReport report;
    report.dense_parameters = parameter_count(dense.weights);
    report.pruned_parameters = parameter_count(pruned.weights);
    auto record = [&](const std::string& name, const std::string& metric, double d, double p) {
        report.datasets[name] = {metric, d, p, retention_pct(metric, d, p)};
    };
    for (const auto& [name, docs] : inputs.perplexity_sets) {
        if (docs.empty()) throw ValidationError("dataset " + name + " is empty");
        record(name, "perplexity", perplexity(dense.config, dense.weights, docs),
               perplexity(pruned.config, pruned.weights, docs));
    }
    for (const auto& [name, items] : inputs.mcq_sets) {
        record(name, "accuracy", mcq_accuracy(dense.config, dense.weights, items),
               mcq_accuracy(pruned.config, pruned.weights, items));
    }
    for (const auto& [name, items] : inputs.summary_sets) {
        if (items.empty()) throw ValidationError("dataset " + name + " is empty");
        auto mean_f1 = [&](const Bundle& b) {
            double sum = 0.0;
            for (const auto& item : items) {
                const std::size_t n_new = std::max<std::size_t>(1, tokenize(b.vocab, item.reference).size());
                const auto gen = greedy_decode(b.config, b.weights, item.prompt, n_new);
                sum += rouge_l(detokenize(b.vocab, gen), item.reference).f1;
            }
            return sum / static_cast<double>(items.size());
        };
        record(name, "rouge_l_f1", mean_f1(dense), mean_f1(pruned));
    }
    if (inputs.bench_repetitions > 0) {
        report.timing = bench_speed(dense.config, dense.weights, pruned.config, pruned.weights, inputs.bench_docs,
                                    inputs.bench_repetitions);
    }
    return report;
}

namespace {

json timing_json(const TimingBlock& t) {
    return {{"dense_tokens_per_sec", t.dense_tokens_per_sec},
            {"pruned_tokens_per_sec", t.pruned_tokens_per_sec},
            {"speedup", t.speedup},
            {"dense_flops", t.dense_flops},
            {"pruned_flops", t.pruned_flops},
            {"flop_ratio", t.flop_ratio},
            {"repetitions", t.repetitions},
            {"tokens", t.tokens}};
}

}  // namespace

std::string timing_to_json(const TimingBlock& timing) { return timing_json(timing).dump(2) + "\n"; }

std::string EvalReport::to_json() const {
    json j;
    j["datasets"] = json::object();
    for (const auto& [name, r] : datasets) {
        j["datasets"][name] = {
            {"metric", r.metric}, {"dense", r.dense}, {"pruned", r.pruned}, {"retention_pct", r.retention_pct}};
    }
    j["parameters"] = {{"dense", dense_parameters},
                       {"pruned", pruned_parameters},
                       {"removed_ratio", dense_parameters
                                             ? 1.0 - static_cast<double>(pruned_parameters) /
                                                         static_cast<double>(dense_parameters)
                                             : 0.0}};
    j["timing"] = timing ? timing_json(*timing) : json(nullptr);
    j["plan"] = plan_reference;
    return j.dump(2) + "\n";
}

}  // namespace cusprune
