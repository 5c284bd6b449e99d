#include "cusprune/prune_engine.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "cusprune/error.hpp"
#include "cusprune/log.hpp"
#include "cusprune/parallel.hpp"
#include "json.hpp"

namespace cusprune {

using nlohmann::json;

std::vector<NeuronId> PrunePlan::all_ids() const {
    std::vector<NeuronId> out;
    for (const auto& phase : phases) out.insert(out.end(), phase.ids.begin(), phase.ids.end());
    return out;
}

namespace {

double round6(double v) { return std::round(v * 1e6) / 1e6; }

std::string corpus_id(const DimensionCorpus& corpus) {
    return corpus.source.empty() ? corpus.label() : corpus.source + "#" + corpus.label();
}

}  // namespace

std::string plan_to_json(const PrunePlan& plan) {
    json j;
    j["fingerprint"] = plan.fingerprint;
    j["sigma"] = plan.sigma ? json(*plan.sigma) : json(nullptr);
    j["tau"] = plan.tau;
    j["achieved_ratio"] = round6(plan.achieved_ratio);
    j["removed_parameters"] = plan.removed_parameters;
    j["total_parameters"] = plan.total_parameters;
    j["phases"] = json::array();
    for (const auto& phase : plan.phases) {
        json ids = json::array();
        for (const auto& id : phase.ids) ids.push_back(id.str());
        j["phases"].push_back({{"kind", phase.kind}, {"ids", ids}});
    }
    j["provenance"] = json::array();
    for (const auto& p : plan.provenance) {
        j["provenance"].push_back(
            {{"label", p.label}, {"corpus", p.corpus_id}, {"documents", p.documents}, {"set_size", p.set_size}});
    }
    return j.dump(2) + "\n";
}

PrunePlan plan_from_json(std::string_view text) {
    PrunePlan plan;
    try {
        const json j = json::parse(text);
        plan.fingerprint = j.at("fingerprint").get<std::string>();
        if (!j.at("sigma").is_null()) plan.sigma = j.at("sigma").get<double>();
        plan.tau = j.at("tau").get<double>();
        plan.achieved_ratio = j.at("achieved_ratio").get<double>();
        plan.removed_parameters = j.value("removed_parameters", std::uint64_t{0});
        plan.total_parameters = j.value("total_parameters", std::uint64_t{0});
        for (const auto& phase : j.at("phases")) {
            PlanPhase p;
            p.kind = phase.at("kind").get<std::string>();
            if (p.kind != "layer" && p.kind != "neuron") throw ValidationError("unknown plan phase kind: " + p.kind);
            for (const auto& id : phase.at("ids")) p.ids.push_back(NeuronId::parse(id.get<std::string>()));
            plan.phases.push_back(std::move(p));
        }
        for (const auto& p : j.value("provenance", json::array())) {
            plan.provenance.push_back({p.at("label"), p.at("corpus"), p.at("documents"), p.at("set_size")});
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed plan: ") + e.what());
    }
    return plan;
}

void write_plan(const PrunePlan& plan, const std::filesystem::path& path) { write_file_atomic(path, plan_to_json(plan)); }

PrunePlan read_plan(const std::filesystem::path& path) { return plan_from_json(read_file(path)); }

std::vector<NeuronId> intersect_dimensions(const std::vector<IrrelevantSet>& sets) {
    if (sets.empty()) throw ValidationError("at least one irrelevant set is required");
    if (sets.size() > 3) throw ValidationError("at most three dimensions can be intersected");
    for (const auto& s : sets) {
        if (s.model_fingerprint != sets.front().model_fingerprint) {
            throw ValidationError("irrelevant sets were scored against different models");
        }
    }
    std::vector<NeuronId> acc = sets.front().neurons;
    std::sort(acc.begin(), acc.end());
    for (std::size_t i = 1; i < sets.size(); ++i) {
        std::vector<NeuronId> other = sets[i].neurons;
        std::sort(other.begin(), other.end());
        std::vector<NeuronId> next;
        std::set_intersection(acc.begin(), acc.end(), other.begin(), other.end(), std::back_inserter(next));
        acc = std::move(next);
    }
    return acc;
}

TauSearch::TauSearch(const NeuronUniverse& universe, const std::vector<DimensionImpacts>& dims)
    : universe_(universe), pool_(universe.pool()), worst_(pool_.size(), 0) {
    if (dims.empty()) throw ValidationError("at least one dimension is required");
    for (const auto& dim : dims) {
        if (dim.impacts.n_docs() == 0) throw ValidationError("empty corpus for dimension " + dim.label);
        if (dim.impacts.n_neurons() != universe.size()) throw ValidationError("impact matrix does not match universe");
        const auto w = worst_ranks(dim.impacts, pool_);
        for (std::size_t p = 0; p < pool_.size(); ++p) worst_[p] = std::max(worst_[p], w[p]);
    }
}

TauOutcome TauSearch::at(double tau) const {
    TauOutcome out;
    out.tau = tau;
    const std::size_t k = lowest_count(pool_.size(), tau);
    for (std::size_t p = 0; p < pool_.size(); ++p) {
        if (worst_[p] < k) {
            out.positions.push_back(pool_[p]);
            out.removed += universe_.param_weight[pool_[p]];
        }
    }
    return out;
}

TauOutcome search_tau(const TauSearch& search, double target_removed, std::uint64_t total_parameters,
                      const CalibrationOptions& options) {
    const double total = static_cast<double>(total_parameters);
    const double ceiling = target_removed + options.tolerance * total;
    const std::size_t pool = search.pool_size();

    // Invariant: removed(lo) < target <= removed(hi).
    double lo = 0.0;
    double hi = 100.0;
    TauOutcome lo_out = search.at(lo);
    TauOutcome hi_out = search.at(hi);
    if (static_cast<double>(hi_out.removed) < target_removed) {
        throw ValidationError("target exceeds the prunable fraction of this model");
    }
    if (static_cast<double>(lo_out.removed) >= target_removed) {
        hi_out = lo_out;
    } else {
        for (int it = 0; it < options.max_iterations; ++it) {
            if (hi - lo < options.min_interval) break;
            if (lowest_count(pool, hi) <= lowest_count(pool, lo) + 1) break;
            const double mid = 0.5 * (lo + hi);
            TauOutcome mid_out = search.at(mid);
            if (static_cast<double>(mid_out.removed) < target_removed) {
                lo = mid;
                lo_out = std::move(mid_out);
            } else {
                hi = mid;
                hi_out = std::move(mid_out);
            }
        }
    }

    const auto distance = [&](const TauOutcome& o) { return std::abs(static_cast<double>(o.removed) - target_removed); };
    const bool hi_ok = static_cast<double>(hi_out.removed) <= ceiling;
    TauOutcome best = (hi_ok && distance(hi_out) <= distance(lo_out)) ? hi_out : lo_out;

    const double miss = distance(best) / total;
    if (miss > options.tolerance + 1e-12) {
        const std::string msg = "closest achievable ratio " + std::to_string(static_cast<double>(best.removed) / total) +
                                " misses target " + std::to_string(target_removed / total) + " by more than " +
                                std::to_string(options.tolerance);
        if (!options.force_closest) throw ValidationError(msg + " (use --force-closest to accept)");
        log().warn("{}; accepting closest", msg);
    }
    return best;
}

std::vector<DimensionImpacts> score_dimensions(const Bundle& bundle, const std::vector<DimensionCorpus>& corpora,
                                               const NeuronUniverse& universe, const ScoreConfig& score_config) {
    if (corpora.empty()) throw ValidationError("at least one dimension required");
    std::vector<DimensionImpacts> dims;
    for (const auto& corpus : corpora) {
        log().info("scoring {} documents for {}", corpus.documents.size(), corpus.label());
        dims.push_back({corpus.label(), corpus_id(corpus),
                        score_corpus(bundle.config, bundle.weights, bundle.vocab, corpus, universe, score_config)});
    }
    return dims;
}

namespace {

std::vector<DimensionProvenance> provenance_at(const std::vector<DimensionImpacts>& dims,
                                               const NeuronUniverse& universe, double tau) {
    std::vector<DimensionProvenance> out;
    for (const auto& dim : dims) {
        const std::size_t size = tau > 0.0 ? irrelevant_set(dim.impacts, universe, tau).neurons.size() : 0;
        out.push_back({dim.label, dim.corpus_id, dim.impacts.n_docs(), size});
    }
    return out;
}

PrunePlan neuron_plan(const Bundle& bundle, const NeuronUniverse& universe, const std::vector<DimensionImpacts>& dims,
                      const TauOutcome& outcome, std::optional<double> sigma) {
    PrunePlan plan;
    plan.fingerprint = bundle.fingerprint;
    plan.sigma = sigma;
    plan.tau = outcome.tau;
    plan.total_parameters = bundle.config.total_parameters();
    plan.removed_parameters = outcome.removed;
    plan.achieved_ratio = static_cast<double>(outcome.removed) / static_cast<double>(plan.total_parameters);
    PlanPhase phase{"neuron", {}};
    for (std::size_t pos : outcome.positions) phase.ids.push_back(universe.ids[pos]);
    plan.phases.push_back(std::move(phase));
    plan.provenance = provenance_at(dims, universe, outcome.tau);
    return plan;
}

void check_sigma(double sigma, const NeuronUniverse& universe, std::uint64_t total) {
    if (!(sigma > 0.0 && sigma < 1.0)) throw ValidationError("sigma must lie in (0, 1)");
    const double max_fraction = static_cast<double>(universe.prunable_parameters()) / static_cast<double>(total);
    if (sigma > max_fraction) {
        throw ValidationError("sigma " + std::to_string(sigma) + " exceeds the prunable fraction " +
                              std::to_string(max_fraction));
    }
}

}  // namespace

PrunePlan calibrate(const Bundle& bundle, const std::vector<DimensionCorpus>& corpora, double sigma,
                    const ScoreConfig& score_config, const CalibrationOptions& options) {
    const NeuronUniverse universe = enumerate_neurons(bundle.config);
    const std::uint64_t total = bundle.config.total_parameters();
    check_sigma(sigma, universe, total);
    const auto dims = score_dimensions(bundle, corpora, universe, score_config);
    const TauSearch search(universe, dims);
    const TauOutcome outcome = search_tau(search, sigma * static_cast<double>(total), total, options);
    log().info("calibrated tau {:.4f}: {} neurons, ratio {:.6f}", outcome.tau, outcome.positions.size(),
               static_cast<double>(outcome.removed) / static_cast<double>(total));
    return neuron_plan(bundle, universe, dims, outcome, sigma);
}

PrunePlan plan_at_tau(const Bundle& bundle, const std::vector<DimensionCorpus>& corpora, double tau,
                      const ScoreConfig& score_config) {
    if (!(tau > 0.0 && tau <= 100.0)) throw ValidationError("tau must lie in (0, 100]");
    const NeuronUniverse universe = enumerate_neurons(bundle.config);
    const auto dims = score_dimensions(bundle, corpora, universe, score_config);
    const TauSearch search(universe, dims);
    return neuron_plan(bundle, universe, dims, search.at(tau), std::nullopt);
}

PrunedModel apply_plan(const ModelConfig& config, const WeightStore& weights, const PrunePlan& plan) {
    if (fingerprint_of(weights) != plan.fingerprint) {
        throw ValidationError("plan fingerprint does not match the model");
    }
    const std::size_t hd = config.head_dim;
    struct LayerMask {
        std::vector<bool> ffn;
        std::vector<bool> head;
        std::vector<std::vector<bool>> value;
    };
    std::vector<LayerMask> masks(config.n_layers);
    std::vector<LayerShape> shapes(config.n_layers);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        shapes[l] = config.layer_shape(l);
        masks[l].ffn.assign(shapes[l].d_ff, true);
        masks[l].head.assign(shapes[l].n_heads(), true);
        for (std::size_t v : shapes[l].v_dims) masks[l].value.emplace_back(v, true);
    }
    std::vector<bool> keep_layer(config.n_layers, true);
    std::set<NeuronId> seen;
    for (const auto& id : plan.all_ids()) {
        check_neuron(id, config);
        if (!seen.insert(id).second) throw ValidationError("duplicate neuron in plan: " + id.str());
        auto& m = masks[id.layer];
        switch (id.cls) {
            case NeuronClass::FfnChannel: m.ffn[id.index] = false; break;
            case NeuronClass::AttnValueChannel: m.value[*id.head][id.index] = false; break;
            case NeuronClass::AttnHead: m.head[id.index] = false; break;
            case NeuronClass::LayerUnit: keep_layer[id.layer] = false; break;
        }
    }
    for (const auto& id : seen) {
        if (id.cls != NeuronClass::LayerUnit && !keep_layer[id.layer]) {
            throw ValidationError("neuron " + id.str() + " lies in a layer the plan removes");
        }
        if (id.cls == NeuronClass::AttnValueChannel && !masks[id.layer].head[*id.head]) {
            throw ValidationError("value channel " + id.str() + " belongs to a head the plan removes");
        }
    }
    if (std::none_of(keep_layer.begin(), keep_layer.end(), [](bool k) { return k; })) {
        throw ValidationError("plan removes every layer");
    }

    PrunedModel out;
    out.config = config;
    out.weights[names::kEmbed] = weights.at(names::kEmbed);
    out.weights[names::kUnembed] = weights.at(names::kUnembed);
    out.weights[names::kFinalNorm] = weights.at(names::kFinalNorm);
    std::vector<LayerShape> new_shapes;
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        if (!keep_layer[l]) continue;
        const std::size_t nl = new_shapes.size();
        const auto& m = masks[l];
        const LayerShape& s = shapes[l];

        std::vector<std::size_t> ffn_keep;
        for (std::size_t i = 0; i < s.d_ff; ++i) {
            if (m.ffn[i]) ffn_keep.push_back(i);
        }
        std::vector<std::size_t> qk_keep;
        std::vector<std::size_t> v_keep;
        LayerShape ns{ffn_keep.size(), {}};
        for (std::size_t h = 0; h < s.n_heads(); ++h) {
            if (!m.head[h]) continue;
            for (std::size_t r = 0; r < hd; ++r) qk_keep.push_back(h * hd + r);
            std::size_t kept = 0;
            for (std::size_t j = 0; j < s.v_dims[h]; ++j) {
                if (m.value[h][j]) {
                    v_keep.push_back(s.v_offset(h) + j);
                    ++kept;
                }
            }
            ns.v_dims.push_back(kept);
        }
        out.weights[names::wq(nl)] = weights.at(names::wq(l)).gather(0, qk_keep);
        out.weights[names::wk(nl)] = weights.at(names::wk(l)).gather(0, qk_keep);
        out.weights[names::wv(nl)] = weights.at(names::wv(l)).gather(0, v_keep);
        out.weights[names::wo(nl)] = weights.at(names::wo(l)).gather(1, v_keep);
        out.weights[names::up(nl)] = weights.at(names::up(l)).gather(0, ffn_keep);
        out.weights[names::gate(nl)] = weights.at(names::gate(l)).gather(0, ffn_keep);
        out.weights[names::down(nl)] = weights.at(names::down(l)).gather(1, ffn_keep);
        out.weights[names::norm1(nl)] = weights.at(names::norm1(l));
        out.weights[names::norm2(nl)] = weights.at(names::norm2(l));
        new_shapes.push_back(std::move(ns));
    }
    out.config.n_layers = new_shapes.size();
    out.config.set_layer_shapes(new_shapes);
    out.config.metadata["source_fingerprint"] = plan.fingerprint;
    validate_weights(out.config, out.weights);

    const std::uint64_t before = parameter_count(weights);
    const std::uint64_t after = parameter_count(out.weights);
    if (before - after != plan.removed_parameters) {
        throw ValidationError("plan declares " + std::to_string(plan.removed_parameters) +
                              " removed parameters but its neurons cover " + std::to_string(before - after));
    }
    return out;
}

double mean_cosine(const Matrix& a, const Matrix& b) {
    if (a.rows == 0) return 1.0;
    double total = 0.0;
    for (std::size_t t = 0; t < a.rows; ++t) {
        double ab = 0.0, aa = 0.0, bb = 0.0;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double x = a.at(t, i);
            const double y = b.at(t, i);
            ab += x * y;
            aa += x * x;
            bb += y * y;
        }
        if (aa == 0.0 || bb == 0.0) {
            total += (aa == 0.0 && bb == 0.0) ? 1.0 : 0.0;
        } else {
            total += std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
        }
    }
    return total / static_cast<double>(a.rows);
}

std::vector<LayerScore> layer_scores(const ModelConfig& config, const WeightStore& weights, const Vocab& vocab,
                                     const std::vector<Document>& docs, const ScoreConfig& score_config) {
    if (docs.empty()) throw ValidationError("empty corpus");
    std::vector<std::vector<double>> per_doc(docs.size());
    parallel_for(docs.size(), score_config.threads, [&](std::size_t d) {
        const auto tokens = document_tokens(vocab, docs[d], score_config, config);
        if (tokens.empty()) throw ValidationError("document \"" + docs[d].id + "\": empty document");
        const ForwardResult fr = forward(config, weights, tokens, true);
        for (const auto& lt : fr.trace->layers) per_doc[d].push_back(mean_cosine(lt.block_in, lt.block_out));
    });
    std::vector<LayerScore> scores;
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        double sum = 0.0;
        for (const auto& doc : per_doc) sum += doc[l];
        scores.push_back({l, 1.0 - sum / static_cast<double>(docs.size())});
    }
    std::stable_sort(scores.begin(), scores.end(),
                     [](const LayerScore& a, const LayerScore& b) { return a.importance < b.importance; });
    return scores;
}

PrunePlan aggressive_plan(const Bundle& bundle, const std::vector<DimensionCorpus>& corpora, double sigma,
                          std::size_t layer_budget, const ScoreConfig& score_config,
                          const CalibrationOptions& options) {
    const ModelConfig& config = bundle.config;
    if (layer_budget >= config.n_layers) {
        throw ValidationError("layer budget " + std::to_string(layer_budget) + " must be below n_layers " +
                              std::to_string(config.n_layers));
    }
    if (layer_budget == 0) return calibrate(bundle, corpora, sigma, score_config, options);
    if (!(sigma > 0.0 && sigma < 1.0)) throw ValidationError("sigma must lie in (0, 1)");

    std::vector<Document> docs;
    std::unordered_set<std::string> seen;
    for (const auto& c : corpora) {
        for (const auto& d : c.documents) {
            if (seen.insert(d.id).second) docs.push_back(d);
        }
    }
    const auto scores = layer_scores(config, bundle.weights, bundle.vocab, docs, score_config);
    std::vector<NeuronId> layer_ids;
    for (std::size_t i = 0; i < layer_budget; ++i) layer_ids.push_back(NeuronId::layer_unit(scores[i].layer));
    std::sort(layer_ids.begin(), layer_ids.end());

    const std::uint64_t total = config.total_parameters();
    PrunePlan layer_only;
    layer_only.fingerprint = bundle.fingerprint;
    layer_only.phases.push_back({"layer", layer_ids});
    for (const auto& id : layer_ids) layer_only.removed_parameters += parameter_weight(id, config);
    const PrunedModel reduced = apply_plan(config, bundle.weights, layer_only);

    const double target = sigma * static_cast<double>(total) - static_cast<double>(layer_only.removed_parameters);
    if (target < -options.tolerance * static_cast<double>(total)) {
        throw ValidationError("removing " + std::to_string(layer_budget) + " layers already exceeds sigma");
    }
    const Bundle reduced_bundle = make_bundle(reduced.config, reduced.weights, bundle.vocab);
    const NeuronUniverse universe = enumerate_neurons(reduced.config);
    if (static_cast<double>(universe.prunable_parameters()) < target) {
        throw ValidationError("sigma exceeds the prunable fraction after layer removal");
    }
    const auto dims = score_dimensions(reduced_bundle, corpora, universe, score_config);
    const TauSearch search(universe, dims);
    const TauOutcome outcome = target > 0.0 ? search_tau(search, target, total, options) : TauOutcome{};

    std::vector<std::size_t> surviving;
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        if (!std::binary_search(layer_ids.begin(), layer_ids.end(), NeuronId::layer_unit(l))) surviving.push_back(l);
    }
    PlanPhase neuron_phase{"neuron", {}};
    for (std::size_t pos : outcome.positions) {
        NeuronId id = universe.ids[pos];
        id.layer = surviving.at(id.layer);
        neuron_phase.ids.push_back(id);
    }
    std::sort(neuron_phase.ids.begin(), neuron_phase.ids.end());

    PrunePlan plan;
    plan.fingerprint = bundle.fingerprint;
    plan.sigma = sigma;
    plan.tau = outcome.tau;
    plan.total_parameters = total;
    plan.removed_parameters = layer_only.removed_parameters + outcome.removed;
    plan.achieved_ratio = static_cast<double>(plan.removed_parameters) / static_cast<double>(total);
    plan.phases = {{"layer", layer_ids}, std::move(neuron_phase)};
    plan.provenance = provenance_at(dims, universe, outcome.tau);
    log().info("aggressive plan: {} layers + {} neurons, ratio {:.6f}", layer_ids.size(), outcome.positions.size(),
               plan.achieved_ratio);
    return plan;
}

}  // namespace cusprune
