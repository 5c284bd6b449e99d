#include "cusprune/relevance.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "cusprune/bundle.hpp"
#include "cusprune/error.hpp"
#include "cusprune/parallel.hpp"
#include "json.hpp"

namespace cusprune {

using nlohmann::json;

void ScoreConfig::validate() const {
    if (!(tau > 0.0 && tau <= 100.0)) throw ValidationError("tau must lie in (0, 100]");
    if (max_tokens_per_doc == 0) throw ValidationError("max_tokens_per_doc must be >= 1");
}

ImpactMatrix::ImpactMatrix(std::size_t n_neurons, std::vector<DocumentMeta> docs)
    : n_neurons_(n_neurons), docs_(std::move(docs)), values_(n_neurons_ * docs_.size(), 0.0f) {}

namespace {

double rms(const std::vector<double>& sq_norms) {
    if (sq_norms.empty()) return 0.0;
    double s = 0.0;
    for (double v : sq_norms) s += v;
    return std::sqrt(s / static_cast<double>(sq_norms.size()));
}

// RMS over rows of |m[t][col]|.
double column_rms(const Matrix& m, std::size_t col) {
    double s = 0.0;
    for (std::size_t t = 0; t < m.rows; ++t) {
        const double v = m.at(t, col);
        s += v * v;
    }
    return m.rows ? std::sqrt(s / static_cast<double>(m.rows)) : 0.0;
}

double tensor_column_norm(const Tensor& w, std::size_t col) {
    double s = 0.0;
    for (std::size_t r = 0; r < w.dim(0); ++r) {
        const double v = w.at(r, col);
        s += v * v;
    }
    return std::sqrt(s);
}

struct LayerImpacts {
    std::vector<double> ffn;
    std::vector<double> value;  // flattened by v offset
    std::vector<double> head;
    double layer = 0.0;
};

LayerImpacts layer_impacts(const ModelConfig& config, const WeightStore& weights, const LayerTrace& lt,
                           std::size_t l) {
    const LayerShape s = config.layer_shape(l);
    const Tensor& down = weights.at(names::down(l));
    const Tensor& wo = weights.at(names::wo(l));
    const std::size_t seq = lt.act.rows;
    LayerImpacts out;

    out.ffn.resize(s.d_ff);
    for (std::size_t i = 0; i < s.d_ff; ++i) out.ffn[i] = column_rms(lt.act, i) * tensor_column_norm(down, i);

    out.value.resize(s.v_total());
    for (std::size_t c = 0; c < s.v_total(); ++c) {
        out.value[c] = column_rms(lt.head_out, c) * tensor_column_norm(wo, c);
    }

    out.head.resize(s.n_heads());
    std::vector<double> sq(seq);
    for (std::size_t h = 0; h < s.n_heads(); ++h) {
        const std::size_t off = s.v_offset(h);
        for (std::size_t t = 0; t < seq; ++t) {
            double norm_sq = 0.0;
            for (std::size_t r = 0; r < config.d_model; ++r) {
                double acc = 0.0;
                for (std::size_t j = 0; j < s.v_dims[h]; ++j) {
                    acc += static_cast<double>(wo.at(r, off + j)) * lt.head_out.at(t, off + j);
                }
                norm_sq += acc * acc;
            }
            sq[t] = norm_sq;
        }
        out.head[h] = rms(sq);
    }

    for (std::size_t t = 0; t < seq; ++t) {
        double norm_sq = 0.0;
        for (std::size_t r = 0; r < config.d_model; ++r) {
            const double d = static_cast<double>(lt.block_out.at(t, r)) - lt.block_in.at(t, r);
            norm_sq += d * d;
        }
        sq[t] = norm_sq;
    }
    out.layer = rms(sq);
    return out;
}

}  // namespace

std::vector<float> score_trace(const ModelConfig& config, const WeightStore& weights, const ForwardTrace& trace,
                               const NeuronUniverse& universe) {
    if (trace.layers.size() != config.n_layers) throw ValidationError("trace missing or incomplete");
    std::vector<LayerImpacts> per_layer;
    per_layer.reserve(config.n_layers);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        per_layer.push_back(layer_impacts(config, weights, trace.layers[l], l));
    }
    std::vector<float> column(universe.size());
    for (std::size_t k = 0; k < universe.size(); ++k) {
        const NeuronId& n = universe.ids[k];
        const LayerImpacts& li = per_layer.at(n.layer);
        double v = 0.0;
        switch (n.cls) {
            case NeuronClass::FfnChannel: v = li.ffn.at(n.index); break;
            case NeuronClass::AttnValueChannel:
                v = li.value.at(config.layer_shape(n.layer).v_offset(*n.head) + n.index);
                break;
            case NeuronClass::AttnHead: v = li.head.at(n.index); break;
            case NeuronClass::LayerUnit: v = li.layer; break;
        }
        column[k] = static_cast<float>(v);
    }
    return column;
}

std::vector<float> score_document(const ModelConfig& config, const WeightStore& weights,
                                  std::span<const TokenId> tokens, const NeuronUniverse& universe) {
    if (tokens.empty()) throw ValidationError("empty document");
    const ForwardResult fr = forward(config, weights, tokens, true);
    return score_trace(config, weights, *fr.trace, universe);
}

namespace {

// Double-precision copy of one layer's tensors, used by the ablation oracle.
struct DenseMat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    explicit DenseMat(const Tensor& t)
        : rows(t.dim(0)), cols(t.rank() > 1 ? t.dim(1) : 1), v(t.data().begin(), t.data().end()) {}
    double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
    void zero(std::size_t axis, std::size_t index) {
        if (axis == 0) {
            std::fill_n(v.begin() + static_cast<std::ptrdiff_t>(index * cols), cols, 0.0);
        } else {
            for (std::size_t r = 0; r < rows; ++r) v[r * cols + index] = 0.0;
        }
    }
};

using Rows = std::vector<std::vector<double>>;

Rows to_rows(const Matrix& m) {
    Rows out(m.rows, std::vector<double>(m.cols));
    for (std::size_t t = 0; t < m.rows; ++t) {
        for (std::size_t c = 0; c < m.cols; ++c) out[t][c] = m.at(t, c);
    }
    return out;
}

std::vector<double> matvec(const DenseMat& w, const std::vector<double>& x) {
    std::vector<double> y(w.rows, 0.0);
    for (std::size_t r = 0; r < w.rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < w.cols; ++c) acc += w.at(r, c) * x[c];
        y[r] = acc;
    }
    return y;
}

void rope_double(double* head, std::size_t dim, std::size_t pos, double base) {
    for (std::size_t i = 0; i + 1 < dim; i += 2) {
        const double theta = static_cast<double>(pos) * std::pow(base, -static_cast<double>(i) / static_cast<double>(dim));
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        const double x0 = head[i];
        const double x1 = head[i + 1];
        head[i] = x0 * c - x1 * s;
        head[i + 1] = x0 * s + x1 * c;
    }
}

struct OracleLayer {
    DenseMat wq, wk, wv, wo, up, gate, down, norm1, norm2;

    OracleLayer(const WeightStore& w, std::size_t l)
        : wq(w.at(names::wq(l))), wk(w.at(names::wk(l))), wv(w.at(names::wv(l))), wo(w.at(names::wo(l))),
          up(w.at(names::up(l))), gate(w.at(names::gate(l))), down(w.at(names::down(l))),
          norm1(w.at(names::norm1(l))), norm2(w.at(names::norm2(l))) {}

    DenseMat& by_name(const std::string& name, std::size_t l) {
        if (name == names::wq(l)) return wq;
        if (name == names::wk(l)) return wk;
        if (name == names::wv(l)) return wv;
        if (name == names::wo(l)) return wo;
        if (name == names::up(l)) return up;
        if (name == names::gate(l)) return gate;
        if (name == names::down(l)) return down;
        if (name == names::norm1(l)) return norm1;
        if (name == names::norm2(l)) return norm2;
        throw ValidationError("tensor " + name + " is not part of layer " + std::to_string(l));
    }
};

Rows attention_sublayer(const ModelConfig& config, const LayerShape& s, const OracleLayer& w, const Rows& input) {
    const std::size_t seq = input.size();
    const std::size_t hd = config.head_dim;
    Rows q(seq), k(seq), v(seq);
    for (std::size_t t = 0; t < seq; ++t) {
        q[t] = matvec(w.wq, input[t]);
        k[t] = matvec(w.wk, input[t]);
        v[t] = matvec(w.wv, input[t]);
        for (std::size_t h = 0; h < s.n_heads(); ++h) {
            rope_double(q[t].data() + h * hd, hd, t, config.rope_base);
            rope_double(k[t].data() + h * hd, hd, t, config.rope_base);
        }
    }
    Rows out(seq);
    for (std::size_t t = 0; t < seq; ++t) {
        std::vector<double> concat(s.v_total(), 0.0);
        for (std::size_t h = 0; h < s.n_heads(); ++h) {
            std::vector<double> scores(t + 1);
            double max_s = -INFINITY;
            for (std::size_t u = 0; u <= t; ++u) {
                double d = 0.0;
                for (std::size_t i = 0; i < hd; ++i) d += q[t][h * hd + i] * k[u][h * hd + i];
                scores[u] = d / std::sqrt(static_cast<double>(hd));
                max_s = std::max(max_s, scores[u]);
            }
            double z = 0.0;
            for (double& sc : scores) z += (sc = std::exp(sc - max_s));
            const std::size_t off = s.v_offset(h);
            for (std::size_t u = 0; u <= t; ++u) {
                for (std::size_t j = 0; j < s.v_dims[h]; ++j) concat[off + j] += scores[u] / z * v[u][off + j];
            }
        }
        out[t] = matvec(w.wo, concat);
    }
    return out;
}

Rows ffn_sublayer(const OracleLayer& w, const Rows& input) {
    Rows out(input.size());
    for (std::size_t t = 0; t < input.size(); ++t) {
        std::vector<double> g = matvec(w.gate, input[t]);
        const std::vector<double> u = matvec(w.up, input[t]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = g[i] / (1.0 + std::exp(-g[i])) * u[i];
        out[t] = matvec(w.down, g);
    }
    return out;
}

Rows norm_rows_double(const Rows& x, const DenseMat& weight, double eps) {
    Rows out(x.size());
    for (std::size_t t = 0; t < x.size(); ++t) {
        double ss = 0.0;
        for (double v : x[t]) ss += v * v;
        const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x[t].size()) + eps);
        out[t].resize(x[t].size());
        for (std::size_t i = 0; i < x[t].size(); ++i) out[t][i] = x[t][i] * inv * weight.v[i];
    }
    return out;
}

// Residual delta of the whole block: attention then FFN.
Rows block_delta(const ModelConfig& config, const LayerShape& s, const OracleLayer& w, const Rows& block_in) {
    const Rows a = attention_sublayer(config, s, w, norm_rows_double(block_in, w.norm1, config.norm_eps));
    Rows mid = block_in;
    for (std::size_t t = 0; t < mid.size(); ++t) {
        for (std::size_t i = 0; i < mid[t].size(); ++i) mid[t][i] += a[t][i];
    }
    const Rows f = ffn_sublayer(w, norm_rows_double(mid, w.norm2, config.norm_eps));
    Rows delta = a;
    for (std::size_t t = 0; t < delta.size(); ++t) {
        for (std::size_t i = 0; i < delta[t].size(); ++i) delta[t][i] += f[t][i];
    }
    return delta;
}

double rms_l2_difference(const Rows& a, const Rows& b) {
    std::vector<double> sq(a.size());
    for (std::size_t t = 0; t < a.size(); ++t) {
        double s = 0.0;
        for (std::size_t i = 0; i < a[t].size(); ++i) {
            const double d = a[t][i] - b[t][i];
            s += d * d;
        }
        sq[t] = s;
    }
    return rms(sq);
}

}  // namespace

double score_document_oracle(const ModelConfig& config, const WeightStore& weights, std::span<const TokenId> tokens,
                             const NeuronId& neuron) {
    if (tokens.empty()) throw ValidationError("empty document");
    const auto slices = coupled_slices(neuron, config);
    const ForwardResult fr = forward(config, weights, tokens, true);
    const LayerTrace& lt = fr.trace->layers.at(neuron.layer);
    const std::size_t l = neuron.layer;
    const LayerShape s = config.layer_shape(l);

    const OracleLayer intact(weights, l);
    OracleLayer ablated = intact;
    for (const auto& slice : slices) ablated.by_name(slice.tensor, l).zero(slice.axis, slice.index);

    switch (neuron.cls) {
        case NeuronClass::FfnChannel: {
            const Rows in = to_rows(lt.ffn_in);
            return rms_l2_difference(ffn_sublayer(intact, in), ffn_sublayer(ablated, in));
        }
        case NeuronClass::AttnValueChannel:
        case NeuronClass::AttnHead: {
            const Rows in = to_rows(lt.attn_in);
            return rms_l2_difference(attention_sublayer(config, s, intact, in),
                                     attention_sublayer(config, s, ablated, in));
        }
        case NeuronClass::LayerUnit: {
            const Rows in = to_rows(lt.block_in);
            return rms_l2_difference(block_delta(config, s, intact, in), block_delta(config, s, ablated, in));
        }
    }
    return 0.0;
}

std::vector<TokenId> document_tokens(const Vocab& vocab, const Document& doc, const ScoreConfig& score_config,
                                     const ModelConfig& config) {
    std::vector<TokenId> ids = tokenize(vocab, doc.text);
    const std::size_t limit = std::min(score_config.max_tokens_per_doc, config.max_seq_len);
    if (ids.size() > limit) ids.resize(limit);
    return ids;
}

ImpactMatrix score_corpus(const ModelConfig& config, const WeightStore& weights, const Vocab& vocab,
                          const DimensionCorpus& corpus, const NeuronUniverse& universe,
                          const ScoreConfig& score_config) {
    score_config.validate();
    if (corpus.documents.empty()) throw ValidationError("empty corpus");
    std::vector<DocumentMeta> meta;
    for (const auto& d : corpus.documents) meta.push_back({d.id, d.language, d.domain, d.task});
    ImpactMatrix impacts(universe.size(), std::move(meta));
    parallel_for(corpus.documents.size(), score_config.threads, [&](std::size_t d) {
        const Document& doc = corpus.documents[d];
        try {
            const auto tokens = document_tokens(vocab, doc, score_config, config);
            const auto col = score_document(config, weights, tokens, universe);
            std::copy(col.begin(), col.end(), impacts.column(d).begin());
        } catch (const ValidationError& e) {
            throw ValidationError("document \"" + doc.id + "\": " + e.what());
        }
    });
    return impacts;
}

std::size_t lowest_count(std::size_t pool_size, double tau) {
    const double k = std::floor(tau * static_cast<double>(pool_size) / 100.0 + 1e-9);
    return std::min(pool_size, static_cast<std::size_t>(std::max(0.0, k)));
}

std::vector<std::size_t> rank_order(std::span<const float> column, std::span<const std::size_t> pool) {
    std::vector<std::size_t> order(pool.begin(), pool.end());
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (column[a] != column[b]) return column[a] < column[b];
        return a < b;
    });
    return order;
}

std::vector<std::size_t> worst_ranks(const ImpactMatrix& impacts, std::span<const std::size_t> pool) {
    std::vector<std::size_t> slot(impacts.n_neurons(), 0);
    for (std::size_t p = 0; p < pool.size(); ++p) slot[pool[p]] = p;
    std::vector<std::size_t> worst(pool.size(), 0);
    for (std::size_t d = 0; d < impacts.n_docs(); ++d) {
        const auto order = rank_order(impacts.column(d), pool);
        for (std::size_t r = 0; r < order.size(); ++r) {
            std::size_t& w = worst[slot[order[r]]];
            w = std::max(w, r);
        }
    }
    return worst;
}

IrrelevantSet irrelevant_set(const ImpactMatrix& impacts, const NeuronUniverse& universe, double tau) {
    if (impacts.n_docs() == 0) throw ValidationError("empty corpus");
    if (impacts.n_neurons() != universe.size()) throw ValidationError("impact matrix does not match universe");
    if (!(tau > 0.0 && tau <= 100.0)) throw ValidationError("tau must lie in (0, 100]");
    const auto pool = universe.pool();
    const std::size_t k = lowest_count(pool.size(), tau);
    std::vector<std::size_t> hits(universe.size(), 0);
    for (std::size_t d = 0; d < impacts.n_docs(); ++d) {
        const auto order = rank_order(impacts.column(d), pool);
        for (std::size_t r = 0; r < k; ++r) ++hits[order[r]];
    }
    IrrelevantSet out;
    out.tau = tau;
    out.document_count = impacts.n_docs();
    for (std::size_t n = 0; n < universe.size(); ++n) {
        if (hits[n] == impacts.n_docs()) out.neurons.push_back(universe.ids[n]);
    }
    return out;
}

void write_impacts(const ImpactMatrix& impacts, const std::filesystem::path& path) {
    std::string out;
    const std::uint64_t header[2] = {impacts.n_neurons(), impacts.n_docs()};
    out.append(reinterpret_cast<const char*>(header), sizeof(header));
    auto values = impacts.values();
    out.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
    json footer;
    footer["docs"] = json::array();
    for (const auto& d : impacts.docs()) {
        footer["docs"].push_back({{"id", d.id}, {"language", d.language}, {"domain", d.domain}, {"task", d.task}});
    }
    out += footer.dump();
    write_file_atomic(path, out);
}

ImpactMatrix read_impacts(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    std::uint64_t header[2];
    if (bytes.size() < sizeof(header)) throw ValidationError("truncated impacts file");
    std::memcpy(header, bytes.data(), sizeof(header));
    const std::size_t payload = header[0] * header[1] * sizeof(float);
    if (bytes.size() < sizeof(header) + payload) throw ValidationError("truncated impacts file");
    json footer;
    try {
        footer = json::parse(bytes.substr(sizeof(header) + payload));
    } catch (const json::exception&) {
        throw ValidationError("malformed impacts footer");
    }
    std::vector<DocumentMeta> docs;
    for (const auto& d : footer.at("docs")) {
        docs.push_back({d.at("id"), d.at("language"), d.at("domain"), d.at("task")});
    }
    if (docs.size() != header[1]) throw ValidationError("impacts footer lists wrong number of documents");
    ImpactMatrix m(header[0], std::move(docs));
    for (std::size_t d = 0; d < m.n_docs(); ++d) {
        std::memcpy(m.column(d).data(), bytes.data() + sizeof(header) + d * header[0] * sizeof(float),
                    header[0] * sizeof(float));
    }
    return m;
}

void write_irrelevant_set(const IrrelevantSet& set, const std::filesystem::path& path) {
    json prov{{"label", set.label},
              {"corpus", set.corpus_id},
              {"fingerprint", set.model_fingerprint},
              {"tau", set.tau},
              {"documents", set.document_count}};
    std::string out = "# provenance: " + prov.dump() + "\n";
    for (const auto& n : set.neurons) out += n.str() + "\n";
    write_file_atomic(path, out);
}

IrrelevantSet read_irrelevant_set(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    IrrelevantSet set;
    constexpr std::string_view kPrefix = "# provenance: ";
    if (!std::getline(in, line) || !line.starts_with(kPrefix)) {
        throw ValidationError("irrelevant-set file lacks a provenance header");
    }
    try {
        const json prov = json::parse(line.substr(kPrefix.size()));
        set.label = prov.at("label");
        set.corpus_id = prov.at("corpus");
        set.model_fingerprint = prov.at("fingerprint");
        set.tau = prov.at("tau");
        set.document_count = prov.at("documents");
    } catch (const json::exception&) {
        throw ValidationError("malformed provenance header");
    }
    while (std::getline(in, line)) {
        if (!line.empty()) set.neurons.push_back(NeuronId::parse(line));
    }
    return set;
}

}  // namespace cusprune
