#include "cusprune/forward.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cusprune/error.hpp"

namespace cusprune {

namespace {

double dot(std::span<const float> a, std::span<const float> b) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    const std::size_t n = a.size();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += static_cast<double>(a[i]) * b[i];
        s1 += static_cast<double>(a[i + 1]) * b[i + 1];
        s2 += static_cast<double>(a[i + 2]) * b[i + 2];
        s3 += static_cast<double>(a[i + 3]) * b[i + 3];
    }
    for (; i < n; ++i) s0 += static_cast<double>(a[i]) * b[i];
    return (s0 + s1) + (s2 + s3);
}

// out[t] = W x[t] for every row t; W is [out x in].
Matrix linear(const Matrix& x, const Tensor& w) {
    const std::size_t out_dim = w.dim(0);
    Matrix y(x.rows, out_dim);
    for (std::size_t t = 0; t < x.rows; ++t) {
        auto xr = x.row(t);
        auto yr = y.row(t);
        for (std::size_t o = 0; o < out_dim; ++o) yr[o] = static_cast<float>(dot(xr, w.row(o)));
    }
    return y;
}

Matrix norm_rows(const Matrix& x, const Tensor& weight, double eps) {
    Matrix y(x.rows, x.cols);
    for (std::size_t t = 0; t < x.rows; ++t) rms_norm(x.row(t), weight.data(), eps, y.row(t));
    return y;
}

void add_into(Matrix& acc, const Matrix& delta) {
    for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += delta.data[i];
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

const Tensor& tensor(const WeightStore& weights, const std::string& name) {
    auto it = weights.find(name);
    if (it == weights.end()) throw ValidationError("missing tensor: " + name);
    return it->second;
}

}  // namespace

void rms_norm(std::span<const float> x, std::span<const float> weight, double eps, std::span<float> out) {
    double sum_sq = 0.0;
    for (float v : x) sum_sq += static_cast<double>(v) * v;
    const double inv = 1.0 / std::sqrt(sum_sq / static_cast<double>(x.size()) + eps);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(x[i] * inv * weight[i]);
}

void apply_rope(std::span<float> head, std::size_t pos, double base) {
    const std::size_t dim = head.size();
    for (std::size_t i = 0; i + 1 < dim; i += 2) {
        const double theta = static_cast<double>(pos) * std::pow(base, -static_cast<double>(i) / static_cast<double>(dim));
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        const double x0 = head[i];
        const double x1 = head[i + 1];
        head[i] = static_cast<float>(x0 * c - x1 * s);
        head[i + 1] = static_cast<float>(x0 * s + x1 * c);
    }
}

ForwardResult forward(const ModelConfig& config, const WeightStore& weights, std::span<const TokenId> tokens,
                      bool trace) {
    const std::size_t seq = tokens.size();
    if (seq > config.max_seq_len) {
        throw ValidationError("sequence too long: " + std::to_string(seq) + " > max_seq_len " +
                              std::to_string(config.max_seq_len));
    }
    const Tensor& embed = tensor(weights, names::kEmbed);
    Matrix x(seq, config.d_model);
    for (std::size_t t = 0; t < seq; ++t) {
        if (tokens[t] >= config.vocab_size) {
            throw ValidationError("token id out of range: " + std::to_string(tokens[t]));
        }
        auto src = embed.row(tokens[t]);
        std::copy(src.begin(), src.end(), x.row(t).begin());
    }

    ForwardResult result;
    if (trace) result.trace.emplace();
    const std::size_t hd = config.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    for (std::size_t l = 0; l < config.n_layers; ++l) {
        const LayerShape shape = config.layer_shape(l);
        LayerTrace lt;
        if (trace) lt.block_in = x;

        Matrix attn_in = norm_rows(x, tensor(weights, names::norm1(l)), config.norm_eps);
        Matrix q = linear(attn_in, tensor(weights, names::wq(l)));
        Matrix k = linear(attn_in, tensor(weights, names::wk(l)));
        Matrix v = linear(attn_in, tensor(weights, names::wv(l)));
        for (std::size_t t = 0; t < seq; ++t) {
            for (std::size_t h = 0; h < shape.n_heads(); ++h) {
                apply_rope(q.row(t).subspan(h * hd, hd), t, config.rope_base);
                apply_rope(k.row(t).subspan(h * hd, hd), t, config.rope_base);
            }
        }

        Matrix head_out(seq, shape.v_total());
        std::vector<double> probs(seq);
        std::vector<double> acc;
        for (std::size_t h = 0; h < shape.n_heads(); ++h) {
            const std::size_t off = shape.v_offset(h);
            const std::size_t vd = shape.v_dims[h];
            acc.assign(vd, 0.0);
            for (std::size_t t = 0; t < seq; ++t) {
                auto qt = std::span<const float>(q.row(t)).subspan(h * hd, hd);
                double max_score = -INFINITY;
                for (std::size_t u = 0; u <= t; ++u) {
                    probs[u] = dot(qt, std::span<const float>(k.row(u)).subspan(h * hd, hd)) * scale;
                    max_score = std::max(max_score, probs[u]);
                }
                double denom = 0.0;
                for (std::size_t u = 0; u <= t; ++u) {
                    probs[u] = std::exp(probs[u] - max_score);
                    denom += probs[u];
                }
                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::size_t u = 0; u <= t; ++u) {
                    const double p = probs[u] / denom;
                    auto vu = v.row(u);
                    for (std::size_t j = 0; j < vd; ++j) acc[j] += p * vu[off + j];
                }
                auto out = head_out.row(t);
                for (std::size_t j = 0; j < vd; ++j) out[off + j] = static_cast<float>(acc[j]);
            }
        }
        Matrix h_attn = linear(head_out, tensor(weights, names::wo(l)));
        add_into(x, h_attn);

        Matrix ffn_in = norm_rows(x, tensor(weights, names::norm2(l)), config.norm_eps);
        Matrix gate = linear(ffn_in, tensor(weights, names::gate(l)));
        Matrix up = linear(ffn_in, tensor(weights, names::up(l)));
        Matrix act(seq, shape.d_ff);
        for (std::size_t i = 0; i < act.data.size(); ++i) {
            act.data[i] = static_cast<float>(silu(gate.data[i]) * static_cast<double>(up.data[i]));
        }
        Matrix h_ffn = linear(act, tensor(weights, names::down(l)));
        add_into(x, h_ffn);

        if (trace) {
            lt.attn_in = std::move(attn_in);
            lt.head_out = std::move(head_out);
            lt.h_attn = std::move(h_attn);
            lt.ffn_in = std::move(ffn_in);
            lt.act = std::move(act);
            lt.h_ffn = std::move(h_ffn);
            lt.block_out = x;
            result.trace->layers.push_back(std::move(lt));
        }
    }

    Matrix final_in = norm_rows(x, tensor(weights, names::kFinalNorm), config.norm_eps);
    result.logits = linear(final_in, tensor(weights, names::kUnembed));
    if (trace) result.trace->logits = result.logits;
    return result;
}

std::vector<std::vector<double>> log_softmax_rows(const Matrix& logits) {
    std::vector<std::vector<double>> out(logits.rows, std::vector<double>(logits.cols));
    for (std::size_t t = 0; t < logits.rows; ++t) {
        auto row = logits.row(t);
        double max_v = -INFINITY;
        for (float v : row) max_v = std::max(max_v, static_cast<double>(v));
        double sum = 0.0;
        for (float v : row) sum += std::exp(static_cast<double>(v) - max_v);
        const double log_z = max_v + std::log(sum);
        for (std::size_t c = 0; c < row.size(); ++c) out[t][c] = static_cast<double>(row[c]) - log_z;
    }
    return out;
}

std::vector<std::vector<double>> logprobs(const ModelConfig& config, const WeightStore& weights,
                                          std::span<const TokenId> tokens) {
    return log_softmax_rows(forward(config, weights, tokens).logits);
}

std::vector<TokenId> greedy_decode(const ModelConfig& config, const WeightStore& weights,
                                   std::span<const TokenId> prompt, std::size_t n_new) {
    std::vector<TokenId> seq(prompt.begin(), prompt.end());
    std::vector<TokenId> generated;
    while (generated.size() < n_new && !seq.empty() && seq.size() < config.max_seq_len) {
        Matrix logits = forward(config, weights, seq).logits;
        auto last = logits.row(logits.rows - 1);
        const auto best = static_cast<TokenId>(std::max_element(last.begin(), last.end()) - last.begin());
        seq.push_back(best);
        generated.push_back(best);
    }
    return generated;
}

}  // namespace cusprune
