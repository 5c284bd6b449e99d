#include "cusprune/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "cusprune/error.hpp"
#include "cusprune/toy.hpp"

namespace cusprune {

ParamStore to_params(const WeightStore& weights) {
    ParamStore p;
    for (const auto& [name, t] : weights) p.emplace(name, std::vector<double>(t.data().begin(), t.data().end()));
    return p;
}

WeightStore to_weights(const ModelConfig& config, const ParamStore& params) {
    WeightStore w;
    for (const auto& [name, shape] : config.expected_shapes()) {
        const auto& src = params.at(name);
        w.emplace(name, Tensor(shape, std::vector<float>(src.begin(), src.end())));
    }
    return w;
}

namespace {

// Row-major [rows x cols] double buffer.
struct Buf {
    std::size_t rows = 0, cols = 0;
    std::vector<double> v;
    Buf() = default;
    Buf(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
    double* row(std::size_t r) { return v.data() + r * cols; }
    const double* row(std::size_t r) const { return v.data() + r * cols; }
};

// y = x W^T with W [out x in].
Buf mul_wt(const Buf& x, const std::vector<double>& w, std::size_t out) {
    Buf y(x.rows, out);
    const std::size_t in = x.cols;
    for (std::size_t t = 0; t < x.rows; ++t) {
        const double* xr = x.row(t);
        double* yr = y.row(t);
        for (std::size_t o = 0; o < out; ++o) {
            const double* wr = w.data() + o * in;
            double s = 0.0;
            for (std::size_t i = 0; i < in; ++i) s += wr[i] * xr[i];
            yr[o] = s;
        }
    }
    return y;
}

// dx += dy W with W [out x in].
void mul_w_acc(const Buf& dy, const std::vector<double>& w, Buf& dx) {
    const std::size_t out = dy.cols, in = dx.cols;
    for (std::size_t t = 0; t < dy.rows; ++t) {
        const double* dyr = dy.row(t);
        double* dxr = dx.row(t);
        for (std::size_t o = 0; o < out; ++o) {
            const double g = dyr[o];
            if (g == 0.0) continue;
            const double* wr = w.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) dxr[i] += g * wr[i];
        }
    }
}

// dW += dy^T x.
void outer_acc(const Buf& dy, const Buf& x, std::vector<double>& dw) {
    const std::size_t out = dy.cols, in = x.cols;
    for (std::size_t t = 0; t < dy.rows; ++t) {
        const double* dyr = dy.row(t);
        const double* xr = x.row(t);
        for (std::size_t o = 0; o < out; ++o) {
            const double g = dyr[o];
            if (g == 0.0) continue;
            double* dwr = dw.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) dwr[i] += g * xr[i];
        }
    }
}

struct Norm {
    Buf y;
    std::vector<double> inv;
};

Norm rms_forward(const Buf& x, const std::vector<double>& g, double eps) {
    Norm n{Buf(x.rows, x.cols), std::vector<double>(x.rows)};
    for (std::size_t t = 0; t < x.rows; ++t) {
        const double* xr = x.row(t);
        double ss = 0.0;
        for (std::size_t i = 0; i < x.cols; ++i) ss += xr[i] * xr[i];
        n.inv[t] = 1.0 / std::sqrt(ss / static_cast<double>(x.cols) + eps);
        double* yr = n.y.row(t);
        for (std::size_t i = 0; i < x.cols; ++i) yr[i] = xr[i] * n.inv[t] * g[i];
    }
    return n;
}

void rms_backward(const Buf& x, const std::vector<double>& g, const std::vector<double>& inv, const Buf& dy, Buf& dx,
                  std::vector<double>& dg) {
    const double d = static_cast<double>(x.cols);
    for (std::size_t t = 0; t < x.rows; ++t) {
        const double* xr = x.row(t);
        const double* dyr = dy.row(t);
        double* dxr = dx.row(t);
        const double r = inv[t];
        double dot = 0.0;
        for (std::size_t i = 0; i < x.cols; ++i) {
            dg[i] += dyr[i] * xr[i] * r;
            dot += dyr[i] * g[i] * xr[i];
        }
        const double c = r * r * r / d * dot;
        for (std::size_t i = 0; i < x.cols; ++i) dxr[i] += r * g[i] * dyr[i] - c * xr[i];
    }
}

void rope(double* head, std::size_t dim, std::size_t pos, double base, bool inverse) {
    for (std::size_t i = 0; i + 1 < dim; i += 2) {
        const double theta = static_cast<double>(pos) * std::pow(base, -static_cast<double>(i) / static_cast<double>(dim));
        const double c = std::cos(theta);
        const double s = inverse ? -std::sin(theta) : std::sin(theta);
        const double x0 = head[i], x1 = head[i + 1];
        head[i] = x0 * c - x1 * s;
        head[i + 1] = x0 * s + x1 * c;
    }
}

struct LayerCache {
    Buf x0, x1;
    Norm n1, n2;
    Buf q, k, v, o;
    std::vector<Buf> probs;  // per head [seq x seq]
    Buf gate, up, act;
};

const std::vector<double>& P(const ParamStore& p, const std::string& name) { return p.at(name); }

}  // namespace

double loss_and_grad(const ModelConfig& config, const ParamStore& params,
                     const std::vector<std::vector<TokenId>>& batch, ParamStore& grads) {
    if (!config.layers.empty()) throw ValidationError("trainer supports uniform configs only");
    const std::size_t D = config.d_model, H = config.n_heads, hd = config.head_dim, F = config.d_ff,
                      V = config.vocab_size;
    const std::size_t QK = H * hd;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    std::size_t count = 0;
    for (const auto& seq : batch) count += seq.size() > 1 ? seq.size() - 1 : 0;
    if (count == 0) throw ValidationError("training batch has no predicted positions");
    const double inv_count = 1.0 / static_cast<double>(count);
    double loss = 0.0;

    for (const auto& tokens : batch) {
        const std::size_t S = tokens.size();
        if (S < 2) continue;
        if (S > config.max_seq_len) throw ValidationError("training sequence longer than max_seq_len");

        Buf x(S, D);
        const auto& embed = P(params, names::kEmbed);
        for (std::size_t t = 0; t < S; ++t) std::copy_n(embed.data() + tokens[t] * D, D, x.row(t));

        std::vector<LayerCache> caches(config.n_layers);
        for (std::size_t l = 0; l < config.n_layers; ++l) {
            LayerCache& c = caches[l];
            c.x0 = x;
            c.n1 = rms_forward(x, P(params, names::norm1(l)), config.norm_eps);
            c.q = mul_wt(c.n1.y, P(params, names::wq(l)), QK);
            c.k = mul_wt(c.n1.y, P(params, names::wk(l)), QK);
            c.v = mul_wt(c.n1.y, P(params, names::wv(l)), QK);
            for (std::size_t t = 0; t < S; ++t) {
                for (std::size_t h = 0; h < H; ++h) {
                    rope(c.q.row(t) + h * hd, hd, t, config.rope_base, false);
                    rope(c.k.row(t) + h * hd, hd, t, config.rope_base, false);
                }
            }
            c.o = Buf(S, QK);
            c.probs.assign(H, Buf(S, S));
            for (std::size_t h = 0; h < H; ++h) {
                Buf& p = c.probs[h];
                for (std::size_t t = 0; t < S; ++t) {
                    double* pr = p.row(t);
                    double m = -INFINITY;
                    for (std::size_t u = 0; u <= t; ++u) {
                        double s = 0.0;
                        for (std::size_t i = 0; i < hd; ++i) s += c.q.row(t)[h * hd + i] * c.k.row(u)[h * hd + i];
                        pr[u] = s * scale;
                        m = std::max(m, pr[u]);
                    }
                    double z = 0.0;
                    for (std::size_t u = 0; u <= t; ++u) z += (pr[u] = std::exp(pr[u] - m));
                    for (std::size_t u = 0; u <= t; ++u) pr[u] /= z;
                    double* orow = c.o.row(t) + h * hd;
                    for (std::size_t u = 0; u <= t; ++u) {
                        const double* vr = c.v.row(u) + h * hd;
                        for (std::size_t i = 0; i < hd; ++i) orow[i] += pr[u] * vr[i];
                    }
                }
            }
            const Buf attn = mul_wt(c.o, P(params, names::wo(l)), D);
            for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] += attn.v[i];
            c.x1 = x;
            c.n2 = rms_forward(x, P(params, names::norm2(l)), config.norm_eps);
            c.gate = mul_wt(c.n2.y, P(params, names::gate(l)), F);
            c.up = mul_wt(c.n2.y, P(params, names::up(l)), F);
            c.act = Buf(S, F);
            for (std::size_t i = 0; i < c.act.v.size(); ++i) {
                const double g = c.gate.v[i];
                c.act.v[i] = g / (1.0 + std::exp(-g)) * c.up.v[i];
            }
            const Buf ffn = mul_wt(c.act, P(params, names::down(l)), D);
            for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] += ffn.v[i];
        }

        const Norm nf = rms_forward(x, P(params, names::kFinalNorm), config.norm_eps);
        Buf dlogits = mul_wt(nf.y, P(params, names::kUnembed), V);
        for (std::size_t t = 0; t < S; ++t) {
            double* lr = dlogits.row(t);
            if (t + 1 == S) {
                std::fill_n(lr, V, 0.0);
                continue;
            }
            double m = -INFINITY;
            for (std::size_t j = 0; j < V; ++j) m = std::max(m, lr[j]);
            double z = 0.0;
            for (std::size_t j = 0; j < V; ++j) z += std::exp(lr[j] - m);
            const double log_z = m + std::log(z);
            loss -= (lr[tokens[t + 1]] - log_z) * inv_count;
            for (std::size_t j = 0; j < V; ++j) lr[j] = std::exp(lr[j] - log_z) * inv_count;
            lr[tokens[t + 1]] -= inv_count;
        }

        outer_acc(dlogits, nf.y, grads.at(names::kUnembed));
        Buf dnf(S, D);
        mul_w_acc(dlogits, P(params, names::kUnembed), dnf);
        Buf dx(S, D);
        rms_backward(x, P(params, names::kFinalNorm), nf.inv, dnf, dx, grads.at(names::kFinalNorm));

        for (std::size_t l = config.n_layers; l-- > 0;) {
            LayerCache& c = caches[l];
            // FFN
            outer_acc(dx, c.act, grads.at(names::down(l)));
            Buf dact(S, F);
            mul_w_acc(dx, P(params, names::down(l)), dact);
            Buf dgate(S, F), dup(S, F);
            for (std::size_t i = 0; i < dact.v.size(); ++i) {
                const double g = c.gate.v[i];
                const double sig = 1.0 / (1.0 + std::exp(-g));
                dup.v[i] = dact.v[i] * g * sig;
                dgate.v[i] = dact.v[i] * c.up.v[i] * sig * (1.0 + g * (1.0 - sig));
            }
            outer_acc(dgate, c.n2.y, grads.at(names::gate(l)));
            outer_acc(dup, c.n2.y, grads.at(names::up(l)));
            Buf dn2(S, D);
            mul_w_acc(dgate, P(params, names::gate(l)), dn2);
            mul_w_acc(dup, P(params, names::up(l)), dn2);
            Buf dx1 = dx;
            rms_backward(c.x1, P(params, names::norm2(l)), c.n2.inv, dn2, dx1, grads.at(names::norm2(l)));

            // Attention
            outer_acc(dx1, c.o, grads.at(names::wo(l)));
            Buf dout(S, QK);
            mul_w_acc(dx1, P(params, names::wo(l)), dout);
            Buf dq(S, QK), dk(S, QK), dv(S, QK);
            std::vector<double> dp(S);
            for (std::size_t h = 0; h < H; ++h) {
                const Buf& p = c.probs[h];
                for (std::size_t t = 0; t < S; ++t) {
                    const double* dor = dout.row(t) + h * hd;
                    const double* pr = p.row(t);
                    double weighted = 0.0;
                    for (std::size_t u = 0; u <= t; ++u) {
                        const double* vr = c.v.row(u) + h * hd;
                        double* dvr = dv.row(u) + h * hd;
                        double s = 0.0;
                        for (std::size_t i = 0; i < hd; ++i) {
                            s += dor[i] * vr[i];
                            dvr[i] += pr[u] * dor[i];
                        }
                        dp[u] = s;
                        weighted += pr[u] * s;
                    }
                    double* dqr = dq.row(t) + h * hd;
                    const double* qr = c.q.row(t) + h * hd;
                    for (std::size_t u = 0; u <= t; ++u) {
                        const double ds = pr[u] * (dp[u] - weighted) * scale;
                        const double* kr = c.k.row(u) + h * hd;
                        double* dkr = dk.row(u) + h * hd;
                        for (std::size_t i = 0; i < hd; ++i) {
                            dqr[i] += ds * kr[i];
                            dkr[i] += ds * qr[i];
                        }
                    }
                }
            }
            for (std::size_t t = 0; t < S; ++t) {
                for (std::size_t h = 0; h < H; ++h) {
                    rope(dq.row(t) + h * hd, hd, t, config.rope_base, true);
                    rope(dk.row(t) + h * hd, hd, t, config.rope_base, true);
                }
            }
            outer_acc(dq, c.n1.y, grads.at(names::wq(l)));
            outer_acc(dk, c.n1.y, grads.at(names::wk(l)));
            outer_acc(dv, c.n1.y, grads.at(names::wv(l)));
            Buf dn1(S, D);
            mul_w_acc(dq, P(params, names::wq(l)), dn1);
            mul_w_acc(dk, P(params, names::wk(l)), dn1);
            mul_w_acc(dv, P(params, names::wv(l)), dn1);
            Buf dx0 = dx1;
            rms_backward(c.x0, P(params, names::norm1(l)), c.n1.inv, dn1, dx0, grads.at(names::norm1(l)));
            dx = std::move(dx0);
        }
        auto& dembed = grads.at(names::kEmbed);
        for (std::size_t t = 0; t < S; ++t) {
            const double* g = dx.row(t);
            double* dst = dembed.data() + tokens[t] * D;
            for (std::size_t i = 0; i < D; ++i) dst[i] += g[i];
        }
    }
    return loss;
}

TrainResult train_toy(const ModelConfig& config, const WeightStore& init,
                      const std::vector<std::vector<TokenId>>& corpus, const TrainOptions& options) {
    validate_weights(config, init);
    std::vector<const std::vector<TokenId>*> usable;
    for (const auto& seq : corpus) {
        if (seq.size() >= 2) usable.push_back(&seq);
    }
    if (usable.empty()) throw ValidationError("training corpus has no sequence of two or more tokens");
    const std::size_t window = std::min(options.window, config.max_seq_len);

    ParamStore params = to_params(init);
    ParamStore m, v, grads;
    for (const auto& [name, p] : params) {
        m[name].assign(p.size(), 0.0);
        v[name].assign(p.size(), 0.0);
        grads[name].assign(p.size(), 0.0);
    }
    Rng rng(options.seed);
    TrainResult result;
    const std::size_t tail = std::max<std::size_t>(1, options.steps / 10);
    double tail_loss = 0.0;

    for (std::size_t step = 0; step < options.steps; ++step) {
        std::vector<std::vector<TokenId>> batch;
        for (std::size_t b = 0; b < options.batch_size; ++b) {
            const auto& seq = *usable[rng.below(usable.size())];
            const std::size_t len = std::min(window, seq.size());
            const std::size_t start = rng.below(seq.size() - len + 1);
            batch.emplace_back(seq.begin() + static_cast<std::ptrdiff_t>(start),
                               seq.begin() + static_cast<std::ptrdiff_t>(start + len));
        }
        for (auto& [name, g] : grads) std::fill(g.begin(), g.end(), 0.0);
        const double loss = loss_and_grad(config, params, batch, grads);
        if (step == 0) result.first_loss = loss;
        if (step + tail >= options.steps) tail_loss += loss;

        const double t = static_cast<double>(step + 1);
        const double bc1 = 1.0 - std::pow(options.beta1, t);
        const double bc2 = 1.0 - std::pow(options.beta2, t);
        for (auto& [name, p] : params) {
            auto& g = grads[name];
            auto& mm = m[name];
            auto& vv = v[name];
            for (std::size_t i = 0; i < p.size(); ++i) {
                mm[i] = options.beta1 * mm[i] + (1.0 - options.beta1) * g[i];
                vv[i] = options.beta2 * vv[i] + (1.0 - options.beta2) * g[i] * g[i];
                p[i] -= options.learning_rate * (mm[i] / bc1) / (std::sqrt(vv[i] / bc2) + options.eps);
            }
        }
    }
    result.final_loss = tail_loss / static_cast<double>(std::min(tail, options.steps));
    result.weights = to_weights(config, params);
    return result;
}

}  // namespace cusprune
