#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "cusprune/model_config.hpp"
#include "cusprune/tensor.hpp"
#include "cusprune/vocab.hpp"

namespace cusprune {

// Dense row-major [rows x cols] activation buffer.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// Activations captured for one layer.
struct LayerTrace {
    Matrix block_in;    // residual stream entering the block
    Matrix attn_in;     // RMSNorm(block_in) * norm1
    Matrix head_out;    // attention-weighted value rows, heads concatenated [seq x v_total]
    Matrix h_attn;      // attention sublayer output (after wo)
    Matrix ffn_in;      // RMSNorm(block_in + h_attn) * norm2
    Matrix act;         // silu(gate) * up  [seq x d_ff]
    Matrix h_ffn;       // FFN sublayer output (after down)
    Matrix block_out;   // residual stream leaving the block
};

struct ForwardTrace {
    std::vector<LayerTrace> layers;
    Matrix logits;
};

struct ForwardResult {
    Matrix logits;  // [seq x vocab_size]
    std::optional<ForwardTrace> trace;
};

// out = x / sqrt(mean(x^2) + eps) * weight, accumulated in double.
void rms_norm(std::span<const float> x, std::span<const float> weight, double eps,
              std::span<float> out);

// Rotates consecutive pairs (2i, 2i+1) of one head vector by pos * base^(-2i/head_dim).
void apply_rope(std::span<float> head, std::size_t pos, double base);

// Validates token ids and length, then runs the pre-norm decoder.
ForwardResult forward(const ModelConfig& config, const WeightStore& weights,
                      std::span<const TokenId> tokens, bool trace = false);

// Row t holds log p(next token | tokens[0..t]) over the vocabulary, computed
// from the logits with double-precision softmax.
std::vector<std::vector<double>> logprobs(const ModelConfig& config, const WeightStore& weights,
                                          std::span<const TokenId> tokens);
std::vector<std::vector<double>> log_softmax_rows(const Matrix& logits);

// Greedy continuation without a KV cache; stops at max_seq_len.
std::vector<TokenId> greedy_decode(const ModelConfig& config, const WeightStore& weights,
                                   std::span<const TokenId> prompt, std::size_t n_new);

}  // namespace cusprune
