#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cusprune/tensor.hpp"

namespace cusprune {

// Width override for a single layer of a pruned model. Heads are compacted:
// v_dims has one entry per surviving head.
struct LayerOverride {
    std::size_t layer_index = 0;
    std::size_t d_ff_actual = 0;
    std::vector<std::size_t> v_dims;

    std::size_t n_heads_actual() const { return v_dims.size(); }
    friend bool operator==(const LayerOverride&, const LayerOverride&) = default;
};

// Resolved widths of one layer, whether or not it carries an override.
struct LayerShape {
    std::size_t d_ff = 0;
    std::vector<std::size_t> v_dims;

    std::size_t n_heads() const { return v_dims.size(); }
    std::size_t v_total() const;
    // Row offset of head `h` inside attn.wv (and column offset inside attn.wo).
    std::size_t v_offset(std::size_t h) const;
};

struct ModelConfig {
    std::size_t n_layers = 0;
    std::size_t d_model = 0;
    std::size_t n_heads = 0;
    std::size_t head_dim = 0;
    std::size_t d_ff = 0;
    std::size_t vocab_size = 0;
    std::size_t max_seq_len = 0;
    double norm_eps = 1e-5;
    double rope_base = 10000.0;
    std::vector<LayerOverride> layers;
    // Free-form string annotations (e.g. source fingerprint of a pruned bundle).
    std::map<std::string, std::string> metadata;

    LayerShape layer_shape(std::size_t layer) const;

    // Throws ValidationError when the config is internally inconsistent.
    void validate() const;

    // Expected tensor shapes for every canonical name.
    std::map<std::string, std::vector<std::size_t>> expected_shapes() const;

    std::uint64_t total_parameters() const;

    // Rewrites `layers` so that only layers differing from the uniform
    // default carry an override, sorted by index.
    void set_layer_shapes(const std::vector<LayerShape>& shapes);

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Throws ValidationError naming the first missing, extra, misshapen or
// non-finite tensor.
void validate_weights(const ModelConfig& config, const WeightStore& weights);

}  // namespace cusprune
