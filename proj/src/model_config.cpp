#include "cusprune/model_config.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "cusprune/error.hpp"

namespace cusprune {

std::size_t LayerShape::v_total() const {
    return std::accumulate(v_dims.begin(), v_dims.end(), std::size_t{0});
}

std::size_t LayerShape::v_offset(std::size_t h) const {
    return std::accumulate(v_dims.begin(), v_dims.begin() + static_cast<std::ptrdiff_t>(h), std::size_t{0});
}

LayerShape ModelConfig::layer_shape(std::size_t layer) const {
    for (const auto& o : layers) {
        if (o.layer_index == layer) return {o.d_ff_actual, o.v_dims};
    }
    return {d_ff, std::vector<std::size_t>(n_heads, head_dim)};
}

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ValidationError("invalid config: " + what);
    };
    require(n_layers >= 1, "n_layers must be >= 1");
    require(d_model >= 1, "d_model must be >= 1");
    require(n_heads >= 1, "n_heads must be >= 1");
    require(head_dim >= 1 && head_dim % 2 == 0, "head_dim must be a positive even number");
    require(d_ff >= 1, "d_ff must be >= 1");
    require(vocab_size >= 1, "vocab_size must be >= 1");
    require(max_seq_len >= 1, "max_seq_len must be >= 1");
    require(norm_eps > 0.0, "norm_eps must be positive");
    require(rope_base > 0.0, "rope_base must be positive");
    require(n_heads * head_dim == d_model, "n_heads * head_dim must equal d_model");
    std::size_t prev = 0;
    bool first = true;
    for (const auto& o : layers) {
        require(o.layer_index < n_layers, "override for layer " + std::to_string(o.layer_index) + " out of range");
        require(first || o.layer_index > prev, "layer overrides must be sorted and unique");
        require(o.d_ff_actual <= d_ff, "d_ff_actual exceeds d_ff");
        require(o.v_dims.size() <= n_heads, "n_heads_actual exceeds n_heads");
        for (std::size_t v : o.v_dims) require(v <= head_dim, "v_dim exceeds head_dim");
        prev = o.layer_index;
        first = false;
    }
}

std::map<std::string, std::vector<std::size_t>> ModelConfig::expected_shapes() const {
    std::map<std::string, std::vector<std::size_t>> shapes;
    shapes[names::kEmbed] = {vocab_size, d_model};
    shapes[names::kUnembed] = {vocab_size, d_model};
    shapes[names::kFinalNorm] = {d_model};
    for (std::size_t l = 0; l < n_layers; ++l) {
        const LayerShape s = layer_shape(l);
        const std::size_t qk = s.n_heads() * head_dim;
        shapes[names::wq(l)] = {qk, d_model};
        shapes[names::wk(l)] = {qk, d_model};
        shapes[names::wv(l)] = {s.v_total(), d_model};
        shapes[names::wo(l)] = {d_model, s.v_total()};
        shapes[names::up(l)] = {s.d_ff, d_model};
        shapes[names::gate(l)] = {s.d_ff, d_model};
        shapes[names::down(l)] = {d_model, s.d_ff};
        shapes[names::norm1(l)] = {d_model};
        shapes[names::norm2(l)] = {d_model};
    }
    return shapes;
}

std::uint64_t ModelConfig::total_parameters() const {
    std::uint64_t total = 0;
    for (const auto& [name, shape] : expected_shapes()) {
        std::uint64_t n = 1;
        for (std::size_t d : shape) n *= d;
        total += n;
    }
    return total;
}

void ModelConfig::set_layer_shapes(const std::vector<LayerShape>& shapes) {
    layers.clear();
    const std::vector<std::size_t> uniform(n_heads, head_dim);
    for (std::size_t l = 0; l < shapes.size(); ++l) {
        const auto& s = shapes[l];
        if (s.d_ff == d_ff && s.v_dims == uniform) continue;
        layers.push_back({l, s.d_ff, s.v_dims});
    }
}

void validate_weights(const ModelConfig& config, const WeightStore& weights) {
    config.validate();
    const auto expected = config.expected_shapes();
    for (const auto& [name, shape] : expected) {
        auto it = weights.find(name);
        if (it == weights.end()) throw ValidationError("missing tensor: " + name);
        if (it->second.shape() != shape) throw ValidationError("tensor shape mismatch: " + name);
        if (!it->second.all_finite()) throw ValidationError("non-finite values in tensor: " + name);
    }
    for (const auto& [name, tensor] : weights) {
        if (!expected.contains(name)) throw ValidationError("unknown tensor name: " + name);
    }
}

}  // namespace cusprune
