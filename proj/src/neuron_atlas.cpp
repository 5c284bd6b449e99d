#include "cusprune/neuron_atlas.hpp"

#include <algorithm>
#include <charconv>

#include "cusprune/error.hpp"

namespace cusprune {

std::string_view class_token(NeuronClass cls) {
    switch (cls) {
        case NeuronClass::FfnChannel: return "ffn";
        case NeuronClass::AttnValueChannel: return "attn_v";
        case NeuronClass::AttnHead: return "head";
        case NeuronClass::LayerUnit: return "layer";
    }
    return "?";
}

bool in_default_pool(NeuronClass cls) {
    return cls == NeuronClass::FfnChannel || cls == NeuronClass::AttnValueChannel;
}

std::string NeuronId::str() const {
    std::string out = "L" + std::to_string(layer) + "." + std::string(class_token(cls)) + ".";
    if (head) out += std::to_string(*head) + ".";
    return out + std::to_string(index);
}

namespace {

std::size_t parse_number(std::string_view text, std::string_view whole) {
    std::size_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
        throw ValidationError("malformed neuron id: " + std::string(whole));
    }
    return value;
}

}  // namespace

NeuronId NeuronId::parse(std::string_view text) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = text.find('.', start);
        parts.push_back(text.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
        if (dot == std::string_view::npos) break;
        start = dot + 1;
    }
    if (parts.size() < 3 || parts[0].size() < 2 || parts[0][0] != 'L') {
        throw ValidationError("malformed neuron id: " + std::string(text));
    }
    NeuronId id;
    id.layer = parse_number(parts[0].substr(1), text);
    const std::string_view cls = parts[1];
    if (cls == "attn_v") {
        if (parts.size() != 4) throw ValidationError("malformed neuron id: " + std::string(text));
        id.cls = NeuronClass::AttnValueChannel;
        id.head = parse_number(parts[2], text);
        id.index = parse_number(parts[3], text);
        return id;
    }
    if (parts.size() != 3) throw ValidationError("malformed neuron id: " + std::string(text));
    if (cls == "ffn") {
        id.cls = NeuronClass::FfnChannel;
    } else if (cls == "head") {
        id.cls = NeuronClass::AttnHead;
    } else if (cls == "layer") {
        id.cls = NeuronClass::LayerUnit;
    } else {
        throw ValidationError("unknown neuron class in id: " + std::string(text));
    }
    id.index = parse_number(parts[2], text);
    return id;
}

std::vector<std::size_t> NeuronUniverse::pool() const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < ids.size(); ++k) {
        if (in_default_pool(ids[k].cls)) out.push_back(k);
    }
    return out;
}

std::uint64_t NeuronUniverse::prunable_parameters() const {
    std::uint64_t total = 0;
    for (std::size_t k : pool()) total += param_weight[k];
    return total;
}

std::optional<std::size_t> NeuronUniverse::position(const NeuronId& id) const {
    auto it = std::lower_bound(ids.begin(), ids.end(), id);
    if (it == ids.end() || *it != id) return std::nullopt;
    return static_cast<std::size_t>(it - ids.begin());
}

NeuronUniverse enumerate_neurons(const ModelConfig& config) {
    config.validate();
    NeuronUniverse u;
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        const LayerShape s = config.layer_shape(l);
        for (std::size_t i = 0; i < s.d_ff; ++i) u.ids.push_back(NeuronId::ffn(l, i));
        for (std::size_t h = 0; h < s.n_heads(); ++h) {
            for (std::size_t j = 0; j < s.v_dims[h]; ++j) u.ids.push_back(NeuronId::value(l, h, j));
        }
        for (std::size_t h = 0; h < s.n_heads(); ++h) u.ids.push_back(NeuronId::attn_head(l, h));
        u.ids.push_back(NeuronId::layer_unit(l));
    }
    u.param_weight.reserve(u.ids.size());
    for (const auto& id : u.ids) u.param_weight.push_back(parameter_weight(id, config));
    return u;
}

void check_neuron(const NeuronId& n, const ModelConfig& config) {
    auto fail = [&] { throw ValidationError("neuron " + n.str() + " does not exist in this model"); };
    if (n.layer >= config.n_layers) fail();
    const LayerShape s = config.layer_shape(n.layer);
    switch (n.cls) {
        case NeuronClass::FfnChannel:
            if (n.head || n.index >= s.d_ff) fail();
            break;
        case NeuronClass::AttnValueChannel:
            if (!n.head || *n.head >= s.n_heads() || n.index >= s.v_dims[*n.head]) fail();
            break;
        case NeuronClass::AttnHead:
            if (n.head || n.index >= s.n_heads()) fail();
            break;
        case NeuronClass::LayerUnit:
            if (n.head || n.index != n.layer) fail();
            break;
    }
}

std::vector<SliceInstruction> coupled_slices(const NeuronId& n, const ModelConfig& config) {
    check_neuron(n, config);
    const std::size_t l = n.layer;
    const LayerShape s = config.layer_shape(l);
    const std::size_t hd = config.head_dim;
    std::vector<SliceInstruction> out;
    auto value_channel = [&](std::size_t h, std::size_t j) {
        const std::size_t col = s.v_offset(h) + j;
        out.push_back({names::wv(l), 0, col});
        out.push_back({names::wo(l), 1, col});
    };
    switch (n.cls) {
        case NeuronClass::FfnChannel:
            out.push_back({names::up(l), 0, n.index});
            out.push_back({names::gate(l), 0, n.index});
            out.push_back({names::down(l), 1, n.index});
            break;
        case NeuronClass::AttnValueChannel:
            value_channel(*n.head, n.index);
            break;
        case NeuronClass::AttnHead:
            for (std::size_t j = 0; j < s.v_dims[n.index]; ++j) value_channel(n.index, j);
            for (std::size_t r = 0; r < hd; ++r) {
                out.push_back({names::wq(l), 0, n.index * hd + r});
                out.push_back({names::wk(l), 0, n.index * hd + r});
            }
            break;
        case NeuronClass::LayerUnit: {
            const auto shapes = config.expected_shapes();
            for (const auto& name : {names::wq(l), names::wk(l), names::wv(l), names::wo(l), names::up(l),
                                     names::gate(l), names::down(l), names::norm1(l), names::norm2(l)}) {
                for (std::size_t r = 0; r < shapes.at(name)[0]; ++r) out.push_back({name, 0, r});
            }
            break;
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::uint64_t parameter_weight(const NeuronId& n, const ModelConfig& config) {
    check_neuron(n, config);
    const std::uint64_t d = config.d_model;
    const LayerShape s = config.layer_shape(n.layer);
    switch (n.cls) {
        case NeuronClass::FfnChannel: return 3 * d;
        case NeuronClass::AttnValueChannel: return 2 * d;
        case NeuronClass::AttnHead: return 2 * config.head_dim * d + 2 * s.v_dims[n.index] * d;
        case NeuronClass::LayerUnit:
            return 2 * s.n_heads() * config.head_dim * d + 2 * s.v_total() * d + 3 * s.d_ff * d + 2 * d;
    }
    return 0;
}

}  // namespace cusprune
