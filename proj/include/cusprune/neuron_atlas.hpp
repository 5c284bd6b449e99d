#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "cusprune/model_config.hpp"

namespace cusprune {

// Declaration order is the canonical class order.
enum class NeuronClass : std::uint8_t { FfnChannel = 0, AttnValueChannel = 1, AttnHead = 2, LayerUnit = 3 };

std::string_view class_token(NeuronClass cls);

// A prunable structural unit. `head` is set only for AttnValueChannel.
// AttnHead uses index = head number; LayerUnit uses index = layer.
struct NeuronId {
    std::size_t layer = 0;
    NeuronClass cls = NeuronClass::FfnChannel;
    std::optional<std::size_t> head;
    std::size_t index = 0;

    static NeuronId ffn(std::size_t layer, std::size_t i) { return {layer, NeuronClass::FfnChannel, {}, i}; }
    static NeuronId value(std::size_t layer, std::size_t h, std::size_t j) {
        return {layer, NeuronClass::AttnValueChannel, h, j};
    }
    static NeuronId attn_head(std::size_t layer, std::size_t h) { return {layer, NeuronClass::AttnHead, {}, h}; }
    static NeuronId layer_unit(std::size_t layer) { return {layer, NeuronClass::LayerUnit, {}, layer}; }

    // `L{layer}.{class}.{head?}.{index}`, e.g. `L0.ffn.3`, `L1.attn_v.1.2`.
    std::string str() const;
    static NeuronId parse(std::string_view text);

    friend auto operator<=>(const NeuronId& a, const NeuronId& b) {
        return std::tuple(a.layer, a.cls, a.head.value_or(0), a.index) <=>
               std::tuple(b.layer, b.cls, b.head.value_or(0), b.index);
    }
    friend bool operator==(const NeuronId&, const NeuronId&) = default;
};

struct SliceInstruction {
    std::string tensor;
    std::size_t axis = 0;  // 0 = row, 1 = column
    std::size_t index = 0;

    friend auto operator<=>(const SliceInstruction&, const SliceInstruction&) = default;
};

struct NeuronUniverse {
    std::vector<NeuronId> ids;                 // canonical order
    std::vector<std::uint64_t> param_weight;   // scalars deleted by removing ids[k]

    std::size_t size() const { return ids.size(); }
    // Positions of FfnChannel + AttnValueChannel ids: the default pruning pool.
    std::vector<std::size_t> pool() const;
    std::uint64_t prunable_parameters() const;
    // Position of `id` in `ids`, or nullopt.
    std::optional<std::size_t> position(const NeuronId& id) const;
};

bool in_default_pool(NeuronClass cls);

NeuronUniverse enumerate_neurons(const ModelConfig& config);

// Throws ValidationError if the neuron does not exist in `config`.
void check_neuron(const NeuronId& neuron, const ModelConfig& config);

std::vector<SliceInstruction> coupled_slices(const NeuronId& neuron, const ModelConfig& config);

std::uint64_t parameter_weight(const NeuronId& neuron, const ModelConfig& config);

}  // namespace cusprune
