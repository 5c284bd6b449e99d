#include "cusprune/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "cusprune/error.hpp"

namespace cusprune {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)), data_(element_count(shape_), 0.0f) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
        throw ValidationError("tensor payload size does not match shape");
    }
}

std::span<const float> Tensor::row(std::size_t r) const {
    return {data_.data() + r * shape_[1], shape_[1]};
}

std::span<float> Tensor::row(std::size_t r) {
    return {data_.data() + r * shape_[1], shape_[1]};
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

Tensor Tensor::gather(std::size_t axis, std::span<const std::size_t> keep) const {
    if (rank() == 1) {
        if (axis != 0) throw ValidationError("axis out of range for rank-1 tensor");
        std::vector<float> out;
        out.reserve(keep.size());
        for (std::size_t i : keep) out.push_back(data_.at(i));
        return Tensor({keep.size()}, std::move(out));
    }
    if (rank() != 2 || axis > 1) throw ValidationError("gather supports rank-1 and rank-2 tensors");
    const std::size_t rows = shape_[0];
    const std::size_t cols = shape_[1];
    if (axis == 0) {
        std::vector<float> out;
        out.reserve(keep.size() * cols);
        for (std::size_t r : keep) {
            if (r >= rows) throw ValidationError("row index out of range");
            auto src = row(r);
            out.insert(out.end(), src.begin(), src.end());
        }
        return Tensor({keep.size(), cols}, std::move(out));
    }
    std::vector<float> out;
    out.reserve(rows * keep.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c : keep) {
            if (c >= cols) throw ValidationError("column index out of range");
            out.push_back(data_[r * cols + c]);
        }
    }
    return Tensor({rows, keep.size()}, std::move(out));
}

std::uint64_t parameter_count(const WeightStore& weights) {
    std::uint64_t total = 0;
    for (const auto& [name, tensor] : weights) total += tensor.size();
    return total;
}

namespace names {

namespace {
std::string layer_name(std::size_t layer, const char* suffix) {
    return "layer." + std::to_string(layer) + "." + suffix;
}
}  // namespace

std::string wq(std::size_t layer) { return layer_name(layer, "attn.wq"); }
std::string wk(std::size_t layer) { return layer_name(layer, "attn.wk"); }
std::string wv(std::size_t layer) { return layer_name(layer, "attn.wv"); }
std::string wo(std::size_t layer) { return layer_name(layer, "attn.wo"); }
std::string up(std::size_t layer) { return layer_name(layer, "ffn.up"); }
std::string gate(std::size_t layer) { return layer_name(layer, "ffn.gate"); }
std::string down(std::size_t layer) { return layer_name(layer, "ffn.down"); }
std::string norm1(std::size_t layer) { return layer_name(layer, "norm1"); }
std::string norm2(std::size_t layer) { return layer_name(layer, "norm2"); }

}  // namespace names

}  // namespace cusprune
