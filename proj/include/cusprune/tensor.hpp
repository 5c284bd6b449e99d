#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace cusprune {

// Row-major f32 tensor with an explicit shape. Rank 1 and 2 are the only
// ranks the model uses, but the container does not assume that.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<float> data);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }

    // Row view for rank-2 tensors.
    std::span<const float> row(std::size_t r) const;
    std::span<float> row(std::size_t r);

    float& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    float at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    bool all_finite() const;

    // Keeps only the listed indices along `axis` (0 = rows, 1 = columns),
    // in the given order.
    Tensor gather(std::size_t axis, std::span<const std::size_t> keep) const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

  private:
    std::vector<std::size_t> shape_;
    std::vector<float> data_;
};

// Canonical tensor name -> tensor. std::map keeps serialization order stable.
using WeightStore = std::map<std::string, Tensor>;

std::uint64_t parameter_count(const WeightStore& weights);

namespace names {
std::string wq(std::size_t layer);
std::string wk(std::size_t layer);
std::string wv(std::size_t layer);
std::string wo(std::size_t layer);
std::string up(std::size_t layer);
std::string gate(std::size_t layer);
std::string down(std::size_t layer);
std::string norm1(std::size_t layer);
std::string norm2(std::size_t layer);
inline constexpr const char* kEmbed = "embed";
inline constexpr const char* kFinalNorm = "final_norm";
inline constexpr const char* kUnembed = "unembed";
}  // namespace names

}  // namespace cusprune
