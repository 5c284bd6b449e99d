#pragma once

#include <filesystem>
#include <string>

#include "cusprune/model_config.hpp"
#include "cusprune/tensor.hpp"
#include "cusprune/vocab.hpp"

namespace cusprune {

struct Bundle {
    ModelConfig config;
    WeightStore weights;
    Vocab vocab;
    // Hex SHA-256 of the tensors.bin bytes.
    std::string fingerprint;
};

// tensors.bin codec. Tensors are written in name order.
std::string encode_tensors(const WeightStore& weights);
WeightStore decode_tensors(std::string_view bytes);

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(std::string_view text);

std::string sha256_hex(std::string_view bytes);
std::string fingerprint_of(const WeightStore& weights);

// In-memory bundle with its fingerprint computed.
Bundle make_bundle(ModelConfig config, WeightStore weights, Vocab vocab);

Bundle load_bundle(const std::filesystem::path& dir);

// Writes into a sibling temporary directory and renames it into place, so a
// failed save never leaves a partial bundle at `dir`.
void save_bundle(const ModelConfig& config, const WeightStore& weights, const Vocab& vocab,
                 const std::filesystem::path& dir);

// Writes `contents` to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace cusprune
