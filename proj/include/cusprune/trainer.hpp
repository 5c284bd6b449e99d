#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cusprune/model_config.hpp"
#include "cusprune/tensor.hpp"
#include "cusprune/vocab.hpp"

namespace cusprune {

// Double-precision parameters keyed by canonical tensor name, same layouts
// as WeightStore. Only uniform (override-free) configs are trainable.
using ParamStore = std::map<std::string, std::vector<double>>;

ParamStore to_params(const WeightStore& weights);
WeightStore to_weights(const ModelConfig& config, const ParamStore& params);

// Mean next-token cross-entropy over every predicted position of the batch;
// gradients are accumulated into `grads` (same keys as params, zero-filled by caller).
double loss_and_grad(const ModelConfig& config, const ParamStore& params,
                     const std::vector<std::vector<TokenId>>& batch, ParamStore& grads);

struct TrainOptions {
    std::size_t steps = 300;
    std::size_t batch_size = 8;
    std::size_t window = 32;  // tokens per training sequence
    double learning_rate = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    std::uint64_t seed = 1;
};

struct TrainResult {
    WeightStore weights;
    double first_loss = 0.0;
    double final_loss = 0.0;  // mean over the last 10% of steps
};

// Adam on random windows drawn from `corpus`.
TrainResult train_toy(const ModelConfig& config, const WeightStore& init,
                      const std::vector<std::vector<TokenId>>& corpus, const TrainOptions& options);

}  // namespace cusprune
