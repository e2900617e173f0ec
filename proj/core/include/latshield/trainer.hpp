#pragma once

#include <string>
#include <tuple>
#include <vector>

#include "latshield/facegen.hpp"
#include "latshield/nets.hpp"
#include "latshield/schedule.hpp"

namespace latshield {

struct TrainConfig {
    int epochs = 1;
    int batch_size = 64;
    double lr = 1e-3;
    double dropout_p = 0.1;    // diff stage: condition dropout probability
    double margin_scale = 10;  // id stage: cosine logit scale s
    uint64_t seed = 0;
};

struct TrainReport {
    std::vector<std::tuple<int, int, double>> trace; // (epoch, step, loss)
    std::vector<double> epoch_loss;                  // mean loss per epoch
    double initial_epoch_loss = 0.0;
    double final_epoch_loss = 0.0;
    double final_metric = 0.0;        // ae: full-train MSE; id: held-out accuracy; diff: final loss
    double dropout_fraction = 0.0;    // diff stage: measured null-token rate
};

/// Plain-SGD reconstruction training of the autoencoder (pixel MSE).
TrainReport train_autoencoder(const Dataset& ds, ModelBundle& m, const TrainConfig& cfg);

/// Cosine-classifier training of the identity backbone; class vectors are
/// learned and row-normalized inside the forward pass.
TrainReport train_identity(const Dataset& ds, ModelBundle& m, const TrainConfig& cfg);

/// Conditional denoiser training with condition dropout; AE and identity
/// backbone are frozen, the condition head and null token co-train.
TrainReport train_diffusion(const Dataset& ds, ModelBundle& m, const TrainConfig& cfg,
                            const NoiseSchedule& sched);

void write_trace_csv(const TrainReport& r, const std::string& path);

} // namespace latshield
