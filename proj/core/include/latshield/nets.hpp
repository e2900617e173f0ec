#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "latshield/schedule.hpp"
#include "latshield/tensor.hpp"

namespace latshield {

struct IoError : std::runtime_error { using std::runtime_error::runtime_error; };

constexpr int kImageSide = 32;
constexpr int kImageDim = kImageSide * kImageSide; // 1024
constexpr int kLatentDim = 32;
constexpr int kEmbedDim = 16;
constexpr int kCondDim = 16;
constexpr int kTimeEmbedDim = 16;
constexpr int kHiddenAe = 256;
constexpr int kHiddenDenoiser = 256;

struct Dense {
    Tensor w; // [in, out]
    Tensor b; // [out]
};

/// All trainable parameters: latent autoencoder, conditional denoiser,
/// identity backbone, identity-condition head, and the learned null token.
struct ModelBundle {
    Dense enc1, enc2;                  // 1024 -> 256 -> 32
    Dense dec1, dec2;                  // 32 -> 256 -> 1024
    Dense den1, den2, den3, den4, den5; // 64 -> 256 x4 -> 32
    Dense id1, id2, id3;               // 1024 -> 128 -> 64 -> 16
    Dense head;                        // 16 -> 16
    Tensor null_token;                 // [16]
    Tensor id_class_weights;           // [16, n_ids] column-wise class vectors, present after id training
    uint64_t arch_seed = 0;
    std::set<std::string> trained_stages; // subset of {"ae","id","diff"}

    bool trained(const std::string& stage) const { return trained_stages.count(stage) > 0; }
    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<std::pair<std::string, const Tensor*>> named_params() const;
};

/// Glorot-uniform initialization from arch_seed.
ModelBundle init_bundle(uint64_t arch_seed);

/// Sinusoidal embedding of t / t_train at geometrically spaced frequencies.
Tensor time_embedding(int t, int t_train, Dtype dt = Dtype::f32);
Tensor time_embedding_batch(const std::vector<int>& ts, int t_train, Dtype dt = Dtype::f32);

// Forward passes. Images enter as [B, 1024] (a [32, 32] tensor is accepted
// and treated as a single image); latents are [B, 32].
Tensor encode(const ModelBundle& m, const Tensor& image);
Tensor decode(const ModelBundle& m, const Tensor& latent); // unclamped
Tensor denoise(const ModelBundle& m, const Tensor& z_t, const Tensor& temb, const Tensor& c);
Tensor denoise_at(const ModelBundle& m, const Tensor& z_t, int t, int t_train, const Tensor& c);
Tensor embed_identity(const ModelBundle& m, const Tensor& image); // unit rows
Tensor condition_from_image(const ModelBundle& m, const Tensor& image);

/// Denoiser closure over a bundle; nullopt condition uses the null token.
DenoiserFn make_denoiser(const ModelBundle& m, int t_train, Dtype dt = Dtype::f32);

Tensor linear(const Tensor& x, const Dense& d);
Tensor as_batch(const Tensor& image); // [32,32] -> [1,1024], [B,D] passthrough

// Checkpoint format: a directory holding manifest.json and weights.bin
// (little-endian raw values, f32 as 4 bytes, f64 as 8, in manifest order).
void save_tensors(const std::string& dir,
                  const std::vector<std::pair<std::string, Tensor>>& tensors,
                  const std::map<std::string, std::string>& extra_meta = {});
std::vector<std::pair<std::string, Tensor>> load_tensors(
    const std::string& dir, std::map<std::string, std::string>* extra_meta = nullptr);

void save_bundle(const ModelBundle& m, const std::string& dir);
ModelBundle load_bundle(const std::string& dir);

} // namespace latshield
