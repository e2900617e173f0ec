#pragma once

#include <string>

#include "latshield/nets.hpp"
#include "latshield/schedule.hpp"

namespace latshield {

struct SwapConfig {
    double w = 2.0; // guidance scale during swapping
    int k_swap = 15; // SDEdit depth, 1 <= k_swap <= T_inf (0 allowed: plain round trip)
    uint64_t seed = 0;
};

/// Face swap: SDEdit on the target's latent guided by the source's identity
/// condition. Deterministic per seed.
Tensor face_swap(const ModelBundle& m, const Tensor& source, const Tensor& target,
                 const SwapConfig& cfg, const NoiseSchedule& sched);

enum class DefenseKind { none, blur, jpeg, purify };

struct DefenseSpec {
    DefenseKind kind = DefenseKind::none;
    double sigma = 1.0;  // blur
    int quality = 75;    // jpeg
    int k_purify = 3;    // purify
    uint64_t seed = 0;   // purify

    std::string label() const;
    void validate() const;
};

/// Separable Gaussian blur, kernel radius ceil(3*sigma), renormalized,
/// reflect padding. sigma = 0 is the identity.
Tensor defend_blur(const Tensor& image, double sigma);

/// Grayscale JPEG proxy: 8x8 orthonormal DCT-II, standard luminance
/// quantization scaled by quality, round, dequantize, inverse DCT, clamp.
Tensor defend_jpeg(const Tensor& image, int quality);

/// Unconditional diffusion purification: decode(sdedit(encode(x), K, c = null)).
Tensor purify(const ModelBundle& m, const Tensor& image, int k_purify,
              const NoiseSchedule& sched, uint64_t seed);

Tensor apply_defense(const ModelBundle& m, const Tensor& image, const DefenseSpec& spec,
                     const NoiseSchedule& sched);

/// Quality scale factor: (q < 50 ? 5000/q : 200 - 2q) / 100.
double jpeg_scale_factor(int quality);

} // namespace latshield
