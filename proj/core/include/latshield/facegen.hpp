#pragma once

#include <string>
#include <vector>

#include "latshield/rng.hpp"
#include "latshield/tensor.hpp"

namespace latshield {

/// Per-identity geometry, drawn once per identity.
struct IdentityParams {
    int identity_id = 0;
    double face_width = 11;    // ellipse semi-axis x, px
    double face_height = 13;   // ellipse semi-axis y, px
    double eye_spacing = 5;    // half distance between eye centers, px
    double eye_size = 1.6;     // eye radius, px
    double nose_length = 4.5;  // px
    double mouth_width = 4.5;  // half width, px
    double mouth_curve = 0;    // curvature factor
    double base_intensity = 0.7;
};

/// Per-sample nuisance parameters.
struct AttributeParams {
    double rotation_deg = 0;      // [-15, 15]
    double translate_x = 0;       // [-2, 2] px
    double translate_y = 0;       // [-2, 2] px
    double expression_offset = 0; // [-0.3, 0.3], added to mouth_curve
    double brightness = 0;        // [-0.1, 0.1]
    double background_level = 0;  // [0, 0.2]
    double noise_sigma = 0;       // [0, 0.02]
};

IdentityParams sample_identity(Rng& rng, int identity_id);
AttributeParams sample_attributes(Rng& rng);

/// Deterministic anti-aliased 32x32 grayscale render in [0,1]. Pixel noise is
/// seeded from a hash of both parameter records.
Tensor render(const IdentityParams& id, const AttributeParams& attr);

struct Dataset {
    std::vector<Tensor> images;      // [32,32] each
    std::vector<int> labels;         // identity_id per image
    std::vector<std::string> files;  // relative file names
    std::vector<bool> is_eval;       // identity-stratified 90/10 split
    uint64_t master_seed = 0;
    int n_identities = 0;
    int samples_per_identity = 0;

    std::vector<int> train_indices() const;
    std::vector<int> eval_indices() const;
};

/// Generates and persists the dataset (images/, labels.csv, meta.json).
Dataset make_dataset(int n_identities, int samples_per_identity, uint64_t master_seed,
                     const std::string& dir);

Dataset load_dataset(const std::string& dir);

} // namespace latshield
