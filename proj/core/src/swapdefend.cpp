#include "latshield/swapdefend.hpp"

#include <algorithm>
#include <cmath>

namespace latshield {

Tensor face_swap(const ModelBundle& m, const Tensor& source, const Tensor& target,
                 const SwapConfig& cfg, const NoiseSchedule& sched) {
    if (!m.trained("ae") || !m.trained("id") || !m.trained("diff"))
        throw ValueError("face_swap: bundle missing trained stages (need ae, id, diff)");
    if (cfg.k_swap < 0 || cfg.k_swap > static_cast<int>(sched.inference_steps.size()))
        throw ConfigError("face_swap: k_swap out of range");
    Tensor z_tgt = encode(m, as_batch(target)).constant();
    Tensor c = condition_from_image(m, as_batch(source)).constant();
    GuidanceParams g;
    g.w = cfg.w;
    Rng rng(mix_seed(cfg.seed, 0x53A9));
    DenoiserFn den = make_denoiser(m, sched.t_train);
    Tensor z = sdedit(den, z_tgt, cfg.k_swap, c, g, sched, rng);
    return reshape(clamp(decode(m, z), 0.0, 1.0), {kImageSide, kImageSide});
}

std::string DefenseSpec::label() const {
    switch (kind) {
        case DefenseKind::none: return "none";
        case DefenseKind::blur: return "blur";
        case DefenseKind::jpeg: return "jpeg";
        case DefenseKind::purify: return "purify";
    }
    return "none";
}

void DefenseSpec::validate() const {
    if (kind == DefenseKind::blur && sigma < 0) throw ConfigError("defense: blur sigma must be >= 0");
    if (kind == DefenseKind::jpeg && (quality < 1 || quality > 100))
        throw ConfigError("defense: jpeg quality must be in [1,100]");
    if (kind == DefenseKind::purify && k_purify < 0)
        throw ConfigError("defense: purify depth must be >= 0");
}

Tensor defend_blur(const Tensor& image, double sigma) {
    if (image.shape().size() != 2)
        throw ShapeError("defend_blur: expected 2-D image, got " + image.shape_str());
    if (sigma < 0) throw ConfigError("defend_blur: sigma must be >= 0");
    if (sigma == 0.0) return image.clone();
    const int h = image.shape()[0], w = image.shape()[1];
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * r + 1);
    double ksum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[i + r] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        ksum += k[i + r];
    }
    for (double& v : k) v /= ksum;

    auto reflect = [](int i, int n) {
        // reflect without repeating the edge sample: -1 -> 1, n -> n-2
        if (n == 1) return 0;
        while (i < 0 || i >= n) {
            if (i < 0) i = -i;
            if (i >= n) i = 2 * n - 2 - i;
        }
        return i;
    };

    const auto& src = image.data();
    std::vector<double> tmp(static_cast<size_t>(h) * w), out(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) acc += k[i + r] * src[y * w + reflect(x + i, w)];
            tmp[y * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[reflect(y + i, h) * w + x];
            out[y * w + x] = std::min(1.0, std::max(0.0, acc));
        }
    return Tensor({h, w}, std::move(out), image.dtype());
}

double jpeg_scale_factor(int quality) {
    return (quality < 50 ? 5000.0 / quality : 200.0 - 2.0 * quality) / 100.0;
}

namespace {

// ITU T.81 Annex K.1 luminance quantization table, row-major.
constexpr int kLumaQ[64] = {
    16, 11, 10, 16, 24,  40,  51,  61,  //
    12, 12, 14, 19, 26,  58,  60,  55,  //
    14, 13, 16, 24, 40,  57,  69,  56,  //
    14, 17, 22, 29, 51,  87,  80,  62,  //
    18, 22, 37, 56, 68,  109, 103, 77,  //
    24, 35, 55, 64, 81,  104, 113, 92,  //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99};

// Orthonormal 8-point DCT-II basis: C[k][n] = s_k * cos((2n+1) k pi / 16).
struct DctBasis {
    double c[8][8];
    DctBasis() {
        for (int k = 0; k < 8; ++k) {
            const double s = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
            for (int n = 0; n < 8; ++n) c[k][n] = s * std::cos((2 * n + 1) * k * M_PI / 16.0);
        }
    }
};

} // namespace

Tensor defend_jpeg(const Tensor& image, int quality) {
    if (image.shape().size() != 2)
        throw ShapeError("defend_jpeg: expected 2-D image, got " + image.shape_str());
    if (quality < 1 || quality > 100) throw ConfigError("defend_jpeg: quality must be in [1,100]");
    static const DctBasis dct;
    const double scale = jpeg_scale_factor(quality);
    double q[64];
    for (int i = 0; i < 64; ++i) q[i] = std::max(1.0, std::round(kLumaQ[i] * scale));

    const int h = image.shape()[0], w = image.shape()[1];
    const int hb = (h + 7) / 8 * 8, wb = (w + 7) / 8 * 8;
    // pad to block multiples by edge replication, values shifted to [-128, 127]
    std::vector<double> pix(static_cast<size_t>(hb) * wb);
    for (int y = 0; y < hb; ++y)
        for (int x = 0; x < wb; ++x)
            pix[y * wb + x] = image.at(std::min(y, h - 1) * w + std::min(x, w - 1)) * 255.0 - 128.0;

    std::vector<double> out(static_cast<size_t>(h) * w);
    double blk[64], coef[64];
    for (int by = 0; by < hb; by += 8) {
        for (int bx = 0; bx < wb; bx += 8) {
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) blk[y * 8 + x] = pix[(by + y) * wb + bx + x];
            // 2-D DCT, quantize, dequantize
            for (int u = 0; u < 8; ++u)
                for (int v = 0; v < 8; ++v) {
                    double acc = 0.0;
                    for (int y = 0; y < 8; ++y)
                        for (int x = 0; x < 8; ++x)
                            acc += dct.c[u][y] * dct.c[v][x] * blk[y * 8 + x];
                    coef[u * 8 + v] = std::round(acc / q[u * 8 + v]) * q[u * 8 + v];
                }
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    double acc = 0.0;
                    for (int u = 0; u < 8; ++u)
                        for (int v = 0; v < 8; ++v)
                            acc += dct.c[u][y] * dct.c[v][x] * coef[u * 8 + v];
                    const int gy = by + y, gx = bx + x;
                    if (gy < h && gx < w) {
                        const double val = (acc + 128.0) / 255.0;
                        out[gy * w + gx] = std::min(1.0, std::max(0.0, val));
                    }
                }
        }
    }
    return Tensor({h, w}, std::move(out), image.dtype());
}

Tensor purify(const ModelBundle& m, const Tensor& image, int k_purify,
              const NoiseSchedule& sched, uint64_t seed) {
    if (!m.trained("ae") || !m.trained("diff"))
        throw ValueError("purify: bundle missing trained stages (need ae, diff)");
    Tensor z = encode(m, as_batch(image)).constant();
    GuidanceParams g; // w = 0: unconditional
    Rng rng(mix_seed(seed, 0x9F12));
    DenoiserFn den = make_denoiser(m, sched.t_train);
    Tensor out = sdedit(den, z, k_purify, std::nullopt, g, sched, rng);
    return reshape(clamp(decode(m, out), 0.0, 1.0), {kImageSide, kImageSide});
}

Tensor apply_defense(const ModelBundle& m, const Tensor& image, const DefenseSpec& spec,
                     const NoiseSchedule& sched) {
    spec.validate();
    switch (spec.kind) {
        case DefenseKind::none: return image.clone();
        case DefenseKind::blur: return defend_blur(image, spec.sigma);
        case DefenseKind::jpeg: return defend_jpeg(image, spec.quality);
        case DefenseKind::purify: return purify(m, image, spec.k_purify, sched, spec.seed);
    }
    return image.clone();
}

} // namespace latshield
