#include "latshield/facegen.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "latshield/image_io.hpp"
#include "latshield/nets.hpp"
#include "latshield/schedule.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace latshield {

namespace {

struct Bounds { double lo, hi; };
constexpr Bounds kFaceWidth{9.0, 13.0};
constexpr Bounds kFaceHeight{11.0, 15.0};
constexpr Bounds kEyeSpacing{3.5, 6.5};
constexpr Bounds kEyeSize{1.0, 2.2};
constexpr Bounds kNoseLength{3.0, 6.0};
constexpr Bounds kMouthWidth{3.0, 6.0};
constexpr Bounds kMouthCurve{-0.3, 0.3};
constexpr Bounds kBaseIntensity{0.55, 0.85};
constexpr Bounds kRotation{-15.0, 15.0};
constexpr Bounds kTranslate{-2.0, 2.0};
constexpr Bounds kExpression{-0.3, 0.3};
constexpr Bounds kBrightness{-0.1, 0.1};
constexpr Bounds kBackground{0.0, 0.2};
constexpr Bounds kNoiseSigma{0.0, 0.02};

double draw(Rng& rng, const Bounds& b) { return rng.uniform(b.lo, b.hi); }

uint64_t hash_double(uint64_t h, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    return mix_seed(h, bits);
}

uint64_t noise_seed(const IdentityParams& id, const AttributeParams& at) {
    uint64_t h = mix_seed(0x4661636547656eULL, static_cast<uint64_t>(id.identity_id));
    for (double v : {id.face_width, id.face_height, id.eye_spacing, id.eye_size, id.nose_length,
                     id.mouth_width, id.mouth_curve, id.base_intensity, at.rotation_deg,
                     at.translate_x, at.translate_y, at.expression_offset, at.brightness,
                     at.background_level, at.noise_sigma})
        h = hash_double(h, v);
    return h;
}

} // namespace

IdentityParams sample_identity(Rng& rng, int identity_id) {
    IdentityParams p;
    p.identity_id = identity_id;
    p.face_width = draw(rng, kFaceWidth);
    p.face_height = draw(rng, kFaceHeight);
    p.eye_spacing = draw(rng, kEyeSpacing);
    p.eye_size = draw(rng, kEyeSize);
    p.nose_length = draw(rng, kNoseLength);
    p.mouth_width = draw(rng, kMouthWidth);
    p.mouth_curve = draw(rng, kMouthCurve);
    p.base_intensity = draw(rng, kBaseIntensity);
    return p;
}

AttributeParams sample_attributes(Rng& rng) {
    AttributeParams a;
    a.rotation_deg = draw(rng, kRotation);
    a.translate_x = draw(rng, kTranslate);
    a.translate_y = draw(rng, kTranslate);
    a.expression_offset = draw(rng, kExpression);
    a.brightness = draw(rng, kBrightness);
    a.background_level = draw(rng, kBackground);
    a.noise_sigma = draw(rng, kNoiseSigma);
    return a;
}

Tensor render(const IdentityParams& id, const AttributeParams& attr) {
    constexpr int kSide = 32;
    constexpr int kSS = 4; // 4x supersampling, box downsample
    const double cx = kSide / 2.0 + attr.translate_x;
    const double cy = kSide / 2.0 + attr.translate_y;
    const double theta = attr.rotation_deg * M_PI / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double eye_y = -0.35 * id.face_height;
    const double mouth_y = 0.45 * id.face_height;
    const double curve = (id.mouth_curve + attr.expression_offset) * 0.08;

    std::vector<double> hi(kSide * kSS * kSide * kSS);
    for (int iy = 0; iy < kSide * kSS; ++iy) {
        for (int ix = 0; ix < kSide * kSS; ++ix) {
            const double u = (ix + 0.5) / kSS;
            const double v = (iy + 0.5) / kSS;
            // rotate into the face frame (x right, y down)
            const double px = u - cx, py = v - cy;
            const double qx = ct * px + st * py;
            const double qy = -st * px + ct * py;

            double val = attr.background_level;
            const double ex = qx / id.face_width, ey = qy / id.face_height;
            if (ex * ex + ey * ey <= 1.0) {
                val = id.base_intensity;
                // eyes
                const double dxl = qx + id.eye_spacing, dxr = qx - id.eye_spacing;
                const double dy = qy - eye_y;
                if (dxl * dxl + dy * dy <= id.eye_size * id.eye_size ||
                    dxr * dxr + dy * dy <= id.eye_size * id.eye_size)
                    val = 0.15;
                // nose: vertical bar from just below eye line
                else if (std::abs(qx) <= 0.55 && qy >= -1.0 && qy <= -1.0 + id.nose_length)
                    val = 0.35;
                // mouth: quadratic curve band
                else if (std::abs(qx) <= id.mouth_width &&
                         std::abs(qy - (mouth_y + curve * qx * qx)) <= 0.7)
                    val = 0.2;
            }
            hi[iy * kSide * kSS + ix] = val;
        }
    }

    Rng noise(noise_seed(id, attr));
    std::vector<double> out(kSide * kSide);
    for (int y = 0; y < kSide; ++y) {
        for (int x = 0; x < kSide; ++x) {
            double acc = 0.0;
            for (int sy = 0; sy < kSS; ++sy)
                for (int sx = 0; sx < kSS; ++sx)
                    acc += hi[(y * kSS + sy) * kSide * kSS + x * kSS + sx];
            double val = acc / (kSS * kSS) + attr.brightness;
            if (attr.noise_sigma > 0.0) val += attr.noise_sigma * noise.gaussian();
            out[y * kSide + x] = std::min(1.0, std::max(0.0, val));
        }
    }
    return Tensor({kSide, kSide}, std::move(out), Dtype::f32);
}

std::vector<int> Dataset::train_indices() const {
    std::vector<int> out;
    for (size_t i = 0; i < images.size(); ++i)
        if (!is_eval[i]) out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> Dataset::eval_indices() const {
    std::vector<int> out;
    for (size_t i = 0; i < images.size(); ++i)
        if (is_eval[i]) out.push_back(static_cast<int>(i));
    return out;
}

Dataset make_dataset(int n_identities, int samples_per_identity, uint64_t master_seed,
                     const std::string& dir) {
    if (n_identities < 2) throw ConfigError("dataset: need at least 2 identities");
    if (samples_per_identity < 1) throw ConfigError("dataset: need at least 1 sample/identity");
    Dataset ds;
    ds.master_seed = master_seed;
    ds.n_identities = n_identities;
    ds.samples_per_identity = samples_per_identity;

    fs::create_directories(fs::path(dir) / "images");
    const int n_eval = std::max(1, static_cast<int>(std::lround(0.1 * samples_per_identity)));

    CsvWriter labels((fs::path(dir) / "labels.csv").string(), {"filename", "identity_id"});
    for (int i = 0; i < n_identities; ++i) {
        Rng id_rng = Rng(master_seed).child(0x1D00 + i);
        IdentityParams idp = sample_identity(id_rng, i);
        // eval picks: last n_eval of a seeded shuffle of sample indices
        std::vector<int> order(samples_per_identity);
        for (int s = 0; s < samples_per_identity; ++s) order[s] = s;
        Rng split_rng = id_rng.child(0x5917);
        for (int s = samples_per_identity - 1; s > 0; --s)
            std::swap(order[s], order[split_rng.uniform_int(0, s)]);
        std::vector<bool> eval_flag(samples_per_identity, false);
        for (int e = 0; e < n_eval; ++e) eval_flag[order[samples_per_identity - 1 - e]] = true;

        for (int s = 0; s < samples_per_identity; ++s) {
            Rng attr_rng = id_rng.child(0xA000 + s);
            AttributeParams attr = sample_attributes(attr_rng);
            Tensor img = render(idp, attr);
            char name[32];
            std::snprintf(name, sizeof(name), "%04d_%03d.pgm", i, s);
            write_pgm((fs::path(dir) / "images" / name).string(), img);
            labels.row({std::string("images/") + name, std::to_string(i)});
            ds.images.push_back(img);
            ds.labels.push_back(i);
            ds.files.push_back(std::string("images/") + name);
            ds.is_eval.push_back(eval_flag[s]);
        }
    }

    json meta;
    meta["seed"] = master_seed;
    meta["n_identities"] = n_identities;
    meta["samples_per_identity"] = samples_per_identity;
    meta["eval_per_identity"] = n_eval;
    meta["bounds"] = {
        {"face_width", {kFaceWidth.lo, kFaceWidth.hi}},
        {"face_height", {kFaceHeight.lo, kFaceHeight.hi}},
        {"eye_spacing", {kEyeSpacing.lo, kEyeSpacing.hi}},
        {"eye_size", {kEyeSize.lo, kEyeSize.hi}},
        {"nose_length", {kNoseLength.lo, kNoseLength.hi}},
        {"mouth_width", {kMouthWidth.lo, kMouthWidth.hi}},
        {"mouth_curve", {kMouthCurve.lo, kMouthCurve.hi}},
        {"base_intensity", {kBaseIntensity.lo, kBaseIntensity.hi}},
        {"rotation_deg", {kRotation.lo, kRotation.hi}},
        {"translate", {kTranslate.lo, kTranslate.hi}},
        {"expression_offset", {kExpression.lo, kExpression.hi}},
        {"brightness", {kBrightness.lo, kBrightness.hi}},
        {"background_level", {kBackground.lo, kBackground.hi}},
        {"noise_sigma", {kNoiseSigma.lo, kNoiseSigma.hi}},
    };
    json eval_files = json::array();
    for (size_t i = 0; i < ds.files.size(); ++i)
        if (ds.is_eval[i]) eval_files.push_back(ds.files[i]);
    meta["eval_files"] = eval_files;
    std::ofstream mf(fs::path(dir) / "meta.json", std::ios::trunc);
    if (!mf) throw IoError("dataset: cannot write " + dir + "/meta.json");
    mf << meta.dump(2) << "\n";
    return ds;
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "meta.json");
    if (!mf) throw IoError("dataset: missing " + dir + "/meta.json");
    json meta;
    mf >> meta;
    Dataset ds;
    ds.master_seed = meta["seed"].get<uint64_t>();
    ds.n_identities = meta["n_identities"].get<int>();
    ds.samples_per_identity = meta["samples_per_identity"].get<int>();
    std::set<std::string> eval_files;
    for (const auto& f : meta["eval_files"]) eval_files.insert(f.get<std::string>());

    auto rows = read_csv((fs::path(dir) / "labels.csv").string());
    for (size_t i = 1; i < rows.size(); ++i) { // skip header
        const std::string& file = rows[i][0];
        ds.images.push_back(read_pgm((fs::path(dir) / file).string()));
        ds.labels.push_back(std::stoi(rows[i][1]));
        ds.files.push_back(file);
        ds.is_eval.push_back(eval_files.count(file) > 0);
    }
    return ds;
}

} // namespace latshield
