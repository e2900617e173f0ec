#include "latshield/nets.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "latshield/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace latshield {

namespace {

constexpr char kWeightsMagic[8] = {'L', 'A', 'T', 'S', 'H', 'L', 'D', '1'};

Tensor glorot(Rng& rng, int fan_in, int fan_out, std::vector<int> shape) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    int n = 1;
    for (int e : shape) n *= e;
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-limit, limit);
    return Tensor(std::move(shape), std::move(v), Dtype::f32);
}

Dense make_dense(Rng& rng, int in, int out) {
    return Dense{glorot(rng, in, out, {in, out}), Tensor::zeros({out}, Dtype::f32)};
}

const char* dtype_name(Dtype dt) { return dt == Dtype::f32 ? "f32" : "f64"; }

Dtype dtype_from_name(const std::string& s) {
    if (s == "f32") return Dtype::f32;
    if (s == "f64") return Dtype::f64;
    throw IoError("checkpoint: unknown dtype '" + s + "'");
}

} // namespace

std::vector<std::pair<std::string, Tensor*>> ModelBundle::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out = {
        {"enc1.w", &enc1.w}, {"enc1.b", &enc1.b}, {"enc2.w", &enc2.w}, {"enc2.b", &enc2.b},
        {"dec1.w", &dec1.w}, {"dec1.b", &dec1.b}, {"dec2.w", &dec2.w}, {"dec2.b", &dec2.b},
        {"den1.w", &den1.w}, {"den1.b", &den1.b}, {"den2.w", &den2.w}, {"den2.b", &den2.b},
        {"den3.w", &den3.w}, {"den3.b", &den3.b}, {"den4.w", &den4.w}, {"den4.b", &den4.b},
        {"den5.w", &den5.w}, {"den5.b", &den5.b}, {"id1.w", &id1.w},   {"id1.b", &id1.b},
        {"id2.w", &id2.w},   {"id2.b", &id2.b},   {"id3.w", &id3.w},   {"id3.b", &id3.b},
        {"head.w", &head.w}, {"head.b", &head.b}, {"null_token", &null_token},
    };
    if (id_class_weights.defined()) out.emplace_back("id_class_weights", &id_class_weights);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelBundle::named_params() const {
    auto mut = const_cast<ModelBundle*>(this)->named_params();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [n, t] : mut) out.emplace_back(n, t);
    return out;
}

ModelBundle init_bundle(uint64_t arch_seed) {
    Rng rng(mix_seed(arch_seed, 0xa5c5));
    ModelBundle m;
    m.arch_seed = arch_seed;
    m.enc1 = make_dense(rng, kImageDim, kHiddenAe);
    m.enc2 = make_dense(rng, kHiddenAe, kLatentDim);
    m.dec1 = make_dense(rng, kLatentDim, kHiddenAe);
    m.dec2 = make_dense(rng, kHiddenAe, kImageDim);
    const int den_in = kLatentDim + kTimeEmbedDim + kCondDim;
    m.den1 = make_dense(rng, den_in, kHiddenDenoiser);
    m.den2 = make_dense(rng, kHiddenDenoiser, kHiddenDenoiser);
    m.den3 = make_dense(rng, kHiddenDenoiser, kHiddenDenoiser);
    m.den4 = make_dense(rng, kHiddenDenoiser, kHiddenDenoiser);
    m.den5 = make_dense(rng, kHiddenDenoiser, kLatentDim);
    m.id1 = make_dense(rng, kImageDim, 128);
    m.id2 = make_dense(rng, 128, 64);
    m.id3 = make_dense(rng, 64, kEmbedDim);
    m.head = make_dense(rng, kEmbedDim, kCondDim);
    m.null_token = glorot(rng, kCondDim, kCondDim, {kCondDim});
    return m;
}

Tensor time_embedding(int t, int t_train, Dtype dt) {
    return time_embedding_batch({t}, t_train, dt);
}

Tensor time_embedding_batch(const std::vector<int>& ts, int t_train, Dtype dt) {
    const int half = kTimeEmbedDim / 2;
    std::vector<double> v(ts.size() * kTimeEmbedDim);
    for (size_t i = 0; i < ts.size(); ++i) {
        const double x = static_cast<double>(ts[i]) / t_train;
        for (int k = 0; k < half; ++k) {
            const double freq = std::pow(1000.0, static_cast<double>(k) / (half - 1));
            v[i * kTimeEmbedDim + 2 * k] = std::sin(freq * x);
            v[i * kTimeEmbedDim + 2 * k + 1] = std::cos(freq * x);
        }
    }
    return Tensor({static_cast<int>(ts.size()), kTimeEmbedDim}, std::move(v), dt);
}

Tensor linear(const Tensor& x, const Dense& d) { return add(matmul(x, d.w), d.b); }

Tensor as_batch(const Tensor& image) {
    const auto& s = image.shape();
    if (s.size() == 2 && s[0] == kImageSide && s[1] == kImageSide)
        return reshape(image, {1, kImageDim});
    if (s.size() == 2) return image;
    if (s.size() == 1) return reshape(image, {1, s[0]});
    throw ShapeError("as_batch: unsupported shape " + image.shape_str());
}

namespace {
// Parameters follow the graph dtype of the input so f64 verification paths work.
Tensor cast_like(const Tensor& p, const Tensor& ref) {
    return p.dtype() == ref.dtype() ? p : p.astype(ref.dtype());
}
Tensor lin_cast(const Tensor& x, const Dense& d) {
    return add(matmul(x, cast_like(d.w, x)), cast_like(d.b, x));
}
} // namespace

Tensor encode(const ModelBundle& m, const Tensor& image) {
    // center pixels to [-1,1]: keeps first-layer SGD gradients decorrelated
    Tensor x = mul(sub(as_batch(image), 0.5), 2.0);
    return lin_cast(tanh_(lin_cast(x, m.enc1)), m.enc2);
}

Tensor decode(const ModelBundle& m, const Tensor& latent) {
    return lin_cast(tanh_(lin_cast(latent, m.dec1)), m.dec2);
}

Tensor denoise(const ModelBundle& m, const Tensor& z_t, const Tensor& temb, const Tensor& c) {
    Tensor h = concat({z_t, temb, c}, 1);
    h = tanh_(lin_cast(h, m.den1));
    h = tanh_(lin_cast(h, m.den2));
    h = tanh_(lin_cast(h, m.den3));
    h = tanh_(lin_cast(h, m.den4));
    return lin_cast(h, m.den5);
}

Tensor denoise_at(const ModelBundle& m, const Tensor& z_t, int t, int t_train, const Tensor& c) {
    const int rows = z_t.shape()[0];
    Tensor temb = time_embedding(t, t_train, z_t.dtype());
    if (rows > 1) temb = broadcast(temb, {rows, kTimeEmbedDim});
    return denoise(m, z_t, temb, c);
}

Tensor embed_identity(const ModelBundle& m, const Tensor& image) {
    Tensor x = mul(sub(as_batch(image), 0.5), 2.0);
    Tensor h = tanh_(lin_cast(x, m.id1));
    h = tanh_(lin_cast(h, m.id2));
    Tensor e = lin_cast(h, m.id3);
    Tensor norm = add(sqrt_(sum(square(e), 1)), 1e-8);
    return div(e, norm);
}

Tensor condition_from_image(const ModelBundle& m, const Tensor& image) {
    return lin_cast(embed_identity(m, image), m.head);
}

DenoiserFn make_denoiser(const ModelBundle& m, int t_train, Dtype dt) {
    const ModelBundle* mp = &m;
    return [mp, t_train, dt](const Tensor& z_t, int t, const std::optional<Tensor>& c) {
        const int rows = z_t.shape()[0];
        Tensor cond;
        if (c.has_value()) {
            cond = *c;
            if (cond.shape().size() == 1) cond = reshape(cond, {1, kCondDim});
            if (cond.shape()[0] == 1 && rows > 1) cond = broadcast(cond, {rows, kCondDim});
        } else {
            Tensor nt = mp->null_token;
            if (nt.dtype() != z_t.dtype()) nt = nt.astype(z_t.dtype());
            cond = broadcast(reshape(nt, {1, kCondDim}), {rows, kCondDim});
        }
        return denoise_at(*mp, z_t, t, t_train, cond);
    };
}

// ---- checkpoint io ----

void save_tensors(const std::string& dir,
                  const std::vector<std::pair<std::string, Tensor>>& tensors,
                  const std::map<std::string, std::string>& extra_meta) {
    fs::create_directories(dir);
    json manifest;
    manifest["format_version"] = 1;
    for (const auto& [k, v] : extra_meta) manifest[k] = v;
    json list = json::array();

    std::ofstream bin(fs::path(dir) / "weights.bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw IoError("checkpoint: cannot write " + dir + "/weights.bin");
    bin.write(kWeightsMagic, sizeof(kWeightsMagic));
    size_t offset = sizeof(kWeightsMagic);
    for (const auto& [name, t] : tensors) {
        const size_t elem = t.dtype() == Dtype::f32 ? 4 : 8;
        const size_t bytes = elem * t.size();
        json entry;
        entry["name"] = name;
        entry["shape"] = t.shape();
        entry["dtype"] = dtype_name(t.dtype());
        entry["byte_offset"] = offset;
        entry["byte_len"] = bytes;
        list.push_back(entry);
        if (t.dtype() == Dtype::f32) {
            std::vector<float> buf(t.size());
            for (int i = 0; i < t.size(); ++i) buf[i] = static_cast<float>(t.at(i));
            bin.write(reinterpret_cast<const char*>(buf.data()), bytes);
        } else {
            bin.write(reinterpret_cast<const char*>(t.data().data()), bytes);
        }
        offset += bytes;
    }
    manifest["tensors"] = list;
    std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!mf) throw IoError("checkpoint: cannot write " + dir + "/manifest.json");
    mf << manifest.dump(2) << "\n";
}

std::vector<std::pair<std::string, Tensor>> load_tensors(
    const std::string& dir, std::map<std::string, std::string>* extra_meta) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw IoError("checkpoint: missing " + dir + "/manifest.json");
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw IoError("checkpoint: bad manifest in " + dir + ": " + e.what());
    }
    if (!manifest.contains("format_version") || manifest["format_version"].get<int>() != 1)
        throw IoError("checkpoint: unsupported format_version in " + dir);

    std::ifstream bin(fs::path(dir) / "weights.bin", std::ios::binary);
    if (!bin) throw IoError("checkpoint: missing " + dir + "/weights.bin");
    char magic[sizeof(kWeightsMagic)];
    bin.read(magic, sizeof(magic));
    if (bin.gcount() != sizeof(magic) || std::memcmp(magic, kWeightsMagic, sizeof(magic)) != 0)
        throw IoError("checkpoint: bad magic bytes in " + dir + "/weights.bin");

    if (extra_meta) {
        for (auto it = manifest.begin(); it != manifest.end(); ++it)
            if (it.value().is_string()) (*extra_meta)[it.key()] = it.value().get<std::string>();
    }

    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& entry : manifest["tensors"]) {
        const std::string name = entry["name"].get<std::string>();
        const std::vector<int> shape = entry["shape"].get<std::vector<int>>();
        const Dtype dt = dtype_from_name(entry["dtype"].get<std::string>());
        const size_t offset = entry["byte_offset"].get<size_t>();
        const size_t bytes = entry["byte_len"].get<size_t>();
        size_t n = 1;
        for (int e : shape) n *= static_cast<size_t>(e);
        const size_t elem = dt == Dtype::f32 ? 4 : 8;
        if (bytes != n * elem)
            throw IoError("checkpoint: manifest/blob length mismatch for tensor '" + name + "'");
        bin.seekg(static_cast<std::streamoff>(offset));
        std::vector<double> vals(n);
        if (dt == Dtype::f32) {
            std::vector<float> buf(n);
            bin.read(reinterpret_cast<char*>(buf.data()), bytes);
            if (static_cast<size_t>(bin.gcount()) != bytes)
                throw IoError("checkpoint: truncated blob reading tensor '" + name + "'");
            for (size_t i = 0; i < n; ++i) vals[i] = static_cast<double>(buf[i]);
        } else {
            bin.read(reinterpret_cast<char*>(vals.data()), bytes);
            if (static_cast<size_t>(bin.gcount()) != bytes)
                throw IoError("checkpoint: truncated blob reading tensor '" + name + "'");
        }
        out.emplace_back(name, Tensor(shape, std::move(vals), dt));
    }
    return out;
}

void save_bundle(const ModelBundle& m, const std::string& dir) {
    std::vector<std::pair<std::string, Tensor>> tensors;
    for (const auto& [name, t] : m.named_params()) tensors.emplace_back(name, *t);
    std::string stages;
    for (const auto& s : m.trained_stages) stages += (stages.empty() ? "" : ",") + s;
    save_tensors(dir, tensors,
                 {{"arch_seed", std::to_string(m.arch_seed)}, {"trained", stages}});
}

ModelBundle load_bundle(const std::string& dir) {
    std::map<std::string, std::string> meta;
    auto tensors = load_tensors(dir, &meta);
    if (!meta.count("arch_seed")) throw IoError("checkpoint: manifest lacks arch_seed");
    ModelBundle m = init_bundle(std::stoull(meta["arch_seed"]));
    if (meta.count("trained") && !meta["trained"].empty()) {
        std::string s = meta["trained"];
        size_t pos = 0;
        while (pos != std::string::npos) {
            size_t next = s.find(',', pos);
            m.trained_stages.insert(s.substr(pos, next == std::string::npos ? next : next - pos));
            pos = next == std::string::npos ? next : next + 1;
        }
    }
    // id_class_weights is sized by training; accept whatever the manifest holds
    for (const auto& [name, t] : tensors)
        if (name == "id_class_weights") m.id_class_weights = t;
    auto params = m.named_params();
    std::map<std::string, Tensor*> by_name(params.begin(), params.end());
    for (const auto& [name, t] : tensors) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw IoError("checkpoint: unknown tensor '" + name + "' in " + dir);
        if (it->second->defined() && it->second->shape() != t.shape())
            throw IoError("checkpoint: shape mismatch for tensor '" + name + "' in " + dir);
        *it->second = t;
    }
    return m;
}

} // namespace latshield
