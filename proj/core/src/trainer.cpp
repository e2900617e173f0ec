#include "latshield/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "latshield/image_io.hpp"

namespace latshield {

namespace {

const std::vector<std::string>& stage_param_names(const std::string& stage) {
    static const std::vector<std::string> ae = {"enc1.w", "enc1.b", "enc2.w", "enc2.b",
                                                "dec1.w", "dec1.b", "dec2.w", "dec2.b"};
    static const std::vector<std::string> id = {"id1.w", "id1.b", "id2.w",
                                                "id2.b", "id3.w", "id3.b"};
    static const std::vector<std::string> diff = {
        "den1.w", "den1.b", "den2.w", "den2.b", "den3.w", "den3.b", "den4.w", "den4.b",
        "den5.w", "den5.b", "head.w", "head.b", "null_token"};
    if (stage == "ae") return ae;
    if (stage == "id") return id;
    return diff;
}

// (tracked-in-scratch, canonical-in-m) pointer pairs for a stage's parameters.
std::vector<std::pair<Tensor*, Tensor*>> zip_params(ModelBundle& scratch, ModelBundle& m,
                                                    const std::vector<std::string>& names) {
    auto sp = scratch.named_params();
    auto mp = m.named_params();
    std::map<std::string, Tensor*> sm(sp.begin(), sp.end()), mm(mp.begin(), mp.end());
    std::vector<std::pair<Tensor*, Tensor*>> out;
    out.reserve(names.size());
    for (const auto& n : names) out.emplace_back(sm.at(n), mm.at(n));
    return out;
}

Tensor gather_images(const Dataset& ds, const std::vector<int>& idx, int from, int to) {
    std::vector<double> v;
    v.reserve(static_cast<size_t>(to - from) * kImageDim);
    for (int i = from; i < to; ++i) {
        const auto& d = ds.images[idx[i]].data();
        v.insert(v.end(), d.begin(), d.end());
    }
    return Tensor({to - from, kImageDim}, std::move(v), Dtype::f32);
}

void sgd_update(Tensor& param, const Tensor& grad, double lr) {
    auto& p = param.mutable_data();
    const auto& g = grad.data();
    for (size_t i = 0; i < p.size(); ++i)
        p[i] = static_cast<double>(static_cast<float>(p[i] - lr * g[i]));
}

std::vector<int> shuffled(const std::vector<int>& idx, Rng& rng) {
    std::vector<int> out = idx;
    for (int i = static_cast<int>(out.size()) - 1; i > 0; --i)
        std::swap(out[i], out[rng.uniform_int(0, i)]);
    return out;
}

void check_finite(double loss, const char* stage, int epoch, int step) {
    if (!std::isfinite(loss))
        throw ValueError(std::string(stage) + ": non-finite loss at epoch " +
                         std::to_string(epoch) + " step " + std::to_string(step));
}

void finish_report(TrainReport& rep) {
    if (!rep.epoch_loss.empty()) {
        rep.initial_epoch_loss = rep.epoch_loss.front();
        rep.final_epoch_loss = rep.epoch_loss.back();
    }
}

} // namespace

TrainReport train_autoencoder(const Dataset& ds, ModelBundle& m, const TrainConfig& cfg) {
    if (ds.images.empty()) throw ValueError("train ae: empty dataset");
    TrainReport rep;
    const std::vector<int> train_idx = ds.train_indices();
    Rng rng(mix_seed(cfg.seed, 0xAE));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto order = shuffled(train_idx, rng);
        double epoch_sum = 0.0;
        int steps = 0;
        for (int from = 0; from < static_cast<int>(order.size()); from += cfg.batch_size) {
            const int to = std::min<int>(from + cfg.batch_size, order.size());
            Tensor x = gather_images(ds, order, from, to);
            Tape tape;
            ModelBundle t = m;
            auto pairs = zip_params(t, m, stage_param_names("ae"));
            for (auto& [pt, pm] : pairs) *pt = tape.leaf(*pm);
            Tensor loss = mse(decode(t, encode(t, x)), x);
            const double lv = loss.item();
            check_finite(lv, "train ae", epoch, steps);
            tape.backward(loss);
            for (auto& [pt, pm] : pairs) sgd_update(*pm, tape.grad(*pt), cfg.lr);
            rep.trace.emplace_back(epoch, steps, lv);
            epoch_sum += lv;
            ++steps;
        }
        rep.epoch_loss.push_back(epoch_sum / std::max(1, steps));
    }
    finish_report(rep);
    Tensor x = gather_images(ds, train_idx, 0, static_cast<int>(train_idx.size()));
    rep.final_metric = mse(decode(m, encode(m, x)), x).item();
    if (cfg.epochs > 0) m.trained_stages.insert("ae");
    return rep;
}

TrainReport train_identity(const Dataset& ds, ModelBundle& m, const TrainConfig& cfg) {
    if (ds.n_identities < 2) throw ValueError("train id: need at least 2 identities");
    TrainReport rep;
    const int n_ids = ds.n_identities;
    const std::vector<int> train_idx = ds.train_indices();
    Rng rng(mix_seed(cfg.seed, 0x1D));

    // class vectors stored column-wise: [embed_dim, n_ids]
    if (!m.id_class_weights.defined() || m.id_class_weights.shape()[1] != n_ids) {
        const double limit = std::sqrt(6.0 / (n_ids + kEmbedDim));
        std::vector<double> w(static_cast<size_t>(kEmbedDim) * n_ids);
        Rng wrng = rng.child(0xC1A5);
        for (double& v : w) v = wrng.uniform(-limit, limit);
        m.id_class_weights = Tensor({kEmbedDim, n_ids}, std::move(w), Dtype::f32);
    }

    auto normalized_cols = [](const Tensor& w) {
        return div(w, add(sqrt_(sum(square(w), 0)), 1e-8));
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto order = shuffled(train_idx, rng);
        double epoch_sum = 0.0;
        int steps = 0;
        for (int from = 0; from < static_cast<int>(order.size()); from += cfg.batch_size) {
            const int to = std::min<int>(from + cfg.batch_size, order.size());
            const int bsz = to - from;
            Tensor x = gather_images(ds, order, from, to);
            std::vector<double> onehot(static_cast<size_t>(bsz) * n_ids, 0.0);
            for (int i = from; i < to; ++i) onehot[(i - from) * n_ids + ds.labels[order[i]]] = 1.0;
            Tensor y(std::vector<int>{bsz, n_ids}, std::move(onehot), Dtype::f32);

            Tape tape;
            ModelBundle t = m;
            auto pairs = zip_params(t, m, stage_param_names("id"));
            for (auto& [pt, pm] : pairs) *pt = tape.leaf(*pm);
            Tensor w = tape.leaf(m.id_class_weights);
            Tensor emb = embed_identity(t, x);
            Tensor logits = mul(matmul(emb, normalized_cols(w)), cfg.margin_scale);
            Tensor p = softmax(logits);
            Tensor loss = neg(mean(sum(mul(log_(add(p, 1e-12)), y), 1)));
            const double lv = loss.item();
            check_finite(lv, "train id", epoch, steps);
            tape.backward(loss);
            for (auto& [pt, pm] : pairs) sgd_update(*pm, tape.grad(*pt), cfg.lr);
            sgd_update(m.id_class_weights, tape.grad(w), cfg.lr);
            rep.trace.emplace_back(epoch, steps, lv);
            epoch_sum += lv;
            ++steps;
        }
        rep.epoch_loss.push_back(epoch_sum / std::max(1, steps));
    }
    finish_report(rep);

    const auto eval_idx = ds.eval_indices();
    if (!eval_idx.empty() && m.id_class_weights.defined()) {
        Tensor xe = gather_images(ds, eval_idx, 0, static_cast<int>(eval_idx.size()));
        Tensor emb = embed_identity(m, xe);
        Tensor logits = matmul(emb, normalized_cols(m.id_class_weights));
        int correct = 0;
        for (size_t i = 0; i < eval_idx.size(); ++i) {
            int best = 0;
            for (int k = 1; k < n_ids; ++k)
                if (logits.at(static_cast<int>(i) * n_ids + k) >
                    logits.at(static_cast<int>(i) * n_ids + best))
                    best = k;
            if (best == ds.labels[eval_idx[i]]) ++correct;
        }
        rep.final_metric = static_cast<double>(correct) / eval_idx.size();
    }
    if (cfg.epochs > 0) m.trained_stages.insert("id");
    return rep;
}

TrainReport train_diffusion(const Dataset& ds, ModelBundle& m, const TrainConfig& cfg,
                            const NoiseSchedule& sched) {
    if (ds.images.empty()) throw ValueError("train diff: empty dataset");
    TrainReport rep;
    const std::vector<int> train_idx = ds.train_indices();
    Rng rng(mix_seed(cfg.seed, 0xD1FF));

    // AE and identity backbone are frozen here: precompute latents/embeddings
    Tensor all = gather_images(ds, train_idx, 0, static_cast<int>(train_idx.size()));
    Tensor latents = encode(m, all);        // [N,32]
    Tensor embeds = embed_identity(m, all); // [N,16]

    long dropout_hits = 0, dropout_total = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> pos(train_idx.size());
        for (size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
        auto order = shuffled(pos, rng);
        double epoch_sum = 0.0;
        int steps = 0;
        for (int from = 0; from < static_cast<int>(order.size()); from += cfg.batch_size) {
            const int to = std::min<int>(from + cfg.batch_size, order.size());
            const int bsz = to - from;

            std::vector<double> z0v(static_cast<size_t>(bsz) * kLatentDim);
            std::vector<double> ev(static_cast<size_t>(bsz) * kEmbedDim);
            std::vector<double> sq_ab(bsz), sq_1mab(bsz), mask_v(bsz);
            std::vector<int> ts(bsz);
            std::vector<double> epsv(static_cast<size_t>(bsz) * kLatentDim);
            for (int i = 0; i < bsz; ++i) {
                const int row = order[from + i];
                std::copy_n(latents.data().begin() + static_cast<size_t>(row) * kLatentDim,
                            kLatentDim, z0v.begin() + static_cast<size_t>(i) * kLatentDim);
                std::copy_n(embeds.data().begin() + static_cast<size_t>(row) * kEmbedDim,
                            kEmbedDim, ev.begin() + static_cast<size_t>(i) * kEmbedDim);
                ts[i] = rng.uniform_int(1, sched.t_train);
                const double abar = sched.alpha_bar_at(ts[i]);
                sq_ab[i] = std::sqrt(abar);
                sq_1mab[i] = std::sqrt(1.0 - abar);
                const bool drop = rng.uniform() < cfg.dropout_p;
                mask_v[i] = drop ? 0.0 : 1.0;
                dropout_hits += drop ? 1 : 0;
                ++dropout_total;
                for (int j = 0; j < kLatentDim; ++j)
                    epsv[static_cast<size_t>(i) * kLatentDim + j] = rng.gaussian();
            }
            Tensor z0(std::vector<int>{bsz, kLatentDim}, std::move(z0v), Dtype::f32);
            Tensor emb(std::vector<int>{bsz, kEmbedDim}, std::move(ev), Dtype::f32);
            Tensor eps(std::vector<int>{bsz, kLatentDim}, std::move(epsv), Dtype::f32);
            Tensor a(std::vector<int>{bsz, 1}, std::move(sq_ab), Dtype::f32);
            Tensor b(std::vector<int>{bsz, 1}, std::move(sq_1mab), Dtype::f32);
            Tensor mask(std::vector<int>{bsz, 1}, std::move(mask_v), Dtype::f32);
            Tensor z_t = add(mul(z0, a), mul(eps, b));
            Tensor temb = time_embedding_batch(ts, sched.t_train, Dtype::f32);

            Tape tape;
            ModelBundle t = m;
            auto pairs = zip_params(t, m, stage_param_names("diff"));
            for (auto& [pt, pm] : pairs) *pt = tape.leaf(*pm);
            Tensor c_head = linear(emb, t.head);
            Tensor c_null = broadcast(reshape(t.null_token, {1, kCondDim}), {bsz, kCondDim});
            Tensor inv_mask = sub(Tensor::full({bsz, 1}, 1.0), mask);
            Tensor c = add(mul(c_head, mask), mul(c_null, inv_mask));
            Tensor pred = denoise(t, z_t, temb, c);
            Tensor loss = mse(eps, pred);
            const double lv = loss.item();
            check_finite(lv, "train diff", epoch, steps);
            tape.backward(loss);
            for (auto& [pt, pm] : pairs) sgd_update(*pm, tape.grad(*pt), cfg.lr);
            rep.trace.emplace_back(epoch, steps, lv);
            epoch_sum += lv;
            ++steps;
        }
        rep.epoch_loss.push_back(epoch_sum / std::max(1, steps));
    }
    finish_report(rep);
    rep.final_metric = rep.final_epoch_loss;
    rep.dropout_fraction =
        dropout_total > 0 ? static_cast<double>(dropout_hits) / dropout_total : 0.0;
    if (cfg.epochs > 0) m.trained_stages.insert("diff");
    return rep;
}

void write_trace_csv(const TrainReport& r, const std::string& path) {
    CsvWriter csv(path, {"epoch", "step", "loss"});
    for (const auto& [e, s, l] : r.trace)
        csv.row({std::to_string(e), std::to_string(s), CsvWriter::num(l)});
}

} // namespace latshield
