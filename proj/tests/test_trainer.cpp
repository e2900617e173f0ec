#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "latshield/image_io.hpp"
#include "latshield/trainer.hpp"

using namespace latshield;
namespace fs = std::filesystem;

namespace {

Dataset tiny_dataset(int ids = 4, int per = 6, uint64_t seed = 13) {
    const std::string dir = "trainer_test_data";
    fs::remove_all(dir);
    Dataset ds = make_dataset(ids, per, seed, dir);
    fs::remove_all(dir);
    return ds;
}

// Value snapshot: tensors inside a bundle share storage on copy, so equality
// checks must go through copied data.
using Snapshot = std::map<std::string, std::vector<double>>;

Snapshot snapshot(const ModelBundle& m) {
    Snapshot s;
    for (const auto& [name, t] : m.named_params()) s[name] = t->data();
    return s;
}

bool params_equal(const ModelBundle& a, const Snapshot& b, const std::string& name_prefix) {
    for (const auto& [name, t] : a.named_params()) {
        if (name.rfind(name_prefix, 0) != 0) continue;
        auto it = b.find(name);
        if (it == b.end() || it->second.size() != static_cast<size_t>(t->size())) return false;
        for (int k = 0; k < t->size(); ++k)
            if (t->at(k) != it->second[k]) return false;
    }
    return true;
}

bool params_equal(const ModelBundle& a, const ModelBundle& b, const std::string& name_prefix) {
    return params_equal(a, snapshot(b), name_prefix);
}

} // namespace

TEST_CASE("autoencoder training reduces loss and records a trace") {
    Dataset ds = tiny_dataset();
    ModelBundle m = init_bundle(1);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 8;
    cfg.lr = 1.0;
    cfg.seed = 5;
    TrainReport rep = train_autoencoder(ds, m, cfg);
    CHECK(rep.final_epoch_loss < 0.5 * rep.initial_epoch_loss);
    CHECK(rep.trace.size() == 30u * 3u); // 22 train images -> 3 batches of 8
    CHECK(m.trained("ae"));
    CHECK(!m.trained("id"));
    CHECK(std::isfinite(rep.final_metric));

    // trace csv shape
    write_trace_csv(rep, "trainer_trace_tmp.csv");
    auto rows = read_csv("trainer_trace_tmp.csv");
    CHECK(rows[0] == std::vector<std::string>{"epoch", "step", "loss"});
    CHECK(rows.size() == rep.trace.size() + 1);
    fs::remove("trainer_trace_tmp.csv");
}

TEST_CASE("zero epochs leaves the bundle unchanged") {
    Dataset ds = tiny_dataset();
    ModelBundle m = init_bundle(2);
    Snapshot before = snapshot(m);
    TrainConfig cfg;
    cfg.epochs = 0;
    train_autoencoder(ds, m, cfg);
    CHECK(params_equal(m, before, ""));
    CHECK(!m.trained("ae"));
}

TEST_CASE("training is bitwise reproducible at fixed seed") {
    Dataset ds = tiny_dataset();
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 8;
    cfg.lr = 0.5;
    cfg.seed = 77;
    ModelBundle m1 = init_bundle(3), m2 = init_bundle(3);
    TrainReport r1 = train_autoencoder(ds, m1, cfg);
    TrainReport r2 = train_autoencoder(ds, m2, cfg);
    CHECK(params_equal(m1, m2, ""));
    CHECK(r1.final_epoch_loss == r2.final_epoch_loss);
}

TEST_CASE("identity training learns separable embeddings on tiny data") {
    Dataset ds = tiny_dataset(4, 8);
    ModelBundle m = init_bundle(4);
    TrainConfig ae;
    ae.epochs = 10;
    ae.batch_size = 8;
    ae.lr = 1.0;
    train_autoencoder(ds, m, ae);

    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 8;
    cfg.lr = 0.5;
    cfg.margin_scale = 10;
    cfg.seed = 9;
    TrainReport rep = train_identity(ds, m, cfg);
    CHECK(rep.final_epoch_loss < rep.initial_epoch_loss);
    CHECK(m.trained("id"));
    CHECK(m.id_class_weights.defined());
    CHECK(m.id_class_weights.shape() == std::vector<int>{kEmbedDim, 4});
    CHECK(rep.final_metric >= 0.0);
    CHECK(rep.final_metric <= 1.0);
    // initial CE is roughly ln(n_identities) for near-uniform logits
    CHECK(std::get<2>(rep.trace.front()) < 3.0 * std::log(4.0));
}

TEST_CASE("identity training requires two identities") {
    Dataset ds = tiny_dataset(2, 4);
    ds.n_identities = 1;
    ModelBundle m = init_bundle(5);
    TrainConfig cfg;
    CHECK_THROWS_AS(train_identity(ds, m, cfg), ValueError);
}

TEST_CASE("diffusion training freezes AE and identity nets") {
    Dataset ds = tiny_dataset(4, 6);
    ModelBundle m = init_bundle(6);
    NoiseSchedule sched = make_linear_schedule(50, 1e-4, 0.02, 10);
    TrainConfig pre;
    pre.epochs = 5;
    pre.batch_size = 8;
    pre.lr = 0.5;
    train_autoencoder(ds, m, pre);
    train_identity(ds, m, pre);
    Snapshot before = snapshot(m);

    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 8;
    cfg.lr = 0.1;
    cfg.dropout_p = 0.1;
    cfg.seed = 31;
    TrainReport rep = train_diffusion(ds, m, cfg, sched);
    CHECK(m.trained("diff"));
    CHECK(rep.final_epoch_loss < rep.initial_epoch_loss);
    // frozen stages bit-identical
    CHECK(params_equal(m, before, "enc"));
    CHECK(params_equal(m, before, "dec"));
    CHECK(params_equal(m, before, "id1"));
    CHECK(params_equal(m, before, "id2"));
    CHECK(params_equal(m, before, "id3"));
    // denoiser, head, and null token moved
    CHECK(!params_equal(m, before, "den"));
    CHECK(!params_equal(m, before, "null_token"));

    // measured dropout fraction within 3 sigma of p
    const long n = static_cast<long>(rep.trace.size()) * cfg.batch_size;
    const double sigma3 = 3.0 * std::sqrt(0.1 * 0.9 / n);
    CHECK(std::abs(rep.dropout_fraction - 0.1) < sigma3 + 0.02);
}

TEST_CASE("dropout_p = 1 trains the null token but not the condition head") {
    Dataset ds = tiny_dataset(3, 6);
    ModelBundle m = init_bundle(7);
    NoiseSchedule sched = make_linear_schedule(50, 1e-4, 0.02, 10);
    TrainConfig pre;
    pre.epochs = 3;
    pre.batch_size = 8;
    pre.lr = 0.5;
    train_autoencoder(ds, m, pre);
    train_identity(ds, m, pre);
    Snapshot before = snapshot(m);

    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.lr = 0.1;
    cfg.dropout_p = 1.0;
    TrainReport rep = train_diffusion(ds, m, cfg, sched);
    CHECK(rep.dropout_fraction == 1.0);
    CHECK(!params_equal(m, before, "null_token"));
    CHECK(params_equal(m, before, "head")); // head gradient identically zero
}

TEST_CASE("sgd updates stay in f32 grid") {
    Dataset ds = tiny_dataset(3, 4);
    ModelBundle m = init_bundle(8);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.lr = 0.3;
    train_autoencoder(ds, m, cfg);
    for (const auto& [name, t] : m.named_params())
        for (int i = 0; i < t->size(); ++i)
            CHECK(t->at(i) == static_cast<double>(static_cast<float>(t->at(i))));
}
