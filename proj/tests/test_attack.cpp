#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "latshield/attack.hpp"
#include "latshield/image_io.hpp"
#include "latshield/trainer.hpp"

using namespace latshield;
namespace fs = std::filesystem;

namespace {

// Linear stub with known structure: decode places the latent into the first 32
// pixels, the embedding reads pixels 0..15, the condition reads pixels 16..31.
AttackModel linear_stub() {
    AttackModel m;
    std::vector<double> dmat(static_cast<size_t>(kLatentDim) * kImageDim, 0.0);
    for (int i = 0; i < kLatentDim; ++i) dmat[static_cast<size_t>(i) * kImageDim + i] = 1.0;
    Tensor D({kLatentDim, kImageDim}, std::move(dmat));
    std::vector<double> cmat(static_cast<size_t>(kCondDim) * kLatentDim, 0.0);
    for (int i = 0; i < kCondDim; ++i) cmat[static_cast<size_t>(i) * kLatentDim + i] = 0.7;
    Tensor C({kCondDim, kLatentDim}, std::move(cmat));

    auto flat = [](const Tensor& x) {
        return x.shape().size() == 2 && x.shape()[0] == kImageSide
                   ? reshape(x, {1, kImageDim})
                   : x;
    };
    m.encode = [flat](const Tensor& x) { return slice(flat(x), 1, 0, kLatentDim); };
    m.decode = [D](const Tensor& z) { return matmul(z, D); };
    m.embed = [flat](const Tensor& x) {
        Tensor e = slice(flat(x), 1, 0, kEmbedDim);
        Tensor n = sqrt_(add(sum(square(e), 1), 1e-12));
        return div(e, broadcast(n, {1, kEmbedDim}));
    };
    m.condition = [flat](const Tensor& x) { return mul(slice(flat(x), 1, kEmbedDim, kCondDim), 0.5); };
    m.denoise = [C](const Tensor& z_t, int, const Tensor& c) {
        return add(mul(z_t, 0.1), matmul(c, C));
    };
    m.uncond = [C](const Tensor& z_t, int t, const std::optional<Tensor>& c) {
        return c ? add(mul(z_t, 0.1), matmul(*c, C)) : mul(z_t, 0.1);
    };
    return m;
}

Tensor rand_image(Rng& rng) {
    std::vector<double> v(kImageDim);
    for (double& x : v) x = rng.uniform(0, 1);
    return Tensor({1, kImageDim}, std::move(v), Dtype::f32);
}

Tensor rand_latent(Rng& rng) {
    std::vector<double> v(kLatentDim);
    for (double& x : v) x = rng.gaussian();
    return Tensor({1, kLatentDim}, std::move(v), Dtype::f32);
}

} // namespace

TEST_CASE("identity loss matches the closed form on the linear stub") {
    AttackModel mdl = linear_stub();
    Rng rng(1);
    Tensor x = rand_image(rng);
    Tensor z = rand_latent(rng);
    // embeddings are normalized slices; compute cosine directly
    double dot = 0, na = 0, nb = 0;
    for (int i = 0; i < kEmbedDim; ++i) {
        dot += z.at(i) * x.at(i);
        na += z.at(i) * z.at(i);
        nb += x.at(i) * x.at(i);
    }
    const double cosv = dot / std::sqrt(na * nb);
    const double l1 = identity_loss(mdl, z, x, IdLossForm::one_minus_cos).item();
    const double l2 = identity_loss(mdl, z, x, IdLossForm::cos_literal).item();
    CHECK(l1 == doctest::Approx(1.0 - cosv).epsilon(1e-5));
    CHECK(l2 == doctest::Approx(cosv).epsilon(1e-5));
    CHECK(l1 + l2 == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("deviation loss is zero at the clean point and flows only through the condition") {
    AttackModel mdl = linear_stub();
    NoiseSchedule sched = make_linear_schedule(50, 1e-4, 0.02, 5);
    Rng rng(2);
    Tensor x = rand_image(rng);
    Tensor z_clean = mdl.encode(x).constant();
    Tensor c_clean = mdl.condition(mdl.decode(z_clean)).constant();
    Tensor z_t = rand_latent(rng);
    CHECK(deviation_loss_t(mdl, z_clean, 10, z_t, c_clean).item() == 0.0);

    // perturbed latent: loss > 0 and gradient lives only on dims the condition reads
    Tape tape;
    Tensor z_adv = tape.leaf(add(z_clean, 0.25));
    Tensor loss = deviation_loss_t(mdl, z_adv, 10, z_t, c_clean);
    CHECK(loss.item() > 0.0);
    tape.backward(loss);
    Tensor g = tape.grad(z_adv);
    double head = 0, tail = 0;
    for (int i = 0; i < kEmbedDim; ++i) head += std::abs(g.at(i));
    for (int i = kEmbedDim; i < kLatentDim; ++i) tail += std::abs(g.at(i));
    CHECK(head == 0.0); // z_t and c_clean enter detached; only condition dims carry grad
    CHECK(tail > 0.0);
}

TEST_CASE("average deviation loss is deterministic per rng seed") {
    AttackModel mdl = linear_stub();
    NoiseSchedule sched = make_linear_schedule(50, 1e-4, 0.02, 5);
    Rng r1(9), r2(9), r3(10);
    Tensor x = rand_image(r3);
    Tensor z_adv = add(mdl.encode(x).constant(), 0.1);
    const double a = average_deviation_loss(mdl, z_adv, x, sched, r1).item();
    const double b = average_deviation_loss(mdl, z_adv, x, sched, r2).item();
    CHECK(a == b);
    CHECK(a >= 0.0);
}

TEST_CASE("dynamic lambda follows the balance rule; fixed and frozen override it") {
    AttackModel mdl = linear_stub();
    NoiseSchedule sched = make_linear_schedule(50, 1e-4, 0.02, 5);
    AttackConfig cfg;
    cfg.t_inf = 5;
    Rng rng(4);
    Tensor x = rand_image(rng);
    Tensor z_adv = add(mdl.encode(x).constant(), 0.3);

    Rng r1(7);
    TotalLoss tl = total_loss(mdl, z_adv, x, cfg, sched, r1);
    CHECK(tl.lambda ==
          doctest::Approx(cfg.lambda_value * tl.l_id / std::max(tl.l_dev, 1e-8)).epsilon(1e-12));
    CHECK(tl.total.item() == doctest::Approx(tl.l_id + tl.lambda * tl.l_dev).epsilon(1e-5));

    Rng r2(7);
    TotalLoss froz = total_loss(mdl, z_adv, x, cfg, sched, r2, 2.5);
    CHECK(froz.lambda == 2.5);

    cfg.lambda_rule = LambdaRule::fixed;
    cfg.lambda_value = 0.75;
    Rng r3(7);
    TotalLoss fix = total_loss(mdl, z_adv, x, cfg, sched, r3);
    CHECK(fix.lambda == 0.75);
}

TEST_CASE("pgd attack respects the budget at every iteration and is reproducible") {
    AttackModel mdl = linear_stub();
    NoiseSchedule sched = make_linear_schedule(50, 1e-4, 0.02, 5);
    AttackConfig cfg;
    cfg.t_inf = 5;
    cfg.k_sdedit = 2;
    cfg.n_iters = 8;
    cfg.seed = 42;
    Rng rng(11);
    Tensor x = rand_image(rng);

    AttackResult r1 = pgd_attack(mdl, x, cfg, sched);
    AttackResult r2 = pgd_attack(mdl, x, cfg, sched);
    REQUIRE(r1.trace.size() == 8);
    for (const auto& it : r1.trace) {
        CHECK(it.delta_inf_norm <= cfg.epsilon + 1e-6);
        CHECK(std::isfinite(it.l_id));
        CHECK(std::isfinite(it.l_dev));
    }
    double dmax = 0;
    for (int i = 0; i < r1.delta_final.size(); ++i)
        dmax = std::max(dmax, std::abs(r1.delta_final.at(i)));
    CHECK(dmax <= cfg.epsilon + 1e-6);
    CHECK(dmax > 0.0); // the attack actually moved

    CHECK(r1.x_adv.shape() == std::vector<int>{kImageSide, kImageSide});
    CHECK(r1.x_adv_diff.shape() == std::vector<int>{kImageSide, kImageSide});
    for (int i = 0; i < r1.x_adv.size(); ++i) {
        CHECK(r1.x_adv.at(i) >= 0.0);
        CHECK(r1.x_adv.at(i) <= 1.0);
        CHECK(r1.x_adv.at(i) == r2.x_adv.at(i)); // bitwise per seed
        CHECK(r1.x_adv_diff.at(i) == r2.x_adv_diff.at(i));
    }
    for (size_t i = 0; i < r1.trace.size(); ++i) CHECK(r1.trace[i].l_id == r2.trace[i].l_id);

    // a different seed changes the sdedit/noise draws and hence the trajectory
    cfg.seed = 43;
    AttackResult r3 = pgd_attack(mdl, x, cfg, sched);
    bool differs = false;
    for (size_t i = 0; i < r1.trace.size(); ++i) differs |= r1.trace[i].l_dev != r3.trace[i].l_dev;
    CHECK(differs);
}

TEST_CASE("straight-through sdedit gradient variant runs within budget") {
    AttackModel mdl = linear_stub();
    NoiseSchedule sched = make_linear_schedule(50, 1e-4, 0.02, 5);
    AttackConfig cfg;
    cfg.t_inf = 5;
    cfg.k_sdedit = 2;
    cfg.n_iters = 4;
    cfg.sdedit_grad = SdeditGrad::straight;
    Rng rng(12);
    AttackResult r = pgd_attack(mdl, rand_image(rng), cfg, sched);
    for (const auto& it : r.trace) CHECK(it.delta_inf_norm <= cfg.epsilon + 1e-6);
}

TEST_CASE("zero iterations returns an untouched latent") {
    AttackModel mdl = linear_stub();
    NoiseSchedule sched = make_linear_schedule(50, 1e-4, 0.02, 5);
    AttackConfig cfg;
    cfg.t_inf = 5;
    cfg.n_iters = 0;
    Rng rng(13);
    AttackResult r = pgd_attack(mdl, rand_image(rng), cfg, sched);
    CHECK(r.trace.empty());
    for (int i = 0; i < r.delta_final.size(); ++i) CHECK(r.delta_final.at(i) == 0.0);
}

TEST_CASE("configuration validation") {
    AttackConfig cfg;
    cfg.epsilon = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.alpha = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.n_iters = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.t_inf = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.k_sdedit = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    // t_inf must match the schedule
    AttackModel mdl = linear_stub();
    NoiseSchedule sched = make_linear_schedule(50, 1e-4, 0.02, 5);
    cfg = {};
    cfg.t_inf = 7;
    Rng rng(14);
    CHECK_THROWS_AS(pgd_attack(mdl, rand_image(rng), cfg, sched), ConfigError);
}

TEST_CASE("bundle overload refuses untrained models") {
    ModelBundle m = init_bundle(1);
    NoiseSchedule sched = make_linear_schedule(50, 1e-4, 0.02, 5);
    AttackConfig cfg;
    cfg.t_inf = 5;
    Rng rng(15);
    CHECK_THROWS_AS(pgd_attack(m, rand_image(rng), cfg, sched), ValueError);
}

TEST_CASE("attack trace csv layout") {
    std::vector<AttackIter> trace{{0, 0.5, 0.25, 3.0, 0.04}, {1, 0.4, 0.2, 3.0, 0.08}};
    write_attack_trace_csv(trace, "attack_trace_tmp.csv");
    auto rows = read_csv("attack_trace_tmp.csv");
    CHECK(rows[0] == std::vector<std::string>{"iter", "L_id", "L_dev", "lambda", "delta_inf_norm"});
    CHECK(rows.size() == 3);
    CHECK(rows[1][0] == "0");
    fs::remove("attack_trace_tmp.csv");
}
