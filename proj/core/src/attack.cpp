#include "latshield/attack.hpp"

#include <algorithm>
#include <cmath>

#include "latshield/image_io.hpp"

namespace latshield {

void AttackConfig::validate() const {
    if (epsilon <= 0) throw ConfigError("attack: epsilon must be > 0");
    if (alpha <= 0) throw ConfigError("attack: alpha must be > 0");
    if (n_iters < 0) throw ConfigError("attack: n_iters must be >= 0");
    if (t_inf < 1) throw ConfigError("attack: t_inf must be >= 1");
    if (k_sdedit < 0) throw ConfigError("attack: k_sdedit must be >= 0");
}

AttackModel model_from_bundle(const ModelBundle& m, const NoiseSchedule& sched) {
    // The bundle outlives the attack (read-only share), so capture by pointer.
    const ModelBundle* b = &m;
    AttackModel mdl;
    mdl.encode = [b](const Tensor& x) { return encode(*b, x); };
    mdl.decode = [b](const Tensor& z) { return decode(*b, z); };
    mdl.embed = [b](const Tensor& x) { return embed_identity(*b, x); };
    mdl.condition = [b](const Tensor& x) { return condition_from_image(*b, x); };
    const int t_train = sched.t_train;
    mdl.denoise = [b, t_train](const Tensor& z_t, int t, const Tensor& c) {
        return denoise_at(*b, z_t, t, t_train, c);
    };
    mdl.uncond = make_denoiser(m, t_train);
    return mdl;
}

Tensor identity_loss(const AttackModel& mdl, const Tensor& z_adv, const Tensor& x,
                     IdLossForm form) {
    Tensor emb_adv = mdl.embed(mdl.decode(z_adv));   // unit rows
    Tensor emb_x = mdl.embed(as_batch(x)).constant();
    Tensor cos = sum(mul(emb_adv, emb_x));
    return form == IdLossForm::one_minus_cos ? sub(neg(cos), -1.0) : cos;
}

Tensor deviation_loss_t(const AttackModel& mdl, const Tensor& z_adv, int t,
                        const Tensor& z_t, const Tensor& c_clean) {
    Tensor zt = z_t.constant();
    Tensor c_adv = mdl.condition(mdl.decode(z_adv));
    Tensor eps_adv = mdl.denoise(zt, t, c_adv);
    Tensor eps_clean = mdl.denoise(zt, t, c_clean.constant()).constant();
    return mse(eps_clean, eps_adv);
}

Tensor average_deviation_loss(const AttackModel& mdl, const Tensor& z_adv, const Tensor& x,
                              const NoiseSchedule& sched, Rng& rng) {
    if (sched.inference_steps.empty()) throw ConfigError("attack: empty inference schedule");
    Tensor z0 = mdl.encode(as_batch(x)).constant();
    Tensor c_clean = mdl.condition(as_batch(x)).constant();
    Tensor acc;
    for (int t : sched.inference_steps) {
        Tensor eps = gaussian_like(z0, rng);
        Tensor z_t = forward_diffuse(z0, t, eps, sched).constant();
        Tensor l = deviation_loss_t(mdl, z_adv, t, z_t, c_clean);
        acc = acc.defined() ? add(acc, l) : l;
    }
    return div(acc, static_cast<double>(sched.inference_steps.size()));
}

TotalLoss total_loss(const AttackModel& mdl, const Tensor& z_adv, const Tensor& x,
                     const AttackConfig& cfg, const NoiseSchedule& sched, Rng& rng,
                     double frozen_lambda) {
    TotalLoss out;
    Tensor l_id = identity_loss(mdl, z_adv, x, cfg.id_loss_form);
    Tensor l_dev = average_deviation_loss(mdl, z_adv, x, sched, rng);
    out.l_id = l_id.item();
    out.l_dev = l_dev.item();
    if (cfg.lambda_rule == LambdaRule::fixed)
        out.lambda = cfg.lambda_value;
    else if (frozen_lambda >= 0.0)
        out.lambda = frozen_lambda;
    else
        out.lambda = cfg.lambda_value * out.l_id / std::max(out.l_dev, 1e-8);
    out.total = add(l_id, mul(l_dev, out.lambda));
    return out;
}

namespace {

double inf_norm(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

Tensor sdedit_maybe_straight(const AttackModel& mdl, const Tensor& z, int k,
                             const GuidanceParams& g, const NoiseSchedule& sched, Rng& rng,
                             SdeditGrad mode) {
    if (mode == SdeditGrad::through) return sdedit(mdl.uncond, z, k, std::nullopt, g, sched, rng);
    // straight-through: value from the edit, identity gradient to z
    Tensor zc = sdedit(mdl.uncond, z.constant(), k, std::nullopt, g, sched, rng);
    return add(z, sub(zc, z.constant()).constant());
}

} // namespace

AttackResult pgd_attack(const AttackModel& mdl, const Tensor& x, const AttackConfig& cfg,
                        const NoiseSchedule& sched) {
    cfg.validate();
    if (static_cast<int>(sched.inference_steps.size()) != cfg.t_inf)
        throw ConfigError("attack: t_inf " + std::to_string(cfg.t_inf) +
                          " != schedule inference steps " +
                          std::to_string(sched.inference_steps.size()));

    Rng rng(mix_seed(cfg.seed, 0xA77AC4));
    GuidanceParams g;
    g.w = cfg.w;
    g.eta = 1.0; // in-loop SDEdit uses the DDPM reverse chain

    Tensor xb = as_batch(x);
    Tensor z = mdl.encode(xb).constant();
    std::vector<double> delta(z.size(), 0.0);

    AttackResult res;
    for (int it = 0; it < cfg.n_iters; ++it) {
        Tape tape;
        Tensor d = tape.leaf(Tensor(z.shape(), delta, z.dtype()));
        Tensor z_adv0 = add(z, d);
        Rng it_rng = rng.child(0x5DE0 + it);
        Tensor z_prime = cfg.k_sdedit > 0
                             ? sdedit_maybe_straight(mdl, z_adv0, cfg.k_sdedit, g, sched, it_rng,
                                                     cfg.sdedit_grad)
                             : z_adv0;
        Rng dev_rng = rng.child(0xDE7 + it);
        double frozen = (cfg.lambda_freeze && !res.trace.empty()) ? res.trace.front().lambda : -1.0;
        TotalLoss tl = total_loss(mdl, z_prime, x, cfg, sched, dev_rng, frozen);
        if (!std::isfinite(tl.total.item()))
            throw ValueError("attack: non-finite loss at iteration " + std::to_string(it));
        tape.backward(tl.total);
        Tensor grad = tape.grad(d);
        for (double gv : grad.data())
            if (!std::isfinite(gv))
                throw ValueError("attack: non-finite gradient at iteration " + std::to_string(it));

        for (size_t i = 0; i < delta.size(); ++i) {
            const double gv = grad.at(static_cast<int>(i));
            const double s = gv > 0 ? 1.0 : (gv < 0 ? -1.0 : 0.0);
            double v = delta[i] + cfg.alpha * s;
            v = std::min(cfg.epsilon, std::max(-cfg.epsilon, v));
            delta[i] = static_cast<double>(static_cast<float>(v));
        }
        const double dn = inf_norm(delta);
        if (dn > cfg.epsilon + 1e-6)
            throw ValueError("attack: budget violated at iteration " + std::to_string(it));
        res.trace.push_back({it, tl.l_id, tl.l_dev, tl.lambda, dn});
    }

    res.delta_final = Tensor(z.shape(), delta, z.dtype());
    Tensor z_adv = add(z, res.delta_final);
    res.x_adv = reshape(clamp(mdl.decode(z_adv), 0.0, 1.0), {kImageSide, kImageSide});
    if (cfg.k_sdedit > 0) {
        Rng final_rng = rng.child(0xF1A1);
        Tensor z_enh = sdedit(mdl.uncond, z_adv, cfg.k_sdedit, std::nullopt, g, sched, final_rng);
        res.x_adv_diff = reshape(clamp(mdl.decode(z_enh), 0.0, 1.0), {kImageSide, kImageSide});
    } else {
        res.x_adv_diff = res.x_adv.clone();
    }
    return res;
}

AttackResult pgd_attack(const ModelBundle& m, const Tensor& x, const AttackConfig& cfg,
                        const NoiseSchedule& sched) {
    if (!m.trained("ae") || !m.trained("id") || !m.trained("diff"))
        throw ValueError("attack: bundle missing trained stages (need ae, id, diff)");
    return pgd_attack(model_from_bundle(m, sched), x, cfg, sched);
}

void write_attack_trace_csv(const std::vector<AttackIter>& trace, const std::string& path) {
    CsvWriter csv(path, {"iter", "L_id", "L_dev", "lambda", "delta_inf_norm"});
    for (const auto& r : trace)
        csv.row({std::to_string(r.iter), CsvWriter::num(r.l_id), CsvWriter::num(r.l_dev),
                 CsvWriter::num(r.lambda), CsvWriter::num(r.delta_inf_norm)});
}

} // namespace latshield
