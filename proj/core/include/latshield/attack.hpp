#pragma once

#include <functional>
#include <string>
#include <vector>

#include "latshield/nets.hpp"
#include "latshield/schedule.hpp"

namespace latshield {

enum class LambdaRule { dynamic, fixed };
enum class SdeditGrad { through, straight };
enum class IdLossForm { one_minus_cos, cos_literal };

struct AttackConfig {
    double epsilon = 75.0 / 255.0; // L-inf budget in latent units
    double alpha = 10.0 / 255.0;   // step size
    int n_iters = 100;
    int t_inf = 25;     // must match sched.inference_steps.size()
    int k_sdedit = 3;   // SDEdit depth inside the loop and for x_adv_diff
    LambdaRule lambda_rule = LambdaRule::dynamic;
    double lambda_value = 1.5; // dynamic: factor; fixed: the lambda itself
    bool lambda_freeze = false; // dynamic rule: freeze lambda from iteration 0
    SdeditGrad sdedit_grad = SdeditGrad::through;
    IdLossForm id_loss_form = IdLossForm::one_minus_cos;
    double w = 0.0; // guidance scale for the in-loop SDEdit (0 = unconditional)
    uint64_t seed = 0;

    void validate() const;
};

struct AttackIter {
    int iter;
    double l_id, l_dev, lambda, delta_inf_norm;
};

struct AttackResult {
    Tensor x_adv;       // decode(z + delta), clamped to [0,1]
    Tensor x_adv_diff;  // decode(sdedit(z + delta)), clamped to [0,1]
    Tensor delta_final; // latent perturbation, max|delta| <= epsilon + 1e-6
    std::vector<AttackIter> trace;
};

/// Model surface the attack differentiates through. Closures let tests swap in
/// stub encoders/denoisers with known closed forms.
struct AttackModel {
    std::function<Tensor(const Tensor&)> encode;    // [B,1024] -> [B,32]
    std::function<Tensor(const Tensor&)> decode;    // [B,32] -> [B,1024]
    std::function<Tensor(const Tensor&)> embed;     // image -> unit embedding
    std::function<Tensor(const Tensor&)> condition; // image -> condition vector
    std::function<Tensor(const Tensor&, int, const Tensor&)> denoise; // (z_t,t,c)
    DenoiserFn uncond; // for SDEdit; nullopt condition = null token
};

AttackModel model_from_bundle(const ModelBundle& m, const NoiseSchedule& sched);

/// 1 - cos(f_id(decode(z_adv)), f_id(x)), differentiable w.r.t. z_adv.
Tensor identity_loss(const AttackModel& mdl, const Tensor& z_adv, const Tensor& x,
                     IdLossForm form = IdLossForm::one_minus_cos);

/// MSE(eps(z_t,t,c(decode(z_adv))), eps(z_t,t,c_clean)); z_t and c_clean enter
/// as constants, so the gradient flows only through the condition path.
Tensor deviation_loss_t(const AttackModel& mdl, const Tensor& z_adv, int t,
                        const Tensor& z_t, const Tensor& c_clean);

/// Mean of deviation_loss_t over every inference step; z_t is forward-diffused
/// from the clean latent encode(x) with fresh noise from rng and shared by both
/// MSE branches.
Tensor average_deviation_loss(const AttackModel& mdl, const Tensor& z_adv, const Tensor& x,
                              const NoiseSchedule& sched, Rng& rng);

struct TotalLoss {
    Tensor total;
    double l_id = 0, l_dev = 0, lambda = 0;
};

/// L_ID + lambda * L_dev with dynamic lambda = factor * L_ID / max(L_dev, 1e-8)
/// (both detached). frozen_lambda < 0 means "compute"; >= 0 reuses the value.
TotalLoss total_loss(const AttackModel& mdl, const Tensor& z_adv, const Tensor& x,
                     const AttackConfig& cfg, const NoiseSchedule& sched, Rng& rng,
                     double frozen_lambda = -1.0);

/// Projected sign-gradient ascent in latent space (the paper's protection).
AttackResult pgd_attack(const AttackModel& mdl, const Tensor& x, const AttackConfig& cfg,
                        const NoiseSchedule& sched);
AttackResult pgd_attack(const ModelBundle& m, const Tensor& x, const AttackConfig& cfg,
                        const NoiseSchedule& sched);

void write_attack_trace_csv(const std::vector<AttackIter>& trace, const std::string& path);

} // namespace latshield
