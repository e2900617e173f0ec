#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "latshield/rng.hpp"
#include "latshield/tensor.hpp"

namespace latshield {

struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };

/// Linear-ramp DDPM noise schedule plus the inference-time step subsequence.
/// Step indices are 1-based; t = 0 is the clean sample (alpha_bar(0) == 1).
struct NoiseSchedule {
    int t_train = 0;
    std::vector<double> beta;      // beta[t-1] for t in 1..t_train
    std::vector<double> alpha;     // 1 - beta
    std::vector<double> alpha_bar; // cumulative product of alpha
    std::vector<int> inference_steps; // strictly increasing subset of 1..t_train

    double beta_at(int t) const;
    double alpha_at(int t) const;
    double alpha_bar_at(int t) const; // alpha_bar_at(0) == 1
    void check_step(int t) const;
};

NoiseSchedule make_linear_schedule(int t_train, double beta_start, double beta_end, int t_inf);

enum class SigmaForm {
    paper,     // eta * (1 - abar_prev) / (1 - abar_t) * beta_t, as printed
    ddim_sqrt, // canonical DDIM: eta * sqrt((1-abar_prev)/(1-abar_t)) * sqrt(1 - abar_t/abar_prev)
};

struct GuidanceParams {
    double w = 0.0;   // guidance scale, >= 0
    double eta = 0.0; // DDIM stochasticity in [0,1]
    SigmaForm sigma_form = SigmaForm::paper;
};

double ddim_sigma(const NoiseSchedule& sched, int t, int t_prev, const GuidanceParams& g);

/// q(z_t | z_0): sqrt(abar_t) z0 + sqrt(1-abar_t) eps. Differentiable in z0 and eps.
Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched);

/// One DDPM reverse step at t. Callers must pass zero noise at t == 1.
Tensor ddpm_step(const Tensor& z_t, int t, const Tensor& eps_pred, const Tensor& noise,
                 const NoiseSchedule& sched);

/// One DDIM step t -> t_prev. Warns (via counter) and clamps if the direction
/// coefficient would go negative.
Tensor ddim_step(const Tensor& z_t, int t, int t_prev, const Tensor& eps_pred,
                 const GuidanceParams& g, const Tensor& noise, const NoiseSchedule& sched,
                 int* clamp_warnings = nullptr);

/// Conditional noise predictor; nullopt condition means the null token.
using DenoiserFn = std::function<Tensor(const Tensor& z_t, int t, const std::optional<Tensor>& c)>;

/// Classifier-free guidance: (1+w) eps(z,t,c) - w eps(z,t,null).
Tensor cfg_predict(const DenoiserFn& denoiser, const Tensor& z_t, int t,
                   const std::optional<Tensor>& c, const GuidanceParams& g);

/// SDEdit: forward-diffuse to the K-th inference step, then K guided DDPM
/// steps back. K = 0 returns z0 unchanged. Differentiable in z0 and c; the
/// noise draws come from rng and enter as constants.
Tensor sdedit(const DenoiserFn& denoiser, const Tensor& z0, int k,
              const std::optional<Tensor>& c, const GuidanceParams& g,
              const NoiseSchedule& sched, Rng& rng);

/// Gaussian tensor drawn elementwise from rng (constant, no graph).
Tensor gaussian_like(const Tensor& t, Rng& rng);

} // namespace latshield
