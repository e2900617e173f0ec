#include "latshield/schedule.hpp"

#include <cmath>

namespace latshield {

double NoiseSchedule::beta_at(int t) const {
    check_step(t);
    return beta[t - 1];
}

double NoiseSchedule::alpha_at(int t) const {
    check_step(t);
    return alpha[t - 1];
}

double NoiseSchedule::alpha_bar_at(int t) const {
    if (t == 0) return 1.0;
    check_step(t);
    return alpha_bar[t - 1];
}

void NoiseSchedule::check_step(int t) const {
    if (t < 1 || t > t_train)
        throw ConfigError("schedule: step " + std::to_string(t) + " outside [1," +
                          std::to_string(t_train) + "]");
}

NoiseSchedule make_linear_schedule(int t_train, double beta_start, double beta_end, int t_inf) {
    if (t_train < 1) throw ConfigError("schedule: t_train must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
    if (t_inf < 1 || t_inf > t_train)
        throw ConfigError("schedule: t_inf must be in [1, t_train]");
    NoiseSchedule s;
    s.t_train = t_train;
    s.beta.resize(t_train);
    s.alpha.resize(t_train);
    s.alpha_bar.resize(t_train);
    double prod = 1.0;
    for (int i = 0; i < t_train; ++i) {
        const double frac = t_train == 1 ? 0.0 : static_cast<double>(i) / (t_train - 1);
        s.beta[i] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[i] = 1.0 - s.beta[i];
        prod *= s.alpha[i];
        s.alpha_bar[i] = prod;
    }
    // evenly spaced over [1, t_train], rounded to nearest, deduplicated ascending
    int prev = 0;
    for (int i = 0; i < t_inf; ++i) {
        const double pos = t_inf == 1 ? t_train
                                      : 1.0 + static_cast<double>(i) * (t_train - 1) / (t_inf - 1);
        int step = static_cast<int>(std::lround(pos));
        if (step > prev) {
            s.inference_steps.push_back(step);
            prev = step;
        }
    }
    return s;
}

double ddim_sigma(const NoiseSchedule& sched, int t, int t_prev, const GuidanceParams& g) {
    const double abar_t = sched.alpha_bar_at(t);
    const double abar_p = sched.alpha_bar_at(t_prev);
    if (g.sigma_form == SigmaForm::paper)
        return g.eta * ((1.0 - abar_p) / (1.0 - abar_t)) * sched.beta_at(t);
    return g.eta * std::sqrt((1.0 - abar_p) / (1.0 - abar_t)) *
           std::sqrt(1.0 - abar_t / abar_p);
}

Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    if (z0.shape() != eps.shape())
        throw ShapeError("forward_diffuse: z0 " + z0.shape_str() + " vs eps " + eps.shape_str());
    const double abar = sched.alpha_bar_at(t);
    return add(mul(z0, std::sqrt(abar)), mul(eps, std::sqrt(1.0 - abar)));
}

Tensor ddpm_step(const Tensor& z_t, int t, const Tensor& eps_pred, const Tensor& noise,
                 const NoiseSchedule& sched) {
    if (z_t.shape() != eps_pred.shape())
        throw ShapeError("ddpm_step: z_t " + z_t.shape_str() + " vs eps_pred " +
                         eps_pred.shape_str());
    const double a = sched.alpha_at(t);
    const double b = sched.beta_at(t);
    const double abar = sched.alpha_bar_at(t);
    Tensor mean_part = mul(sub(z_t, mul(eps_pred, b / std::sqrt(1.0 - abar))), 1.0 / std::sqrt(a));
    return add(mean_part, mul(noise, std::sqrt(b)));
}

Tensor ddim_step(const Tensor& z_t, int t, int t_prev, const Tensor& eps_pred,
                 const GuidanceParams& g, const Tensor& noise, const NoiseSchedule& sched,
                 int* clamp_warnings) {
    if (t_prev >= t) throw ConfigError("ddim_step: t_prev must be < t");
    const double abar_t = sched.alpha_bar_at(t);
    const double abar_p = sched.alpha_bar_at(t_prev);
    const double sigma = ddim_sigma(sched, t, t_prev, g);
    double dir_sq = 1.0 - abar_p - sigma * sigma;
    if (dir_sq < 0.0) {
        dir_sq = 0.0;
        if (clamp_warnings) ++*clamp_warnings;
    }
    Tensor x0_pred = div(sub(z_t, mul(eps_pred, std::sqrt(1.0 - abar_t))), std::sqrt(abar_t));
    Tensor out = add(mul(x0_pred, std::sqrt(abar_p)), mul(eps_pred, std::sqrt(dir_sq)));
    if (sigma != 0.0) out = add(out, mul(noise, sigma));
    return out;
}

Tensor cfg_predict(const DenoiserFn& denoiser, const Tensor& z_t, int t,
                   const std::optional<Tensor>& c, const GuidanceParams& g) {
    if (!c.has_value()) return denoiser(z_t, t, std::nullopt);
    Tensor eps_c = denoiser(z_t, t, c);
    if (g.w == 0.0) return eps_c;
    Tensor eps_null = denoiser(z_t, t, std::nullopt);
    return sub(mul(eps_c, 1.0 + g.w), mul(eps_null, g.w));
}

Tensor gaussian_like(const Tensor& t, Rng& rng) {
    std::vector<double> v(t.size());
    for (double& x : v) x = rng.gaussian();
    return Tensor(t.shape(), std::move(v), t.dtype());
}

Tensor sdedit(const DenoiserFn& denoiser, const Tensor& z0, int k,
              const std::optional<Tensor>& c, const GuidanceParams& g,
              const NoiseSchedule& sched, Rng& rng) {
    const int n_inf = static_cast<int>(sched.inference_steps.size());
    if (k < 0 || k > n_inf)
        throw ConfigError("sdedit: depth " + std::to_string(k) + " outside [0," +
                          std::to_string(n_inf) + "]");
    if (k == 0) return z0;
    Tensor z = forward_diffuse(z0, sched.inference_steps[k - 1], gaussian_like(z0, rng), sched);
    for (int i = k; i >= 1; --i) {
        const int t = sched.inference_steps[i - 1];
        Tensor eps = cfg_predict(denoiser, z, t, c, g);
        Tensor noise = i == 1 ? Tensor::zeros(z0.shape(), z0.dtype()) : gaussian_like(z0, rng);
        z = ddpm_step(z, t, eps, noise, sched);
    }
    return z;
}

} // namespace latshield
