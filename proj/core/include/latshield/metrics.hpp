#pragma once

#include <string>
#include <vector>

#include "latshield/nets.hpp"

namespace latshield {

/// 10*log10(1/MSE) over [0,1] images; identical images return the cap 99.0.
double psnr(const Tensor& a, const Tensor& b);

/// Mean local SSIM, 11x11 Gaussian window sigma = 1.5, K1 = 0.01, K2 = 0.03,
/// dynamic range 1, reflect padding.
double ssim(const Tensor& a, const Tensor& b);

/// <f_id(a), f_id(b)> with unit-norm embeddings.
double cosine_similarity(const ModelBundle& m, const Tensor& a, const Tensor& b);
double cosine_of_embeddings(const Tensor& ea, const Tensor& eb);

/// 2-Wasserstein distance between Gaussians fit to the two feature sets
/// (rows = samples). Sets smaller than 17 samples use diagonal covariances.
double frechet_feature_distance(const std::vector<std::vector<double>>& a,
                                const std::vector<std::vector<double>>& b);

/// One-sided sign test: P(#positives >= observed | p = 1/2) over nonzero
/// paired differences d_i = x_i - y_i; tests median(x) > median(y).
double sign_test_p_value(const std::vector<double>& x, const std::vector<double>& y);

double median(std::vector<double> v);

struct MetricsRow {
    std::string condition; // clean | x_adv | x_adv_diff
    std::string defense;   // none | blur | jpeg | purify
    double psnr = 0, ssim = 0, cs_src = 0, cs_att = 0, frechet = 0;
    int n_pairs = 0;
};

void write_report_csv(const std::vector<MetricsRow>& rows, const std::string& path,
                      const std::vector<std::string>& extra_cols = {},
                      const std::vector<std::vector<std::string>>& extra_vals = {});

/// Aggregates per-pair measurements into one report row. psnr/ssim are means,
/// cs columns medians, frechet from the pooled embedding sets.
MetricsRow aggregate_row(const std::string& condition, const std::string& defense,
                         const std::vector<double>& psnrs, const std::vector<double>& ssims,
                         const std::vector<double>& cs_src, const std::vector<double>& cs_att,
                         const std::vector<std::vector<double>>& feats_ref,
                         const std::vector<std::vector<double>>& feats_cur);

} // namespace latshield
