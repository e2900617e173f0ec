#include "latshield/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <lapacke.h>

#include "latshield/image_io.hpp"

namespace latshield {

double psnr(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("psnr: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    double acc = 0.0;
    for (int i = 0; i < a.size(); ++i) {
        const double d = a.at(i) - b.at(i);
        acc += d * d;
    }
    const double mse = acc / a.size();
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kWin = 11;
constexpr double kC1 = 0.01 * 0.01; // (K1 * L)^2, L = 1
constexpr double kC2 = 0.03 * 0.03;

const std::vector<double>& ssim_window() {
    static const std::vector<double> w = [] {
        std::vector<double> k(kWin * kWin);
        const double sigma = 1.5;
        double sum = 0.0;
        for (int y = 0; y < kWin; ++y)
            for (int x = 0; x < kWin; ++x) {
                const double dy = y - kWin / 2, dx = x - kWin / 2;
                k[y * kWin + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
                sum += k[y * kWin + x];
            }
        for (double& v : k) v /= sum;
        return k;
    }();
    return w;
}

int reflect_idx(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

} // namespace

double ssim(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("ssim: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    if (a.shape().size() != 2 || a.shape()[0] < kWin || a.shape()[1] < kWin)
        throw ShapeError("ssim: image smaller than 11x11 window: " + a.shape_str());
    const int h = a.shape()[0], w = a.shape()[1];
    const auto& win = ssim_window();
    const int r = kWin / 2;

    double total = 0.0;
    for (int cy = 0; cy < h; ++cy) {
        for (int cx = 0; cx < w; ++cx) {
            double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
            for (int y = 0; y < kWin; ++y)
                for (int x = 0; x < kWin; ++x) {
                    const int iy = reflect_idx(cy + y - r, h), ix = reflect_idx(cx + x - r, w);
                    const double wv = win[y * kWin + x];
                    const double pa = a.at(iy * w + ix), pb = b.at(iy * w + ix);
                    ma += wv * pa;
                    mb += wv * pb;
                    va += wv * pa * pa;
                    vb += wv * pb * pb;
                    cov += wv * pa * pb;
                }
            va -= ma * ma;
            vb -= mb * mb;
            cov -= ma * mb;
            const double num = (2 * ma * mb + kC1) * (2 * cov + kC2);
            const double den = (ma * ma + mb * mb + kC1) * (va + vb + kC2);
            total += num / den;
        }
    }
    return total / (static_cast<double>(h) * w);
}

double cosine_of_embeddings(const Tensor& ea, const Tensor& eb) {
    if (ea.size() != eb.size())
        throw ShapeError("cosine: embedding size mismatch");
    double dot = 0;
    for (int i = 0; i < ea.size(); ++i) dot += ea.at(i) * eb.at(i);
    return dot;
}

double cosine_similarity(const ModelBundle& m, const Tensor& a, const Tensor& b) {
    return cosine_of_embeddings(embed_identity(m, as_batch(a)), embed_identity(m, as_batch(b)));
}

namespace {

struct Moments {
    std::vector<double> mu;
    std::vector<double> cov; // d x d row-major
};

Moments fit_gaussian(const std::vector<std::vector<double>>& s, bool diagonal) {
    const int n = static_cast<int>(s.size());
    const int d = static_cast<int>(s[0].size());
    Moments m;
    m.mu.assign(d, 0.0);
    for (const auto& row : s)
        for (int j = 0; j < d; ++j) m.mu[j] += row[j];
    for (double& v : m.mu) v /= n;
    m.cov.assign(static_cast<size_t>(d) * d, 0.0);
    for (const auto& row : s)
        for (int i = 0; i < d; ++i) {
            const double di = row[i] - m.mu[i];
            if (diagonal) {
                m.cov[i * d + i] += di * di;
            } else {
                for (int j = 0; j < d; ++j) m.cov[i * d + j] += di * (row[j] - m.mu[j]);
            }
        }
    const double denom = std::max(1, n - 1);
    for (double& v : m.cov) v /= denom;
    return m;
}

// Trace of the principal square root of the symmetric part of (Sa * Sb).
// Uses sqrt(Sa) * Sb * sqrt(Sa), which is symmetric PSD with the same
// eigenvalues as Sa * Sb for PSD inputs.
double trace_sqrt_product(const std::vector<double>& sa, const std::vector<double>& sb, int d) {
    std::vector<double> a = sa, eval(d);
    if (LAPACKE_dsyev(LAPACK_ROW_MAJOR, 'V', 'U', d, a.data(), d, eval.data()) != 0)
        throw ValueError("frechet: eigendecomposition failed");
    // sqrt(Sa) = V diag(sqrt(clamp(eval))) V^T
    std::vector<double> root(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double acc = 0.0;
            for (int k = 0; k < d; ++k) {
                const double ev = std::max(0.0, eval[k]);
                acc += a[i * d + k] * std::sqrt(ev) * a[j * d + k];
            }
            root[i * d + j] = acc;
        }
    // M = root * Sb * root
    std::vector<double> tmp(static_cast<size_t>(d) * d, 0.0), msym(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double acc = 0.0;
            for (int k = 0; k < d; ++k) acc += root[i * d + k] * sb[k * d + j];
            tmp[i * d + j] = acc;
        }
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double acc = 0.0;
            for (int k = 0; k < d; ++k) acc += tmp[i * d + k] * root[k * d + j];
            msym[i * d + j] = acc;
        }
    // symmetrize against round-off, then sum sqrt of eigenvalues
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double v = 0.5 * (msym[i * d + j] + msym[j * d + i]);
            msym[i * d + j] = msym[j * d + i] = v;
        }
    if (LAPACKE_dsyev(LAPACK_ROW_MAJOR, 'N', 'U', d, msym.data(), d, eval.data()) != 0)
        throw ValueError("frechet: eigendecomposition failed");
    double tr = 0.0;
    for (int k = 0; k < d; ++k) tr += std::sqrt(std::max(0.0, eval[k]));
    return tr;
}

} // namespace

double frechet_feature_distance(const std::vector<std::vector<double>>& a,
                                const std::vector<std::vector<double>>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw ValueError("frechet: need at least 2 samples per set");
    const int d = static_cast<int>(a[0].size());
    for (const auto& row : a)
        if (static_cast<int>(row.size()) != d) throw ShapeError("frechet: ragged feature set");
    for (const auto& row : b)
        if (static_cast<int>(row.size()) != d) throw ShapeError("frechet: ragged feature set");

    const bool diagonal = static_cast<int>(std::min(a.size(), b.size())) < d + 1;
    Moments ma = fit_gaussian(a, diagonal), mb = fit_gaussian(b, diagonal);

    double dist = 0.0;
    for (int i = 0; i < d; ++i) {
        const double dm = ma.mu[i] - mb.mu[i];
        dist += dm * dm;
    }
    double tr_sum = 0.0;
    for (int i = 0; i < d; ++i) tr_sum += ma.cov[i * d + i] + mb.cov[i * d + i];
    double tr_cross;
    if (diagonal) {
        tr_cross = 0.0;
        for (int i = 0; i < d; ++i)
            tr_cross += std::sqrt(std::max(0.0, ma.cov[i * d + i] * mb.cov[i * d + i]));
    } else {
        tr_cross = trace_sqrt_product(ma.cov, mb.cov, d);
    }
    return dist + tr_sum - 2.0 * tr_cross;
}

double sign_test_p_value(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ValueError("sign test: unpaired samples");
    int n = 0, pos = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        if (d == 0.0) continue;
        ++n;
        if (d > 0) ++pos;
    }
    if (n == 0) return 1.0;
    // P(K >= pos) for K ~ Binomial(n, 1/2), summed via log-gamma for stability
    double p = 0.0;
    for (int k = pos; k <= n; ++k) {
        const double logc = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
        p += std::exp(logc - n * std::log(2.0));
    }
    return std::min(1.0, p);
}

double median(std::vector<double> v) {
    if (v.empty()) throw ValueError("median: empty sample");
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

MetricsRow aggregate_row(const std::string& condition, const std::string& defense,
                         const std::vector<double>& psnrs, const std::vector<double>& ssims,
                         const std::vector<double>& cs_src, const std::vector<double>& cs_att,
                         const std::vector<std::vector<double>>& feats_ref,
                         const std::vector<std::vector<double>>& feats_cur) {
    if (psnrs.empty() || psnrs.size() != ssims.size() || psnrs.size() != cs_src.size() ||
        psnrs.size() != cs_att.size())
        throw ValueError("report: mismatched pair lists for " + condition + "/" + defense);
    MetricsRow row;
    row.condition = condition;
    row.defense = defense;
    row.n_pairs = static_cast<int>(psnrs.size());
    double sp = 0, ss = 0;
    for (size_t i = 0; i < psnrs.size(); ++i) {
        sp += psnrs[i];
        ss += ssims[i];
    }
    row.psnr = sp / psnrs.size();
    row.ssim = ss / ssims.size();
    row.cs_src = median(cs_src);
    row.cs_att = median(cs_att);
    row.frechet = frechet_feature_distance(feats_ref, feats_cur);
    return row;
}

void write_report_csv(const std::vector<MetricsRow>& rows, const std::string& path,
                      const std::vector<std::string>& extra_cols,
                      const std::vector<std::vector<std::string>>& extra_vals) {
    if (!extra_cols.empty() && extra_vals.size() != rows.size())
        throw ValueError("report: extra column rows do not match report rows");
    std::vector<std::string> header = {"condition", "defense", "psnr",    "ssim",
                                       "cs_src",    "cs_att",  "frechet", "n_pairs"};
    header.insert(header.end(), extra_cols.begin(), extra_cols.end());
    CsvWriter csv(path, header);
    for (size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        std::vector<std::string> cells = {r.condition,
                                          r.defense,
                                          CsvWriter::num(r.psnr),
                                          CsvWriter::num(r.ssim),
                                          CsvWriter::num(r.cs_src),
                                          CsvWriter::num(r.cs_att),
                                          CsvWriter::num(r.frechet),
                                          std::to_string(r.n_pairs)};
        if (!extra_cols.empty())
            cells.insert(cells.end(), extra_vals[i].begin(), extra_vals[i].end());
        csv.row(cells);
    }
}

} // namespace latshield
