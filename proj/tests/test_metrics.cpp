#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "latshield/image_io.hpp"
#include "latshield/metrics.hpp"
#include "latshield/rng.hpp"

using namespace latshield;
namespace fs = std::filesystem;

namespace {

Tensor const_image(double v) { return Tensor::full({kImageSide, kImageSide}, v); }

Tensor rand_image(Rng& rng) {
    std::vector<double> v(kImageDim);
    for (double& x : v) x = rng.uniform(0, 1);
    return Tensor({kImageSide, kImageSide}, std::move(v), Dtype::f32);
}

} // namespace

TEST_CASE("psnr closed forms") {
    Tensor a = const_image(0.3), b = const_image(0.4);
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-4)); // MSE 0.01
    CHECK(psnr(a, a) == 99.0);                                // capped
    Tensor c = const_image(0.3 + 1e-9);
    CHECK(psnr(a, c) <= 99.0);
    CHECK_THROWS_AS(psnr(a, Tensor::zeros({16, 16})), ShapeError);
}

TEST_CASE("ssim closed forms and symmetry") {
    Tensor a = const_image(0.0), b = const_image(1.0);
    // constant images: luminance term only, C1 / (1 + C1)
    CHECK(ssim(a, b) == doctest::Approx(1e-4 / (1.0 + 1e-4)).epsilon(1e-4));
    Rng rng(1);
    Tensor x = rand_image(rng), y = rand_image(rng);
    CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-12));
    CHECK(ssim(x, y) <= 1.0);
    CHECK(ssim(x, y) >= -1.0);
    CHECK_THROWS_AS(ssim(Tensor::zeros({8, 8}), Tensor::zeros({8, 8})), ShapeError);
}

TEST_CASE("embedding cosine is the dot product of unit embeddings") {
    Tensor a({4}, {1, 0, 0, 0});
    Tensor b({4}, {0, 1, 0, 0});
    CHECK(cosine_of_embeddings(a, a) == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(cosine_of_embeddings(a, b) == doctest::Approx(0.0).epsilon(1e-12));
    Tensor c({4}, {-1, 0, 0, 0});
    CHECK(cosine_of_embeddings(a, c) == doctest::Approx(-1.0).epsilon(1e-7));
    const double s = std::sqrt(0.5);
    Tensor d({4}, {s, s, 0, 0});
    CHECK(cosine_of_embeddings(a, d) == doctest::Approx(s).epsilon(1e-7));
    CHECK_THROWS_AS(cosine_of_embeddings(a, Tensor::zeros({3})), ShapeError);
}

TEST_CASE("frechet distance recovers the 1-D analytic value") {
    Rng rng(7);
    std::vector<std::vector<double>> a, b;
    for (int i = 0; i < 10000; ++i) {
        a.push_back({rng.gaussian()});
        b.push_back({2.0 * rng.gaussian()});
    }
    // N(0,1) vs N(0,4): (sigma1 - sigma2)^2 = 1
    CHECK(frechet_feature_distance(a, b) == doctest::Approx(1.0).epsilon(0.05));
    CHECK(frechet_feature_distance(a, a) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("frechet mean separation in 2-D") {
    Rng rng(9);
    std::vector<std::vector<double>> a, b;
    for (int i = 0; i < 5000; ++i) {
        a.push_back({rng.gaussian(), rng.gaussian()});
        b.push_back({rng.gaussian() + 3.0, rng.gaussian() + 4.0});
    }
    // same covariance, mean shift (3,4): ||mu||^2 = 25
    CHECK(frechet_feature_distance(a, b) == doctest::Approx(25.0).epsilon(0.05));
}

TEST_CASE("frechet small-set fallback and input validation") {
    std::vector<std::vector<double>> a, b;
    Rng rng(11);
    for (int i = 0; i < 8; ++i) {
        std::vector<double> ra(16), rb(16);
        for (double& v : ra) v = rng.gaussian();
        for (double& v : rb) v = rng.gaussian() + 1.0;
        a.push_back(ra);
        b.push_back(rb);
    }
    const double d = frechet_feature_distance(a, b); // 8 < 17: diagonal covariances
    CHECK(std::isfinite(d));
    CHECK(d > 0.0);

    CHECK_THROWS_AS(frechet_feature_distance({{1.0}}, a), ValueError);
    std::vector<std::vector<double>> ragged = {{1.0, 2.0}, {1.0}};
    CHECK_THROWS_AS(frechet_feature_distance(ragged, ragged), ShapeError);
}

TEST_CASE("sign test tail probabilities") {
    std::vector<double> x(20, 1.0), y(20, 0.0);
    CHECK(sign_test_p_value(x, y) == doctest::Approx(std::pow(0.5, 20)).epsilon(1e-9));
    CHECK(sign_test_p_value(y, x) == doctest::Approx(1.0).epsilon(1e-9));

    std::vector<double> x5(5, 1.0), y5(5, 0.0);
    CHECK(sign_test_p_value(x5, y5) == doctest::Approx(1.0 / 32.0).epsilon(1e-9));

    // ties are dropped; all ties -> p = 1
    CHECK(sign_test_p_value(x, x) == 1.0);

    // balanced split: 10 of 20 positives, P(X >= 10) > 0.5
    std::vector<double> mixed = y;
    for (int i = 0; i < 10; ++i) mixed[i] = 2.0;
    CHECK(sign_test_p_value(mixed, x) > 0.5);

    CHECK_THROWS_AS(sign_test_p_value(x, std::vector<double>(3, 0.0)), ValueError);
}

TEST_CASE("median") {
    CHECK(median({3, 1, 2}) == 2.0);
    CHECK(median({4, 1, 2, 3}) == 2.5);
    CHECK(median({7}) == 7.0);
    CHECK_THROWS_AS(median({}), ValueError);
}

TEST_CASE("row aggregation and report csv layout") {
    std::vector<double> ps{20, 25, 30}, ss{0.8, 0.85, 0.9}, cs_src{0.5, 0.7, 0.9},
        cs_att{0.1, 0.2, 0.3};
    std::vector<std::vector<double>> ref, cur;
    Rng rng(13);
    for (int i = 0; i < 30; ++i) {
        ref.push_back({rng.gaussian(), rng.gaussian()});
        cur.push_back({rng.gaussian(), rng.gaussian()});
    }
    MetricsRow row = aggregate_row("x_adv", "blur", ps, ss, cs_src, cs_att, ref, cur);
    CHECK(row.condition == "x_adv");
    CHECK(row.defense == "blur");
    CHECK(row.psnr == doctest::Approx(25.0));
    CHECK(row.ssim == doctest::Approx(0.85));
    CHECK(row.cs_src == 0.7); // median
    CHECK(row.cs_att == 0.2);
    CHECK(row.n_pairs == 3);
    CHECK(row.frechet == doctest::Approx(frechet_feature_distance(ref, cur)));

    const std::string path = "metrics_report_tmp.csv";
    write_report_csv({row}, path);
    auto rows = read_csv(path);
    CHECK(rows[0] == std::vector<std::string>{"condition", "defense", "psnr", "ssim", "cs_src",
                                              "cs_att", "frechet", "n_pairs"});
    REQUIRE(rows.size() == 2);
    CHECK(rows[1][0] == "x_adv");
    CHECK(rows[1][7] == "3");

    // extra columns append after the fixed eight
    write_report_csv({row}, path, {"surrogate"}, {{"self"}});
    rows = read_csv(path);
    CHECK(rows[0].size() == 9);
    CHECK(rows[0][8] == "surrogate");
    CHECK(rows[1][8] == "self");

    CHECK_THROWS_AS(write_report_csv({row}, path, {"surrogate"}, {}), ValueError);
    fs::remove(path);
}
