#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "latshield/rng.hpp"
#include "latshield/tensor.hpp"

using namespace latshield;

namespace {

Tensor rand_tensor(std::vector<int> shape, Rng& rng, Dtype dt = Dtype::f64, double lo = -1,
                   double hi = 1) {
    int n = 1;
    for (int d : shape) n *= d;
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v), dt);
}

} // namespace

TEST_CASE("forward values of basic primitives") {
    Tensor x({3}, {1, 2, 3});
    CHECK(sum(mul(x, x)).item() == doctest::Approx(14.0)); // sum of squares
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor prod = matmul(a, eye);
    for (int i = 0; i < 4; ++i) CHECK(prod.at(i) == a.at(i));
    Tensor d = detach(x);
    for (int i = 0; i < 3; ++i) CHECK(d.at(i) == x.at(i));
}

TEST_CASE("backward analytic examples") {
    // d/dx sum(x*x) = 2x
    Tape tape;
    Tensor x = tape.leaf(Tensor({3}, {1, 2, 3}, Dtype::f64));
    tape.backward(sum(mul(x, x)));
    Tensor g = tape.grad(x);
    CHECK(g.at(0) == doctest::Approx(2));
    CHECK(g.at(1) == doctest::Approx(4));
    CHECK(g.at(2) == doctest::Approx(6));
}

TEST_CASE("backward of matmul") {
    Tape tape;
    Tensor a = tape.leaf(Tensor::full({2, 2}, 1.0, Dtype::f64));
    Tensor b = Tensor::full({2, 2}, 1.0, Dtype::f64);
    tape.backward(sum(matmul(a, b)));
    Tensor g = tape.grad(a);
    for (int i = 0; i < 4; ++i) CHECK(g.at(i) == doctest::Approx(2.0));
}

TEST_CASE("detach forces single product-rule term") {
    Tape tape;
    Tensor x = tape.leaf(Tensor::scalar(3.0, Dtype::f64));
    Tensor y = mul(detach(x), x); // d/dx = detach(x) = 3, not 6
    tape.backward(y);
    CHECK(tape.grad(x).item() == doctest::Approx(3.0));
}

TEST_CASE("detach contributes bitwise zero") {
    Tape tape;
    Tensor x = tape.leaf(Tensor({4}, {0.5, -1.5, 2.0, 0.25}, Dtype::f64));
    Tensor y = sum(square(detach(x)));
    tape.backward(y);
    Tensor g = tape.grad(x);
    for (int i = 0; i < 4; ++i) CHECK(g.at(i) == 0.0);
}

TEST_CASE("non-scalar backward and shape errors are rejected") {
    Tape tape;
    Tensor x = tape.leaf(Tensor({3}, {1, 2, 3}));
    CHECK_THROWS_AS(tape.backward(mul(x, x)), ValueError);
    CHECK_THROWS_AS(add(Tensor({3}, {1, 2, 3}), Tensor({4}, {1, 2, 3, 4})), ShapeError);
    CHECK_THROWS_AS(matmul(Tensor({2, 3}, std::vector<double>(6, 1.0)),
                           Tensor({2, 3}, std::vector<double>(6, 1.0))),
                    ShapeError);
}

TEST_CASE("domain errors for log and sqrt") {
    CHECK_THROWS_AS(log_(Tensor({2}, {1.0, -1.0})), DomainError);
    CHECK_THROWS_AS(sqrt_(Tensor({1}, {-0.5})), DomainError);
}

TEST_CASE("f32 tensors are float-rounded after every primitive") {
    Tensor a = Tensor::scalar(1.0 / 3.0, Dtype::f32);
    Tensor b = Tensor::scalar(2.0 / 7.0, Dtype::f32);
    Tensor c = mul(a, b);
    CHECK(c.item() == static_cast<double>(static_cast<float>(c.item())));
    Tensor d64 = mul(a.astype(Dtype::f64), b.astype(Dtype::f64));
    CHECK(d64.item() != c.item()); // f64 path keeps the extra bits
}

TEST_CASE("broadcast, reshape, concat, slice round out shapes") {
    Tensor row({1, 3}, {1, 2, 3});
    Tensor b = broadcast(row, {2, 3});
    CHECK(b.shape() == std::vector<int>{2, 3});
    CHECK(b.at(5) == 3);
    Tensor r = reshape(b, {3, 2});
    CHECK(r.shape() == std::vector<int>{3, 2});
    Tensor c = concat({row, row}, 0);
    CHECK(c.shape() == std::vector<int>{2, 3});
    Tensor s = slice(c, 1, 1, 2);
    CHECK(s.shape() == std::vector<int>{2, 2});
    CHECK(s.at(0) == 2);
    CHECK_THROWS_AS(reshape(row, {4}), ShapeError);
    CHECK_THROWS_AS(slice(row, 1, 2, 5), ShapeError);
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(5);
    Tensor x = rand_tensor({4, 6}, rng, Dtype::f64, -3, 3);
    Tensor p = softmax(x);
    for (int r = 0; r < 4; ++r) {
        double s = 0;
        for (int c = 0; c < 6; ++c) s += p.at(r * 6 + c);
        CHECK(s == doctest::Approx(1.0));
    }
}

TEST_CASE("finite_diff_check oracle cases") {
    Rng rng(11);
    Tensor x = rand_tensor({5}, rng);
    auto sum_sq = [](Tape&, const Tensor& t) { return sum(mul(t, t)); };
    CHECK(finite_diff_check(sum_sq, x, 1e-5) < 1e-6);

    auto constant = [](Tape&, const Tensor& t) { return sum(mul(t, 0.0)); };
    CHECK(finite_diff_check(constant, x, 1e-5) == doctest::Approx(0.0));

    // a fully detached output leaves nothing on the tape; backward refuses
    auto detached = [](Tape&, const Tensor& t) { return sum(square(detach(t).constant())); };
    CHECK_THROWS_AS(finite_diff_check(detached, x, 1e-5), ValueError);
}

TEST_CASE("every differentiable primitive matches finite differences") {
    // 100 random inputs spread over the catalog, rel err < 1e-5 (f64).
    Rng rng(123);
    int cases = 0;
    auto run = [&](const std::string& tag, const Tensor& x, const Tensor& other, OpAttrs at) {
        auto f = [&](Tape&, const Tensor& t) {
            std::vector<Tensor> in = {t};
            if (other.defined()) in.push_back(other.constant());
            Tensor y = apply_primitive(tag, in, at);
            return sum(mul(y, y)); // scalarize smoothly
        };
        const double err = finite_diff_check(f, x, 1e-6);
        INFO(tag);
        CHECK(err < 1e-5);
        ++cases;
    };
    for (int rep = 0; rep < 5; ++rep) {
        Tensor x = rand_tensor({2, 3}, rng);
        Tensor pos = rand_tensor({2, 3}, rng, Dtype::f64, 0.3, 2.0);
        Tensor other = rand_tensor({2, 3}, rng, Dtype::f64, 0.5, 1.5);
        Tensor m = rand_tensor({3, 2}, rng);
        OpAttrs none;
        run("add", x, other, none);
        run("sub", x, other, none);
        run("mul", x, other, none);
        run("div", x, other, none);
        run("neg", x, {}, none);
        run("matmul", x, m, none);
        OpAttrs ax0; ax0.axis = 0;
        run("sum", x, {}, ax0);
        OpAttrs ax1; ax1.axis = 1;
        run("mean", x, {}, ax1);
        OpAttrs bc; bc.shape = {2, 3};
        run("broadcast", rand_tensor({1, 3}, rng), {}, bc);
        OpAttrs rs; rs.shape = {3, 2};
        run("reshape", x, {}, rs);
        OpAttrs cat; cat.axis = 0;
        run("concat", x, other, cat);
        OpAttrs sl; sl.axis = 1; sl.start = 1; sl.len = 2;
        run("slice", x, {}, sl);
        run("relu", pos, {}, none); // away from the kink
        run("tanh", x, {}, none);
        run("sin", x, {}, none);
        run("cos", x, {}, none);
        run("exp", x, {}, none);
        run("log", pos, {}, none);
        run("sqrt", pos, {}, none);
        run("square", x, {}, none);
        run("l2norm", pos, {}, none);
        run("softmax", x, {}, none);
        run("mse", x, other, none);
        OpAttrs cl; cl.lo = -10; cl.hi = 10; // pass-through region
        run("clamp", x, {}, cl);
    }
    CHECK(cases >= 100);
}

TEST_CASE("apply_primitive rejects unknown tags and bad arity") {
    Tensor x({2}, {1, 2});
    CHECK_THROWS_AS(apply_primitive("conv2d", {x}, {}), ValueError);
    CHECK_THROWS_AS(apply_primitive("add", {x}, {}), ValueError);
}

TEST_CASE("gradient accumulation for shared nodes is deterministic") {
    auto run_once = [] {
        Tape tape;
        Tensor x = tape.leaf(Tensor({3}, {0.3, -0.7, 1.1}, Dtype::f64));
        Tensor y = add(mul(x, x), mul(x, 2.0));
        tape.backward(sum(y));
        return tape.grad(x);
    };
    Tensor g1 = run_once(), g2 = run_once();
    for (int i = 0; i < 3; ++i) CHECK(g1.at(i) == g2.at(i));
}

TEST_CASE("clamp passes gradient inside bounds and blocks outside") {
    Tape tape;
    Tensor x = tape.leaf(Tensor({3}, {-2.0, 0.5, 2.0}, Dtype::f64));
    tape.backward(sum(clamp(x, -1.0, 1.0)));
    Tensor g = tape.grad(x);
    CHECK(g.at(0) == 0.0);
    CHECK(g.at(1) == 1.0);
    CHECK(g.at(2) == 0.0);
}
