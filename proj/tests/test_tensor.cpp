#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include "dtp/tensor.hpp"
#include "support/gradcheck.hpp"

using dtp::Tensor;
using dtp::testing::check_gradients;

TEST_CASE("tensor invariants", "[tensor]") {
    Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    REQUIRE(t.size() == 6);
    REQUIRE(t.rows() == 2);
    REQUIRE(t.cols() == 3);
    REQUIRE(t(1, 2) == 6.0);
    REQUIRE_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), dtp::ShapeError);

    t.zero_grad();
    REQUIRE(t.grad().size() == t.size());
}

TEST_CASE("matmul identity and hand arithmetic", "[tensor]") {
    Tensor i2 = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor prod = dtp::matmul(i2, i2);
    REQUIRE(prod.values() == std::vector<double>{1, 0, 0, 1});

    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 1}, {1, 1});
    Tensor c = dtp::matmul(a, b);
    REQUIRE(c.values() == std::vector<double>{3, 7});

    REQUIRE_THROWS_AS(dtp::matmul(a, Tensor::zeros({3, 2})), dtp::ShapeError);
    try {
        dtp::matmul(a, Tensor::zeros({3, 2}));
    } catch (const dtp::ShapeError& e) {
        // message must name both shapes
        REQUIRE(std::string(e.what()).find("[2x2]") != std::string::npos);
        REQUIRE(std::string(e.what()).find("[3x2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient of sum equals ones * b^T", "[tensor]") {
    dtp::RandomSource rng(7);
    Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor b = Tensor::randn({4, 2}, rng, 1.0, true);
    a.zero_grad();
    b.zero_grad();
    Tensor s = dtp::sum(dtp::matmul(a, b));
    dtp::backward(s);

    // d(sum(AB))/dA = ones(3,2) * B^T, computed independently here
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t l = 0; l < 4; ++l) {
            double expect = 0.0;
            for (std::size_t j = 0; j < 2; ++j) expect += b.values()[l * 2 + j];
            REQUIRE_THAT(a.grad()[i * 4 + l], Catch::Matchers::WithinRel(expect, 1e-12));
        }

    auto r = check_gradients(
        [&](const std::vector<Tensor>& ps) { return dtp::sum(dtp::matmul(ps[0], ps[1])); },
        {a, b});
    INFO(r.detail);
    REQUIRE(r.ok);
}

TEST_CASE("softmax symmetry, closed form, oracle", "[tensor]") {
    Tensor same = Tensor::from_data({3}, {0.4, 0.4, 0.4});
    Tensor p = dtp::softmax(same, 2.5);
    for (double v : p.values()) REQUIRE_THAT(v, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));

    Tensor two = Tensor::from_data({2}, {0.0, std::log(3.0)});
    Tensor q = dtp::softmax(two, 1.0);
    REQUIRE_THAT(q.values()[0], Catch::Matchers::WithinAbs(0.25, 1e-12));
    REQUIRE_THAT(q.values()[1], Catch::Matchers::WithinAbs(0.75, 1e-12));

    // x = [1,2,3] with exponent 1/t, t = 2: direct formula evaluation
    const double t = 2.0;
    std::vector<double> x{1, 2, 3};
    double z = 0.0;
    std::vector<double> expect(3);
    for (int i = 0; i < 3; ++i) z += std::exp(x[i] / t);
    for (int i = 0; i < 3; ++i) expect[i] = std::exp(x[i] / t) / z;
    Tensor got = dtp::softmax(Tensor::from_data({3}, x), 1.0 / t);
    for (int i = 0; i < 3; ++i)
        REQUIRE_THAT(got.values()[i], Catch::Matchers::WithinRel(expect[i], 1e-12));

    REQUIRE_THROWS_AS(dtp::softmax(two, 0.0), dtp::DomainError);
    REQUIRE_THROWS_AS(dtp::softmax(two, -1.0), dtp::DomainError);
}

TEST_CASE("softmax outputs valid probability vectors", "[tensor][property]") {
    dtp::RandomSource rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t n = 1 + rng.below(8);
        Tensor x = Tensor::randn({n}, rng, 5.0);
        Tensor p = dtp::softmax(x, rng.uniform(0.1, 4.0));
        double total = 0.0;
        for (double v : p.values()) {
            REQUIRE(v > 0.0);
            total += v;
        }
        REQUIRE_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-9));
    }
}

TEST_CASE("backward on sum gives ones; mean of squares hand derivative", "[tensor]") {
    dtp::RandomSource rng(3);
    Tensor x = Tensor::randn({2, 3}, rng, 1.0, true);
    x.zero_grad();
    dtp::backward(dtp::sum(x));
    for (double g : x.grad()) REQUIRE(g == 1.0);

    Tensor y = Tensor::from_data({3}, {1, 2, 3}, true);
    y.zero_grad();
    dtp::backward(dtp::mean(dtp::mul(y, y)));
    REQUIRE_THAT(y.grad()[0], Catch::Matchers::WithinRel(2.0 / 3.0, 1e-12));
    REQUIRE_THAT(y.grad()[1], Catch::Matchers::WithinRel(4.0 / 3.0, 1e-12));
    REQUIRE_THAT(y.grad()[2], Catch::Matchers::WithinRel(2.0, 1e-12));
}

TEST_CASE("backward contract errors and accumulation", "[tensor]") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    REQUIRE_THROWS_AS(dtp::backward(dtp::mul(x, x)), dtp::ContractError);

    Tensor untracked = Tensor::from_data({}, {1.0});
    REQUIRE_THROWS_AS(dtp::backward(untracked), dtp::ContractError);

    // repeated backward without reset accumulates
    x.zero_grad();
    Tensor s = dtp::sum(x);
    dtp::backward(s);
    dtp::backward(s);
    REQUIRE(x.grad()[0] == 2.0);
}

TEST_CASE("elementwise and reduction gradients match finite differences", "[tensor][grad]") {
    dtp::RandomSource rng(17);
    for (auto shape : {dtp::Shape{3}, dtp::Shape{2, 2}, dtp::Shape{1, 5}}) {
        Tensor a = Tensor::randn(shape, rng, 1.0, true);
        Tensor b = Tensor::randn(shape, rng, 1.0, true);
        // keep b away from zero for div
        for (double& v : b.raw_values()) v = v >= 0 ? v + 0.5 : v - 0.5;

        auto composite = [](const std::vector<Tensor>& ps) {
            Tensor u = dtp::add(dtp::mul(ps[0], ps[1]), dtp::exp(ps[0]));
            Tensor w = dtp::div(u, ps[1]);
            return dtp::mean(dtp::mul(w, w));
        };
        auto r = check_gradients(composite, {a, b});
        INFO(r.detail);
        REQUIRE(r.ok);

        Tensor c = Tensor::randn(shape, rng, 0.5, true);
        for (double& v : c.raw_values()) v = std::fabs(v) + 0.1;  // positive for log/sqrt/pow
        auto unary = [](const std::vector<Tensor>& ps) {
            return dtp::sum(dtp::add(dtp::log(ps[0]),
                                     dtp::mul(dtp::sqrt(ps[0]), dtp::pow_scalar(ps[0], 1.7))));
        };
        auto r2 = check_gradients(unary, {c});
        INFO(r2.detail);
        REQUIRE(r2.ok);
    }
}

TEST_CASE("softmax and logsumexp gradients match finite differences", "[tensor][grad]") {
    dtp::RandomSource rng(23);
    for (int trial = 0; trial < 3; ++trial) {
        Tensor x = Tensor::randn({3, 4}, rng, 2.0, true);
        Tensor w = Tensor::randn({3, 4}, rng, 1.0);
        auto f = [&w](const std::vector<Tensor>& ps) {
            return dtp::sum(dtp::mul(dtp::row_softmax(ps[0]), w));
        };
        auto r = check_gradients(f, {x});
        INFO(r.detail);
        REQUIRE(r.ok);

        auto g = [](const std::vector<Tensor>& ps) { return dtp::sum(dtp::row_logsumexp(ps[0])); };
        auto r2 = check_gradients(g, {x});
        INFO(r2.detail);
        REQUIRE(r2.ok);
    }
}

TEST_CASE("slice and concat gradients route correctly", "[tensor][grad]") {
    dtp::RandomSource rng(31);
    Tensor x = Tensor::randn({4, 3}, rng, 1.0, true);
    Tensor y = Tensor::randn({2, 3}, rng, 1.0, true);
    auto f = [](const std::vector<Tensor>& ps) {
        Tensor top = dtp::slice_rows(ps[0], 0, 2);
        Tensor cat = dtp::concat_rows({top, ps[1]});
        Tensor left = dtp::slice_cols(cat, 0, 2);
        Tensor wide = dtp::concat_cols({left, left});
        return dtp::mean(dtp::mul(wide, wide));
    };
    auto r = check_gradients(f, {x, y});
    INFO(r.detail);
    REQUIRE(r.ok);
}

TEST_CASE("normalize and cosine helpers", "[tensor]") {
    dtp::RandomSource rng(5);
    Tensor x = Tensor::randn({3, 4}, rng, 2.0, true);
    Tensor n = dtp::l2_normalize_rows(x);
    for (std::size_t i = 0; i < 3; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 4; ++j) s += n(i, j) * n(i, j);
        REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-12));
    }

    // zero rows survive the clamp without NaN
    Tensor z = Tensor::zeros({1, 4}, true);
    z.zero_grad();
    Tensor nz = dtp::l2_normalize_rows(z);
    dtp::backward(dtp::sum(nz));
    for (double g : z.grad()) REQUIRE(std::isfinite(g));

    auto f = [](const std::vector<Tensor>& ps) {
        return dtp::sum(dtp::row_cosine(ps[0], ps[1]));
    };
    Tensor a = Tensor::randn({2, 5}, rng, 1.0, true);
    Tensor b = Tensor::randn({2, 5}, rng, 1.0, true);
    auto r = check_gradients(f, {a, b});
    INFO(r.detail);
    REQUIRE(r.ok);
}

TEST_CASE("determinism: identical seeds give bit-identical outputs and gradients",
          "[tensor][property]") {
    auto run = [] {
        dtp::RandomSource rng(99);
        Tensor a = Tensor::randn({4, 4}, rng, 1.0, true);
        Tensor b = Tensor::randn({4, 4}, rng, 1.0, true);
        a.zero_grad();
        b.zero_grad();
        Tensor loss =
            dtp::mean(dtp::mul(dtp::row_softmax(dtp::matmul(a, b)), dtp::exp(dtp::mul_scalar(b, 0.1))));
        dtp::backward(loss);
        std::vector<double> out = loss.values();
        out.insert(out.end(), a.grad().begin(), a.grad().end());
        out.insert(out.end(), b.grad().begin(), b.grad().end());
        return out;
    };
    auto r1 = run();
    auto r2 = run();
    REQUIRE(r1.size() == r2.size());
    REQUIRE(std::memcmp(r1.data(), r2.data(), r1.size() * sizeof(double)) == 0);
}

TEST_CASE("detach stops gradient flow", "[tensor]") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    x.zero_grad();
    Tensor d = x.detach();
    REQUIRE_FALSE(d.requires_grad());
    Tensor y = Tensor::from_data({2}, {3, 4}, true);
    y.zero_grad();
    dtp::backward(dtp::sum(dtp::mul(d, y)));
    REQUIRE(y.grad()[0] == 1.0);
    REQUIRE(x.grad() == std::vector<double>{0, 0});
}
