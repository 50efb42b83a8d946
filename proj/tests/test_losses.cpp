#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "dtp/losses.hpp"
#include "support/gradcheck.hpp"

using dtp::BatchFeatures;
using dtp::Tensor;

namespace {

/// Brute-force pair-enumeration oracle for the supervised contrastive loss.
/// Plain double loops, no tensor machinery.
double supcon_oracle(const std::vector<std::vector<double>>& sim, const std::vector<int>& labels,
                     double logit_scale) {
    const double tau = std::exp(logit_scale);
    const std::size_t b = labels.size();
    double total = 0.0;
    std::size_t anchors = 0;
    for (std::size_t i = 0; i < b; ++i) {
        std::vector<std::size_t> positives;
        for (std::size_t p = 0; p < b; ++p)
            if (p != i && labels[p] == labels[i]) positives.push_back(p);
        if (positives.empty()) continue;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < b; ++a)
            if (a != i) mx = std::max(mx, sim[i][a] * tau);
        double z = 0.0;
        for (std::size_t a = 0; a < b; ++a)
            if (a != i) z += std::exp(sim[i][a] * tau - mx);
        const double lse = mx + std::log(z);
        double pos_sum = 0.0;
        for (std::size_t p : positives) pos_sum += lse - sim[i][p] * tau;
        total += pos_sum * (1.0 / static_cast<double>(positives.size()));
        ++anchors;
    }
    return total * (1.0 / static_cast<double>(anchors));
}

Tensor sim_tensor(const std::vector<std::vector<double>>& sim) {
    const std::size_t b = sim.size();
    std::vector<double> flat;
    for (const auto& row : sim) flat.insert(flat.end(), row.begin(), row.end());
    return Tensor::from_data({b, b}, flat);
}

/// Direct evaluation of the tempered-probability distillation formula:
/// probabilities after softmax, raised to 1/t, renormalized.
double kd_oracle(const std::vector<double>& z_student, const std::vector<double>& z_teacher,
                 double t_student, double t_teacher) {
    auto softmax_plain = [](const std::vector<double>& z) {
        double mx = z[0];
        for (double v : z) mx = std::max(mx, v);
        std::vector<double> p(z.size());
        double sum = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            p[i] = std::exp(z[i] - mx);
            sum += p[i];
        }
        for (double& v : p) v /= sum;
        return p;
    };
    auto temper = [](std::vector<double> p, double t) {
        double sum = 0.0;
        for (double& v : p) {
            v = std::pow(v, 1.0 / t);
            sum += v;
        }
        for (double& v : p) v /= sum;
        return p;
    };
    auto ps = temper(softmax_plain(z_student), t_student);
    auto pt = temper(softmax_plain(z_teacher), t_teacher);
    double loss = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) loss -= ps[i] * std::log(pt[i]);
    return loss;
}

}  // namespace

TEST_CASE("supcon trivial cases", "[losses]") {
    Tensor tau0 = Tensor::scalar(0.0);  // tau = 1

    // two samples, same label: single positive, empty negative set beyond it -> 0
    Tensor s2 = sim_tensor({{1.0, 0.3}, {0.3, 1.0}});
    REQUIRE(dtp::supcon(s2, {5, 5}, tau0).item() == 0.0);

    // uniform similarities, 2 classes of 2 -> log 3 per anchor
    Tensor s4 = Tensor::full({4, 4}, 0.7);
    double loss = dtp::supcon(s4, {0, 0, 1, 1}, tau0).item();
    REQUIRE_THAT(loss, Catch::Matchers::WithinRel(std::log(3.0), 1e-12));

    // no positive pair for any anchor -> degenerate batch
    REQUIRE_THROWS_AS(dtp::supcon(s2, {0, 1}, tau0), dtp::DataError);
    REQUIRE_THROWS_AS(dtp::supcon(sim_tensor({{1.0}}), {0}, tau0), dtp::DataError);
}

TEST_CASE("supcon matches the brute-force oracle exactly", "[losses][oracle]") {
    // hand batch B=3, labels [0,0,1]
    std::vector<std::vector<double>> sim{{1.0, 0.8, 0.1}, {0.8, 1.0, -0.2}, {0.1, -0.2, 1.0}};
    std::vector<int> labels{0, 0, 1};
    double expect = supcon_oracle(sim, labels, 0.0);
    REQUIRE(dtp::supcon(sim_tensor(sim), labels, Tensor::scalar(0.0)).item() == expect);

    // exhaustive: every labelled batch shape with B <= 6 over 2 labels
    dtp::RandomSource rng(31);
    for (std::size_t b = 2; b <= 6; ++b) {
        const std::size_t assignments = 1u << b;
        for (std::size_t mask = 0; mask < assignments; ++mask) {
            std::vector<int> lab(b);
            bool any_pair = false;
            for (std::size_t i = 0; i < b; ++i) lab[i] = (mask >> i) & 1;
            for (std::size_t i = 0; i < b && !any_pair; ++i)
                for (std::size_t j = i + 1; j < b; ++j)
                    if (lab[i] == lab[j]) {
                        any_pair = true;
                        break;
                    }
            std::vector<std::vector<double>> s(b, std::vector<double>(b));
            for (auto& row : s)
                for (double& v : row) v = rng.uniform(-1.0, 1.0);
            const double scale = rng.uniform(-0.5, 1.0);
            if (!any_pair) {
                REQUIRE_THROWS_AS(dtp::supcon(sim_tensor(s), lab, Tensor::scalar(scale)),
                                  dtp::DataError);
                continue;
            }
            double expect_l = supcon_oracle(s, lab, scale);
            double got = dtp::supcon(sim_tensor(s), lab, Tensor::scalar(scale)).item();
            REQUIRE(got == expect_l);
        }
    }
}

TEST_CASE("global loss symmetry and derived value", "[losses]") {
    dtp::RandomSource rng(7);
    BatchFeatures batch;
    batch.labels = {0, 0, 1};
    batch.image_features = Tensor::randn({3, 8}, rng);
    batch.text_features = batch.image_features;  // identical rows
    batch.logit_scale = Tensor::scalar(0.0);

    Tensor img_n = dtp::l2_normalize_rows(batch.image_features);
    Tensor one_dir = dtp::supcon(dtp::matmul(img_n, dtp::transpose(img_n)), batch.labels,
                                 batch.logit_scale);
    double total = dtp::global_loss(batch).item();
    REQUIRE_THAT(total, Catch::Matchers::WithinRel(2.0 * one_dir.item(), 1e-12));

    // hand batch: sum of the two directional supcon oracle values
    BatchFeatures b2;
    b2.labels = {0, 0, 1};
    b2.image_features = Tensor::randn({3, 4}, rng);
    b2.text_features = Tensor::randn({3, 4}, rng);
    b2.logit_scale = Tensor::scalar(0.2);
    Tensor in = dtp::l2_normalize_rows(b2.image_features);
    Tensor tn = dtp::l2_normalize_rows(b2.text_features);
    std::vector<std::vector<double>> st2i(3, std::vector<double>(3));
    std::vector<std::vector<double>> si2t(3, std::vector<double>(3));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < 4; ++k) dot += tn(i, k) * in(j, k);
            st2i[i][j] = dot;
            si2t[j][i] = dot;
        }
    double expect = supcon_oracle(st2i, b2.labels, 0.2) + supcon_oracle(si2t, b2.labels, 0.2);
    REQUIRE_THAT(dtp::global_loss(b2).item(), Catch::Matchers::WithinRel(expect, 1e-12));
}

TEST_CASE("global loss is invariant to positive feature rescaling", "[losses][property]") {
    dtp::RandomSource rng(11);
    BatchFeatures batch;
    batch.labels = {0, 1, 0, 1};
    batch.image_features = Tensor::randn({4, 8}, rng);
    batch.text_features = Tensor::randn({4, 8}, rng);
    batch.logit_scale = Tensor::scalar(0.5);
    double base = dtp::global_loss(batch).item();

    BatchFeatures scaled = batch;
    scaled.image_features = dtp::mul_scalar(batch.image_features, 7.25);
    scaled.text_features = dtp::mul_scalar(batch.text_features, 0.035);
    REQUIRE_THAT(dtp::global_loss(scaled).item(), Catch::Matchers::WithinAbs(base, 1e-12));
}

TEST_CASE("global loss gradient check", "[losses][grad]") {
    dtp::RandomSource rng(13);
    for (int trial = 0; trial < 3; ++trial) {
        BatchFeatures batch;
        batch.labels = {0, 0, 1, 1};
        batch.image_features = Tensor::randn({4, 5}, rng, 1.0, true);
        batch.text_features = Tensor::randn({4, 5}, rng, 1.0, true);
        batch.logit_scale = Tensor::scalar(0.1, true);
        auto f = [&](const std::vector<Tensor>&) { return dtp::global_loss(batch); };
        auto r = dtp::testing::check_gradients(
            f, {batch.image_features, batch.text_features, batch.logit_scale});
        INFO(r.detail);
        REQUIRE(r.ok);
    }
}

TEST_CASE("partial loss spans [0, 2] with the expected anchors", "[losses]") {
    dtp::RandomSource rng(17);
    std::vector<std::array<Tensor, 4>> li(2), lt(2);
    for (int i = 0; i < 2; ++i)
        for (int p = 0; p < 4; ++p) {
            li[i][p] = Tensor::randn({1, 6}, rng);
            lt[i][p] = li[i][p];  // identical
        }
    REQUIRE_THAT(dtp::partial_loss(li, lt).item(), Catch::Matchers::WithinAbs(0.0, 1e-12));

    // orthogonal pairs -> 1
    std::vector<std::array<Tensor, 4>> lo(1), ro(1);
    for (int p = 0; p < 4; ++p) {
        lo[0][p] = Tensor::from_data({1, 2}, {1.0, 0.0});
        ro[0][p] = Tensor::from_data({1, 2}, {0.0, 2.0});
    }
    REQUIRE_THAT(dtp::partial_loss(lo, ro).item(), Catch::Matchers::WithinRel(1.0, 1e-12));

    // antiparallel pairs -> 2
    for (int p = 0; p < 4; ++p) ro[0][p] = Tensor::from_data({1, 2}, {-3.0, 0.0});
    REQUIRE_THAT(dtp::partial_loss(lo, ro).item(), Catch::Matchers::WithinRel(2.0, 1e-12));
}

TEST_CASE("partial loss gradient check", "[losses][grad]") {
    dtp::RandomSource rng(19);
    std::vector<std::array<Tensor, 4>> li(2), lt(2);
    std::vector<Tensor> params;
    for (int i = 0; i < 2; ++i)
        for (int p = 0; p < 4; ++p) {
            li[i][p] = Tensor::randn({1, 3}, rng, 1.0, true);
            lt[i][p] = Tensor::randn({1, 3}, rng, 1.0, true);
            params.push_back(li[i][p]);
            params.push_back(lt[i][p]);
        }
    auto f = [&](const std::vector<Tensor>&) { return dtp::partial_loss(li, lt); };
    auto r = dtp::testing::check_gradients(f, params);
    INFO(r.detail);
    REQUIRE(r.ok);
}

TEST_CASE("id loss approaches zero with confident logits", "[losses]") {
    std::vector<int> labels{0, 1};
    Tensor confident = Tensor::from_data({2, 2}, {30.0, 0.0, 0.0, 30.0});
    REQUIRE(dtp::id_loss(confident, labels).item() < 1e-12);

    Tensor uniform = Tensor::zeros({2, 3});
    REQUIRE_THAT(dtp::id_loss(uniform, {0, 2}).item(),
                 Catch::Matchers::WithinRel(std::log(3.0), 1e-12));

    dtp::RandomSource rng(23);
    Tensor logits = Tensor::randn({3, 4}, rng, 1.0, true);
    auto f = [&](const std::vector<Tensor>&) { return dtp::id_loss(logits, {1, 0, 3}); };
    auto r = dtp::testing::check_gradients(f, {logits});
    INFO(r.detail);
    REQUIRE(r.ok);
}

TEST_CASE("triplet loss: identical features give exactly the margin", "[losses]") {
    Tensor same = Tensor::full({4, 3}, 0.5);
    double loss = dtp::triplet_loss(same, {0, 0, 1, 1}, 0.3).item();
    REQUIRE_THAT(loss, Catch::Matchers::WithinAbs(0.3, 1e-10));

    REQUIRE_THROWS_AS(dtp::triplet_loss(same, {0, 1, 2, 3}, 0.3), dtp::DataError);
    REQUIRE_THROWS_AS(dtp::triplet_loss(same, {0, 0, 0, 0}, 0.3), dtp::DataError);
}

TEST_CASE("triplet loss matches a brute-force hardest-mining oracle", "[losses][oracle]") {
    dtp::RandomSource rng(29);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t b = 4, d = 3;
        Tensor feats = Tensor::randn({b, d}, rng);
        std::vector<int> labels{0, 0, 1, 1};

        auto dist = [&](std::size_t i, std::size_t j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                double diff = feats(i, k) - feats(j, k);
                s += diff * diff;
            }
            return std::sqrt(s);
        };
        double expect = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            double dap = -1.0, dan = 1e300;
            for (std::size_t j = 0; j < b; ++j) {
                if (j == i) continue;
                if (labels[j] == labels[i])
                    dap = std::max(dap, dist(i, j));
                else
                    dan = std::min(dan, dist(i, j));
            }
            expect += std::max(0.0, 0.3 + dap - dan);
        }
        expect /= static_cast<double>(b);
        REQUIRE_THAT(dtp::triplet_loss(feats, labels, 0.3).item(),
                     Catch::Matchers::WithinAbs(expect, 1e-9));
    }

    dtp::RandomSource rng2(31);
    Tensor feats = Tensor::randn({4, 3}, rng2, 1.0, true);
    auto f = [&](const std::vector<Tensor>&) {
        return dtp::triplet_loss(feats, {0, 0, 1, 1}, 0.3);
    };
    auto r = dtp::testing::check_gradients(f, {feats});
    INFO(r.detail);
    REQUIRE(r.ok);
}

TEST_CASE("kd loss closed forms and formula oracle", "[losses][oracle]") {
    // identical logits: loss equals the tempered distribution's entropy
    Tensor z = Tensor::from_data({1, 3}, {0.5, -0.3, 1.2});
    double self_loss = dtp::kd_loss(z, z, 2.0).item();
    double entropy = kd_oracle(z.values(), z.values(), 2.0, 2.0);
    REQUIRE_THAT(self_loss, Catch::Matchers::WithinRel(entropy, 1e-9));
    REQUIRE(self_loss >= 0.0);

    // uniform teacher: loss = log(n) for any student
    Tensor uniform = Tensor::zeros({1, 4});
    Tensor any = Tensor::from_data({1, 4}, {2.0, -1.0, 0.5, 0.0});
    REQUIRE_THAT(dtp::kd_loss(any, uniform, 2.0).item(),
                 Catch::Matchers::WithinRel(std::log(4.0), 1e-12));

    // specific 3-class logits at t = 2 against the direct formula
    Tensor zs = Tensor::from_data({1, 3}, {1.0, 0.2, -0.7});
    Tensor zt = Tensor::from_data({1, 3}, {0.3, 0.9, -0.1});
    REQUIRE_THAT(dtp::kd_loss(zs, zt, 2.0).item(),
                 Catch::Matchers::WithinRel(kd_oracle(zs.values(), zt.values(), 2.0, 2.0), 1e-9));

    REQUIRE_THROWS_AS(dtp::kd_loss(zs, zt, 0.0), dtp::DomainError);
    REQUIRE_THROWS_AS(dtp::kd_loss(zs, zt, -1.0), dtp::DomainError);
    REQUIRE_THROWS_AS(dtp::kd_loss(zs, Tensor::zeros({1, 4}), 2.0), dtp::ShapeError);
}

TEST_CASE("lkd with zero deltas bit-equals kd", "[losses]") {
    dtp::RandomSource rng(37);
    for (double t : {0.7, 2.0, 5.0}) {
        Tensor zs = Tensor::randn({2, 5}, rng, 2.0);
        Tensor zt = Tensor::randn({2, 5}, rng, 2.0);
        auto temps = dtp::TemperaturePair::init(t);
        double lkd = dtp::lkd_loss(zs, zt, temps).item();
        double kd = dtp::kd_loss(zs, zt, t).item();
        REQUIRE(lkd == kd);  // bit-equal
    }
}

TEST_CASE("lkd matches the two-temperature formula and differentiates deltas",
          "[losses][oracle][grad]") {
    dtp::RandomSource rng(41);
    Tensor zs = Tensor::randn({1, 4}, rng, 1.5);
    Tensor zt = Tensor::randn({1, 4}, rng, 1.5);
    auto temps = dtp::TemperaturePair::init(2.0);
    temps.delta_student.raw_values()[0] = 0.4;
    temps.delta_teacher.raw_values()[0] = -0.3;

    double expect = kd_oracle(zs.values(), zt.values(), 2.4, 1.7);
    REQUIRE_THAT(dtp::lkd_loss(zs, zt, temps).item(),
                 Catch::Matchers::WithinRel(expect, 1e-9));

    auto f = [&](const std::vector<Tensor>&) { return dtp::lkd_loss(zs, zt, temps); };
    auto r = dtp::testing::check_gradients(f, {temps.delta_student, temps.delta_teacher});
    INFO(r.detail);
    REQUIRE(r.ok);
}

TEST_CASE("teacher logits receive no gradient", "[losses]") {
    dtp::RandomSource rng(43);
    Tensor zs = Tensor::randn({2, 4}, rng, 1.0, true);
    Tensor zt = Tensor::randn({2, 4}, rng, 1.0, true);
    zs.zero_grad();
    zt.zero_grad();
    auto temps = dtp::TemperaturePair::init(2.0);
    temps.delta_student.zero_grad();
    temps.delta_teacher.zero_grad();
    dtp::backward(dtp::lkd_loss(zs, zt, temps));
    double zs_norm = 0.0, zt_norm = 0.0, d2_norm = 0.0;
    for (double g : zs.grad()) zs_norm += g * g;
    for (double g : zt.grad()) zt_norm += g * g;
    for (double g : temps.delta_teacher.grad()) d2_norm += g * g;
    REQUIRE(zs_norm > 0.0);
    REQUIRE(zt_norm == 0.0);  // stop-gradient contract
    REQUIRE(d2_norm > 0.0);   // but the teacher temperature still learns
}

TEST_CASE("student gradient via finite differences on the student logits", "[losses][grad]") {
    dtp::RandomSource rng(47);
    for (int trial = 0; trial < 3; ++trial) {
        Tensor zs = Tensor::randn({2, 4}, rng, 1.0, true);
        Tensor zt = Tensor::randn({2, 4}, rng, 1.0);
        auto f = [&](const std::vector<Tensor>&) { return dtp::kd_loss(zs, zt, 2.0); };
        auto r = dtp::testing::check_gradients(f, {zs});
        INFO(r.detail);
        REQUIRE(r.ok);
    }
}

TEST_CASE("smooth clamp is exact identity inside and bounded outside", "[losses]") {
    Tensor mid = Tensor::from_data({3}, {1.0, 2.0, 8.0});
    Tensor c = dtp::smooth_clamp(mid, 0.25, 16.0, 0.25);
    REQUIRE(c.values() == mid.values());  // identity region, bitwise

    Tensor low = Tensor::from_data({2}, {-5.0, 0.0});
    Tensor cl = dtp::smooth_clamp(low, 0.25, 16.0, 0.25);
    for (double v : cl.values()) {
        REQUIRE(v > 0.25);
        REQUIRE(v < 0.6);
    }
    Tensor high = Tensor::from_data({2}, {17.0, 40.0});
    Tensor ch = dtp::smooth_clamp(high, 0.25, 16.0, 0.25);
    REQUIRE(ch.values()[0] < 16.0);
    REQUIRE(ch.values()[1] <= 16.0);

    // C1: gradient matches finite differences across the blend point
    Tensor x = Tensor::from_data({4}, {0.42, 0.55, 15.7, 15.9}, true);
    auto f = [&](const std::vector<Tensor>& ps) {
        return dtp::sum(dtp::smooth_clamp(ps[0], 0.25, 16.0, 0.25));
    };
    auto r = dtp::testing::check_gradients(f, {x}, 1e-6, 1e-3);
    INFO(r.detail);
    REQUIRE(r.ok);
}

TEST_CASE("stage-II composite sums its terms", "[losses]") {
    dtp::StageTerms terms;
    terms.id = Tensor::scalar(0.9);
    terms.triplet = Tensor::scalar(0.4);
    terms.global = Tensor::scalar(1.7);
    terms.partial = Tensor::scalar(0.25);
    dtp::LossWeights w;

    // first domain: no teacher, 4 terms
    auto first = dtp::stage2_loss(terms, w);
    REQUIRE(first.components.size() == 4);
    REQUIRE_THAT(first.total.item(), Catch::Matchers::WithinAbs(0.9 + 0.4 + 1.7 + 0.25, 1e-12));

    terms.lkd = Tensor::scalar(2.0);
    auto full = dtp::stage2_loss(terms, w);
    REQUIRE(full.components.size() == 5);
    double weighted = 0.9 + 0.4 + 1.7 + 0.25 + 0.1 * 2.0;
    REQUIRE_THAT(full.total.item(), Catch::Matchers::WithinAbs(weighted, 1e-12));

    // components are logged unweighted
    REQUIRE(full.components.at("lkd") == 2.0);

    // the lkd weight defaults to 0.1
    REQUIRE(dtp::LossWeights{}.lkd == 0.1);
}
