#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <vector>

#include "dtp/encoders.hpp"
#include "dtp/synthgen.hpp"
#include "support/gradcheck.hpp"

using dtp::ImageEncoder;
using dtp::Tensor;
using dtp::TextEncoder;

namespace {

dtp::SyntheticImage make_image(dtp::RandomSource& rng, std::size_t region_dim) {
    dtp::SyntheticImage img;
    img.identity_id = 0;
    img.camera_id = 0;
    img.region_dim = region_dim;
    img.regions.resize(dtp::kNumBodyParts * region_dim);
    for (double& x : img.regions) x = rng.normal();
    return img;
}

}  // namespace

TEST_CASE("image encoder determinism and shapes", "[encoders]") {
    dtp::RandomSource rng(3);
    ImageEncoder enc = ImageEncoder::init(6, 16, 2, 4, 2, rng);
    auto img = make_image(rng, 6);
    auto a = dtp::encode_image(img, enc);
    auto b = dtp::encode_image(img, enc);
    REQUIRE(a.global.values() == b.global.values());
    REQUIRE(a.hidden.rows() == 4);
    REQUIRE(a.hidden.cols() == 16);
    REQUIRE(a.global.rows() == 1);
    REQUIRE(a.hidden_cls.rows() == 1);

    dtp::SyntheticImage bad = img;
    bad.regions.resize(3 * 6);
    REQUIRE_THROWS_AS(enc.forward(Tensor::from_data({3, 6}, bad.regions)), dtp::ShapeError);
}

TEST_CASE("image encoder gradient check", "[encoders][grad]") {
    dtp::RandomSource rng(5);
    ImageEncoder enc = ImageEncoder::init(4, 8, 2, 2, 2, rng);
    Tensor regions = Tensor::randn({4, 4}, rng, 1.0, true);
    std::vector<Tensor> params{regions};
    for (Tensor& t : dtp::parameters(enc)) params.push_back(t);
    auto f = [&](const std::vector<Tensor>&) {
        auto out = enc.forward(regions);
        return dtp::mean(dtp::mul(out.global, out.global));
    };
    auto r = dtp::testing::check_gradients(f, params);
    INFO(r.detail);
    REQUIRE(r.ok);
}

TEST_CASE("duplicated layer starts bit-identical and is independent", "[encoders]") {
    dtp::RandomSource rng(7);
    ImageEncoder enc = ImageEncoder::init(4, 8, 2, 2, 2, rng);
    dtp::NamedParams final_layer = dtp::named_params(enc.layers.back(), "final");
    dtp::NamedParams part_layer = dtp::named_params(enc.layer_part, "part");
    REQUIRE(final_layer.size() == part_layer.size());
    for (std::size_t i = 0; i < final_layer.size(); ++i) {
        REQUIRE(final_layer[i].second.values() == part_layer[i].second.values());
        REQUIRE_FALSE(final_layer[i].second.same_node(part_layer[i].second));
    }
}

TEST_CASE("local features flow through layer_part only", "[encoders][grad]") {
    dtp::RandomSource rng(9);
    ImageEncoder enc = ImageEncoder::init(4, 8, 2, 2, 2, rng);
    Tensor regions = Tensor::randn({4, 4}, rng);

    for (Tensor& t : dtp::parameters(enc)) t.zero_grad();
    auto out = enc.forward(regions);
    auto segments = dtp::split_image_parts(out.hidden);
    Tensor local_sum;
    for (const Tensor& seg : segments) {
        Tensor local = dtp::encode_local(seg, out.hidden_cls, enc.layer_part);
        local_sum = local_sum.defined() ? dtp::add(local_sum, local) : local;
    }
    dtp::backward(dtp::mean(dtp::mul(local_sum, local_sum)));

    // gradient reaches layer_part but not the final main layer
    double part_norm = 0.0, final_norm = 0.0;
    enc.layer_part.visit(
        [&](const std::string&, Tensor& t) {
            for (double g : t.grad()) part_norm += g * g;
        },
        "");
    enc.layers.back().visit(
        [&](const std::string&, Tensor& t) {
            for (double g : t.grad()) final_norm += g * g;
        },
        "");
    REQUIRE(part_norm > 0.0);
    REQUIRE(final_norm == 0.0);

    // identical segments + frozen duplicated layer give identical locals
    Tensor l1 = dtp::encode_local(segments[0], out.hidden_cls, enc.layer_part);
    Tensor l2 = dtp::encode_local(segments[0], out.hidden_cls, enc.layer_part);
    REQUIRE(l1.values() == l2.values());
}

TEST_CASE("split_image_parts partitions and reconstructs", "[encoders]") {
    dtp::RandomSource rng(11);
    for (std::size_t len : {4, 8}) {
        Tensor hidden = Tensor::randn({len, 6}, rng);
        auto parts = dtp::split_image_parts(hidden);
        REQUIRE(parts.size() == 4);
        for (const auto& p : parts) REQUIRE(p.rows() == len / 4);
        Tensor back = dtp::concat_rows(parts);
        REQUIRE(back.values() == hidden.values());
    }
    REQUIRE_THROWS_AS(dtp::split_image_parts(Tensor::zeros({6, 4})), dtp::ConfigError);
}

TEST_CASE("text encoder mirrors image encoder contracts", "[encoders][grad]") {
    dtp::RandomSource rng(13);
    TextEncoder enc = TextEncoder::init(8, 2, 2, 2, 32, rng);
    Tensor prompt = Tensor::randn({6, 8}, rng, 1.0, true);

    auto a = enc.forward(prompt);
    auto b = enc.forward(prompt);
    REQUIRE(a.global.values() == b.global.values());  // determinism
    REQUIRE(a.global.cols() == 8);
    REQUIRE(a.token_states.rows() == 7);  // cls + 6 prompt rows

    std::vector<Tensor> params{prompt};
    for (Tensor& t : dtp::parameters(enc)) params.push_back(t);
    auto f = [&](const std::vector<Tensor>&) {
        auto out = enc.forward(prompt);
        return dtp::mean(dtp::mul(out.global, out.global));
    };
    auto r = dtp::testing::check_gradients(f, params);
    INFO(r.detail);
    REQUIRE(r.ok);
}

TEST_CASE("split_text_parts follows comma markers", "[encoders]") {
    dtp::RandomSource rng(17);
    // caption region: a b , c , d , e  (single-token parts after the first)
    Tensor states = Tensor::randn({8, 4}, rng);
    Tensor cls = Tensor::randn({1, 4}, rng);
    std::vector<std::size_t> commas{2, 4, 6};
    auto parts = dtp::split_text_parts(cls, states, commas);
    REQUIRE(parts.size() == 4);

    // part 0 = mean(cls, rows 0..1); part 1 = mean(cls, row 3)
    for (std::size_t j = 0; j < 4; ++j) {
        double expect0 = (cls(0, j) + states(0, j) + states(1, j)) / 3.0;
        REQUIRE_THAT(parts[0](0, j), Catch::Matchers::WithinRel(expect0, 1e-12));
        double expect1 = (cls(0, j) + states(3, j)) / 2.0;
        REQUIRE_THAT(parts[1](0, j), Catch::Matchers::WithinRel(expect1, 1e-12));
        double expect3 = (cls(0, j) + states(7, j)) / 2.0;
        REQUIRE_THAT(parts[3](0, j), Catch::Matchers::WithinRel(expect3, 1e-12));
    }

    // token groups + commas reconstruct the full token body
    std::size_t covered = 0;
    std::size_t begin = 0;
    for (int p = 0; p < 4; ++p) {
        std::size_t end = p < 3 ? commas[static_cast<std::size_t>(p)] : states.rows();
        covered += end - begin;
        begin = end + 1;
    }
    REQUIRE(covered + commas.size() == states.rows());

    REQUIRE_THROWS_AS(dtp::split_text_parts(cls, states, {2, 4}), dtp::DataError);

    // gradient check through the comma split
    Tensor cls_p = Tensor::randn({1, 4}, rng, 1.0, true);
    Tensor states_p = Tensor::randn({8, 4}, rng, 1.0, true);
    auto f = [&](const std::vector<Tensor>&) {
        auto ps = dtp::split_text_parts(cls_p, states_p, commas);
        Tensor s;
        for (const auto& part : ps) s = s.defined() ? dtp::add(s, part) : part;
        return dtp::mean(dtp::mul(s, s));
    };
    auto r = dtp::testing::check_gradients(f, {cls_p, states_p});
    INFO(r.detail);
    REQUIRE(r.ok);
}

TEST_CASE("classifier head: bias at zero features, stale-head detection", "[encoders]") {
    dtp::RandomSource rng(19);
    auto head = dtp::ClassifierHead::init(8, 5, 0, rng);
    for (double& b : head.fc.bias.raw_values()) b = 0.25;

    Tensor zero_feat = Tensor::zeros({1, 8});
    Tensor logits = dtp::classify(zero_feat, head, 0);
    REQUIRE(logits.cols() == 5);
    for (double v : logits.values()) REQUIRE(v == 0.25);

    Tensor p = dtp::row_softmax(logits);
    double s = 0.0;
    for (double v : p.values()) s += v;
    REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-12));

    REQUIRE_THROWS_AS(dtp::classify(zero_feat, head, 1), dtp::ContractError);

    Tensor feat = Tensor::randn({2, 8}, rng, 1.0, true);
    std::vector<Tensor> params{feat, head.fc.weight, head.fc.bias};
    auto f = [&](const std::vector<Tensor>&) {
        Tensor l = dtp::classify(feat, head, 0);
        return dtp::mean(dtp::mul(l, l));
    };
    auto r = dtp::testing::check_gradients(f, params);
    INFO(r.detail);
    REQUIRE(r.ok);
}

TEST_CASE("shared-space contract: text and image widths agree", "[encoders]") {
    dtp::RandomSource rng(23);
    ImageEncoder ie = ImageEncoder::init(6, 16, 2, 4, 2, rng);
    TextEncoder te = TextEncoder::init(16, 2, 4, 2, 32, rng);
    REQUIRE(ie.width() == te.width());
}
