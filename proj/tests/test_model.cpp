#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cpc/errors.hpp"
#include "cpc/model.hpp"
#include "test_util.hpp"

using namespace cpc;
using namespace cpc::model;

namespace {

FeatureConfig small_cfg() {
    FeatureConfig c;
    c.image_side = 8;
    c.patch_side = 2;
    c.feature_dim = 6;
    c.cluster_dim = 2;
    c.class_count = 3;
    c.top_k = 3;
    return c;
}

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(r, c);
    for (double& v : m.flat()) v = rng.normal();
    return m;
}

Image random_image(std::size_t side, std::uint64_t seed) {
    Rng rng(seed);
    Image img(side, side, 3);
    for (double& v : img.data) v = rng.uniform();
    return img;
}

clustering::ClusterVector bits(std::vector<std::uint8_t> b) { return {std::move(b)}; }

}  // namespace

TEST_CASE("feature config validation and derived sizes") {
    auto c = small_cfg();
    CHECK_NOTHROW(c.validate());
    CHECK(c.grid_side() == 4);
    CHECK(c.patch_count() == 16);
    CHECK(c.token_dim() == 8);
    CHECK(c.lstm_hidden() == 4);

    auto odd = c;
    odd.cluster_dim = 3;
    CHECK_THROWS_AS(odd.validate(), ConfigError);
    auto indivisible = c;
    indivisible.patch_side = 3;
    CHECK_THROWS_AS(indivisible.validate(), ConfigError);
    auto nok = c;
    nok.top_k = 0;
    CHECK_THROWS_AS(nok.validate(), ConfigError);
}

TEST_CASE("parameter shapes, flattening and init determinism") {
    const auto c = small_cfg();
    const auto p = init_params(3, 2, c);
    CHECK(p.g.rows() == 2);
    CHECK(p.g.cols() == 2);
    for (const auto& l : p.lstm) {
        CHECK(l.wx.rows() == 16);
        CHECK(l.wx.cols() == 8);
        CHECK(l.wh.rows() == 16);
        CHECK(l.wh.cols() == 4);
        CHECK(l.b.rows() == 16);
    }
    CHECK(p.w.rows() == 8);
    CHECK(p.w.cols() == 3);
    CHECK(p.flat_size() == 4 + 4 * (128 + 64 + 16) + 24);

    CHECK(init_params(3, 2, c) == p);
    CHECK_FALSE(init_params(4, 2, c) == p);
    CHECK(init_params(3, 2, c).fingerprint() == p.fingerprint());

    // Uniform(-a, a), a = 1/sqrt(fan_in).
    const double a = 1.0 / std::sqrt(8.0);
    for (double v : p.lstm[0].wx.flat()) CHECK(std::abs(v) <= a);

    auto q = ModelParams::zeros_like(p);
    q.assign(p.flatten());
    CHECK(q == p);
    CHECK_THROWS_AS(q.assign(std::vector<double>(3)), std::invalid_argument);
}

TEST_CASE("checkpoint round trip and mismatch") {
    cpc_test::TempDir dir("ckpt");
    const auto c = small_cfg();
    const auto p = init_params(9, 3, c);
    write_checkpoint(dir / "m.cpcm", p, c);
    CHECK(read_checkpoint(dir / "m.cpcm", c) == p);

    auto other = c;
    other.class_count = 4;
    CHECK_THROWS_AS(read_checkpoint(dir / "m.cpcm", other), IoError);
    CHECK_THROWS_AS(read_checkpoint(dir / "missing.cpcm", c), IoError);

    auto bytes = cpc_test::slurp(dir / "m.cpcm");
    cpc_test::spit(dir / "trunc.cpcm", bytes.substr(0, bytes.size() - 8));
    CHECK_THROWS_AS(read_checkpoint(dir / "trunc.cpcm", c), IoError);
    cpc_test::spit(dir / "long.cpcm", bytes + "x");
    CHECK_THROWS_AS(read_checkpoint(dir / "long.cpcm", c), IoError);
    cpc_test::spit(dir / "magic.cpcm", "XXXX" + bytes.substr(4));
    CHECK_THROWS_AS(read_checkpoint(dir / "magic.cpcm", c), IoError);
}

TEST_CASE("feature file round trip") {
    cpc_test::TempDir dir("cpcf");
    const auto c = small_cfg();
    // f32 storage: use values that are exact in single precision.
    Matrix a(16, 6), b(16, 6);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a.flat()[i] = static_cast<double>(i) * 0.25;
        b.flat()[i] = -static_cast<double>(i) * 0.5;
    }
    write_feature_file(dir / "f.cpcf", 16, 6, {{"img_a", a}, {"img_b", b}});
    const auto recs = read_feature_file(dir / "f.cpcf");
    REQUIRE(recs.size() == 2);
    CHECK(recs.at("img_a") == a);
    CHECK(recs.at("img_b") == b);

    FileFeatureProvider provider(dir / "f.cpcf", c);
    Image img(8, 8, 3);
    CHECK(provider.embed("img_b", img) == b);
    CHECK_THROWS_AS(provider.embed("img_c", img), IoError);

    auto wrong = c;
    wrong.feature_dim = 4;
    wrong.cluster_dim = 4;
    CHECK_THROWS_AS(FileFeatureProvider(dir / "f.cpcf", wrong), IoError);
}

TEST_CASE("random projection features") {
    auto c = small_cfg();
    RandomProjectionProvider prov(c, 7);
    const auto img = random_image(8, 1);
    const auto f = prov.embed("x", img);
    CHECK(f.rows() == 16);
    CHECK(f.cols() == 6);
    CHECK(RandomProjectionProvider(c, 7).embed("y", img) == f);

    // Per-image standardization: zero mean, unit variance per feature.
    for (std::size_t j = 0; j < 6; ++j) {
        double mean = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < 16; ++i) mean += f(i, j);
        mean /= 16.0;
        for (std::size_t i = 0; i < 16; ++i) sq += (f(i, j) - mean) * (f(i, j) - mean);
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
        CHECK(sq / 16.0 == doctest::Approx(1.0).epsilon(1e-4));
    }

    // Fixed mode does not depend on other patches.
    c.feature_norm = FeatureNorm::fixed;
    RandomProjectionProvider fixed(c, 7);
    auto img2 = img;
    img2.at(7, 7, 0) = 1.0 - img2.at(7, 7, 0);
    const auto f1 = fixed.embed("x", img);
    const auto f2 = fixed.embed("x", img2);
    for (std::size_t j = 0; j < 6; ++j) CHECK(f1(0, j) == f2(0, j));
    CHECK_FALSE(f1 == f2);

    CHECK_THROWS_AS(prov.embed("x", random_image(6, 1)), std::invalid_argument);
}

TEST_CASE("cluster token and concatenation") {
    Matrix g(3, 2, {1, 2, 10, 20, 100, 200});
    CHECK(project_cluster_token(bits({1, 0, 1}), g) == std::vector<double>{101, 202});
    CHECK_THROWS_AS(project_cluster_token(bits({1, 0}), g), std::invalid_argument);

    Matrix f(2, 1, {5, 6});
    const std::vector<double> tok{7, 8};
    CHECK(concat_tokens(f, tok) == Matrix(2, 3, {5, 7, 8, 6, 7, 8}));
}

TEST_CASE("hv bilstm commutes with transposing the grid and swapping H/V weights") {
    const std::size_t g = 3, d = 4, h = 2;
    auto lstm = [&](std::uint64_t seed) {
        return LstmWeights{random_matrix(4 * h, d, seed), random_matrix(4 * h, h, seed + 1),
                           random_matrix(4 * h, 1, seed + 2)};
    };
    const std::array<LstmWeights, 4> w{lstm(10), lstm(20), lstm(30), lstm(40)};
    const std::array<LstmWeights, 4> swapped{w[top_to_bottom], w[bottom_to_top], w[left_to_right], w[right_to_left]};

    const Matrix x = random_matrix(g * g, d, 7);
    Matrix xt(g * g, d);
    for (std::size_t r = 0; r < g; ++r)
        for (std::size_t c = 0; c < g; ++c)
            for (std::size_t k = 0; k < d; ++k) xt(c * g + r, k) = x(r * g + c, k);

    const Matrix y = hv_bilstm_forward(x, w, g);
    const Matrix yt = hv_bilstm_forward(xt, swapped, g);
    CHECK(y.rows() == g * g);
    CHECK(y.cols() == d);
    for (std::size_t r = 0; r < g; ++r)
        for (std::size_t c = 0; c < g; ++c)
            for (std::size_t k = 0; k < d; ++k) CHECK(yt(c * g + r, k) == doctest::Approx(y(r * g + c, k)).epsilon(1e-14));

    // Without the swap the transposed output differs.
    const Matrix unswapped = hv_bilstm_forward(xt, w, g);
    CHECK_FALSE(unswapped == yt);

    CHECK_THROWS_AS(hv_bilstm_forward(random_matrix(8, d, 1), w, g), std::invalid_argument);
}

TEST_CASE("hv bilstm with zero weights outputs zeros") {
    const std::size_t d = 4;
    LstmWeights z{Matrix(8, d), Matrix(8, 2), Matrix(8, 1)};
    const Matrix y = hv_bilstm_forward(random_matrix(4, d, 1), {z, z, z, z}, 2);
    for (double v : y.flat()) CHECK(v == 0.0);
}

TEST_CASE("top-k pooling") {
    Matrix z(4, 2, {0.1, 0.9, 0.7, 0.3, 0.4, 0.6, 0.7, 0.3});
    const auto r = topk_pool(z, 2);
    CHECK(r.scores[0] == doctest::Approx(0.7));
    CHECK(r.scores[1] == doctest::Approx(0.75));
    CHECK(r.selected[0] == std::vector<std::size_t>{1, 3});
    CHECK(r.selected[1] == std::vector<std::size_t>{0, 2});
    const auto all = topk_pool(z, 99);
    CHECK(all.scores[0] == doctest::Approx(0.475));
}

TEST_CASE("forward shapes and stage composition") {
    const auto c = small_cfg();
    const auto p = init_params(11, 2, c);
    const Matrix feats = random_matrix(16, 6, 3);
    const auto u = bits({0, 1});
    const auto r = forward_features(feats, u, p, c);
    CHECK(r.z.rows() == 16);
    CHECK(r.z.cols() == 3);
    CHECK(r.p.size() == 3);
    for (std::size_t i = 0; i < 16; ++i) {
        double s = 0.0;
        for (double v : r.z.row(i)) s += v;
        CHECK(s == doctest::Approx(1.0));
    }

    const auto tok = project_cluster_token(u, p.g);
    const Matrix f_out = hv_bilstm_forward(concat_tokens(feats, tok), p.lstm, 4);
    const Matrix z = classify_patches(f_out, p.w);
    CHECK(z == r.z);
    CHECK(topk_pool(z, c.top_k).scores == r.p);

    CHECK_THROWS_AS(forward_features(random_matrix(15, 6, 1), u, p, c), std::invalid_argument);
}

TEST_CASE("backward matches finite differences") {
    const auto c = small_cfg();
    auto p = init_params(5, 2, c);
    const Matrix feats = random_matrix(16, 6, 8);
    const auto u = bits({1, 1});
    const std::vector<double> dp{0.3, -0.7, 1.1};
    const Matrix dz = random_matrix(16, 3, 12);
    const Matrix df = random_matrix(16, 8, 13);

    auto objective = [&](const ModelParams& q) {
        const auto r = forward_features(feats, u, q, c);
        double s = 0.0;
        for (std::size_t i = 0; i < 3; ++i) s += dp[i] * r.p[i];
        for (std::size_t i = 0; i < dz.size(); ++i) s += dz.flat()[i] * r.z.flat()[i];
        for (std::size_t i = 0; i < df.size(); ++i) s += df.flat()[i] * r.cache.f_out.flat()[i];
        return s;
    };
    const auto r = forward_features(feats, u, p, c);
    const auto grads = backward(r.cache, p, dz, dp, df);
    const auto flat = p.flatten();
    LossFn fn = [&](std::span<const double> x) {
        auto q = ModelParams::zeros_like(p);
        q.assign(x);
        return objective(q);
    };
    const auto report = finite_diff_check(fn, flat, grads.flatten(), 1e-5);
    CHECK(report.max_rel_error < 1e-4);

    auto changed = p;
    changed.w(0, 0) += 1.0;
    CHECK_THROWS_AS(backward(r.cache, changed, dz, dp, df), std::invalid_argument);
}
