#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include <json.hpp>

#include "cpc/dataio.hpp"
#include "cpc/errors.hpp"
#include "test_util.hpp"

using namespace cpc;
using namespace cpc::data;
namespace fs = std::filesystem;

namespace {

SynthConfig small_synth() {
    SynthConfig c;
    c.image_side = 16;
    c.count = 6;
    c.seed = 3;
    return c;
}

std::set<std::string> mask_classes(const LabelMap& m, const std::vector<std::string>& names) {
    std::set<std::string> out;
    for (auto v : m.labels)
        if (v != 0) out.insert(names[v]);
    return out;
}

}  // namespace

TEST_CASE("class names and label vectors") {
    const clustering::CategoryList cats{{"cat", "dog"}};
    CHECK(class_names(cats) == std::vector<std::string>{"background", "cat", "dog"});
    CHECK(label_vector({"dog"}, cats) == std::vector<std::uint8_t>{1, 0, 1});
    CHECK_THROWS(label_vector({"cow"}, cats));
}

TEST_CASE("synthetic samples: labels match mask contents") {
    const auto cfg = small_synth();
    const auto samples = generate_samples(cfg);
    REQUIRE(samples.size() == 6);
    const auto names = class_names(cfg.categories);
    for (const auto& s : samples) {
        REQUIRE(s.gt_mask.has_value());
        CHECK(s.image.height == 16);
        CHECK(s.image.channels == 3);
        CHECK(!s.labels.empty());
        CHECK(mask_classes(*s.gt_mask, names) == s.labels);
        for (double v : s.image.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            CHECK(v * 255.0 == std::round(v * 255.0));
        }
    }
}

TEST_CASE("synthetic generation is reproducible to the byte") {
    cpc_test::TempDir a("gen_a"), b("gen_b"), c("gen_c");
    auto cfg = small_synth();
    gen_synthetic(cfg, a.path());
    gen_synthetic(cfg, b.path());
    for (const auto& entry : fs::recursive_directory_iterator(a.path())) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), a.path());
        CHECK(cpc_test::slurp(entry.path()) == cpc_test::slurp(b.path() / rel));
    }
    cfg.seed = 4;
    gen_synthetic(cfg, c.path());
    CHECK(cpc_test::slurp(a / "images/img_0000.ppm") != cpc_test::slurp(c / "images/img_0000.ppm"));
}

TEST_CASE("generate, write and load round trip") {
    cpc_test::TempDir dir("roundtrip");
    const auto cfg = small_synth();
    const auto manifest = gen_synthetic(cfg, dir.path());
    CHECK(fs::exists(dir / "categories.txt"));
    const auto cats = clustering::read_categories_file(dir / "categories.txt");
    CHECK(cats == cfg.categories);
    const auto loaded = load_dataset(manifest, cats);
    const auto made = generate_samples(cfg);
    REQUIRE(loaded.size() == made.size());
    for (std::size_t i = 0; i < made.size(); ++i) {
        CHECK(loaded[i].image_id == made[i].image_id);
        CHECK(loaded[i].image == made[i].image);
        CHECK(loaded[i].labels == made[i].labels);
        CHECK(loaded[i].gt_mask == made[i].gt_mask);
    }
}

TEST_CASE("manifest validation") {
    cpc_test::TempDir dir("manifest");
    const auto cfg = small_synth();
    const auto manifest = gen_synthetic(cfg, dir.path());
    auto j = nlohmann::json::parse(cpc_test::slurp(manifest));

    auto bad = j;
    bad[0]["labels"] = {"unicorn"};
    cpc_test::spit(dir / "unknown.json", bad.dump());
    CHECK_THROWS_AS(load_dataset(dir / "unknown.json", cfg.categories), ParseError);

    cpc_test::spit(dir / "empty.json", "[]");
    CHECK_THROWS_AS(load_dataset(dir / "empty.json", cfg.categories), ParseError);

    bad = j;
    bad[1]["image_id"] = j[0]["image_id"];
    cpc_test::spit(dir / "dup.json", bad.dump());
    CHECK_THROWS_AS(load_dataset(dir / "dup.json", cfg.categories), ParseError);

    bad = j;
    bad[0]["image_path"] = "images/nothing.ppm";
    cpc_test::spit(dir / "missing.json", bad.dump());
    CHECK_THROWS(load_dataset(dir / "missing.json", cfg.categories));

    // Masks are optional.
    bad = j;
    bad[0].erase("gt_mask_path");
    cpc_test::spit(dir / "nomask.json", bad.dump());
    const auto s = load_dataset(dir / "nomask.json", cfg.categories);
    CHECK_FALSE(s[0].gt_mask.has_value());
    CHECK(s[1].gt_mask.has_value());

    CHECK_THROWS_AS(load_dataset(dir / "nope.json", cfg.categories), IoError);
}

TEST_CASE("netpbm round trip and corruption") {
    cpc_test::TempDir dir("pnm");
    model::Image img(2, 3, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(i * 13 % 256) / 255.0;
    write_ppm(dir / "a.ppm", img);
    CHECK(read_ppm(dir / "a.ppm") == img);
    CHECK(cpc_test::slurp(dir / "a.ppm").rfind("P6", 0) == 0);

    LabelMap m(3, 2);
    m.labels = {0, 1, 2, 3, 4, 255};
    write_pgm(dir / "m.pgm", m);
    CHECK(read_pgm(dir / "m.pgm") == m);

    const auto bytes = cpc_test::slurp(dir / "a.ppm");
    cpc_test::spit(dir / "short.ppm", bytes.substr(0, bytes.size() - 1));
    CHECK_THROWS_AS(read_ppm(dir / "short.ppm"), IoError);
    cpc_test::spit(dir / "junk.ppm", "P3\n2 2\n255\n");
    CHECK_THROWS_AS(read_ppm(dir / "junk.ppm"), IoError);
    CHECK_THROWS_AS(read_pgm(dir / "a.ppm"), IoError);
}

TEST_CASE("synth config validation") {
    auto c = small_synth();
    CHECK_NOTHROW(c.validate());
    c.class_colors = {{0.1, 0.1, 0.1}, {0.9, 0, 0}, {0, 0.9, 0}, {0, 0, 0.9}};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_synth();
    c.class_colors = {{0.9, 0, 0}};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_synth();
    c.confusable_pairs = {{"cat", "cat"}};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_synth();
    c.confusable_pairs = {{"cat", "dog"}};
    c.confusable_delta = 0.04;
    CHECK_NOTHROW(c.validate());
    const auto colors = c.resolved_colors();
    for (int k = 0; k < 3; ++k) CHECK(std::abs(colors[0][k] - colors[1][k]) == doctest::Approx(0.04));
}

TEST_CASE("palette sidecar") {
    cpc_test::TempDir dir("palette");
    write_palette(dir / "p.json", {"background", "cat"});
    const auto j = nlohmann::json::parse(cpc_test::slurp(dir / "p.json"));
    REQUIRE(j["classes"].size() == 2);
    CHECK(j["classes"][1]["name"] == "cat");
    CHECK(j["classes"][1]["index"] == 1);
    CHECK(j["classes"][1]["color"].size() == 3);
}
