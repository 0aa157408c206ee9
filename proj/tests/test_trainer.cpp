#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include <json.hpp>

#include "cpc/errors.hpp"
#include "cpc/trainer.hpp"
#include "test_util.hpp"

using namespace cpc;
using namespace cpc::train;

namespace {

struct Fixture {
    model::FeatureConfig fcfg;
    clustering::CategoryPartition partition;
    std::vector<PreparedSample> samples;
    model::ModelParams init;

    Fixture() {
        data::SynthConfig s;
        s.image_side = 16;
        s.count = 6;
        fcfg.image_side = 16;
        fcfg.patch_side = 4;
        fcfg.feature_dim = 6;
        fcfg.cluster_dim = 2;
        fcfg.class_count = 5;
        fcfg.top_k = 2;
        partition.clusters = {{"animals", {"cat", "dog"}}, {"vehicles", {"bus", "car"}}};
        model::RandomProjectionProvider provider(fcfg, 7);
        samples = prepare_samples(data::generate_samples(s), s.categories, partition, fcfg, provider);
        init = model::init_params(1, partition.size(), fcfg);
    }
};

TrainConfig quick() {
    TrainConfig c;
    c.epochs = 3;
    c.batch_size = 4;
    c.lr_stage1 = 0.05;
    c.lr_stage2 = 0.01;
    c.stage1_epochs = 1;
    c.probe_count = 2;
    return c;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
    TrainConfig c;
    c.lr_stage1 = 1e-3;
    c.lr_stage2 = 1e-4;
    c.stage1_epochs = 2;
    CHECK(lr_schedule(0, c) == 1e-3);
    CHECK(lr_schedule(1, c) == 1e-3);
    CHECK(lr_schedule(2, c) == 1e-4);
    CHECK(lr_schedule(29, c) == 1e-4);
    c.stage1_epochs = 0;
    CHECK(lr_schedule(0, c) == 1e-4);
}

TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.eps = 0.4;
    try {
        c.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("epsilon must exceed 0.5") != std::string::npos);
    }
    c = {};
    c.eps = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.lr_stage2 = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.lambda_pce = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("prepared samples") {
    Fixture f;
    REQUIRE(f.samples.size() == 6);
    for (const auto& s : f.samples) {
        CHECK(s.features.rows() == 16);
        CHECK(s.u.size() == 2);
        CHECK(s.labels.y[0] == 1);
        CHECK(s.gt_mask.has_value());
    }

    auto wrong = f.fcfg;
    wrong.class_count = 4;
    data::SynthConfig s;
    s.image_side = 16;
    s.count = 2;
    model::RandomProjectionProvider provider(f.fcfg, 7);
    CHECK_THROWS_AS(prepare_samples(data::generate_samples(s), s.categories, f.partition, wrong, provider), ConfigError);

    clustering::CategoryPartition partial;
    partial.clusters = {{"animals", {"cat", "dog"}}};
    CHECK_THROWS_AS(prepare_samples(data::generate_samples(s), s.categories, partial, f.fcfg, provider), ConfigError);
}

TEST_CASE("training is deterministic and thread invariant") {
    Fixture f;
    auto cfg = quick();
    const auto a = train::train(f.samples, f.init, cfg, f.fcfg);
    const auto b = train::train(f.samples, f.init, cfg, f.fcfg);
    cfg.threads = 3;
    const auto c = train::train(f.samples, f.init, cfg, f.fcfg);
    CHECK(a.params == b.params);
    CHECK(a.log == b.log);
    CHECK(a.params == c.params);
    CHECK(a.log.to_jsonl() == c.log.to_jsonl());
    CHECK_FALSE(a.params == f.init);

    // 6 samples in batches of 4: two steps per epoch.
    CHECK(a.log.steps.size() == 6);
    CHECK(a.log.epochs.size() == 3);
    CHECK(a.log.steps[0].lr == 0.05);
    CHECK(a.log.steps[2].lr == 0.01);
    CHECK(a.log.epochs[0].probe_miou.has_value());

    cfg.seed = 2;
    CHECK_FALSE(train::train(f.samples, f.init, cfg, f.fcfg).params == a.params);
}

TEST_CASE("max_steps stops early") {
    Fixture f;
    auto cfg = quick();
    cfg.max_steps = 3;
    const auto r = train::train(f.samples, f.init, cfg, f.fcfg);
    CHECK(r.log.steps.size() == 3);
    CHECK(r.log.epochs.size() == 2);
}

TEST_CASE("one SGD step follows the mean gradient") {
    Fixture f;
    auto cfg = quick();
    cfg.optimizer = Optimizer::sgd;
    cfg.batch_size = 6;
    cfg.epochs = 1;
    const auto r = train::train(f.samples, f.init, cfg, f.fcfg);

    auto mean = f.init.flatten();
    std::vector<double> g(mean.size(), 0.0);
    for (const auto& s : f.samples) {
        const auto sg = sample_gradient(s, f.init, f.fcfg, cfg.eps, cfg.lambda_pce, 0).grads.flatten();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += sg[i];
    }
    const auto got = r.params.flatten();
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(got[i] == doctest::Approx(mean[i] - cfg.lr_stage1 * g[i] / 6.0).epsilon(1e-12));
    }
}

TEST_CASE("first Adam step moves each parameter by about lr") {
    Fixture f;
    auto cfg = quick();
    cfg.max_steps = 1;
    cfg.lr_stage1 = 1e-3;
    const auto r = train::train(f.samples, f.init, cfg, f.fcfg);
    const auto before = f.init.flatten();
    const auto after = r.params.flatten();
    std::size_t moved = 0;
    for (std::size_t i = 0; i < before.size(); ++i) {
        const double d = std::abs(after[i] - before[i]);
        CHECK(d <= 1e-3 * (1.0 + 1e-9));
        if (d > 0.99e-3) ++moved;
    }
    CHECK(moved > before.size() / 2);
}

TEST_CASE("non-finite inputs raise a numeric error naming the sample") {
    Fixture f;
    f.samples[2].features(0, 0) = std::numeric_limits<double>::quiet_NaN();
    auto cfg = quick();
    cfg.batch_size = 6;
    try {
        train::train(f.samples, f.init, cfg, f.fcfg);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find(f.samples[2].image_id) != std::string::npos);
        CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
}

TEST_CASE("checkpoint and log files") {
    Fixture f;
    cpc_test::TempDir dir("train");
    auto cfg = quick();
    cfg.checkpoint_path = dir / "m.cpcm";
    const auto r = train::train(f.samples, f.init, cfg, f.fcfg);
    CHECK(model::read_checkpoint(dir / "m.cpcm", f.fcfg) == r.params);

    r.log.write(dir / "log.jsonl");
    std::istringstream in(cpc_test::slurp(dir / "log.jsonl"));
    std::string line;
    std::size_t steps = 0, epochs = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        if (j["type"] == "step") {
            ++steps;
            CHECK(j.contains("grad_norm"));
            CHECK(j.contains("mce"));
        } else {
            CHECK(j["type"] == "epoch");
            ++epochs;
        }
    }
    CHECK(steps == r.log.steps.size());
    CHECK(epochs == r.log.epochs.size());
}

TEST_CASE("probe miou without ground truth is empty") {
    Fixture f;
    for (auto& s : f.samples) s.gt_mask.reset();
    CHECK_FALSE(probe_miou(f.samples, 4, f.init, f.fcfg).has_value());
}
