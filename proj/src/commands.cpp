#include "cpc/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>

#include <CLI11.hpp>

#include "cpc/errors.hpp"
#include "cpc/evaluation.hpp"
#include "cpc/llm_client.hpp"
#include "cpc/losses.hpp"

namespace fs = std::filesystem;

namespace cpc::cli {

namespace {

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

fs::path prompts_dir(const config::RunConfig& cfg) {
    return cfg.paths.prompts.empty() ? fs::path(CPC_ASSET_DIR) / "prompts" : cfg.paths.prompts;
}

// Everything a dataset-backed command needs, loaded and checked before any
// output is written.
struct Workspace {
    clustering::CategoryList categories;
    std::vector<data::Sample> samples;
    clustering::CategoryPartition partition;
    model::FeatureConfig features;
    std::unique_ptr<model::FeatureProvider> provider;
};

Workspace open_workspace(const config::RunConfig& cfg, bool need_partition) {
    Workspace ws;
    ws.categories = clustering::read_categories_file(cfg.paths.categories_file());
    ws.features = cfg.model;
    ws.features.class_count = ws.categories.size() + 1;
    ws.features.validate();
    ws.samples = data::load_dataset(cfg.paths.manifest_file(), ws.categories);
    for (const auto& s : ws.samples) {
        if (s.image.height != ws.features.image_side || s.image.width != ws.features.image_side) {
            throw ConfigError("image " + s.image_id + " is " + std::to_string(s.image.height) + "x" +
                              std::to_string(s.image.width) + " but model.image_side is " +
                              std::to_string(ws.features.image_side));
        }
    }
    if (need_partition) ws.partition = clustering::read_partition_file(cfg.paths.partition, ws.categories);
    if (cfg.paths.features.empty()) {
        ws.provider = std::make_unique<model::RandomProjectionProvider>(ws.features, cfg.run.feature_seed);
    } else {
        ws.provider = std::make_unique<model::FileFeatureProvider>(cfg.paths.features, ws.features);
    }
    return ws;
}

}  // namespace

GradcheckOutcome run_gradcheck(const config::GradcheckConfig& cfg, unsigned threads) {
    cfg.validate();
    model::FeatureConfig fc;
    fc.patch_side = 1;
    fc.image_side = cfg.grid_side;
    fc.feature_dim = cfg.feature_dim;
    fc.cluster_dim = cfg.cluster_dim;
    fc.class_count = cfg.classes;
    fc.top_k = cfg.top_k;
    fc.validate();

    GradcheckOutcome outcome;
    std::size_t accepted = 0;
    // Bounded so a pathological configuration cannot loop forever.
    const std::size_t max_tries = cfg.seeds * 20;
    for (std::uint64_t seed = cfg.first_seed; accepted < cfg.seeds && outcome.seeds.size() < max_tries; ++seed) {
        Rng rng(derive_seed(seed, 0x6C0C));
        train::PreparedSample sample;
        sample.image_id = "gradcheck";
        sample.features = Matrix(fc.patch_count(), fc.feature_dim);
        for (double& v : sample.features.flat()) v = rng.normal();
        sample.u.bits.assign(cfg.clusters, 0);
        for (auto& b : sample.u.bits) b = rng.below(2);
        sample.u.bits[rng.below(cfg.clusters)] = 1;
        sample.labels.y.assign(cfg.classes, 0);
        for (auto& y : sample.labels.y) y = rng.below(2);
        sample.labels.y[0] = 1;

        model::ModelParams params = model::init_params(derive_seed(seed, 0x9A2A), cfg.clusters, fc);
        for (double& w : params.w.flat()) w *= cfg.classifier_scale;

        GradcheckSeed rec;
        rec.seed = seed;
        const auto fwd = model::forward_features(sample.features, sample.u, params, fc);
        rec.min_margin = std::numeric_limits<double>::infinity();
        for (double z : fwd.z.flat()) {
            rec.min_margin = std::min({rec.min_margin, std::abs(z - cfg.eps), std::abs(z - (1.0 - cfg.eps))});
        }
        if (rec.min_margin < cfg.guard) {
            rec.skipped = true;
            outcome.seeds.push_back(rec);
            continue;
        }

        auto grad = train::sample_gradient(sample, params, fc, cfg.eps, cfg.lambda_pce, 0);
        for (const auto& [pos, neg] : grad.loss.pair_counts) rec.pce_pairs += pos + neg;
        auto analytic = grad.grads.flatten();
        if (cfg.sabotage) analytic.back() = analytic.back() * 1.5 + 1e-3;

        const auto flat = params.flatten();
        const LossFn loss_fn = [&](std::span<const double> x) {
            model::ModelParams p = params;
            p.assign(x);
            const auto f = model::forward_features(sample.features, sample.u, p, fc);
            return loss::total_loss(f.p, sample.labels, f.z, f.cache.f_out, cfg.eps, cfg.lambda_pce, 0).breakdown.total;
        };
        rec.report = finite_diff_check(loss_fn, flat, analytic, cfg.step, threads);
        outcome.max_rel_error = std::max(outcome.max_rel_error, rec.report.max_rel_error);
        outcome.seeds.push_back(rec);
        ++accepted;
    }
    if (accepted < cfg.seeds) throw NumericError("gradcheck: too many seeds fell inside the threshold guard");
    outcome.passed = outcome.max_rel_error <= cfg.tolerance;
    return outcome;
}

int cmd_cluster(const config::RunConfig& cfg, std::ostream& out) {
    if (cfg.llm.endpoint == "mock" && !cfg.llm.fixture_path) {
        throw ConfigError("llm.fixture_path is required for the mock endpoint");
    }
    const auto categories = clustering::read_categories_file(cfg.paths.categories_file());
    const auto templates = clustering::PromptTemplates::load(prompts_dir(cfg));
    const fs::path out_dir = cfg.paths.partition.has_parent_path() ? cfg.paths.partition.parent_path() : fs::path(".");

    std::unique_ptr<llm::Client> client;
    if (cfg.llm.endpoint == "mock") {
        client = std::make_unique<llm::MockClient>(llm::MockClient::from_file(*cfg.llm.fixture_path));
    } else {
        const fs::path raw_log = out_dir / "llm_raw.jsonl";
        fs::create_directories(out_dir);
        fs::remove(raw_log);
        if (cfg.llm.endpoint == "env") {
            client = std::make_unique<llm::HttpChatClient>(llm::HttpChatClient::from_environment(cfg.llm.model_name, raw_log));
        } else {
            const char* key = std::getenv("CPC_LLM_KEY");
            client = std::make_unique<llm::HttpChatClient>(cfg.llm.endpoint, cfg.llm.model_name, key ? key : "", raw_log);
        }
    }

    const auto result = clustering::self_refine(*client, categories, templates, cfg.llm);
    fs::create_directories(out_dir);
    clustering::write_partition_file(cfg.paths.partition, result.partition);
    client->write_transcript(out_dir / "cluster_transcript.jsonl");
    config::write_snapshot(out_dir / "cluster.resolved.ini", cfg);

    out << "parsed " << result.samples.size() << " of " << cfg.llm.query_count << " generations, "
        << result.refine_calls << " refine calls, " << (result.converged ? "converged" : "stopped at the cap") << "\n";
    for (const auto& c : result.partition.clusters) {
        out << "  " << c.name << ":";
        for (const auto& m : c.members) out << " " << m;
        out << "\n";
    }
    out << "partition written to " << cfg.paths.partition.string() << "\n";
    return ok;
}

int cmd_gendata(const config::RunConfig& cfg, std::ostream& out) {
    cfg.synth.validate();
    if (cfg.synth.image_side % cfg.model.patch_side != 0) {
        throw ConfigError("synth.image_side must be divisible by model.patch_side");
    }
    const auto manifest = data::gen_synthetic(cfg.synth, cfg.paths.dataset_dir);
    config::write_snapshot(cfg.paths.dataset_dir / "gen-data.resolved.ini", cfg);
    out << "wrote " << cfg.synth.count << " images; manifest " << manifest.string() << "\n";
    return ok;
}

int cmd_train(const config::RunConfig& cfg, std::ostream& out) {
    const auto ws = open_workspace(cfg, true);
    const auto prepared = train::prepare_samples(ws.samples, ws.categories, ws.partition, ws.features, *ws.provider);
    const auto initial = model::init_params(cfg.train.seed, ws.partition.size(), ws.features);

    train::TrainConfig tc = cfg.train;
    tc.threads = cfg.run.threads;
    tc.checkpoint_path = cfg.paths.checkpoint;
    ensure_parent(cfg.paths.checkpoint);
    fs::create_directories(cfg.paths.output_dir);
    config::write_snapshot(cfg.paths.output_dir / "train.resolved.ini", cfg);

    const auto result = train::train(prepared, initial, tc, ws.features);
    model::write_checkpoint(cfg.paths.checkpoint, result.params, ws.features);
    result.log.write(cfg.paths.output_dir / "train_log.jsonl");

    const auto& last = result.log.steps.back();
    out << std::setprecision(6) << "steps " << result.log.steps.size() << ", final mce " << last.mce << ", pce_sum "
        << last.pce_sum << ", total " << last.total << "\n";
    if (const auto& e = result.log.epochs.back(); e.probe_miou) out << "probe miou " << *e.probe_miou << "\n";
    out << "checkpoint written to " << cfg.paths.checkpoint.string() << "\n";
    return ok;
}

int cmd_infer(const config::RunConfig& cfg, std::ostream& out) {
    const auto ws = open_workspace(cfg, true);
    const auto params = model::read_checkpoint(cfg.paths.checkpoint, ws.features);
    if (params.cluster_count() != ws.partition.size()) {
        throw IoError("checkpoint has " + std::to_string(params.cluster_count()) + " clusters but the partition has " +
                      std::to_string(ws.partition.size()));
    }
    const fs::path dir = cfg.paths.predictions_dir();
    fs::create_directories(dir);
    fs::create_directories(cfg.paths.output_dir);
    config::write_snapshot(cfg.paths.output_dir / "infer.resolved.ini", cfg);
    const auto names = data::class_names(ws.categories);
    for (const auto& s : ws.samples) {
        const auto probs =
            infer::predict_pixels(s.image_id, s.image, s.labels, ws.partition, params, ws.features, *ws.provider, cfg.infer.upscale);
        const auto image = infer::upscale_nearest(s.image, cfg.infer.upscale);
        const auto refined = infer::crf_refine(image, probs, cfg.crf, cfg.run.threads);
        data::write_pgm(dir / (s.image_id + ".pgm"), infer::argmax_labels(refined));
        data::write_palette(dir / (s.image_id + ".palette.json"), names);
    }
    out << "wrote " << ws.samples.size() << " masks to " << dir.string() << "\n";
    return ok;
}

int cmd_eval(const config::RunConfig& cfg, std::ostream& out) {
    const auto ws = open_workspace(cfg, false);
    const fs::path dir = cfg.paths.predictions_dir();
    eval::ConfusionMatrix cm(ws.features.class_count);
    for (const auto& s : ws.samples) {
        if (!s.gt_mask) throw IoError("image " + s.image_id + " has no ground-truth mask");
        const auto pred = data::read_pgm(dir / (s.image_id + ".pgm"));
        try {
            cm.accumulate(pred, *s.gt_mask);
        } catch (const std::invalid_argument& e) {
            throw IoError("image " + s.image_id + ": " + e.what());
        }
    }
    const auto result = eval::miou(cm);
    fs::create_directories(cfg.paths.output_dir);
    const fs::path report = cfg.paths.output_dir / "eval_report.json";
    {
        std::ofstream f(report, std::ios::binary);
        if (!f) throw IoError("cannot write " + report.string());
        f << eval::report_json(cm, result, data::class_names(ws.categories));
    }
    config::write_snapshot(cfg.paths.output_dir / "eval.resolved.ini", cfg);
    out << std::setprecision(6) << "mIoU " << result.mean << "\n";
    return ok;
}

int cmd_gradcheck(const config::RunConfig& cfg, std::ostream& out) {
    const auto outcome = run_gradcheck(cfg.gradcheck, cfg.run.threads);
    out << std::setprecision(4);
    for (const auto& s : outcome.seeds) {
        out << "seed " << s.seed;
        if (s.skipped) {
            out << " skipped (margin " << s.min_margin << ")\n";
            continue;
        }
        out << " max_rel_error " << s.report.max_rel_error << " worst_param " << s.report.worst_param_index
            << " analytic " << s.report.analytic << " numeric " << s.report.numeric << " pce_pairs " << s.pce_pairs << "\n";
    }
    out << "max_rel_error " << outcome.max_rel_error << (outcome.passed ? " PASS" : " FAIL") << "\n";
    return outcome.passed ? ok : numeric_error;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    // Pull out --section.key=value overrides before CLI11 sees the rest.
    std::vector<std::pair<std::string, std::string>> overrides;
    std::vector<std::string> rest;
    for (const auto& a : args) {
        const auto eq = a.find('=');
        if (a.rfind("--", 0) == 0 && eq != std::string::npos && a.substr(2, eq - 2).find('.') != std::string::npos) {
            overrides.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
        } else {
            rest.push_back(a);
        }
    }

    CLI::App app{"Cluster-prompted weakly supervised segmentation toolkit", "cpc"};
    app.require_subcommand(1);
    std::string config_path;
    unsigned threads = 0;
    app.add_option("--config", config_path, "INI configuration file")->check(CLI::ExistingFile);
    app.add_option("--threads", threads, "worker thread cap")->check(CLI::PositiveNumber);
    using Handler = int (*)(const config::RunConfig&, std::ostream&);
    const std::vector<std::tuple<std::string, std::string, Handler>> commands = {
        {"cluster", "self-refined category clustering through the LLM client", cmd_cluster},
        {"gen-data", "generate a synthetic dataset", cmd_gendata},
        {"train", "train the segmentation model", cmd_train},
        {"infer", "write pseudo-label masks", cmd_infer},
        {"eval", "score masks against ground truth", cmd_eval},
        {"gradcheck", "finite-difference check of the loss gradients", cmd_gradcheck},
    };
    for (const auto& [name, help, fn] : commands) app.add_subcommand(name, help)->fallthrough();

    std::vector<std::string> reversed(rest.rbegin(), rest.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return config_error;
    }

    try {
        config::RunConfig cfg = config_path.empty() ? config::RunConfig{} : config::load_file(config_path);
        config::apply_overrides(cfg, overrides);
        if (threads != 0) config::set_value(cfg, "run.threads", std::to_string(threads));
        cfg.validate();
        for (const auto& [name, help, fn] : commands) {
            if (app.got_subcommand(name)) return fn(cfg, out);
        }
        return config_error;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return config_error;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return numeric_error;
    } catch (const ServiceError& e) {
        err << "service error: " << e.what() << "\n";
        return io_error;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return io_error;
    }
}

}  // namespace cpc::cli
