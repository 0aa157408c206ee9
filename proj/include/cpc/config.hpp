#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cpc/clustering.hpp"
#include "cpc/dataio.hpp"
#include "cpc/inference.hpp"
#include "cpc/model.hpp"
#include "cpc/trainer.hpp"

namespace cpc::config {

struct PathsConfig {
    std::filesystem::path categories;   // empty: <dataset_dir>/categories.txt
    std::filesystem::path dataset_dir = "data";
    std::filesystem::path manifest;     // empty: <dataset_dir>/manifest.json
    std::filesystem::path partition = "out/partition.json";
    std::filesystem::path checkpoint = "out/model.cpcm";
    std::filesystem::path output_dir = "out";
    std::filesystem::path predictions;  // empty: <output_dir>/masks
    std::filesystem::path features;     // optional CPCF file replacing the random projection
    std::filesystem::path prompts;      // empty: bundled templates

    std::filesystem::path categories_file() const;
    std::filesystem::path manifest_file() const;
    std::filesystem::path predictions_dir() const;
};

struct InferConfig {
    std::size_t upscale = 1;
};

/// Randomized toy problem for the gradient check.
struct GradcheckConfig {
    std::size_t grid_side = 4;
    std::size_t feature_dim = 8;
    std::size_t cluster_dim = 4;
    std::size_t clusters = 3;
    std::size_t classes = 4;
    std::size_t top_k = 2;
    double eps = 0.6;
    double lambda_pce = 0.01;
    double step = 1e-5;
    double tolerance = 1e-4;
    /// Seeds to accept; seeds with a patch probability within `guard` of a
    /// confidence threshold are skipped and replaced by the next one.
    std::size_t seeds = 5;
    std::uint64_t first_seed = 1;
    double guard = 1e-3;
    /// Multiplier on the initial classifier weights so some patch
    /// probabilities clear the confidence threshold.
    double classifier_scale = 20.0;
    /// Negative control: perturbs one analytic gradient entry.
    bool sabotage = false;

    void validate() const;
};

struct RunOptions {
    unsigned threads = 1;
    std::uint64_t feature_seed = 7;
};

struct RunConfig {
    model::FeatureConfig model;
    train::TrainConfig train;
    infer::CrfConfig crf;
    data::SynthConfig synth;
    clustering::LLMClientConfig llm;
    PathsConfig paths;
    InferConfig infer;
    GradcheckConfig gradcheck;
    RunOptions run;

    /// Cross-field checks; throws ConfigError. class_count is derived from
    /// the category list at command time and is not checked here.
    void validate() const;
};

/// Every settable key as "section.key".
std::vector<std::string> known_keys();

/// Applies one "section.key" = value assignment. Throws ConfigError for
/// unknown keys or unparsable values.
void set_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Current value of a key in the text form accepted by set_value.
std::string get_value(const RunConfig& cfg, const std::string& key);

/// Parses an INI file (sections and key = value lines) on top of the defaults.
RunConfig load_file(const std::filesystem::path& path);
RunConfig load_string(const std::string& text);

/// Applies --section.key=value style overrides in order.
void apply_overrides(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& overrides);

/// Resolved configuration as INI text; loading it reproduces `cfg`.
std::string to_ini(const RunConfig& cfg);
void write_snapshot(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace cpc::config
