#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cpc/clustering.hpp"
#include "cpc/dataio.hpp"
#include "cpc/losses.hpp"
#include "cpc/model.hpp"

namespace cpc::train {

enum class Optimizer { sgd, adam };

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 4;
    double lr_stage1 = 1e-3;
    double lr_stage2 = 1e-4;
    std::size_t stage1_epochs = 2;
    double eps = 0.85;
    double lambda_pce = 0.01;
    std::uint64_t seed = 1;
    Optimizer optimizer = Optimizer::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    /// Stop after this many optimizer steps; 0 means run every epoch.
    std::size_t max_steps = 0;
    /// Whether background (class 0) is scored by the classification loss.
    bool background_in_mce = true;
    /// Leading samples with ground truth used for the per-epoch probe mIoU.
    std::size_t probe_count = 8;
    unsigned threads = 1;
    /// Written at every epoch end when set.
    std::optional<std::filesystem::path> checkpoint_path;

    /// Throws ConfigError.
    void validate() const;
};

/// lr_stage1 while epoch < stage1_epochs, then lr_stage2.
double lr_schedule(std::size_t epoch, const TrainConfig& cfg);

struct StepRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double mce = 0.0;
    double pce_sum = 0.0;
    double total = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;

    friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double mean_mce = 0.0;
    double mean_total = 0.0;
    /// Patch-argmax mIoU (no CRF) on the probe split; empty without ground truth.
    std::optional<double> probe_miou;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;

    /// One JSON object per line, step and epoch records interleaved in run order.
    std::string to_jsonl() const;
    void write(const std::filesystem::path& path) const;

    friend bool operator==(const TrainLog&, const TrainLog&) = default;
};

/// A sample with its fixed patch features, cluster vector and label vector.
struct PreparedSample {
    std::string image_id;
    Matrix features;
    clustering::ClusterVector u;
    loss::ImageLabels labels;
    std::optional<LabelMap> gt_mask;
    std::size_t height = 0;
    std::size_t width = 0;
};

/// Throws ConfigError when a sample label is not covered by the partition.
std::vector<PreparedSample> prepare_samples(const std::vector<data::Sample>& samples,
                                            const clustering::CategoryList& categories,
                                            const clustering::CategoryPartition& partition,
                                            const model::FeatureConfig& cfg, const model::FeatureProvider& provider);

struct SampleGradient {
    loss::LossBreakdown loss;
    model::ModelGrads grads;
};

/// Forward, total loss and backward for one sample.
SampleGradient sample_gradient(const PreparedSample& sample, const model::ModelParams& params,
                               const model::FeatureConfig& cfg, double eps, double lambda_pce, std::size_t first_class);

struct TrainResult {
    model::ModelParams params;
    TrainLog log;
};

/// Deterministic mini-batch training from `initial`. Per-sample gradients may
/// run on cfg.threads workers; they are summed in batch order, so the result
/// does not depend on the thread count. Throws NumericError naming the sample
/// and step if a loss is non-finite.
TrainResult train(const std::vector<PreparedSample>& samples, const model::ModelParams& initial,
                  const TrainConfig& cfg, const model::FeatureConfig& feature_cfg);

/// Patch-argmax mIoU (bilinear upsampling, no CRF) over samples with ground truth.
std::optional<double> probe_miou(const std::vector<PreparedSample>& samples, std::size_t count,
                                 const model::ModelParams& params, const model::FeatureConfig& cfg);

}  // namespace cpc::train
