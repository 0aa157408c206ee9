#include "cpc/trainer.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "cpc/errors.hpp"
#include "cpc/evaluation.hpp"
#include "cpc/inference.hpp"

namespace cpc::train {

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
    if (!(lr_stage1 > 0.0) || !(lr_stage2 > 0.0)) throw ConfigError("learning rates must be positive");
    if (!(eps > 0.5)) throw ConfigError("epsilon must exceed 0.5");
    if (!(eps < 1.0)) throw ConfigError("epsilon must be below 1");
    if (!(lambda_pce >= 0.0) || !std::isfinite(lambda_pce)) throw ConfigError("train.lambda_pce must be finite and non-negative");
    if (optimizer == Optimizer::adam) {
        if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
            throw ConfigError("adam betas must lie in [0, 1)");
        }
        if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
    }
    if (threads < 1) throw ConfigError("threads must be at least 1");
}

double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
    return epoch < cfg.stage1_epochs ? cfg.lr_stage1 : cfg.lr_stage2;
}

std::string TrainLog::to_jsonl() const {
    using nlohmann::json;
    std::string out;
    std::size_t si = 0;
    for (const auto& e : epochs) {
        for (; si < steps.size() && steps[si].epoch <= e.epoch; ++si) {
            const auto& s = steps[si];
            json j = {{"type", "step"},   {"step", s.step},           {"epoch", s.epoch},
                      {"mce", s.mce},     {"pce_sum", s.pce_sum},     {"total", s.total},
                      {"grad_norm", s.grad_norm}, {"lr", s.lr}};
            out += j.dump() + "\n";
        }
        json j = {{"type", "epoch"}, {"epoch", e.epoch}, {"mean_mce", e.mean_mce}, {"mean_total", e.mean_total}};
        j["probe_miou"] = e.probe_miou ? json(*e.probe_miou) : json(nullptr);
        out += j.dump() + "\n";
    }
    return out;
}

void TrainLog::write(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write train log " + path.string());
    f << to_jsonl();
    if (!f) throw IoError("failed writing train log " + path.string());
}

std::vector<PreparedSample> prepare_samples(const std::vector<data::Sample>& samples,
                                            const clustering::CategoryList& categories,
                                            const clustering::CategoryPartition& partition,
                                            const model::FeatureConfig& cfg, const model::FeatureProvider& provider) {
    if (samples.empty()) throw ConfigError("training set is empty");
    if (cfg.class_count != categories.size() + 1) {
        throw ConfigError("model.class_count is " + std::to_string(cfg.class_count) + " but the dataset has " +
                          std::to_string(categories.size() + 1) + " classes including background");
    }
    std::vector<PreparedSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        PreparedSample p;
        p.image_id = s.image_id;
        try {
            p.u = clustering::build_cluster_vector(s.labels, partition);
            p.labels.y = data::label_vector(s.labels, categories);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("sample " + s.image_id + ": " + e.what());
        }
        if (p.u.bits.size() != partition.size()) throw ConfigError("cluster vector size mismatch");
        p.features = model::embed_patches(s.image_id, s.image, cfg, provider);
        p.gt_mask = s.gt_mask;
        p.height = s.image.height;
        p.width = s.image.width;
        out.push_back(std::move(p));
    }
    return out;
}

SampleGradient sample_gradient(const PreparedSample& sample, const model::ModelParams& params,
                               const model::FeatureConfig& cfg, double eps, double lambda_pce, std::size_t first_class) {
    auto fwd = model::forward_features(sample.features, sample.u, params, cfg);
    auto loss = loss::total_loss(fwd.p, sample.labels, fwd.z, fwd.cache.f_out, eps, lambda_pce, first_class);
    SampleGradient out;
    out.grads = model::backward(fwd.cache, params, loss.d_z, loss.d_p, loss.d_f_out);
    out.loss = std::move(loss.breakdown);
    return out;
}

std::optional<double> probe_miou(const std::vector<PreparedSample>& samples, std::size_t count,
                                 const model::ModelParams& params, const model::FeatureConfig& cfg) {
    eval::ConfusionMatrix cm(cfg.class_count);
    bool any = false;
    for (std::size_t i = 0; i < samples.size() && i < count; ++i) {
        const auto& s = samples[i];
        if (!s.gt_mask) continue;
        const auto fwd = model::forward_features(s.features, s.u, params, cfg);
        const auto probs = infer::upsample_predictions(fwd.z, cfg.grid_side(), s.height, s.width);
        cm.accumulate(infer::argmax_labels(probs), *s.gt_mask);
        any = true;
    }
    if (!any || cm.total() == 0) return std::nullopt;
    return eval::miou(cm).mean;
}

TrainResult train(const std::vector<PreparedSample>& samples, const model::ModelParams& initial,
                  const TrainConfig& cfg, const model::FeatureConfig& feature_cfg) {
    cfg.validate();
    feature_cfg.validate();
    if (samples.empty()) throw ConfigError("training set is empty");

    TrainResult result{initial, {}};
    auto& params = result.params;
    const std::size_t n_params = params.flat_size();
    std::vector<double> m(n_params, 0.0), v(n_params, 0.0);
    const std::size_t first_class = cfg.background_in_mce ? 0 : 1;

    std::vector<std::size_t> order(samples.size());
    std::size_t step = 0;
    bool stop = false;
    for (std::size_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(cfg.seed, 0x5EED0000ULL + epoch));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        const double lr = lr_schedule(epoch, cfg);
        double epoch_mce = 0.0, epoch_total = 0.0;
        std::size_t epoch_steps = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            if (cfg.max_steps != 0 && step >= cfg.max_steps) {
                stop = true;
                break;
            }
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const std::size_t bs = end - start;
            std::vector<SampleGradient> per(bs);
            parallel_for(bs, cfg.threads, [&](std::size_t b) {
                try {
                    per[b] = sample_gradient(samples[order[start + b]], params, feature_cfg, cfg.eps, cfg.lambda_pce,
                                             first_class);
                } catch (const std::invalid_argument&) {
                    // Softmax rejects non-finite logits; report it as the loss blowing up.
                    if (samples[order[start + b]].features.all_finite() && params.all_finite()) throw;
                    per[b].loss.total = std::numeric_limits<double>::quiet_NaN();
                }
            });

            StepRecord rec;
            rec.step = step;
            rec.epoch = epoch;
            rec.lr = lr;
            std::vector<double> grad(n_params, 0.0);
            for (std::size_t b = 0; b < bs; ++b) {
                const auto& l = per[b].loss;
                if (!std::isfinite(l.total)) {
                    throw NumericError("non-finite loss on sample " + samples[order[start + b]].image_id + " at step " +
                                       std::to_string(step));
                }
                rec.mce += l.mce;
                rec.pce_sum += l.pce_sum();
                rec.total += l.total;
                const auto g = per[b].grads.flatten();
                for (std::size_t i = 0; i < n_params; ++i) grad[i] += g[i];
            }
            const double inv = 1.0 / static_cast<double>(bs);
            rec.mce *= inv;
            rec.pce_sum *= inv;
            rec.total *= inv;
            double norm2 = 0.0;
            for (double& g : grad) {
                g *= inv;
                norm2 += g * g;
            }
            rec.grad_norm = std::sqrt(norm2);
            if (!std::isfinite(rec.grad_norm)) {
                throw NumericError("non-finite gradient at step " + std::to_string(step));
            }

            auto flat = params.flatten();
            if (cfg.optimizer == Optimizer::sgd) {
                for (std::size_t i = 0; i < n_params; ++i) flat[i] -= lr * grad[i];
            } else {
                const double t = static_cast<double>(step + 1);
                const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
                const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
                for (std::size_t i = 0; i < n_params; ++i) {
                    m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * grad[i];
                    v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
                    flat[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
                }
            }
            params.assign(flat);

            epoch_mce += rec.mce;
            epoch_total += rec.total;
            ++epoch_steps;
            result.log.steps.push_back(rec);
            ++step;
        }
        if (epoch_steps == 0) break;

        EpochRecord er;
        er.epoch = epoch;
        er.mean_mce = epoch_mce / static_cast<double>(epoch_steps);
        er.mean_total = epoch_total / static_cast<double>(epoch_steps);
        er.probe_miou = probe_miou(samples, cfg.probe_count, params, feature_cfg);
        result.log.epochs.push_back(er);
        if (cfg.checkpoint_path) model::write_checkpoint(*cfg.checkpoint_path, params, feature_cfg);
    }
    return result;
}

}  // namespace cpc::train
