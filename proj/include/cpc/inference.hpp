#pragma once

#include <set>
#include <string>

#include "cpc/clustering.hpp"
#include "cpc/label_map.hpp"
#include "cpc/model.hpp"
#include "cpc/numerics.hpp"

namespace cpc::infer {

/// height x width x C per-pixel class distributions.
using PixelProbMap = Grid3;

struct CrfConfig {
    std::size_t iterations = 5;
    double w_smooth = 3.0;
    double theta_spatial = 3.0;     // pixels
    double w_appearance = 10.0;
    double theta_color = 0.1;       // on the [0, 1] channel scale
    double theta_app_spatial = 8.0; // pixels
    /// Pairwise kernels are cached when N(N-1)/2 fits in this many doubles,
    /// otherwise they are recomputed every iteration. Both paths give
    /// identical results.
    std::size_t kernel_cache_limit = std::size_t{1} << 24;

    /// Throws ConfigError.
    void validate() const;
};

/// Reshapes Z (s x C) onto its patch grid, upsamples bilinearly to
/// out_h x out_w and renormalizes every pixel.
PixelProbMap upsample_predictions(const Matrix& z, std::size_t grid_side, std::size_t out_h, std::size_t out_w);

/// Forward pass plus upsampling to the image size times `upscale`.
PixelProbMap predict_pixels(const std::string& image_id, const model::Image& image, const std::set<std::string>& labels,
                            const clustering::CategoryPartition& partition, const model::ModelParams& params,
                            const model::FeatureConfig& cfg, const model::FeatureProvider& provider,
                            std::size_t upscale = 1);

/// Mean-field inference on a fully connected CRF with Potts compatibility and
/// a smoothness (spatial) plus appearance (spatial x color) Gaussian kernel.
/// Unaries are -ln of the clamped input; messages are summed exactly over all
/// pixel pairs. `threads` only changes speed.
PixelProbMap crf_refine(const model::Image& image, const PixelProbMap& probs, const CrfConfig& crf, unsigned threads = 1);

/// Per-pixel argmax; ties go to the lowest class index.
LabelMap argmax_labels(const PixelProbMap& probs);

/// Nearest-neighbor enlargement by an integer factor.
model::Image upscale_nearest(const model::Image& image, std::size_t factor);

}  // namespace cpc::infer
