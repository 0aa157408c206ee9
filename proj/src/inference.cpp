#include "cpc/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cpc/errors.hpp"

namespace cpc::infer {

void CrfConfig::validate() const {
    if (w_smooth < 0.0 || w_appearance < 0.0) throw ConfigError("crf weights must be non-negative");
    if (!(theta_spatial > 0.0) || !(theta_color > 0.0) || !(theta_app_spatial > 0.0)) {
        throw ConfigError("crf bandwidths must be positive");
    }
}

PixelProbMap upsample_predictions(const Matrix& z, std::size_t grid_side, std::size_t out_h, std::size_t out_w) {
    if (grid_side * grid_side != z.rows()) throw std::invalid_argument("upsample_predictions: Z rows are not grid_side^2");
    Grid3 grid(grid_side, grid_side, z.cols());
    std::copy(z.flat().begin(), z.flat().end(), grid.data.begin());
    PixelProbMap out = bilinear_upsample(grid, out_h, out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        for (std::size_t x = 0; x < out_w; ++x) {
            auto px = out.pixel(y, x);
            double sum = 0.0;
            for (double v : px) sum += v;
            if (sum > 0.0) {
                for (double& v : px) v /= sum;
            }
        }
    }
    return out;
}

PixelProbMap predict_pixels(const std::string& image_id, const model::Image& image, const std::set<std::string>& labels,
                            const clustering::CategoryPartition& partition, const model::ModelParams& params,
                            const model::FeatureConfig& cfg, const model::FeatureProvider& provider, std::size_t upscale) {
    if (upscale < 1) throw std::invalid_argument("predict_pixels: upscale must be at least 1");
    const auto fwd = model::forward(image_id, image, labels, partition, params, cfg, provider);
    return upsample_predictions(fwd.z, cfg.grid_side(), image.height * upscale, image.width * upscale);
}

namespace {

class PairKernel {
public:
    PairKernel(const model::Image& image, const CrfConfig& crf)
        : image_(image),
          width_(image.width),
          w_smooth_(crf.w_smooth),
          w_app_(crf.w_appearance),
          inv_smooth_(1.0 / (2.0 * crf.theta_spatial * crf.theta_spatial)),
          inv_app_spatial_(1.0 / (2.0 * crf.theta_app_spatial * crf.theta_app_spatial)),
          inv_color_(1.0 / (2.0 * crf.theta_color * crf.theta_color)) {}

    double operator()(std::size_t i, std::size_t j) const {
        const double dy = static_cast<double>(i / width_) - static_cast<double>(j / width_);
        const double dx = static_cast<double>(i % width_) - static_cast<double>(j % width_);
        const double d2 = dx * dx + dy * dy;
        double k = 0.0;
        if (w_smooth_ != 0.0) k += w_smooth_ * std::exp(-d2 * inv_smooth_);
        if (w_app_ != 0.0) {
            const double* a = image_.data.data() + 3 * i;
            const double* b = image_.data.data() + 3 * j;
            double c2 = 0.0;
            for (int c = 0; c < 3; ++c) c2 += (a[c] - b[c]) * (a[c] - b[c]);
            k += w_app_ * std::exp(-d2 * inv_app_spatial_ - c2 * inv_color_);
        }
        return k;
    }

private:
    const model::Image& image_;
    std::size_t width_;
    double w_smooth_, w_app_;
    double inv_smooth_, inv_app_spatial_, inv_color_;
};

// Upper-triangle index of the pair (i, j), i < j.
inline std::size_t packed_index(std::size_t i, std::size_t j, std::size_t n) {
    return i * n - i * (i + 1) / 2 + (j - i - 1);
}

}  // namespace

PixelProbMap crf_refine(const model::Image& image, const PixelProbMap& probs, const CrfConfig& crf, unsigned threads) {
    crf.validate();
    if (image.height != probs.height || image.width != probs.width || image.channels != 3) {
        throw std::invalid_argument("crf_refine: image is " + std::to_string(image.height) + "x" +
                                    std::to_string(image.width) + " but the probability map is " +
                                    std::to_string(probs.height) + "x" + std::to_string(probs.width));
    }
    if (crf.iterations == 0) return probs;

    const std::size_t n = probs.height * probs.width;
    const std::size_t classes = probs.channels;
    std::vector<double> unary(n * classes);
    for (std::size_t i = 0; i < unary.size(); ++i) unary[i] = -std::log(std::clamp(probs.data[i], 1e-12, 1.0));

    const PairKernel kernel(image, crf);
    const bool pairwise = crf.w_smooth != 0.0 || crf.w_appearance != 0.0;
    std::vector<double> cache;
    const std::size_t pairs = n * (n - 1) / 2;
    const bool cached = pairwise && pairs <= crf.kernel_cache_limit;
    if (cached) {
        cache.resize(pairs);
        parallel_for(n, threads, [&](std::size_t i) {
            for (std::size_t j = i + 1; j < n; ++j) cache[packed_index(i, j, n)] = kernel(i, j);
        });
    }

    // Q starts as softmax(-unary), the normalized clamped input.
    PixelProbMap q(probs.height, probs.width, classes);
    PixelProbMap next = q;
    auto normalize_from_energy = [classes](const double* energy, double* out) {
        double mn = energy[0];
        for (std::size_t l = 1; l < classes; ++l) mn = std::min(mn, energy[l]);
        double sum = 0.0;
        for (std::size_t l = 0; l < classes; ++l) {
            out[l] = std::exp(-(energy[l] - mn));
            sum += out[l];
        }
        for (std::size_t l = 0; l < classes; ++l) out[l] /= sum;
    };
    for (std::size_t i = 0; i < n; ++i) normalize_from_energy(unary.data() + i * classes, q.data.data() + i * classes);

    for (std::size_t it = 0; it < crf.iterations; ++it) {
        parallel_for(n, threads, [&](std::size_t i) {
            std::vector<double> energy(unary.begin() + static_cast<std::ptrdiff_t>(i * classes),
                                       unary.begin() + static_cast<std::ptrdiff_t>((i + 1) * classes));
            if (pairwise) {
                std::vector<double> msg(classes, 0.0);
                for (std::size_t j = 0; j < n; ++j) {
                    if (j == i) continue;
                    const double k = cached ? cache[i < j ? packed_index(i, j, n) : packed_index(j, i, n)] : kernel(i, j);
                    const double* qj = q.data.data() + j * classes;
                    for (std::size_t l = 0; l < classes; ++l) msg[l] += k * qj[l];
                }
                // Potts: a label's pairwise energy drops by the kernel-weighted
                // agreement of the other pixels.
                for (std::size_t l = 0; l < classes; ++l) energy[l] -= msg[l];
            }
            normalize_from_energy(energy.data(), next.data.data() + i * classes);
        });
        std::swap(q, next);
    }
    return q;
}

LabelMap argmax_labels(const PixelProbMap& probs) {
    if (probs.channels == 0 || probs.channels > 256) throw std::invalid_argument("argmax_labels: bad class count");
    LabelMap out(probs.height, probs.width);
    for (std::size_t y = 0; y < probs.height; ++y) {
        for (std::size_t x = 0; x < probs.width; ++x) {
            auto px = probs.pixel(y, x);
            std::size_t best = 0;
            for (std::size_t c = 1; c < px.size(); ++c) {
                if (px[c] > px[best]) best = c;
            }
            out.at(y, x) = static_cast<std::uint8_t>(best);
        }
    }
    return out;
}

model::Image upscale_nearest(const model::Image& image, std::size_t factor) {
    if (factor < 1) throw std::invalid_argument("upscale_nearest: factor must be at least 1");
    if (factor == 1) return image;
    model::Image out(image.height * factor, image.width * factor, image.channels);
    for (std::size_t y = 0; y < out.height; ++y) {
        for (std::size_t x = 0; x < out.width; ++x) {
            auto src = image.pixel(y / factor, x / factor);
            std::copy(src.begin(), src.end(), out.pixel(y, x).begin());
        }
    }
    return out;
}

}  // namespace cpc::infer
