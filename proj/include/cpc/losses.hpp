#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "cpc/numerics.hpp"

namespace cpc::loss {

/// Multi-hot image-level label vector over all C classes.
struct ImageLabels {
    std::vector<std::uint8_t> y;

    /// Throws std::invalid_argument unless entries are 0/1 with at least one 1.
    void validate() const;
    std::size_t size() const noexcept { return y.size(); }
};

inline constexpr double kProbClamp = 1e-12;

struct MceResult {
    double value = 0.0;
    std::vector<double> grad;  // dL/dp, zero for classes outside the scored range
};

/// Mean binary cross-entropy over classes [first_class, C). Probabilities are
/// clamped to [1e-12, 1 - 1e-12]; the gradient is zero where the clamp is active.
MceResult mce_loss(std::span<const double> p, const ImageLabels& labels, std::size_t first_class = 0);

struct ConfidenceSplit {
    std::size_t class_id = 0;
    std::vector<std::size_t> high;  // Z_i^c > eps
    std::vector<std::size_t> low;   // Z_i^c < 1 - eps
    double threshold = 0.0;
};

/// Requires 0.5 < eps < 1 so the two sets are disjoint.
ConfidenceSplit split_confidence(const Matrix& z, std::size_t class_id, double eps);

struct PceResult {
    double value = 0.0;
    Matrix grad;              // dL/dF_out, same shape as F_out
    std::size_t pos_pairs = 0;  // ordered high-high pairs
    std::size_t neg_pairs = 0;  // high-low pairs
};

/// Contrastive error for one class: mean (1 - S̄) over ordered high-high
/// pairs plus mean S̄ over high-low pairs, S̄ = (1 + cos) / 2. Terms without
/// pairs contribute 0.
PceResult pce_loss_class(const ConfidenceSplit& split, const Matrix& f_out);

struct LossBreakdown {
    double mce = 0.0;
    std::vector<double> pce_per_class;
    double total = 0.0;
    double lambda_pce = 0.0;
    std::vector<std::pair<std::size_t, std::size_t>> pair_counts;  // (N+, N-) per class

    double pce_sum() const;
};

struct TotalLossResult {
    LossBreakdown breakdown;
    std::vector<double> d_p;
    Matrix d_z;      // confidence sets are held fixed, so this is all zeros
    Matrix d_f_out;
};

/// MCE plus lambda times the sum of per-class contrastive errors over all C
/// classes. Membership of the confidence sets is not differentiated.
TotalLossResult total_loss(std::span<const double> p, const ImageLabels& labels, const Matrix& z, const Matrix& f_out,
                           double eps, double lambda_pce, std::size_t first_class = 0);

}  // namespace cpc::loss
