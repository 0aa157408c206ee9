#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cpc/label_map.hpp"

namespace cpc::eval {

/// counts(g, p) = number of pixels with ground truth g predicted as p.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t classes, std::optional<std::uint8_t> ignore_label = std::nullopt);

    std::size_t classes() const noexcept { return classes_; }
    std::optional<std::uint8_t> ignore_label() const noexcept { return ignore_; }
    std::uint64_t operator()(std::size_t gt, std::size_t pred) const { return counts_[gt * classes_ + pred]; }
    std::uint64_t total() const;

    /// Adds every non-ignored pixel. Throws std::invalid_argument on size
    /// mismatch or out-of-range labels.
    void accumulate(const LabelMap& pred, const LabelMap& gt);
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t classes_;
    std::optional<std::uint8_t> ignore_;
    std::vector<std::uint64_t> counts_;
};

struct MiouResult {
    double mean = 0.0;
    /// nullopt for classes with an empty union; those are left out of the mean.
    std::vector<std::optional<double>> per_class;
};

/// Throws std::invalid_argument if every class has an empty union.
MiouResult miou(const ConfusionMatrix& cm);

/// {"miou", "per_class": {name: iou|null}, "pixel_counts": {"total", "per_class_gt", "per_class_pred"}}.
std::string report_json(const ConfusionMatrix& cm, const MiouResult& result, const std::vector<std::string>& class_names);

}  // namespace cpc::eval
