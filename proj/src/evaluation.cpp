#include "cpc/evaluation.hpp"

#include <stdexcept>

#include <json.hpp>

namespace cpc::eval {

ConfusionMatrix::ConfusionMatrix(std::size_t classes, std::optional<std::uint8_t> ignore_label)
    : classes_(classes), ignore_(ignore_label), counts_(classes * classes, 0) {
    if (classes == 0) throw std::invalid_argument("ConfusionMatrix: class count must be positive");
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto v : counts_) t += v;
    return t;
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& gt) {
    if (pred.height != gt.height || pred.width != gt.width) {
        throw std::invalid_argument("accumulate: prediction is " + std::to_string(pred.height) + "x" +
                                    std::to_string(pred.width) + " but ground truth is " + std::to_string(gt.height) +
                                    "x" + std::to_string(gt.width));
    }
    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
        const std::uint8_t g = gt.labels[i];
        if (ignore_ && g == *ignore_) continue;
        const std::uint8_t p = pred.labels[i];
        if (g >= classes_ || p >= classes_) {
            throw std::invalid_argument("accumulate: label " + std::to_string(std::max(g, p)) + " out of range");
        }
        ++counts_[g * classes_ + p];
    }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw std::invalid_argument("ConfusionMatrix: class counts differ");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
}

MiouResult miou(const ConfusionMatrix& cm) {
    const std::size_t n = cm.classes();
    MiouResult r;
    r.per_class.resize(n);
    double sum = 0.0;
    std::size_t scored = 0;
    for (std::size_t c = 0; c < n; ++c) {
        std::uint64_t row = 0, col = 0;
        for (std::size_t k = 0; k < n; ++k) {
            row += cm(c, k);
            col += cm(k, c);
        }
        const std::uint64_t inter = cm(c, c);
        const std::uint64_t uni = row + col - inter;
        if (uni == 0) continue;
        const double iou = static_cast<double>(inter) / static_cast<double>(uni);
        r.per_class[c] = iou;
        sum += iou;
        ++scored;
    }
    if (scored == 0) throw std::invalid_argument("miou: every class has an empty union");
    r.mean = sum / static_cast<double>(scored);
    return r;
}

std::string report_json(const ConfusionMatrix& cm, const MiouResult& result, const std::vector<std::string>& class_names) {
    using nlohmann::json;
    if (class_names.size() != cm.classes()) throw std::invalid_argument("report_json: class name count mismatch");
    json per_class = json::object();
    json gt_counts = json::object();
    json pred_counts = json::object();
    for (std::size_t c = 0; c < cm.classes(); ++c) {
        per_class[class_names[c]] = result.per_class[c] ? json(*result.per_class[c]) : json(nullptr);
        std::uint64_t row = 0, col = 0;
        for (std::size_t k = 0; k < cm.classes(); ++k) {
            row += cm(c, k);
            col += cm(k, c);
        }
        gt_counts[class_names[c]] = row;
        pred_counts[class_names[c]] = col;
    }
    json j = {{"miou", result.mean},
              {"per_class", per_class},
              {"pixel_counts", {{"total", cm.total()}, {"per_class_gt", gt_counts}, {"per_class_pred", pred_counts}}}};
    return j.dump(2) + "\n";
}

}  // namespace cpc::eval
