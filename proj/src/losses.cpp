#include "cpc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace cpc::loss {

void ImageLabels::validate() const {
    bool any = false;
    for (auto v : y) {
        if (v > 1) throw std::invalid_argument("image labels must be 0 or 1");
        any = any || v == 1;
    }
    if (!any) throw std::invalid_argument("image labels must contain at least one positive class");
}

MceResult mce_loss(std::span<const double> p, const ImageLabels& labels, std::size_t first_class) {
    if (p.size() != labels.size()) {
        throw std::invalid_argument("mce_loss: " + std::to_string(p.size()) + " scores for " +
                                    std::to_string(labels.size()) + " labels");
    }
    if (first_class >= p.size()) throw std::invalid_argument("mce_loss: no classes to score");
    const double n = static_cast<double>(p.size() - first_class);
    MceResult r;
    r.grad.assign(p.size(), 0.0);
    double sum = 0.0;
    for (std::size_t c = first_class; c < p.size(); ++c) {
        const double pc = std::clamp(p[c], kProbClamp, 1.0 - kProbClamp);
        const bool clamped = pc != p[c];
        if (labels.y[c]) {
            sum += std::log(pc);
            if (!clamped) r.grad[c] = -1.0 / (n * pc);
        } else {
            sum += std::log1p(-pc);
            if (!clamped) r.grad[c] = 1.0 / (n * (1.0 - pc));
        }
    }
    r.value = -sum / n;
    return r;
}

ConfidenceSplit split_confidence(const Matrix& z, std::size_t class_id, double eps) {
    if (!(eps > 0.5 && eps < 1.0)) throw std::invalid_argument("epsilon must exceed 0.5 and be below 1");
    if (class_id >= z.cols()) throw std::invalid_argument("split_confidence: class index out of range");
    ConfidenceSplit s;
    s.class_id = class_id;
    s.threshold = eps;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const double v = z(i, class_id);
        if (v > eps) s.high.push_back(i);
        else if (v < 1.0 - eps) s.low.push_back(i);
    }
    return s;
}

namespace {

struct UnitRow {
    std::vector<double> dir;
    double norm = 0.0;
};

UnitRow unit_row(const Matrix& f, std::size_t i) {
    auto row = f.row(i);
    UnitRow u;
    u.norm = std::sqrt(std::inner_product(row.begin(), row.end(), row.begin(), 0.0));
    if (u.norm == 0.0) throw std::invalid_argument("pce_loss_class: zero-norm embedding at patch " + std::to_string(i));
    u.dir.resize(row.size());
    for (std::size_t k = 0; k < row.size(); ++k) u.dir[k] = row[k] / u.norm;
    return u;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// grad[i] += scale * dS/dF_i with S = <a, b>; dS/dF_i = (b - S a) / |F_i|.
void add_cos_grad(Matrix& grad, std::size_t i, const UnitRow& a, const UnitRow& b, double cos, double scale) {
    auto g = grad.row(i);
    const double k = scale / a.norm;
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += k * (b.dir[j] - cos * a.dir[j]);
}

}  // namespace

PceResult pce_loss_class(const ConfidenceSplit& split, const Matrix& f_out) {
    PceResult r;
    r.grad = Matrix(f_out.rows(), f_out.cols());
    const auto& high = split.high;
    const auto& low = split.low;
    const std::size_t nh = high.size();
    r.pos_pairs = nh >= 2 ? nh * (nh - 1) : 0;
    r.neg_pairs = nh * low.size();
    if (r.pos_pairs == 0 && r.neg_pairs == 0) return r;

    std::vector<UnitRow> hu, lu;
    for (auto i : high) hu.push_back(unit_row(f_out, i));
    for (auto i : low) lu.push_back(unit_row(f_out, i));

    if (r.pos_pairs > 0) {
        // Ordered pairs (i, j) and (j, i) contribute identical terms.
        const double inv = 1.0 / static_cast<double>(r.pos_pairs);
        double sum = 0.0;
        for (std::size_t a = 0; a < nh; ++a) {
            for (std::size_t b = 0; b < nh; ++b) {
                if (a == b) continue;
                const double cos = std::clamp(dot(hu[a].dir, hu[b].dir), -1.0, 1.0);
                sum += 1.0 - 0.5 * (1.0 + cos);
                // d(1 - S̄)/dS = -1/2, applied to both embeddings of the pair.
                add_cos_grad(r.grad, high[a], hu[a], hu[b], cos, -0.5 * inv);
                add_cos_grad(r.grad, high[b], hu[b], hu[a], cos, -0.5 * inv);
            }
        }
        r.value += sum * inv;
    }
    if (r.neg_pairs > 0) {
        const double inv = 1.0 / static_cast<double>(r.neg_pairs);
        double sum = 0.0;
        for (std::size_t a = 0; a < nh; ++a) {
            for (std::size_t b = 0; b < lu.size(); ++b) {
                const double cos = std::clamp(dot(hu[a].dir, lu[b].dir), -1.0, 1.0);
                sum += 0.5 * (1.0 + cos);
                add_cos_grad(r.grad, high[a], hu[a], lu[b], cos, 0.5 * inv);
                add_cos_grad(r.grad, low[b], lu[b], hu[a], cos, 0.5 * inv);
            }
        }
        r.value += sum * inv;
    }
    return r;
}

double LossBreakdown::pce_sum() const {
    double s = 0.0;
    for (double v : pce_per_class) s += v;
    return s;
}

TotalLossResult total_loss(std::span<const double> p, const ImageLabels& labels, const Matrix& z, const Matrix& f_out,
                           double eps, double lambda_pce, std::size_t first_class) {
    if (z.rows() != f_out.rows()) throw std::invalid_argument("total_loss: Z and F_out have different patch counts");
    if (z.cols() != p.size()) throw std::invalid_argument("total_loss: Z and p have different class counts");
    TotalLossResult r;
    MceResult mce = mce_loss(p, labels, first_class);
    r.breakdown.mce = mce.value;
    r.breakdown.lambda_pce = lambda_pce;
    r.d_p = std::move(mce.grad);
    r.d_z = Matrix(z.rows(), z.cols());
    r.d_f_out = Matrix(f_out.rows(), f_out.cols());
    for (std::size_t c = 0; c < z.cols(); ++c) {
        const PceResult pce = pce_loss_class(split_confidence(z, c, eps), f_out);
        r.breakdown.pce_per_class.push_back(pce.value);
        r.breakdown.pair_counts.emplace_back(pce.pos_pairs, pce.neg_pairs);
        if (lambda_pce != 0.0) {
            for (std::size_t i = 0; i < r.d_f_out.size(); ++i) r.d_f_out.flat()[i] += lambda_pce * pce.grad.flat()[i];
        }
    }
    r.breakdown.total = r.breakdown.mce + lambda_pce * r.breakdown.pce_sum();
    return r;
}

}  // namespace cpc::loss
