#include "cpc/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>

namespace cpc {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                    " does not match " + std::to_string(rows_) + "x" +
                                    std::to_string(cols_));
    }
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto orow = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            auto brow = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw std::invalid_argument("matmul_tn: row counts differ");
    Matrix out(a.cols(), b.cols());
    for (std::size_t n = 0; n < a.rows(); ++n) {
        auto arow = a.row(n);
        auto brow = b.row(n);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double ani = arow[i];
            auto orow = out.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += ani * brow[j];
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: column counts differ");
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto arow = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            auto brow = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += arow[k] * brow[k];
            out(i, j) = acc;
        }
    }
    return out;
}

Matrix softmax_rows(const Matrix& m) {
    if (!m.all_finite()) throw std::invalid_argument("softmax_rows: non-finite input");
    Matrix out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto in = m.row(r);
        auto o = out.row(r);
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            o[c] = std::exp(in[c] - mx);
            sum += o[c];
        }
        for (double& v : o) v /= sum;
    }
    return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_similarity: zero-norm vector");
    const double s = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::clamp(s, -1.0, 1.0);
}

double normalized_similarity(std::span<const double> a, std::span<const double> b) {
    return 0.5 * (1.0 + cosine_similarity(a, b));
}

TopK topk_select(std::span<const double> v, std::size_t k) {
    if (v.empty()) throw std::invalid_argument("topk_select: empty input");
    if (k == 0) throw std::invalid_argument("topk_select: k must be at least 1");
    if (k > v.size()) {
        static std::atomic<bool> warned{false};
        if (!warned.exchange(true)) {
            std::clog << "warning: top-k k=" << k << " exceeds patch count " << v.size()
                      << "; clamping k to the patch count\n";
        }
        k = v.size();
    }
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return v[a] > v[b] || (v[a] == v[b] && a < b); });
    order.resize(k);
    std::sort(order.begin(), order.end());
    TopK out;
    out.values.reserve(k);
    for (std::size_t i : order) out.values.push_back(v[i]);
    out.indices = std::move(order);
    return out;
}

namespace {

struct Axis {
    std::size_t lo;
    std::size_t hi;
    double frac;
};

// Integer arithmetic keeps grid-aligned output samples exact.
Axis axis_sample(std::size_t i, std::size_t out_n, std::size_t in_n) {
    if (in_n == 1 || out_n == 1) return {0, 0, 0.0};
    const std::size_t num = i * (in_n - 1);
    const std::size_t den = out_n - 1;
    const std::size_t lo = num / den;
    const std::size_t rem = num % den;
    if (rem == 0) return {lo, lo, 0.0};
    return {lo, lo + 1, static_cast<double>(rem) / static_cast<double>(den)};
}

}  // namespace

Grid3 bilinear_upsample(const Grid3& grid, std::size_t out_h, std::size_t out_w) {
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("bilinear_upsample: output dims must be >= 1");
    if (grid.height < 1 || grid.width < 1) throw std::invalid_argument("bilinear_upsample: empty grid");
    Grid3 out(out_h, out_w, grid.channels);
    for (std::size_t y = 0; y < out_h; ++y) {
        const Axis ay = axis_sample(y, out_h, grid.height);
        for (std::size_t x = 0; x < out_w; ++x) {
            const Axis ax = axis_sample(x, out_w, grid.width);
            const double w00 = (1.0 - ay.frac) * (1.0 - ax.frac);
            const double w01 = (1.0 - ay.frac) * ax.frac;
            const double w10 = ay.frac * (1.0 - ax.frac);
            const double w11 = ay.frac * ax.frac;
            auto o = out.pixel(y, x);
            auto p00 = grid.pixel(ay.lo, ax.lo);
            auto p01 = grid.pixel(ay.lo, ax.hi);
            auto p10 = grid.pixel(ay.hi, ax.lo);
            auto p11 = grid.pixel(ay.hi, ax.hi);
            for (std::size_t c = 0; c < grid.channels; ++c) {
                if (ay.frac == 0.0 && ax.frac == 0.0) {
                    o[c] = p00[c];
                } else {
                    o[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
                }
            }
        }
    }
    return out;
}

GradCheckReport finite_diff_check(const LossFn& loss_fn, std::span<const double> params,
                                  std::span<const double> analytic_grad, double step, unsigned threads) {
    if (step <= 0.0) throw std::invalid_argument("finite_diff_check: step must be positive");
    if (params.size() != analytic_grad.size()) {
        throw std::invalid_argument("finite_diff_check: gradient length differs from parameter length");
    }
    const std::size_t n = params.size();
    std::vector<double> numeric(n, 0.0);
    std::vector<char> bad(n, 0);

    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    const std::size_t chunk = (n + workers - 1) / workers;
    auto run_chunk = [&](std::size_t begin, std::size_t end) {
        std::vector<double> p(params.begin(), params.end());
        for (std::size_t i = begin; i < end; ++i) {
            const double orig = p[i];
            p[i] = orig + step;
            const double fp = loss_fn(p);
            p[i] = orig - step;
            const double fm = loss_fn(p);
            p[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                bad[i] = 1;
                continue;
            }
            numeric[i] = (fp - fm) / (2.0 * step);
        }
    };
    if (workers == 1) {
        run_chunk(0, n);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            const std::size_t b = std::min(n, w * chunk);
            const std::size_t e = std::min(n, b + chunk);
            pool.emplace_back(run_chunk, b, e);
        }
        for (auto& t : pool) t.join();
    }

    GradCheckReport report;
    for (std::size_t i = 0; i < n; ++i) {
        if (bad[i]) throw std::invalid_argument("finite_diff_check: non-finite loss at parameter " + std::to_string(i));
        const double a = analytic_grad[i];
        const double num = numeric[i];
        const double denom = std::max({std::abs(a), std::abs(num), 1e-8});
        const double rel = std::abs(a - num) / denom;
        if (i == 0 || rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_param_index = i;
            report.analytic = a;
            report.numeric = num;
        }
    }
    return report;
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t b = std::min(n, w * chunk);
        const std::size_t e = std::min(n, b + chunk);
        pool.emplace_back([&, w, b, e] {
            try {
                for (std::size_t i = b; i < e; ++i) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

std::size_t Rng::below(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace cpc
