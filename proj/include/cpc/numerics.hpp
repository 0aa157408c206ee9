#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace cpc {

/// Dense row-major matrix of 64-bit reals.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> flat() noexcept { return data_; }
    std::span<const double> flat() const noexcept { return data_; }

    void fill(double v);
    bool all_finite() const noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// a (n x k) times b (k x m).
Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T (k x n)^T times b (n x m) without forming the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a (n x k) times b^T where b is (m x k).
Matrix matmul_nt(const Matrix& a, const Matrix& b);

/// Height x width x channels array, row-major with channels innermost.
struct Grid3 {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<double> data;

    Grid3() = default;
    Grid3(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
        : height(h), width(w), channels(c), data(h * w * c, fill) {}

    double& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * channels + c]; }
    double at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * channels + c]; }
    std::span<double> pixel(std::size_t y, std::size_t x) { return {data.data() + (y * width + x) * channels, channels}; }
    std::span<const double> pixel(std::size_t y, std::size_t x) const {
        return {data.data() + (y * width + x) * channels, channels};
    }

    friend bool operator==(const Grid3&, const Grid3&) = default;
};

/// Row-wise softmax. Throws std::invalid_argument on non-finite input.
Matrix softmax_rows(const Matrix& m);

/// Cosine similarity; throws std::invalid_argument if either vector has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Cosine similarity mapped to [0,1] via (1 + S) / 2.
double normalized_similarity(std::span<const double> a, std::span<const double> b);

struct TopK {
    std::vector<std::size_t> indices;  // ascending
    std::vector<double> values;        // values[i] == v[indices[i]]
};

/// The k largest entries of v. k is clamped to v.size() with a warning;
/// ties prefer the lower index.
TopK topk_select(std::span<const double> v, std::size_t k);

/// Corner-aligned bilinear resampling of a probability grid. The centers of
/// the corner cells map onto the corner pixels of the output.
Grid3 bilinear_upsample(const Grid3& grid, std::size_t out_h, std::size_t out_w);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_param_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

using LossFn = std::function<double(std::span<const double>)>;

/// Central-difference gradient check. Relative error per entry is
/// |a - n| / max(|a|, |n|, 1e-8). Perturbations may be evaluated on
/// `threads` workers; the report does not depend on the thread count.
GradCheckReport finite_diff_check(const LossFn& loss_fn, std::span<const double> params,
                                  std::span<const double> analytic_grad, double step,
                                  unsigned threads = 1);

/// Runs fn(i) for i in [0, n) on up to `threads` workers using contiguous
/// static chunks. fn must only write state owned by index i.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

/// Seeded generator with platform-independent real-valued draws
/// (std distributions are implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n);
    double normal();

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Derives an independent stream seed from a base seed and a tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace cpc
