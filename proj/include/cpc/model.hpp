#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cpc/clustering.hpp"
#include "cpc/numerics.hpp"

namespace cpc::model {

/// h x w x 3 image with channel values in [0, 1].
using Image = Grid3;

/// How the random-projection provider normalizes patch features.
/// per_image: standardize every feature over the image's patches.
/// fixed: map pixels to [-1, 1] before projecting; no image statistics.
enum class FeatureNorm { per_image, fixed };

struct FeatureConfig {
    std::size_t image_side = 64;   // n (h = w = n)
    std::size_t patch_side = 16;   // d
    std::size_t feature_dim = 8;   // e
    std::size_t cluster_dim = 4;   // H
    std::size_t class_count = 5;   // C, background included
    std::size_t top_k = 2;
    FeatureNorm feature_norm = FeatureNorm::per_image;

    std::size_t grid_side() const { return image_side / patch_side; }
    std::size_t patch_count() const { return grid_side() * grid_side(); }
    std::size_t token_dim() const { return feature_dim + cluster_dim; }
    std::size_t lstm_hidden() const { return token_dim() / 2; }

    /// Throws ConfigError on inconsistent dimensions.
    void validate() const;
};

enum Direction : std::size_t { left_to_right = 0, right_to_left = 1, top_to_bottom = 2, bottom_to_top = 3 };

/// Weights of one directional LSTM pass. Gate rows are stacked in the order
/// input, forget, candidate, output (each `hidden` rows).
struct LstmWeights {
    Matrix wx;  // 4h x D
    Matrix wh;  // 4h x h
    Matrix b;   // 4h x 1

    friend bool operator==(const LstmWeights&, const LstmWeights&) = default;
};

struct ModelParams {
    Matrix g;                           // L x H cluster projection
    std::array<LstmWeights, 4> lstm;    // indexed by Direction
    Matrix w;                           // (e + H) x C classifier

    /// All-zero parameters shaped for `cfg` and `cluster_count` clusters.
    static ModelParams zeros(const FeatureConfig& cfg, std::size_t cluster_count);
    static ModelParams zeros_like(const ModelParams& other);

    std::size_t cluster_count() const { return g.rows(); }
    std::size_t flat_size() const;
    /// Flat order: G, then per direction (LR, RL, TB, BT) wx, wh, b, then W.
    std::vector<double> flatten() const;
    void assign(std::span<const double> flat);
    std::uint64_t fingerprint() const;
    bool all_finite() const;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Gradients share the parameter layout.
using ModelGrads = ModelParams;

// ---------------------------------------------------------------- features

class FeatureProvider {
public:
    virtual ~FeatureProvider() = default;
    /// s x e patch features for one image.
    virtual Matrix embed(const std::string& image_id, const Image& image) const = 0;
};

/// Flattens each d x d x 3 patch, projects it with a fixed seed-derived
/// matrix and standardizes every feature over the image's patches.
class RandomProjectionProvider : public FeatureProvider {
public:
    RandomProjectionProvider(const FeatureConfig& cfg, std::uint64_t seed);
    Matrix embed(const std::string& image_id, const Image& image) const override;

private:
    FeatureConfig cfg_;
    Matrix projection_;  // (d*d*3) x e
};

/// Precomputed features read from a CPCF file.
class FileFeatureProvider : public FeatureProvider {
public:
    FileFeatureProvider(const std::filesystem::path& path, const FeatureConfig& cfg);
    Matrix embed(const std::string& image_id, const Image& image) const override;

private:
    std::map<std::string, Matrix> records_;
};

/// CPCF layout (little-endian): "CPCF", u32 version, u32 s, u32 e, u32 count,
/// then count index entries {u32 id_len, id bytes, u64 byte offset}, then the
/// records as s*e f32 values each.
void write_feature_file(const std::filesystem::path& path, std::size_t patch_count, std::size_t feature_dim,
                        const std::vector<std::pair<std::string, Matrix>>& records);
std::map<std::string, Matrix> read_feature_file(const std::filesystem::path& path);

Matrix embed_patches(const std::string& image_id, const Image& image, const FeatureConfig& cfg,
                     const FeatureProvider& provider);

// ---------------------------------------------------------------- forward stages

/// u^T G.
std::vector<double> project_cluster_token(const clustering::ClusterVector& u, const Matrix& g);

/// Appends `cluster_token` to every row of `patch_features`.
Matrix concat_tokens(const Matrix& patch_features, std::span<const double> cluster_token);

/// Per-direction activations kept for the backward pass, indexed by token.
struct LstmTrace {
    Matrix gates;   // s x 4h, post-activation (i, f, g, o)
    Matrix cell;    // s x h
    Matrix tanh_cell;
    Matrix hidden;  // s x h
};

struct HvTrace {
    std::size_t grid_side = 0;
    Matrix input;   // F_in
    std::array<LstmTrace, 4> passes;
};

/// Row and column bidirectional LSTMs over the patch grid; the horizontal
/// and vertical outputs are averaged. Output shape equals input shape.
Matrix hv_bilstm_forward(const Matrix& f_in, const std::array<LstmWeights, 4>& lstm, std::size_t grid_side,
                         HvTrace* trace = nullptr);

/// Accumulates weight gradients into `grads` and returns dL/dF_in.
Matrix hv_bilstm_backward(const HvTrace& trace, const std::array<LstmWeights, 4>& lstm, const Matrix& d_out,
                          std::array<LstmWeights, 4>& grads);

/// softmax(F_out W).
Matrix classify_patches(const Matrix& f_out, const Matrix& w);

struct PoolResult {
    std::vector<double> scores;                     // p, length C
    std::vector<std::vector<std::size_t>> selected; // per class, ascending patch indices
};

/// Mean of the k largest entries of every column of Z.
PoolResult topk_pool(const Matrix& z, std::size_t k);

// ---------------------------------------------------------------- full model

struct ForwardCache {
    std::uint64_t params_fingerprint = 0;
    clustering::ClusterVector u;
    std::vector<double> cluster_token;
    HvTrace hv;
    Matrix f_out;
    Matrix z;
    PoolResult pool;
    std::size_t k = 0;
};

struct ForwardResult {
    Matrix z;                   // s x C
    std::vector<double> p;      // C
    ForwardCache cache;
};

/// Forward pass from precomputed patch features.
ForwardResult forward_features(const Matrix& patch_features, const clustering::ClusterVector& u,
                               const ModelParams& params, const FeatureConfig& cfg);

/// embed -> cluster vector -> cluster token -> concat -> HV-BiLSTM -> classifier -> Top-K.
ForwardResult forward(const std::string& image_id, const Image& image, const std::set<std::string>& labels,
                      const clustering::CategoryPartition& partition, const ModelParams& params,
                      const FeatureConfig& cfg, const FeatureProvider& provider);

/// Reverse-mode adjoints for G, the LSTM weights and W. `d_f_out` carries
/// gradient that reaches F_out directly (e.g. from the contrastive term) and
/// may be empty. Throws std::invalid_argument if `params` differ from the
/// ones used by the forward pass.
ModelGrads backward(const ForwardCache& cache, const ModelParams& params, const Matrix& d_z,
                    std::span<const double> d_p, const Matrix& d_f_out = {});

// ---------------------------------------------------------------- persistence

/// Uniform in [-a, a] with a = 1/sqrt(fan_in) per tensor, derived from `seed`.
ModelParams init_params(std::uint64_t seed, std::size_t cluster_count, const FeatureConfig& cfg);

/// CPCM layout (little-endian): "CPCM", u32 version, u32 L, H, e, C, then
/// f64 tensors in ModelParams::flatten order.
void write_checkpoint(const std::filesystem::path& path, const ModelParams& params, const FeatureConfig& cfg);
ModelParams read_checkpoint(const std::filesystem::path& path, const FeatureConfig& cfg);

}  // namespace cpc::model
