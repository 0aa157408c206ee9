#include "cpc/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include "binary_io.hpp"
#include "cpc/errors.hpp"

namespace cpc::model {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Fn>
void for_each_tensor(ModelParams& p, Fn&& fn) {
    fn(p.g);
    for (auto& lw : p.lstm) {
        fn(lw.wx);
        fn(lw.wh);
        fn(lw.b);
    }
    fn(p.w);
}

template <typename Fn>
void for_each_tensor(const ModelParams& p, Fn&& fn) {
    for_each_tensor(const_cast<ModelParams&>(p), [&](Matrix& m) { fn(static_cast<const Matrix&>(m)); });
}

}  // namespace

void FeatureConfig::validate() const {
    if (image_side < 1 || patch_side < 1 || feature_dim < 1 || class_count < 1) {
        throw ConfigError("model dimensions must be at least 1");
    }
    if (image_side % patch_side != 0) throw ConfigError("image_side must be divisible by patch_side");
    if (token_dim() % 2 != 0) throw ConfigError("feature_dim + cluster_dim must be even");
    if (top_k < 1) throw ConfigError("top_k must be at least 1");
}

ModelParams ModelParams::zeros(const FeatureConfig& cfg, std::size_t cluster_count) {
    const std::size_t d = cfg.token_dim();
    const std::size_t h = cfg.lstm_hidden();
    ModelParams p;
    p.g = Matrix(cluster_count, cfg.cluster_dim);
    for (auto& lw : p.lstm) lw = {Matrix(4 * h, d), Matrix(4 * h, h), Matrix(4 * h, 1)};
    p.w = Matrix(d, cfg.class_count);
    return p;
}

ModelParams ModelParams::zeros_like(const ModelParams& other) {
    ModelParams p = other;
    for_each_tensor(p, [](Matrix& m) { m.fill(0.0); });
    return p;
}

std::size_t ModelParams::flat_size() const {
    std::size_t n = 0;
    for_each_tensor(*this, [&](const Matrix& m) { n += m.size(); });
    return n;
}

std::vector<double> ModelParams::flatten() const {
    std::vector<double> out;
    out.reserve(flat_size());
    for_each_tensor(*this, [&](const Matrix& m) { out.insert(out.end(), m.flat().begin(), m.flat().end()); });
    return out;
}

void ModelParams::assign(std::span<const double> flat) {
    if (flat.size() != flat_size()) throw std::invalid_argument("ModelParams::assign: length mismatch");
    std::size_t off = 0;
    for_each_tensor(*this, [&](Matrix& m) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), m.size(), m.flat().begin());
        off += m.size();
    });
}

std::uint64_t ModelParams::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xFF;
            h *= 0x100000001b3ULL;
        }
    };
    for_each_tensor(*this, [&](const Matrix& m) {
        mix(m.rows());
        mix(m.cols());
        for (double v : m.flat()) mix(std::bit_cast<std::uint64_t>(v));
    });
    return h;
}

bool ModelParams::all_finite() const {
    bool ok = true;
    for_each_tensor(*this, [&](const Matrix& m) { ok = ok && m.all_finite(); });
    return ok;
}

std::vector<double> project_cluster_token(const clustering::ClusterVector& u, const Matrix& g) {
    if (u.size() != g.rows()) {
        throw std::invalid_argument("project_cluster_token: cluster vector has length " + std::to_string(u.size()) +
                                    " but G has " + std::to_string(g.rows()) + " rows");
    }
    std::vector<double> token(g.cols(), 0.0);
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (!u.bits[i]) continue;
        auto row = g.row(i);
        for (std::size_t j = 0; j < token.size(); ++j) token[j] += row[j];
    }
    return token;
}

Matrix concat_tokens(const Matrix& patch_features, std::span<const double> cluster_token) {
    const std::size_t e = patch_features.cols();
    Matrix out(patch_features.rows(), e + cluster_token.size());
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto o = out.row(i);
        auto f = patch_features.row(i);
        std::copy(f.begin(), f.end(), o.begin());
        std::copy(cluster_token.begin(), cluster_token.end(), o.begin() + static_cast<std::ptrdiff_t>(e));
    }
    return out;
}

Matrix classify_patches(const Matrix& f_out, const Matrix& w) {
    if (f_out.cols() != w.rows()) throw std::invalid_argument("classify_patches: token width differs from W rows");
    return softmax_rows(matmul(f_out, w));
}

PoolResult topk_pool(const Matrix& z, std::size_t k) {
    PoolResult out;
    out.scores.resize(z.cols());
    out.selected.resize(z.cols());
    std::vector<double> column(z.rows());
    for (std::size_t c = 0; c < z.cols(); ++c) {
        for (std::size_t i = 0; i < z.rows(); ++i) column[i] = z(i, c);
        TopK top = topk_select(column, k);
        double sum = 0.0;
        for (double v : top.values) sum += v;
        out.scores[c] = sum / static_cast<double>(top.values.size());
        out.selected[c] = std::move(top.indices);
    }
    return out;
}

ForwardResult forward_features(const Matrix& patch_features, const clustering::ClusterVector& u,
                               const ModelParams& params, const FeatureConfig& cfg) {
    if (patch_features.rows() != cfg.patch_count() || patch_features.cols() != cfg.feature_dim) {
        throw std::invalid_argument("forward: patch features have the wrong shape");
    }
    if (params.g.cols() != cfg.cluster_dim || params.w.rows() != cfg.token_dim() || params.w.cols() != cfg.class_count) {
        throw std::invalid_argument("forward: parameter shapes do not match the feature config");
    }
    ForwardResult r;
    ForwardCache& cache = r.cache;
    cache.params_fingerprint = params.fingerprint();
    cache.u = u;
    cache.cluster_token = project_cluster_token(u, params.g);
    const Matrix f_in = concat_tokens(patch_features, cache.cluster_token);
    cache.f_out = hv_bilstm_forward(f_in, params.lstm, cfg.grid_side(), &cache.hv);
    cache.z = classify_patches(cache.f_out, params.w);
    cache.k = std::min(cfg.top_k, cfg.patch_count());
    cache.pool = topk_pool(cache.z, cfg.top_k);
    r.z = cache.z;
    r.p = cache.pool.scores;
    return r;
}

ForwardResult forward(const std::string& image_id, const Image& image, const std::set<std::string>& labels,
                      const clustering::CategoryPartition& partition, const ModelParams& params,
                      const FeatureConfig& cfg, const FeatureProvider& provider) {
    const Matrix feats = embed_patches(image_id, image, cfg, provider);
    const auto u = clustering::build_cluster_vector(labels, partition);
    return forward_features(feats, u, params, cfg);
}

ModelGrads backward(const ForwardCache& cache, const ModelParams& params, const Matrix& d_z,
                    std::span<const double> d_p, const Matrix& d_f_out) {
    if (cache.params_fingerprint != params.fingerprint()) {
        throw std::invalid_argument("backward: stale cache (parameters changed since the forward pass)");
    }
    const Matrix& z = cache.z;
    const std::size_t s = z.rows();
    const std::size_t classes = z.cols();
    if (d_p.size() != classes) throw std::invalid_argument("backward: dL/dp has the wrong length");
    if (!d_z.empty() && (d_z.rows() != s || d_z.cols() != classes)) {
        throw std::invalid_argument("backward: dL/dZ has the wrong shape");
    }
    if (!d_f_out.empty() && (d_f_out.rows() != cache.f_out.rows() || d_f_out.cols() != cache.f_out.cols())) {
        throw std::invalid_argument("backward: dL/dF_out has the wrong shape");
    }

    Matrix dz = d_z.empty() ? Matrix(s, classes) : d_z;
    for (std::size_t c = 0; c < classes; ++c) {
        const auto& sel = cache.pool.selected[c];
        const double share = d_p[c] / static_cast<double>(sel.size());
        for (std::size_t i : sel) dz(i, c) += share;
    }

    // softmax: dlogit_j = z_j (dz_j - sum_k dz_k z_k)
    Matrix dlogits(s, classes);
    for (std::size_t i = 0; i < s; ++i) {
        double dot = 0.0;
        for (std::size_t c = 0; c < classes; ++c) dot += dz(i, c) * z(i, c);
        for (std::size_t c = 0; c < classes; ++c) dlogits(i, c) = z(i, c) * (dz(i, c) - dot);
    }

    ModelGrads grads = ModelParams::zeros_like(params);
    grads.w = matmul_tn(cache.f_out, dlogits);
    Matrix df_out = matmul_nt(dlogits, params.w);
    if (!d_f_out.empty()) {
        for (std::size_t i = 0; i < df_out.size(); ++i) df_out.flat()[i] += d_f_out.flat()[i];
    }

    const Matrix df_in = hv_bilstm_backward(cache.hv, params.lstm, df_out, grads.lstm);

    const std::size_t e = df_in.cols() - params.g.cols();
    std::vector<double> dtoken(params.g.cols(), 0.0);
    for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t j = 0; j < dtoken.size(); ++j) dtoken[j] += df_in(i, e + j);
    }
    for (std::size_t l = 0; l < cache.u.size(); ++l) {
        if (!cache.u.bits[l]) continue;
        for (std::size_t j = 0; j < dtoken.size(); ++j) grads.g(l, j) = dtoken[j];
    }
    return grads;
}

ModelParams init_params(std::uint64_t seed, std::size_t cluster_count, const FeatureConfig& cfg) {
    cfg.validate();
    ModelParams p = ModelParams::zeros(cfg, cluster_count);
    const double hidden = static_cast<double>(cfg.lstm_hidden());
    std::uint64_t tag = 0;
    auto fill = [&](Matrix& m, double fan_in) {
        Rng rng(derive_seed(seed, ++tag));
        const double a = 1.0 / std::sqrt(std::max(fan_in, 1.0));
        for (double& v : m.flat()) v = rng.uniform(-a, a);
    };
    fill(p.g, static_cast<double>(cluster_count));
    for (auto& lw : p.lstm) {
        fill(lw.wx, static_cast<double>(cfg.token_dim()));
        fill(lw.wh, hidden);
        fill(lw.b, hidden);
    }
    fill(p.w, static_cast<double>(cfg.token_dim()));
    return p;
}

void write_checkpoint(const std::filesystem::path& path, const ModelParams& params, const FeatureConfig& cfg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write("CPCM", 4);
    binio::put_u32(out, kCheckpointVersion);
    binio::put_u32(out, static_cast<std::uint32_t>(params.cluster_count()));
    binio::put_u32(out, static_cast<std::uint32_t>(cfg.cluster_dim));
    binio::put_u32(out, static_cast<std::uint32_t>(cfg.feature_dim));
    binio::put_u32(out, static_cast<std::uint32_t>(cfg.class_count));
    for (double v : params.flatten()) binio::put_f64(out, v);
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

ModelParams read_checkpoint(const std::filesystem::path& path, const FeatureConfig& cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    const std::string what = "checkpoint " + path.string();
    binio::expect_magic(in, "CPCM", what);
    const auto version = binio::get_u32(in, what);
    if (version != kCheckpointVersion) throw IoError(what + ": unsupported version " + std::to_string(version));
    const std::size_t clusters = binio::get_u32(in, what);
    const std::size_t h = binio::get_u32(in, what);
    const std::size_t e = binio::get_u32(in, what);
    const std::size_t c = binio::get_u32(in, what);
    if (h != cfg.cluster_dim || e != cfg.feature_dim || c != cfg.class_count) {
        throw IoError(what + ": shape (H=" + std::to_string(h) + ", e=" + std::to_string(e) + ", C=" +
                      std::to_string(c) + ") does not match the model config");
    }
    ModelParams p = ModelParams::zeros(cfg, clusters);
    std::vector<double> flat(p.flat_size());
    for (double& v : flat) v = binio::get_f64(in, what);
    if (in.peek() != std::char_traits<char>::eof()) throw IoError(what + ": trailing bytes");
    p.assign(flat);
    return p;
}

}  // namespace cpc::model
