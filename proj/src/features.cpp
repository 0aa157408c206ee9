#include <cmath>
#include <fstream>

#include "binary_io.hpp"
#include "cpc/errors.hpp"
#include "cpc/model.hpp"

namespace cpc::model {

namespace {

constexpr std::uint32_t kFeatureVersion = 1;
constexpr double kStandardizeEps = 1e-8;

void check_image(const Image& image, const FeatureConfig& cfg) {
    if (image.height != cfg.image_side || image.width != cfg.image_side || image.channels != 3) {
        throw std::invalid_argument("embed_patches: image is " + std::to_string(image.height) + "x" +
                                    std::to_string(image.width) + "x" + std::to_string(image.channels) +
                                    ", expected " + std::to_string(cfg.image_side) + "x" +
                                    std::to_string(cfg.image_side) + "x3");
    }
}

}  // namespace

RandomProjectionProvider::RandomProjectionProvider(const FeatureConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), projection_(cfg.patch_side * cfg.patch_side * 3, cfg.feature_dim) {
    cfg_.validate();
    Rng rng(derive_seed(seed, 0xFEA7));
    const double scale = 1.0 / std::sqrt(static_cast<double>(projection_.rows()));
    for (double& v : projection_.flat()) v = rng.normal() * scale;
}

Matrix RandomProjectionProvider::embed(const std::string&, const Image& image) const {
    check_image(image, cfg_);
    const std::size_t g = cfg_.grid_side();
    const std::size_t d = cfg_.patch_side;
    const std::size_t e = cfg_.feature_dim;
    const bool fixed = cfg_.feature_norm == FeatureNorm::fixed;
    Matrix feats(g * g, e);
    std::vector<double> patch(d * d * 3);
    for (std::size_t py = 0; py < g; ++py) {
        for (std::size_t px = 0; px < g; ++px) {
            std::size_t n = 0;
            for (std::size_t y = 0; y < d; ++y) {
                for (std::size_t x = 0; x < d; ++x) {
                    for (double v : image.pixel(py * d + y, px * d + x)) patch[n++] = fixed ? 2.0 * v - 1.0 : v;
                }
            }
            auto out = feats.row(py * g + px);
            for (std::size_t k = 0; k < patch.size(); ++k) {
                const double pk = patch[k];
                auto prow = projection_.row(k);
                for (std::size_t j = 0; j < e; ++j) out[j] += pk * prow[j];
            }
        }
    }
    if (fixed) return feats;
    const double s = static_cast<double>(feats.rows());
    for (std::size_t j = 0; j < e; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < feats.rows(); ++i) mean += feats(i, j);
        mean /= s;
        double var = 0.0;
        for (std::size_t i = 0; i < feats.rows(); ++i) var += (feats(i, j) - mean) * (feats(i, j) - mean);
        var /= s;
        const double inv = 1.0 / std::sqrt(var + kStandardizeEps);
        for (std::size_t i = 0; i < feats.rows(); ++i) feats(i, j) = (feats(i, j) - mean) * inv;
    }
    return feats;
}

FileFeatureProvider::FileFeatureProvider(const std::filesystem::path& path, const FeatureConfig& cfg)
    : records_(read_feature_file(path)) {
    for (const auto& [id, m] : records_) {
        if (m.rows() != cfg.patch_count() || m.cols() != cfg.feature_dim) {
            throw IoError(path.string() + ": feature record '" + id + "' is " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()) + ", config expects " + std::to_string(cfg.patch_count()) +
                          "x" + std::to_string(cfg.feature_dim));
        }
    }
}

Matrix FileFeatureProvider::embed(const std::string& image_id, const Image&) const {
    auto it = records_.find(image_id);
    if (it == records_.end()) throw IoError("no feature record for image '" + image_id + "'");
    return it->second;
}

void write_feature_file(const std::filesystem::path& path, std::size_t patch_count, std::size_t feature_dim,
                        const std::vector<std::pair<std::string, Matrix>>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write feature file " + path.string());
    out.write("CPCF", 4);
    binio::put_u32(out, kFeatureVersion);
    binio::put_u32(out, static_cast<std::uint32_t>(patch_count));
    binio::put_u32(out, static_cast<std::uint32_t>(feature_dim));
    binio::put_u32(out, static_cast<std::uint32_t>(records.size()));

    std::uint64_t index_bytes = 0;
    for (const auto& [id, m] : records) index_bytes += 4 + id.size() + 8;
    std::uint64_t offset = 20 + index_bytes;
    const std::uint64_t record_bytes = patch_count * feature_dim * 4;
    for (const auto& [id, m] : records) {
        if (m.rows() != patch_count || m.cols() != feature_dim) {
            throw std::invalid_argument("write_feature_file: record '" + id + "' has the wrong shape");
        }
        binio::put_u32(out, static_cast<std::uint32_t>(id.size()));
        out.write(id.data(), static_cast<std::streamsize>(id.size()));
        binio::put_u64(out, offset);
        offset += record_bytes;
    }
    for (const auto& [id, m] : records) {
        for (double v : m.flat()) binio::put_f32(out, static_cast<float>(v));
    }
    if (!out) throw IoError("failed writing feature file " + path.string());
}

std::map<std::string, Matrix> read_feature_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open feature file " + path.string());
    const std::string what = "feature file " + path.string();
    binio::expect_magic(in, "CPCF", what);
    const auto version = binio::get_u32(in, what);
    if (version != kFeatureVersion) throw IoError(what + ": unsupported version " + std::to_string(version));
    const std::size_t s = binio::get_u32(in, what);
    const std::size_t e = binio::get_u32(in, what);
    const std::size_t count = binio::get_u32(in, what);

    std::vector<std::pair<std::string, std::uint64_t>> index;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t len = binio::get_u32(in, what);
        std::string id(len, '\0');
        binio::read_exact(in, id.data(), len, what);
        index.emplace_back(std::move(id), binio::get_u64(in, what));
    }
    std::map<std::string, Matrix> records;
    for (const auto& [id, offset] : index) {
        in.seekg(static_cast<std::streamoff>(offset));
        if (!in) throw IoError(what + ": bad offset for record '" + id + "'");
        Matrix m(s, e);
        for (double& v : m.flat()) v = binio::get_f32(in, what);
        if (!records.emplace(id, std::move(m)).second) throw IoError(what + ": duplicate record '" + id + "'");
    }
    return records;
}

Matrix embed_patches(const std::string& image_id, const Image& image, const FeatureConfig& cfg,
                     const FeatureProvider& provider) {
    check_image(image, cfg);
    return provider.embed(image_id, image);
}

}  // namespace cpc::model
