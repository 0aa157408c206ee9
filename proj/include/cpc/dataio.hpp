#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cpc/clustering.hpp"
#include "cpc/label_map.hpp"
#include "cpc/model.hpp"

namespace cpc::data {

using Color = std::array<double, 3>;

inline constexpr const char* kBackgroundName = "background";

struct Sample {
    std::string image_id;
    model::Image image;
    std::set<std::string> labels;  // foreground categories only
    std::optional<LabelMap> gt_mask;
};

/// Class list used by the classifier: background at index 0, then the
/// categories in order.
std::vector<std::string> class_names(const clustering::CategoryList& categories);

/// Multi-hot vector over class_names(categories); background is always set.
std::vector<std::uint8_t> label_vector(const std::set<std::string>& labels, const clustering::CategoryList& categories);

struct SynthConfig {
    std::size_t image_side = 64;
    clustering::CategoryList categories{{"cat", "dog", "car", "bus"}};
    Color background_color{0.1, 0.1, 0.1};
    /// One color per category; empty selects a built-in well-separated palette.
    std::vector<Color> class_colors;
    std::size_t shapes_min = 1;
    std::size_t shapes_max = 3;
    double noise_sigma = 0.02;
    /// Pairs of categories whose second member is recolored to the first
    /// one's color shifted by `confusable_delta` on every channel.
    std::vector<std::pair<std::string, std::string>> confusable_pairs;
    double confusable_delta = 0.04;
    /// Minimum shape side as a fraction of image_side; maximum is twice this.
    double min_shape_fraction = 0.25;
    std::size_t count = 40;
    std::uint64_t seed = 1;

    /// Throws ConfigError; also rejects class colors too close to the background.
    void validate() const;
    /// Effective per-category colors after palette defaults and confusable recoloring.
    std::vector<Color> resolved_colors() const;
};

/// In-memory generation; images are quantized to 8 bits exactly as written.
std::vector<Sample> generate_samples(const SynthConfig& cfg);

/// Writes images/<id>.ppm, masks/<id>.pgm, categories.txt and manifest.json
/// (written last) under `dir`. Returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples,
                                    const clustering::CategoryList& categories);

std::filesystem::path gen_synthetic(const SynthConfig& cfg, const std::filesystem::path& dir);

/// Manifest: JSON list of {image_id, image_path, labels, gt_mask_path?};
/// paths are relative to the manifest's directory.
std::vector<Sample> load_dataset(const std::filesystem::path& manifest_path, const clustering::CategoryList& categories);

// Binary netpbm I/O. Images are 8-bit per channel; values map to [0, 1].
void write_ppm(const std::filesystem::path& path, const model::Image& image);
model::Image read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const LabelMap& map);
LabelMap read_pgm(const std::filesystem::path& path);

/// Palette sidecar: {"classes": [{"index", "name", "color"}, ...]}.
void write_palette(const std::filesystem::path& path, const std::vector<std::string>& names);

}  // namespace cpc::data
