#include "cpc/dataio.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cpc/errors.hpp"

namespace cpc::data {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kMinColorDistance = 0.15;

const std::vector<Color>& default_palette() {
    static const std::vector<Color> palette = {
        {0.90, 0.15, 0.15}, {0.15, 0.85, 0.20}, {0.20, 0.30, 0.95}, {0.95, 0.90, 0.20},
        {0.85, 0.20, 0.85}, {0.20, 0.85, 0.90}, {0.95, 0.55, 0.10}, {0.95, 0.95, 0.95},
    };
    return palette;
}

double color_distance(const Color& a, const Color& b) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

// Reads one header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in, const std::string& what) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    if (tok.empty()) throw IoError("corrupt header in " + what);
    return tok;
}

std::size_t header_number(std::istream& in, const std::string& what) {
    const std::string tok = next_token(in, what);
    try {
        std::size_t pos = 0;
        const unsigned long v = std::stoul(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw IoError("corrupt header in " + what + ": '" + tok + "'");
    }
}

struct NetpbmHeader {
    std::size_t width;
    std::size_t height;
};

NetpbmHeader read_header(std::istream& in, const char* magic, const std::string& what) {
    if (next_token(in, what) != magic) throw IoError("corrupt header in " + what + ": expected " + magic);
    NetpbmHeader h{header_number(in, what), header_number(in, what)};
    if (header_number(in, what) != 255) throw IoError(what + ": only maxval 255 is supported");
    if (h.width == 0 || h.height == 0) throw IoError("corrupt header in " + what + ": empty image");
    return h;
}

}  // namespace

std::vector<std::string> class_names(const clustering::CategoryList& categories) {
    std::vector<std::string> names{kBackgroundName};
    names.insert(names.end(), categories.names().begin(), categories.names().end());
    return names;
}

std::vector<std::uint8_t> label_vector(const std::set<std::string>& labels, const clustering::CategoryList& categories) {
    std::vector<std::uint8_t> y(categories.size() + 1, 0);
    y[0] = 1;
    for (const auto& l : labels) {
        auto idx = categories.index_of(l);
        if (!idx) throw std::invalid_argument("label '" + l + "' is not a known category");
        y[*idx + 1] = 1;
    }
    return y;
}

void SynthConfig::validate() const {
    if (image_side < 4) throw ConfigError("synth.image_side must be at least 4");
    if (shapes_min < 1 || shapes_max < shapes_min) throw ConfigError("synth shape range must satisfy 1 <= min <= max");
    if (count < 1) throw ConfigError("synth.count must be at least 1");
    if (noise_sigma < 0.0) throw ConfigError("synth.noise_sigma must be non-negative");
    if (!(min_shape_fraction > 0.0 && min_shape_fraction <= 0.5)) throw ConfigError("synth.min_shape_fraction must be in (0, 0.5]");
    if (categories.size() + 1 > 255) throw ConfigError("too many categories for 8-bit masks");
    if (!class_colors.empty() && class_colors.size() != categories.size()) {
        throw ConfigError("synth.class_colors must list one color per category");
    }
    if (class_colors.empty() && categories.size() > default_palette().size()) {
        throw ConfigError("built-in palette covers at most " + std::to_string(default_palette().size()) + " categories");
    }
    for (const auto& [a, b] : confusable_pairs) {
        if (!categories.contains(a) || !categories.contains(b) || a == b) {
            throw ConfigError("confusable pair '" + a + ":" + b + "' must name two different categories");
        }
    }
    const auto colors = resolved_colors();
    auto confusable = [&](std::size_t i, std::size_t j) {
        const auto& n = categories.names();
        for (const auto& [a, b] : confusable_pairs) {
            if ((a == n[i] && b == n[j]) || (a == n[j] && b == n[i])) return true;
        }
        return false;
    };
    for (std::size_t i = 0; i < colors.size(); ++i) {
        if (color_distance(colors[i], background_color) < kMinColorDistance) {
            throw ConfigError("color of '" + categories.names()[i] + "' collides with the background color");
        }
        for (std::size_t j = i + 1; j < colors.size(); ++j) {
            if (!confusable(i, j) && color_distance(colors[i], colors[j]) < kMinColorDistance) {
                throw ConfigError("colors of '" + categories.names()[i] + "' and '" + categories.names()[j] +
                                  "' are too close");
            }
        }
    }
}

std::vector<Color> SynthConfig::resolved_colors() const {
    std::vector<Color> colors = class_colors;
    if (colors.empty()) {
        const auto& pal = default_palette();
        colors.assign(pal.begin(), pal.begin() + static_cast<std::ptrdiff_t>(std::min(pal.size(), categories.size())));
    }
    for (const auto& [a, b] : confusable_pairs) {
        auto ia = categories.index_of(a);
        auto ib = categories.index_of(b);
        if (!ia || !ib || *ia >= colors.size() || *ib >= colors.size()) continue;
        for (int c = 0; c < 3; ++c) {
            const double base = colors[*ia][c];
            colors[*ib][c] = base + confusable_delta <= 1.0 ? base + confusable_delta : base - confusable_delta;
        }
    }
    return colors;
}

std::vector<Sample> generate_samples(const SynthConfig& cfg) {
    cfg.validate();
    const auto colors = cfg.resolved_colors();
    const std::size_t n = cfg.image_side;
    const std::size_t min_side = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.min_shape_fraction * n)));
    const std::size_t max_side = std::min(n, 2 * min_side);
    std::vector<Sample> out;
    out.reserve(cfg.count);
    for (std::size_t idx = 0; idx < cfg.count; ++idx) {
        Rng rng(derive_seed(cfg.seed, idx));
        LabelMap mask(n, n, 0);
        const std::size_t shapes = cfg.shapes_min + rng.below(cfg.shapes_max - cfg.shapes_min + 1);
        for (std::size_t s = 0; s < shapes; ++s) {
            const auto cls = static_cast<std::uint8_t>(1 + rng.below(cfg.categories.size()));
            const bool ellipse = rng.below(2) == 1;
            const std::size_t w = min_side + rng.below(max_side - min_side + 1);
            const std::size_t h = min_side + rng.below(max_side - min_side + 1);
            const std::size_t x0 = rng.below(n - w + 1);
            const std::size_t y0 = rng.below(n - h + 1);
            const double cx = x0 + (w - 1) / 2.0, cy = y0 + (h - 1) / 2.0;
            const double rx = w / 2.0, ry = h / 2.0;
            for (std::size_t y = y0; y < y0 + h; ++y) {
                for (std::size_t x = x0; x < x0 + w; ++x) {
                    if (ellipse) {
                        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                        if (dx * dx + dy * dy > 1.0) continue;
                    }
                    mask.at(y, x) = cls;
                }
            }
        }
        Sample sample;
        char id[32];
        std::snprintf(id, sizeof id, "img_%04zu", idx);
        sample.image_id = id;
        sample.image = model::Image(n, n, 3);
        for (std::size_t y = 0; y < n; ++y) {
            for (std::size_t x = 0; x < n; ++x) {
                const std::uint8_t cls = mask.at(y, x);
                const Color& base = cls == 0 ? cfg.background_color : colors[cls - 1];
                auto px = sample.image.pixel(y, x);
                for (int c = 0; c < 3; ++c) {
                    const double noise = cfg.noise_sigma > 0.0 ? cfg.noise_sigma * rng.normal() : 0.0;
                    px[c] = quantize(base[c] + noise);
                }
                if (cls != 0) sample.labels.insert(cfg.categories.names()[cls - 1]);
            }
        }
        sample.gt_mask = std::move(mask);
        out.push_back(std::move(sample));
    }
    return out;
}

std::filesystem::path write_dataset(const fs::path& dir, const std::vector<Sample>& samples,
                                    const clustering::CategoryList& categories) {
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    {
        std::ofstream cats(dir / "categories.txt", std::ios::binary);
        if (!cats) throw IoError("cannot write " + (dir / "categories.txt").string());
        for (const auto& c : categories.names()) cats << c << '\n';
    }
    json manifest = json::array();
    for (const auto& s : samples) {
        const std::string image_rel = "images/" + s.image_id + ".ppm";
        write_ppm(dir / image_rel, s.image);
        json entry = {{"image_id", s.image_id}, {"image_path", image_rel},
                      {"labels", std::vector<std::string>(s.labels.begin(), s.labels.end())}};
        if (s.gt_mask) {
            const std::string mask_rel = "masks/" + s.image_id + ".pgm";
            write_pgm(dir / mask_rel, *s.gt_mask);
            entry["gt_mask_path"] = mask_rel;
        }
        manifest.push_back(std::move(entry));
    }
    const fs::path manifest_path = dir / "manifest.json";
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw IoError("cannot write " + manifest_path.string());
    out << manifest.dump(2) << '\n';
    return manifest_path;
}

std::filesystem::path gen_synthetic(const SynthConfig& cfg, const fs::path& dir) {
    return write_dataset(dir, generate_samples(cfg), cfg.categories);
}

std::vector<Sample> load_dataset(const fs::path& manifest_path, const clustering::CategoryList& categories) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest " + manifest_path.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw ParseError(manifest_path.string() + ": " + e.what());
    }
    if (!manifest.is_array()) throw ParseError(manifest_path.string() + ": manifest must be a list");
    if (manifest.empty()) throw ParseError(manifest_path.string() + ": empty dataset");
    const fs::path base = manifest_path.parent_path();
    std::vector<Sample> samples;
    std::set<std::string> ids;
    for (const auto& entry : manifest) {
        Sample s;
        try {
            s.image_id = entry.at("image_id").get<std::string>();
            const fs::path image_path = base / entry.at("image_path").get<std::string>();
            for (const auto& l : entry.at("labels")) s.labels.insert(l.get<std::string>());
            s.image = read_ppm(image_path);
            if (entry.contains("gt_mask_path") && !entry.at("gt_mask_path").is_null()) {
                const fs::path mask_path = base / entry.at("gt_mask_path").get<std::string>();
                s.gt_mask = read_pgm(mask_path);
                if (s.gt_mask->height != s.image.height || s.gt_mask->width != s.image.width) {
                    throw ParseError(mask_path.string() + ": mask size differs from its image");
                }
            }
        } catch (const json::exception& e) {
            throw ParseError(manifest_path.string() + ": malformed entry: " + e.what());
        }
        if (s.labels.empty()) throw ParseError(manifest_path.string() + ": image '" + s.image_id + "' has no labels");
        for (const auto& l : s.labels) {
            if (!categories.contains(l)) {
                throw ParseError(manifest_path.string() + ": image '" + s.image_id + "' has unknown label '" + l + "'");
            }
        }
        if (!ids.insert(s.image_id).second) throw ParseError(manifest_path.string() + ": duplicate id " + s.image_id);
        samples.push_back(std::move(s));
    }
    return samples;
}

void write_ppm(const fs::path& path, const model::Image& image) {
    if (image.channels != 3) throw std::invalid_argument("write_ppm: image must have 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    std::vector<unsigned char> bytes(image.data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(image.data[i], 0.0, 1.0) * 255.0));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

model::Image read_ppm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image " + path.string());
    const auto h = read_header(in, "P6", path.string());
    model::Image img(h.height, h.width, 3);
    std::vector<unsigned char> bytes(img.data.size());
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw IoError("truncated image data in " + path.string());
    for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
    return img;
}

void write_pgm(const fs::path& path, const LabelMap& map) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P5\n" << map.width << ' ' << map.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(map.labels.data()), static_cast<std::streamsize>(map.labels.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

LabelMap read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open mask " + path.string());
    const auto h = read_header(in, "P5", path.string());
    LabelMap map(h.height, h.width);
    in.read(reinterpret_cast<char*>(map.labels.data()), static_cast<std::streamsize>(map.labels.size()));
    if (in.gcount() != static_cast<std::streamsize>(map.labels.size())) throw IoError("truncated mask data in " + path.string());
    return map;
}

void write_palette(const fs::path& path, const std::vector<std::string>& names) {
    json classes = json::array();
    for (std::size_t i = 0; i < names.size(); ++i) {
        // Evenly spaced hues for display; index 0 (background) is black.
        std::array<int, 3> rgb{0, 0, 0};
        if (i > 0) {
            const double hue = static_cast<double>(i - 1) / static_cast<double>(std::max<std::size_t>(1, names.size() - 1));
            for (int c = 0; c < 3; ++c) {
                const double phase = hue + c / 3.0;
                rgb[c] = static_cast<int>(std::lround(127.5 + 127.5 * std::cos(2.0 * 3.14159265358979323846 * phase)));
            }
        }
        classes.push_back({{"index", i}, {"name", names[i]}, {"color", rgb}});
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << json{{"classes", classes}}.dump(2) << '\n';
}

}  // namespace cpc::data
