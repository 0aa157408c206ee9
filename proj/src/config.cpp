#include "cpc/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "cpc/errors.hpp"

namespace cpc::config {

std::filesystem::path PathsConfig::categories_file() const {
    return categories.empty() ? dataset_dir / "categories.txt" : categories;
}

std::filesystem::path PathsConfig::manifest_file() const {
    return manifest.empty() ? dataset_dir / "manifest.json" : manifest;
}

std::filesystem::path PathsConfig::predictions_dir() const {
    return predictions.empty() ? output_dir / "masks" : predictions;
}

void GradcheckConfig::validate() const {
    if (grid_side < 1 || feature_dim < 1 || clusters < 1 || classes < 1 || top_k < 1) {
        throw ConfigError("gradcheck dimensions must be at least 1");
    }
    if ((feature_dim + cluster_dim) % 2 != 0) throw ConfigError("gradcheck feature_dim + cluster_dim must be even");
    if (!(eps > 0.5)) throw ConfigError("epsilon must exceed 0.5");
    if (!(eps < 1.0)) throw ConfigError("epsilon must be below 1");
    if (!(step > 0.0) || !(tolerance > 0.0) || !(guard >= 0.0)) throw ConfigError("gradcheck step, tolerance and guard must be positive");
    if (seeds < 1) throw ConfigError("gradcheck.seeds must be at least 1");
}

void RunConfig::validate() const {
    model::FeatureConfig m = model;
    m.class_count = std::max<std::size_t>(m.class_count, 1);
    m.validate();
    train.validate();
    crf.validate();
    synth.validate();
    llm.validate();
    gradcheck.validate();
    if (infer.upscale < 1) throw ConfigError("infer.upscale must be at least 1");
    if (run.threads < 1) throw ConfigError("run.threads must be at least 1");
}

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw ConfigError(key + ": cannot parse '" + value + "' as " + expected);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw, const char* expected) {
    const std::string v = trim(raw);
    T out{};
    const auto* first = v.data();
    const auto* last = v.data() + v.size();
    if (!v.empty() && v[0] == '+') ++first;
    const auto res = std::from_chars(first, last, out);
    if (v.empty() || res.ec != std::errc() || res.ptr != last) bad_value(key, raw, expected);
    return out;
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

data::Color parse_color(const std::string& key, const std::string& raw) {
    std::istringstream in(raw);
    std::string a, b, c, extra;
    if (!(in >> a >> b >> c) || (in >> extra)) bad_value(key, raw, "three channel values");
    return {parse_number<double>(key, a, "a color"), parse_number<double>(key, b, "a color"),
            parse_number<double>(key, c, "a color")};
}

std::string format_color(const data::Color& c) {
    return format_double(c[0]) + " " + format_double(c[1]) + " " + format_double(c[2]);
}

struct Binding {
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename Access>
Binding count_key(std::string key, Access access) {
    return {key,
            [key, access](RunConfig& c, const std::string& v) {
                access(c) = parse_number<std::size_t>(key, v, "a non-negative integer");
            },
            [access](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Binding u64_key(std::string key, Access access) {
    return {key,
            [key, access](RunConfig& c, const std::string& v) {
                access(c) = parse_number<std::uint64_t>(key, v, "a non-negative integer");
            },
            [access](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Binding real_key(std::string key, Access access) {
    return {key, [key, access](RunConfig& c, const std::string& v) { access(c) = parse_number<double>(key, v, "a number"); },
            [access](const RunConfig& c) { return format_double(access(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Binding bool_key(std::string key, Access access) {
    return {key,
            [key, access](RunConfig& c, const std::string& raw) {
                const std::string v = trim(raw);
                if (v == "true" || v == "1" || v == "yes") access(c) = true;
                else if (v == "false" || v == "0" || v == "no") access(c) = false;
                else bad_value(key, raw, "a boolean");
            },
            [access](const RunConfig& c) { return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Access>
Binding path_key(std::string key, Access access) {
    return {key, [access](RunConfig& c, const std::string& v) { access(c) = trim(v); },
            [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)).string(); }};
}

const std::vector<Binding>& bindings() {
    static const std::vector<Binding> all = [] {
        std::vector<Binding> b;
        // model
        b.push_back(count_key("model.image_side", [](RunConfig& c) -> auto& { return c.model.image_side; }));
        b.push_back(count_key("model.patch_side", [](RunConfig& c) -> auto& { return c.model.patch_side; }));
        b.push_back(count_key("model.feature_dim", [](RunConfig& c) -> auto& { return c.model.feature_dim; }));
        b.push_back(count_key("model.cluster_dim", [](RunConfig& c) -> auto& { return c.model.cluster_dim; }));
        b.push_back(count_key("model.top_k", [](RunConfig& c) -> auto& { return c.model.top_k; }));
        b.push_back({"model.feature_norm",
                     [](RunConfig& c, const std::string& raw) {
                         const std::string v = trim(raw);
                         if (v == "image") c.model.feature_norm = model::FeatureNorm::per_image;
                         else if (v == "fixed") c.model.feature_norm = model::FeatureNorm::fixed;
                         else bad_value("model.feature_norm", raw, "image or fixed");
                     },
                     [](const RunConfig& c) {
                         return std::string(c.model.feature_norm == model::FeatureNorm::fixed ? "fixed" : "image");
                     }});
        // train
        b.push_back(count_key("train.epochs", [](RunConfig& c) -> auto& { return c.train.epochs; }));
        b.push_back(count_key("train.batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; }));
        b.push_back(real_key("train.lr_stage1", [](RunConfig& c) -> auto& { return c.train.lr_stage1; }));
        b.push_back(real_key("train.lr_stage2", [](RunConfig& c) -> auto& { return c.train.lr_stage2; }));
        b.push_back(count_key("train.stage1_epochs", [](RunConfig& c) -> auto& { return c.train.stage1_epochs; }));
        b.push_back(real_key("train.eps", [](RunConfig& c) -> auto& { return c.train.eps; }));
        b.push_back(real_key("train.lambda_pce", [](RunConfig& c) -> auto& { return c.train.lambda_pce; }));
        b.push_back(u64_key("train.seed", [](RunConfig& c) -> auto& { return c.train.seed; }));
        b.push_back({"train.optimizer",
                     [](RunConfig& c, const std::string& raw) {
                         const std::string v = trim(raw);
                         if (v == "adam") c.train.optimizer = train::Optimizer::adam;
                         else if (v == "sgd") c.train.optimizer = train::Optimizer::sgd;
                         else bad_value("train.optimizer", raw, "adam or sgd");
                     },
                     [](const RunConfig& c) {
                         return std::string(c.train.optimizer == train::Optimizer::adam ? "adam" : "sgd");
                     }});
        b.push_back(real_key("train.adam_beta1", [](RunConfig& c) -> auto& { return c.train.adam_beta1; }));
        b.push_back(real_key("train.adam_beta2", [](RunConfig& c) -> auto& { return c.train.adam_beta2; }));
        b.push_back(real_key("train.adam_eps", [](RunConfig& c) -> auto& { return c.train.adam_eps; }));
        b.push_back(count_key("train.max_steps", [](RunConfig& c) -> auto& { return c.train.max_steps; }));
        b.push_back(bool_key("train.background_in_mce", [](RunConfig& c) -> auto& { return c.train.background_in_mce; }));
        b.push_back(count_key("train.probe_count", [](RunConfig& c) -> auto& { return c.train.probe_count; }));
        // crf
        b.push_back(count_key("crf.iterations", [](RunConfig& c) -> auto& { return c.crf.iterations; }));
        b.push_back(real_key("crf.w_smooth", [](RunConfig& c) -> auto& { return c.crf.w_smooth; }));
        b.push_back(real_key("crf.theta_spatial", [](RunConfig& c) -> auto& { return c.crf.theta_spatial; }));
        b.push_back(real_key("crf.w_appearance", [](RunConfig& c) -> auto& { return c.crf.w_appearance; }));
        b.push_back(real_key("crf.theta_color", [](RunConfig& c) -> auto& { return c.crf.theta_color; }));
        b.push_back(real_key("crf.theta_app_spatial", [](RunConfig& c) -> auto& { return c.crf.theta_app_spatial; }));
        // synth
        b.push_back(count_key("synth.image_side", [](RunConfig& c) -> auto& { return c.synth.image_side; }));
        b.push_back({"synth.categories",
                     [](RunConfig& c, const std::string& v) {
                         try {
                             c.synth.categories = clustering::CategoryList(split(v, ','));
                         } catch (const std::invalid_argument& e) {
                             throw ConfigError(std::string("synth.categories: ") + e.what());
                         }
                     },
                     [](const RunConfig& c) {
                         std::string out;
                         for (const auto& n : c.synth.categories.names()) out += (out.empty() ? "" : ", ") + n;
                         return out;
                     }});
        b.push_back({"synth.background_color",
                     [](RunConfig& c, const std::string& v) { c.synth.background_color = parse_color("synth.background_color", v); },
                     [](const RunConfig& c) { return format_color(c.synth.background_color); }});
        b.push_back({"synth.class_colors",
                     [](RunConfig& c, const std::string& v) {
                         c.synth.class_colors.clear();
                         for (const auto& part : split(v, ';')) c.synth.class_colors.push_back(parse_color("synth.class_colors", part));
                     },
                     [](const RunConfig& c) {
                         std::string out;
                         for (const auto& col : c.synth.class_colors) out += (out.empty() ? "" : "; ") + format_color(col);
                         return out;
                     }});
        b.push_back(count_key("synth.shapes_min", [](RunConfig& c) -> auto& { return c.synth.shapes_min; }));
        b.push_back(count_key("synth.shapes_max", [](RunConfig& c) -> auto& { return c.synth.shapes_max; }));
        b.push_back(real_key("synth.noise_sigma", [](RunConfig& c) -> auto& { return c.synth.noise_sigma; }));
        b.push_back({"synth.confusable_pairs",
                     [](RunConfig& c, const std::string& v) {
                         c.synth.confusable_pairs.clear();
                         for (const auto& part : split(v, ',')) {
                             const auto ab = split(part, ':');
                             if (ab.size() != 2) bad_value("synth.confusable_pairs", v, "a list of a:b pairs");
                             c.synth.confusable_pairs.emplace_back(ab[0], ab[1]);
                         }
                     },
                     [](const RunConfig& c) {
                         std::string out;
                         for (const auto& [a, b2] : c.synth.confusable_pairs) out += (out.empty() ? "" : ", ") + a + ":" + b2;
                         return out;
                     }});
        b.push_back(real_key("synth.confusable_delta", [](RunConfig& c) -> auto& { return c.synth.confusable_delta; }));
        b.push_back(real_key("synth.min_shape_fraction", [](RunConfig& c) -> auto& { return c.synth.min_shape_fraction; }));
        b.push_back(count_key("synth.count", [](RunConfig& c) -> auto& { return c.synth.count; }));
        b.push_back(u64_key("synth.seed", [](RunConfig& c) -> auto& { return c.synth.seed; }));
        // llm
        b.push_back({"llm.endpoint", [](RunConfig& c, const std::string& v) { c.llm.endpoint = trim(v); },
                     [](const RunConfig& c) { return c.llm.endpoint; }});
        b.push_back({"llm.model_name", [](RunConfig& c, const std::string& v) { c.llm.model_name = trim(v); },
                     [](const RunConfig& c) { return c.llm.model_name; }});
        b.push_back(real_key("llm.temperature", [](RunConfig& c) -> auto& { return c.llm.temperature; }));
        b.push_back(count_key("llm.query_count", [](RunConfig& c) -> auto& { return c.llm.query_count; }));
        b.push_back(count_key("llm.max_refine_iters", [](RunConfig& c) -> auto& { return c.llm.max_refine_iters; }));
        b.push_back({"llm.fixture_path",
                     [](RunConfig& c, const std::string& v) {
                         const auto t = trim(v);
                         if (t.empty()) c.llm.fixture_path.reset();
                         else c.llm.fixture_path = t;
                     },
                     [](const RunConfig& c) { return c.llm.fixture_path ? c.llm.fixture_path->string() : std::string(); }});
        // paths
        b.push_back(path_key("paths.categories", [](RunConfig& c) -> auto& { return c.paths.categories; }));
        b.push_back(path_key("paths.dataset_dir", [](RunConfig& c) -> auto& { return c.paths.dataset_dir; }));
        b.push_back(path_key("paths.manifest", [](RunConfig& c) -> auto& { return c.paths.manifest; }));
        b.push_back(path_key("paths.partition", [](RunConfig& c) -> auto& { return c.paths.partition; }));
        b.push_back(path_key("paths.checkpoint", [](RunConfig& c) -> auto& { return c.paths.checkpoint; }));
        b.push_back(path_key("paths.output_dir", [](RunConfig& c) -> auto& { return c.paths.output_dir; }));
        b.push_back(path_key("paths.predictions", [](RunConfig& c) -> auto& { return c.paths.predictions; }));
        b.push_back(path_key("paths.features", [](RunConfig& c) -> auto& { return c.paths.features; }));
        b.push_back(path_key("paths.prompts", [](RunConfig& c) -> auto& { return c.paths.prompts; }));
        // infer
        b.push_back(count_key("infer.upscale", [](RunConfig& c) -> auto& { return c.infer.upscale; }));
        // gradcheck
        b.push_back(count_key("gradcheck.grid_side", [](RunConfig& c) -> auto& { return c.gradcheck.grid_side; }));
        b.push_back(count_key("gradcheck.feature_dim", [](RunConfig& c) -> auto& { return c.gradcheck.feature_dim; }));
        b.push_back(count_key("gradcheck.cluster_dim", [](RunConfig& c) -> auto& { return c.gradcheck.cluster_dim; }));
        b.push_back(count_key("gradcheck.clusters", [](RunConfig& c) -> auto& { return c.gradcheck.clusters; }));
        b.push_back(count_key("gradcheck.classes", [](RunConfig& c) -> auto& { return c.gradcheck.classes; }));
        b.push_back(count_key("gradcheck.top_k", [](RunConfig& c) -> auto& { return c.gradcheck.top_k; }));
        b.push_back(real_key("gradcheck.eps", [](RunConfig& c) -> auto& { return c.gradcheck.eps; }));
        b.push_back(real_key("gradcheck.lambda_pce", [](RunConfig& c) -> auto& { return c.gradcheck.lambda_pce; }));
        b.push_back(real_key("gradcheck.step", [](RunConfig& c) -> auto& { return c.gradcheck.step; }));
        b.push_back(real_key("gradcheck.tolerance", [](RunConfig& c) -> auto& { return c.gradcheck.tolerance; }));
        b.push_back(count_key("gradcheck.seeds", [](RunConfig& c) -> auto& { return c.gradcheck.seeds; }));
        b.push_back(u64_key("gradcheck.first_seed", [](RunConfig& c) -> auto& { return c.gradcheck.first_seed; }));
        b.push_back(real_key("gradcheck.guard", [](RunConfig& c) -> auto& { return c.gradcheck.guard; }));
        b.push_back(real_key("gradcheck.classifier_scale", [](RunConfig& c) -> auto& { return c.gradcheck.classifier_scale; }));
        b.push_back(bool_key("gradcheck.sabotage", [](RunConfig& c) -> auto& { return c.gradcheck.sabotage; }));
        // run
        b.push_back({"run.threads",
                     [](RunConfig& c, const std::string& v) {
                         const auto t = parse_number<unsigned>("run.threads", v, "a positive integer");
                         c.run.threads = t;
                         c.train.threads = t;
                     },
                     [](const RunConfig& c) { return std::to_string(c.run.threads); }});
        b.push_back(u64_key("run.feature_seed", [](RunConfig& c) -> auto& { return c.run.feature_seed; }));
        return b;
    }();
    return all;
}

const Binding& find_binding(const std::string& key) {
    for (const auto& b : bindings()) {
        if (b.key == key) return b;
    }
    throw ConfigError("unknown configuration key '" + key + "'");
}

}  // namespace

std::vector<std::string> known_keys() {
    std::vector<std::string> out;
    for (const auto& b : bindings()) out.push_back(b.key);
    return out;
}

void set_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    find_binding(key).set(cfg, value);
}

std::string get_value(const RunConfig& cfg, const std::string& key) { return find_binding(key).get(cfg); }

RunConfig load_string(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    RunConfig cfg;
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw ConfigError("config key '" + section + "' must sit inside a [section]");
        for (const auto& [key, value] : body) set_value(cfg, section + "." + key, value.get_value<std::string>());
    }
    return cfg;
}

RunConfig load_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return load_string(ss.str());
}

void apply_overrides(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& overrides) {
    for (const auto& [k, v] : overrides) set_value(cfg, k, v);
}

std::string to_ini(const RunConfig& cfg) {
    std::string out;
    std::string section;
    for (const auto& b : bindings()) {
        const auto dot = b.key.find('.');
        const std::string sec = b.key.substr(0, dot);
        if (sec != section) {
            out += (section.empty() ? "" : "\n") + ("[" + sec + "]\n");
            section = sec;
        }
        out += b.key.substr(dot + 1) + " = " + b.get(cfg) + "\n";
    }
    return out;
}

void write_snapshot(const std::filesystem::path& path, const RunConfig& cfg) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write config snapshot " + path.string());
    f << to_ini(cfg);
    if (!f) throw IoError("failed writing config snapshot " + path.string());
}

}  // namespace cpc::config
