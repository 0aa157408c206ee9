#include "cpc/clustering.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "cpc/errors.hpp"

namespace cpc::clustering {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

// Strips quotes, brackets and trailing punctuation an LLM may wrap names in.
std::string clean_name(std::string_view raw) {
    std::string s = trim(raw);
    auto strip = [](char c) { return c == '"' || c == '\'' || c == '`' || c == '[' || c == ']' || c == '{' || c == '}' || c == '.'; };
    while (!s.empty() && strip(s.front())) s.erase(s.begin());
    while (!s.empty() && strip(s.back())) s.pop_back();
    return trim(s);
}

size_t count_occurrences(const std::string& text, const std::string& token) {
    std::size_t n = 0;
    for (auto pos = text.find(token); pos != std::string::npos; pos = text.find(token, pos + token.size())) ++n;
    return n;
}

std::string replace_once(std::string text, const std::string& token, const std::string& value) {
    const auto pos = text.find(token);
    text.replace(pos, token.size(), value);
    return text;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct RawCluster {
    std::string name;
    std::vector<std::string> members;
};

bool clusters_from_json(const json& j, std::vector<RawCluster>& out) {
    const json* arr = &j;
    if (j.is_object() && j.contains("clusters")) arr = &j.at("clusters");
    if (arr->is_array()) {
        for (const auto& item : *arr) {
            if (!item.is_object() || !item.contains("members") || !item.at("members").is_array()) return false;
            RawCluster rc;
            if (item.contains("name") && item.at("name").is_string()) rc.name = item.at("name").get<std::string>();
            for (const auto& m : item.at("members")) {
                if (!m.is_string()) return false;
                rc.members.push_back(m.get<std::string>());
            }
            out.push_back(std::move(rc));
        }
        return true;
    }
    if (arr->is_object()) {
        // {"cluster name": ["member", ...], ...}
        for (const auto& [key, value] : arr->items()) {
            if (!value.is_array()) return false;
            RawCluster rc{key, {}};
            for (const auto& m : value) {
                if (!m.is_string()) return false;
                rc.members.push_back(m.get<std::string>());
            }
            out.push_back(std::move(rc));
        }
        return true;
    }
    return false;
}

bool try_json(const std::string& text, std::vector<RawCluster>& out) {
    auto attempt = [&](const std::string& candidate) {
        json j = json::parse(candidate, nullptr, false);
        if (j.is_discarded()) return false;
        std::vector<RawCluster> tmp;
        if (!clusters_from_json(j, tmp)) return false;
        out = std::move(tmp);
        return true;
    };
    if (attempt(text)) return true;
    const auto open = text.find_first_of("[{");
    if (open == std::string::npos) return false;
    const char close_ch = text[open] == '[' ? ']' : '}';
    const auto close = text.rfind(close_ch);
    if (close == std::string::npos || close <= open) return false;
    return attempt(text.substr(open, close - open + 1));
}

bool try_lines(const std::string& text, std::vector<RawCluster>& out) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::string s = trim(line);
        while (!s.empty() && (s.front() == '-' || s.front() == '*' || s.front() == '#')) s = trim(s.substr(1));
        std::size_t digits = 0;
        while (digits < s.size() && std::isdigit(static_cast<unsigned char>(s[digits]))) ++digits;
        if (digits > 0 && digits < s.size() && (s[digits] == '.' || s[digits] == ')')) s = trim(s.substr(digits + 1));
        const auto colon = s.find(':');
        if (colon == std::string::npos) continue;
        RawCluster rc{clean_name(std::string_view(s).substr(0, colon)), {}};
        std::string rest = s.substr(colon + 1);
        std::replace(rest.begin(), rest.end(), ';', ',');
        std::istringstream items(rest);
        std::string item;
        while (std::getline(items, item, ',')) {
            std::string name = clean_name(item);
            if (!name.empty()) rc.members.push_back(name);
        }
        if (!rc.members.empty()) out.push_back(std::move(rc));
    }
    return !out.empty();
}

}  // namespace

CategoryList::CategoryList(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.empty()) throw std::invalid_argument("category list is empty");
    std::set<std::string> seen;
    for (const auto& n : names_) {
        if (n.empty()) throw std::invalid_argument("category list contains an empty name");
        if (!seen.insert(n).second) throw std::invalid_argument("duplicate category: " + n);
    }
}

bool CategoryList::contains(const std::string& name) const { return index_of(name).has_value(); }

std::optional<std::size_t> CategoryList::index_of(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names_.begin());
}

CategoryList read_categories_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open categories file " + path.string());
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        std::string s = trim(line);
        if (!s.empty()) names.push_back(s);
    }
    try {
        return CategoryList(std::move(names));
    } catch (const std::invalid_argument& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void validate_partition(const CategoryPartition& p, const CategoryList& categories) {
    std::set<std::string> seen;
    for (const auto& c : p.clusters) {
        if (c.members.empty()) throw std::invalid_argument("cluster '" + c.name + "' is empty");
        for (const auto& m : c.members) {
            if (!categories.contains(m)) throw std::invalid_argument("unknown category '" + m + "' in partition");
            if (!seen.insert(m).second) throw std::invalid_argument("category '" + m + "' appears in two clusters");
        }
    }
    if (seen.size() != categories.size()) throw std::invalid_argument("partition does not cover every category");
}

CategoryPartition canonicalize(const CategoryPartition& p) {
    CategoryPartition out = p;
    for (auto& c : out.clusters) std::sort(c.members.begin(), c.members.end());
    std::stable_sort(out.clusters.begin(), out.clusters.end(), [](const Cluster& a, const Cluster& b) {
        if (a.members.empty() || b.members.empty()) return a.members.size() < b.members.size();
        return a.members.front() < b.members.front();
    });
    return out;
}

bool same_grouping(const CategoryPartition& a, const CategoryPartition& b) {
    if (a.size() != b.size()) return false;
    const auto ca = canonicalize(a);
    const auto cb = canonicalize(b);
    for (std::size_t i = 0; i < ca.size(); ++i) {
        if (ca.clusters[i].members != cb.clusters[i].members) return false;
    }
    return true;
}

CategoryPartition parse_partition(const std::string& text, const CategoryList& categories) {
    std::vector<RawCluster> raw;
    if (!try_json(text, raw) && !try_lines(text, raw)) {
        throw ParseError("could not find a cluster listing in LLM output");
    }

    std::map<std::string, std::string> folded;
    for (const auto& n : categories.names()) folded.emplace(lower(n), n);
    auto resolve = [&](const std::string& name) -> std::string {
        const std::string cleaned = clean_name(name);
        if (categories.contains(cleaned)) return cleaned;
        auto it = folded.find(lower(cleaned));
        if (it == folded.end()) throw ParseError("unknown category '" + cleaned + "' in LLM output");
        return it->second;
    };

    CategoryPartition p;
    std::set<std::string> assigned;
    for (const auto& rc : raw) {
        Cluster c;
        c.name = trim(rc.name);
        for (const auto& m : rc.members) {
            std::string name = resolve(m);
            if (!assigned.insert(name).second) {
                // Repeats inside one cluster are harmless; across clusters they break disjointness.
                if (std::find(c.members.begin(), c.members.end(), name) != c.members.end()) continue;
                throw ParseError("category '" + name + "' assigned to more than one cluster");
            }
            c.members.push_back(std::move(name));
        }
        if (c.members.empty()) continue;
        if (c.name.empty()) c.name = "cluster_" + std::to_string(p.clusters.size());
        p.clusters.push_back(std::move(c));
    }
    if (p.clusters.empty()) throw ParseError("LLM output contains no non-empty cluster");
    for (const auto& n : categories.names()) {
        if (!assigned.count(n)) p.clusters.push_back({n, {n}});
    }
    return canonicalize(p);
}

std::string partition_to_json(const CategoryPartition& p) {
    json arr = json::array();
    for (const auto& c : canonicalize(p).clusters) arr.push_back({{"name", c.name}, {"members", c.members}});
    return arr.dump(2) + "\n";
}

void write_partition_file(const std::filesystem::path& path, const CategoryPartition& p) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write partition file " + path.string());
    out << partition_to_json(p);
}

CategoryPartition read_partition_file(const std::filesystem::path& path, const CategoryList& categories) {
    const std::string text = read_text(path);
    json j = json::parse(text, nullptr, false);
    std::vector<RawCluster> raw;
    if (j.is_discarded() || !clusters_from_json(j, raw)) throw ParseError("malformed partition file " + path.string());
    CategoryPartition p;
    for (auto& rc : raw) p.clusters.push_back({rc.name, rc.members});
    try {
        validate_partition(p, categories);
    } catch (const std::invalid_argument& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return canonicalize(p);
}

CategoryPartition vote_partitions(const std::vector<CategoryPartition>& samples) {
    if (samples.empty()) throw std::invalid_argument("vote_partitions: no samples");
    std::vector<CategoryPartition> canon;
    std::vector<std::size_t> counts;
    for (const auto& s : samples) {
        const auto c = canonicalize(s);
        auto it = std::find_if(canon.begin(), canon.end(), [&](const CategoryPartition& x) { return same_grouping(x, c); });
        if (it == canon.end()) {
            canon.push_back(c);
            counts.push_back(1);
        } else {
            ++counts[static_cast<std::size_t>(it - canon.begin())];
        }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < counts.size(); ++i) {
        if (counts[i] > counts[best]) best = i;
    }
    return canon[best];
}

bool stop_condition(const std::vector<CategoryPartition>& history) {
    if (history.size() < 3) return false;
    const auto n = history.size();
    return same_grouping(history[n - 1], history[n - 2]) && same_grouping(history[n - 2], history[n - 3]);
}

void PromptTemplates::validate() const {
    if (count_occurrences(gen_template, kCategoriesToken) != 1 || count_occurrences(gen_template, kClustersToken) != 0) {
        throw std::invalid_argument(std::string("generation template must contain exactly one ") + kCategoriesToken);
    }
    if (count_occurrences(refine_template, kClustersToken) != 1 ||
        count_occurrences(refine_template, kCategoriesToken) != 0) {
        throw std::invalid_argument(std::string("refine template must contain exactly one ") + kClustersToken);
    }
}

std::string PromptTemplates::render_generate(const CategoryList& categories) const {
    std::string joined;
    for (const auto& n : categories.names()) {
        if (!joined.empty()) joined += ", ";
        joined += n;
    }
    return replace_once(gen_template, kCategoriesToken, joined);
}

std::string PromptTemplates::render_refine(const CategoryPartition& current) const {
    std::string clusters = partition_to_json(current);
    if (!clusters.empty() && clusters.back() == '\n') clusters.pop_back();
    return replace_once(refine_template, kClustersToken, clusters);
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir) {
    PromptTemplates t{read_text(dir / "generate.txt"), read_text(dir / "refine.txt")};
    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(dir.string() + ": " + e.what());
    }
    return t;
}

void LLMClientConfig::validate() const {
    if (temperature != 0.0) throw ConfigError("llm.temperature must be 0");
    if (query_count < 1) throw ConfigError("llm.query_count must be at least 1");
    if (max_refine_iters < 1) throw ConfigError("llm.max_refine_iters must be at least 1");
}

SelfRefineResult self_refine(llm::Client& client, const CategoryList& categories, const PromptTemplates& templates,
                             const LLMClientConfig& cfg) {
    cfg.validate();
    templates.validate();
    SelfRefineResult result;

    const std::string gen_prompt = templates.render_generate(categories);
    for (std::size_t r = 0; r < cfg.query_count; ++r) {
        const std::string text = client.complete(llm::PromptRole::generate, gen_prompt, cfg.temperature);
        try {
            result.samples.push_back(parse_partition(text, categories));
        } catch (const ParseError&) {
            // voting runs over the parseable responses only
        }
    }
    if (result.samples.empty()) throw ParseError("none of the generation responses could be parsed");

    CategoryPartition current = vote_partitions(result.samples);
    result.history.push_back(current);
    for (std::size_t t = 0; t < cfg.max_refine_iters; ++t) {
        const std::string text = client.complete(llm::PromptRole::refine, templates.render_refine(current), cfg.temperature);
        current = parse_partition(text, categories);
        result.history.push_back(current);
        ++result.refine_calls;
        if (stop_condition(result.history)) {
            result.converged = true;
            break;
        }
    }
    result.partition = current;
    return result;
}

ClusterVector build_cluster_vector(const std::set<std::string>& image_labels, const CategoryPartition& partition) {
    if (image_labels.empty()) throw std::invalid_argument("build_cluster_vector: image has no labels");
    const auto canon = canonicalize(partition);
    ClusterVector u;
    u.bits.assign(canon.size(), 0);
    for (const auto& label : image_labels) {
        bool found = false;
        for (std::size_t i = 0; i < canon.size(); ++i) {
            const auto& m = canon.clusters[i].members;
            if (std::binary_search(m.begin(), m.end(), label)) {
                u.bits[i] = 1;
                found = true;
                break;
            }
        }
        if (!found) throw std::invalid_argument("build_cluster_vector: label '" + label + "' is not in the partition");
    }
    return u;
}

}  // namespace cpc::clustering
