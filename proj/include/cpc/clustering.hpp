#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cpc/llm_client.hpp"

namespace cpc::clustering {

/// Ordered list of distinct, non-empty category names.
class CategoryList {
public:
    CategoryList() = default;
    explicit CategoryList(std::vector<std::string> names);

    const std::vector<std::string>& names() const noexcept { return names_; }
    std::size_t size() const noexcept { return names_.size(); }
    bool contains(const std::string& name) const;
    /// Index of `name`, or nullopt.
    std::optional<std::size_t> index_of(const std::string& name) const;

    friend bool operator==(const CategoryList&, const CategoryList&) = default;

private:
    std::vector<std::string> names_;
};

/// One category per line; blank lines and surrounding whitespace are ignored.
CategoryList read_categories_file(const std::filesystem::path& path);

struct Cluster {
    std::string name;
    std::vector<std::string> members;

    friend bool operator==(const Cluster&, const Cluster&) = default;
};

struct CategoryPartition {
    std::vector<Cluster> clusters;

    std::size_t size() const noexcept { return clusters.size(); }
    friend bool operator==(const CategoryPartition&, const CategoryPartition&) = default;
};

/// Throws std::invalid_argument unless the clusters are non-empty, pairwise
/// disjoint and cover `categories` exactly.
void validate_partition(const CategoryPartition& p, const CategoryList& categories);

/// Members sorted within each cluster; clusters ordered by smallest member.
CategoryPartition canonicalize(const CategoryPartition& p);

/// Equality of canonical member sets; cluster names are ignored.
bool same_grouping(const CategoryPartition& a, const CategoryPartition& b);

/// Parses LLM output into a partition over `categories`. Accepts a JSON
/// array of {"name", "members"} objects (optionally embedded in prose or
/// wrapped as {"clusters": [...]}) or "name: member, member" lines.
/// Categories the text omits become singleton clusters named after
/// themselves. Throws ParseError on unparseable text or unknown names.
CategoryPartition parse_partition(const std::string& text, const CategoryList& categories);

/// Canonical JSON text: [{"name": ..., "members": [...]}, ...].
std::string partition_to_json(const CategoryPartition& p);
void write_partition_file(const std::filesystem::path& path, const CategoryPartition& p);
CategoryPartition read_partition_file(const std::filesystem::path& path, const CategoryList& categories);

/// Most frequent canonical grouping; ties go to the earliest first occurrence.
CategoryPartition vote_partitions(const std::vector<CategoryPartition>& samples);

/// True iff the last three entries of `history` have the same grouping.
bool stop_condition(const std::vector<CategoryPartition>& history);

struct PromptTemplates {
    static constexpr const char* kCategoriesToken = "{categories}";
    static constexpr const char* kClustersToken = "{clusters}";

    std::string gen_template;
    std::string refine_template;

    /// Throws std::invalid_argument unless each template holds exactly one
    /// placeholder of its kind.
    void validate() const;
    std::string render_generate(const CategoryList& categories) const;
    std::string render_refine(const CategoryPartition& current) const;

    /// Loads generate.txt and refine.txt from `dir`.
    static PromptTemplates load(const std::filesystem::path& dir);
};

struct LLMClientConfig {
    std::string endpoint = "mock";
    std::string model_name = "gpt-4o";
    double temperature = 0.0;
    std::size_t query_count = 10;
    std::size_t max_refine_iters = 10;
    std::optional<std::filesystem::path> fixture_path;

    void validate() const;
};

struct SelfRefineResult {
    CategoryPartition partition;
    /// Parsed generation samples in query order (unparseable ones skipped).
    std::vector<CategoryPartition> samples;
    /// z_0, z_1, ... as canonical partitions.
    std::vector<CategoryPartition> history;
    std::size_t refine_calls = 0;
    bool converged = false;
};

/// Multi-query generation with voting followed by iterative refinement until
/// three consecutive partitions agree or the iteration cap is reached.
SelfRefineResult self_refine(llm::Client& client, const CategoryList& categories,
                             const PromptTemplates& templates, const LLMClientConfig& cfg);

/// Binary membership vector: bit i is set iff canonical cluster i contains
/// one of `image_labels`.
struct ClusterVector {
    std::vector<std::uint8_t> bits;

    std::size_t size() const noexcept { return bits.size(); }
    friend bool operator==(const ClusterVector&, const ClusterVector&) = default;
};

ClusterVector build_cluster_vector(const std::set<std::string>& image_labels, const CategoryPartition& partition);

}  // namespace cpc::clustering
