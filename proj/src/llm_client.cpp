#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "cpc/llm_client.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include <httplib.h>
#include <json.hpp>

#include "cpc/errors.hpp"

namespace cpc::llm {

using nlohmann::json;

const char* role_name(PromptRole role) {
    return role == PromptRole::generate ? "generate" : "refine";
}

std::string prompt_hash(const std::string& prompt) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : prompt) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void Client::record(PromptRole role, const std::string& prompt, const std::string& response) {
    transcript_.push_back({role, prompt_hash(prompt), prompt, response});
}

void Client::write_transcript(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write transcript " + path.string());
    for (const auto& e : transcript_) {
        json j = {{"role", role_name(e.role)}, {"prompt_hash", e.prompt_hash}, {"prompt", e.prompt},
                  {"response", e.response}};
        out << j.dump() << '\n';
    }
}

MockClient::MockClient(std::vector<std::string> generate, std::vector<std::string> refine)
    : generate_(generate.begin(), generate.end()), refine_(refine.begin(), refine.end()) {}

MockClient MockClient::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open mock fixtures " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("mock fixtures " + path.string() + ": " + e.what());
    }
    auto strings = [&](const char* key) {
        std::vector<std::string> out;
        if (!j.contains(key)) return out;
        if (!j.at(key).is_array()) throw ParseError(std::string("mock fixtures: \"") + key + "\" must be a list");
        for (const auto& v : j.at(key)) {
            if (!v.is_string()) throw ParseError(std::string("mock fixtures: \"") + key + "\" entries must be strings");
            out.push_back(v.get<std::string>());
        }
        return out;
    };
    return MockClient(strings("generate"), strings("refine"));
}

std::string MockClient::complete(PromptRole role, const std::string& prompt, double temperature) {
    if (temperature != 0.0) throw std::invalid_argument("mock client: temperature must be 0");
    auto& queue = role == PromptRole::generate ? generate_ : refine_;
    if (queue.empty()) {
        throw ServiceError(std::string("fixture underrun: no ") + role_name(role) + " responses left", false);
    }
    std::string response = std::move(queue.front());
    queue.pop_front();
    record(role, prompt, response);
    return response;
}

namespace {

void split_endpoint(const std::string& endpoint, std::string& base, std::string& path) {
    const auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos) throw std::invalid_argument("endpoint must include a scheme: " + endpoint);
    const auto path_start = endpoint.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        base = endpoint;
        path = "/v1/chat/completions";
    } else {
        base = endpoint.substr(0, path_start);
        path = endpoint.substr(path_start);
    }
}

}  // namespace

HttpChatClient::HttpChatClient(std::string endpoint, std::string model_name, std::string api_key,
                               std::optional<std::filesystem::path> raw_log, int timeout_seconds)
    : model_name_(std::move(model_name)),
      api_key_(std::move(api_key)),
      raw_log_(std::move(raw_log)),
      timeout_seconds_(timeout_seconds) {
    split_endpoint(endpoint, base_, path_);
}

HttpChatClient HttpChatClient::from_environment(const std::string& model_name,
                                                std::optional<std::filesystem::path> raw_log) {
    const char* endpoint = std::getenv("CPC_LLM_ENDPOINT");
    if (endpoint == nullptr || *endpoint == '\0') throw ConfigError("CPC_LLM_ENDPOINT is not set");
    const char* key = std::getenv("CPC_LLM_KEY");
    return HttpChatClient(endpoint, model_name, key ? key : "", std::move(raw_log));
}

std::string HttpChatClient::complete(PromptRole role, const std::string& prompt, double temperature) {
    if (temperature != 0.0) throw std::invalid_argument("chat client: temperature must be 0");
    json request = {{"model", model_name_},
                    {"temperature", 0},
                    {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
    const std::string body = request.dump();

    httplib::Client http(base_);
    http.set_connection_timeout(timeout_seconds_, 0);
    http.set_read_timeout(timeout_seconds_, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    auto res = http.Post(path_, headers, body, "application/json");
    if (!res) {
        throw ServiceError("chat request to " + base_ + path_ + " failed: " + httplib::to_string(res.error()), true);
    }
    if (raw_log_) {
        std::ofstream log(*raw_log_, std::ios::app | std::ios::binary);
        json entry = {{"role", role_name(role)}, {"request", request}, {"status", res->status}, {"response", res->body}};
        log << entry.dump() << '\n';
    }
    if (res->status != 200) {
        const bool retriable = res->status == 429 || res->status >= 500;
        throw ServiceError("chat endpoint returned HTTP " + std::to_string(res->status), retriable);
    }
    std::string content;
    try {
        json j = json::parse(res->body);
        content = j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw ServiceError(std::string("malformed chat response: ") + e.what(), false);
    }
    record(role, prompt, content);
    return content;
}

}  // namespace cpc::llm
