#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cpc::llm {

enum class PromptRole { generate, refine };

const char* role_name(PromptRole role);

/// FNV-1a 64-bit hash rendered as 16 hex digits.
std::string prompt_hash(const std::string& prompt);

struct TranscriptEntry {
    PromptRole role;
    std::string prompt_hash;
    std::string prompt;
    std::string response;
};

/// Chat-completion client. Implementations must reject non-zero temperature.
class Client {
public:
    virtual ~Client() = default;

    /// Throws ServiceError (retriable for network/timeouts) on failure.
    virtual std::string complete(PromptRole role, const std::string& prompt, double temperature) = 0;

    const std::vector<TranscriptEntry>& transcript() const noexcept { return transcript_; }
    /// One JSON object per line: {"role", "prompt_hash", "prompt", "response"}.
    void write_transcript(const std::filesystem::path& path) const;

protected:
    void record(PromptRole role, const std::string& prompt, const std::string& response);

private:
    std::vector<TranscriptEntry> transcript_;
};

/// Replays fixture responses as one ordered queue per prompt role.
class MockClient : public Client {
public:
    MockClient(std::vector<std::string> generate, std::vector<std::string> refine);
    /// Fixture file: {"generate": [string, ...], "refine": [string, ...]}.
    static MockClient from_file(const std::filesystem::path& path);

    std::string complete(PromptRole role, const std::string& prompt, double temperature) override;

private:
    std::deque<std::string> generate_;
    std::deque<std::string> refine_;
};

/// OpenAI-style chat-completions over HTTP(S). Request and response bodies
/// are appended to `raw_log` when set.
class HttpChatClient : public Client {
public:
    HttpChatClient(std::string endpoint, std::string model_name, std::string api_key,
                   std::optional<std::filesystem::path> raw_log = std::nullopt, int timeout_seconds = 120);

    /// Reads CPC_LLM_ENDPOINT and CPC_LLM_KEY.
    static HttpChatClient from_environment(const std::string& model_name,
                                           std::optional<std::filesystem::path> raw_log = std::nullopt);

    std::string complete(PromptRole role, const std::string& prompt, double temperature) override;

private:
    std::string base_;
    std::string path_;
    std::string model_name_;
    std::string api_key_;
    std::optional<std::filesystem::path> raw_log_;
    int timeout_seconds_;
};

}  // namespace cpc::llm
