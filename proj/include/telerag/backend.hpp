#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace telerag::backend {

using Vector = std::vector<float>;

enum class Role { generation, retrieval_embedding, answer_embedding };

std::string_view to_string(Role role);
Role role_from_string(std::string_view s);

struct CompletionRequest {
    std::vector<std::string> prompts;
    int max_new_tokens = 32;
    double temperature = 0.0;
    std::optional<std::uint64_t> seed;
    std::string model;
};

/// Where and how to reach one backend. `kind` selects the implementation:
/// "http" for JSON-over-HTTP services, "mock" for the scripted completion
/// mock, "mock-embed" for the hashed bag-of-words embedder.
struct BackendConfig {
    std::string kind = "mock";
    std::string endpoint;
    std::string model_id;
    double timeout_s = 60.0;
    int retry_count = 2;
    int max_in_flight = 4;
    Role role = Role::generation;
    std::filesystem::path script;  // mock completions
    std::size_t dim = 256;         // mock embeddings
    std::filesystem::path cache_dir;  // optional embedding cache

    nlohmann::json to_json() const;
    static BackendConfig from_json(const nlohmann::json& j, Role role);
};

/// Completion service. Callers go through complete(), which validates the
/// request, retries transient failures and checks response alignment.
class CompletionBackend {
public:
    explicit CompletionBackend(int retry_count = 0) : retry_count_(retry_count) {}
    virtual ~CompletionBackend() = default;

    virtual std::string id() const = 0;

    /// One completion per prompt, aligned with req.prompts.
    std::vector<std::string> complete(const CompletionRequest& req) const;

protected:
    virtual std::vector<std::string> do_complete(const CompletionRequest& req) const = 0;

private:
    int retry_count_;
};

/// Embedding service. embed() enforces alignment and a dimension that stays
/// fixed for the lifetime of the object.
class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;

    virtual std::string id() const = 0;

    std::vector<Vector> embed(std::span<const std::string> texts) const;

    /// Dimension observed so far (0 before the first call).
    std::size_t dim() const { return dim_.load(); }

protected:
    virtual std::vector<Vector> do_embed(std::span<const std::string> texts) const = 0;

private:
    mutable std::atomic<std::size_t> dim_{0};
};

std::vector<std::string> complete_batch(const CompletionRequest& req, const CompletionBackend& backend);
std::vector<Vector> embed_batch(std::span<const std::string> texts, const EmbeddingBackend& backend);

/// Hashed bag-of-words embedder: lowercase alphanumeric tokens are hashed
/// into `dim` buckets with a hash-derived sign, then L2-normalised. The empty
/// string (or any text without tokens) maps to the zero vector.
class MockEmbedder final : public EmbeddingBackend {
public:
    explicit MockEmbedder(std::string model_id = "mock-bow", std::size_t dim = 256);
    std::string id() const override { return model_id_; }

protected:
    std::vector<Vector> do_embed(std::span<const std::string> texts) const override;

private:
    std::string model_id_;
    std::size_t dim_;
};

/// Scripted completion mock. Script lines are tab-separated:
///
///     # comment
///     seed     <uint>
///     default  <response>
///     exact    <prompt>  <response>      (\n, \t, \\ escaped)
///     gold     <question text>  <gold option text>
///     rule     always-slot  <d>          (1-based displayed slot)
///     rule     truth [<p> <fallback d>]  (answer the gold slot w.p. p, else slot d)
///     rule     contains  <substring>  <response>
///
/// Resolution order: exact match, then rules in file order (first that
/// applies), then the default. `truth` applies when a gold question occurs in
/// the prompt; with option lines it answers "option <slot>", without them it
/// answers the gold text itself. Random draws are keyed by (seed, prompt).
class MockCompletionBackend final : public CompletionBackend {
public:
    struct Rule {
        enum class Kind { always_slot, truth, contains } kind;
        std::size_t slot = 0;  // 1-based
        double accuracy = 1.0;
        std::string needle;
        std::string response;
    };
    struct Gold {
        std::string question;
        std::string answer;
    };

    MockCompletionBackend() = default;
    std::string id() const override { return "mock"; }

    std::string respond(std::string_view prompt) const;

    std::uint64_t seed = 0;
    std::string default_response = "unknown";
    std::vector<std::pair<std::string, std::string>> exact;
    std::vector<Gold> golds;
    std::vector<Rule> rules;

protected:
    std::vector<std::string> do_complete(const CompletionRequest& req) const override;
};

/// Parses a mock script; malformed lines raise an error with the line number.
MockCompletionBackend mock_script_parse(std::string_view script, std::string_view source_name = "<script>");
MockCompletionBackend mock_script_load(const std::filesystem::path& path);

/// Extracts "option <i>: <text>" lines from a rendered prompt, by slot.
std::vector<std::string> displayed_options(std::string_view prompt);

/// Content-addressed on-disk cache in front of another embedder. Keys are
/// SHA-256(backend id, text); entries are written atomically.
class CachedEmbedder final : public EmbeddingBackend {
public:
    CachedEmbedder(std::shared_ptr<const EmbeddingBackend> inner, std::filesystem::path dir);
    std::string id() const override { return inner_->id(); }

    std::size_t hits() const { return hits_.load(); }
    std::size_t misses() const { return misses_.load(); }

protected:
    std::vector<Vector> do_embed(std::span<const std::string> texts) const override;

private:
    std::shared_ptr<const EmbeddingBackend> inner_;
    std::filesystem::path dir_;
    mutable std::atomic<std::size_t> hits_{0}, misses_{0};
};

/// POST {endpoint}/v1/completions {model, prompt:[...], max_tokens,
/// temperature, seed?} -> {choices:[{index, text}]}. The bearer token is read
/// from TELERAG_API_KEY when set.
class HttpCompletionBackend final : public CompletionBackend {
public:
    explicit HttpCompletionBackend(BackendConfig cfg);
    std::string id() const override { return cfg_.model_id; }

protected:
    std::vector<std::string> do_complete(const CompletionRequest& req) const override;

private:
    BackendConfig cfg_;
    mutable std::counting_semaphore<1024> in_flight_;
};

/// POST {endpoint}/v1/embeddings {model, input:[...]} -> {data:[{index, embedding}]}.
class HttpEmbeddingBackend final : public EmbeddingBackend {
public:
    explicit HttpEmbeddingBackend(BackendConfig cfg);
    std::string id() const override { return cfg_.model_id; }

protected:
    std::vector<Vector> do_embed(std::span<const std::string> texts) const override;

private:
    BackendConfig cfg_;
    mutable std::counting_semaphore<1024> in_flight_;
};

std::shared_ptr<const CompletionBackend> make_completion_backend(const BackendConfig& cfg);
std::shared_ptr<const EmbeddingBackend> make_embedding_backend(const BackendConfig& cfg);

}  // namespace telerag::backend
