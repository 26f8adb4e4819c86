#include "telerag/backend.hpp"

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "telerag/error.hpp"
#include "telerag/hash.hpp"
#include "telerag/rng.hpp"
#include "telerag/text.hpp"

namespace telerag::backend {

std::string_view to_string(Role role) {
    switch (role) {
        case Role::generation: return "generation";
        case Role::retrieval_embedding: return "retrieval_embedding";
        case Role::answer_embedding: return "answer_embedding";
    }
    return "generation";
}

Role role_from_string(std::string_view s) {
    if (s == "generation") return Role::generation;
    if (s == "retrieval_embedding") return Role::retrieval_embedding;
    if (s == "answer_embedding") return Role::answer_embedding;
    throw Error("config", "unknown backend role '" + std::string(s) + "'");
}

nlohmann::json BackendConfig::to_json() const {
    nlohmann::json j = {{"kind", kind},           {"endpoint", endpoint},       {"model", model_id},
                        {"timeout_s", timeout_s}, {"retries", retry_count},     {"max_in_flight", max_in_flight},
                        {"role", to_string(role)}};
    if (!script.empty()) j["script"] = script.string();
    if (kind == "mock-embed") j["dim"] = dim;
    if (!cache_dir.empty()) j["cache_dir"] = cache_dir.string();
    return j;
}

BackendConfig BackendConfig::from_json(const nlohmann::json& j, Role role) {
    BackendConfig c;
    c.role = role;
    c.kind = j.value("kind", std::string("mock"));
    c.endpoint = j.value("endpoint", std::string());
    c.model_id = j.value("model", c.kind == "mock" ? std::string("mock") : std::string("mock-bow"));
    c.timeout_s = j.value("timeout_s", 60.0);
    c.retry_count = j.value("retries", 2);
    c.max_in_flight = j.value("max_in_flight", 4);
    c.script = j.value("script", std::string());
    c.dim = j.value("dim", std::size_t{256});
    c.cache_dir = j.value("cache_dir", std::string());
    if (c.kind != "http" && c.kind != "mock" && c.kind != "mock-embed") {
        throw Error("config", "unknown backend kind '" + c.kind + "'");
    }
    if (c.kind == "http" && c.endpoint.empty()) throw Error("config", "http backend requires an endpoint");
    if (c.retry_count < 0 || c.max_in_flight < 1) throw Error("config", "invalid retries/max_in_flight");
    return c;
}

// ---------------------------------------------------------------------------

std::vector<std::string> CompletionBackend::complete(const CompletionRequest& req) const {
    if (req.prompts.empty()) throw Error("backend", "completion batch is empty");
    if (req.max_new_tokens < 1) throw Error("backend", "max_new_tokens must be at least 1");

    const std::string range = "[0, " + std::to_string(req.prompts.size()) + ")";
    for (int attempt = 0;; ++attempt) {
        try {
            auto out = do_complete(req);
            if (out.size() != req.prompts.size()) {
                throw Error("backend", id() + ": expected " + std::to_string(req.prompts.size()) +
                                           " completions, got " + std::to_string(out.size()));
            }
            return out;
        } catch (const TransientBackendError& e) {
            if (attempt >= retry_count_) {
                throw Error("backend", id() + ": requests " + range + " failed after " +
                                           std::to_string(attempt + 1) + " attempts: " + e.what());
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(50 << std::min(attempt, 6)));
        }
    }
}

std::vector<Vector> EmbeddingBackend::embed(std::span<const std::string> texts) const {
    if (texts.empty()) return {};
    auto out = do_embed(texts);
    if (out.size() != texts.size()) {
        throw Error("backend", id() + ": expected " + std::to_string(texts.size()) + " embeddings, got " +
                                   std::to_string(out.size()));
    }
    const std::size_t d = out.front().size();
    if (d == 0) throw Error("backend", id() + ": zero-dimensional embedding");
    for (const auto& v : out) {
        if (v.size() != d) throw Error("backend", id() + ": embedding dimensions differ within a batch");
    }
    std::size_t expected = 0;
    if (!dim_.compare_exchange_strong(expected, d) && expected != d) {
        throw Error("backend", id() + ": embedding dimension drifted from " + std::to_string(expected) + " to " +
                                   std::to_string(d));
    }
    return out;
}

std::vector<std::string> complete_batch(const CompletionRequest& req, const CompletionBackend& backend) {
    return backend.complete(req);
}

std::vector<Vector> embed_batch(std::span<const std::string> texts, const EmbeddingBackend& backend) {
    return backend.embed(texts);
}

// ---------------------------------------------------------------------------

MockEmbedder::MockEmbedder(std::string model_id, std::size_t dim) : model_id_(std::move(model_id)), dim_(dim) {
    if (dim_ == 0) throw Error("config", "mock embedder dimension must be positive");
}

std::vector<Vector> MockEmbedder::do_embed(std::span<const std::string> texts) const {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
        Vector v(dim_, 0.0f);
        std::string token;
        auto flush = [&] {
            if (token.empty()) return;
            const auto h = fnv1a64(token);
            v[h % dim_] += (h >> 63) ? -1.0f : 1.0f;
            token.clear();
        };
        for (char c : t) {
            if (std::isalnum(static_cast<unsigned char>(c))) {
                token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            } else {
                flush();
            }
        }
        flush();
        double norm = 0.0;
        for (float x : v) norm += static_cast<double>(x) * x;
        if (norm > 0.0) {
            const float inv = static_cast<float>(1.0 / std::sqrt(norm));
            for (auto& x : v) x *= inv;
        }
        out.push_back(std::move(v));
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> displayed_options(std::string_view prompt) {
    std::vector<std::string> best, current;
    for (auto line : text::split_lines(prompt)) {
        const std::string expected = "option " + std::to_string(current.size() + 1) + ": ";
        if (line.starts_with(expected)) {
            current.emplace_back(line.substr(expected.size()));
            continue;
        }
        if (!current.empty()) best = std::move(current);
        current.clear();
        const std::string first = "option 1: ";
        if (line.starts_with(first)) current.emplace_back(line.substr(first.size()));
    }
    if (!current.empty()) best = std::move(current);
    return best;
}

std::string MockCompletionBackend::respond(std::string_view prompt) const {
    for (const auto& [p, r] : exact) {
        if (p == prompt) return r;
    }
    for (const auto& rule : rules) {
        switch (rule.kind) {
            case Rule::Kind::always_slot:
                return "option " + std::to_string(rule.slot);
            case Rule::Kind::contains:
                if (prompt.find(rule.needle) != std::string_view::npos) return rule.response;
                break;
            case Rule::Kind::truth: {
                const Gold* match = nullptr;
                for (const auto& g : golds) {
                    if (prompt.find(g.question) != std::string_view::npos &&
                        (!match || g.question.size() > match->question.size())) {
                        match = &g;
                    }
                }
                if (!match) break;
                const bool correct =
                    rule.accuracy >= 1.0 || Rng::derive(seed, {"mock", prompt}).unit() < rule.accuracy;
                const auto opts = displayed_options(prompt);
                if (opts.empty()) return correct ? match->answer : default_response;
                if (!correct) return "option " + std::to_string(rule.slot);
                for (std::size_t i = 0; i < opts.size(); ++i) {
                    if (opts[i] == match->answer) return "option " + std::to_string(i + 1);
                }
                break;
            }
        }
    }
    return default_response;
}

std::vector<std::string> MockCompletionBackend::do_complete(const CompletionRequest& req) const {
    std::vector<std::string> out;
    out.reserve(req.prompts.size());
    for (const auto& p : req.prompts) out.push_back(respond(p));
    return out;
}

namespace {

std::vector<std::string> split_tabs(std::string_view line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        fields.push_back(text::unescape_line(line.substr(start, tab - start)));
        if (tab == std::string_view::npos) break;
        start = tab + 1;
    }
    return fields;
}

}  // namespace

MockCompletionBackend mock_script_parse(std::string_view script, std::string_view source_name) {
    MockCompletionBackend mock;
    std::size_t lineno = 0;
    for (auto raw : text::split_lines(script)) {
        ++lineno;
        std::string_view line = raw;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (text::trim(line).empty() || text::trim(line).front() == '#') continue;
        const auto f = split_tabs(line);
        auto fail = [&](const std::string& why) -> Error {
            return Error("mock_script", std::string(source_name) + ":" + std::to_string(lineno) + ": " + why);
        };
        auto parse_slot = [&](const std::string& s) {
            try {
                const long v = std::stol(s);
                if (v < 1) throw fail("slot must be >= 1");
                return static_cast<std::size_t>(v);
            } catch (const std::logic_error&) {
                throw fail("invalid slot '" + s + "'");
            }
        };
        const auto& directive = f[0];
        if (directive == "seed" && f.size() == 2) {
            try {
                mock.seed = std::stoull(f[1]);
            } catch (const std::logic_error&) {
                throw fail("invalid seed '" + f[1] + "'");
            }
        } else if (directive == "default" && f.size() == 2) {
            mock.default_response = f[1];
        } else if (directive == "exact" && f.size() == 3) {
            mock.exact.emplace_back(f[1], f[2]);
        } else if (directive == "gold" && f.size() == 3) {
            if (f[1].empty()) throw fail("gold question must be non-empty");
            mock.golds.push_back({f[1], f[2]});
        } else if (directive == "rule" && f.size() >= 2) {
            MockCompletionBackend::Rule r{};
            if (f[1] == "always-slot" && f.size() == 3) {
                r.kind = MockCompletionBackend::Rule::Kind::always_slot;
                r.slot = parse_slot(f[2]);
            } else if (f[1] == "truth" && (f.size() == 2 || f.size() == 4)) {
                r.kind = MockCompletionBackend::Rule::Kind::truth;
                if (f.size() == 4) {
                    try {
                        r.accuracy = std::stod(f[2]);
                    } catch (const std::logic_error&) {
                        throw fail("invalid accuracy '" + f[2] + "'");
                    }
                    if (!(r.accuracy >= 0.0 && r.accuracy <= 1.0)) throw fail("accuracy must be in [0, 1]");
                    r.slot = parse_slot(f[3]);
                }
            } else if (f[1] == "contains" && f.size() == 4) {
                r.kind = MockCompletionBackend::Rule::Kind::contains;
                r.needle = f[2];
                r.response = f[3];
            } else {
                throw fail("malformed rule");
            }
            mock.rules.push_back(std::move(r));
        } else {
            throw fail("unrecognised directive '" + directive + "'");
        }
    }
    return mock;
}

MockCompletionBackend mock_script_load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io", "cannot read mock script: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return mock_script_parse(ss.str(), path.string());
}

// ---------------------------------------------------------------------------

CachedEmbedder::CachedEmbedder(std::shared_ptr<const EmbeddingBackend> inner, std::filesystem::path dir)
    : inner_(std::move(inner)), dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

namespace {

std::optional<Vector> read_vector(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return std::nullopt;
    std::uint32_t n = 0;
    if (!in.read(reinterpret_cast<char*>(&n), sizeof n)) return std::nullopt;
    Vector v(n);
    if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)))) {
        return std::nullopt;
    }
    return v;
}

void write_vector(const std::filesystem::path& p, const Vector& v) {
    auto tmp = p;
    tmp += ".tmp." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
        std::ofstream out(tmp, std::ios::binary);
        const auto n = static_cast<std::uint32_t>(v.size());
        out.write(reinterpret_cast<const char*>(&n), sizeof n);
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
        if (!out) return;
    }
    std::filesystem::rename(tmp, p);
}

}  // namespace

std::vector<Vector> CachedEmbedder::do_embed(std::span<const std::string> texts) const {
    std::vector<Vector> out(texts.size());
    std::vector<std::size_t> missing;
    std::vector<std::filesystem::path> paths(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        paths[i] = dir_ / (sha256_hex(inner_->id() + '\0' + texts[i]) + ".f32");
        if (auto v = read_vector(paths[i])) {
            out[i] = std::move(*v);
            ++hits_;
        } else {
            missing.push_back(i);
        }
    }
    if (!missing.empty()) {
        std::vector<std::string> batch;
        batch.reserve(missing.size());
        for (auto i : missing) batch.push_back(texts[i]);
        auto fresh = inner_->embed(batch);
        for (std::size_t j = 0; j < missing.size(); ++j) {
            write_vector(paths[missing[j]], fresh[j]);
            out[missing[j]] = std::move(fresh[j]);
        }
        misses_ += missing.size();
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

struct ParsedUrl {
    std::string scheme_host_port;
    std::string base_path;
};

ParsedUrl split_endpoint(const std::string& endpoint) {
    const auto scheme = endpoint.find("://");
    const auto path_start = endpoint.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (path_start == std::string::npos) return {endpoint, ""};
    auto base = endpoint.substr(path_start);
    while (!base.empty() && base.back() == '/') base.pop_back();
    return {endpoint.substr(0, path_start), base};
}

nlohmann::json post_json(const BackendConfig& cfg, const std::string& route, const nlohmann::json& body) {
    const auto url = split_endpoint(cfg.endpoint);
    httplib::Client client(url.scheme_host_port);
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(cfg.timeout_s));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (const char* key = std::getenv("TELERAG_API_KEY"); key && *key) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    auto res = client.Post(url.base_path + route, headers, body.dump(), "application/json");
    if (!res) {
        throw TransientBackendError(cfg.endpoint + route + ": " + httplib::to_string(res.error()));
    }
    if (res->status >= 500 || res->status == 429) {
        throw TransientBackendError(cfg.endpoint + route + ": HTTP " + std::to_string(res->status));
    }
    if (res->status != 200) {
        throw Error("backend", cfg.endpoint + route + ": HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw Error("backend", cfg.endpoint + route + ": malformed response: " + e.what());
    }
}

/// Releases a semaphore slot on scope exit.
class SlotGuard {
public:
    explicit SlotGuard(std::counting_semaphore<1024>& s) : s_(s) { s_.acquire(); }
    ~SlotGuard() { s_.release(); }
    SlotGuard(const SlotGuard&) = delete;
    SlotGuard& operator=(const SlotGuard&) = delete;

private:
    std::counting_semaphore<1024>& s_;
};

}  // namespace

HttpCompletionBackend::HttpCompletionBackend(BackendConfig cfg)
    : CompletionBackend(cfg.retry_count), cfg_(std::move(cfg)), in_flight_(std::min(cfg_.max_in_flight, 1024)) {}

std::vector<std::string> HttpCompletionBackend::do_complete(const CompletionRequest& req) const {
    nlohmann::json body = {{"model", req.model.empty() ? cfg_.model_id : req.model},
                           {"prompt", req.prompts},
                           {"max_tokens", req.max_new_tokens},
                           {"temperature", req.temperature}};
    if (req.seed) body["seed"] = *req.seed;

    nlohmann::json res;
    {
        SlotGuard slot(in_flight_);
        res = post_json(cfg_, "/v1/completions", body);
    }
    std::vector<std::string> out(req.prompts.size());
    std::vector<bool> filled(req.prompts.size(), false);
    try {
        const auto& choices = res.at("choices");
        if (choices.size() != req.prompts.size()) {
            throw Error("backend", cfg_.model_id + ": expected " + std::to_string(req.prompts.size()) +
                                       " choices, got " + std::to_string(choices.size()));
        }
        for (std::size_t i = 0; i < choices.size(); ++i) {
            const auto idx = choices[i].value("index", i);
            if (idx >= out.size() || filled[idx]) throw Error("backend", cfg_.model_id + ": bad choice index");
            out[idx] = choices[i].at("text").get<std::string>();
            filled[idx] = true;
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("backend", cfg_.model_id + ": malformed completion response: " + e.what());
    }
    return out;
}

HttpEmbeddingBackend::HttpEmbeddingBackend(BackendConfig cfg)
    : cfg_(std::move(cfg)), in_flight_(std::min(cfg_.max_in_flight, 1024)) {}

std::vector<Vector> HttpEmbeddingBackend::do_embed(std::span<const std::string> texts) const {
    const nlohmann::json body = {{"model", cfg_.model_id}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
    nlohmann::json res;
    for (int attempt = 0;; ++attempt) {
        try {
            SlotGuard slot(in_flight_);
            res = post_json(cfg_, "/v1/embeddings", body);
            break;
        } catch (const TransientBackendError& e) {
            if (attempt >= cfg_.retry_count) {
                throw Error("backend", cfg_.model_id + ": embedding request failed after " +
                                           std::to_string(attempt + 1) + " attempts: " + e.what());
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(50 << std::min(attempt, 6)));
        }
    }
    std::vector<Vector> out(texts.size());
    try {
        const auto& data = res.at("data");
        if (data.size() != texts.size()) {
            throw Error("backend", cfg_.model_id + ": expected " + std::to_string(texts.size()) +
                                       " embeddings, got " + std::to_string(data.size()));
        }
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto idx = data[i].value("index", i);
            if (idx >= out.size()) throw Error("backend", cfg_.model_id + ": bad embedding index");
            out[idx] = data[i].at("embedding").get<Vector>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("backend", cfg_.model_id + ": malformed embedding response: " + e.what());
    }
    return out;
}

std::shared_ptr<const CompletionBackend> make_completion_backend(const BackendConfig& cfg) {
    if (cfg.kind == "http") return std::make_shared<HttpCompletionBackend>(cfg);
    if (cfg.kind == "mock") {
        if (cfg.script.empty()) return std::make_shared<MockCompletionBackend>();
        return std::make_shared<MockCompletionBackend>(mock_script_load(cfg.script));
    }
    throw Error("config", "backend kind '" + cfg.kind + "' cannot serve completions");
}

std::shared_ptr<const EmbeddingBackend> make_embedding_backend(const BackendConfig& cfg) {
    std::shared_ptr<const EmbeddingBackend> b;
    if (cfg.kind == "http") b = std::make_shared<HttpEmbeddingBackend>(cfg);
    else if (cfg.kind == "mock-embed") b = std::make_shared<MockEmbedder>(cfg.model_id, cfg.dim);
    else throw Error("config", "backend kind '" + cfg.kind + "' cannot serve embeddings");
    if (!cfg.cache_dir.empty()) b = std::make_shared<CachedEmbedder>(b, cfg.cache_dir);
    return b;
}

}  // namespace telerag::backend
