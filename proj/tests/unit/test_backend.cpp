#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "support/synth.hpp"
#include "telerag/answer.hpp"
#include "telerag/error.hpp"
#include "telerag/backend.hpp"
#include "telerag/prompt.hpp"

using namespace telerag;
using backend::MockCompletionBackend;

namespace {

std::vector<std::string> run(const backend::CompletionBackend& b, std::vector<std::string> prompts) {
    backend::CompletionRequest req;
    req.prompts = std::move(prompts);
    return backend::complete_batch(req, b);
}

std::string four_option_prompt(const std::string& question, const std::vector<std::string>& opts) {
    prompt::McqQuestion q;
    q.question_id = "x";
    q.text = question;
    q.options = opts;
    return prompt::build_phi2_prompt(q, {}, {}, {}).rendered;
}

/// Fails transiently `failures` times, then echoes.
class FlakyBackend : public backend::CompletionBackend {
public:
    FlakyBackend(int failures, int retries) : CompletionBackend(retries), failures_(failures) {}
    std::string id() const override { return "flaky"; }
    mutable int calls = 0;

protected:
    std::vector<std::string> do_complete(const backend::CompletionRequest& req) const override {
        if (calls++ < failures_) throw TransientBackendError("temporarily unavailable");
        return req.prompts;
    }

private:
    int failures_;
};

class ShortBackend : public backend::CompletionBackend {
public:
    std::string id() const override { return "short"; }

protected:
    std::vector<std::string> do_complete(const backend::CompletionRequest& req) const override {
        return std::vector<std::string>(req.prompts.size() - 1, "x");
    }
};

class DriftingEmbedder : public backend::EmbeddingBackend {
public:
    std::string id() const override { return "drift"; }

protected:
    std::vector<backend::Vector> do_embed(std::span<const std::string> texts) const override {
        return std::vector<backend::Vector>(texts.size(), backend::Vector(++calls_ == 1 ? 4 : 5, 1.0f));
    }

private:
    mutable int calls_ = 0;
};

class CountingEmbedder : public backend::EmbeddingBackend {
public:
    std::string id() const override { return "counted"; }
    mutable std::atomic<int> texts_seen{0};

protected:
    std::vector<backend::Vector> do_embed(std::span<const std::string> texts) const override {
        texts_seen += static_cast<int>(texts.size());
        return inner_.embed(texts);
    }

private:
    backend::MockEmbedder inner_{"inner", 32};
};

}  // namespace

TEST(MockScript, AlwaysSlot) {
    const auto m = backend::mock_script_parse("rule\talways-slot\t1\n");
    for (const auto& c : run(m, {"a", "b", four_option_prompt("Q?", {"w", "x", "y", "z"})})) EXPECT_EQ(c, "option 1");
}

TEST(MockScript, TruthTellerNamesGoldSlot) {
    const auto m = backend::mock_script_parse(
        "# planted gold\n"
        "gold\tWhich function handles sessions?\tSMF\n"
        "rule\ttruth\n");
    const auto p1 = four_option_prompt("Which function handles sessions?", {"AMF", "UPF", "SMF", "PCF"});
    const auto p2 = four_option_prompt("Which function handles sessions?", {"SMF", "AMF", "UPF", "PCF"});
    EXPECT_EQ(run(m, {p1, p2}), (std::vector<std::string>{"option 3", "option 1"}));
    // Without option lines the gold text itself is the answer.
    EXPECT_EQ(run(m, {"Which function handles sessions?\n"}).front(), "SMF");
}

TEST(MockScript, DefaultIsUnparsable) {
    const auto m = backend::mock_script_parse("seed\t3\n");
    const auto out = run(m, {"anything at all"});
    EXPECT_EQ(out.front(), "unknown");
    EXPECT_FALSE(answer::parse_option_label(out.front(), 4));
}

TEST(MockScript, ExactThenRulesThenDefault) {
    const auto m = backend::mock_script_parse(
        "default\tno idea\n"
        "exact\tline one\\nline two\tmatched\\texactly\n"
        "rule\tcontains\tpaging\toption 2\n"
        "rule\talways-slot\t4\n");
    EXPECT_EQ(run(m, {"line one\nline two", "about paging", "other"}),
              (std::vector<std::string>{"matched\texactly", "option 2", "option 4"}));
    const auto d = backend::mock_script_parse("default\tno idea\n");
    EXPECT_EQ(run(d, {"other"}).front(), "no idea");
}

TEST(MockScript, DeterministicAndBatchIndependent) {
    const auto m = backend::mock_script_parse("seed\t9\ngold\tQ?\tx\nrule\ttruth\t0.5\t2\n");
    std::vector<std::string> prompts;
    for (int i = 0; i < 20; ++i) {
        std::vector<std::string> opts = {"w", "x", "y", "z"};
        std::rotate(opts.begin(), opts.begin() + i % 4, opts.end());
        prompts.push_back(four_option_prompt("Q?", opts) + std::string(static_cast<std::size_t>(i), ' '));
    }
    const auto batch = run(m, prompts);
    EXPECT_EQ(batch, run(m, prompts));
    for (std::size_t i = 0; i < prompts.size(); ++i) EXPECT_EQ(run(m, {prompts[i]}).front(), batch[i]);
}

TEST(MockScript, MalformedLineReportsLineNumber) {
    const std::vector<std::pair<std::string, std::string>> bad = {
        {"seed\t1\nrule\talways-slot\t0\n", ":2:"},
        {"# c\n\nfrobnicate\tx\n", ":3:"},
        {"rule\ttruth\t1.5\t1\n", ":1:"},
        {"gold\t\tx\n", ":1:"},
        {"seed\tabc\n", ":1:"},
    };
    for (const auto& [script, where] : bad) {
        try {
            backend::mock_script_parse(script, "s.mock");
            FAIL() << script;
        } catch (const Error& e) {
            EXPECT_NE(std::string(e.what()).find("s.mock" + where), std::string::npos) << e.what();
        }
    }
}

TEST(MockScript, LoadFromFile) {
    const auto dir = synth::scratch_dir("mock");
    synth::write_file(dir / "m.mock", "rule\talways-slot\t2\n");
    EXPECT_EQ(run(backend::mock_script_load(dir / "m.mock"), {"p"}).front(), "option 2");
    EXPECT_THROW(backend::mock_script_load(dir / "missing.mock"), Error);
    std::filesystem::remove_all(dir);
}

TEST(CompleteBatch, AlignmentAndErrors) {
    const auto m = backend::mock_script_parse("rule\tcontains\t#7\toption 3\n");
    std::vector<std::string> prompts;
    for (int i = 0; i < 20; ++i) prompts.push_back("prompt #" + std::to_string(i));
    const auto out = run(m, prompts);
    ASSERT_EQ(out.size(), 20u);
    for (int i = 0; i < 20; ++i) EXPECT_EQ(out[static_cast<std::size_t>(i)], i == 7 ? "option 3" : "unknown");
    EXPECT_THROW(run(m, {}), Error);
    EXPECT_THROW(run(ShortBackend(), {"a", "b"}), Error);
}

TEST(CompleteBatch, RetriesTransientFailures) {
    FlakyBackend ok(2, 2);
    EXPECT_EQ(run(ok, {"a", "b"}), (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(ok.calls, 3);
    FlakyBackend exhausted(3, 2);
    try {
        run(exhausted, {"a", "b", "c"});
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("[0, 3)"), std::string::npos) << e.what();
    }
    EXPECT_EQ(exhausted.calls, 3);
}

TEST(MockEmbedderTest, IdenticalTextsAndZeroVector) {
    const backend::MockEmbedder e("bow", 64);
    const std::vector<std::string> texts = {"paging request", "paging request", "", "!!!"};
    const auto v = backend::embed_batch(texts, e);
    EXPECT_EQ(v[0], v[1]);
    EXPECT_EQ(v[2], backend::Vector(64, 0.0f));
    EXPECT_EQ(v[3], backend::Vector(64, 0.0f));
    double norm = 0;
    for (float x : v[0]) norm += static_cast<double>(x) * x;
    EXPECT_NEAR(norm, 1.0, 1e-6);
    EXPECT_EQ(e.dim(), 64u);
}

TEST(MockEmbedderTest, BatchingInvariance) {
    const backend::MockEmbedder e("bow", 48);
    const std::vector<std::string> texts = {"a b c", "the AMF", "", "session management function", "x"};
    const auto together = backend::embed_batch(texts, e);
    for (std::size_t i = 0; i < texts.size(); ++i)
        EXPECT_EQ(together[i], backend::embed_batch(std::span<const std::string>(&texts[i], 1), e).front());
    EXPECT_TRUE(backend::embed_batch({}, e).empty());
}

TEST(EmbedBatch, DimensionDriftIsAnError) {
    DriftingEmbedder d;
    const std::vector<std::string> one = {"a"};
    EXPECT_NO_THROW(d.embed(one));
    EXPECT_THROW(d.embed(one), Error);
}

TEST(CachedEmbedderTest, TransparentAndHits) {
    const auto dir = synth::scratch_dir("cache");
    auto inner = std::make_shared<CountingEmbedder>();
    const std::vector<std::string> texts = {"alpha", "beta", "alpha", "gamma"};
    backend::CachedEmbedder cached(inner, dir);
    const auto first = cached.embed(texts);
    EXPECT_EQ(first, inner->embed(texts));
    const int seen_after_first = inner->texts_seen.load();
    backend::CachedEmbedder again(inner, dir);
    EXPECT_EQ(again.embed(texts), first);
    EXPECT_EQ(inner->texts_seen.load(), seen_after_first);
    EXPECT_EQ(again.hits(), 4u);
    EXPECT_EQ(again.misses(), 0u);
    EXPECT_EQ(again.id(), "counted");
    std::filesystem::remove_all(dir);
}

TEST(BackendConfigTest, JsonRoundTripAndValidation) {
    const auto c = backend::BackendConfig::from_json(
        {{"kind", "http"}, {"endpoint", "http://localhost:1"}, {"model", "m"}, {"retries", 5}},
        backend::Role::generation);
    EXPECT_EQ(c.retry_count, 5);
    const auto back = backend::BackendConfig::from_json(c.to_json(), backend::Role::generation);
    EXPECT_EQ(back.to_json(), c.to_json());
    EXPECT_THROW(backend::BackendConfig::from_json({{"kind", "http"}}, backend::Role::generation), Error);
    EXPECT_THROW(backend::BackendConfig::from_json({{"kind", "carrier-pigeon"}}, backend::Role::generation), Error);
    EXPECT_THROW(backend::role_from_string("judge"), Error);
}

TEST(DisplayedOptions, LastBlockWins) {
    const auto p = four_option_prompt("Q?", {"w", "x", "y", "z"});
    EXPECT_EQ(backend::displayed_options(p), (std::vector<std::string>{"w", "x", "y", "z"}));
    EXPECT_TRUE(backend::displayed_options("no options here").empty());
}

class HttpBackendTest : public ::testing::Test {
protected:
    void SetUp() override {
        server_.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
            if (completion_failures_-- > 0) {
                res.status = 503;
                return;
            }
            last_auth_ = req.get_header_value("Authorization");
            const auto body = nlohmann::json::parse(req.body);
            nlohmann::json choices = nlohmann::json::array();
            const auto& prompts = body.at("prompt");
            // Reverse order on the wire; the client must reorder by index.
            for (std::size_t i = prompts.size(); i-- > 0;)
                choices.push_back({{"index", i}, {"text", "echo:" + prompts[i].get<std::string>()}});
            res.set_content(nlohmann::json{{"choices", choices}}.dump(), "application/json");
        });
        server_.Post("/v1/embeddings", [](const httplib::Request& req, httplib::Response& res) {
            const auto body = nlohmann::json::parse(req.body);
            if (body.at("model") == "reject") {
                res.status = 400;
                res.set_content("bad model", "text/plain");
                return;
            }
            nlohmann::json data = nlohmann::json::array();
            std::size_t i = 0;
            for (const auto& t : body.at("input"))
                data.push_back({{"index", i++}, {"embedding", {static_cast<double>(t.get<std::string>().size()), 1.0}}});
            res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    void TearDown() override {
        server_.stop();
        thread_.join();
    }
    backend::BackendConfig config(const std::string& model, backend::Role role) const {
        backend::BackendConfig c;
        c.kind = "http";
        c.endpoint = "http://127.0.0.1:" + std::to_string(port_);
        c.model_id = model;
        c.timeout_s = 5;
        c.role = role;
        return c;
    }

    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> completion_failures_{0};
    std::string last_auth_;
};

TEST_F(HttpBackendTest, CompletionsAlignedAndRetried) {
    completion_failures_ = 1;
    ::setenv("TELERAG_API_KEY", "sekret", 1);
    const auto b = backend::make_completion_backend(config("gen", backend::Role::generation));
    EXPECT_EQ(run(*b, {"p0", "p1", "p2"}), (std::vector<std::string>{"echo:p0", "echo:p1", "echo:p2"}));
    EXPECT_EQ(last_auth_, "Bearer sekret");
    ::unsetenv("TELERAG_API_KEY");
}

TEST_F(HttpBackendTest, CompletionRetriesExhausted) {
    completion_failures_ = 10;
    auto cfg = config("gen", backend::Role::generation);
    cfg.retry_count = 1;
    EXPECT_THROW(run(*backend::make_completion_backend(cfg), {"p"}), Error);
}

TEST_F(HttpBackendTest, Embeddings) {
    const auto e = backend::make_embedding_backend(config("emb", backend::Role::retrieval_embedding));
    const std::vector<std::string> texts = {"abc", "de"};
    EXPECT_EQ(e->embed(texts), (std::vector<backend::Vector>{{3, 1}, {2, 1}}));
    EXPECT_EQ(e->id(), "emb");
    EXPECT_THROW(backend::make_embedding_backend(config("reject", backend::Role::answer_embedding))->embed(texts),
                 Error);
}

TEST(HttpBackendUnreachable, ConnectionFailureIsReported) {
    backend::BackendConfig c;
    c.kind = "http";
    c.endpoint = "http://127.0.0.1:1";
    c.model_id = "nothing";
    c.timeout_s = 1;
    c.retry_count = 0;
    EXPECT_THROW(run(*backend::make_completion_backend(c), {"p"}), Error);
}
