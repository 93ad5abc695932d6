#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <fstream>
#include <thread>

#include "support.hpp"

using namespace c3ot;
using namespace c3ot::testing;

namespace {

BackendOptions fast_options(std::shared_ptr<CompletionCache> cache = std::make_shared<CompletionCache>()) {
    BackendOptions o;
    o.cache = std::move(cache);
    o.retry = RetryPolicy::immediate(4);
    return o;
}

class SlowTransport : public Transport {
public:
    std::string kind() const override { return "slow"; }
    std::string endpoint() const override { return "slow://"; }
    std::string complete(const std::string&, const DecodingParams&, const std::string& prompt) override {
        const int now = ++in_flight;
        int seen = max_seen.load();
        while (now > seen && !max_seen.compare_exchange_weak(seen, now)) {}
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        --in_flight;
        return "echo " + prompt;
    }
    std::string train(const std::string&, const TrainJob&) override { return "m"; }
    std::atomic<int> in_flight{0}, max_seen{0};
};

std::string write_dataset_file(const TempDir& tmp, const std::string& name, const std::string& body) {
    const auto p = tmp / name;
    std::ofstream(p) << body;
    return p;
}

}  // namespace

TEST(Cache, HitOnIdenticalRequestMissOnDifferentParams) {
    auto mock = std::make_shared<MockTransport>(std::map<std::string, std::string>{}, "out");
    BackendHandle h(mock, "m", {Capability::complete}, {}, fast_options());
    EXPECT_EQ(h.complete("p"), "out");
    EXPECT_EQ(h.complete("p"), "out");
    EXPECT_EQ(mock->calls(), 1);
    DecodingParams hot;
    hot.temperature = 0.7;
    const auto h2 = h.with_params(hot);
    EXPECT_NE(h2.identity(), h.identity());
    h2.complete("p");
    EXPECT_EQ(mock->calls(), 2);
    EXPECT_EQ(h.stats().cache_hits, 1);
    EXPECT_EQ(h.complete("p", /*refresh=*/true), "out");
    EXPECT_EQ(mock->calls(), 3);
}

TEST(Cache, PersistsAcrossHandlesOnDisk) {
    TempDir tmp;
    {
        auto mock = std::make_shared<MockTransport>(std::map<std::string, std::string>{}, "stored");
        BackendHandle h(mock, "m", {Capability::complete}, {}, fast_options(std::make_shared<CompletionCache>(tmp.path())));
        h.complete("prompt one");
    }
    auto mock = std::make_shared<MockTransport>();
    BackendHandle h(mock, "m", {Capability::complete}, {}, fast_options(std::make_shared<CompletionCache>(tmp.path())));
    EXPECT_EQ(h.complete("prompt one"), "stored");
    EXPECT_EQ(mock->calls(), 0);
}

TEST(Cache, CollidingKeyNeverServesAnotherRequest) {
    auto cache = std::make_shared<CompletionCache>(std::nullopt, [](const auto&, const auto&, const auto&) {
        return std::string("same-key");
    });
    cache->put("a", "id", "{}", "for a");
    EXPECT_EQ(cache->get("a", "id", "{}"), "for a");
    EXPECT_FALSE(cache->get("b", "id", "{}"));
    EXPECT_FALSE(cache->get("a", "other", "{}"));
}

TEST(Retry, TransientFailuresAreRetried) {
    auto mock = std::make_shared<MockTransport>(std::map<std::string, std::string>{}, "ok");
    BackendHandle h(mock, "m", {Capability::complete}, {}, fast_options());
    mock->fail_next(3);
    EXPECT_EQ(h.complete("p"), "ok");
    EXPECT_EQ(mock->calls(), 4);
}

TEST(Retry, ExhaustionReportsAttemptsAndDigest) {
    auto mock = std::make_shared<MockTransport>(std::map<std::string, std::string>{}, "ok");
    BackendHandle h(mock, "m", {Capability::complete}, {}, fast_options());
    mock->fail_next(10);
    try {
        h.complete("p");
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_NE(std::string(e.what()).find("4 attempts"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find(text::sha256_hex("p")), std::string::npos);
    }
}

TEST(Retry, NonRetryableFailsImmediately) {
    auto mock = std::make_shared<MockTransport>();
    BackendHandle h(mock, "m", {Capability::complete}, {}, fast_options());
    EXPECT_THROW(h.complete("unknown"), BackendError);
    EXPECT_EQ(mock->calls(), 1);
}

TEST(Concurrency, InFlightBoundedByMaxParallel) {
    auto slow = std::make_shared<SlowTransport>();
    auto o = fast_options();
    o.max_parallel = 3;
    BackendHandle h(slow, "m", {Capability::complete}, {}, o);
    std::vector<std::thread> threads;
    for (int i = 0; i < 12; ++i) threads.emplace_back([&, i] { h.complete("p" + std::to_string(i)); });
    for (auto& t : threads) t.join();
    EXPECT_LE(slow->max_seen.load(), 3);
    EXPECT_GE(slow->max_seen.load(), 2);
}

TEST(Concurrency, RateLimiterSpacesCalls) {
    auto mock = std::make_shared<MockTransport>(std::map<std::string, std::string>{}, "x");
    auto o = fast_options();
    o.rate_per_second = 50;
    BackendHandle h(mock, "m", {Capability::complete}, {}, o);
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < 6; ++i) h.complete("p" + std::to_string(i));
    EXPECT_GE(std::chrono::steady_clock::now() - start, std::chrono::milliseconds(90));
}

TEST(Capabilities, Enforced) {
    BackendHandle h(std::make_shared<MockTransport>(), "m", {Capability::train}, {}, fast_options());
    EXPECT_THROW(h.complete("p"), PreconditionError);
    BackendHandle c(std::make_shared<MockTransport>(), "m", {Capability::complete}, {}, fast_options());
    TrainJob job;
    EXPECT_THROW(c.train(job), PreconditionError);
}

TEST(Train, MemoizedByIdentityDatasetAndHyperparams) {
    TempDir tmp;
    auto mock = std::make_shared<MockTransport>();
    BackendHandle h(mock, "base", {Capability::complete, Capability::train}, {},
                    fast_options(std::make_shared<CompletionCache>(tmp.path() / "cache")));
    TrainJob job{write_dataset_file(tmp, "d.jsonl", R"({"input":"a","target":"b"})" "\n"), {{"lr", 2e-5}}, {}};
    const auto trained = h.train(job);
    EXPECT_EQ(trained.model(), job.output_model_ref);
    EXPECT_TRUE(job.output_model_ref.starts_with("mock-"));
    TrainJob again = job;
    h.train(again);
    EXPECT_EQ(mock->train_calls(), 1);
    EXPECT_EQ(h.stats().train_memo_hits, 1);
    TrainJob other = job;
    other.hyperparams["lr"] = 1e-5;
    h.train(other);
    EXPECT_EQ(mock->train_calls(), 2);
}

TEST(Train, RejectsWrongDatasetShapeAndSurfacesFailure) {
    TempDir tmp;
    auto mock = std::make_shared<MockTransport>();
    BackendHandle h(mock, "base", {Capability::train}, {}, fast_options());
    TrainJob bad{write_dataset_file(tmp, "bad.jsonl", R"({"prompt":"a"})" "\n"), {}, {}};
    EXPECT_THROW(h.train(bad), DataError);
    mock->fail_training(true);
    TrainJob ok{write_dataset_file(tmp, "ok.jsonl", R"({"input":"a","target":"b"})" "\n"), {}, {}};
    EXPECT_THROW(h.train(ok), BackendError);
}

TEST(Subprocess, CompletionAndTraining) {
    TempDir tmp;
    const auto script = tmp / "svc.sh";
    std::ofstream(script) << "#!/bin/sh\n"
                             "read line\n"
                             "case \"$line\" in\n"
                             "  *oversize*) echo '{\"error\":\"oversize\"}' ;;\n"
                             "  *) echo '{\"completion\":\"from script\"}' ;;\n"
                             "esac\n";
    const auto trainer = tmp / "train.sh";
    std::ofstream(trainer) << "#!/bin/sh\n"
                              "test -f \"$1\" || { echo missing dataset >&2; exit 3; }\n"
                              "grep -q fail \"$2\" && { echo 'loss diverged' >&2; exit 1; }\n"
                              "echo progress\n"
                              "echo model-xyz\n";
    fs::permissions(script, fs::perms::owner_all);
    fs::permissions(trainer, fs::perms::owner_all);
    BackendHandle h(std::make_shared<SubprocessTransport>(script, trainer), "m",
                    {Capability::complete, Capability::train}, {}, fast_options());
    EXPECT_EQ(h.complete("hello"), "from script");
    EXPECT_THROW(h.complete("this is oversize"), OversizePromptError);

    TrainJob job{write_dataset_file(tmp, "d.jsonl", R"({"input":"a","target":"b"})" "\n"), {{"epochs", 3}}, {}};
    h.train(job);
    EXPECT_EQ(job.output_model_ref, "model-xyz");
    TrainJob failing = job;
    failing.hyperparams["mode"] = "fail";
    try {
        h.train(failing);
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_NE(std::string(e.what()).find("loss diverged"), std::string::npos);
        EXPECT_FALSE(e.retryable());
    }
}

TEST(Http, ChatCompletionsAndFineTuning) {
    httplib::Server server;
    std::atomic<int> completions{0}, polls{0};
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        if (++completions == 1) {
            res.status = 429;
            return;
        }
        const auto prompt = body.at("messages").at(0).at("content").get<std::string>();
        if (prompt == "huge") {
            res.status = 400;
            res.set_content(R"({"error":{"code":"context_length_exceeded"}})", "application/json");
            return;
        }
        EXPECT_EQ(req.get_header_value("Authorization"), "Bearer k");
        nlohmann::json out = {{"choices", {{{"message", {{"role", "assistant"}, {"content", "re: " + prompt}}}}}}};
        res.set_content(out.dump(), "application/json");
    });
    server.Post("/v1/fine_tuning/jobs", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"id":"job-1","status":"queued"})", "application/json");
    });
    server.Get("/v1/fine_tuning/jobs/job-1", [&](const httplib::Request&, httplib::Response& res) {
        if (++polls < 3) res.set_content(R"({"id":"job-1","status":"running"})", "application/json");
        else res.set_content(R"({"id":"job-1","status":"succeeded","fine_tuned_model":"ft-1"})", "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpTransport::Options ho;
    ho.api_key = "k";
    ho.poll_interval = std::chrono::milliseconds(5);
    BackendHandle h(std::make_shared<HttpTransport>("http://127.0.0.1:" + std::to_string(port) + "/v1", ho), "base",
                    {Capability::complete, Capability::train}, {}, fast_options());
    EXPECT_EQ(h.complete("hi"), "re: hi");
    EXPECT_EQ(completions.load(), 2);
    EXPECT_THROW(h.complete("huge"), OversizePromptError);

    TempDir tmp;
    TrainJob job{write_dataset_file(tmp, "d.jsonl", R"({"input":"a","target":"b"})" "\n"), {}, {}};
    h.train(job);
    EXPECT_EQ(job.output_model_ref, "ft-1");
    server.stop();
    t.join();
}
