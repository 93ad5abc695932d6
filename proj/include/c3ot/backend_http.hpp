#pragma once

#include <chrono>
#include <string>
#include <thread>
#include <utility>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "c3ot/backend.hpp"
#include "c3ot/error.hpp"
#include "c3ot/text.hpp"

namespace c3ot {

struct HttpOptions {
    std::string api_key;
    std::chrono::milliseconds poll_interval{2000};
    std::chrono::seconds timeout{600};
};

/// Chat-completions style HTTP service. `base_url` includes the API prefix,
/// e.g. "http://localhost:8000/v1". Training submits a fine-tuning job and
/// polls it until it settles.
class HttpTransport : public Transport {
public:
    using Options = HttpOptions;

    explicit HttpTransport(std::string base_url, Options options = {})
        : base_url_(std::move(base_url)), options_(std::move(options)) {
        const auto scheme = base_url_.find("://");
        if (scheme == std::string::npos) throw ConfigError("endpoint must be an http(s) URL: " + base_url_);
        const auto slash = base_url_.find('/', scheme + 3);
        host_ = base_url_.substr(0, slash);
        prefix_ = slash == std::string::npos ? "" : base_url_.substr(slash);
        while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    }

    std::string kind() const override { return "http"; }
    std::string endpoint() const override { return base_url_; }

    std::string complete(const std::string& model, const DecodingParams& params,
                         const std::string& prompt) override {
        nlohmann::ordered_json body;
        body["model"] = model;
        body["messages"] = nlohmann::ordered_json::array({{{"role", "user"}, {"content", prompt}}});
        body["temperature"] = params.temperature;
        body["max_tokens"] = params.max_tokens;
        if (!params.stop.empty()) body["stop"] = params.stop;

        auto res = client().Post(prefix_ + "/chat/completions", headers(), body.dump(), "application/json");
        if (!res) throw BackendError("HTTP transport error: " + httplib::to_string(res.error()), true);
        if (res->status == 413 || mentions_context_length(res->body))
            throw OversizePromptError(text::sha256_hex(prompt));
        check_status(*res);
        try {
            const auto j = nlohmann::json::parse(res->body);
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw BackendError(std::string("malformed completion response: ") + e.what(), false);
        }
    }

    std::string train(const std::string& model, const TrainJob& job) override {
        nlohmann::ordered_json body;
        body["model"] = model;
        body["training_file"] = job.dataset_path;
        body["hyperparameters"] = job.hyperparams;
        auto res = client().Post(prefix_ + "/fine_tuning/jobs", headers(), body.dump(), "application/json");
        if (!res) throw BackendError("HTTP transport error: " + httplib::to_string(res.error()), false);
        check_status(*res);
        const auto id = nlohmann::json::parse(res->body).at("id").get<std::string>();

        const auto deadline = std::chrono::steady_clock::now() + options_.timeout;
        for (;;) {
            auto poll = client().Get(prefix_ + "/fine_tuning/jobs/" + id, headers());
            if (poll && poll->status == 200) {
                const auto j = nlohmann::json::parse(poll->body);
                const auto status = j.value("status", "");
                if (status == "succeeded") return j.at("fine_tuned_model").get<std::string>();
                if (status == "failed" || status == "cancelled")
                    throw BackendError("training job " + id + " " + status + ": " +
                                           (j.contains("error") ? j.at("error").dump() : std::string("no diagnostics")),
                                       false);
            }
            if (std::chrono::steady_clock::now() > deadline)
                throw BackendError("training job " + id + " timed out", false);
            std::this_thread::sleep_for(options_.poll_interval);
        }
    }

private:
    httplib::Client client() const {
        httplib::Client c(host_);
        c.set_connection_timeout(10);
        c.set_read_timeout(static_cast<time_t>(options_.timeout.count()));
        return c;
    }

    httplib::Headers headers() const {
        httplib::Headers h;
        if (!options_.api_key.empty()) h.emplace("Authorization", "Bearer " + options_.api_key);
        return h;
    }

    static bool mentions_context_length(const std::string& body) {
        return body.find("context_length_exceeded") != std::string::npos;
    }

    static void check_status(const httplib::Response& res) {
        if (res.status >= 200 && res.status < 300) return;
        const bool retryable = res.status == 429 || res.status >= 500;
        throw BackendError("HTTP " + std::to_string(res.status) + ": " + detail::tail(res.body, 500), retryable);
    }

    std::string base_url_;
    Options options_;
    std::string host_;
    std::string prefix_;
};

} // namespace c3ot
