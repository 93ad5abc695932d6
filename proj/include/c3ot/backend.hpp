#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "c3ot/error.hpp"
#include "c3ot/text.hpp"

namespace c3ot {

namespace fs = std::filesystem;

/// Decoding parameters sent with every completion. Defaults are greedy.
struct DecodingParams {
    double temperature = 0.0;
    int max_tokens = 512;
    std::vector<std::string> stop = {"\n\n"};

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["temperature"] = temperature;
        j["max_tokens"] = max_tokens;
        j["stop"] = stop;
        return j;
    }

    static DecodingParams from_json(const nlohmann::json& j) {
        DecodingParams p;
        p.temperature = j.value("temperature", p.temperature);
        p.max_tokens = j.value("max_tokens", p.max_tokens);
        if (j.contains("stop")) p.stop = j.at("stop").get<std::vector<std::string>>();
        return p;
    }

    friend bool operator==(const DecodingParams&, const DecodingParams&) = default;
};

enum class Capability { complete, train };

struct RetryPolicy {
    int max_attempts = 4;
    std::chrono::milliseconds initial_backoff{200};
    double multiplier = 2.0;
    std::chrono::milliseconds max_backoff{5000};

    static RetryPolicy immediate(int attempts) {
        return {attempts, std::chrono::milliseconds{0}, 1.0, std::chrono::milliseconds{0}};
    }
};

/// An SFT request handed to an external trainer. Hyperparameters are recorded
/// verbatim and never interpreted here.
struct TrainJob {
    std::string dataset_path;
    nlohmann::ordered_json hyperparams = nlohmann::ordered_json::object();
    std::string output_model_ref;
};

/// Oversize prompt reported by the backend; never retried.
class OversizePromptError : public BackendError {
public:
    explicit OversizePromptError(const std::string& prompt_digest)
        : BackendError("prompt too large for backend (prompt digest " + prompt_digest + ")", false),
          prompt_digest_(prompt_digest) {}
    const std::string& prompt_digest() const noexcept { return prompt_digest_; }

private:
    std::string prompt_digest_;
};

/// Wire-level access to one external service. Implementations throw
/// BackendError; the retry loop lives in BackendHandle.
class Transport {
public:
    virtual ~Transport() = default;
    virtual std::string kind() const = 0;
    /// Endpoint URL or command line; part of the handle identity.
    virtual std::string endpoint() const = 0;
    virtual std::string complete(const std::string& model, const DecodingParams& params,
                                 const std::string& prompt) = 0;
    virtual std::string train(const std::string& model, const TrainJob& job) = 0;
};

// ---------------------------------------------------------------------------

/// Content-addressed completion store. Key = hash(prompt digest, backend
/// identity, decoding params). Entries carry the full triple and are only
/// returned when all three match, so a key collision can never serve a
/// completion for a different request.
class CompletionCache {
public:
    using KeyFunction = std::function<std::string(const std::string& prompt_digest,
                                                  const std::string& identity,
                                                  const std::string& params)>;

    static std::string default_key(const std::string& prompt_digest, const std::string& identity,
                                   const std::string& params) {
        return text::sha256_hex(prompt_digest + '\n' + identity + '\n' + params);
    }

    explicit CompletionCache(std::optional<fs::path> dir = std::nullopt,
                             KeyFunction key_fn = default_key)
        : dir_(std::move(dir)), key_fn_(std::move(key_fn)) {
        if (dir_) fs::create_directories(*dir_);
    }

    const std::optional<fs::path>& directory() const noexcept { return dir_; }

    std::optional<std::string> get(const std::string& prompt, const std::string& identity,
                                   const std::string& params) const {
        const auto digest = text::sha256_hex(prompt);
        const auto key = key_fn_(digest, identity, params);
        std::optional<nlohmann::json> entry;
        {
            std::shared_lock lock(mutex_);
            if (auto it = memory_.find(key); it != memory_.end()) entry = it->second;
        }
        if (!entry && dir_) {
            const auto path = entry_path("completions", key);
            if (fs::exists(path)) {
                try {
                    entry = nlohmann::json::parse(text::read_file(path.string()));
                } catch (const std::exception&) {
                    return std::nullopt;
                }
                std::unique_lock lock(mutex_);
                memory_.emplace(key, *entry);
            }
        }
        if (!entry) return std::nullopt;
        if (entry->value("prompt_digest", "") != digest || entry->value("identity", "") != identity ||
            entry->value("params", "") != params)
            return std::nullopt;
        return entry->at("completion").get<std::string>();
    }

    void put(const std::string& prompt, const std::string& identity, const std::string& params,
             const std::string& completion) {
        const auto digest = text::sha256_hex(prompt);
        const auto key = key_fn_(digest, identity, params);
        nlohmann::ordered_json entry;
        entry["key"] = key;
        entry["prompt_digest"] = digest;
        entry["identity"] = identity;
        entry["params"] = params;
        entry["completion"] = completion;
        {
            std::unique_lock lock(mutex_);
            memory_[key] = nlohmann::json(entry);
        }
        if (dir_) write_atomic(entry_path("completions", key), entry.dump(2) + "\n");
    }

    std::optional<std::string> get_train(const std::string& key) const {
        {
            std::shared_lock lock(mutex_);
            if (auto it = trains_.find(key); it != trains_.end()) return it->second;
        }
        if (!dir_) return std::nullopt;
        const auto path = entry_path("train", key);
        if (!fs::exists(path)) return std::nullopt;
        const auto j = nlohmann::json::parse(text::read_file(path.string()));
        auto ref = j.at("output_model_ref").get<std::string>();
        std::unique_lock lock(mutex_);
        trains_[key] = ref;
        return ref;
    }

    void put_train(const std::string& key, const nlohmann::ordered_json& record) {
        {
            std::unique_lock lock(mutex_);
            trains_[key] = record.at("output_model_ref").get<std::string>();
        }
        if (dir_) write_atomic(entry_path("train", key), record.dump(2) + "\n");
    }

private:
    fs::path entry_path(const char* ns, const std::string& key) const {
        return *dir_ / ns / key.substr(0, 2) / (key + ".json");
    }

    // Readers never observe a partial entry: write a unique temp file, rename.
    static void write_atomic(const fs::path& path, const std::string& content) {
        fs::create_directories(path.parent_path());
        static std::atomic<unsigned long> counter{0};
        auto tmp = path;
        tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw Error("cannot write cache entry " + tmp.string());
            out << content;
        }
        fs::rename(tmp, path);
    }

    std::optional<fs::path> dir_;
    KeyFunction key_fn_;
    mutable std::shared_mutex mutex_;
    mutable std::map<std::string, nlohmann::json> memory_;
    mutable std::map<std::string, std::string> trains_;
};

/// Token bucket. A rate of zero disables limiting.
class RateLimiter {
public:
    RateLimiter(double per_second = 0.0, double burst = 1.0)
        : rate_(per_second), burst_(std::max(1.0, burst)), tokens_(burst_),
          last_(std::chrono::steady_clock::now()) {}

    void acquire() {
        if (rate_ <= 0.0) return;
        std::unique_lock lock(mutex_);
        for (;;) {
            const auto now = std::chrono::steady_clock::now();
            const std::chrono::duration<double> dt = now - last_;
            tokens_ = std::min(burst_, tokens_ + dt.count() * rate_);
            last_ = now;
            if (tokens_ >= 1.0) {
                tokens_ -= 1.0;
                return;
            }
            const auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
            lock.unlock();
            std::this_thread::sleep_for(wait);
            lock.lock();
        }
    }

private:
    double rate_;
    double burst_;
    double tokens_;
    std::chrono::steady_clock::time_point last_;
    std::mutex mutex_;
};

struct BackendOptions {
    std::shared_ptr<CompletionCache> cache;
    RetryPolicy retry;
    int max_parallel = 8;
    double rate_per_second = 0.0;
    double burst = 1.0;
    std::optional<fs::path> transcript;
};

struct BackendStats {
    long completion_calls = 0;  // transport round-trips, including retries
    long cache_hits = 0;
    long cache_misses = 0;
    long train_calls = 0;
    long train_memo_hits = 0;
};

/// A configured view of one backend: transport + model + decoding params.
/// Copies share the cache, limiter, counters and train serialization.
class BackendHandle {
public:
    BackendHandle() = default;

    BackendHandle(std::shared_ptr<Transport> transport, std::string model,
                  std::set<Capability> capabilities, DecodingParams params = {},
                  BackendOptions options = {})
        : transport_(std::move(transport)), model_(std::move(model)),
          capabilities_(std::move(capabilities)), params_(std::move(params)),
          shared_(std::make_shared<Shared>(std::move(options))) {
        refresh_identity();
    }

    const std::string& identity() const noexcept { return identity_; }
    const std::string& model() const noexcept { return model_; }
    const DecodingParams& params() const noexcept { return params_; }
    const std::set<Capability>& capabilities() const noexcept { return capabilities_; }
    bool can(Capability c) const { return capabilities_.count(c) > 0; }
    Transport& transport() const { return *transport_; }
    const std::shared_ptr<CompletionCache>& cache() const { return shared_->options.cache; }

    BackendStats stats() const {
        return {shared_->completion_calls.load(), shared_->cache_hits.load(),
                shared_->cache_misses.load(), shared_->train_calls.load(),
                shared_->train_memo_hits.load()};
    }

    BackendHandle with_params(DecodingParams params) const {
        BackendHandle h = *this;
        h.params_ = std::move(params);
        h.refresh_identity();
        return h;
    }

    BackendHandle with_model(std::string model) const {
        BackendHandle h = *this;
        h.model_ = std::move(model);
        h.refresh_identity();
        return h;
    }

    /// Completion with cache lookup, retries and rate limiting. `refresh`
    /// skips the cache read (the result is still written).
    std::string complete(const std::string& prompt, bool refresh = false) const {
        if (!can(Capability::complete))
            throw PreconditionError("backend " + identity_ + " lacks the complete capability");
        const std::string params = params_.to_json().dump();
        auto& cache = shared_->options.cache;
        if (cache && !refresh) {
            if (auto hit = cache->get(prompt, identity_, params)) {
                ++shared_->cache_hits;
                log(prompt, *hit, true);
                return *hit;
            }
        }
        ++shared_->cache_misses;
        const std::string completion = with_retries([&] {
            shared_->limiter.acquire();
            ++shared_->completion_calls;
            return transport_->complete(model_, params_, prompt);
        }, prompt);
        if (cache) cache->put(prompt, identity_, params, completion);
        log(prompt, completion, false);
        return completion;
    }

    /// Delegates SFT to the external trainer and returns a handle serving the
    /// trained model. Identical (identity, dataset bytes, hyperparams) reuse a
    /// memoized model reference.
    BackendHandle train(TrainJob& job) const {
        if (!can(Capability::train))
            throw PreconditionError("backend " + identity_ + " lacks the train capability");
        check_dataset(job.dataset_path);
        const auto dataset_digest = text::file_digest(job.dataset_path);
        const auto memo_key =
            text::sha256_hex(identity_ + '\n' + dataset_digest + '\n' + job.hyperparams.dump());
        auto& cache = shared_->options.cache;
        if (cache) {
            if (auto ref = cache->get_train(memo_key)) {
                ++shared_->train_memo_hits;
                job.output_model_ref = *ref;
                return with_model(*ref);
            }
        }
        std::string ref;
        {
            std::lock_guard lock(shared_->train_mutex);
            ++shared_->train_calls;
            ref = transport_->train(model_, job);
        }
        if (text::is_blank(ref)) throw BackendError("trainer returned an empty model reference", false);
        job.output_model_ref = ref;
        if (cache) {
            nlohmann::ordered_json rec;
            rec["identity"] = identity_;
            rec["dataset_digest"] = dataset_digest;
            rec["hyperparams"] = job.hyperparams;
            rec["output_model_ref"] = ref;
            cache->put_train(memo_key, rec);
        }
        return with_model(ref);
    }

private:
    struct Shared {
        explicit Shared(BackendOptions o)
            : options(std::move(o)), limiter(options.rate_per_second, options.burst),
              slots(std::max(1, options.max_parallel)) {}
        BackendOptions options;
        RateLimiter limiter;
        std::counting_semaphore<4096> slots;
        std::atomic<long> completion_calls{0}, cache_hits{0}, cache_misses{0}, train_calls{0},
            train_memo_hits{0};
        std::mutex train_mutex;
        std::mutex transcript_mutex;
    };

    struct SlotGuard {
        explicit SlotGuard(std::counting_semaphore<4096>& s) : sem(s) { sem.acquire(); }
        ~SlotGuard() { sem.release(); }
        std::counting_semaphore<4096>& sem;
    };

    void refresh_identity() {
        nlohmann::ordered_json j;
        j["kind"] = transport_ ? transport_->kind() : "";
        j["endpoint"] = transport_ ? transport_->endpoint() : "";
        j["model"] = model_;
        j["params"] = params_.to_json();
        identity_ = (transport_ ? transport_->kind() : std::string("none")) + ":" + model_ + "@" +
                    text::sha256_hex(j.dump()).substr(0, 12);
    }

    template <typename F>
    std::string with_retries(F&& call, const std::string& prompt) const {
        const auto& policy = shared_->options.retry;
        auto backoff = policy.initial_backoff;
        std::string last_error;
        const int attempts = std::max(1, policy.max_attempts);
        for (int attempt = 1; attempt <= attempts; ++attempt) {
            try {
                SlotGuard slot(shared_->slots);
                return call();
            } catch (const OversizePromptError&) {
                throw;
            } catch (const BackendError& e) {
                if (!e.retryable())
                    throw BackendError("non-retryable backend error from " + identity_ + ": " +
                                           e.what(),
                                       false);
                last_error = e.what();
            }
            if (attempt < attempts && backoff.count() > 0) {
                std::this_thread::sleep_for(backoff);
                backoff = std::min(policy.max_backoff,
                                   std::chrono::milliseconds(static_cast<long>(
                                       static_cast<double>(backoff.count()) * policy.multiplier)));
            }
        }
        throw BackendError("backend " + identity_ + " failed after " + std::to_string(attempts) +
                               " attempts (prompt digest " + text::sha256_hex(prompt) +
                               "): " + last_error,
                           false);
    }

    static void check_dataset(const std::string& path) {
        if (!fs::exists(path)) throw PreconditionError("training dataset not found: " + path);
        std::ifstream in(path);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (text::is_blank(line)) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::parse_error&) {
                throw DataError(path + ": line " + std::to_string(lineno) + " is not JSON");
            }
            if (!j.is_object() || !j.contains("input") || !j.contains("target"))
                throw DataError(path + ": line " + std::to_string(lineno) +
                                " is not an (input, target) record");
        }
    }

    void log(const std::string& prompt, const std::string& completion, bool cached) const {
        if (!shared_->options.transcript) return;
        nlohmann::ordered_json j;
        j["identity"] = identity_;
        j["prompt_digest"] = text::sha256_hex(prompt);
        j["cached"] = cached;
        j["prompt"] = prompt;
        j["completion"] = completion;
        std::lock_guard lock(shared_->transcript_mutex);
        fs::create_directories(shared_->options.transcript->parent_path());
        std::ofstream out(*shared_->options.transcript, std::ios::app);
        out << j.dump() << '\n';
    }

    std::shared_ptr<Transport> transport_;
    std::string model_;
    std::set<Capability> capabilities_;
    DecodingParams params_;
    std::shared_ptr<Shared> shared_;
    std::string identity_;
};

inline std::string complete(const BackendHandle& handle, const std::string& prompt) {
    return handle.complete(prompt);
}

inline BackendHandle train(const BackendHandle& handle, TrainJob& job) { return handle.train(job); }

// ---------------------------------------------------------------------------

/// Fixture-table backend for tests and offline runs. The trainer returns a
/// reference derived from the dataset bytes.
class MockTransport : public Transport {
public:
    explicit MockTransport(std::map<std::string, std::string> fixtures = {},
                           std::optional<std::string> fallback = std::nullopt)
        : fixtures_(std::move(fixtures)), fallback_(std::move(fallback)) {}

    std::string kind() const override { return "mock"; }
    std::string endpoint() const override { return "mock://fixtures"; }

    std::string complete(const std::string&, const DecodingParams&,
                         const std::string& prompt) override {
        ++calls_;
        if (transient_failures_ > 0) {
            --transient_failures_;
            throw BackendError("mock transient failure", true);
        }
        std::lock_guard lock(mutex_);
        if (auto it = fixtures_.find(prompt); it != fixtures_.end()) return it->second;
        if (fallback_) return *fallback_;
        throw BackendError("no fixture for prompt " + text::sha256_hex(prompt), false);
    }

    std::string train(const std::string&, const TrainJob& job) override {
        ++train_calls_;
        if (fail_training_) throw BackendError("mock trainer failure", false);
        return "mock-" + text::file_digest(job.dataset_path).substr(0, 16);
    }

    void set_fixture(const std::string& prompt, std::string completion) {
        std::lock_guard lock(mutex_);
        fixtures_[prompt] = std::move(completion);
    }
    void fail_next(int n) { transient_failures_ = n; }
    void fail_training(bool on) { fail_training_ = on; }
    int calls() const { return calls_.load(); }
    int train_calls() const { return train_calls_.load(); }

private:
    std::mutex mutex_;
    std::map<std::string, std::string> fixtures_;
    std::optional<std::string> fallback_;
    std::atomic<int> calls_{0};
    std::atomic<int> train_calls_{0};
    std::atomic<int> transient_failures_{0};
    std::atomic<bool> fail_training_{false};
};

// ---------------------------------------------------------------------------

namespace detail {

inline std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'')
            out += "'\\''";
        else
            out += c;
    }
    return out + "'";
}

inline fs::path unique_temp(const std::string& stem) {
    static std::atomic<unsigned long> counter{0};
    return fs::temp_directory_path() /
           (stem + "." + std::to_string(::getpid()) + "." + std::to_string(counter++));
}

struct ProcessResult {
    int exit_code = 0;
    std::string out;
    std::string err;
};

inline ProcessResult run_process(const std::string& command, const std::string& stdin_data) {
    const auto in_path = unique_temp("c3ot-in");
    const auto err_path = unique_temp("c3ot-err");
    {
        std::ofstream in(in_path, std::ios::binary);
        in << stdin_data;
    }
    const std::string full = command + " < " + shell_quote(in_path.string()) + " 2> " +
                             shell_quote(err_path.string());
    ProcessResult r;
    FILE* pipe = ::popen(full.c_str(), "r");
    if (!pipe) {
        fs::remove(in_path);
        throw BackendError("cannot spawn: " + command, true);
    }
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    const int status = ::pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    if (fs::exists(err_path)) r.err = text::read_file(err_path.string());
    fs::remove(in_path);
    fs::remove(err_path);
    return r;
}

inline std::string last_line(const std::string& s) {
    std::istringstream in(s);
    std::string line, last;
    while (std::getline(in, line))
        if (!text::is_blank(line)) last = line;
    return text::trim(last);
}

inline std::string tail(const std::string& s, std::size_t max_bytes = 2000) {
    return s.size() <= max_bytes ? s : s.substr(s.size() - max_bytes);
}

} // namespace detail

/// Runs external commands. Completion: one JSON request line on stdin, one
/// JSON response line ({"completion": ...} or {"error": ..., "retryable": ...})
/// on stdout. Training: `<train_command> <dataset> <hyperparams.json>`, model
/// reference on the final stdout line.
class SubprocessTransport : public Transport {
public:
    SubprocessTransport(std::string complete_command, std::string train_command = {})
        : complete_command_(std::move(complete_command)), train_command_(std::move(train_command)) {}

    std::string kind() const override { return "subprocess"; }
    std::string endpoint() const override {
        return text::sha256_hex(complete_command_ + '\n' + train_command_).substr(0, 16);
    }

    std::string complete(const std::string& model, const DecodingParams& params,
                         const std::string& prompt) override {
        if (complete_command_.empty()) throw BackendError("no completion command configured", false);
        nlohmann::ordered_json req;
        req["op"] = "complete";
        req["model"] = model;
        req["prompt"] = prompt;
        const auto decoding = params.to_json();
        for (const auto& [k, v] : decoding.items()) req[k] = v;
        const auto r = detail::run_process(complete_command_, req.dump() + "\n");
        if (r.exit_code != 0)
            throw BackendError("completion command exited " + std::to_string(r.exit_code) + ": " +
                                   detail::tail(r.err, 500),
                               true);
        nlohmann::json resp;
        try {
            resp = nlohmann::json::parse(detail::last_line(r.out));
        } catch (const nlohmann::json::parse_error&) {
            throw BackendError("completion command produced no JSON response", false);
        }
        if (resp.contains("error")) {
            const auto err = resp.at("error").get<std::string>();
            if (err == "oversize") throw OversizePromptError(text::sha256_hex(prompt));
            throw BackendError(err, resp.value("retryable", false));
        }
        if (!resp.contains("completion"))
            throw BackendError("completion response lacks 'completion'", false);
        return resp.at("completion").get<std::string>();
    }

    std::string train(const std::string&, const TrainJob& job) override {
        if (train_command_.empty()) throw BackendError("no train command configured", false);
        const auto hp_path = detail::unique_temp("c3ot-hp");
        {
            std::ofstream hp(hp_path);
            hp << job.hyperparams.dump(2);
        }
        const auto r = detail::run_process(train_command_ + " " +
                                               detail::shell_quote(job.dataset_path) + " " +
                                               detail::shell_quote(hp_path.string()),
                                           "");
        fs::remove(hp_path);
        if (r.exit_code != 0)
            throw BackendError("trainer exited " + std::to_string(r.exit_code) +
                                   "; stderr tail:\n" + detail::tail(r.err),
                               false);
        return detail::last_line(r.out);
    }

private:
    std::string complete_command_;
    std::string train_command_;
};

} // namespace c3ot
