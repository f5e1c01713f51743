#include "care/llm.hpp"

#include <cstdlib>
#include <fstream>
#include <semaphore>
#include <sstream>

#include <httplib.h>

namespace care::llm {

namespace {

thread_local int g_remote_scope_depth = 0;

const char* kDefaultCompletionPath = "/v1/chat/completions";

const std::vector<std::string> kDefaultActions = {"OBSERVE", "TREAT_S", "INVESTIGATE_O"};

const std::vector<std::string> kFillerPhrases = {
    "Cross-domain corroboration remains limited.",
    "The hemodynamic picture dominates the assessment.",
    "Perfusion markers would refine the risk estimate.",
    "Support intensity is the key open question.",
    "Organ-level trends deserve another look.",
    "The bedside presentation stays reassuring.",
};

std::string filler(Rng& rng, int sentences) {
    std::ostringstream os;
    for (int i = 0; i < sentences; ++i) {
        if (i > 0) os << ' ';
        os << kFillerPhrases[rng.below(kFillerPhrases.size())];
    }
    return os.str();
}

} // namespace

BackendSpec BackendSpec::parse(const std::string& spec, BackendRole role) {
    BackendSpec out;
    out.role = role;
    out.display = spec;
    if (spec.rfind("mock:", 0) == 0) {
        out.kind = BackendKind::Mock;
        out.script_path = spec.substr(5);
        if (out.script_path.empty()) {
            throw ValidationError("mock backend spec needs a script path: " + spec);
        }
        return out;
    }
    if (spec.rfind("http:", 0) == 0 || spec.rfind("https:", 0) == 0) {
        out.kind = BackendKind::Http;
        const auto hash = spec.find('#');
        if (hash == std::string::npos || hash + 1 == spec.size()) {
            throw ValidationError("http backend spec needs '#<model>': " + spec);
        }
        out.endpoint = spec.substr(0, hash);
        out.model = spec.substr(hash + 1);
        return out;
    }
    throw ValidationError("backend spec must start with mock: or http(s): -- got " + spec);
}

Usage& Usage::operator+=(const Usage& other) {
    prompt_tokens += other.prompt_tokens;
    completion_tokens += other.completion_tokens;
    estimated = estimated || other.estimated;
    return *this;
}

long count_tokens(std::string_view text) {
    long count = 0;
    bool in_token = false;
    for (const char c : text) {
        const bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r';
        if (!ws && !in_token) ++count;
        in_token = !ws;
    }
    return count;
}

RemoteCallScope::RemoteCallScope() { ++g_remote_scope_depth; }
RemoteCallScope::~RemoteCallScope() { --g_remote_scope_depth; }
bool RemoteCallScope::active() { return g_remote_scope_depth > 0; }

Completion Backend::complete(const std::string& prompt, const CallContext& ctx) {
    if (spec_.role == BackendRole::Remote && !RemoteCallScope::active()) {
        throw PrivacyViolationError(
            "remote-role backend driven outside the remote payload path");
    }
    Completion completion = complete_impl(prompt, ctx);
    if (wire_log_) wire_log_->record(spec_, ctx, prompt, completion.text);
    return completion;
}

// --- MockBackend ---

MockBackend::MockBackend(BackendSpec spec) : Backend(std::move(spec)) {
    std::ifstream in(this->spec().script_path);
    if (!in) {
        throw ValidationError("cannot open mock script: " + this->spec().script_path);
    }
    nlohmann::json script;
    try {
        in >> script;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed mock script " + this->spec().script_path + ": " +
                              e.what());
    }
    init_from_json(script);
}

MockBackend::MockBackend(BackendSpec spec, const nlohmann::json& script)
    : Backend(std::move(spec)) {
    init_from_json(script);
}

void MockBackend::init_from_json(const nlohmann::json& script) {
    const std::string mode = script.value("mode", "script");
    if (mode == "seeded") {
        seeded_ = true;
        seed_ = script.value("seed", 0ull);
        acquire_probability_ = script.value("acquire_probability", acquire_probability_);
        malformed_rate_ = script.value("malformed_rate", malformed_rate_);
        confidence_min_ = script.value("confidence_min", confidence_min_);
        confidence_max_ = script.value("confidence_max", confidence_max_);
        if (script.contains("constant_action")) {
            constant_action_ = script.at("constant_action").get<std::string>();
        }
        if (script.contains("action_weights")) {
            for (const auto& [action, weight] : script.at("action_weights").items()) {
                action_weights_.emplace_back(action, weight.get<double>());
            }
        } else {
            for (const auto& a : kDefaultActions) action_weights_.emplace_back(a, 1.0);
        }
        return;
    }
    if (mode != "script") {
        throw ValidationError("mock script mode must be \"script\" or \"seeded\"");
    }
    if (script.contains("default")) default_text_ = script.at("default").get<std::string>();
    for (const auto& item : script.value("responses", nlohmann::json::array())) {
        ScriptEntry entry;
        if (item.contains("sample_id")) entry.sample_id = item.at("sample_id").get<std::string>();
        if (item.contains("stage")) entry.stage = item.at("stage").get<std::string>();
        if (item.contains("round")) entry.round = item.at("round").get<int>();
        if (item.contains("agent")) entry.agent = item.at("agent").get<std::string>();
        if (item.contains("attempt")) entry.attempt = item.at("attempt").get<int>();
        entry.text = item.at("text").get<std::string>();
        entries_.push_back(std::move(entry));
    }
    if (entries_.empty() && !default_text_) {
        throw ValidationError("mock script has no responses and no default");
    }
}

std::string MockBackend::scripted_response(const CallContext& ctx) {
    std::lock_guard<std::mutex> lock(mutex_);
    for (auto& entry : entries_) {
        if (entry.consumed) continue;
        if (entry.sample_id && *entry.sample_id != ctx.sample_id) continue;
        if (entry.stage && *entry.stage != ctx.stage) continue;
        if (entry.round && *entry.round != ctx.round) continue;
        if (entry.agent && *entry.agent != ctx.agent) continue;
        if (entry.attempt && *entry.attempt != ctx.attempt) continue;
        entry.consumed = true;
        return entry.text;
    }
    if (default_text_) return *default_text_;
    throw BackendError("mock script exhausted for sample=" + ctx.sample_id +
                       " stage=" + ctx.stage + " round=" + std::to_string(ctx.round));
}

std::string MockBackend::seeded_response(const CallContext& ctx) {
    const std::uint64_t key = stable_hash64({ctx.sample_id, ctx.stage,
                                             std::to_string(ctx.round), ctx.agent,
                                             std::to_string(ctx.attempt)});
    Rng rng(splitmix64(key ^ seed_));

    if (rng.bernoulli(malformed_rate_)) {
        return "I could not produce the requested structure this time. " + filler(rng, 1);
    }

    nlohmann::json out;
    if (ctx.stage == "acquisition") {
        if (ctx.round == 0 && rng.bernoulli(acquire_probability_)) {
            auto retrievable = keys_with_exposure(Exposure::ObjectiveRetrievable);
            deterministic_shuffle(retrievable, rng);
            const std::size_t k = 2 + rng.below(4); // 2..5 keys
            nlohmann::json keys = nlohmann::json::array();
            for (std::size_t i = 0; i < k && i < retrievable.size(); ++i) {
                keys.push_back(std::string(feature_name(retrievable[i])));
            }
            out = {{"need_data", true},
                   {"facts_keys", keys},
                   {"reasoning", filler(rng, 2)}};
        } else {
            out = {{"need_data", false},
                   {"facts_keys", nlohmann::json::array()},
                   {"reasoning", filler(rng, 1)}};
        }
    } else if (ctx.stage == "advisory") {
        nlohmann::json candidates = nlohmann::json::array();
        for (const auto& name :
             {"VERY_LIKELY_WORSENING", "LIKELY_WORSENING", "POTENTIAL_OCCULT_SHOCK",
              "LIKELY_STABLE", "VERY_LIKELY_STABLE"}) {
            if (rng.bernoulli(0.45)) candidates.push_back(name);
        }
        out = {{"transition_candidates", candidates},
               {"transition_guidance", filler(rng, 2)},
               {"transition_reasoning", filler(rng, 2)}};
    } else if (ctx.stage == "decision") {
        std::string action;
        if (constant_action_) {
            action = *constant_action_;
        } else {
            double total = 0;
            for (const auto& [a, w] : action_weights_) total += w;
            double draw = rng.uniform() * total;
            for (const auto& [a, w] : action_weights_) {
                draw -= w;
                action = a;
                if (draw <= 0) break;
            }
        }
        out = {{"differential_diagnosis", filler(rng, 3)}, {"final_action", action}};
    } else {
        // Baseline turns: single/vote/rsmad/confmad.
        std::string action;
        if (constant_action_) {
            action = *constant_action_;
        } else {
            double total = 0;
            for (const auto& [a, w] : action_weights_) total += w;
            double draw = rng.uniform() * total;
            for (const auto& [a, w] : action_weights_) {
                draw -= w;
                action = a;
                if (draw <= 0) break;
            }
        }
        out = {{"reasoning", filler(rng, 2)}, {"final_action", action}};
        if (ctx.stage == "confmad") {
            out["confidence"] =
                static_cast<int>(confidence_min_ +
                                 rng.below(static_cast<std::uint64_t>(
                                     confidence_max_ - confidence_min_ + 1)));
        }
    }
    return out.dump();
}

Completion MockBackend::complete_impl(const std::string& prompt, const CallContext& ctx) {
    const std::string text = seeded_ ? seeded_response(ctx) : scripted_response(ctx);
    if (text == "__FAIL__") {
        throw BackendError("mock backend scripted failure for " + ctx.sample_id + "/" +
                           ctx.stage);
    }
    Completion completion;
    completion.text = text;
    completion.usage.prompt_tokens = count_tokens(prompt);
    completion.usage.completion_tokens = count_tokens(text);
    completion.usage.estimated = false;
    return completion;
}

// --- HttpBackend ---

class InFlightLimiter {
public:
    explicit InFlightLimiter(int max) : sem_(max > 0 ? max : 1) {}
    void acquire() { sem_.acquire(); }
    void release() { sem_.release(); }

private:
    std::counting_semaphore<> sem_;
};

HttpBackend::HttpBackend(BackendSpec spec, double temperature, int retries,
                         int timeout_seconds, int max_in_flight)
    : Backend(std::move(spec)),
      temperature_(temperature),
      retries_(retries),
      timeout_seconds_(timeout_seconds),
      limiter_(std::make_unique<InFlightLimiter>(max_in_flight)) {}

Completion HttpBackend::complete_impl(const std::string& prompt, const CallContext&) {
    // Split the endpoint into origin and path.
    std::string origin = spec().endpoint;
    std::string path = kDefaultCompletionPath;
    const auto scheme_end = origin.find("://");
    if (scheme_end != std::string::npos) {
        const auto slash = origin.find('/', scheme_end + 3);
        if (slash != std::string::npos) {
            path = origin.substr(slash);
            origin = origin.substr(0, slash);
        }
    }

    const nlohmann::json request = {
        {"model", spec().model},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
        {"temperature", temperature_},
    };
    const std::string body = request.dump();

    httplib::Headers headers;
    if (const char* key = std::getenv("CARE_API_KEY")) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    limiter_->acquire();
    struct Release {
        InFlightLimiter* l;
        ~Release() { l->release(); }
    } release{limiter_.get()};

    std::string last_error;
    for (int attempt = 0; attempt <= retries_; ++attempt) {
        httplib::Client client(origin);
        client.set_connection_timeout(timeout_seconds_, 0);
        client.set_read_timeout(timeout_seconds_, 0);
        auto res = client.Post(path, headers, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_error = "server error status " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            throw BackendError("backend " + spec().display + " returned status " +
                               std::to_string(res->status) + ": " + res->body);
        }
        nlohmann::json reply;
        try {
            reply = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw BackendError("backend " + spec().display +
                               " returned non-JSON body: " + e.what());
        }
        Completion completion;
        try {
            completion.text =
                reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw BackendError("backend " + spec().display +
                               " reply lacks choices[0].message.content");
        }
        if (reply.contains("usage") && reply.at("usage").contains("prompt_tokens") &&
            reply.at("usage").contains("completion_tokens")) {
            completion.usage.prompt_tokens = reply.at("usage").at("prompt_tokens").get<long>();
            completion.usage.completion_tokens =
                reply.at("usage").at("completion_tokens").get<long>();
            completion.usage.estimated = false;
        } else {
            completion.usage.prompt_tokens = count_tokens(prompt);
            completion.usage.completion_tokens = count_tokens(completion.text);
            completion.usage.estimated = true;
        }
        return completion;
    }
    throw BackendError("backend " + spec().display + " failed after " +
                       std::to_string(retries_ + 1) + " attempts: " + last_error);
}

std::unique_ptr<Backend> make_backend(const BackendSpec& spec, const BackendOptions& options) {
    if (spec.kind == BackendKind::Mock) {
        return std::make_unique<MockBackend>(spec);
    }
    return std::make_unique<HttpBackend>(spec, options.temperature, options.retries,
                                         options.timeout_seconds, options.max_in_flight);
}

// --- WireLog ---

WireLog::WireLog(const std::filesystem::path& path, const std::string& config_digest) {
    out_ = std::make_unique<std::ofstream>(path);
    if (!*out_) throw ValidationError("cannot open wire log: " + path.string());
    const nlohmann::json header = {{"file_kind", "wire"}, {"config_digest", config_digest}};
    *out_ << header.dump() << "\n";
}

void WireLog::record(const BackendSpec& spec, const CallContext& ctx,
                     std::string_view request, std::string_view response) {
    std::lock_guard<std::mutex> lock(mutex_);
    if (!out_) return;
    nlohmann::json entry = {
        {"timestamp", iso8601_utc_now()},
        {"backend", spec.display},
        {"role", spec.role == BackendRole::Remote ? "REMOTE" : "LOCAL"},
        {"sample_id", ctx.sample_id},
        {"stage", ctx.stage},
        {"round", ctx.round},
    };
    if (spec.role == BackendRole::Remote) {
        entry["request"] = std::string(request);
        entry["response"] = std::string(response);
    } else {
        // Local bodies carry patient values; keep only digests.
        entry["request_digest"] = fnv1a64_hex(request);
        entry["response_digest"] = fnv1a64_hex(response);
    }
    *out_ << entry.dump() << "\n";
    out_->flush();
}

// --- remote path ---

std::string render_remote_prompt(const privacy::RemotePayload& payload) {
    std::ostringstream os;
    os << "You are a clinical risk transition advisor.\n\n";
    os << "### Privacy Notice\n";
    os << "You are a remote advisory module. You will not receive patient measurements,\n";
    os << "identifiers, or any raw values. You receive only the current risk category,\n";
    os << "the types of evidence already collected, and the shared category definitions.\n\n";
    os << "### Current Patient State\n";
    os << "- Current Category: " << payload.current_category << "\n\n";
    os << "### Available Evidence Types\n";
    if (payload.available_feature_keys.empty()) {
        os << "- (none collected yet)\n";
    } else {
        for (const auto& key : payload.available_feature_keys) os << "- " << key << "\n";
    }
    os << "\n### Category Definitions\n" << payload.rubric_schema << "\n\n";
    os << "### Task\n" << payload.task_description << "\n";
    os << "Respond with one JSON object:\n";
    os << "{\"transition_candidates\": [<category names worth considering>], "
          "\"transition_guidance\": \"<guidance>\", "
          "\"transition_reasoning\": \"<reasoning>\"}\n";
    return os.str();
}

Completion advise_remote(Backend& backend, const privacy::RemotePayload& payload,
                         const privacy::SensitiveCorpus& corpus, privacy::AuditLog& audit,
                         const CallContext& ctx) {
    if (backend.spec().role != BackendRole::Remote) {
        throw ValidationError("advise_remote requires a REMOTE-role backend, got " +
                              backend.spec().display);
    }
    const std::string prompt = render_remote_prompt(payload);
    const privacy::ScanResult scan = privacy::scan_outbound(prompt, corpus);
    audit.record(privacy::AuditDirection::ToRemote, prompt, scan);
    if (!scan.clean) {
        throw PrivacyViolationError("outbound scan violation: " + scan.detail);
    }
    RemoteCallScope scope;
    Completion completion = backend.complete(prompt, ctx);
    audit.record(privacy::AuditDirection::ToLocal, completion.text,
                 privacy::ScanResult::ok());
    return completion;
}

} // namespace care::llm
