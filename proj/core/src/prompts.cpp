#include "recgoat/prompts.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "recgoat/logging.hpp"

namespace recgoat {

std::string default_prompt_template() {
    return "You are a professional data analyst. Your task is to analyze a user's interaction history to infer "
           "their preferences.\n"
           "\n"
           "- User ID: {user_id}\n"
           "- Interaction History:\n"
           "{history}\n"
           "\n"
           "Please conduct a structured reasoning by two steps:\n"
           "\n"
           "- Identify Common Attributes Across Items: ... ...\n"
           "\n"
           "- Summarize Preferences Across Multiple Dimensions: ... ...\n"
           "\n"
           "Output Format:\n"
           "\n"
           "<think> reasoning process here </think>\n"
           "\n"
           "<answer> answer here </answer>\n";
}

std::string load_prompt_template(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open prompt template: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {

void replace_all(std::string& s, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
}

}  // namespace

PromptRecord build_user_prompt(std::int32_t user_id,
                               const std::vector<std::pair<std::int32_t, std::string>>& history,
                               const std::string& tmpl) {
    if (history.empty()) throw std::invalid_argument("build_user_prompt: empty history");
    std::ostringstream hist;
    for (std::size_t i = 0; i < history.size(); ++i) {
        hist << "- Item " << history[i].first << ": " << history[i].second;
        if (i + 1 < history.size()) hist << '\n';
    }
    std::string text = tmpl;
    replace_all(text, "{user_id}", std::to_string(user_id));
    replace_all(text, "{history}", hist.str());
    PromptRecord rec;
    rec.user_id = user_id;
    rec.prompt_text = std::move(text);
    return rec;
}

std::string extract_chat_content(const std::string& response_body) {
    auto j = nlohmann::json::parse(response_body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
}

std::pair<std::string, bool> extract_answer_block(const std::string& content) {
    const std::string open = "<answer>", close = "</answer>";
    auto a = content.find(open);
    auto b = content.find(close, a == std::string::npos ? 0 : a + open.size());
    if (a == std::string::npos || b == std::string::npos) return {content, false};
    std::string inner = content.substr(a + open.size(), b - a - open.size());
    // trim surrounding whitespace
    auto l = inner.find_first_not_of(" \t\r\n");
    auto r = inner.find_last_not_of(" \t\r\n");
    if (l == std::string::npos) return {"", true};
    return {inner.substr(l, r - l + 1), true};
}

namespace {

struct ParsedEndpoint {
    std::string host_port;  // scheme://host:port
    std::string path;
};

ParsedEndpoint parse_endpoint(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw std::invalid_argument("endpoint must include scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/v1/chat/completions"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

PromptRecord fetch_user_preference(const PromptRecord& record, const ChatClientConfig& cfg) {
    const auto ep = parse_endpoint(cfg.endpoint);
    httplib::Client client(ep.host_port);
    client.set_connection_timeout(cfg.timeout_sec, 0);
    client.set_read_timeout(cfg.timeout_sec, 0);

    nlohmann::json body = {
        {"model", cfg.model},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", record.prompt_text}}})},
    };
    httplib::Headers headers;
    if (!cfg.auth_token.empty()) headers.emplace("Authorization", "Bearer " + cfg.auth_token);

    std::string last_error;
    int backoff_ms = cfg.backoff_initial_ms;
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
            backoff_ms *= 2;
        }
        auto res = client.Post(ep.path, headers, body.dump(), "application/json");
        if (!res) {
            last_error = "connection error (" + httplib::to_string(res.error()) + ")";
            log::warn("chat request attempt " + std::to_string(attempt + 1) + " failed: " + last_error);
            continue;
        }
        if (res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            log::warn("chat request attempt " + std::to_string(attempt + 1) + " failed: " + last_error);
            continue;
        }
        if (res->status != 200)
            throw std::runtime_error("chat request rejected with HTTP " + std::to_string(res->status) + ": " +
                                     res->body);
        log::debug("chat raw response for user " + std::to_string(record.user_id) + ": " + res->body);
        std::string content;
        try {
            content = extract_chat_content(res->body);
        } catch (const std::exception& e) {
            throw std::runtime_error(std::string("malformed chat-completions response: ") + e.what());
        }
        PromptRecord out = record;
        auto [answer, structured] = extract_answer_block(content);
        out.answer_text = answer;
        out.answer_structured = structured;
        if (!structured)
            log::warn("unstructured answer for user " + std::to_string(record.user_id) +
                      " (no <answer> tags); keeping full text");
        return out;
    }
    throw std::runtime_error("chat request failed after " + std::to_string(cfg.max_retries + 1) +
                             " attempts: " + last_error);
}

std::vector<PromptRecord> fetch_user_preferences(const std::vector<PromptRecord>& records,
                                                 const ChatClientConfig& cfg) {
    std::vector<PromptRecord> out(records.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex err_mu;

    const int n_threads = std::max(1, std::min<int>(cfg.max_concurrency, static_cast<int>(records.size())));
    std::vector<std::thread> workers;
    workers.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) {
        workers.emplace_back([&] {
            while (true) {
                std::size_t i = next.fetch_add(1);
                if (i >= records.size() || failed.load()) return;
                try {
                    out[i] = fetch_user_preference(records[i], cfg);
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lk(err_mu);
                    if (!failed.exchange(true)) first_error = e.what();
                    return;
                }
            }
        });
    }
    for (auto& w : workers) w.join();
    if (failed.load()) throw std::runtime_error("batch preference fetch failed: " + first_error);
    return out;
}

}  // namespace recgoat
