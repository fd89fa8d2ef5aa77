#pragma once

// Rationale provider backed by any OpenAI-compatible chat-completions
// endpoint. Configuration comes from flags or the environment:
//   CREX_LLM_BASE_URL   e.g. https://api.openai.com/v1 or a local server
//   CREX_LLM_MODEL      model name sent in the request body
//   CREX_LLM_API_KEY    bearer token (falls back to OPENAI_API_KEY; may be
//                       empty for unauthenticated local servers)
// Each call uses its own connection, so one HttpProvider instance is safe to
// share across the bulk-generation worker threads.

#include <cstdlib>
#include <string>

#include <nlohmann/json.hpp>

#include "httplib.h"

#include "crex/provider.hpp"

namespace crex {

struct HttpProviderOptions {
  std::string base_url;      // scheme://host[:port][/path-prefix]
  std::string model;
  std::string api_key;
  double temperature = 0.7;
  int timeout_sec = 120;
};

inline HttpProviderOptions http_options_from_env() {
  auto get = [](const char* name) -> std::string {
    const char* v = std::getenv(name);
    return v ? v : "";
  };
  HttpProviderOptions opts;
  opts.base_url = get("CREX_LLM_BASE_URL");
  opts.model = get("CREX_LLM_MODEL");
  opts.api_key = get("CREX_LLM_API_KEY");
  if (opts.api_key.empty()) opts.api_key = get("OPENAI_API_KEY");
  if (opts.base_url.empty())
    throw ValidationError("CREX_LLM_BASE_URL is not set (required for provider=http)");
  if (opts.model.empty())
    throw ValidationError("CREX_LLM_MODEL is not set (required for provider=http)");
  return opts;
}

class HttpProvider : public CountingProvider {
 public:
  explicit HttpProvider(HttpProviderOptions opts) : opts_(std::move(opts)) {
    if (opts_.base_url.empty()) throw ValidationError("http provider: empty base URL");
    // Split scheme://authority from the optional path prefix.
    const auto scheme_end = opts_.base_url.find("://");
    if (scheme_end == std::string::npos)
      throw ValidationError("http provider: base URL needs a scheme: " + opts_.base_url);
    const auto path_start = opts_.base_url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
      root_ = opts_.base_url;
    } else {
      root_ = opts_.base_url.substr(0, path_start);
      prefix_ = opts_.base_url.substr(path_start);
      while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    }
  }

  std::string name() const override { return "http:" + opts_.model; }

  std::string complete(const std::string& prompt) override {
    count_call();
    const nlohmann::json body{
        {"model", opts_.model},
        {"messages", {{{"role", "user"}, {"content", prompt}}}},
        {"temperature", opts_.temperature}};

    httplib::Client client(root_);
    client.set_connection_timeout(opts_.timeout_sec, 0);
    client.set_read_timeout(opts_.timeout_sec, 0);
    httplib::Headers headers;
    if (!opts_.api_key.empty())
      headers.emplace("Authorization", "Bearer " + opts_.api_key);

    const auto res = client.Post(prefix_ + "/chat/completions", headers, body.dump(),
                                 "application/json");
    if (!res)
      throw Error("http provider: request failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw Error("http provider: status " + std::to_string(res->status) + ": " +
                  res->body.substr(0, 300));
    try {
      const nlohmann::json reply = nlohmann::json::parse(res->body);
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("http provider: malformed response: ") + e.what());
    }
  }

 private:
  HttpProviderOptions opts_;
  std::string root_;    // scheme://host[:port]
  std::string prefix_;  // path prefix, no trailing slash
};

}  // namespace crex
