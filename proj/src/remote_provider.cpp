#include "semloop/remote_provider.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace semloop {

std::string api_key_from_env() {
  const char* key = std::getenv("SEMLOOP_API_KEY");
  return key ? key : "";
}

struct RemoteProvider::Impl {
  explicit Impl(const std::string& scheme_host) : client(scheme_host) {}
  httplib::Client client;
};

namespace {

// Splits "http://host:port/v1" into {"http://host:port", "/v1"}.
std::pair<std::string, std::string> split_base_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos)
    throw Error(ErrorCode::InvalidConfig, "provider.base_url needs a scheme: '" + url + "'");
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, ""};
  std::string path = url.substr(slash);
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {url.substr(0, slash), path};
}

}  // namespace

RemoteProvider::RemoteProvider(RemoteProviderConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.base_url.empty()) throw Error(ErrorCode::InvalidConfig, "provider.base_url is empty");
  if (cfg_.model.empty()) throw Error(ErrorCode::InvalidConfig, "provider.model is empty");
  auto [host, prefix] = split_base_url(cfg_.base_url);
  path_ = prefix + "/chat/completions";
  impl_ = std::make_unique<Impl>(host);
  if (!impl_->client.is_valid())
    throw Error(ErrorCode::InvalidConfig, "cannot use provider.base_url '" + cfg_.base_url + "'");
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(cfg_.timeout_s));
  impl_->client.set_connection_timeout(timeout);
  impl_->client.set_read_timeout(timeout);
  impl_->client.set_write_timeout(timeout);
  impl_->client.set_keep_alive(true);
}

RemoteProvider::~RemoteProvider() = default;

std::vector<std::string> RemoteProvider::request(const SampleRequest& req, std::size_t n) {
  nlohmann::json body = {
      {"model", cfg_.model},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", req.prompt}}})},
      {"n", n},
      {"temperature", req.temperature},
      {"max_tokens", req.max_tokens},
  };
  if (req.seed) body["seed"] = *req.seed;
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

  std::string last_error;
  ErrorCode last_code = ErrorCode::TransportError;
  for (std::size_t attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(cfg_.backoff * (1 << (attempt - 1)));

    const auto started = std::chrono::steady_clock::now();
    httplib::Result res;
    {
      std::lock_guard lock(mu_);
      res = impl_->client.Post(path_, headers, payload, "application/json");
    }
    if (!res) {
      const auto err = res.error();
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      last_code = (err == httplib::Error::ConnectionTimeout ||
                   (err == httplib::Error::Read && elapsed >= cfg_.timeout_s))
                      ? ErrorCode::Timeout
                      : ErrorCode::TransportError;
      last_error = httplib::to_string(err);
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_code = ErrorCode::TransportError;
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw Error(ErrorCode::TransportError, "HTTP " + std::to_string(res->status) + ": " + res->body);

    try {
      const auto j = nlohmann::json::parse(res->body);
      std::vector<std::string> texts;
      for (const auto& choice : j.at("choices"))
        texts.push_back(choice.at("message").at("content").get<std::string>());
      if (texts.size() != n)
        throw Error(ErrorCode::MalformedResponse, "expected " + std::to_string(n) +
                                                      " choices, got " + std::to_string(texts.size()));
      return texts;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedResponse, e.what());
    }
  }
  throw Error(last_code, last_error + " after " + std::to_string(cfg_.max_retries + 1) + " attempts");
}

std::vector<Completion> RemoteProvider::sample(const SampleRequest& req) {
  std::vector<Completion> out;
  out.reserve(req.n);
  if (cfg_.supports_n) {
    for (auto& t : request(req, req.n)) out.push_back({std::move(t), std::nullopt, {}});
    return out;
  }
  for (std::size_t k = 0; k < req.n; ++k)
    out.push_back({std::move(request(req, 1).front()), std::nullopt, {}});
  return out;
}

}  // namespace semloop
