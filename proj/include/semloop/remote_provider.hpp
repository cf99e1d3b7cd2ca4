#pragma once

// Evaluation-only provider for chat-completions style HTTP endpoints.
// It exposes no parameters and therefore never takes part in training.

#include <chrono>
#include <memory>
#include <mutex>
#include <string>

#include "semloop/policy.hpp"

namespace semloop {

struct RemoteProviderConfig {
  std::string base_url;  // e.g. http://localhost:8000/v1
  std::string model;
  std::string api_key;   // usually taken from SEMLOOP_API_KEY
  double temperature = 0.0;
  std::size_t max_tokens = 2048;
  bool require_think_tags = true;
  // Ask for all n completions in one request; otherwise issue n requests.
  bool supports_n = true;
  double timeout_s = 60.0;
  std::size_t max_retries = 3;
  std::chrono::milliseconds backoff{500};
};

// Reads SEMLOOP_API_KEY, or returns an empty string.
std::string api_key_from_env();

class RemoteProvider : public Provider {
 public:
  explicit RemoteProvider(RemoteProviderConfig cfg);
  ~RemoteProvider() override;

  std::vector<Completion> sample(const SampleRequest& req) override;
  bool require_think_tags() const override { return cfg_.require_think_tags; }
  std::string name() const override { return "remote:" + cfg_.model; }

  const RemoteProviderConfig& config() const noexcept { return cfg_; }

 private:
  std::vector<std::string> request(const SampleRequest& req, std::size_t n);

  struct Impl;
  RemoteProviderConfig cfg_;
  std::string path_;
  std::mutex mu_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace semloop
