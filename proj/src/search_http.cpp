#include <condition_variable>
#include <cstdlib>

#include "dialfuse/error.hpp"
#include "endpoint.hpp"
#include "dialfuse/knowledge.hpp"
#include "httplib.h"

namespace dialfuse {

namespace {

// Counting semaphore; std::counting_semaphore needs a compile-time bound.
class Gate {
 public:
  explicit Gate(int n) : free_(n < 1 ? 1 : n) {}
  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return free_ > 0; });
    --free_;
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      ++free_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int free_;
};

}  // namespace

struct HttpSearchProvider::Impl {
  Config config;
  detail::Endpoint endpoint;
  Gate gate;

  explicit Impl(Config c) : config(std::move(c)), endpoint(detail::split_endpoint(config.endpoint)), gate(config.max_concurrent) {}
};

HttpSearchProvider::HttpSearchProvider(Config config) : impl_(std::make_unique<Impl>(std::move(config))) {}

HttpSearchProvider::~HttpSearchProvider() = default;

std::vector<std::string> HttpSearchProvider::search(const std::string& query, int limit) {
  impl_->gate.acquire();
  struct Release {
    Gate& g;
    ~Release() { g.release(); }
  } release{impl_->gate};

  httplib::Client client(impl_->endpoint.base);
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(impl_->config.timeout);
  auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(impl_->config.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!impl_->config.api_key_env.empty())
    if (const char* key = std::getenv(impl_->config.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);

  nlohmann::json body = {{"query", query}, {"limit", limit}};
  auto res = client.Post(impl_->endpoint.path, headers, body.dump(), "application/json");
  if (!res) throw TransportError("search request failed: " + httplib::to_string(res.error()));
  if (res->status == 429 || res->status == 401 || res->status == 403)
    throw ProviderError("search provider refused request (HTTP " + std::to_string(res->status) + ")");
  if (res->status >= 500) throw TransportError("search provider error (HTTP " + std::to_string(res->status) + ")");
  if (res->status != 200) throw ProviderError("search provider returned HTTP " + std::to_string(res->status));
  try {
    auto j = nlohmann::json::parse(res->body);
    auto snippets = j.at("snippets").get<std::vector<std::string>>();
    if (limit >= 0 && snippets.size() > static_cast<std::size_t>(limit)) snippets.resize(static_cast<std::size_t>(limit));
    return snippets;
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(std::string("malformed search response: ") + e.what());
  }
}

}  // namespace dialfuse
