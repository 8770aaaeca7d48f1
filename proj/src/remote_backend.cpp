#include "dialfuse/backends.hpp"
#include "dialfuse/error.hpp"
#include "dialfuse/text.hpp"
#include "endpoint.hpp"
#include "httplib.h"

namespace dialfuse {

struct RemoteBackend::Impl {
  Config config;
  detail::Endpoint endpoint;
};

RemoteBackend::RemoteBackend(Config config)
    : impl_(std::make_unique<Impl>(Impl{config, detail::split_endpoint(config.endpoint)})) {}

RemoteBackend::~RemoteBackend() = default;

std::string RemoteBackend::generate(const GenRequest& request) {
  validate_request(request);
  // A client per call keeps concurrent generate() calls independent.
  httplib::Client client(impl_->endpoint.base);
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(impl_->config.timeout);
  auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(impl_->config.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  auto res = client.Post(impl_->endpoint.path, request_to_json(request).dump(), "application/json");
  if (!res) throw TransportError("backend " + impl_->config.endpoint + ": " + httplib::to_string(res.error()));
  if (res->status >= 500)
    throw TransportError("backend " + impl_->config.endpoint + " returned HTTP " + std::to_string(res->status));
  if (res->status != 200)
    throw ProviderError("backend " + impl_->config.endpoint + " returned HTTP " + std::to_string(res->status));
  std::string text;
  try {
    text = nlohmann::json::parse(res->body).at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError("backend " + impl_->config.endpoint + ": malformed reply: " + e.what());
  }
  if (trim(text).empty()) throw ProviderError("backend " + impl_->config.endpoint + " returned an empty reply");
  return text;
}

}  // namespace dialfuse
