#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"

namespace dialfuse {

enum class SegmentTag { kContext, kGoal, kState, kKnowledge, kPersona };

std::string_view to_string(SegmentTag t);
SegmentTag parse_segment_tag(std::string_view s);
// Marker token emitted ahead of a run of segments with this tag: "<context>".
std::string tag_marker(SegmentTag t);

struct Segment {
  SegmentTag tag = SegmentTag::kContext;
  std::string text;

  friend bool operator==(const Segment&, const Segment&) = default;
};

struct GenRequest {
  std::vector<Segment> condition;
  int max_tokens = 48;
  std::uint64_t seed = 0;

  // Text of the first segment with this tag, or "" when absent.
  std::string first(SegmentTag tag) const;
  std::vector<std::string> all(SegmentTag tag) const;
};

// Throws ValidationError when the request has no segments or max_tokens < 1.
void validate_request(const GenRequest& r);

// Flat token view of a condition: a tag marker opens each run of same-tag
// segments, followed by the lowercased tokens of every segment in the run.
std::vector<std::string> condition_tokens(const std::vector<Segment>& segments);

enum class BackendKind { kScriptedStub, kRemote, kLocalToy };

std::string_view to_string(BackendKind k);
BackendKind parse_backend_kind(std::string_view s);

class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendKind kind() const = 0;
  // Nonempty utterance. Safe to call concurrently.
  virtual std::string generate(const GenRequest& request) = 0;
};

// Replays a fixed script. Reply i is script[i] with "{goal}", "{persona}",
// "{context}" (last context segment) and "{state}" substituted from the
// request, so the output is a pure function of (script, call index,
// request). Without `cycle`, calls past the end raise ScriptExhausted.
class ScriptedStub : public Backend {
 public:
  explicit ScriptedStub(std::vector<std::string> script, bool cycle = false);

  BackendKind kind() const override { return BackendKind::kScriptedStub; }
  std::string generate(const GenRequest& request) override;

  std::size_t calls() const { return next_.load(); }
  // Every request seen, in call order.
  std::vector<GenRequest> captured() const;
  void reset();

 private:
  std::vector<std::string> script_;
  bool cycle_;
  std::atomic<std::size_t> next_{0};
  mutable std::mutex mu_;
  std::vector<GenRequest> captured_;
};

// Wraps a callable; handy for tests that need request-dependent replies.
class FunctionBackend : public Backend {
 public:
  using Fn = std::function<std::string(const GenRequest&)>;
  explicit FunctionBackend(Fn fn) : fn_(std::move(fn)) {}

  BackendKind kind() const override { return BackendKind::kScriptedStub; }
  std::string generate(const GenRequest& request) override;

 private:
  Fn fn_;
};

// JSON over HTTP: POST {segments: [{tag, text}], max_tokens, seed} -> {text}.
// Connection failures, timeouts and 5xx raise TransportError; other
// non-200 replies raise ProviderError.
class RemoteBackend : public Backend {
 public:
  struct Config {
    std::string endpoint;
    std::chrono::milliseconds timeout{10000};
  };

  explicit RemoteBackend(Config config);
  ~RemoteBackend() override;

  BackendKind kind() const override { return BackendKind::kRemote; }
  std::string generate(const GenRequest& request) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

nlohmann::ordered_json request_to_json(const GenRequest& r);
GenRequest request_from_json(const nlohmann::json& j);

struct BackendDescriptor {
  std::string name;
  BackendKind kind = BackendKind::kScriptedStub;
  nlohmann::json config = nlohmann::json::object();
};

// Name -> backend. Names are unique.
class BackendRegistry {
 public:
  void add(BackendDescriptor descriptor, std::shared_ptr<Backend> backend);
  bool contains(const std::string& name) const;
  // Throws NotFound.
  std::shared_ptr<Backend> get(const std::string& name) const;
  const BackendDescriptor& descriptor(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, std::pair<BackendDescriptor, std::shared_ptr<Backend>>> entries_;
};

// {"backends": [{"name", "kind", ...kind-specific keys}]}.
//   scripted_stub: "script": [...] or "script_path" (one reply per line), "cycle"
//   remote:        "endpoint", "timeout_ms"
//   local_toy:     "model" (path to a saved toy model), "temperature"
// Relative paths resolve against the config file's directory.
BackendRegistry load_registry(const std::filesystem::path& path);
BackendRegistry registry_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

}  // namespace dialfuse
