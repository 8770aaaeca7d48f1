#include "dialfuse/backends.hpp"

#include <fstream>

#include "dialfuse/error.hpp"
#include "dialfuse/text.hpp"
#include "dialfuse/toy_model.hpp"

namespace dialfuse {

std::string_view to_string(SegmentTag t) {
  switch (t) {
    case SegmentTag::kContext:
      return "context";
    case SegmentTag::kGoal:
      return "goal";
    case SegmentTag::kState:
      return "state";
    case SegmentTag::kKnowledge:
      return "knowledge";
    case SegmentTag::kPersona:
      return "persona";
  }
  return "context";
}

SegmentTag parse_segment_tag(std::string_view s) {
  std::string l = to_lower(s);
  if (l == "context") return SegmentTag::kContext;
  if (l == "goal") return SegmentTag::kGoal;
  if (l == "state") return SegmentTag::kState;
  if (l == "knowledge") return SegmentTag::kKnowledge;
  if (l == "persona") return SegmentTag::kPersona;
  throw ParseError("unknown segment tag '" + std::string(s) + "'");
}

std::string tag_marker(SegmentTag t) { return "<" + std::string(to_string(t)) + ">"; }

std::string GenRequest::first(SegmentTag tag) const {
  for (const auto& s : condition)
    if (s.tag == tag) return s.text;
  return "";
}

std::vector<std::string> GenRequest::all(SegmentTag tag) const {
  std::vector<std::string> out;
  for (const auto& s : condition)
    if (s.tag == tag) out.push_back(s.text);
  return out;
}

void validate_request(const GenRequest& r) {
  if (r.condition.empty()) throw ValidationError("generation request has no condition segments");
  if (r.max_tokens < 1) throw ValidationError("generation request max_tokens must be >= 1");
}

std::vector<std::string> condition_tokens(const std::vector<Segment>& segments) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (i == 0 || segments[i].tag != segments[i - 1].tag) out.push_back(tag_marker(segments[i].tag));
    for (auto& t : tokenize(to_lower(segments[i].text))) out.push_back(std::move(t));
  }
  return out;
}

std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::kScriptedStub:
      return "scripted_stub";
    case BackendKind::kRemote:
      return "remote";
    case BackendKind::kLocalToy:
      return "local_toy";
  }
  return "scripted_stub";
}

BackendKind parse_backend_kind(std::string_view s) {
  std::string l = to_lower(s);
  if (l == "scripted_stub") return BackendKind::kScriptedStub;
  if (l == "remote") return BackendKind::kRemote;
  if (l == "local_toy") return BackendKind::kLocalToy;
  throw ParseError("unknown backend kind '" + std::string(s) + "'");
}

// ---- scripted --------------------------------------------------------------

namespace {

void substitute(std::string& s, std::string_view key, const std::string& value) {
  for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size()))
    s.replace(pos, key.size(), value);
}

}  // namespace

ScriptedStub::ScriptedStub(std::vector<std::string> script, bool cycle)
    : script_(std::move(script)), cycle_(cycle) {
  for (const auto& line : script_)
    if (trim(line).empty()) throw ValidationError("scripted stub has an empty reply");
}

std::string ScriptedStub::generate(const GenRequest& request) {
  validate_request(request);
  std::size_t i;
  {
    std::lock_guard lock(mu_);
    i = next_.fetch_add(1);
    captured_.push_back(request);
  }
  if (script_.empty() || (!cycle_ && i >= script_.size()))
    throw ScriptExhausted("scripted stub exhausted after " + std::to_string(script_.size()) + " replies");
  std::string out = script_[i % script_.size()];
  auto contexts = request.all(SegmentTag::kContext);
  substitute(out, "{goal}", request.first(SegmentTag::kGoal));
  substitute(out, "{persona}", request.first(SegmentTag::kPersona));
  substitute(out, "{state}", request.first(SegmentTag::kState));
  substitute(out, "{context}", contexts.empty() ? std::string() : contexts.back());
  if (trim(out).empty()) throw ProviderError("scripted reply " + std::to_string(i) + " is empty after substitution");
  return out;
}

std::vector<GenRequest> ScriptedStub::captured() const {
  std::lock_guard lock(mu_);
  return captured_;
}

void ScriptedStub::reset() {
  std::lock_guard lock(mu_);
  next_ = 0;
  captured_.clear();
}

std::string FunctionBackend::generate(const GenRequest& request) {
  validate_request(request);
  std::string out = fn_(request);
  if (trim(out).empty()) throw ProviderError("backend produced an empty reply");
  return out;
}

// ---- wire format -----------------------------------------------------------

nlohmann::ordered_json request_to_json(const GenRequest& r) {
  nlohmann::ordered_json j;
  j["segments"] = nlohmann::ordered_json::array();
  for (const auto& s : r.condition) j["segments"].push_back({{"tag", to_string(s.tag)}, {"text", s.text}});
  j["max_tokens"] = r.max_tokens;
  j["seed"] = r.seed;
  return j;
}

GenRequest request_from_json(const nlohmann::json& j) {
  GenRequest r;
  try {
    for (const auto& s : j.at("segments"))
      r.condition.push_back({parse_segment_tag(s.at("tag").get<std::string>()), s.at("text").get<std::string>()});
    r.max_tokens = j.value("max_tokens", r.max_tokens);
    r.seed = j.value("seed", r.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad generation request: ") + e.what());
  }
  return r;
}

// ---- registry --------------------------------------------------------------

void BackendRegistry::add(BackendDescriptor descriptor, std::shared_ptr<Backend> backend) {
  if (descriptor.name.empty()) throw ValidationError("backend name is empty");
  if (!backend) throw ValidationError("backend '" + descriptor.name + "' is null");
  if (entries_.count(descriptor.name)) throw Conflict("backend '" + descriptor.name + "' already registered");
  std::string name = descriptor.name;
  entries_.emplace(std::move(name), std::make_pair(std::move(descriptor), std::move(backend)));
}

bool BackendRegistry::contains(const std::string& name) const { return entries_.count(name) > 0; }

std::shared_ptr<Backend> BackendRegistry::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw NotFound("unknown backend '" + name + "'");
  return it->second.second;
}

const BackendDescriptor& BackendRegistry::descriptor(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw NotFound("unknown backend '" + name + "'");
  return it->second.first;
}

std::vector<std::string> BackendRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [n, _] : entries_) out.push_back(n);
  return out;
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

std::vector<std::string> read_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open script '" + path.string() + "'");
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);)
    if (!trim(line).empty()) out.push_back(line);
  return out;
}

}  // namespace

BackendRegistry registry_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  BackendRegistry reg;
  if (!j.contains("backends") || !j["backends"].is_array())
    throw ParseError("backend registry needs a 'backends' array");
  for (const auto& b : j["backends"]) {
    BackendDescriptor d;
    try {
      d.name = b.at("name").get<std::string>();
      d.kind = parse_backend_kind(b.at("kind").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("backend entry: ") + e.what());
    }
    d.config = b;
    std::shared_ptr<Backend> backend;
    switch (d.kind) {
      case BackendKind::kScriptedStub: {
        std::vector<std::string> script;
        if (b.contains("script")) {
          script = b["script"].get<std::vector<std::string>>();
        } else if (b.contains("script_path")) {
          script = read_script(resolve(base_dir, b["script_path"].get<std::string>()));
        } else {
          throw ValidationError("scripted backend '" + d.name + "' needs 'script' or 'script_path'");
        }
        backend = std::make_shared<ScriptedStub>(std::move(script), b.value("cycle", false));
        break;
      }
      case BackendKind::kRemote: {
        RemoteBackend::Config c;
        c.endpoint = b.at("endpoint").get<std::string>();
        c.timeout = std::chrono::milliseconds(b.value("timeout_ms", 10000));
        backend = std::make_shared<RemoteBackend>(c);
        break;
      }
      case BackendKind::kLocalToy: {
        auto model = ToyModel::load(resolve(base_dir, b.at("model").get<std::string>()));
        backend = std::make_shared<ToyBackend>(std::move(model), b.value("temperature", 0.0));
        break;
      }
    }
    reg.add(std::move(d), std::move(backend));
  }
  return reg;
}

BackendRegistry load_registry(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open backend registry '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("backend registry '" + path.string() + "': " + e.what());
  }
  return registry_from_json(j, path.parent_path());
}

}  // namespace dialfuse
