#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dialfuse/corpus.hpp"

namespace dialfuse {

// Records grouped by domain, in canonical (file) order.
class Database {
 public:
  void add(DBRecord record);

  bool has_domain(std::string_view domain) const;
  std::vector<std::string> domains() const;
  const std::vector<DBRecord>& records(std::string_view domain) const;
  // Union of attribute names over a domain's records.
  const std::set<std::string>& schema(std::string_view domain) const;

 private:
  std::map<std::string, std::vector<DBRecord>> records_;
  std::map<std::string, std::set<std::string>> schema_;
};

// {"train": [{...}, ...], ...}, or a directory of MultiWOZ "<domain>_db.json"
// files. Attribute names are normalized; non-scalar attributes are dropped.
Database load_database(const std::filesystem::path& path);
Database database_from_json(const nlohmann::json& j);

struct KnowledgeResult {
  enum class Kind { kDbState, kSearch, kEmpty };

  Kind kind = Kind::kEmpty;
  std::optional<int> db_match_count;
  std::optional<DBRecord> top_record;
  std::optional<std::vector<std::string>> snippets;

  static KnowledgeResult empty() { return {}; }

  friend bool operator==(const KnowledgeResult&, const KnowledgeResult&) = default;
};

std::string_view to_string(KnowledgeResult::Kind k);

// Text form used to condition response generation.
std::string knowledge_text(const KnowledgeResult& k);

nlohmann::ordered_json knowledge_to_json(const KnowledgeResult& k);
KnowledgeResult knowledge_from_json(const nlohmann::json& j);

// Indices into db.records(domain) of every record satisfying the domain's
// constraints. "dontcare" matches anything; slots outside the domain schema
// (booking slots such as people/stay) do not constrain the lookup; values
// compare case-insensitively.
std::vector<std::size_t> db_matches(const BeliefState& belief, std::string_view domain, const Database& db);

KnowledgeResult db_lookup(const BeliefState& belief, std::string_view domain, const Database& db);
// Single-domain convenience form; throws ValidationError when the belief
// spans several domains.
KnowledgeResult db_lookup(const BeliefState& belief, const Database& db);

// ---- web search ----------------------------------------------------------

class SearchProvider {
 public:
  virtual ~SearchProvider() = default;
  virtual std::vector<std::string> search(const std::string& query, int limit) = 0;
};

// Fixed query -> snippets table. Lookup is case-insensitive on the query.
class MockSearchProvider : public SearchProvider {
 public:
  MockSearchProvider() = default;
  explicit MockSearchProvider(std::map<std::string, std::vector<std::string>> table);

  void add(const std::string& query, std::vector<std::string> snippets);
  std::vector<std::string> search(const std::string& query, int limit) override;

 private:
  std::map<std::string, std::vector<std::string>> table_;
};

// Loads {"query": ["snippet", ...]} into a mock provider.
MockSearchProvider load_mock_search(const std::filesystem::path& path);

// JSON-over-HTTP provider: POST {query, limit} -> {snippets: [...]}. The
// API key, when set, is read from the named environment variable and sent
// as a bearer token.
class HttpSearchProvider : public SearchProvider {
 public:
  struct Config {
    std::string endpoint;  // e.g. "http://localhost:9000/search"
    std::string api_key_env = "DIALFUSE_SEARCH_KEY";
    std::chrono::milliseconds timeout{5000};
    int max_concurrent = 4;
  };

  explicit HttpSearchProvider(Config config);
  ~HttpSearchProvider() override;
  std::vector<std::string> search(const std::string& query, int limit) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// On-disk cache in front of another provider so runs can be replayed
// offline. One file per query: <dir>/<fnv64 hex of lowercased query>.json.
// With no upstream, a miss raises ProviderError.
class CachingSearchProvider : public SearchProvider {
 public:
  CachingSearchProvider(std::filesystem::path dir, SearchProvider* upstream, int fetch_limit = 10);
  std::vector<std::string> search(const std::string& query, int limit) override;

  std::filesystem::path entry_path(const std::string& query) const;

 private:
  std::filesystem::path dir_;
  SearchProvider* upstream_;
  int fetch_limit_;
  std::mutex mu_;
};

// Empty query is a caller bug (upstream must short-circuit to EMPTY).
KnowledgeResult web_search(const std::string& query, SearchProvider& provider, int limit = 3);

}  // namespace dialfuse
