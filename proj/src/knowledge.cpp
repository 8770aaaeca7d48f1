#include "dialfuse/knowledge.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "dialfuse/error.hpp"
#include "dialfuse/text.hpp"

namespace dialfuse {

using nlohmann::json;
using nlohmann::ordered_json;

void Database::add(DBRecord record) {
  if (record.attributes.empty()) throw ValidationError("database record without attributes");
  std::string domain = to_lower(record.domain);
  record.domain = domain;
  auto& schema = schema_[domain];
  for (const auto& [slot, _] : record.attributes) schema.insert(slot);
  records_[domain].push_back(std::move(record));
}

bool Database::has_domain(std::string_view domain) const { return records_.count(to_lower(domain)) > 0; }

std::vector<std::string> Database::domains() const {
  std::vector<std::string> out;
  for (const auto& [d, _] : records_) out.push_back(d);
  return out;
}

const std::vector<DBRecord>& Database::records(std::string_view domain) const {
  static const std::vector<DBRecord> kNone;
  auto it = records_.find(to_lower(domain));
  return it == records_.end() ? kNone : it->second;
}

const std::set<std::string>& Database::schema(std::string_view domain) const {
  static const std::set<std::string> kNone;
  auto it = schema_.find(to_lower(domain));
  return it == schema_.end() ? kNone : it->second;
}

namespace {

void add_records(Database& db, const std::string& domain, const json& list) {
  for (const auto& item : list) {
    if (!item.is_object()) continue;
    DBRecord r;
    r.domain = domain;
    for (const auto& [key, value] : item.items()) {
      std::string slot = normalize_slot(key);
      if (value.is_string()) {
        r.attributes[slot] = value.get<std::string>();
      } else if (value.is_number_integer()) {
        r.attributes[slot] = std::to_string(value.get<long long>());
      } else if (value.is_number_float()) {
        std::ostringstream os;
        os << value.get<double>();
        r.attributes[slot] = os.str();
      }
    }
    if (!r.attributes.empty()) db.add(std::move(r));
  }
}

}  // namespace

Database database_from_json(const json& j) {
  Database db;
  if (!j.is_object()) throw ParseError("database must be an object of domain -> records");
  for (const auto& [domain, list] : j.items())
    if (list.is_array()) add_records(db, to_lower(domain), list);
  return db;
}

Database load_database(const std::filesystem::path& path) {
  auto parse_file = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open database '" + p.string() + "'");
    try {
      return json::parse(in);
    } catch (const json::parse_error& e) {
      throw ParseError("database '" + p.string() + "': " + e.what());
    }
  };
  if (!std::filesystem::is_directory(path)) return database_from_json(parse_file(path));
  Database db;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(path))
    if (entry.path().filename().string().ends_with("_db.json")) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::string name = f.filename().string();
    std::string domain = to_lower(name.substr(0, name.size() - std::string("_db.json").size()));
    json j = parse_file(f);
    if (j.is_array()) add_records(db, domain, j);
  }
  return db;
}

std::string_view to_string(KnowledgeResult::Kind k) {
  switch (k) {
    case KnowledgeResult::Kind::kDbState:
      return "db_state";
    case KnowledgeResult::Kind::kSearch:
      return "search";
    case KnowledgeResult::Kind::kEmpty:
      return "empty";
  }
  return "empty";
}

std::string knowledge_text(const KnowledgeResult& k) {
  switch (k.kind) {
    case KnowledgeResult::Kind::kEmpty:
      return "";
    case KnowledgeResult::Kind::kDbState: {
      std::string out = "db " + std::to_string(k.db_match_count.value_or(0)) + " matches";
      if (k.top_record) {
        out += " ; " + k.top_record->domain;
        for (const auto& [slot, value] : canonical_slots(k.top_record->attributes))
          out += " " + slot + "=" + value;
      }
      return out;
    }
    case KnowledgeResult::Kind::kSearch:
      return "search " + join(k.snippets.value_or(std::vector<std::string>{}), " | ");
  }
  return "";
}

ordered_json knowledge_to_json(const KnowledgeResult& k) {
  ordered_json j;
  j["kind"] = to_string(k.kind);
  if (k.db_match_count) j["db_match_count"] = *k.db_match_count;
  if (k.top_record) j["top_record"] = {{"domain", k.top_record->domain}, {"attributes", k.top_record->attributes}};
  if (k.snippets) j["snippets"] = *k.snippets;
  return j;
}

KnowledgeResult knowledge_from_json(const json& j) {
  KnowledgeResult k;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "db_state") {
    k.kind = KnowledgeResult::Kind::kDbState;
  } else if (kind == "search") {
    k.kind = KnowledgeResult::Kind::kSearch;
  } else if (kind == "empty") {
    k.kind = KnowledgeResult::Kind::kEmpty;
  } else {
    throw ParseError("unknown knowledge kind '" + kind + "'");
  }
  if (auto it = j.find("db_match_count"); it != j.end()) k.db_match_count = it->get<int>();
  if (auto it = j.find("top_record"); it != j.end())
    k.top_record = DBRecord{it->at("domain").get<std::string>(),
                            it->at("attributes").get<std::map<std::string, std::string>>()};
  if (auto it = j.find("snippets"); it != j.end()) k.snippets = it->get<std::vector<std::string>>();
  return k;
}

std::vector<std::size_t> db_matches(const BeliefState& belief, std::string_view domain, const Database& db) {
  if (!db.has_domain(domain)) throw ValidationError("unknown database domain '" + std::string(domain) + "'");
  const auto& schema = db.schema(domain);
  std::vector<std::pair<std::string, std::string>> constraints;
  if (const auto* slots = belief.slots(domain)) {
    for (const auto& [slot, value] : *slots) {
      if (normalize_value(value) == kDontCare || !schema.count(slot)) continue;
      constraints.emplace_back(slot, to_lower(value));
    }
  }
  std::vector<std::size_t> out;
  const auto& records = db.records(domain);
  for (std::size_t i = 0; i < records.size(); ++i) {
    bool ok = true;
    for (const auto& [slot, value] : constraints) {
      auto it = records[i].attributes.find(slot);
      if (it == records[i].attributes.end() || to_lower(it->second) != value) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(i);
  }
  return out;
}

KnowledgeResult db_lookup(const BeliefState& belief, std::string_view domain, const Database& db) {
  auto matches = db_matches(belief, domain, db);
  KnowledgeResult k;
  k.kind = KnowledgeResult::Kind::kDbState;
  k.db_match_count = static_cast<int>(matches.size());
  if (!matches.empty()) k.top_record = db.records(domain)[matches.front()];
  return k;
}

KnowledgeResult db_lookup(const BeliefState& belief, const Database& db) {
  auto domains = belief.domains();
  if (domains.size() != 1)
    throw ValidationError("db_lookup needs exactly one belief domain, got " + std::to_string(domains.size()));
  return db_lookup(belief, domains.front(), db);
}

// ---- search providers ------------------------------------------------------

MockSearchProvider::MockSearchProvider(std::map<std::string, std::vector<std::string>> table) {
  for (auto& [q, s] : table) add(q, std::move(s));
}

void MockSearchProvider::add(const std::string& query, std::vector<std::string> snippets) {
  table_[squash_spaces(to_lower(query))] = std::move(snippets);
}

std::vector<std::string> MockSearchProvider::search(const std::string& query, int limit) {
  auto it = table_.find(squash_spaces(to_lower(query)));
  if (it == table_.end() || limit <= 0) return {};
  std::vector<std::string> out = it->second;
  if (out.size() > static_cast<std::size_t>(limit)) out.resize(static_cast<std::size_t>(limit));
  return out;
}

MockSearchProvider load_mock_search(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open search fixture '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("search fixture '" + path.string() + "': " + e.what());
  }
  MockSearchProvider p;
  for (const auto& [q, s] : j.items()) p.add(q, s.get<std::vector<std::string>>());
  return p;
}

CachingSearchProvider::CachingSearchProvider(std::filesystem::path dir, SearchProvider* upstream,
                                             int fetch_limit)
    : dir_(std::move(dir)), upstream_(upstream), fetch_limit_(fetch_limit) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path CachingSearchProvider::entry_path(const std::string& query) const {
  std::ostringstream name;
  name << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(squash_spaces(to_lower(query))) << ".json";
  return dir_ / name.str();
}

std::vector<std::string> CachingSearchProvider::search(const std::string& query, int limit) {
  auto path = entry_path(query);
  std::vector<std::string> snippets;
  {
    std::lock_guard lock(mu_);
    if (std::ifstream in(path); in) {
      json j = json::parse(in);
      snippets = j.at("snippets").get<std::vector<std::string>>();
    } else {
      if (!upstream_) throw ProviderError("search cache miss for '" + query + "' and no upstream provider");
      snippets = upstream_->search(query, fetch_limit_);
      ordered_json entry;
      entry["query"] = query;
      entry["snippets"] = snippets;
      auto tmp = path;
      tmp += ".tmp";
      {
        std::ofstream out(tmp, std::ios::trunc);
        out << entry.dump(2) << '\n';
      }
      std::filesystem::rename(tmp, path);
    }
  }
  if (limit >= 0 && snippets.size() > static_cast<std::size_t>(limit)) snippets.resize(static_cast<std::size_t>(limit));
  return snippets;
}

KnowledgeResult web_search(const std::string& query, SearchProvider& provider, int limit) {
  if (trim(query).empty()) throw ValidationError("web_search called with an empty query");
  if (limit <= 0) return KnowledgeResult::empty();
  KnowledgeResult k;
  k.kind = KnowledgeResult::Kind::kSearch;
  auto snippets = provider.search(query, limit);
  if (snippets.size() > static_cast<std::size_t>(limit)) snippets.resize(static_cast<std::size_t>(limit));
  k.snippets = std::move(snippets);
  return k;
}

}  // namespace dialfuse
