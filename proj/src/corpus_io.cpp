#include <fstream>
#include <sstream>

#include "dialfuse/corpus.hpp"
#include "dialfuse/error.hpp"
#include "dialfuse/text.hpp"

namespace dialfuse {

using nlohmann::json;
using nlohmann::ordered_json;

// ---- JSONL dialog schema --------------------------------------------------
//
// {"id": str, "source": "original_tod"|"synthesized"|"collected",
//  "goal": {domain: {"info": {slot: value}, "reqt": [slot], "book": {slot: value}}},
//  "turns": [{"speaker": "user"|"system", "mode": "tod"|"odd", "text": str,
//             "delex": str?, "domain": str?, "belief": {domain: {slot: value}}?,
//             "is_transition": bool, "search_query": str?}]}

ordered_json belief_to_json(const BeliefState& b) {
  ordered_json j = ordered_json::object();
  for (const auto& [domain, slots] : b.entries()) {
    ordered_json s = ordered_json::object();
    for (const auto& [slot, value] : canonical_slots(slots)) s[slot] = value;
    j[domain] = std::move(s);
  }
  return j;
}

BeliefState belief_from_json(const json& j) {
  BeliefState b;
  if (!j.is_object()) throw ParseError("belief state must be an object");
  for (const auto& [domain, slots] : j.items()) {
    if (!slots.is_object()) throw ParseError("belief for domain '" + domain + "' must be an object");
    for (const auto& [slot, value] : slots.items()) b.set(domain, slot, value.get<std::string>());
  }
  return b;
}

ordered_json goal_to_json(const GoalCard& g) {
  ordered_json j = ordered_json::object();
  for (const auto& [domain, dg] : g.domains) {
    ordered_json d;
    d["info"] = dg.info;
    d["reqt"] = dg.reqt;
    d["book"] = dg.book;
    j[domain] = std::move(d);
  }
  return j;
}

GoalCard goal_from_json(const json& j) {
  GoalCard g;
  if (!j.is_object()) throw ParseError("goal card must be an object");
  for (const auto& [domain, d] : j.items()) {
    if (!d.is_object()) continue;
    DomainGoal dg;
    if (auto it = d.find("info"); it != d.end() && it->is_object())
      for (const auto& [slot, value] : it->items())
        if (value.is_string()) dg.info[normalize_slot(slot)] = normalize_value(value.get<std::string>());
    if (auto it = d.find("reqt"); it != d.end() && it->is_array())
      for (const auto& slot : *it) dg.reqt.push_back(normalize_slot(slot.get<std::string>()));
    if (auto it = d.find("book"); it != d.end() && it->is_object())
      for (const auto& [slot, value] : it->items())
        if (value.is_string()) dg.book[normalize_slot(slot)] = normalize_value(value.get<std::string>());
    g.domains[to_lower(domain)] = std::move(dg);
  }
  return g;
}

ordered_json dialog_to_json(const Dialog& d) {
  ordered_json j;
  j["id"] = d.id;
  j["source"] = to_string(d.source);
  if (d.goal_card) j["goal"] = goal_to_json(*d.goal_card);
  ordered_json turns = ordered_json::array();
  for (const auto& t : d.turns) {
    ordered_json tj;
    tj["speaker"] = to_string(t.speaker);
    tj["mode"] = to_string(t.mode);
    tj["text"] = t.text;
    if (t.delex_text) tj["delex"] = *t.delex_text;
    if (t.domain) tj["domain"] = *t.domain;
    if (t.belief) tj["belief"] = belief_to_json(*t.belief);
    tj["is_transition"] = t.is_transition;
    if (t.search_query) tj["search_query"] = *t.search_query;
    turns.push_back(std::move(tj));
  }
  j["turns"] = std::move(turns);
  return j;
}

Dialog dialog_from_json(const json& j) {
  Dialog d;
  if (!j.is_object()) throw ParseError("dialog record must be an object");
  d.id = j.value("id", std::string());
  auto fail = [&](const std::string& msg) -> ParseError {
    return ParseError("dialog '" + d.id + "': " + msg);
  };
  if (d.id.empty()) throw ParseError("dialog record without an id");
  try {
    d.source = parse_source(j.value("source", std::string("original_tod")));
    if (auto g = j.find("goal"); g != j.end() && !g->is_null()) d.goal_card = goal_from_json(*g);
    auto turns = j.find("turns");
    if (turns == j.end() || !turns->is_array()) throw ParseError("missing 'turns' array");
    for (std::size_t i = 0; i < turns->size(); ++i) {
      const json& tj = (*turns)[i];
      Turn t;
      t.speaker = parse_speaker(tj.at("speaker").get<std::string>());
      if (!tj.contains("mode"))
        throw ValidationError("dialog '" + d.id + "' turn " + std::to_string(i) + " has no mode tag");
      t.mode = parse_mode(tj.at("mode").get<std::string>());
      t.text = tj.at("text").get<std::string>();
      if (auto it = tj.find("delex"); it != tj.end() && !it->is_null()) t.delex_text = it->get<std::string>();
      if (auto it = tj.find("domain"); it != tj.end() && !it->is_null()) t.domain = it->get<std::string>();
      if (auto it = tj.find("belief"); it != tj.end() && !it->is_null()) t.belief = belief_from_json(*it);
      t.is_transition = tj.value("is_transition", false);
      if (auto it = tj.find("search_query"); it != tj.end() && !it->is_null())
        t.search_query = it->get<std::string>();
      d.turns.push_back(std::move(t));
    }
  } catch (const ValidationError&) {
    throw;
  } catch (const json::exception& e) {
    throw fail(e.what());
  } catch (const ParseError& e) {
    throw fail(e.what());
  }
  validate_dialog(d);
  return d;
}

void write_jsonl(std::ostream& out, const DialogSet& dialogs) {
  for (const auto& d : dialogs) out << dialog_to_json(d).dump() << '\n';
}

void save_corpus(const DialogSet& dialogs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_jsonl(out, dialogs);
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

DialogSet read_jsonl(std::istream& in, const std::string& origin) {
  DialogSet out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(dialog_from_json(j));
  }
  return out;
}

DialogSet load_fused_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_jsonl(in, path.string());
}

// ---- ontology ------------------------------------------------------------

Ontology ontology_from_json(const json& j) {
  Ontology o;
  if (!j.is_object()) throw ParseError("ontology must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (value.is_object()) {
      // {"train": {"destination": [...]}}
      for (const auto& [slot, values] : value.items()) {
        o.add(key, slot, "");
        for (const auto& v : values) o.add(key, slot, v.get<std::string>());
      }
      continue;
    }
    // "train-semi-destination" / "hotel-book stay" / "train-day"
    auto dash = key.find('-');
    if (dash == std::string::npos) throw ParseError("ontology key '" + key + "' has no domain prefix");
    std::string domain = key.substr(0, dash);
    std::string slot = key.substr(dash + 1);
    for (std::string_view prefix : {"semi-", "book-", "book ", "semi "})
      if (slot.rfind(prefix, 0) == 0) slot = slot.substr(prefix.size());
    if (!value.is_array()) throw ParseError("ontology entry '" + key + "' must be a list");
    if (value.empty()) o.add(domain, slot, "");
    for (const auto& v : value) o.add(domain, slot, v.get<std::string>());
  }
  return o;
}

Ontology load_ontology(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ontology '" + path.string() + "'");
  try {
    return ontology_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ParseError("ontology '" + path.string() + "': " + e.what());
  }
}

// ---- MultiWOZ 2.1 reader --------------------------------------------------

namespace {

bool is_empty_value(const std::string& v) {
  return v.empty() || v == "not mentioned" || v == "none";
}

BeliefState belief_from_metadata(const json& metadata, const Ontology& ontology, const std::string& id) {
  BeliefState b;
  if (!metadata.is_object()) return b;
  for (const auto& [domain, parts] : metadata.items()) {
    if (!parts.is_object()) continue;
    for (const char* part : {"semi", "book"}) {
      auto p = parts.find(part);
      if (p == parts.end() || !p->is_object()) continue;
      for (const auto& [slot, value] : p->items()) {
        if (slot == "booked" || !value.is_string()) continue;
        std::string v = normalize_value(value.get<std::string>());
        if (is_empty_value(v)) continue;
        if (!ontology.has_slot(domain, slot))
          throw ValidationError("dialog '" + id + "': unknown slot '" + domain + "-" + slot + "'");
        b.set(domain, slot, v);
      }
    }
  }
  return b;
}

std::optional<std::string> act_domain(const json& turn) {
  auto acts = turn.find("dialog_act");
  if (acts == turn.end() || !acts->is_object()) return std::nullopt;
  for (const auto& [act, _] : acts->items()) {
    auto dash = act.find('-');
    std::string domain = to_lower(act.substr(0, dash));
    if (domain != "general" && domain != "booking") return domain;
  }
  return std::nullopt;
}

std::optional<std::string> changed_domain(const BeliefState& prev, const BeliefState& cur) {
  for (const auto& [domain, slots] : cur.entries()) {
    const auto* before = prev.slots(domain);
    if (!before || *before != slots) return domain;
  }
  return std::nullopt;
}

Dialog read_multiwoz_dialog(const std::string& raw_id, const json& body, const Ontology& ontology) {
  Dialog d;
  d.id = raw_id;
  if (d.id.size() > 5 && d.id.ends_with(".json")) d.id.resize(d.id.size() - 5);
  d.source = DialogSource::kOriginalTod;
  try {
    if (!body.is_object()) throw ParseError("dialog body must be an object");
    if (auto g = body.find("goal"); g != body.end() && g->is_object()) {
      json domains = json::object();
      for (const auto& [k, v] : g->items())
        if (v.is_object() && !v.empty() && k != "topic") domains[k] = v;
      if (!domains.empty()) d.goal_card = goal_from_json(domains);
    }
    const json& log = body.at("log");
    if (!log.is_array()) throw ParseError("'log' must be an array");
    BeliefState prev;
    std::optional<std::string> domain;
    for (std::size_t i = 0; i < log.size(); i += 2) {
      const json& user = log[i];
      Turn u;
      u.speaker = Speaker::kUser;
      u.mode = Mode::kTod;
      u.text = trim(user.at("text").get<std::string>());
      std::optional<Turn> sys;
      BeliefState cur = prev;
      if (i + 1 < log.size()) {
        const json& sj = log[i + 1];
        Turn s;
        s.speaker = Speaker::kSystem;
        s.mode = Mode::kTod;
        s.text = trim(sj.at("text").get<std::string>());
        cur = belief_from_metadata(sj.value("metadata", json::object()), ontology, d.id);
        s.belief = cur;
        if (auto it = sj.find("delex"); it != sj.end() && it->is_string()) s.delex_text = it->get<std::string>();
        sys = std::move(s);
      }
      if (auto c = changed_domain(prev, cur)) {
        domain = c;
      } else if (auto a = act_domain(user)) {
        domain = a;
      } else if (i + 1 < log.size()) {
        if (auto a2 = act_domain(log[i + 1])) domain = a2;
      }
      u.domain = domain;
      d.turns.push_back(std::move(u));
      if (sys) {
        sys->domain = domain;
        d.turns.push_back(std::move(*sys));
      }
      prev = std::move(cur);
    }
  } catch (const ValidationError&) {
    throw;
  } catch (const json::exception& e) {
    throw ParseError("dialog '" + d.id + "': " + e.what());
  } catch (const ParseError& e) {
    throw ParseError("dialog '" + d.id + "': " + e.what());
  }
  validate_dialog(d);
  return d;
}

}  // namespace

DialogSet tod_corpus_from_json(const json& j, const Ontology& ontology) {
  DialogSet out;
  if (j.is_object()) {
    for (const auto& [id, body] : j.items()) out.push_back(read_multiwoz_dialog(id, body, ontology));
  } else if (j.is_array()) {
    for (const auto& body : j) {
      std::string id = body.value("dialogue_id", body.value("id", std::string()));
      if (id.empty()) throw ParseError("dialog without an id in corpus list");
      out.push_back(read_multiwoz_dialog(id, body, ontology));
    }
  } else {
    throw ParseError("corpus must be a JSON object or array");
  }
  return out;
}

DialogSet load_tod_corpus(const std::filesystem::path& path, const Ontology& ontology) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("corpus '" + path.string() + "': " + e.what());
  }
  return tod_corpus_from_json(j, ontology);
}

}  // namespace dialfuse
