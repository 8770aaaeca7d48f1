#include "dialfuse/corpus.hpp"

#include <algorithm>
#include <array>

#include "dialfuse/error.hpp"
#include "dialfuse/text.hpp"

namespace dialfuse {

std::string_view to_string(Speaker s) { return s == Speaker::kUser ? "user" : "system"; }

std::string_view to_string(Mode m) { return m == Mode::kTod ? "tod" : "odd"; }

std::string_view to_string(DialogSource s) {
  switch (s) {
    case DialogSource::kOriginalTod:
      return "original_tod";
    case DialogSource::kSynthesized:
      return "synthesized";
    case DialogSource::kCollected:
      return "collected";
  }
  return "original_tod";
}

Speaker parse_speaker(std::string_view s) {
  std::string l = to_lower(s);
  if (l == "user" || l == "usr") return Speaker::kUser;
  if (l == "system" || l == "sys") return Speaker::kSystem;
  throw ParseError("unknown speaker '" + std::string(s) + "'");
}

Mode parse_mode(std::string_view s) {
  std::string l = to_lower(s);
  if (l == "tod") return Mode::kTod;
  if (l == "odd") return Mode::kOdd;
  throw ParseError("unknown mode '" + std::string(s) + "'");
}

DialogSource parse_source(std::string_view s) {
  std::string l = to_lower(s);
  if (l == "original_tod") return DialogSource::kOriginalTod;
  if (l == "synthesized") return DialogSource::kSynthesized;
  if (l == "collected") return DialogSource::kCollected;
  throw ParseError("unknown dialog source '" + std::string(s) + "'");
}

// ---- BeliefState ---------------------------------------------------------

void BeliefState::set(std::string_view domain, std::string_view slot, std::string value) {
  if (value.empty()) throw ValidationError("empty belief value for " + std::string(domain) + "-" + std::string(slot));
  std::string key = normalize_slot(slot);
  if (domain.empty() || key.empty())
    throw ValidationError("empty belief name for " + std::string(domain) + "-" + std::string(slot));
  domains_[to_lower(domain)][std::move(key)] = std::move(value);
}

std::optional<std::string> BeliefState::get(std::string_view domain, std::string_view slot) const {
  auto d = domains_.find(to_lower(domain));
  if (d == domains_.end()) return std::nullopt;
  auto s = d->second.find(normalize_slot(slot));
  if (s == d->second.end()) return std::nullopt;
  return s->second;
}

void BeliefState::erase(std::string_view domain, std::string_view slot) {
  auto d = domains_.find(to_lower(domain));
  if (d == domains_.end()) return;
  d->second.erase(normalize_slot(slot));
  if (d->second.empty()) domains_.erase(d);
}

void BeliefState::merge(const BeliefState& newer) {
  for (const auto& [domain, slots] : newer.domains_)
    for (const auto& [slot, value] : slots) domains_[domain][slot] = value;
}

std::size_t BeliefState::constraint_count() const {
  std::size_t n = 0;
  for (const auto& [_, slots] : domains_) n += slots.size();
  return n;
}

std::vector<std::string> BeliefState::domains() const {
  std::vector<std::string> out;
  for (const auto& [d, _] : domains_) out.push_back(d);
  return out;
}

const BeliefState::SlotMap* BeliefState::slots(std::string_view domain) const {
  auto it = domains_.find(to_lower(domain));
  return it == domains_.end() ? nullptr : &it->second;
}

BeliefState BeliefState::only(std::string_view domain) const {
  BeliefState out;
  if (const auto* s = slots(domain)) out.domains_[to_lower(domain)] = *s;
  return out;
}

namespace {

constexpr std::array<std::string_view, 17> kSlotOrder = {
    "name",   "type",      "area",     "pricerange", "food",     "stars",
    "internet", "parking", "departure", "destination", "day",    "leaveat",
    "arriveby", "department", "people", "stay",       "time"};

}  // namespace

int slot_rank(std::string_view slot) {
  auto it = std::find(kSlotOrder.begin(), kSlotOrder.end(), slot);
  return it == kSlotOrder.end() ? static_cast<int>(kSlotOrder.size())
                                : static_cast<int>(it - kSlotOrder.begin());
}

std::vector<std::pair<std::string, std::string>> canonical_slots(const BeliefState::SlotMap& slots) {
  std::vector<std::pair<std::string, std::string>> out(slots.begin(), slots.end());
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    int ra = slot_rank(a.first), rb = slot_rank(b.first);
    return ra != rb ? ra < rb : a.first < b.first;
  });
  return out;
}

// ---- Dialog ----------------------------------------------------------------

std::size_t Dialog::turn_pairs() const {
  return static_cast<std::size_t>(
      std::count_if(turns.begin(), turns.end(), [](const Turn& t) { return t.speaker == Speaker::kUser; }));
}

std::vector<std::string> Dialog::domains_in_order() const {
  std::vector<std::string> out;
  for (const auto& t : turns) {
    if (t.mode != Mode::kTod || !t.domain || t.domain->empty()) continue;
    if (std::find(out.begin(), out.end(), *t.domain) == out.end()) out.push_back(*t.domain);
  }
  return out;
}

int count_mode_switches(const Dialog& d) {
  int n = 0;
  for (std::size_t i = 1; i < d.turns.size(); ++i)
    if (d.turns[i].mode != d.turns[i - 1].mode) ++n;
  return n;
}

void validate_dialog(const Dialog& d) {
  if (d.turns.empty()) throw ValidationError("dialog '" + d.id + "' has no turns");
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    Speaker expected = i % 2 == 0 ? Speaker::kUser : Speaker::kSystem;
    if (d.turns[i].speaker != expected)
      throw ValidationError("dialog '" + d.id + "' turn " + std::to_string(i) +
                            ": expected " + std::string(to_string(expected)) + " utterance");
    if (d.turns[i].is_transition && d.turns[i].speaker != Speaker::kSystem)
      throw ValidationError("dialog '" + d.id + "' turn " + std::to_string(i) +
                            ": only system turns can be transitions");
  }
}

// ---- Ontology --------------------------------------------------------------

std::string normalize_slot(std::string_view slot) {
  std::string out;
  for (char c : to_lower(slot))
    if (c != ' ' && c != '_') out.push_back(c);
  return out;
}

std::string normalize_value(std::string_view value) {
  std::string v = squash_spaces(to_lower(value));
  if (v == "dont care" || v == "don't care" || v == "do n't care" || v == "dontcare") return std::string(kDontCare);
  return v;
}

void Ontology::add(std::string_view domain, std::string_view slot, std::string_view value) {
  auto& values = slots_[to_lower(domain)][normalize_slot(slot)];
  std::string v = normalize_value(value);
  if (!v.empty()) values.insert(std::move(v));
}

bool Ontology::has_domain(std::string_view domain) const { return slots_.count(to_lower(domain)) > 0; }

bool Ontology::has_slot(std::string_view domain, std::string_view slot) const {
  auto d = slots_.find(to_lower(domain));
  return d != slots_.end() && d->second.count(normalize_slot(slot)) > 0;
}

const std::set<std::string>* Ontology::values(std::string_view domain, std::string_view slot) const {
  auto d = slots_.find(to_lower(domain));
  if (d == slots_.end()) return nullptr;
  auto s = d->second.find(normalize_slot(slot));
  return s == d->second.end() ? nullptr : &s->second;
}

std::vector<std::string> Ontology::domains() const {
  std::vector<std::string> out;
  for (const auto& [d, _] : slots_) out.push_back(d);
  return out;
}

// ---- placeholders ----------------------------------------------------------

const PlaceholderTable& PlaceholderTable::standard() {
  static const PlaceholderTable table;
  return table;
}

std::optional<std::string> PlaceholderTable::placeholder(std::string_view domain,
                                                         std::string_view slot) const {
  std::string d = to_lower(domain);
  std::string s = normalize_slot(slot);
  if (s == "name" || s == "address" || s == "phone" || s == "postcode" || s == "reference")
    return "[" + d + "_" + s + "]";
  if (s == "trainid") return std::string("[train_id]");
  if (s == "arriveby" || s == "leaveat" || s == "time" || s == "duration") return std::string("[value_time]");
  if (s == "departure" || s == "destination") return std::string("[value_place]");
  if (s == "day") return std::string("[value_day]");
  if (s == "area") return std::string("[value_area]");
  if (s == "food") return std::string("[value_food]");
  if (s == "pricerange") return std::string("[value_pricerange]");
  if (s == "price" || s == "entrancefee") return std::string("[value_price]");
  if (s == "stars" || s == "people" || s == "stay" || s == "choice") return std::string("[value_count]");
  if (s == "department") return std::string("[value_department]");
  if (s == "type") return d == "taxi" ? std::string("[taxi_type]") : std::string("[value_type]");
  return std::nullopt;
}

std::vector<std::string> PlaceholderTable::placeholders(std::string_view domain) const {
  static constexpr std::array<std::string_view, 19> kSlots = {
      "name",  "address", "phone",      "postcode", "reference", "trainid", "arriveby",
      "departure", "day", "area",       "food",     "pricerange", "price",  "stars",
      "department", "type", "leaveat",  "people",   "stay"};
  std::vector<std::string> out;
  for (auto s : kSlots)
    if (auto p = placeholder(domain, s); p && std::find(out.begin(), out.end(), *p) == out.end())
      out.push_back(*p);
  return out;
}

std::string delexicalize(std::string_view text, const DBRecord& entity, const PlaceholderTable& table) {
  struct Candidate {
    std::string value;
    std::string placeholder;
  };
  std::vector<Candidate> candidates;
  for (const auto& [slot, value] : entity.attributes) {
    std::string v = trim(value);
    if (v.empty() || normalize_value(v) == kDontCare) continue;
    if (auto p = table.placeholder(entity.domain, slot)) candidates.push_back({v, *p});
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.value.size() > b.value.size(); });

  // Bytes already claimed by a placeholder, either pre-existing or newly placed.
  std::vector<bool> claimed(text.size(), false);
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '[') continue;
    std::size_t j = text.find(']', i);
    if (j == std::string_view::npos) break;
    for (std::size_t k = i; k <= j; ++k) claimed[k] = true;
    i = j;
  }
  struct Hit {
    std::size_t pos, len;
    const std::string* placeholder;
  };
  std::vector<Hit> hits;
  for (const auto& c : candidates) {
    for (auto pos = find_word(text, c.value); pos; pos = find_word(text, c.value, *pos + 1)) {
      bool free = std::none_of(claimed.begin() + static_cast<std::ptrdiff_t>(*pos),
                               claimed.begin() + static_cast<std::ptrdiff_t>(*pos + c.value.size()),
                               [](bool b) { return b; });
      if (!free) continue;
      std::fill(claimed.begin() + static_cast<std::ptrdiff_t>(*pos),
                claimed.begin() + static_cast<std::ptrdiff_t>(*pos + c.value.size()), true);
      hits.push_back({*pos, c.value.size(), &c.placeholder});
    }
  }
  std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.pos < b.pos; });
  std::string out;
  std::size_t cursor = 0;
  for (const auto& h : hits) {
    out.append(text.substr(cursor, h.pos - cursor));
    out += *h.placeholder;
    cursor = h.pos + h.len;
  }
  out.append(text.substr(cursor));
  return out;
}

// ---- statistics ------------------------------------------------------------

CorpusStats compute_stats(const DialogSet& dialogs) {
  CorpusStats s;
  s.n_dialogs = dialogs.size();
  for (const auto& d : dialogs) {
    s.total_mode_switches += count_mode_switches(d);
    for (const auto& t : d.turns) {
      long tokens = static_cast<long>(split_whitespace(t.text).size());
      bool odd = t.mode == Mode::kOdd;
      (odd ? s.odd_utterances : s.tod_utterances) += 1;
      (odd ? s.odd_tokens : s.tod_tokens) += tokens;
      if (t.speaker == Speaker::kUser) (odd ? s.total_odd_turns : s.total_tod_turns) += 1;
    }
  }
  auto ratio = [](long num, double den) { return den > 0 ? static_cast<double>(num) / den : 0.0; };
  double n = static_cast<double>(s.n_dialogs);
  s.avg_mode_switch = ratio(s.total_mode_switches, n);
  s.avg_odd_turns_per_dialog = ratio(s.total_odd_turns, n);
  s.avg_tod_turns_per_dialog = ratio(s.total_tod_turns, n);
  s.avg_odd_utterance_length_tokens = ratio(s.odd_tokens, static_cast<double>(s.odd_utterances));
  s.avg_tod_utterance_length_tokens = ratio(s.tod_tokens, static_cast<double>(s.tod_utterances));
  return s;
}

nlohmann::json stats_to_json(const CorpusStats& s) {
  return {
      {"dialogs", s.n_dialogs},
      {"avg_mode_switch", s.avg_mode_switch},
      {"total_odd_turns", s.total_odd_turns},
      {"total_tod_turns", s.total_tod_turns},
      {"avg_odd_turns", s.avg_odd_turns_per_dialog},
      {"avg_tod_turns", s.avg_tod_turns_per_dialog},
      {"avg_odd_length", s.avg_odd_utterance_length_tokens},
      {"avg_tod_length", s.avg_tod_utterance_length_tokens},
      {"total_mode_switches", s.total_mode_switches},
      {"odd_utterances", s.odd_utterances},
      {"tod_utterances", s.tod_utterances},
      {"odd_tokens", s.odd_tokens},
      {"tod_tokens", s.tod_tokens},
  };
}

}  // namespace dialfuse
