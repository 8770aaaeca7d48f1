#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace dialfuse {

enum class Speaker { kUser, kSystem };
enum class Mode { kTod, kOdd };
enum class DialogSource { kOriginalTod, kSynthesized, kCollected };

std::string_view to_string(Speaker s);
std::string_view to_string(Mode m);
std::string_view to_string(DialogSource s);
Speaker parse_speaker(std::string_view s);
Mode parse_mode(std::string_view s);
DialogSource parse_source(std::string_view s);

inline constexpr std::string_view kDontCare = "dontcare";

// (domain, slot) -> value. Domains and slots are stored lowercased.
class BeliefState {
 public:
  using SlotMap = std::map<std::string, std::string>;

  void set(std::string_view domain, std::string_view slot, std::string value);
  std::optional<std::string> get(std::string_view domain, std::string_view slot) const;
  void erase(std::string_view domain, std::string_view slot);

  // Later values override earlier ones, per (domain, slot).
  void merge(const BeliefState& newer);

  bool empty() const { return domains_.empty(); }
  std::size_t constraint_count() const;
  std::vector<std::string> domains() const;
  const SlotMap* slots(std::string_view domain) const;
  const std::map<std::string, SlotMap>& entries() const { return domains_; }

  // Restriction to one domain.
  BeliefState only(std::string_view domain) const;

  friend bool operator==(const BeliefState&, const BeliefState&) = default;

 private:
  std::map<std::string, SlotMap> domains_;
};

// Canonical slot order used by every serialization of a belief state.
int slot_rank(std::string_view slot);
std::vector<std::pair<std::string, std::string>> canonical_slots(const BeliefState::SlotMap& slots);

struct DomainGoal {
  std::map<std::string, std::string> info;
  std::vector<std::string> reqt;
  std::map<std::string, std::string> book;

  friend bool operator==(const DomainGoal&, const DomainGoal&) = default;
};

// Information-seeking goal attached to a dialog.
struct GoalCard {
  std::map<std::string, DomainGoal> domains;

  friend bool operator==(const GoalCard&, const GoalCard&) = default;
};

struct Turn {
  Speaker speaker = Speaker::kUser;
  std::string text;
  std::optional<std::string> delex_text;
  Mode mode = Mode::kTod;
  std::optional<std::string> domain;
  std::optional<BeliefState> belief;
  // System turn bridging an ODD interlude back into the task.
  bool is_transition = false;
  // Annotated web-search query for ODD system turns, if any.
  std::optional<std::string> search_query;

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct Dialog {
  std::string id;
  std::vector<Turn> turns;
  std::optional<GoalCard> goal_card;
  DialogSource source = DialogSource::kOriginalTod;

  friend bool operator==(const Dialog&, const Dialog&) = default;

  // Number of user/system exchanges.
  std::size_t turn_pairs() const;
  // Distinct turn domains in order of first appearance.
  std::vector<std::string> domains_in_order() const;
};

using DialogSet = std::vector<Dialog>;

// Adjacent utterance pairs whose modes differ.
int count_mode_switches(const Dialog& d);

// Throws ValidationError when the dialog is empty, does not alternate
// USER/SYSTEM starting with USER, or flags a user turn as a transition.
void validate_dialog(const Dialog& d);

struct DBRecord {
  std::string domain;
  std::map<std::string, std::string> attributes;

  friend bool operator==(const DBRecord&, const DBRecord&) = default;
};

// Valid (domain, slot, value) triples.
class Ontology {
 public:
  void add(std::string_view domain, std::string_view slot, std::string_view value);
  bool has_domain(std::string_view domain) const;
  bool has_slot(std::string_view domain, std::string_view slot) const;
  const std::set<std::string>* values(std::string_view domain, std::string_view slot) const;
  std::vector<std::string> domains() const;
  const std::map<std::string, std::map<std::string, std::set<std::string>>>& entries() const {
    return slots_;
  }

 private:
  std::map<std::string, std::map<std::string, std::set<std::string>>> slots_;
};

// MultiWOZ ontology.json ("train-semi-destination": [...]) or the nested
// {"train": {"destination": [...]}} layout.
Ontology load_ontology(const std::filesystem::path& path);
Ontology ontology_from_json(const nlohmann::json& j);

// Normalizes MultiWOZ slot names ("leaveAt" -> "leaveat", "trainID" -> "trainid").
std::string normalize_slot(std::string_view slot);
std::string normalize_value(std::string_view value);

// Slot -> placeholder vocabulary (MultiWOZ convention).
class PlaceholderTable {
 public:
  static const PlaceholderTable& standard();

  // Placeholder for a slot of a domain, or nullopt when the slot is never
  // delexicalized (yes/no flags and the like).
  std::optional<std::string> placeholder(std::string_view domain, std::string_view slot) const;
  // Every placeholder the table can emit for a domain.
  std::vector<std::string> placeholders(std::string_view domain) const;

 private:
  PlaceholderTable() = default;
};

// Replaces entity values in `text` with their placeholders. Case-insensitive,
// longest value first, word-boundary anchored; existing placeholders are
// left untouched so the operation is idempotent.
std::string delexicalize(std::string_view text, const DBRecord& entity,
                         const PlaceholderTable& table = PlaceholderTable::standard());

struct CorpusStats {
  std::size_t n_dialogs = 0;
  long total_mode_switches = 0;
  long total_odd_turns = 0;
  long total_tod_turns = 0;
  long odd_utterances = 0;
  long tod_utterances = 0;
  long odd_tokens = 0;
  long tod_tokens = 0;

  double avg_mode_switch = 0;
  double avg_odd_turns_per_dialog = 0;
  double avg_tod_turns_per_dialog = 0;
  double avg_odd_utterance_length_tokens = 0;
  double avg_tod_utterance_length_tokens = 0;
};

// A "turn" is a user/system exchange and takes the mode of its user
// utterance; lengths are whitespace tokens per utterance of that mode.
CorpusStats compute_stats(const DialogSet& dialogs);

nlohmann::json stats_to_json(const CorpusStats& s);

// ---- persistence -------------------------------------------------------

nlohmann::ordered_json dialog_to_json(const Dialog& d);
Dialog dialog_from_json(const nlohmann::json& j);
nlohmann::ordered_json goal_to_json(const GoalCard& g);
GoalCard goal_from_json(const nlohmann::json& j);
nlohmann::ordered_json belief_to_json(const BeliefState& b);
BeliefState belief_from_json(const nlohmann::json& j);

void write_jsonl(std::ostream& out, const DialogSet& dialogs);
void save_corpus(const DialogSet& dialogs, const std::filesystem::path& path);
DialogSet read_jsonl(std::istream& in, const std::string& origin = "<stream>");
DialogSet load_fused_corpus(const std::filesystem::path& path);

// MultiWOZ 2.1 data.json layout: {"<id>.json": {"goal": ..., "log": [...]}}.
// Every turn is tagged TOD; belief states come from system-turn metadata.
DialogSet load_tod_corpus(const std::filesystem::path& path, const Ontology& ontology);
DialogSet tod_corpus_from_json(const nlohmann::json& j, const Ontology& ontology);

}  // namespace dialfuse
