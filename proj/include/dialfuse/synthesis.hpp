#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dialfuse/backends.hpp"
#include "dialfuse/corpus.hpp"
#include "dialfuse/intent.hpp"

namespace dialfuse {

enum class Setting { kInitial, kTransition, kMultiple };

std::string_view to_string(Setting s);
Setting parse_setting(std::string_view s);

// Slots whose values may serve as ODD targets.
inline constexpr std::array<std::string_view, 8> kGoalSlots = {
    "name", "area", "pricerange", "type", "departure", "destination", "department", "day"};

struct Goal {
  std::string value;
  std::string slot;
  std::string domain;
  std::size_t source_turn_index = 0;

  friend bool operator==(const Goal&, const Goal&) = default;
};

// Earliest-positioned ontology value of a goal slot in the user utterance at
// boundary_index; ties go to the longer value, then to the utterance's own
// domain, then to (domain, slot) order. Throws NoGoal when nothing matches,
// ValidationError when the index is not a user turn.
Goal extract_goal(const Dialog& tod, std::size_t boundary_index, const Ontology& ontology);

struct SynthesisConfig {
  Setting setting = Setting::kInitial;
  // 0 selects the per-setting default: 5 for INITIAL, 3 otherwise.
  int max_odd_turns = 0;
  std::vector<std::string> personas;
  std::uint64_t seed = 0;
  // Close every MULTIPLE interlude with a transition turn; when false the
  // interlude ends with an ordinary knowledge-grounded system reply.
  bool transition_after_multiple = true;
  int max_tokens = 48;

  int odd_turn_cap() const;
};

// Throws ValidationError for max_odd_turns < 0 or an INITIAL config with no
// personas.
void validate_config(const SynthesisConfig& config);

// Built-in first-person persona set.
const std::vector<std::string>& default_personas();
std::vector<std::string> load_personas(const std::filesystem::path& path);

struct SynthesisBackends {
  Backend* chat = nullptr;        // proposes ODD openers
  Backend* user = nullptr;        // target-guided user simulator
  Backend* system = nullptr;      // knowledge-grounded chatbot
  Backend* transition = nullptr;  // bridges the last ODD user turn to the next TOD user turn
};

struct OddOpening {
  Turn turn;
  std::optional<std::string> persona;
};

// Persona drawn uniformly from the config with the given seed.
const std::string& sample_persona(const SynthesisConfig& config, std::uint64_t seed);

// INITIAL: persona-conditioned opener, boundary_index must be 0.
// TRANSITION/MULTIPLE: the chat backend continues the TOD context up to the
// boundary (which must follow a system turn); the candidate is kept only if
// the detector labels it ODD, otherwise InitRejected.
OddOpening initialize_odd(const SynthesisConfig& config, const Dialog& tod, std::size_t boundary_index,
                          Backend& chat, const IntentDetector* detector, std::uint64_t seed);

struct OddSnippet {
  std::vector<Turn> turns;
  Goal goal;
  bool terminated_by_goal = false;
  std::optional<Turn> transition_turn;

  int user_turns() const;
};

// Starts from the opener (user ODD turn 1), then alternates system and user
// replies until a user utterance mentions the goal or the cap on user turns
// is reached. The snippet always ends on a user turn. Backend errors are
// rethrown with the ODD turn index appended.
OddSnippet simulate_odd(const std::vector<Turn>& seed_turns, const Goal& goal, Backend& user_backend,
                        Backend& system_backend, const SynthesisConfig& config, std::uint64_t seed);

// System turn conditioned on exactly (last ODD user utterance, next TOD user
// utterance), tagged ODD with is_transition set.
Turn generate_transition(const Turn& last_odd_user, const Turn& next_tod_user, Backend& backend,
                         std::uint64_t seed = 0, int max_tokens = 48);

struct InsertionAttempt {
  std::size_t after_turn = 0;  // index in the source dialog; npos-like 0 for INITIAL
  std::string outcome;         // inserted | no_goal | init_rejected
  std::optional<Goal> goal;
  std::optional<std::string> persona;
  bool terminated_by_goal = false;
  int odd_user_turns = 0;
};

struct SynthesisTrace {
  std::string dialog_id;
  Setting setting = Setting::kInitial;
  std::uint64_t seed = 0;
  std::vector<InsertionAttempt> attempts;
  std::optional<std::string> skipped;  // reason, when the dialog produced no output

  int accepted() const;
};

nlohmann::ordered_json trace_to_json(const SynthesisTrace& t);

struct EnrichResult {
  std::optional<Dialog> dialog;  // absent when skipped
  SynthesisTrace trace;
};

// Builds D+ from one TOD dialog. Per-dialog randomness derives from
// mix_seed(config.seed, tod.id). TRANSITION on fewer than two domains raises
// SettingInapplicable; a NoGoal or rejected opener at the single required
// boundary of INITIAL/TRANSITION skips the dialog (recorded in the trace).
EnrichResult enrich(const Dialog& tod, const SynthesisConfig& config, const SynthesisBackends& backends,
                    const IntentDetector* detector, const Ontology& ontology);

struct SkipRecord {
  std::string dialog_id;
  std::string reason;
};

struct SynthesisResult {
  DialogSet dialogs;
  std::vector<SynthesisTrace> traces;
  std::vector<SkipRecord> skipped;
  CorpusStats stats;
};

// Applies enrich to every dialog. Per-dialog failures (including
// SettingInapplicable) land in the skip report. Backend transport failures
// propagate. Output order is input order for any worker count; with
// workers > 1 the result is reproducible only when every backend reply is a
// function of its request (not of call order).
SynthesisResult synthesize_corpus(const DialogSet& dialogs, const SynthesisConfig& config,
                                  const SynthesisBackends& backends, const IntentDetector* detector,
                                  const Ontology& ontology, int workers = 1);

}  // namespace dialfuse
