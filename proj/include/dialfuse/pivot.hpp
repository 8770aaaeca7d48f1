#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dialfuse/backends.hpp"
#include "dialfuse/corpus.hpp"
#include "dialfuse/intent.hpp"
#include "dialfuse/knowledge.hpp"
#include "dialfuse/toy_model.hpp"

namespace dialfuse {

// ---- state codec -----------------------------------------------------------

// TOD: query is a canonical belief serialization. ODD: query is a search
// query with single spaces and no surrounding blanks; empty means no
// external knowledge is needed.
struct State {
  Mode mode = Mode::kOdd;
  std::string query;

  friend bool operator==(const State&, const State&) = default;
};

// Canonical belief text: "domain slot=value ..." per domain, domains in
// lexical order joined by " ; ", slots in canonical slot order.
std::string serialize_belief(const BeliefState& b);
// Inverse of serialize_belief; accepts any slot order and spacing. Throws
// StateParseError on grammar violations.
BeliefState parse_belief(std::string_view text);

// "tod: <belief>" / "odd: <query>"; a bare "tod:" / "odd:" for empty queries.
std::string encode_state(const State& s);

// Total: never throws, never crashes.
struct StateParse {
  std::optional<State> state;
  std::string error;
};
StateParse try_parse_state(std::string_view text);
// Throws StateParseError.
State parse_state(std::string_view text);

State tod_state(const BeliefState& b);

// ---- history -----------------------------------------------------------------

struct HistoryWindow {
  std::vector<std::pair<Speaker, std::string>> utterances;
  int window_k = 2;

  friend bool operator==(const HistoryWindow&, const HistoryWindow&) = default;
};

// The last 2k+1 utterances ending at the user turn turn_index.
HistoryWindow build_history(const Dialog& dialog, std::size_t turn_index, int window_k = 2);

// ---- training examples -----------------------------------------------------

struct TrainingExample {
  std::string dialog_id;
  std::size_t turn_index = 0;  // the system turn
  HistoryWindow history;
  State state;
  KnowledgeResult knowledge;
  std::string response;
};

struct ExampleOptions {
  int window_k = 2;
  int search_limit = 3;
};

// Domain whose DB record grounds a TOD turn: the turn's domain when the
// belief constrains it, else the belief's only domain, else none.
std::optional<std::string> active_domain(const Turn& turn, const BeliefState& belief);

// One example per system turn. TOD state queries carry the belief merged
// over every earlier TOD system turn; ODD queries come from the turn's
// search annotation. A TOD system turn without a belief -> ValidationError.
std::vector<TrainingExample> make_training_examples(const Dialog& dialog, const Database& db,
                                                    SearchProvider* search, const ExampleOptions& options = {});

nlohmann::ordered_json example_to_json(const TrainingExample& e);
TrainingExample example_from_json(const nlohmann::json& j);

// ---- serialization ---------------------------------------------------------

enum class TaskTag { kState, kResponse };
std::string_view to_string(TaskTag t);

struct Budget {
  std::size_t input = 512;
  std::size_t history = 256;
};

inline constexpr std::string_view kPadToken = "<pad>";

struct SerializedPair {
  std::vector<std::string> input_tokens;  // exactly budget.input long
  std::vector<std::string> target_tokens;
  TaskTag task = TaskTag::kState;
  std::size_t history_tokens = 0;
  std::size_t content_tokens = 0;  // input tokens before padding
  bool history_truncated = false;
  bool knowledge_truncated = false;
};

// Conditioning segments after budget enforcement. STATE: history only.
// RESPONSE: history, state, knowledge. History is left-truncated to the
// history budget, knowledge right-truncated to what remains of the input.
struct ConditionBuild {
  std::vector<Segment> segments;
  std::size_t history_tokens = 0;
  bool history_truncated = false;
  bool knowledge_truncated = false;
};
ConditionBuild build_condition(const HistoryWindow& history, TaskTag task, const State* state,
                               const KnowledgeResult* knowledge, const Budget& budget = {});

SerializedPair serialize(const TrainingExample& example, TaskTag task, const Budget& budget = {});

// ---- model -----------------------------------------------------------------

// Toy-model token ids of a serialized pair, padding removed.
SeqPair to_seq_pair(const Vocabulary& vocab, const SerializedPair& pair);

Vocabulary pivot_vocabulary(const std::vector<TrainingExample>& examples, const Budget& budget = {},
                            std::size_t max_size = 16384);

// Loss of one example: L_S + L_R.
double pivot_example_loss(const ToyModel& model, const TrainingExample& example, const Budget& budget = {});

// Per-epoch mean of L_S + L_R over examples, via fit_items.
TrainReport train_pivot(const std::vector<TrainingExample>& examples, ToyModel& model, const FitOptions& options,
                        const Budget& budget = {});

// ---- inference -------------------------------------------------------------

// Knowledge routing for a parsed state. TOD states consult the database for
// the active domain; ODD states search when the query is nonempty.
class KnowledgeRouter {
 public:
  KnowledgeRouter(const Database* db, SearchProvider* search, int search_limit = 3)
      : db_(db), search_(search), search_limit_(search_limit) {}
  virtual ~KnowledgeRouter() = default;

  KnowledgeResult route(const State& state);

  // Extension points, also used by tests to observe routing.
  virtual KnowledgeResult lookup_db(const BeliefState& belief, const std::string& domain);
  virtual KnowledgeResult search(const std::string& query);

  void reset() { previous_ = BeliefState(); active_.reset(); }

 private:
  const Database* db_;
  SearchProvider* search_;
  int search_limit_;
  BeliefState previous_;
  std::optional<std::string> active_;
};

struct PivotSession {
  std::vector<std::pair<Speaker, std::string>> history;
  int window_k = 2;
  Budget budget;
  int max_tokens = 48;
  std::uint64_t seed = 0;
};

struct ChatOutcome {
  State state;
  KnowledgeResult knowledge;
  std::string response;
  std::string raw_state;
  bool fallback = false;
  std::string fallback_reason;
};

// Fills "[slot]" placeholders from the record.
std::string lexicalize(const std::string& text, const DBRecord& record);

// predict state -> route knowledge -> generate response. An unparseable
// state falls back to the detector's mode (TOD without one) and an empty
// query, and the outcome is flagged. Both utterances are appended to the
// session history.
ChatOutcome chat_turn(PivotSession& session, const std::string& user_utterance, Backend& model,
                      KnowledgeRouter& router, const IntentDetector* detector = nullptr);

nlohmann::ordered_json outcome_to_json(const ChatOutcome& o);

// ---- corpus prediction -----------------------------------------------------

struct PredictedTurn {
  std::size_t turn_index = 0;  // system turn in the gold dialog
  State state;
  std::string response;  // delexicalized
};

struct DialogPrediction {
  std::string dialog_id;
  std::vector<PredictedTurn> turns;
};

// Runs the model over every system turn with gold history (teacher forcing).
// TOD knowledge routes through the predicted belief, never the gold one.
std::vector<DialogPrediction> predict_corpus(const DialogSet& gold, Backend& model, const Database& db,
                                             SearchProvider* search, const ExampleOptions& options = {},
                                             std::uint64_t seed = 0);

nlohmann::ordered_json prediction_to_json(const DialogPrediction& p);
DialogPrediction prediction_from_json(const nlohmann::json& j);

}  // namespace dialfuse
