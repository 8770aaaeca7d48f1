#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dialfuse/backends.hpp"
#include "dialfuse/corpus.hpp"
#include "dialfuse/evalkit.hpp"
#include "dialfuse/intent.hpp"
#include "dialfuse/knowledge.hpp"
#include "dialfuse/pivot.hpp"

namespace dialfuse {

inline constexpr int kServiceSchemaVersion = 1;

enum class SessionStatus { kOpen, kRated, kAbandoned };
std::string_view to_string(SessionStatus s);
SessionStatus parse_session_status(std::string_view s);

struct SessionTurn {
  Speaker speaker = Speaker::kUser;
  std::string text;
  std::optional<State> state;                 // system turns only
  std::optional<std::string> knowledge_kind;  // system turns only
  bool fallback = false;
};

struct Session {
  std::string id;
  std::string model_name;
  GoalCard goal_card;
  std::vector<SessionTurn> turns;  // alternating, user first
  SessionStatus status = SessionStatus::kOpen;
  std::int64_t created_at = 0;   // ms since epoch
  std::int64_t last_active = 0;  // ms since epoch
};

struct Rating {
  std::string session_id;
  bool success = false;
  int appropriateness = 0;  // 1..5
  int engagingness = 0;     // 1..5
  std::string rater_id;
};

enum class Preference { kA, kB, kTie };
std::string_view to_string(Preference p);
Preference parse_preference(std::string_view s);

// Dialogs are session ids; each side is scored on both scales.
struct PairwiseJudgment {
  std::string dialog_a_id;
  std::string dialog_b_id;
  Preference overall = Preference::kTie;
  int a_appropriateness = 0, a_engagingness = 0;
  int b_appropriateness = 0, b_engagingness = 0;
  std::string rater_id;
};

// Throws ValidationError on an out-of-range score, a missing rater or a == b.
void validate_rating(const Rating& r);
void validate_judgment(const PairwiseJudgment& j);

nlohmann::ordered_json session_to_json(const Session& s);
nlohmann::ordered_json rating_to_json(const Rating& r);
Rating rating_from_json(const nlohmann::json& j);
nlohmann::ordered_json judgment_to_json(const PairwiseJudgment& j);
PairwiseJudgment judgment_from_json(const nlohmann::json& j);

// Draws single-domain goal cards. Multi-domain cards in the pool are ignored;
// a pool without any single-domain card -> ValidationError.
class GoalSampler {
 public:
  explicit GoalSampler(std::vector<GoalCard> pool);
  static GoalSampler from_corpus(const DialogSet& dialogs);

  GoalCard sample(std::uint64_t seed) const;
  std::size_t size() const { return pool_.size(); }

 private:
  std::vector<GoalCard> pool_;
};

// Append-only JSONL event log. One line per event, flushed before the call
// returns; an empty path keeps events in memory only. Events:
//   session  {id, model, goal, created_at}
//   turn     {session, speaker, text, state?, knowledge?, fallback?}
//   status   {session, status}
//   rating   {...Rating}
//   pairwise {...PairwiseJudgment}
class EventLog {
 public:
  explicit EventLog(std::filesystem::path path = {});

  void append(const nlohmann::ordered_json& event);
  std::vector<nlohmann::json> events() const;
  const std::filesystem::path& path() const { return path_; }

  // Every event of a log file; unparseable lines -> ParseError.
  static std::vector<nlohmann::json> read(const std::filesystem::path& path);

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::vector<nlohmann::json> events_;
};

struct ModelStats {
  std::size_t n = 0;
  MeanStd success, appropriateness, engagingness;  // success as a 0..1 rate
};

// Model pair in lexical order; "win" means the first model's dialog won.
struct PairwiseStats {
  std::size_t n = 0;
  double win = 0, tie = 0, loss = 0;  // percent
  double p_overall = 1;               // bootstrap p for win rate != loss rate
  double p_appropriateness = 1;       // bootstrap p for mean score difference
  double p_engagingness = 1;
};

struct HumanEvalTables {
  std::map<std::string, ModelStats> models;
  std::map<std::pair<std::string, std::string>, PairwiseStats> pairs;
};

// Recomputes every table from raw events. Ratings and judgments whose
// sessions are unknown are ignored. No events -> empty tables.
HumanEvalTables aggregate_human_eval(const std::vector<nlohmann::json>& events, std::uint64_t seed = 0,
                                     int resamples = 10000);
nlohmann::ordered_json tables_to_json(const HumanEvalTables& t);

struct ModelEntry {
  std::shared_ptr<Backend> backend;
  const Database* db = nullptr;
  SearchProvider* search = nullptr;
  const IntentDetector* detector = nullptr;
  int search_limit = 3;
};

struct ServiceConfig {
  std::filesystem::path store;  // empty -> in-memory
  std::chrono::milliseconds idle_timeout{30 * 60 * 1000};
  std::uint64_t seed = 0;
  int bootstrap_resamples = 10000;
  int window_k = 2;
  int max_tokens = 48;
};

struct MessageReply {
  std::string response;
  ChatOutcome outcome;
  std::size_t turn_index = 0;  // index of the system turn
};

class EvalService {
 public:
  using Clock = std::function<std::int64_t()>;  // ms since epoch

  EvalService(ServiceConfig config, GoalSampler sampler, Clock clock = {});
  ~EvalService();

  // Duplicate name -> Conflict.
  void register_model(const std::string& name, ModelEntry entry);
  std::vector<std::string> models() const;

  // Unknown model -> NotFound.
  Session create_session(const std::string& model_name);
  // Unknown id -> NotFound. Applies the idle timeout first.
  Session get_session(const std::string& id);

  // Not OPEN -> Conflict; empty text -> ValidationError. Calls on one
  // session run one at a time in arrival order.
  MessageReply post_message(const std::string& session_id, const std::string& text);

  // Bounds -> ValidationError; unknown session -> NotFound; abandoned
  // session or a second rating by the same rater -> Conflict.
  void submit_rating(const Rating& rating);
  // Same rater judging the same pair twice -> Conflict.
  void submit_pairwise(const PairwiseJudgment& judgment);

  // Summary kept up to date on every write.
  HumanEvalTables aggregates() const;

  // Marks idle OPEN sessions ABANDONED; returns how many changed.
  std::size_t sweep_idle();

  const EventLog& log() const;

 private:
  struct Live;
  Live& live(const std::string& id);
  void expire_locked(Live& l, std::int64_t now);
  void refresh_summary();

  ServiceConfig config_;
  GoalSampler sampler_;
  Clock clock_;
  std::unique_ptr<EventLog> log_;

  mutable std::mutex mu_;
  std::map<std::string, ModelEntry> models_;
  std::map<std::string, std::unique_ptr<Live>> sessions_;
  std::vector<Rating> ratings_;
  std::vector<PairwiseJudgment> judgments_;
  std::size_t next_session_ = 0;
  HumanEvalTables summary_;
};

}  // namespace dialfuse
