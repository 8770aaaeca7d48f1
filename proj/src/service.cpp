#include "dialfuse/service.hpp"

#include <condition_variable>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dialfuse/error.hpp"
#include "dialfuse/text.hpp"

namespace dialfuse {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::kOpen: return "OPEN";
    case SessionStatus::kRated: return "RATED";
    case SessionStatus::kAbandoned: return "ABANDONED";
  }
  return "OPEN";
}

SessionStatus parse_session_status(std::string_view s) {
  if (s == "OPEN") return SessionStatus::kOpen;
  if (s == "RATED") return SessionStatus::kRated;
  if (s == "ABANDONED") return SessionStatus::kAbandoned;
  throw ParseError("unknown session status '" + std::string(s) + "'");
}

std::string_view to_string(Preference p) {
  switch (p) {
    case Preference::kA: return "A";
    case Preference::kB: return "B";
    case Preference::kTie: return "TIE";
  }
  return "TIE";
}

Preference parse_preference(std::string_view s) {
  std::string u(s);
  for (auto& c : u) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (u == "A") return Preference::kA;
  if (u == "B") return Preference::kB;
  if (u == "TIE") return Preference::kTie;
  throw ValidationError("overall must be A, B or TIE, got '" + std::string(s) + "'");
}

// ---- validation ------------------------------------------------------------

namespace {

void check_scale(const char* field, int v) {
  if (v < 1 || v > 5) throw ValidationError(std::string(field) + " must be in 1..5, got " + std::to_string(v));
}

}  // namespace

void validate_rating(const Rating& r) {
  if (r.session_id.empty()) throw ValidationError("rating needs a session_id");
  if (trim(r.rater_id).empty()) throw ValidationError("rating needs a rater_id");
  check_scale("appropriateness", r.appropriateness);
  check_scale("engagingness", r.engagingness);
}

void validate_judgment(const PairwiseJudgment& j) {
  if (j.dialog_a_id.empty() || j.dialog_b_id.empty()) throw ValidationError("judgment needs two dialog ids");
  if (j.dialog_a_id == j.dialog_b_id) throw ValidationError("judgment compares a dialog with itself");
  if (trim(j.rater_id).empty()) throw ValidationError("judgment needs a rater_id");
  check_scale("a_appropriateness", j.a_appropriateness);
  check_scale("a_engagingness", j.a_engagingness);
  check_scale("b_appropriateness", j.b_appropriateness);
  check_scale("b_engagingness", j.b_engagingness);
}

// ---- JSON ------------------------------------------------------------------

namespace {

ordered_json turn_to_json(const SessionTurn& t) {
  ordered_json j;
  j["speaker"] = to_string(t.speaker);
  j["text"] = t.text;
  if (t.state) j["state"] = encode_state(*t.state);
  if (t.knowledge_kind) j["knowledge"] = *t.knowledge_kind;
  if (t.speaker == Speaker::kSystem) j["fallback"] = t.fallback;
  return j;
}

SessionTurn turn_from_json(const json& j) {
  SessionTurn t;
  t.speaker = parse_speaker(j.at("speaker").get<std::string>());
  t.text = j.at("text").get<std::string>();
  if (j.contains("state")) t.state = parse_state(j.at("state").get<std::string>());
  if (j.contains("knowledge")) t.knowledge_kind = j.at("knowledge").get<std::string>();
  t.fallback = j.value("fallback", false);
  return t;
}

template <typename F>
auto json_guard(const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ValidationError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

ordered_json session_to_json(const Session& s) {
  ordered_json j;
  j["schema_version"] = kServiceSchemaVersion;
  j["id"] = s.id;
  j["model"] = s.model_name;
  j["goal"] = goal_to_json(s.goal_card);
  j["status"] = to_string(s.status);
  j["created_at"] = s.created_at;
  j["last_active"] = s.last_active;
  j["turns"] = ordered_json::array();
  for (const auto& t : s.turns) j["turns"].push_back(turn_to_json(t));
  return j;
}

ordered_json rating_to_json(const Rating& r) {
  return {{"session_id", r.session_id},
          {"success", r.success},
          {"appropriateness", r.appropriateness},
          {"engagingness", r.engagingness},
          {"rater_id", r.rater_id}};
}

Rating rating_from_json(const json& j) {
  return json_guard("rating", [&] {
    Rating r;
    r.session_id = j.value("session_id", std::string());
    r.success = j.at("success").get<bool>();
    r.appropriateness = j.at("appropriateness").get<int>();
    r.engagingness = j.at("engagingness").get<int>();
    r.rater_id = j.value("rater_id", std::string());
    return r;
  });
}

ordered_json judgment_to_json(const PairwiseJudgment& p) {
  return {{"dialog_a_id", p.dialog_a_id},
          {"dialog_b_id", p.dialog_b_id},
          {"overall", to_string(p.overall)},
          {"a_appropriateness", p.a_appropriateness},
          {"a_engagingness", p.a_engagingness},
          {"b_appropriateness", p.b_appropriateness},
          {"b_engagingness", p.b_engagingness},
          {"rater_id", p.rater_id}};
}

PairwiseJudgment judgment_from_json(const json& j) {
  return json_guard("judgment", [&] {
    PairwiseJudgment p;
    p.dialog_a_id = j.at("dialog_a_id").get<std::string>();
    p.dialog_b_id = j.at("dialog_b_id").get<std::string>();
    p.overall = parse_preference(j.at("overall").get<std::string>());
    p.a_appropriateness = j.at("a_appropriateness").get<int>();
    p.a_engagingness = j.at("a_engagingness").get<int>();
    p.b_appropriateness = j.at("b_appropriateness").get<int>();
    p.b_engagingness = j.at("b_engagingness").get<int>();
    p.rater_id = j.value("rater_id", std::string());
    return p;
  });
}

// ---- goal sampler ----------------------------------------------------------

GoalSampler::GoalSampler(std::vector<GoalCard> pool) {
  for (auto& g : pool)
    if (g.domains.size() == 1) pool_.push_back(std::move(g));
  if (pool_.empty()) throw ValidationError("goal pool has no single-domain goal");
}

GoalSampler GoalSampler::from_corpus(const DialogSet& dialogs) {
  std::vector<GoalCard> pool;
  for (const auto& d : dialogs)
    if (d.goal_card) pool.push_back(*d.goal_card);
  return GoalSampler(std::move(pool));
}

GoalCard GoalSampler::sample(std::uint64_t seed) const {
  SplitMix64 rng(seed);
  return pool_[rng.below(pool_.size())];
}

// ---- event log -------------------------------------------------------------

EventLog::EventLog(std::filesystem::path path) : path_(std::move(path)) {
  if (!path_.empty() && std::filesystem::exists(path_)) events_ = read(path_);
}

void EventLog::append(const ordered_json& event) {
  std::lock_guard lock(mu_);
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw IoError("cannot append to " + path_.string());
    out << event.dump() << '\n';
    out.flush();
    if (!out) throw IoError("write failed on " + path_.string());
  }
  events_.push_back(json::parse(event.dump()));
}

std::vector<json> EventLog::events() const {
  std::lock_guard lock(mu_);
  return events_;
}

std::vector<json> EventLog::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// ---- aggregation -----------------------------------------------------------

namespace {

MeanStd summarize(const std::vector<double>& v) {
  MeanStd m;
  if (!v.empty()) m = mean_std(v);
  return m;
}

HumanEvalTables tables_from(const std::map<std::string, std::string>& session_model,
                            const std::vector<Rating>& ratings, const std::vector<PairwiseJudgment>& judgments,
                            std::uint64_t seed, int resamples) {
  HumanEvalTables t;
  std::map<std::string, std::array<std::vector<double>, 3>> per_model;
  for (const auto& r : ratings) {
    auto it = session_model.find(r.session_id);
    if (it == session_model.end()) continue;
    auto& v = per_model[it->second];
    v[0].push_back(r.success ? 1.0 : 0.0);
    v[1].push_back(r.appropriateness);
    v[2].push_back(r.engagingness);
  }
  for (const auto& [model, v] : per_model) {
    ModelStats s;
    s.n = v[0].size();
    s.success = summarize(v[0]);
    s.appropriateness = summarize(v[1]);
    s.engagingness = summarize(v[2]);
    t.models[model] = s;
  }

  struct Acc {
    std::vector<double> outcome, appr_a, appr_b, eng_a, eng_b;
  };
  std::map<std::pair<std::string, std::string>, Acc> per_pair;
  for (const auto& j : judgments) {
    auto a = session_model.find(j.dialog_a_id);
    auto b = session_model.find(j.dialog_b_id);
    if (a == session_model.end() || b == session_model.end()) continue;
    bool swap = b->second < a->second;
    auto& acc = per_pair[swap ? std::make_pair(b->second, a->second) : std::make_pair(a->second, b->second)];
    double o = j.overall == Preference::kA ? 1.0 : j.overall == Preference::kB ? -1.0 : 0.0;
    acc.outcome.push_back(swap ? -o : o);
    acc.appr_a.push_back(swap ? j.b_appropriateness : j.a_appropriateness);
    acc.appr_b.push_back(swap ? j.a_appropriateness : j.b_appropriateness);
    acc.eng_a.push_back(swap ? j.b_engagingness : j.a_engagingness);
    acc.eng_b.push_back(swap ? j.a_engagingness : j.b_engagingness);
  }
  for (const auto& [key, acc] : per_pair) {
    PairwiseStats s;
    s.n = acc.outcome.size();
    std::size_t win = 0, tie = 0, loss = 0;
    for (double o : acc.outcome) (o > 0 ? win : o < 0 ? loss : tie)++;
    s.win = 100.0 * static_cast<double>(win) / static_cast<double>(s.n);
    s.tie = 100.0 * static_cast<double>(tie) / static_cast<double>(s.n);
    s.loss = 100.0 * static_cast<double>(loss) / static_cast<double>(s.n);
    std::vector<double> zeros(s.n, 0.0);
    std::uint64_t pair_seed = mix_seed(seed, key.first + "|" + key.second);
    s.p_overall = paired_bootstrap(acc.outcome, zeros, resamples, pair_seed);
    s.p_appropriateness = paired_bootstrap(acc.appr_a, acc.appr_b, resamples, pair_seed + 1);
    s.p_engagingness = paired_bootstrap(acc.eng_a, acc.eng_b, resamples, pair_seed + 2);
    t.pairs[key] = s;
  }
  return t;
}

}  // namespace

HumanEvalTables aggregate_human_eval(const std::vector<json>& events, std::uint64_t seed, int resamples) {
  std::map<std::string, std::string> session_model;
  std::vector<Rating> ratings;
  std::vector<PairwiseJudgment> judgments;
  for (const auto& e : events) {
    const std::string kind = e.value("event", std::string());
    if (kind == "session") {
      session_model[e.at("id").get<std::string>()] = e.at("model").get<std::string>();
    } else if (kind == "rating") {
      ratings.push_back(rating_from_json(e));
    } else if (kind == "pairwise") {
      judgments.push_back(judgment_from_json(e));
    }
  }
  return tables_from(session_model, ratings, judgments, seed, resamples);
}

ordered_json tables_to_json(const HumanEvalTables& t) {
  auto ms = [](const MeanStd& m) { return ordered_json{{"mean", m.mean}, {"std", m.std}}; };
  ordered_json j;
  j["schema_version"] = kServiceSchemaVersion;
  j["models"] = ordered_json::object();
  for (const auto& [name, s] : t.models)
    j["models"][name] = {{"n", s.n},
                         {"success", ms(s.success)},
                         {"appropriateness", ms(s.appropriateness)},
                         {"engagingness", ms(s.engagingness)}};
  j["pairwise"] = ordered_json::array();
  for (const auto& [key, s] : t.pairs)
    j["pairwise"].push_back({{"model_a", key.first},
                             {"model_b", key.second},
                             {"n", s.n},
                             {"win", s.win},
                             {"tie", s.tie},
                             {"loss", s.loss},
                             {"p_overall", s.p_overall},
                             {"p_appropriateness", s.p_appropriateness},
                             {"p_engagingness", s.p_engagingness}});
  return j;
}

// ---- service ---------------------------------------------------------------

struct EvalService::Live {
  std::mutex mu;
  std::condition_variable cv;
  std::uint64_t next_ticket = 0;
  std::uint64_t serving = 0;
  Session session;
  PivotSession pivot;
  std::unique_ptr<KnowledgeRouter> router;
};

namespace {

std::int64_t wall_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

ordered_json status_event(const std::string& id, SessionStatus s) {
  return {{"event", "status"}, {"session", id}, {"status", to_string(s)}};
}

}  // namespace

EvalService::EvalService(ServiceConfig config, GoalSampler sampler, Clock clock)
    : config_(std::move(config)), sampler_(std::move(sampler)), clock_(clock ? std::move(clock) : wall_clock_ms) {
  log_ = std::make_unique<EventLog>(config_.store);
  for (const auto& e : log_->events()) {
    const std::string kind = e.value("event", std::string());
    if (kind == "session") {
      auto l = std::make_unique<Live>();
      l->session.id = e.at("id").get<std::string>();
      l->session.model_name = e.at("model").get<std::string>();
      l->session.goal_card = goal_from_json(e.at("goal"));
      l->session.created_at = e.at("created_at").get<std::int64_t>();
      l->session.last_active = l->session.created_at;
      sessions_[l->session.id] = std::move(l);
      ++next_session_;
    } else if (kind == "turn") {
      auto& l = *sessions_.at(e.at("session").get<std::string>());
      l.session.turns.push_back(turn_from_json(e));
      l.session.last_active = e.value("at", l.session.last_active);
      l.pivot.history.emplace_back(l.session.turns.back().speaker, l.session.turns.back().text);
    } else if (kind == "status") {
      sessions_.at(e.at("session").get<std::string>())->session.status =
          parse_session_status(e.at("status").get<std::string>());
    } else if (kind == "rating") {
      ratings_.push_back(rating_from_json(e));
    } else if (kind == "pairwise") {
      judgments_.push_back(judgment_from_json(e));
    }
  }
  refresh_summary();
}

EvalService::~EvalService() = default;

void EvalService::register_model(const std::string& name, ModelEntry entry) {
  if (!entry.backend) throw ValidationError("model '" + name + "' has no backend");
  std::lock_guard lock(mu_);
  if (!models_.emplace(name, std::move(entry)).second) throw Conflict("model '" + name + "' already registered");
}

std::vector<std::string> EvalService::models() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [name, _] : models_) out.push_back(name);
  return out;
}

EvalService::Live& EvalService::live(const std::string& id) {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFound("no session '" + id + "'");
  return *it->second;
}

void EvalService::expire_locked(Live& l, std::int64_t now) {
  if (l.session.status != SessionStatus::kOpen) return;
  if (now - l.session.last_active <= config_.idle_timeout.count()) return;
  l.session.status = SessionStatus::kAbandoned;
  log_->append(status_event(l.session.id, l.session.status));
}

Session EvalService::create_session(const std::string& model_name) {
  std::lock_guard lock(mu_);
  if (!models_.count(model_name)) throw NotFound("no model '" + model_name + "'");
  auto l = std::make_unique<Live>();
  std::ostringstream id;
  id << "s" << std::setw(6) << std::setfill('0') << ++next_session_;
  l->session.id = id.str();
  l->session.model_name = model_name;
  l->session.goal_card = sampler_.sample(mix_seed(config_.seed, l->session.id));
  l->session.created_at = l->session.last_active = clock_();
  ordered_json e = {{"event", "session"},
                    {"id", l->session.id},
                    {"model", model_name},
                    {"goal", goal_to_json(l->session.goal_card)},
                    {"created_at", l->session.created_at}};
  log_->append(e);
  Session copy = l->session;
  sessions_[copy.id] = std::move(l);
  return copy;
}

Session EvalService::get_session(const std::string& id) {
  Live& l = live(id);
  std::lock_guard lock(l.mu);
  expire_locked(l, clock_());
  return l.session;
}

MessageReply EvalService::post_message(const std::string& session_id, const std::string& text) {
  if (trim(text).empty()) throw ValidationError("empty message");
  Live& l = live(session_id);
  ModelEntry entry;
  {
    std::lock_guard lock(mu_);
    auto it = models_.find(l.session.model_name);
    if (it == models_.end()) throw NotFound("model '" + l.session.model_name + "' is not registered");
    entry = it->second;
  }

  std::unique_lock lock(l.mu);
  const std::uint64_t ticket = l.next_ticket++;
  l.cv.wait(lock, [&] { return l.serving == ticket; });
  struct Release {
    Live& l;
    ~Release() {
      // Runs with l.mu held.
      ++l.serving;
      l.cv.notify_all();
    }
  } release{l};

  expire_locked(l, clock_());
  if (l.session.status != SessionStatus::kOpen)
    throw Conflict("session '" + session_id + "' is " + std::string(to_string(l.session.status)));
  if (!l.router) l.router = std::make_unique<KnowledgeRouter>(entry.db, entry.search, entry.search_limit);
  l.pivot.window_k = config_.window_k;
  l.pivot.max_tokens = config_.max_tokens;
  l.pivot.seed = mix_seed(config_.seed, session_id);

  // The ticket keeps other posts to this session out while the model runs.
  PivotSession pivot = l.pivot;
  lock.unlock();
  ChatOutcome outcome;
  try {
    outcome = chat_turn(pivot, text, *entry.backend, *l.router, entry.detector);
  } catch (...) {
    lock.lock();
    throw;
  }
  lock.lock();

  const std::int64_t now = clock_();
  SessionTurn user{Speaker::kUser, trim(text), std::nullopt, std::nullopt, false};
  SessionTurn system{Speaker::kSystem, outcome.response, outcome.state,
                     std::string(to_string(outcome.knowledge.kind)), outcome.fallback};
  for (const SessionTurn* t : {&user, &system}) {
    ordered_json e = turn_to_json(*t);
    e["event"] = "turn";
    e["session"] = session_id;
    e["at"] = now;
    log_->append(e);
  }
  l.session.turns.push_back(std::move(user));
  l.session.turns.push_back(std::move(system));
  l.session.last_active = now;
  l.pivot = std::move(pivot);
  return {outcome.response, outcome, l.session.turns.size() - 1};
}

void EvalService::submit_rating(const Rating& rating) {
  validate_rating(rating);
  Live& l = live(rating.session_id);
  {
    std::lock_guard lock(l.mu);
    expire_locked(l, clock_());
    if (l.session.status == SessionStatus::kAbandoned)
      throw Conflict("session '" + rating.session_id + "' was abandoned");
    std::lock_guard g(mu_);
    for (const auto& r : ratings_)
      if (r.session_id == rating.session_id && r.rater_id == rating.rater_id)
        throw Conflict("rater '" + rating.rater_id + "' already rated session '" + rating.session_id + "'");
    ordered_json e = rating_to_json(rating);
    e["event"] = "rating";
    log_->append(e);
    ratings_.push_back(rating);
    if (l.session.status == SessionStatus::kOpen) {
      l.session.status = SessionStatus::kRated;
      log_->append(status_event(l.session.id, l.session.status));
    }
  }
  refresh_summary();
}

void EvalService::submit_pairwise(const PairwiseJudgment& judgment) {
  validate_judgment(judgment);
  {
    std::lock_guard lock(mu_);
    for (const auto* id : {&judgment.dialog_a_id, &judgment.dialog_b_id})
      if (!sessions_.count(*id)) throw NotFound("no session '" + *id + "'");
    auto same_pair = [&](const PairwiseJudgment& p) {
      return (p.dialog_a_id == judgment.dialog_a_id && p.dialog_b_id == judgment.dialog_b_id) ||
             (p.dialog_a_id == judgment.dialog_b_id && p.dialog_b_id == judgment.dialog_a_id);
    };
    for (const auto& p : judgments_)
      if (p.rater_id == judgment.rater_id && same_pair(p))
        throw Conflict("rater '" + judgment.rater_id + "' already judged this pair");
    ordered_json e = judgment_to_json(judgment);
    e["event"] = "pairwise";
    log_->append(e);
    judgments_.push_back(judgment);
  }
  refresh_summary();
}

void EvalService::refresh_summary() {
  std::lock_guard lock(mu_);
  std::map<std::string, std::string> session_model;
  for (const auto& [id, l] : sessions_) session_model[id] = l->session.model_name;
  summary_ = tables_from(session_model, ratings_, judgments_, config_.seed, config_.bootstrap_resamples);
}

HumanEvalTables EvalService::aggregates() const {
  std::lock_guard lock(mu_);
  return summary_;
}

std::size_t EvalService::sweep_idle() {
  std::vector<Live*> all;
  {
    std::lock_guard lock(mu_);
    for (auto& [_, l] : sessions_) all.push_back(l.get());
  }
  std::size_t changed = 0;
  const std::int64_t now = clock_();
  for (Live* l : all) {
    std::lock_guard lock(l->mu);
    auto before = l->session.status;
    expire_locked(*l, now);
    changed += before != l->session.status;
  }
  return changed;
}

const EventLog& EvalService::log() const { return *log_; }

}  // namespace dialfuse
