#include "dialfuse/synthesis.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <thread>

#include "dialfuse/error.hpp"
#include "dialfuse/text.hpp"

namespace dialfuse {

std::string_view to_string(Setting s) {
  switch (s) {
    case Setting::kInitial:
      return "initial";
    case Setting::kTransition:
      return "transition";
    case Setting::kMultiple:
      return "multiple";
  }
  return "initial";
}

Setting parse_setting(std::string_view s) {
  std::string l = to_lower(s);
  if (l == "initial") return Setting::kInitial;
  if (l == "transition") return Setting::kTransition;
  if (l == "multiple") return Setting::kMultiple;
  throw ParseError("unknown setting '" + std::string(s) + "'");
}

// ---- goal extraction -------------------------------------------------------

Goal extract_goal(const Dialog& tod, std::size_t boundary_index, const Ontology& ontology) {
  if (boundary_index >= tod.turns.size() || tod.turns[boundary_index].speaker != Speaker::kUser)
    throw ValidationError("goal boundary " + std::to_string(boundary_index) + " of dialog '" + tod.id +
                          "' is not a user turn");
  const Turn& turn = tod.turns[boundary_index];
  std::optional<Goal> best;
  std::size_t best_pos = 0;
  auto better = [&](std::size_t pos, const Goal& g) {
    if (!best) return true;
    if (pos != best_pos) return pos < best_pos;
    if (g.value.size() != best->value.size()) return g.value.size() > best->value.size();
    bool own = turn.domain && g.domain == *turn.domain;
    bool best_own = turn.domain && best->domain == *turn.domain;
    return own && !best_own;
  };
  for (const auto& [domain, slots] : ontology.entries()) {
    for (auto slot : kGoalSlots) {
      auto it = slots.find(std::string(slot));
      if (it == slots.end()) continue;
      for (const auto& value : it->second) {
        if (value == kDontCare || value == "none") continue;
        auto pos = find_word(turn.text, value);
        if (!pos) continue;
        Goal g{value, std::string(slot), domain, boundary_index};
        if (better(*pos, g)) {
          best = g;
          best_pos = *pos;
        }
      }
    }
  }
  if (!best)
    throw NoGoal("no goal value in turn " + std::to_string(boundary_index) + " of dialog '" + tod.id + "'");
  return *best;
}

// ---- configuration ---------------------------------------------------------

int SynthesisConfig::odd_turn_cap() const {
  if (max_odd_turns > 0) return max_odd_turns;
  return setting == Setting::kInitial ? 5 : 3;
}

void validate_config(const SynthesisConfig& config) {
  if (config.max_odd_turns < 0) throw ValidationError("max_odd_turns must be >= 1 (0 selects the default)");
  if (config.setting == Setting::kInitial && config.personas.empty())
    throw ValidationError("INITIAL synthesis needs a nonempty persona set");
  if (config.max_tokens < 1) throw ValidationError("max_tokens must be >= 1");
}

const std::vector<std::string>& default_personas() {
  static const std::vector<std::string> kPersonas = {
      "I love trying new cuisines.",
      "I am a history student who adores old churches.",
      "I play the violin in a small orchestra.",
      "I have two dogs and walk them every morning.",
      "I am training for my first marathon.",
      "I collect vintage postcards.",
      "I grew up on a farm near the coast.",
      "I work as a nurse on night shifts.",
      "I am learning to paint with watercolours.",
      "I read a mystery novel every week.",
      "I recently moved here from Spain.",
      "I enjoy punting on the river with friends.",
      "I am a big fan of rugby.",
      "I bake bread every weekend.",
      "I travel by train whenever I can.",
      "I teach mathematics at a secondary school.",
      "I like visiting museums on rainy days.",
      "I am planning a surprise party for my sister.",
      "I volunteer at an animal shelter.",
      "I enjoy photographing old buildings.",
      "I am a retired engineer who loves gardening.",
      "I cycle to work every day.",
      "I am obsessed with board games.",
      "I love live jazz music.",
  };
  return kPersonas;
}

std::vector<std::string> load_personas(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open persona file '" + path.string() + "'");
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);)
    if (auto t = trim(line); !t.empty() && t[0] != '#') out.push_back(t);
  if (out.empty()) throw ValidationError("persona file '" + path.string() + "' is empty");
  return out;
}

// ---- stages ----------------------------------------------------------------

namespace {

template <typename F>
auto at_odd_turn(int index, F&& f) -> decltype(f()) {
  auto where = [&](const std::exception& e) { return std::string(e.what()) + " (ODD turn " + std::to_string(index) + ")"; };
  try {
    return f();
  } catch (const TransportError& e) {
    throw TransportError(where(e));
  } catch (const ProviderError& e) {
    throw ProviderError(where(e));
  } catch (const ScriptExhausted& e) {
    throw ScriptExhausted(where(e));
  }
}

Turn odd_turn(Speaker speaker, std::string text) {
  Turn t;
  t.speaker = speaker;
  t.mode = Mode::kOdd;
  t.text = trim(text);
  return t;
}

std::vector<Segment> context_of(const std::vector<Turn>& turns) {
  std::vector<Segment> out;
  for (const auto& t : turns) out.push_back({SegmentTag::kContext, t.text});
  return out;
}

}  // namespace

const std::string& sample_persona(const SynthesisConfig& config, std::uint64_t seed) {
  if (config.personas.empty()) throw ValidationError("persona set is empty");
  SplitMix64 rng(mix_seed(seed, "persona"));
  return config.personas[rng.below(config.personas.size())];
}

OddOpening initialize_odd(const SynthesisConfig& config, const Dialog& tod, std::size_t boundary_index,
                          Backend& chat, const IntentDetector* detector, std::uint64_t seed) {
  GenRequest req;
  req.max_tokens = config.max_tokens;
  req.seed = mix_seed(seed, "opener");
  OddOpening out;
  if (config.setting == Setting::kInitial) {
    if (boundary_index != 0) throw ValidationError("INITIAL openers are placed at turn 0");
    out.persona = sample_persona(config, seed);
    req.condition.push_back({SegmentTag::kPersona, *out.persona});
    out.turn = odd_turn(Speaker::kUser, at_odd_turn(0, [&] { return chat.generate(req); }));
    return out;
  }
  if (boundary_index == 0 || boundary_index > tod.turns.size() ||
      tod.turns[boundary_index - 1].speaker != Speaker::kSystem)
    throw ValidationError("contextual ODD openers must follow a system turn");
  std::vector<Turn> prefix(tod.turns.begin(), tod.turns.begin() + static_cast<std::ptrdiff_t>(boundary_index));
  req.condition = context_of(prefix);
  out.turn = odd_turn(Speaker::kUser, at_odd_turn(0, [&] { return chat.generate(req); }));
  if (detector && detect(*detector, out.turn.text).label != Mode::kOdd)
    throw InitRejected("opener classified as TOD: '" + out.turn.text + "'");
  return out;
}

int OddSnippet::user_turns() const {
  return static_cast<int>(
      std::count_if(turns.begin(), turns.end(), [](const Turn& t) { return t.speaker == Speaker::kUser; }));
}

OddSnippet simulate_odd(const std::vector<Turn>& seed_turns, const Goal& goal, Backend& user_backend,
                        Backend& system_backend, const SynthesisConfig& config, std::uint64_t seed) {
  if (seed_turns.empty() || seed_turns.back().speaker != Speaker::kUser)
    throw ValidationError("ODD simulation starts from a user opener");
  if (trim(goal.value).empty()) throw ValidationError("ODD simulation needs a nonempty goal");
  const int cap = config.odd_turn_cap();
  OddSnippet s;
  s.goal = goal;
  s.turns = seed_turns;
  for (auto& t : s.turns) t.mode = Mode::kOdd;
  int users = s.user_turns();
  s.terminated_by_goal = mentions(s.turns.back().text, goal.value);
  while (!s.terminated_by_goal && users < cap) {
    GenRequest sys;
    sys.condition = context_of(s.turns);
    sys.max_tokens = config.max_tokens;
    sys.seed = mix_seed(seed, "system:" + std::to_string(users));
    s.turns.push_back(odd_turn(Speaker::kSystem, at_odd_turn(static_cast<int>(s.turns.size()), [&] {
                                 return system_backend.generate(sys);
                               })));
    GenRequest usr;
    usr.condition = context_of(s.turns);
    usr.condition.push_back({SegmentTag::kGoal, goal.value});
    usr.max_tokens = config.max_tokens;
    usr.seed = mix_seed(seed, "user:" + std::to_string(users));
    s.turns.push_back(odd_turn(Speaker::kUser, at_odd_turn(static_cast<int>(s.turns.size()), [&] {
                                 return user_backend.generate(usr);
                               })));
    ++users;
    s.terminated_by_goal = mentions(s.turns.back().text, goal.value);
  }
  return s;
}

Turn generate_transition(const Turn& last_odd_user, const Turn& next_tod_user, Backend& backend,
                         std::uint64_t seed, int max_tokens) {
  if (last_odd_user.speaker != Speaker::kUser || next_tod_user.speaker != Speaker::kUser)
    throw ValidationError("transition generation conditions on two user utterances");
  if (trim(last_odd_user.text).empty() || trim(next_tod_user.text).empty())
    throw ValidationError("transition generation needs nonempty utterances");
  GenRequest req;
  req.condition = {{SegmentTag::kContext, last_odd_user.text}, {SegmentTag::kContext, next_tod_user.text}};
  req.max_tokens = max_tokens;
  req.seed = mix_seed(seed, "transition");
  Turn t = odd_turn(Speaker::kSystem, backend.generate(req));
  t.is_transition = true;
  return t;
}

// ---- enrichment ------------------------------------------------------------

int SynthesisTrace::accepted() const {
  return static_cast<int>(std::count_if(attempts.begin(), attempts.end(),
                                        [](const InsertionAttempt& a) { return a.outcome == "inserted"; }));
}

nlohmann::ordered_json trace_to_json(const SynthesisTrace& t) {
  nlohmann::ordered_json j;
  j["dialog_id"] = t.dialog_id;
  j["setting"] = to_string(t.setting);
  j["seed"] = t.seed;
  if (t.skipped) j["skipped"] = *t.skipped;
  j["attempts"] = nlohmann::ordered_json::array();
  for (const auto& a : t.attempts) {
    nlohmann::ordered_json aj;
    aj["after_turn"] = a.after_turn;
    aj["outcome"] = a.outcome;
    if (a.goal) aj["goal"] = {{"value", a.goal->value}, {"slot", a.goal->slot}, {"domain", a.goal->domain},
                              {"source_turn", a.goal->source_turn_index}};
    if (a.persona) aj["persona"] = *a.persona;
    aj["terminated_by_goal"] = a.terminated_by_goal;
    aj["odd_user_turns"] = a.odd_user_turns;
    j["attempts"].push_back(std::move(aj));
  }
  return j;
}

namespace {

void require(const SynthesisBackends& b) {
  if (!b.chat || !b.user || !b.system || !b.transition)
    throw ValidationError("synthesis needs chat, user, system and transition backends");
}

// Interlude inserted before tod.turns[next_user]: opener, simulated ODD
// exchange, closing system turn.
std::vector<Turn> interlude(const SynthesisConfig& config, const Dialog& tod, std::size_t next_user,
                            const SynthesisBackends& backends, const IntentDetector* detector,
                            const Ontology& ontology, std::uint64_t seed, InsertionAttempt& attempt) {
  Goal goal;
  try {
    goal = extract_goal(tod, next_user, ontology);
  } catch (const NoGoal&) {
    attempt.outcome = "no_goal";
    throw;
  }
  attempt.goal = goal;
  OddOpening opening;
  try {
    opening = initialize_odd(config, tod, config.setting == Setting::kInitial ? 0 : next_user, *backends.chat,
                             detector, seed);
  } catch (const InitRejected&) {
    attempt.outcome = "init_rejected";
    throw;
  }
  attempt.persona = opening.persona;
  OddSnippet snippet = simulate_odd({opening.turn}, goal, *backends.user, *backends.system, config, seed);
  attempt.terminated_by_goal = snippet.terminated_by_goal;
  attempt.odd_user_turns = snippet.user_turns();
  std::vector<Turn> out = snippet.turns;
  if (config.setting != Setting::kMultiple || config.transition_after_multiple) {
    out.push_back(generate_transition(out.back(), tod.turns[next_user], *backends.transition, seed, config.max_tokens));
  } else {
    GenRequest req;
    req.condition = context_of(out);
    req.max_tokens = config.max_tokens;
    req.seed = mix_seed(seed, "closing");
    out.push_back(odd_turn(Speaker::kSystem, backends.system->generate(req)));
  }
  attempt.outcome = "inserted";
  return out;
}

}  // namespace

EnrichResult enrich(const Dialog& tod, const SynthesisConfig& config, const SynthesisBackends& backends,
                    const IntentDetector* detector, const Ontology& ontology) {
  validate_config(config);
  require(backends);
  validate_dialog(tod);
  for (const auto& t : tod.turns)
    if (t.mode != Mode::kTod) throw ValidationError("dialog '" + tod.id + "' is not a pure TOD dialog");

  const std::uint64_t dseed = mix_seed(config.seed, tod.id);
  EnrichResult r;
  r.trace.dialog_id = tod.id;
  r.trace.setting = config.setting;
  r.trace.seed = dseed;

  Dialog out = tod;
  out.source = DialogSource::kSynthesized;
  out.turns.clear();

  auto single = [&](std::size_t next_user) {
    InsertionAttempt a;
    a.after_turn = next_user;
    try {
      auto odd = interlude(config, tod, next_user, backends, detector, ontology,
                           mix_seed(dseed, "insert:" + std::to_string(next_user)), a);
      r.trace.attempts.push_back(a);
      return std::optional<std::vector<Turn>>(std::move(odd));
    } catch (const NoGoal& e) {
      r.trace.attempts.push_back(a);
      r.trace.skipped = std::string("no_goal: ") + e.what();
    } catch (const InitRejected& e) {
      r.trace.attempts.push_back(a);
      r.trace.skipped = std::string("init_rejected: ") + e.what();
    }
    return std::optional<std::vector<Turn>>();
  };

  switch (config.setting) {
    case Setting::kInitial: {
      auto odd = single(0);
      if (!odd) return r;
      out.turns = std::move(*odd);
      out.turns.insert(out.turns.end(), tod.turns.begin(), tod.turns.end());
      break;
    }
    case Setting::kTransition: {
      auto domains = tod.domains_in_order();
      if (domains.size() < 2)
        throw SettingInapplicable("dialog '" + tod.id + "' has " + std::to_string(domains.size()) +
                                  " domain(s); TRANSITION needs at least 2");
      std::size_t boundary = 0;
      for (std::size_t i = 2; i < tod.turns.size(); i += 2)
        if (tod.turns[i].domain && *tod.turns[i].domain == domains[1]) {
          boundary = i;
          break;
        }
      if (boundary == 0)
        throw SettingInapplicable("dialog '" + tod.id + "' has no user turn opening its second domain");
      auto odd = single(boundary);
      if (!odd) return r;
      out.turns.assign(tod.turns.begin(), tod.turns.begin() + static_cast<std::ptrdiff_t>(boundary));
      out.turns.insert(out.turns.end(), odd->begin(), odd->end());
      out.turns.insert(out.turns.end(), tod.turns.begin() + static_cast<std::ptrdiff_t>(boundary), tod.turns.end());
      break;
    }
    case Setting::kMultiple: {
      for (std::size_t i = 0; i < tod.turns.size(); ++i) {
        out.turns.push_back(tod.turns[i]);
        if (tod.turns[i].speaker != Speaker::kSystem) continue;
        InsertionAttempt a;
        a.after_turn = i;
        if (i + 1 >= tod.turns.size()) {
          a.outcome = "no_goal";
          r.trace.attempts.push_back(a);
          continue;
        }
        try {
          auto odd = interlude(config, tod, i + 1, backends, detector, ontology,
                               mix_seed(dseed, "insert:" + std::to_string(i + 1)), a);
          out.turns.insert(out.turns.end(), odd.begin(), odd.end());
        } catch (const NoGoal&) {
        } catch (const InitRejected&) {
        }
        r.trace.attempts.push_back(a);
      }
      break;
    }
  }
  validate_dialog(out);
  r.dialog = std::move(out);
  return r;
}

SynthesisResult synthesize_corpus(const DialogSet& dialogs, const SynthesisConfig& config,
                                  const SynthesisBackends& backends, const IntentDetector* detector,
                                  const Ontology& ontology, int workers) {
  validate_config(config);
  require(backends);
  if (workers < 1) throw ValidationError("workers must be >= 1");

  struct Slot {
    std::optional<EnrichResult> result;
    std::optional<SkipRecord> skip;
    std::exception_ptr error;
  };
  std::vector<Slot> slots(dialogs.size());
  auto run = [&](std::size_t i) {
    const Dialog& d = dialogs[i];
    try {
      slots[i].result = enrich(d, config, backends, detector, ontology);
    } catch (const SettingInapplicable& e) {
      slots[i].skip = SkipRecord{d.id, std::string("setting_inapplicable: ") + e.what()};
    } catch (const ValidationError& e) {
      slots[i].skip = SkipRecord{d.id, std::string("invalid: ") + e.what()};
    } catch (...) {
      slots[i].error = std::current_exception();
    }
  };
  if (workers == 1) {
    for (std::size_t i = 0; i < dialogs.size(); ++i) {
      run(i);
      if (slots[i].error) std::rethrow_exception(slots[i].error);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < dialogs.size();) run(i);
      });
    for (auto& t : pool) t.join();
  }

  // Output order follows input order regardless of scheduling.
  SynthesisResult out;
  for (auto& slot : slots) {
    if (slot.error) std::rethrow_exception(slot.error);
    if (slot.skip) {
      out.skipped.push_back(std::move(*slot.skip));
      continue;
    }
    EnrichResult& r = *slot.result;
    if (r.dialog) {
      out.dialogs.push_back(std::move(*r.dialog));
    } else {
      out.skipped.push_back({r.trace.dialog_id, r.trace.skipped.value_or("skipped")});
    }
    out.traces.push_back(std::move(r.trace));
  }
  out.stats = compute_stats(out.dialogs);
  return out;
}

}  // namespace dialfuse
