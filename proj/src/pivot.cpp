#include "dialfuse/pivot.hpp"

#include <algorithm>
#include <cctype>

#include "dialfuse/error.hpp"
#include "dialfuse/text.hpp"

namespace dialfuse {

// ---- state codec -----------------------------------------------------------

namespace {

bool is_name(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::islower(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c)) || c == '_';
  });
}

}  // namespace

std::string serialize_belief(const BeliefState& b) {
  std::vector<std::string> parts;
  for (const auto& [domain, slots] : b.entries()) {
    std::string part = domain;
    for (const auto& [slot, value] : canonical_slots(slots)) {
      std::string v = squash_spaces(value);
      if (v.empty() || v.find_first_of("=;") != std::string::npos)
        throw ValidationError("belief value '" + value + "' cannot be serialized");
      part += " " + slot + "=" + v;
    }
    parts.push_back(std::move(part));
  }
  return join(parts, " ; ");
}

BeliefState parse_belief(std::string_view text) {
  BeliefState b;
  std::string body = squash_spaces(text);
  if (body.empty()) return b;
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= body.size(); ++i)
    if (i == body.size() || body[i] == ';') {
      parts.push_back(trim(std::string_view(body).substr(start, i - start)));
      start = i + 1;
    }
  for (const auto& part : parts) {
    auto words = split_whitespace(part);
    if (words.empty()) throw StateParseError("empty domain block in belief '" + body + "'");
    std::string domain = to_lower(words[0]);
    if (!is_name(domain)) throw StateParseError("bad domain name '" + words[0] + "'");
    if (b.slots(domain)) throw StateParseError("domain '" + domain + "' repeated");
    if (words.size() < 2) throw StateParseError("domain '" + domain + "' has no constraints");
    std::vector<std::pair<std::string, std::string>> pairs;
    for (std::size_t i = 1; i < words.size(); ++i) {
      const std::string& w = words[i];
      auto eq = w.find('=');
      if (eq == std::string::npos) {
        if (pairs.empty()) throw StateParseError("expected slot=value after domain '" + domain + "'");
        pairs.back().second += (pairs.back().second.empty() ? "" : " ") + w;
        continue;
      }
      if (w.find('=', eq + 1) != std::string::npos) throw StateParseError("stray '=' in '" + w + "'");
      std::string slot = to_lower(w.substr(0, eq));
      if (!is_name(slot)) throw StateParseError("bad slot name '" + w.substr(0, eq) + "'");
      pairs.emplace_back(slot, w.substr(eq + 1));
    }
    for (const auto& [slot, value] : pairs) {
      if (value.empty()) throw StateParseError("slot '" + slot + "' has no value");
      if (b.get(domain, slot)) throw StateParseError("slot '" + slot + "' repeated in domain '" + domain + "'");
      b.set(domain, slot, value);
    }
  }
  return b;
}

std::string encode_state(const State& s) {
  std::string out(to_string(s.mode));
  out += ':';
  if (!s.query.empty()) out += " " + s.query;
  return out;
}

StateParse try_parse_state(std::string_view text) {
  StateParse out;
  try {
    auto colon = text.find(':');
    if (colon == std::string_view::npos) {
      out.error = "missing ':' separator";
      return out;
    }
    std::string mode = to_lower(trim(text.substr(0, colon)));
    std::string payload = squash_spaces(text.substr(colon + 1));
    State s;
    if (mode == "tod") {
      s.mode = Mode::kTod;
      s.query = serialize_belief(parse_belief(payload));
    } else if (mode == "odd") {
      s.mode = Mode::kOdd;
      s.query = payload;
    } else {
      out.error = "unknown mode token '" + mode + "'";
      return out;
    }
    out.state = std::move(s);
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

State parse_state(std::string_view text) {
  auto r = try_parse_state(text);
  if (!r.state) throw StateParseError("bad state '" + std::string(text) + "': " + r.error);
  return *r.state;
}

State tod_state(const BeliefState& b) { return {Mode::kTod, serialize_belief(b)}; }

// ---- history -----------------------------------------------------------------

HistoryWindow build_history(const Dialog& dialog, std::size_t turn_index, int window_k) {
  if (window_k < 0) throw ValidationError("history window must be >= 0");
  if (turn_index >= dialog.turns.size() || dialog.turns[turn_index].speaker != Speaker::kUser)
    throw ValidationError("history must end at a user turn (dialog '" + dialog.id + "', turn " +
                          std::to_string(turn_index) + ")");
  std::size_t span = 2 * static_cast<std::size_t>(window_k);
  std::size_t start = turn_index >= span ? turn_index - span : 0;
  HistoryWindow h;
  h.window_k = window_k;
  for (std::size_t i = start; i <= turn_index; ++i) h.utterances.emplace_back(dialog.turns[i].speaker, dialog.turns[i].text);
  return h;
}

// ---- training examples -----------------------------------------------------

std::optional<std::string> active_domain(const Turn& turn, const BeliefState& belief) {
  if (turn.domain && belief.slots(*turn.domain)) return to_lower(*turn.domain);
  auto domains = belief.domains();
  if (domains.size() == 1) return domains.front();
  return std::nullopt;
}

std::vector<TrainingExample> make_training_examples(const Dialog& dialog, const Database& db,
                                                    SearchProvider* search, const ExampleOptions& options) {
  validate_dialog(dialog);
  std::vector<TrainingExample> out;
  BeliefState cumulative;
  for (std::size_t i = 1; i < dialog.turns.size(); i += 2) {
    const Turn& turn = dialog.turns[i];
    TrainingExample e;
    e.dialog_id = dialog.id;
    e.turn_index = i;
    e.history = build_history(dialog, i - 1, options.window_k);
    if (turn.mode == Mode::kTod) {
      if (!turn.belief)
        throw ValidationError("dialog '" + dialog.id + "' turn " + std::to_string(i) + ": TOD system turn without belief");
      cumulative.merge(*turn.belief);
      e.state = tod_state(cumulative);
      if (auto domain = active_domain(turn, cumulative); domain && db.has_domain(*domain))
        e.knowledge = db_lookup(cumulative, *domain, db);
      if (turn.delex_text) {
        e.response = *turn.delex_text;
      } else if (e.knowledge.top_record) {
        e.response = delexicalize(turn.text, *e.knowledge.top_record);
      } else {
        e.response = turn.text;
      }
    } else {
      e.state = {Mode::kOdd, turn.search_query ? squash_spaces(*turn.search_query) : std::string()};
      if (!e.state.query.empty() && search) e.knowledge = web_search(e.state.query, *search, options.search_limit);
      e.response = turn.text;
    }
    out.push_back(std::move(e));
  }
  return out;
}

nlohmann::ordered_json example_to_json(const TrainingExample& e) {
  nlohmann::ordered_json j;
  j["dialog_id"] = e.dialog_id;
  j["turn"] = e.turn_index;
  nlohmann::ordered_json h = nlohmann::ordered_json::array();
  for (const auto& [sp, text] : e.history.utterances) h.push_back({{"speaker", to_string(sp)}, {"text", text}});
  j["history"] = {{"window_k", e.history.window_k}, {"utterances", h}};
  j["state"] = encode_state(e.state);
  j["knowledge"] = knowledge_to_json(e.knowledge);
  j["response"] = e.response;
  return j;
}

TrainingExample example_from_json(const nlohmann::json& j) {
  try {
    TrainingExample e;
    e.dialog_id = j.at("dialog_id").get<std::string>();
    e.turn_index = j.at("turn").get<std::size_t>();
    e.history.window_k = j.at("history").at("window_k").get<int>();
    for (const auto& u : j.at("history").at("utterances"))
      e.history.utterances.emplace_back(parse_speaker(u.at("speaker").get<std::string>()), u.at("text").get<std::string>());
    e.state = parse_state(j.at("state").get<std::string>());
    e.knowledge = knowledge_from_json(j.at("knowledge"));
    e.response = j.at("response").get<std::string>();
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("training example: ") + ex.what());
  }
}

// ---- serialization ---------------------------------------------------------

std::string_view to_string(TaskTag t) { return t == TaskTag::kState ? "state" : "response"; }

namespace {

std::string speaker_marker(Speaker s) { return s == Speaker::kUser ? "<user>" : "<system>"; }

// Tokens of free text with angle-bracket markers removed, so user text can
// never forge a segment boundary.
std::vector<std::string> text_tokens(const std::string& text) {
  std::vector<std::string> out;
  for (auto& t : tokenize(to_lower(text)))
    if (!(t.size() > 2 && t.front() == '<' && t.back() == '>')) out.push_back(std::move(t));
  return out;
}

}  // namespace

ConditionBuild build_condition(const HistoryWindow& history, TaskTag task, const State* state,
                               const KnowledgeResult* knowledge, const Budget& budget) {
  if (budget.history < 2 || budget.input <= budget.history) throw ValidationError("inconsistent token budget");
  ConditionBuild out;
  std::vector<std::string> hist;
  for (const auto& [sp, text] : history.utterances) {
    hist.push_back(speaker_marker(sp));
    for (auto& t : text_tokens(text)) hist.push_back(std::move(t));
  }
  // One slot of the history budget goes to the <context> marker.
  std::size_t keep = budget.history - 1;
  if (hist.size() > keep) {
    hist.erase(hist.begin(), hist.end() - static_cast<std::ptrdiff_t>(keep));
    out.history_truncated = true;
  }
  Segment ctx{SegmentTag::kContext, join(hist, " ")};
  while (condition_tokens({ctx}).size() > budget.history) {
    hist.erase(hist.begin());
    ctx.text = join(hist, " ");
    out.history_truncated = true;
  }
  out.segments.push_back(ctx);
  out.history_tokens = condition_tokens({ctx}).size();
  if (task == TaskTag::kState) return out;

  if (!state || !knowledge) throw ValidationError("RESPONSE conditioning needs a state and a knowledge result");
  Segment st{SegmentTag::kState, encode_state(*state)};
  std::size_t used = out.history_tokens + condition_tokens({st}).size();
  if (used >= budget.input) throw ValidationError("state does not fit in the input budget");
  out.segments.push_back(st);

  std::size_t room = budget.input - used;
  auto ktoks = text_tokens(knowledge_text(*knowledge));
  if (ktoks.size() + 1 > room) {
    ktoks.resize(room - 1);
    out.knowledge_truncated = true;
  }
  Segment kn{SegmentTag::kKnowledge, join(ktoks, " ")};
  while (used + condition_tokens({kn}).size() > budget.input) {
    ktoks.pop_back();
    kn.text = join(ktoks, " ");
    out.knowledge_truncated = true;
  }
  out.segments.push_back(kn);
  return out;
}

SerializedPair serialize(const TrainingExample& example, TaskTag task, const Budget& budget) {
  ConditionBuild cb = build_condition(example.history, task, &example.state, &example.knowledge, budget);
  SerializedPair p;
  p.task = task;
  p.input_tokens = condition_tokens(cb.segments);
  p.content_tokens = p.input_tokens.size();
  p.history_tokens = cb.history_tokens;
  p.history_truncated = cb.history_truncated;
  p.knowledge_truncated = cb.knowledge_truncated;
  p.input_tokens.resize(budget.input, std::string(kPadToken));
  p.target_tokens = tokenize(to_lower(task == TaskTag::kState ? encode_state(example.state) : example.response));
  if (p.target_tokens.empty())
    throw ValidationError("empty " + std::string(to_string(task)) + " target in dialog '" + example.dialog_id + "'");
  return p;
}

// ---- model -----------------------------------------------------------------

SeqPair to_seq_pair(const Vocabulary& vocab, const SerializedPair& pair) {
  std::vector<std::string> content(pair.input_tokens.begin(),
                                   pair.input_tokens.begin() + static_cast<std::ptrdiff_t>(pair.content_tokens));
  return {vocab.encode(content), vocab.encode(pair.target_tokens)};
}

Vocabulary pivot_vocabulary(const std::vector<TrainingExample>& examples, const Budget& budget, std::size_t max_size) {
  Vocabulary v;
  for (const auto& e : examples)
    for (TaskTag task : {TaskTag::kState, TaskTag::kResponse}) {
      auto p = serialize(e, task, budget);
      v.extend(p.input_tokens, max_size);
      v.extend(p.target_tokens, max_size);
    }
  return v;
}

double pivot_example_loss(const ToyModel& model, const TrainingExample& example, const Budget& budget) {
  return model.nll(to_seq_pair(model.vocab(), serialize(example, TaskTag::kState, budget))) +
         model.nll(to_seq_pair(model.vocab(), serialize(example, TaskTag::kResponse, budget)));
}

TrainReport train_pivot(const std::vector<TrainingExample>& examples, ToyModel& model, const FitOptions& options,
                        const Budget& budget) {
  if (examples.empty()) throw ValidationError("train_pivot needs at least one example");
  std::vector<std::vector<SeqPair>> items;
  items.reserve(examples.size());
  for (const auto& e : examples)
    items.push_back({to_seq_pair(model.vocab(), serialize(e, TaskTag::kState, budget)),
                     to_seq_pair(model.vocab(), serialize(e, TaskTag::kResponse, budget))});
  return fit_items(model, items, options);
}

// ---- inference -------------------------------------------------------------

KnowledgeResult KnowledgeRouter::route(const State& state) {
  if (state.mode == Mode::kOdd) {
    if (state.query.empty() || !search_) return KnowledgeResult::empty();
    return search(state.query);
  }
  BeliefState b = parse_belief(state.query);
  if (b.empty()) return KnowledgeResult::empty();
  std::optional<std::string> domain;
  for (const auto& [d, slots] : b.entries()) {
    const auto* before = previous_.slots(d);
    if (!before || *before != slots) {
      domain = d;
      break;
    }
  }
  if (!domain && active_ && b.slots(*active_)) domain = active_;
  if (!domain) domain = b.domains().front();
  previous_ = b;
  active_ = domain;
  if (!db_ || !db_->has_domain(*domain)) return KnowledgeResult::empty();
  return lookup_db(b, *domain);
}

KnowledgeResult KnowledgeRouter::lookup_db(const BeliefState& belief, const std::string& domain) {
  return db_lookup(belief, domain, *db_);
}

KnowledgeResult KnowledgeRouter::search(const std::string& query) {
  return web_search(query, *search_, search_limit_);
}

std::string lexicalize(const std::string& text, const DBRecord& record) {
  std::string out = text;
  const auto& table = PlaceholderTable::standard();
  for (const auto& [slot, value] : canonical_slots(record.attributes)) {
    auto p = table.placeholder(record.domain, slot);
    if (!p) continue;
    for (auto pos = out.find(*p); pos != std::string::npos; pos = out.find(*p, pos + value.size()))
      out.replace(pos, p->size(), value);
  }
  return out;
}

ChatOutcome chat_turn(PivotSession& session, const std::string& user_utterance, Backend& model,
                      KnowledgeRouter& router, const IntentDetector* detector) {
  if (trim(user_utterance).empty()) throw ValidationError("empty user utterance");
  if (!session.history.empty() && session.history.back().first != Speaker::kSystem)
    throw ValidationError("session history does not end with a system turn");
  session.history.emplace_back(Speaker::kUser, trim(user_utterance));
  const std::size_t n = session.history.size();
  std::size_t span = 2 * static_cast<std::size_t>(std::max(session.window_k, 0)) + 1;
  HistoryWindow h;
  h.window_k = session.window_k;
  h.utterances.assign(session.history.end() - static_cast<std::ptrdiff_t>(std::min(span, n)), session.history.end());

  ChatOutcome out;
  try {
    GenRequest sreq;
    sreq.condition = build_condition(h, TaskTag::kState, nullptr, nullptr, session.budget).segments;
    sreq.max_tokens = session.max_tokens;
    sreq.seed = mix_seed(session.seed, "state:" + std::to_string(n));
    out.raw_state = model.generate(sreq);
    auto parsed = try_parse_state(out.raw_state);
    if (parsed.state) {
      out.state = *parsed.state;
    } else {
      out.fallback = true;
      out.fallback_reason = parsed.error;
      out.state = {detector ? detect(*detector, user_utterance).label : Mode::kTod, ""};
    }
    out.knowledge = router.route(out.state);

    GenRequest rreq;
    rreq.condition = build_condition(h, TaskTag::kResponse, &out.state, &out.knowledge, session.budget).segments;
    rreq.max_tokens = session.max_tokens;
    rreq.seed = mix_seed(session.seed, "response:" + std::to_string(n));
    out.response = model.generate(rreq);
    if (out.state.mode == Mode::kTod && out.knowledge.top_record)
      out.response = lexicalize(out.response, *out.knowledge.top_record);
  } catch (...) {
    session.history.pop_back();
    throw;
  }
  session.history.emplace_back(Speaker::kSystem, out.response);
  return out;
}

nlohmann::ordered_json outcome_to_json(const ChatOutcome& o) {
  nlohmann::ordered_json j;
  j["state"] = encode_state(o.state);
  j["raw_state"] = o.raw_state;
  j["knowledge"] = knowledge_to_json(o.knowledge);
  j["response"] = o.response;
  j["fallback"] = o.fallback;
  if (o.fallback) j["fallback_reason"] = o.fallback_reason;
  return j;
}

// ---- corpus prediction -----------------------------------------------------

std::vector<DialogPrediction> predict_corpus(const DialogSet& gold, Backend& model, const Database& db,
                                             SearchProvider* search, const ExampleOptions& options,
                                             std::uint64_t seed) {
  std::vector<DialogPrediction> out;
  for (const auto& d : gold) {
    validate_dialog(d);
    DialogPrediction p;
    p.dialog_id = d.id;
    const std::uint64_t dseed = mix_seed(seed, d.id);
    for (std::size_t i = 1; i < d.turns.size(); i += 2) {
      HistoryWindow h = build_history(d, i - 1, options.window_k);
      GenRequest sreq;
      sreq.condition = build_condition(h, TaskTag::kState, nullptr, nullptr).segments;
      sreq.seed = mix_seed(dseed, "state:" + std::to_string(i));
      // Unparseable output is scored as a TOD state with no constraints.
      State state = try_parse_state(model.generate(sreq)).state.value_or(State{Mode::kTod, ""});
      KnowledgeResult k;
      if (state.mode == Mode::kTod) {
        BeliefState b = parse_belief(state.query);
        if (auto domain = active_domain(d.turns[i], b); domain && db.has_domain(*domain)) k = db_lookup(b, *domain, db);
      } else if (!state.query.empty() && search) {
        k = web_search(state.query, *search, options.search_limit);
      }
      GenRequest rreq;
      rreq.condition = build_condition(h, TaskTag::kResponse, &state, &k).segments;
      rreq.seed = mix_seed(dseed, "response:" + std::to_string(i));
      p.turns.push_back({i, state, model.generate(rreq)});
    }
    out.push_back(std::move(p));
  }
  return out;
}

nlohmann::ordered_json prediction_to_json(const DialogPrediction& p) {
  nlohmann::ordered_json j;
  j["dialog_id"] = p.dialog_id;
  j["turns"] = nlohmann::ordered_json::array();
  for (const auto& t : p.turns)
    j["turns"].push_back({{"turn", t.turn_index}, {"state", encode_state(t.state)}, {"response", t.response}});
  return j;
}

DialogPrediction prediction_from_json(const nlohmann::json& j) {
  try {
    DialogPrediction p;
    p.dialog_id = j.at("dialog_id").get<std::string>();
    for (const auto& t : j.at("turns"))
      p.turns.push_back({t.at("turn").get<std::size_t>(), parse_state(t.at("state").get<std::string>()),
                         t.at("response").get<std::string>()});
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("prediction record: ") + e.what());
  }
}

}  // namespace dialfuse
