#include "dialfuse/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "dialfuse/error.hpp"
#include "dialfuse/text.hpp"

namespace dialfuse {

// ---- BLEU ------------------------------------------------------------------

double bleu(const std::vector<std::string>& references, const std::vector<std::string>& hypotheses) {
  if (references.size() != hypotheses.size())
    throw ValidationError("bleu: " + std::to_string(references.size()) + " references vs " +
                          std::to_string(hypotheses.size()) + " hypotheses");
  if (references.empty()) throw ValidationError("bleu needs at least one pair");
  constexpr int kOrder = 4;
  constexpr double kFloor = 0.1;
  std::array<double, kOrder> matches{}, totals{};
  double hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < references.size(); ++i) {
    auto ref = tokenize(to_lower(references[i]));
    auto hyp = tokenize(to_lower(hypotheses[i]));
    hyp_len += static_cast<double>(hyp.size());
    ref_len += static_cast<double>(ref.size());
    for (int n = 1; n <= kOrder; ++n) {
      std::map<std::vector<std::string>, int> ref_counts;
      for (std::size_t k = 0; k + static_cast<std::size_t>(n) <= ref.size(); ++k)
        ++ref_counts[std::vector<std::string>(ref.begin() + static_cast<std::ptrdiff_t>(k),
                                              ref.begin() + static_cast<std::ptrdiff_t>(k) + n)];
      std::map<std::vector<std::string>, int> hyp_counts;
      for (std::size_t k = 0; k + static_cast<std::size_t>(n) <= hyp.size(); ++k)
        ++hyp_counts[std::vector<std::string>(hyp.begin() + static_cast<std::ptrdiff_t>(k),
                                              hyp.begin() + static_cast<std::ptrdiff_t>(k) + n)];
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += std::min(c, it->second);
        totals[n - 1] += c;
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_sum = 0;
  for (int n = 0; n < kOrder; ++n) {
    if (totals[n] == 0) return 0.0;
    log_sum += std::log((matches[n] > 0 ? matches[n] : kFloor) / totals[n]);
  }
  double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
  return 100.0 * bp * std::exp(log_sum / kOrder);
}

// ---- alignment -------------------------------------------------------------

std::string gold_response(const Turn& turn) { return turn.delex_text.value_or(turn.text); }

std::vector<const DialogPrediction*> align_predictions(const DialogSet& gold,
                                                       const std::vector<DialogPrediction>& predictions) {
  std::map<std::string, const DialogPrediction*> by_id;
  for (const auto& p : predictions)
    if (!by_id.emplace(p.dialog_id, &p).second) throw ValidationError("duplicate prediction for '" + p.dialog_id + "'");
  std::vector<const DialogPrediction*> out;
  for (const auto& g : gold) {
    auto it = by_id.find(g.id);
    if (it == by_id.end()) throw ValidationError("no prediction for dialog '" + g.id + "'");
    const DialogPrediction& p = *it->second;
    std::size_t k = 0;
    for (std::size_t i = 1; i < g.turns.size(); i += 2, ++k)
      if (k >= p.turns.size() || p.turns[k].turn_index != i)
        throw ValidationError("prediction for '" + g.id + "' does not cover system turn " + std::to_string(i));
    if (k != p.turns.size()) throw ValidationError("prediction for '" + g.id + "' has extra turns");
    out.push_back(&p);
  }
  return out;
}

namespace {

std::vector<Mode> gold_modes(const Dialog& d) {
  std::vector<Mode> out;
  for (std::size_t i = 1; i < d.turns.size(); i += 2) out.push_back(d.turns[i].mode);
  return out;
}

std::vector<Mode> predicted_modes(const DialogPrediction& p) {
  std::vector<Mode> out;
  for (const auto& t : p.turns) out.push_back(t.state.mode);
  return out;
}

bool all_odd_hit(const Dialog& g, const DialogPrediction& p) {
  auto gm = gold_modes(g);
  auto pm = predicted_modes(p);
  for (std::size_t i = 0; i < gm.size(); ++i)
    if (gm[i] == Mode::kOdd && pm[i] != Mode::kOdd) return false;
  return true;
}

std::string entity_placeholder(const std::string& domain) {
  return domain == "train" ? "[train_id]" : "[" + domain + "_name]";
}

double percent(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

// ---- inform / success ------------------------------------------------------

DialogMatch match_dialog(const Dialog& gold, const DialogPrediction& prediction, const Database& db) {
  if (!gold.goal_card) throw ValidationError("dialog '" + gold.id + "' has no goal card");
  const GoalCard& goal = *gold.goal_card;
  const auto& table = PlaceholderTable::standard();

  std::map<std::string, std::optional<std::size_t>> offered;
  BeliefState latest;
  for (const auto& t : prediction.turns) {
    if (t.state.mode == Mode::kTod) {
      auto parsed = try_parse_state(encode_state(t.state));
      if (parsed.state) latest = parse_belief(parsed.state->query);
    }
    for (const auto& [domain, dg] : goal.domains) {
      if (dg.info.empty() || !db.has_domain(domain)) continue;
      if (t.response.find(entity_placeholder(domain)) == std::string::npos) continue;
      std::optional<std::size_t> entity;
      if (latest.slots(domain)) {
        auto m = db_matches(latest, domain, db);
        if (!m.empty()) entity = m.front();
      }
      offered[domain] = entity;
    }
  }

  DialogMatch r;
  r.inform = true;
  for (const auto& [domain, dg] : goal.domains) {
    if (dg.info.empty() || !db.has_domain(domain)) continue;
    auto it = offered.find(domain);
    if (it == offered.end() || !it->second) {
      r.inform = false;
      break;
    }
    BeliefState constraints;
    for (const auto& [slot, value] : dg.info) constraints.set(domain, slot, value);
    auto venues = db_matches(constraints, domain, db);
    if (std::find(venues.begin(), venues.end(), *it->second) == venues.end()) {
      r.inform = false;
      break;
    }
  }
  if (!r.inform) return r;
  r.success = true;
  for (const auto& [domain, dg] : goal.domains)
    for (const auto& slot : dg.reqt) {
      auto p = table.placeholder(domain, slot);
      if (!p) continue;
      bool seen = std::any_of(prediction.turns.begin(), prediction.turns.end(),
                              [&](const PredictedTurn& t) { return t.response.find(*p) != std::string::npos; });
      if (!seen) r.success = false;
    }
  return r;
}

InformSuccess inform_success(const DialogSet& gold, const std::vector<DialogPrediction>& predictions,
                             const Database& db) {
  auto aligned = align_predictions(gold, predictions);
  std::size_t inform = 0, success = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto m = match_dialog(gold[i], *aligned[i], db);
    inform += m.inform;
    success += m.success;
  }
  return {percent(inform, gold.size()), percent(success, gold.size())};
}

// ---- ODD metrics -------------------------------------------------------------

double mode_accuracy(const std::vector<Mode>& predicted, const std::vector<Mode>& gold) {
  if (predicted.size() != gold.size())
    throw ValidationError("mode_accuracy: " + std::to_string(predicted.size()) + " predictions vs " +
                          std::to_string(gold.size()) + " gold turns");
  std::size_t odd = 0, hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i)
    if (gold[i] == Mode::kOdd) {
      ++odd;
      hit += predicted[i] == Mode::kOdd;
    }
  if (odd == 0) throw UndefinedMetric("mode accuracy is undefined without gold ODD turns");
  return percent(hit, odd);
}

double odd_success_rate(const std::vector<std::vector<Mode>>& predicted, const std::vector<std::vector<Mode>>& gold) {
  if (predicted.size() != gold.size()) throw ValidationError("odd_success_rate: dialog counts differ");
  std::size_t with_odd = 0, ok = 0;
  for (std::size_t d = 0; d < gold.size(); ++d) {
    if (predicted[d].size() != gold[d].size())
      throw ValidationError("odd_success_rate: turn counts differ in dialog " + std::to_string(d));
    bool any = false, all = true;
    for (std::size_t i = 0; i < gold[d].size(); ++i)
      if (gold[d][i] == Mode::kOdd) {
        any = true;
        all = all && predicted[d][i] == Mode::kOdd;
      }
    if (!any) continue;
    ++with_odd;
    ok += all;
  }
  if (with_odd == 0) throw UndefinedMetric("success rate is undefined without dialogs containing ODD turns");
  return percent(ok, with_odd);
}

// ---- blocks ----------------------------------------------------------------

FullBlock full_task_eval(const DialogSet& gold, const std::vector<DialogPrediction>& predictions, const Database& db) {
  auto aligned = align_predictions(gold, predictions);
  std::vector<std::string> refs, hyps;
  std::size_t inform = 0, success = 0;
  for (std::size_t d = 0; d < gold.size(); ++d) {
    const auto& p = *aligned[d];
    for (std::size_t k = 0; k < p.turns.size(); ++k) {
      refs.push_back(gold_response(gold[d].turns[p.turns[k].turn_index]));
      hyps.push_back(p.turns[k].response);
    }
    auto m = match_dialog(gold[d], p, db);
    if (!all_odd_hit(gold[d], p)) continue;
    inform += m.inform;
    success += m.success;
  }
  FullBlock b;
  b.bleu = refs.empty() ? 0.0 : bleu(refs, hyps);
  b.inform = percent(inform, gold.size());
  b.success = percent(success, gold.size());
  b.combined = combined(b.inform, b.success, b.bleu);
  return b;
}

EvalReport evaluate(const DialogSet& gold, const std::vector<DialogPrediction>& predictions, const Database& db,
                    const std::string& setting, std::uint64_t seed, const EvalOptions& options) {
  auto aligned = align_predictions(gold, predictions);
  EvalReport r;
  r.setting = setting;
  r.seed = seed;
  r.n_dialogs = gold.size();

  std::vector<std::string> tod_refs, tod_hyps, odd_refs, odd_hyps;
  std::vector<Mode> flat_pred, flat_gold;
  std::vector<std::vector<Mode>> dial_pred, dial_gold;
  for (std::size_t d = 0; d < gold.size(); ++d) {
    const auto& p = *aligned[d];
    for (const auto& t : p.turns) {
      const Turn& g = gold[d].turns[t.turn_index];
      if (g.mode == Mode::kTod) {
        tod_refs.push_back(gold_response(g));
        tod_hyps.push_back(t.response);
      } else if (options.transition_in_odd_bleu || !g.is_transition) {
        odd_refs.push_back(gold_response(g));
        odd_hyps.push_back(t.response);
      }
    }
    dial_gold.push_back(gold_modes(gold[d]));
    dial_pred.push_back(predicted_modes(p));
    flat_gold.insert(flat_gold.end(), dial_gold.back().begin(), dial_gold.back().end());
    flat_pred.insert(flat_pred.end(), dial_pred.back().begin(), dial_pred.back().end());
  }
  auto is = inform_success(gold, predictions, db);
  r.tod.bleu = tod_refs.empty() ? 0.0 : bleu(tod_refs, tod_hyps);
  r.tod.inform = is.inform;
  r.tod.success = is.success;
  r.tod.combined = combined(r.tod.inform, r.tod.success, r.tod.bleu);
  if (std::count(flat_gold.begin(), flat_gold.end(), Mode::kOdd) > 0) {
    OddBlock o;
    o.accuracy = mode_accuracy(flat_pred, flat_gold);
    o.success_rate = odd_success_rate(dial_pred, dial_gold);
    o.bleu = odd_refs.empty() ? 0.0 : bleu(odd_refs, odd_hyps);
    r.odd = o;
  }
  r.full = full_task_eval(gold, predictions, db);
  return r;
}

nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["schema_version"] = r.schema_version;
  j["bleu_variant"] = r.bleu_variant;
  j["setting"] = r.setting;
  j["seed"] = r.seed;
  j["n_dialogs"] = r.n_dialogs;
  j["tod"] = {{"bleu", r.tod.bleu}, {"inform", r.tod.inform}, {"success", r.tod.success}, {"combined", r.tod.combined}};
  if (r.odd) {
    j["odd"] = {{"accuracy", r.odd->accuracy}, {"success_rate", r.odd->success_rate}, {"bleu", r.odd->bleu}};
  } else {
    j["odd"] = nullptr;
  }
  j["full"] = {{"bleu", r.full.bleu}, {"inform", r.full.inform}, {"success", r.full.success},
               {"combined", r.full.combined}};
  return j;
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.schema_version = j.at("schema_version").get<int>();
    if (r.schema_version != kReportSchemaVersion) throw ParseError("unsupported report schema version");
    r.bleu_variant = j.at("bleu_variant").get<std::string>();
    r.setting = j.at("setting").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.n_dialogs = j.at("n_dialogs").get<std::size_t>();
    const auto& t = j.at("tod");
    r.tod = {t.at("bleu").get<double>(), t.at("inform").get<double>(), t.at("success").get<double>(),
             t.at("combined").get<double>()};
    if (!j.at("odd").is_null()) {
      const auto& o = j.at("odd");
      r.odd = OddBlock{o.at("accuracy").get<double>(), o.at("success_rate").get<double>(), o.at("bleu").get<double>()};
    }
    const auto& f = j.at("full");
    r.full = {f.at("bleu").get<double>(), f.at("inform").get<double>(), f.at("success").get<double>(),
              f.at("combined").get<double>()};
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("eval report: ") + e.what());
  }
}

// ---- aggregation -----------------------------------------------------------

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) throw ValidationError("mean_std of an empty list");
  MeanStd m;
  m.n = values.size();
  m.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(m.n);
  if (m.n > 1) {
    double ss = 0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(m.n - 1));
  }
  return m;
}

std::map<std::string, double> flatten(const EvalReport& r) {
  std::map<std::string, double> out = {
      {"tod.bleu", r.tod.bleu},       {"tod.inform", r.tod.inform},   {"tod.success", r.tod.success},
      {"tod.combined", r.tod.combined}, {"full.bleu", r.full.bleu},   {"full.inform", r.full.inform},
      {"full.success", r.full.success}, {"full.combined", r.full.combined}};
  if (r.odd) {
    out["odd.accuracy"] = r.odd->accuracy;
    out["odd.success_rate"] = r.odd->success_rate;
    out["odd.bleu"] = r.odd->bleu;
  }
  return out;
}

RunAggregate aggregate_runs(const std::vector<EvalReport>& reports) {
  if (reports.size() < 2) throw ValidationError("aggregate_runs needs at least two reports");
  RunAggregate a;
  a.setting = reports.front().setting;
  a.runs = reports.size();
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : reports) {
    if (r.setting != a.setting) throw ValidationError("aggregate_runs over mixed settings");
    for (const auto& [k, v] : flatten(r)) values[k].push_back(v);
  }
  for (const auto& [k, v] : values)
    if (v.size() == reports.size()) a.metrics[k] = mean_std(v);
  return a;
}

nlohmann::ordered_json aggregate_to_json(const RunAggregate& a) {
  nlohmann::ordered_json j;
  j["setting"] = a.setting;
  j["runs"] = a.runs;
  nlohmann::ordered_json m;
  for (const auto& [k, v] : a.metrics) m[k] = {{"mean", v.mean}, {"std", v.std}};
  j["metrics"] = m;
  return j;
}

CrossMatrix cross_setting_eval(const std::map<std::pair<std::string, std::string>, std::vector<EvalReport>>& runs,
                               const std::vector<std::string>& settings) {
  CrossMatrix m;
  m.settings = settings;
  for (const auto& [key, reports] : runs) {
    if (reports.empty()) continue;
    std::vector<double> values;
    for (const auto& r : reports) values.push_back(r.full.combined);
    CrossCell c;
    MeanStd ms = mean_std(values);
    c.combined = ms.mean;
    if (values.size() >= 2) c.aggregate = ms;
    m.cells[key] = c;
  }
  return m;
}

nlohmann::ordered_json cross_to_json(const CrossMatrix& m) {
  nlohmann::ordered_json j;
  j["settings"] = m.settings;
  nlohmann::ordered_json rows = nlohmann::ordered_json::object();
  for (const auto& train : m.settings) {
    nlohmann::ordered_json row = nlohmann::ordered_json::object();
    for (const auto& eval : m.settings) {
      auto it = m.cells.find({train, eval});
      if (it == m.cells.end()) {
        row[eval] = nullptr;
        continue;
      }
      nlohmann::ordered_json cell = {{"combined", it->second.combined}};
      if (it->second.aggregate) cell["std"] = it->second.aggregate->std, cell["runs"] = it->second.aggregate->n;
      row[eval] = cell;
    }
    rows[train] = row;
  }
  j["matrix"] = rows;
  return j;
}

double paired_bootstrap(const std::vector<double>& a, const std::vector<double>& b, int resamples, std::uint64_t seed) {
  if (a.size() != b.size() || a.empty()) throw ValidationError("paired_bootstrap needs equal, nonempty samples");
  if (resamples < 1) throw ValidationError("paired_bootstrap needs >= 1 resample");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  SplitMix64 rng(seed);
  long le = 0, ge = 0;
  for (int r = 0; r < resamples; ++r) {
    double s = 0;
    for (std::size_t i = 0; i < d.size(); ++i) s += d[rng.below(d.size())];
    le += s <= 0;
    ge += s >= 0;
  }
  double p = 2.0 * static_cast<double>(std::min(le, ge)) / static_cast<double>(resamples);
  return std::min(1.0, p);
}

// ---- text tables -----------------------------------------------------------

namespace {

std::string fixed(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

std::string with_std(const RunAggregate& a, const std::string& key) {
  auto it = a.metrics.find(key);
  if (it == a.metrics.end()) return "-";
  return fixed(it->second.mean) + " (" + fixed(it->second.std) + ")";
}

std::string row(const std::vector<std::string>& cells, std::size_t width) {
  std::string out;
  for (const auto& c : cells) {
    out += c;
    if (c.size() < width) out.append(width - c.size(), ' ');
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out + "\n";
}

}  // namespace

std::string format_report(const EvalReport& r) {
  std::string out = "setting " + r.setting + "  seed " + std::to_string(r.seed) + "  dialogs " +
                    std::to_string(r.n_dialogs) + "  bleu " + r.bleu_variant + "\n";
  out += row({"block", "BLEU", "Inform", "Success", "Combined", "Accuracy", "SuccessRate"}, 12);
  out += row({"TOD", fixed(r.tod.bleu), fixed(r.tod.inform), fixed(r.tod.success), fixed(r.tod.combined), "", ""}, 12);
  if (r.odd) out += row({"ODD", fixed(r.odd->bleu), "", "", "", fixed(r.odd->accuracy), fixed(r.odd->success_rate)}, 12);
  out += row({"Full", fixed(r.full.bleu), fixed(r.full.inform), fixed(r.full.success), fixed(r.full.combined), "", ""}, 12);
  return out;
}

std::string format_aggregate(const RunAggregate& a) {
  std::string out = "setting " + a.setting + "  runs " + std::to_string(a.runs) + "  mean (std)\n";
  out += row({"block", "BLEU", "Inform", "Success", "Combined", "Accuracy", "SuccessRate"}, 16);
  out += row({"TOD", with_std(a, "tod.bleu"), with_std(a, "tod.inform"), with_std(a, "tod.success"),
              with_std(a, "tod.combined"), "", ""},
             16);
  if (a.metrics.count("odd.accuracy"))
    out += row({"ODD", with_std(a, "odd.bleu"), "", "", "", with_std(a, "odd.accuracy"), with_std(a, "odd.success_rate")},
               16);
  out += row({"Full", with_std(a, "full.bleu"), with_std(a, "full.inform"), with_std(a, "full.success"),
              with_std(a, "full.combined"), "", ""},
             16);
  return out;
}

std::string format_cross(const CrossMatrix& m) {
  std::vector<std::string> header = {"train \\ eval"};
  header.insert(header.end(), m.settings.begin(), m.settings.end());
  std::string out = row(header, 18);
  for (const auto& train : m.settings) {
    std::vector<std::string> cells = {train};
    for (const auto& eval : m.settings) {
      auto it = m.cells.find({train, eval});
      if (it == m.cells.end()) {
        cells.push_back("n/a");
      } else if (it->second.aggregate) {
        cells.push_back(fixed(it->second.combined) + " (" + fixed(it->second.aggregate->std) + ")");
      } else {
        cells.push_back(fixed(it->second.combined));
      }
    }
    out += row(cells, 18);
  }
  return out;
}

}  // namespace dialfuse
