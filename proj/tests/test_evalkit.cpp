#include <cmath>

#include "doctest.h"
#include "dialfuse/error.hpp"
#include "dialfuse/evalkit.hpp"
#include "dialfuse/text.hpp"
#include "fixtures.hpp"

using namespace dialfuse;

namespace {

// Gold states and delexicalized gold responses.
DialogPrediction oracle(const Dialog& d) {
  DialogPrediction p;
  p.dialog_id = d.id;
  BeliefState cumulative;
  for (std::size_t i = 1; i < d.turns.size(); i += 2) {
    const Turn& t = d.turns[i];
    State s{Mode::kOdd, t.search_query.value_or("")};
    if (t.mode == Mode::kTod) {
      cumulative.merge(*t.belief);
      s = tod_state(cumulative);
    }
    p.turns.push_back({i, s, gold_response(t)});
  }
  return p;
}

std::vector<DialogPrediction> oracle(const DialogSet& ds) {
  std::vector<DialogPrediction> out;
  for (const auto& d : ds) out.push_back(oracle(d));
  return out;
}

EvalReport report_with(double tod_bleu, double full_combined) {
  EvalReport r;
  r.setting = "initial";
  r.tod.bleu = tod_bleu;
  r.full.combined = full_combined;
  return r;
}

}  // namespace

TEST_SUITE("evalkit") {
  TEST_CASE("bleu against hand-computed values") {
    CHECK(bleu({"the cat sat on the mat"}, {"the cat sat on the mat"}) == doctest::Approx(100.0));
    // Modified precisions 5/6, 3/5, 2/4, 1/3; equal lengths.
    CHECK(bleu({"the cat sat on the mat"}, {"the cat sat on a mat"}) ==
          doctest::Approx(100.0 * std::pow(1.0 / 12.0, 0.25)).epsilon(1e-12));
    // Precisions 2/4, 1/3, then two zero counts floored to 0.1.
    CHECK(bleu({"a b x y"}, {"a b c d"}) ==
          doctest::Approx(100.0 * std::pow(0.5 * (1.0 / 3.0) * (0.1 / 2.0) * (0.1 / 1.0), 0.25)).epsilon(1e-12));
    // Perfect precision, brevity penalty exp(1 - 6/5).
    CHECK(bleu({"the cat sat on the mat"}, {"the cat sat on the"}) ==
          doctest::Approx(100.0 * std::exp(-0.2)).epsilon(1e-12));
    // Counts are pooled over the corpus, and case is ignored.
    CHECK(bleu({"The Cat sat on the mat", "a b x y"}, {"the cat sat on a mat", "a b c d"}) ==
          doctest::Approx(100.0 * std::pow((7.0 / 10) * (4.0 / 8) * (2.0 / 6) * (1.0 / 4), 0.25)).epsilon(1e-12));
    CHECK(bleu({"x"}, {""}) == 0.0);
    CHECK_THROWS_AS(bleu({"a"}, {"a", "b"}), ValidationError);
    CHECK_THROWS_AS(bleu({}, {}), ValidationError);
  }

  TEST_CASE("combined score") { CHECK(combined(80, 60, 15) == doctest::Approx(85)); }

  TEST_CASE("gold predictions inform and succeed") {
    DialogSet gold = dftest::tod_fixture(24, 4);
    auto is = inform_success(gold, oracle(gold), dftest::fixture_db());
    CHECK(is.inform == doctest::Approx(100));
    CHECK(is.success == doctest::Approx(100));
  }

  TEST_CASE("wrong entity and missing requests") {
    Dialog d = dftest::make_tod_dialog("r", 1, 12);
    REQUIRE(d.goal_card->domains.count("restaurant") + d.goal_card->domains.count("hotel") +
                d.goal_card->domains.count("attraction") + d.goal_card->domains.count("train") ==
            1);
    std::string domain = d.goal_card->domains.begin()->first;
    DialogPrediction p = oracle(d);
    CHECK(match_dialog(d, p, dftest::fixture_db()).success);

    // Requests never answered: informed but not successful.
    DialogPrediction no_req = p;
    for (std::size_t k = 1; k < no_req.turns.size(); ++k) no_req.turns[k].response = "ok .";
    auto m = match_dialog(d, no_req, dftest::fixture_db());
    CHECK(m.inform);
    CHECK_FALSE(m.success);

    // No entity offered.
    DialogPrediction silent = p;
    for (auto& t : silent.turns) t.response = "ok .";
    CHECK_FALSE(match_dialog(d, silent, dftest::fixture_db()).inform);

    // Offered under a belief that contradicts the goal.
    DialogPrediction wrong = p;
    BeliefState b;
    const auto& info = d.goal_card->domains.at(domain).info;
    for (const auto& rec : dftest::fixture_db().records(domain)) {
      bool differs = false;
      for (const auto& [slot, value] : info)
        if (rec.attributes.count(slot) && rec.attributes.at(slot) != value) differs = true;
      if (!differs) continue;
      for (const auto& [slot, value] : info)
        if (rec.attributes.count(slot)) b.set(domain, slot, rec.attributes.at(slot));
      break;
    }
    for (auto& t : wrong.turns) t.state = tod_state(b);
    CHECK_FALSE(match_dialog(d, wrong, dftest::fixture_db()).inform);

    Dialog no_goal = d;
    no_goal.goal_card.reset();
    CHECK_THROWS_AS(match_dialog(no_goal, p, dftest::fixture_db()), ValidationError);
  }

  TEST_CASE("prediction alignment") {
    DialogSet gold = dftest::tod_fixture(3, 1);
    auto preds = oracle(gold);
    std::swap(preds[0], preds[2]);
    auto aligned = align_predictions(gold, preds);
    CHECK(aligned[0]->dialog_id == gold[0].id);
    auto missing = preds;
    missing.pop_back();
    CHECK_THROWS_AS(align_predictions(gold, missing), ValidationError);
    auto shifted = preds;
    shifted[1].turns[0].turn_index = 2;
    CHECK_THROWS_AS(align_predictions(gold, shifted), ValidationError);
  }

  TEST_CASE("mode accuracy counts gold ODD turns only") {
    using M = Mode;
    CHECK(mode_accuracy({M::kOdd, M::kTod, M::kOdd}, {M::kOdd, M::kOdd, M::kTod}) == doctest::Approx(50));
    CHECK_THROWS_AS(mode_accuracy({M::kOdd}, {M::kTod}), UndefinedMetric);
    CHECK_THROWS_AS(mode_accuracy({M::kOdd}, {M::kOdd, M::kTod}), ValidationError);
  }

  TEST_CASE("odd success rate is per dialog") {
    using M = Mode;
    std::vector<std::vector<M>> gold = {{M::kOdd, M::kOdd}, {M::kOdd, M::kTod}, {M::kTod}};
    std::vector<std::vector<M>> pred = {{M::kOdd, M::kOdd}, {M::kTod, M::kTod}, {M::kOdd}};
    CHECK(odd_success_rate(pred, gold) == doctest::Approx(50));
    CHECK_THROWS_AS(odd_success_rate({{M::kTod}}, {{M::kTod}}), UndefinedMetric);
  }

  TEST_CASE("evaluate on a fused set with gold predictions") {
    DialogSet gold = dftest::fused_fixture(Setting::kTransition, 12, 8);
    REQUIRE(!gold.empty());
    EvalReport r = evaluate(gold, oracle(gold), dftest::fixture_db(), "transition", 3);
    CHECK(r.tod.bleu == doctest::Approx(100));
    CHECK(r.tod.inform == doctest::Approx(100));
    CHECK(r.tod.combined == doctest::Approx(200));
    REQUIRE(r.odd);
    CHECK(r.odd->accuracy == doctest::Approx(100));
    CHECK(r.odd->success_rate == doctest::Approx(100));
    CHECK(r.full.combined == doctest::Approx(200));
    CHECK(r.n_dialogs == gold.size());

    auto back = eval_report_from_json(nlohmann::json::parse(report_to_json(r).dump()));
    CHECK(flatten(back) == flatten(r));
    auto j = nlohmann::json::parse(report_to_json(r).dump());
    j["schema_version"] = 99;
    CHECK_THROWS_AS(eval_report_from_json(j), ParseError);

    DialogSet tod_only = dftest::tod_fixture(4, 2);
    CHECK_FALSE(evaluate(tod_only, oracle(tod_only), dftest::fixture_db(), "tod", 0).odd);
  }

  TEST_CASE("missing a gold ODD turn fails the full task") {
    DialogSet gold = dftest::fused_fixture(Setting::kInitial, 6, 8);
    auto preds = oracle(gold);
    for (auto& p : preds)
      for (auto& t : p.turns)
        if (t.state.mode == Mode::kOdd) t.state = {Mode::kTod, ""};
    FullBlock f = full_task_eval(gold, preds, dftest::fixture_db());
    CHECK(f.inform == 0);
    CHECK(f.success == 0);
    CHECK(f.combined == doctest::Approx(f.bleu));
  }

  TEST_CASE("aggregation over seeds uses the sample deviation") {
    auto a = aggregate_runs({report_with(10, 50), report_with(12, 52)});
    CHECK(a.runs == 2);
    CHECK(a.metrics.at("tod.bleu").mean == doctest::Approx(11));
    CHECK(a.metrics.at("tod.bleu").std == doctest::Approx(std::sqrt(2.0)));
    CHECK_THROWS_AS(aggregate_runs({report_with(1, 1)}), ValidationError);
    auto other = report_with(1, 1);
    other.setting = "multiple";
    CHECK_THROWS_AS(aggregate_runs({report_with(1, 1), other}), ValidationError);
    CHECK(mean_std({3.0}).std == 0);
  }

  TEST_CASE("cross-setting matrix") {
    std::map<std::pair<std::string, std::string>, std::vector<EvalReport>> runs;
    runs[{"initial", "transition"}] = {report_with(0, 40)};
    runs[{"multiple", "multiple"}] = {report_with(0, 40), report_with(0, 44)};
    CrossMatrix m = cross_setting_eval(runs);
    CHECK(m.cells.size() == 2);
    CHECK(m.cells.at({"initial", "transition"}).combined == doctest::Approx(40));
    CHECK_FALSE(m.cells.at({"initial", "transition"}).aggregate);
    CHECK(m.cells.at({"multiple", "multiple"}).combined == doctest::Approx(42));
    CHECK(m.cells.at({"multiple", "multiple"}).aggregate->n == 2);
    CHECK(m.cells.count({"initial", "initial"}) == 0);
    CHECK(format_cross(m).find("42.00") != std::string::npos);
  }

  TEST_CASE("paired bootstrap") {
    std::vector<double> a, b;
    SplitMix64 rng(1);
    for (int i = 0; i < 50; ++i) {
      double x = rng.unit();
      a.push_back(x + 0.5);
      b.push_back(x + 0.1 * rng.unit());
    }
    CHECK(paired_bootstrap(a, b, 2000, 3) < 0.01);
    CHECK(paired_bootstrap(a, a, 2000, 3) == doctest::Approx(1.0));
    CHECK(paired_bootstrap(a, b, 500, 9) == paired_bootstrap(a, b, 500, 9));
    CHECK_THROWS_AS(paired_bootstrap(a, {1.0}, 10, 0), ValidationError);
  }
}
