#include <atomic>
#include <sstream>

#include "doctest.h"
#include "dialfuse/error.hpp"
#include "dialfuse/synthesis.hpp"
#include "dialfuse/text.hpp"
#include "fixtures.hpp"

using namespace dialfuse;

namespace {

SynthesisConfig config_for(Setting s, std::uint64_t seed = 3) {
  SynthesisConfig c;
  c.setting = s;
  c.personas = default_personas();
  c.seed = seed;
  return c;
}

std::string dump(const DialogSet& ds) {
  std::ostringstream out;
  write_jsonl(out, ds);
  return out.str();
}

}  // namespace

TEST_SUITE("synthesis") {
  TEST_CASE("goal extraction picks the earliest slot value") {
    Dialog d = dftest::make_tod_dialog("g1", 1, 5);
    Goal g = extract_goal(d, 0, dftest::fixture_ontology());
    CHECK(g.source_turn_index == 0);
    auto pos = find_word(to_lower(d.turns[0].text), g.value);
    REQUIRE(pos);
    for (const auto& [domain, slots] : dftest::fixture_ontology().entries())
      for (const auto& [slot, values] : slots) {
        if (std::find(kGoalSlots.begin(), kGoalSlots.end(), slot) == kGoalSlots.end()) continue;
        for (const auto& v : values)
          if (auto p = find_word(to_lower(d.turns[0].text), v)) CHECK(*p >= *pos);
      }
    CHECK_THROWS_AS(extract_goal(d, 1, dftest::fixture_ontology()), ValidationError);
    Dialog closing = d;
    CHECK_THROWS_AS(extract_goal(closing, closing.turns.size() - 2, dftest::fixture_ontology()), NoGoal);
  }

  TEST_CASE("config validation") {
    SynthesisConfig c = config_for(Setting::kInitial);
    c.personas.clear();
    CHECK_THROWS_AS(validate_config(c), ValidationError);
    c = config_for(Setting::kMultiple);
    c.max_odd_turns = -1;
    CHECK_THROWS_AS(validate_config(c), ValidationError);
    CHECK(config_for(Setting::kInitial).odd_turn_cap() == 5);
    CHECK(config_for(Setting::kTransition).odd_turn_cap() == 3);
    CHECK(parse_setting("multiple") == Setting::kMultiple);
    CHECK_THROWS_AS(parse_setting("sideways"), ParseError);
  }

  TEST_CASE("mode switch counts per setting") {
    auto b = dftest::sim_backends();
    DialogSet tod = dftest::tod_fixture(12, 21);
    for (Setting s : {Setting::kInitial, Setting::kTransition, Setting::kMultiple}) {
      auto r = synthesize_corpus(tod, config_for(s), b.view(), &dftest::fixture_detector(), dftest::fixture_ontology());
      REQUIRE(!r.dialogs.empty());
      for (std::size_t i = 0; i < r.dialogs.size(); ++i) {
        const Dialog& d = r.dialogs[i];
        const SynthesisTrace& t = r.traces[i];
        CAPTURE(d.id);
        CHECK(d.source == DialogSource::kSynthesized);
        if (s == Setting::kInitial) CHECK(count_mode_switches(d) == 1);
        if (s == Setting::kTransition) CHECK(count_mode_switches(d) == 2);
        if (s == Setting::kMultiple) CHECK(count_mode_switches(d) == 2 * t.accepted());
        CHECK_NOTHROW(validate_dialog(d));
      }
    }
  }

  TEST_CASE("transition on a single-domain dialog is inapplicable") {
    auto b = dftest::sim_backends();
    Dialog one = dftest::make_tod_dialog("one", 1, 4);
    CHECK_THROWS_AS(enrich(one, config_for(Setting::kTransition), b.view(), nullptr, dftest::fixture_ontology()),
                    SettingInapplicable);
    auto r = synthesize_corpus({one}, config_for(Setting::kTransition), b.view(), nullptr, dftest::fixture_ontology());
    CHECK(r.dialogs.empty());
    REQUIRE(r.skipped.size() == 1);
    CHECK(r.skipped[0].dialog_id == "one");
  }

  TEST_CASE("transition interlude sits at the first domain boundary") {
    auto b = dftest::sim_backends();
    Dialog two = dftest::make_tod_dialog("two", 2, 8);
    auto r = enrich(two, config_for(Setting::kTransition), b.view(), &dftest::fixture_detector(),
                    dftest::fixture_ontology());
    REQUIRE(r.dialog);
    const auto& turns = r.dialog->turns;
    std::size_t first_odd = 0;
    while (turns[first_odd].mode == Mode::kTod) ++first_odd;
    CHECK(first_odd == 4);  // two exchanges per domain
    std::size_t last_odd = first_odd;
    while (turns[last_odd + 1].mode == Mode::kOdd) ++last_odd;
    CHECK(turns[last_odd].is_transition);
    CHECK(turns[last_odd].speaker == Speaker::kSystem);
    CHECK(turns[last_odd + 1].domain == two.turns[4].domain);
  }

  TEST_CASE("snippets stop when the user mentions the goal") {
    auto b = dftest::sim_backends(2);
    Goal g{"cheap", "pricerange", "restaurant", 0};
    Turn opener;
    opener.text = "i love chess .";
    auto cfg = config_for(Setting::kInitial);
    OddSnippet s = simulate_odd({opener}, g, *b.user, *b.system, cfg, 1);
    CHECK(s.terminated_by_goal);
    CHECK(s.user_turns() == 3);
    CHECK(s.turns.back().speaker == Speaker::kUser);
    CHECK(mentions(s.turns.back().text, "cheap"));
    for (std::size_t i = 0; i + 1 < s.turns.size(); ++i)
      if (s.turns[i].speaker == Speaker::kUser) CHECK_FALSE(mentions(s.turns[i].text, "cheap"));

    auto never = dftest::sim_backends(100);
    cfg.max_odd_turns = 4;
    OddSnippet capped = simulate_odd({opener}, g, *never.user, *never.system, cfg, 1);
    CHECK_FALSE(capped.terminated_by_goal);
    CHECK(capped.user_turns() == 4);
  }

  TEST_CASE("rejected openers skip the dialog") {
    auto b = dftest::sim_backends();
    b.chat = std::make_shared<FunctionBackend>(
        [](const GenRequest&) { return std::string("i need a cheap restaurant in the north ."); });
    Dialog two = dftest::make_tod_dialog("two", 2, 8);
    auto r = enrich(two, config_for(Setting::kTransition), b.view(), &dftest::fixture_detector(),
                    dftest::fixture_ontology());
    CHECK_FALSE(r.dialog);
    REQUIRE(r.trace.skipped);
    CHECK(r.trace.skipped->rfind("init_rejected", 0) == 0);
    REQUIRE(r.trace.attempts.size() == 1);
    CHECK(r.trace.attempts[0].outcome == "init_rejected");
  }

  TEST_CASE("transition turns see exactly the two bridging utterances") {
    auto stub = std::make_shared<ScriptedStub>(std::vector<std::string>{"speaking of which , let me check ."});
    Turn a, c;
    a.text = "i love chess .";
    c.text = "i need a train to ely .";
    Turn t = generate_transition(a, c, *stub, 9);
    CHECK(t.is_transition);
    CHECK(t.mode == Mode::kOdd);
    auto req = stub->captured().at(0);
    REQUIRE(req.condition.size() == 2);
    CHECK(req.condition[0].text == a.text);
    CHECK(req.condition[1].text == c.text);
    Turn sys;
    sys.speaker = Speaker::kSystem;
    sys.text = "ok";
    CHECK_THROWS_AS(generate_transition(sys, c, *stub, 9), ValidationError);
  }

  TEST_CASE("same seed gives identical output, worker count does not matter") {
    auto b = dftest::sim_backends();
    DialogSet tod = dftest::tod_fixture(15, 33);
    for (Setting s : {Setting::kInitial, Setting::kTransition, Setting::kMultiple}) {
      auto cfg = config_for(s, 77);
      auto one = synthesize_corpus(tod, cfg, b.view(), &dftest::fixture_detector(), dftest::fixture_ontology());
      auto again = synthesize_corpus(tod, cfg, b.view(), &dftest::fixture_detector(), dftest::fixture_ontology());
      auto pooled = synthesize_corpus(tod, cfg, b.view(), &dftest::fixture_detector(), dftest::fixture_ontology(), 4);
      CHECK(dump(one.dialogs) == dump(again.dialogs));
      CHECK(dump(one.dialogs) == dump(pooled.dialogs));
      CHECK(one.skipped.size() == pooled.skipped.size());
    }
  }

  TEST_CASE("backend failures propagate") {
    auto b = dftest::sim_backends();
    b.system = std::make_shared<FunctionBackend>([](const GenRequest&) -> std::string {
      throw TransportError("connection refused");
    });
    DialogSet tod = dftest::tod_fixture(3, 1);
    CHECK_THROWS_AS(synthesize_corpus(tod, config_for(Setting::kInitial), b.view(), nullptr, dftest::fixture_ontology(), 2),
                    TransportError);
  }

  TEST_CASE("multiple interludes can close without a transition turn") {
    auto b = dftest::sim_backends();
    auto cfg = config_for(Setting::kMultiple);
    cfg.transition_after_multiple = false;
    Dialog d = dftest::make_tod_dialog("m", 2, 3);
    auto r = enrich(d, cfg, b.view(), &dftest::fixture_detector(), dftest::fixture_ontology());
    REQUIRE(r.dialog);
    CHECK(r.trace.accepted() > 0);
    for (const auto& t : r.dialog->turns) CHECK_FALSE(t.is_transition);
    CHECK(count_mode_switches(*r.dialog) == 2 * r.trace.accepted());
  }
}
