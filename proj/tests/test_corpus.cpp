#include <sstream>

#include "doctest.h"
#include "dialfuse/corpus.hpp"
#include "dialfuse/error.hpp"
#include "fixtures.hpp"

using namespace dialfuse;

namespace {

Turn turn(Speaker s, Mode m, std::string text) {
  Turn t;
  t.speaker = s;
  t.mode = m;
  t.text = std::move(text);
  return t;
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("belief merge lets newer values win per slot") {
    BeliefState a, b;
    a.set("Hotel", "Area", "north");
    a.set("hotel", "stars", "4");
    b.set("hotel", "area", "east");
    b.set("train", "day", "monday");
    a.merge(b);
    CHECK(a.get("hotel", "area") == std::optional<std::string>("east"));
    CHECK(a.get("hotel", "stars") == std::optional<std::string>("4"));
    CHECK(a.domains() == std::vector<std::string>{"hotel", "train"});
    CHECK(a.constraint_count() == 3);
    CHECK(a.only("train").constraint_count() == 1);
  }

  TEST_CASE("mode switches count adjacent utterances whose modes differ") {
    Dialog d;
    d.id = "x";
    d.turns = {turn(Speaker::kUser, Mode::kOdd, "a"), turn(Speaker::kSystem, Mode::kOdd, "b"),
               turn(Speaker::kUser, Mode::kTod, "c"), turn(Speaker::kSystem, Mode::kTod, "d"),
               turn(Speaker::kUser, Mode::kOdd, "e"), turn(Speaker::kSystem, Mode::kOdd, "f")};
    CHECK(count_mode_switches(d) == 2);
  }

  TEST_CASE("validate_dialog rejects broken alternation and user transitions") {
    Dialog d;
    d.id = "x";
    CHECK_THROWS_AS(validate_dialog(d), ValidationError);
    d.turns = {turn(Speaker::kSystem, Mode::kTod, "hi")};
    CHECK_THROWS_AS(validate_dialog(d), ValidationError);
    d.turns = {turn(Speaker::kUser, Mode::kTod, "a"), turn(Speaker::kUser, Mode::kTod, "b")};
    CHECK_THROWS_AS(validate_dialog(d), ValidationError);
    d.turns = {turn(Speaker::kUser, Mode::kTod, "a")};
    d.turns[0].is_transition = true;
    CHECK_THROWS_AS(validate_dialog(d), ValidationError);
  }

  TEST_CASE("slot names normalize") {
    CHECK(normalize_slot("leaveAt") == "leaveat");
    CHECK(normalize_slot("price range") == "pricerange");
    CHECK(normalize_slot("trainID") == "trainid");
  }

  TEST_CASE("delexicalize replaces entity values and is idempotent") {
    DBRecord r{"restaurant", {{"name", "golden curry"}, {"area", "centre"}, {"phone", "01223329432"}}};
    std::string once = delexicalize("Golden Curry is in the centre, call 01223329432.", r);
    CHECK(once == "[restaurant_name] is in the [value_area], call [restaurant_phone].");
    CHECK(delexicalize(once, r) == once);
  }

  TEST_CASE("placeholder table follows the usual conventions") {
    const auto& t = PlaceholderTable::standard();
    CHECK(t.placeholder("train", "trainid") == std::optional<std::string>("[train_id]"));
    CHECK(t.placeholder("train", "leaveat") == std::optional<std::string>("[value_time]"));
    CHECK(t.placeholder("hotel", "name") == std::optional<std::string>("[hotel_name]"));
    CHECK(t.placeholder("attraction", "entrancefee") == std::optional<std::string>("[value_price]"));
    CHECK(t.placeholder("taxi", "type") == std::optional<std::string>("[taxi_type]"));
  }

  TEST_CASE("JSONL round trip preserves every field") {
    auto corpus = dftest::fused_fixture(Setting::kMultiple, 6, 3);
    REQUIRE(!corpus.empty());
    std::stringstream ss;
    write_jsonl(ss, corpus);
    CHECK(read_jsonl(ss) == corpus);
  }

  TEST_CASE("turns without a mode tag are rejected at load time") {
    std::stringstream ss(R"({"id":"d1","turns":[{"speaker":"user","text":"hi"}]})");
    CHECK_THROWS_AS(read_jsonl(ss), ValidationError);
  }

  TEST_CASE("MultiWOZ reader builds beliefs and domains") {
    auto j = nlohmann::json::parse(R"({
      "SNG01.json": {
        "goal": {"restaurant": {"info": {"area": "centre"}, "reqt": ["phone"]}, "hotel": {}, "topic": {"x": 1}},
        "log": [
          {"text": "I want food in the centre.", "metadata": {}},
          {"text": "Golden Curry is nice.", "metadata": {"restaurant": {"semi": {"area": "centre", "food": "not mentioned"},
                                                                         "book": {"booked": [], "people": ""}}}},
          {"text": "thanks", "metadata": {}},
          {"text": "bye", "metadata": {"restaurant": {"semi": {"area": "centre"}, "book": {"booked": []}}}}
        ]}})");
    DialogSet ds = tod_corpus_from_json(j, dftest::fixture_ontology());
    REQUIRE(ds.size() == 1);
    const Dialog& d = ds[0];
    CHECK(d.id == "SNG01");
    REQUIRE(d.turns.size() == 4);
    CHECK(d.turns[1].belief->get("restaurant", "area") == std::optional<std::string>("centre"));
    CHECK_FALSE(d.turns[1].belief->get("restaurant", "food"));
    CHECK(d.turns[0].domain == std::optional<std::string>("restaurant"));
    CHECK(d.turns[2].domain == std::optional<std::string>("restaurant"));
    REQUIRE(d.goal_card);
    CHECK(d.goal_card->domains.size() == 1);
    for (const auto& t : d.turns) CHECK(t.mode == Mode::kTod);
  }

  TEST_CASE("ontology loads both layouts") {
    auto flat = ontology_from_json(nlohmann::json::parse(R"({"train-semi-day": ["monday"], "hotel-book stay": ["2"]})"));
    CHECK(flat.has_slot("train", "day"));
    CHECK(flat.has_slot("hotel", "stay"));
    auto nested = ontology_from_json(nlohmann::json::parse(R"({"train": {"day": ["monday"], "leaveat": []}})"));
    CHECK(nested.has_slot("train", "leaveat"));
  }

  TEST_CASE("stats count user turns as exchanges") {
    Dialog d;
    d.id = "x";
    d.turns = {turn(Speaker::kUser, Mode::kOdd, "one two three"), turn(Speaker::kSystem, Mode::kOdd, "four"),
               turn(Speaker::kUser, Mode::kTod, "a b"), turn(Speaker::kSystem, Mode::kTod, "c d e f")};
    CorpusStats s = compute_stats({d});
    CHECK(s.total_odd_turns == 1);
    CHECK(s.total_tod_turns == 1);
    CHECK(s.avg_mode_switch == 1.0);
    CHECK(s.avg_odd_utterance_length_tokens == doctest::Approx(2.0));
    CHECK(s.avg_tod_utterance_length_tokens == doctest::Approx(3.0));
  }
}
