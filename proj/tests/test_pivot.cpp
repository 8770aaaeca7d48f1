#include <algorithm>

#include "doctest.h"
#include "dialfuse/error.hpp"
#include "dialfuse/pivot.hpp"
#include "dialfuse/text.hpp"
#include "fixtures.hpp"

using namespace dialfuse;

namespace {

std::string random_word(SplitMix64& rng, std::size_t max_len) {
  static const std::string letters = "abcdefghijklmnopqrstuvwxyz0123456789";
  std::string w;
  std::size_t n = 1 + rng.below(max_len);
  for (std::size_t i = 0; i < n; ++i) w += letters[rng.below(letters.size())];
  return w;
}

// Records which routing branch ran.
class SpyRouter : public KnowledgeRouter {
 public:
  using KnowledgeRouter::KnowledgeRouter;
  KnowledgeResult lookup_db(const BeliefState& b, const std::string& domain) override {
    db_calls.push_back(domain);
    return KnowledgeRouter::lookup_db(b, domain);
  }
  KnowledgeResult search(const std::string& q) override {
    searches.push_back(q);
    return KnowledgeRouter::search(q);
  }
  std::vector<std::string> db_calls, searches;
};

std::size_t count(const std::vector<std::string>& v, const std::string& x) {
  return static_cast<std::size_t>(std::count(v.begin(), v.end(), x));
}

}  // namespace

TEST_SUITE("pivot") {
  TEST_CASE("belief serialization") {
    BeliefState b;
    b.set("train", "destination", "ely");
    b.set("restaurant", "food", "asian oriental");
    b.set("restaurant", "area", "north");
    std::string s = serialize_belief(b);
    CHECK(s.find(" ; ") != std::string::npos);
    CHECK(parse_belief(s) == b);
    CHECK(parse_belief("") == BeliefState());
    CHECK_THROWS_AS(parse_belief("restaurant"), StateParseError);
    CHECK_THROWS_AS(parse_belief("restaurant area=north ; restaurant food=thai"), StateParseError);
    CHECK_THROWS_AS(parse_belief("restaurant area="), StateParseError);
    BeliefState bad;
    bad.set("hotel", "name", "a=b");
    CHECK_THROWS_AS(serialize_belief(bad), ValidationError);
  }

  TEST_CASE("state codec round trips random states") {
    SplitMix64 rng(17);
    for (int i = 0; i < 2000; ++i) {
      State s;
      if (rng.below(2) == 0) {
        s.mode = Mode::kOdd;
        std::vector<std::string> words;
        for (std::size_t w = rng.below(5); w > 0; --w) words.push_back(random_word(rng, 6));
        s.query = join(words, " ");
      } else {
        BeliefState b;
        for (std::size_t d = rng.below(3); d > 0; --d) {
          std::string domain = "d" + random_word(rng, 4);
          for (std::size_t k = 1 + rng.below(3); k > 0; --k)
            b.set(domain, "s" + random_word(rng, 4), random_word(rng, 5) + (rng.below(3) == 0 ? " " + random_word(rng, 4) : ""));
        }
        s = tod_state(b);
      }
      auto back = try_parse_state(encode_state(s));
      REQUIRE(back.state);
      CHECK(*back.state == s);
    }
  }

  TEST_CASE("state parsing is total") {
    SplitMix64 rng(5);
    const std::string alphabet = "todd: =;abc xyz\t\n<>";
    for (int i = 0; i < 3000; ++i) {
      std::string junk;
      for (std::size_t n = rng.below(30); n > 0; --n) junk += alphabet[rng.below(alphabet.size())];
      StateParse p;
      CHECK_NOTHROW(p = try_parse_state(junk));
      CHECK(p.state.has_value() != !p.error.empty());
    }
    CHECK_THROWS_AS(parse_state("chat: hello"), StateParseError);
    CHECK(parse_state("ODD: Jazz").mode == Mode::kOdd);
    CHECK(parse_state("tod:").query.empty());
  }

  TEST_CASE("history window") {
    Dialog d = dftest::make_tod_dialog("h", 3, 2);
    auto h = build_history(d, 6, 2);
    REQUIRE(h.utterances.size() == 5);
    CHECK(h.utterances.front().second == d.turns[2].text);
    CHECK(h.utterances.back().second == d.turns[6].text);
    CHECK(build_history(d, 2, 2).utterances.size() == 3);
    CHECK(build_history(d, 6, 0).utterances.size() == 1);
    CHECK_THROWS_AS(build_history(d, 1, 2), ValidationError);
    CHECK_THROWS_AS(build_history(d, 6, -1), ValidationError);
  }

  TEST_CASE("training examples carry cumulative beliefs and annotations") {
    DialogSet fused = dftest::fused_fixture(Setting::kMultiple, 6, 9);
    auto search = dftest::fixture_search(fused);
    for (const auto& d : fused) {
      auto ex = make_training_examples(d, dftest::fixture_db(), &search);
      REQUIRE(ex.size() == d.turns.size() / 2);
      BeliefState cumulative;
      for (const auto& e : ex) {
        const Turn& t = d.turns[e.turn_index];
        CHECK(e.state.mode == t.mode);
        if (t.mode == Mode::kTod) {
          cumulative.merge(*t.belief);
          CHECK(e.state.query == serialize_belief(cumulative));
          CHECK(e.knowledge.kind == KnowledgeResult::Kind::kDbState);
          CHECK(e.response == *t.delex_text);
        } else {
          CHECK(e.state.query == t.search_query.value_or(""));
          CHECK(e.response == t.text);
          if (t.search_query) {
            CHECK(e.knowledge.kind == KnowledgeResult::Kind::kSearch);
          } else {
            CHECK(e.knowledge.kind == KnowledgeResult::Kind::kEmpty);
          }
        }
        auto back = example_from_json(nlohmann::json::parse(example_to_json(e).dump()));
        CHECK(back.state == e.state);
        CHECK(back.history == e.history);
        CHECK(back.knowledge == e.knowledge);
      }
    }
    Dialog broken = dftest::make_tod_dialog("b", 1, 1);
    broken.turns[1].belief.reset();
    CHECK_THROWS_AS(make_training_examples(broken, dftest::fixture_db(), nullptr), ValidationError);
  }

  TEST_CASE("serialization enforces the token budget") {
    TrainingExample e;
    e.dialog_id = "x";
    for (int i = 0; i < 5; ++i) {
      std::string text;
      for (int w = 0; w < 100; ++w) text += "w" + std::to_string(i * 100 + w) + " ";
      e.history.utterances.emplace_back(i % 2 ? Speaker::kSystem : Speaker::kUser, text);
    }
    e.state = {Mode::kOdd, "chess openings"};
    e.knowledge.kind = KnowledgeResult::Kind::kSearch;
    std::vector<std::string> snippets;
    for (int i = 0; i < 40; ++i) snippets.push_back("snippet number " + std::to_string(i) + " about chess openings and more");
    e.knowledge.snippets = snippets;
    e.response = "i like the sicilian defence .";

    auto st = serialize(e, TaskTag::kState);
    CHECK(st.input_tokens.size() == 512);
    CHECK(st.history_tokens <= 256);
    CHECK(st.history_truncated);
    CHECK(std::find(st.input_tokens.begin(), st.input_tokens.end(), tag_marker(SegmentTag::kKnowledge)) ==
          st.input_tokens.end());
    CHECK(std::find(st.input_tokens.begin(), st.input_tokens.end(), tag_marker(SegmentTag::kState)) ==
          st.input_tokens.end());
    // Left truncation keeps the newest tokens.
    CHECK(st.input_tokens[st.content_tokens - 1] == "w499");
    CHECK(st.target_tokens == tokenize("odd: chess openings"));

    auto rs = serialize(e, TaskTag::kResponse);
    CHECK(rs.input_tokens.size() == 512);
    CHECK(rs.content_tokens == 512);
    CHECK(rs.knowledge_truncated);
    CHECK(rs.history_tokens <= 256);
    CHECK(std::find(rs.input_tokens.begin(), rs.input_tokens.end(), tag_marker(SegmentTag::kKnowledge)) !=
          rs.input_tokens.end());

    TrainingExample small = e;
    small.history.utterances.resize(1);
    small.history.utterances[0].second = "hello <knowledge> there";
    auto ss = serialize(small, TaskTag::kState);
    CHECK_FALSE(ss.history_truncated);
    CHECK(ss.content_tokens < 512);
    CHECK(ss.input_tokens.back() == kPadToken);
    CHECK(count(ss.input_tokens, tag_marker(SegmentTag::kKnowledge)) == 0);

    TrainingExample empty = small;
    empty.response = "";
    CHECK_THROWS_AS(serialize(empty, TaskTag::kResponse), ValidationError);
  }

  TEST_CASE("knowledge router follows the active domain") {
    SpyRouter router(&dftest::fixture_db(), nullptr);
    BeliefState b;
    b.set("restaurant", "area", "north");
    auto k = router.route(tod_state(b));
    CHECK(k.kind == KnowledgeResult::Kind::kDbState);
    CHECK(router.db_calls == std::vector<std::string>{"restaurant"});
    b.set("train", "destination", "ely");
    router.route(tod_state(b));
    CHECK(router.db_calls.back() == "train");
    router.route(tod_state(b));  // unchanged: stays on the active domain
    CHECK(router.db_calls.back() == "train");
    CHECK(router.route({Mode::kOdd, "chess"}).kind == KnowledgeResult::Kind::kEmpty);  // no provider
    CHECK(router.searches.empty());
    CHECK(router.route({Mode::kTod, ""}).kind == KnowledgeResult::Kind::kEmpty);

    MockSearchProvider mock;
    mock.add("chess", {"chess is old"});
    SpyRouter web(&dftest::fixture_db(), &mock);
    auto s = web.route({Mode::kOdd, "chess"});
    CHECK(s.kind == KnowledgeResult::Kind::kSearch);
    CHECK(web.searches == std::vector<std::string>{"chess"});
    CHECK(web.route({Mode::kOdd, ""}).kind == KnowledgeResult::Kind::kEmpty);
    CHECK(web.searches.size() == 1);
  }

  TEST_CASE("lexicalization fills placeholders from the record") {
    const DBRecord& r = dftest::fixture_db().records("restaurant")[0];
    std::string out = lexicalize("[restaurant_name] , phone [restaurant_phone] , [restaurant_name]", r);
    CHECK(out == r.attributes.at("name") + " , phone " + r.attributes.at("phone") + " , " + r.attributes.at("name"));
    CHECK(lexicalize("nothing here", r) == "nothing here");
  }

  TEST_CASE("chat turn with a scripted model") {
    auto stub = std::make_shared<ScriptedStub>(std::vector<std::string>{
        "tod: restaurant area=centre pricerange=expensive", "[restaurant_name] is great .", "not a state",
        "sure , whatever you like ."});
    KnowledgeRouter router(&dftest::fixture_db(), nullptr);
    PivotSession session;
    session.seed = 4;
    ChatOutcome a = chat_turn(session, "i want an expensive place in the centre", *stub, router);
    CHECK_FALSE(a.fallback);
    CHECK(a.knowledge.kind == KnowledgeResult::Kind::kDbState);
    REQUIRE(a.knowledge.top_record);
    CHECK(a.response == a.knowledge.top_record->attributes.at("name") + " is great .");
    CHECK(session.history.size() == 2);
    auto reqs = stub->captured();
    CHECK(reqs[0].all(SegmentTag::kState).empty());
    CHECK(reqs[1].first(SegmentTag::kState) == "tod: restaurant area=centre pricerange=expensive");

    ChatOutcome b = chat_turn(session, "have you ever tried chess ? it is so fun", *stub, router,
                              &dftest::fixture_detector());
    CHECK(b.fallback);
    CHECK_FALSE(b.fallback_reason.empty());
    CHECK(b.state.mode == Mode::kOdd);
    CHECK(b.state.query.empty());
    CHECK(b.knowledge.kind == KnowledgeResult::Kind::kEmpty);
    CHECK(session.history.size() == 4);

    CHECK_THROWS_AS(chat_turn(session, "  ", *stub, router), ValidationError);
    CHECK_THROWS_AS(chat_turn(session, "again", *stub, router), ScriptExhausted);
    CHECK(session.history.size() == 4);  // failed turns leave no trace
  }

  TEST_CASE("corpus prediction aligns with the gold system turns") {
    DialogSet gold = dftest::fused_fixture(Setting::kInitial, 4, 2);
    FunctionBackend model([](const GenRequest& r) {
      return r.all(SegmentTag::kState).empty() ? std::string("odd: chess") : std::string("ok .");
    });
    MockSearchProvider search;
    search.add("chess", {"chess is old"});
    auto preds = predict_corpus(gold, model, dftest::fixture_db(), &search, {}, 1);
    REQUIRE(preds.size() == gold.size());
    for (std::size_t i = 0; i < gold.size(); ++i) {
      CHECK(preds[i].dialog_id == gold[i].id);
      REQUIRE(preds[i].turns.size() == gold[i].turns.size() / 2);
      for (std::size_t k = 0; k < preds[i].turns.size(); ++k) CHECK(preds[i].turns[k].turn_index == 2 * k + 1);
      auto back = prediction_from_json(nlohmann::json::parse(prediction_to_json(preds[i]).dump()));
      CHECK(back.turns.size() == preds[i].turns.size());
      CHECK(back.turns[0].state == preds[i].turns[0].state);
    }
    FunctionBackend junk([](const GenRequest&) { return std::string("???"); });
    auto jp = predict_corpus(gold, junk, dftest::fixture_db(), nullptr);
    CHECK(jp[0].turns[0].state == State{Mode::kTod, ""});
  }
}
