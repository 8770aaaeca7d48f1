#include <algorithm>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dialfuse/error.hpp"
#include "dialfuse/intent.hpp"
#include "fixtures.hpp"

using namespace dialfuse;

TEST_SUITE("intent") {
  TEST_CASE("balanced mix down-samples the majority class") {
    std::vector<IntentExample> tod, odd;
    for (int i = 0; i < 30; ++i) tod.push_back({"book a table " + std::to_string(i), Mode::kTod, "a"});
    for (int i = 0; i < 12; ++i) odd.push_back({"i love chess " + std::to_string(i), Mode::kOdd, "b"});
    auto mix = build_balanced_mix({tod, odd}, 4);
    CHECK(std::count_if(mix.begin(), mix.end(), [](auto& e) { return e.label == Mode::kTod; }) == 12);
    CHECK(std::count_if(mix.begin(), mix.end(), [](auto& e) { return e.label == Mode::kOdd; }) == 12);
    CHECK(build_balanced_mix({tod, odd}, 4).size() == mix.size());
    for (std::size_t i = 0; i < mix.size(); ++i) CHECK(build_balanced_mix({tod, odd}, 4)[i].utterance == mix[i].utterance);
    CHECK_THROWS_AS(build_balanced_mix({tod}, 4), ValidationError);
  }

  TEST_CASE("detector separates task and chit-chat utterances") {
    const IntentDetector& d = dftest::fixture_detector();
    CHECK(d.heldout_size > 0);
    CHECK(d.heldout_accuracy >= 0.95);
    CHECK(d.final_loss < d.initial_loss);
    CHECK(detect(d, "i need a cheap restaurant in the north").label == Mode::kTod);
    CHECK(detect(d, "have you ever tried gardening ? it is so fun").label == Mode::kOdd);
    CHECK_THROWS_AS(detect(d, "   "), ValidationError);
  }

  TEST_CASE("detector threshold is inclusive") {
    IntentDetector d;
    d.bias = 0.0;  // p = 0.5 for every utterance
    CHECK(detect(d, "anything").label == Mode::kOdd);
    CHECK(detect(d, "anything").probability == doctest::Approx(0.5));
  }

  TEST_CASE("too few examples per class is rejected") {
    auto ex = dftest::intent_examples(9, 1);
    CHECK_THROWS_AS(train_detector(ex, DetectorConfig{}, 1), ValidationError);
  }

  TEST_CASE("training is reproducible and persists") {
    auto ex = dftest::intent_examples(40, 2);
    IntentDetector a = train_detector(ex, DetectorConfig{}, 5);
    IntentDetector b = train_detector(ex, DetectorConfig{}, 5);
    CHECK(a.weights == b.weights);
    CHECK(a.bias == b.bias);
    auto path = std::filesystem::temp_directory_path() / "dialfuse_test_detector.json";
    save_detector(a, path);
    IntentDetector c = load_detector(path);
    CHECK(c.weights == a.weights);
    CHECK(c.probability("chess is fun") == doctest::Approx(a.probability("chess is fun")).epsilon(1e-12));
  }

  TEST_CASE("tab-separated example files") {
    auto path = std::filesystem::temp_directory_path() / "dialfuse_test_intent.tsv";
    std::ofstream(path) << "tod\tbook me a taxi\nodd\ti like jazz\n\n";
    auto ex = load_intent_examples(path);
    REQUIRE(ex.size() == 2);
    CHECK(ex[0].label == Mode::kTod);
    CHECK(ex[1].utterance == "i like jazz");
    std::ofstream(path) << "maybe\tnope\n";
    CHECK_THROWS_AS(load_intent_examples(path), ParseError);
  }
}
