#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dialfuse/corpus.hpp"

namespace dialfuse {

struct IntentExample {
  std::string utterance;
  Mode label = Mode::kTod;
  std::string source_corpus;

  friend bool operator==(const IntentExample&, const IntentExample&) = default;
};

// Pools every source and down-samples the majority class to the minority
// count. Kept items stay in pooled order. Throws ValidationError when a
// class is absent or an utterance is empty.
std::vector<IntentExample> build_balanced_mix(const std::vector<std::vector<IntentExample>>& sources,
                                              std::uint64_t seed);

// User utterances of a corpus labeled with their turn mode.
std::vector<IntentExample> intent_examples_from_corpus(const DialogSet& dialogs, const std::string& source_name);

// One utterance per line, "tod<TAB>text" or "odd<TAB>text".
std::vector<IntentExample> load_intent_examples(const std::filesystem::path& path);

struct DetectorConfig {
  int epochs = 300;
  double learning_rate = 2.0;
  double l2 = 1e-4;
  double holdout_fraction = 0.2;
  double threshold = 0.5;
};

// Logistic regression over term-frequency features: p(ODD | u) =
// sigmoid(w . tf(u) + b), tf counting lowercased tokens over the token total.
struct IntentDetector {
  std::map<std::string, double> weights;
  double bias = 0.0;
  double threshold = 0.5;

  double heldout_accuracy = 0.0;
  std::size_t heldout_size = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;

  double probability(const std::string& utterance) const;
};

struct Detection {
  Mode label = Mode::kTod;
  double probability = 0.0;  // p(ODD)
};

// label = ODD iff p(ODD) >= threshold. Empty utterance -> ValidationError.
Detection detect(const IntentDetector& detector, const std::string& utterance);

// Mean binary cross-entropy of the detector on examples (ODD = positive).
double detector_loss(const IntentDetector& detector, const std::vector<IntentExample>& examples);

// Full-batch gradient descent on mean BCE + l2/2 |w|^2, after a seeded
// stratified hold-out split. Fewer than 10 examples of either class ->
// ValidationError.
IntentDetector train_detector(const std::vector<IntentExample>& examples, const DetectorConfig& config,
                              std::uint64_t seed);

nlohmann::ordered_json detector_to_json(const IntentDetector& d);
IntentDetector detector_from_json(const nlohmann::json& j);
void save_detector(const IntentDetector& d, const std::filesystem::path& path);
IntentDetector load_detector(const std::filesystem::path& path);

}  // namespace dialfuse
