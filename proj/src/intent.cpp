#include "dialfuse/intent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dialfuse/error.hpp"
#include "dialfuse/text.hpp"

namespace dialfuse {

namespace {

using Features = std::vector<std::pair<std::string, double>>;

Features term_frequencies(const std::string& utterance) {
  auto tokens = tokenize(to_lower(utterance));
  std::map<std::string, double> counts;
  for (const auto& t : tokens) counts[t] += 1.0;
  Features out(counts.begin(), counts.end());
  for (auto& [_, v] : out) v /= static_cast<double>(tokens.size());
  return out;
}

double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

double score(const IntentDetector& d, const Features& f) {
  double z = d.bias;
  for (const auto& [t, v] : f)
    if (auto it = d.weights.find(t); it != d.weights.end()) z += it->second * v;
  return sigmoid(z);
}

double bce(double p, Mode label) {
  constexpr double kEps = 1e-15;
  p = std::clamp(p, kEps, 1.0 - kEps);
  return label == Mode::kOdd ? -std::log(p) : -std::log(1.0 - p);
}

void shuffle(std::vector<std::size_t>& v, SplitMix64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

std::vector<IntentExample> build_balanced_mix(const std::vector<std::vector<IntentExample>>& sources,
                                              std::uint64_t seed) {
  std::vector<IntentExample> pooled;
  for (const auto& s : sources)
    for (const auto& e : s) {
      if (trim(e.utterance).empty()) throw ValidationError("intent example with empty utterance");
      pooled.push_back(e);
    }
  std::vector<std::size_t> tod, odd;
  for (std::size_t i = 0; i < pooled.size(); ++i) (pooled[i].label == Mode::kOdd ? odd : tod).push_back(i);
  if (tod.empty() || odd.empty())
    throw ValidationError(std::string("intent mix has no ") + (tod.empty() ? "TOD" : "ODD") + " examples");
  auto& major = tod.size() > odd.size() ? tod : odd;
  std::size_t keep = std::min(tod.size(), odd.size());
  SplitMix64 rng(seed);
  shuffle(major, rng);
  major.resize(keep);
  std::vector<std::size_t> chosen(tod);
  chosen.insert(chosen.end(), odd.begin(), odd.end());
  std::sort(chosen.begin(), chosen.end());
  std::vector<IntentExample> out;
  out.reserve(chosen.size());
  for (auto i : chosen) out.push_back(pooled[i]);
  return out;
}

std::vector<IntentExample> intent_examples_from_corpus(const DialogSet& dialogs, const std::string& source_name) {
  std::vector<IntentExample> out;
  for (const auto& d : dialogs)
    for (const auto& t : d.turns)
      if (t.speaker == Speaker::kUser && !trim(t.text).empty()) out.push_back({t.text, t.mode, source_name});
  return out;
}

std::vector<IntentExample> load_intent_examples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open intent examples '" + path.string() + "'");
  std::vector<IntentExample> out;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (trim(line).empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected '<mode>\\t<utterance>'");
    out.push_back({trim(line.substr(tab + 1)), parse_mode(trim(line.substr(0, tab))), path.stem().string()});
  }
  return out;
}

double IntentDetector::probability(const std::string& utterance) const {
  return score(*this, term_frequencies(utterance));
}

Detection detect(const IntentDetector& detector, const std::string& utterance) {
  if (trim(utterance).empty()) throw ValidationError("cannot classify an empty utterance");
  double p = detector.probability(utterance);
  return {p >= detector.threshold ? Mode::kOdd : Mode::kTod, p};
}

double detector_loss(const IntentDetector& detector, const std::vector<IntentExample>& examples) {
  if (examples.empty()) throw ValidationError("detector_loss needs at least one example");
  double total = 0;
  for (const auto& e : examples) total += bce(detector.probability(e.utterance), e.label);
  return total / static_cast<double>(examples.size());
}

IntentDetector train_detector(const std::vector<IntentExample>& examples, const DetectorConfig& config,
                              std::uint64_t seed) {
  if (config.threshold < 0.0 || config.threshold > 1.0) throw ValidationError("threshold must lie in [0, 1]");
  std::vector<std::size_t> tod, odd;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (trim(examples[i].utterance).empty()) throw ValidationError("intent example with empty utterance");
    (examples[i].label == Mode::kOdd ? odd : tod).push_back(i);
  }
  if (tod.size() < 10 || odd.size() < 10)
    throw ValidationError("detector training needs >= 10 examples per class (got " + std::to_string(tod.size()) +
                          " TOD, " + std::to_string(odd.size()) + " ODD)");

  SplitMix64 rng(seed);
  std::vector<std::size_t> train_idx, held_idx;
  for (auto* cls : {&tod, &odd}) {
    shuffle(*cls, rng);
    auto n_held = static_cast<std::size_t>(std::floor(config.holdout_fraction * static_cast<double>(cls->size())));
    held_idx.insert(held_idx.end(), cls->begin(), cls->begin() + static_cast<std::ptrdiff_t>(n_held));
    train_idx.insert(train_idx.end(), cls->begin() + static_cast<std::ptrdiff_t>(n_held), cls->end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(held_idx.begin(), held_idx.end());

  std::vector<Features> feats;
  std::vector<IntentExample> train;
  for (auto i : train_idx) {
    feats.push_back(term_frequencies(examples[i].utterance));
    train.push_back(examples[i]);
  }

  IntentDetector d;
  d.threshold = config.threshold;
  for (const auto& f : feats)
    for (const auto& [t, _] : f) d.weights.emplace(t, 0.0);
  d.initial_loss = detector_loss(d, train);

  const double n = static_cast<double>(train.size());
  std::map<std::string, double> grad;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (auto& [t, w] : d.weights) grad[t] = config.l2 * w;
    double gb = 0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      double err = (score(d, feats[i]) - (train[i].label == Mode::kOdd ? 1.0 : 0.0)) / n;
      gb += err;
      for (const auto& [t, v] : feats[i]) grad[t] += err * v;
    }
    d.bias -= config.learning_rate * gb;
    for (auto& [t, w] : d.weights) w -= config.learning_rate * grad[t];
  }
  d.final_loss = detector_loss(d, train);
  if (!std::isfinite(d.final_loss)) throw TrainingError("detector loss diverged", config.epochs);

  std::size_t correct = 0;
  for (auto i : held_idx)
    if (detect(d, examples[i].utterance).label == examples[i].label) ++correct;
  d.heldout_size = held_idx.size();
  d.heldout_accuracy = held_idx.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(held_idx.size());
  return d;
}

nlohmann::ordered_json detector_to_json(const IntentDetector& d) {
  nlohmann::ordered_json j;
  j["format"] = "dialfuse-intent-detector";
  j["version"] = 1;
  j["threshold"] = d.threshold;
  j["bias"] = d.bias;
  j["heldout_accuracy"] = d.heldout_accuracy;
  j["heldout_size"] = d.heldout_size;
  j["initial_loss"] = d.initial_loss;
  j["final_loss"] = d.final_loss;
  j["weights"] = d.weights;
  return j;
}

IntentDetector detector_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "dialfuse-intent-detector" || j.at("version") != 1)
      throw ParseError("not a version-1 intent detector");
    IntentDetector d;
    d.threshold = j.at("threshold").get<double>();
    d.bias = j.at("bias").get<double>();
    d.heldout_accuracy = j.value("heldout_accuracy", 0.0);
    d.heldout_size = j.value("heldout_size", std::size_t{0});
    d.initial_loss = j.value("initial_loss", 0.0);
    d.final_loss = j.value("final_loss", 0.0);
    d.weights = j.at("weights").get<std::map<std::string, double>>();
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("intent detector: ") + e.what());
  }
}

void save_detector(const IntentDetector& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write detector '" + path.string() + "'");
  out << detector_to_json(d).dump(2) << '\n';
}

IntentDetector load_detector(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open detector '" + path.string() + "'");
  try {
    return detector_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("detector '" + path.string() + "': " + e.what());
  }
}

}  // namespace dialfuse
