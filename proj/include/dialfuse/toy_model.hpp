#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dialfuse/backends.hpp"

namespace dialfuse {

// Closed token inventory. Ids 0..2 are <pad>, <bos>, <eos>; segment markers
// and speaker markers follow. Lookup is on the lowercased token.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  Vocabulary();

  // Adds every token not yet present. Throws VocabularyError naming the
  // first token that would push the size past max_size.
  void extend(const std::vector<std::string>& tokens, std::size_t max_size);

  int size() const { return static_cast<int>(tokens_.size()); }
  bool contains(std::string_view token) const;
  // Throws VocabularyError naming the token when it is unknown.
  int id(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  // Unknown and <pad> tokens are dropped.
  std::vector<int> encode_lenient(const std::vector<std::string>& tokens) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int, std::less<>> ids_;
};

struct ToyConfig {
  int embed_dim = 32;
  int hidden_dim = 64;
  std::size_t max_vocab = 8192;
  // Scale of the random output projection. 0 gives an exactly uniform
  // next-token distribution at initialization.
  double output_init_scale = 0.0;
};

struct SeqPair {
  std::vector<int> condition;
  std::vector<int> target;  // without <eos>; the model appends it
};

// Mean-pooled condition embedding feeding an Elman RNN decoder:
//   c   = mean_i E[cond_i]                       (0 when cond is empty)
//   h_t = tanh(Wx E[y_{t-1}] + Wh h_{t-1} + Wc c + b),  h_0 = 0, y_0 = <bos>
//   p_t = softmax(Wo h_t + bo)
// All parameters live in one flat vector so optimizers and gradient checks
// can treat the model as a point in R^n.
class ToyModel {
 public:
  ToyModel(Vocabulary vocab, ToyConfig config, std::uint64_t seed);

  const Vocabulary& vocab() const { return vocab_; }
  const ToyConfig& config() const { return config_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  // Mean NLL per target token, <eos> included.
  double nll(const SeqPair& pair) const;
  // Same value; adds d(nll)/d(params) * scale into grad (size parameter_count()).
  double nll_and_grad(const SeqPair& pair, std::vector<double>& grad, double scale = 1.0) const;

  // Next-token distribution after `prefix` (without <bos>).
  std::vector<double> next_distribution(const std::vector<int>& condition, const std::vector<int>& prefix) const;

  // Greedy when temperature <= 0, otherwise seeded sampling. Stops at <eos>.
  std::vector<int> generate(const std::vector<int>& condition, int max_tokens, double temperature = 0.0,
                            std::uint64_t seed = 0) const;

  nlohmann::json to_json() const;
  static ToyModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static ToyModel load(const std::filesystem::path& path);

 private:
  struct Layout {
    std::size_t E, Wx, Wh, Wc, b, Wo, bo, total;
  };
  Layout layout() const;
  std::vector<double> pool(const std::vector<int>& condition) const;
  void step(const std::vector<double>& c, int prev, const std::vector<double>& h_prev, std::vector<double>& h,
            std::vector<double>& probs) const;

  Vocabulary vocab_;
  ToyConfig config_;
  std::vector<double> params_;
};

// Text-level objective: condition tokens come from condition_tokens(), the
// target from tokenize(). Empty condition is the unconditional case. Throws
// VocabularyError on an unknown token and ValidationError on an empty target.
double conditional_nll(const ToyModel& model, const std::vector<Segment>& condition, const std::string& target);
SeqPair encode_pair(const Vocabulary& vocab, const std::vector<Segment>& condition, const std::string& target);

struct FitOptions {
  int epochs = 10;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  int batch_size = 8;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainReport {
  // epoch_loss[0] is the loss before training; epoch_loss[e] after epoch e.
  std::vector<double> epoch_loss;

  double initial_loss() const { return epoch_loss.front(); }
  double final_loss() const { return epoch_loss.back(); }
};

nlohmann::ordered_json report_to_json(const TrainReport& r);

// A training item's loss is the sum of its parts' losses; the reported
// epoch loss is the mean item loss over the set. AdamW with decoupled
// weight decay, mini-batches drawn from a seeded shuffle. A non-finite loss
// raises TrainingError carrying the epoch.
TrainReport fit_items(ToyModel& model, const std::vector<std::vector<SeqPair>>& items, const FitOptions& options);
TrainReport fit(ToyModel& model, const std::vector<SeqPair>& examples, const FitOptions& options);

double mean_item_loss(const ToyModel& model, const std::vector<std::vector<SeqPair>>& items);

// Vocabulary covering every condition and target token of the examples.
Vocabulary build_vocabulary(const std::vector<std::pair<std::vector<Segment>, std::string>>& examples,
                            std::size_t max_size = 8192);

// LOCAL_TOY backend. Unknown condition tokens are dropped at inference.
class ToyBackend : public Backend {
 public:
  explicit ToyBackend(ToyModel model, double temperature = 0.0)
      : model_(std::move(model)), temperature_(temperature) {}

  BackendKind kind() const override { return BackendKind::kLocalToy; }
  std::string generate(const GenRequest& request) override;
  const ToyModel& model() const { return model_; }

 private:
  ToyModel model_;
  double temperature_;
};

}  // namespace dialfuse
