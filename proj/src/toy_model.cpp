#include "dialfuse/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dialfuse/error.hpp"
#include "dialfuse/text.hpp"

namespace dialfuse {

// ---- vocabulary ------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (const char* t : {"<pad>", "<bos>", "<eos>", "<context>", "<goal>", "<state>", "<knowledge>", "<persona>",
                        "<user>", "<system>"}) {
    ids_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.emplace_back(t);
  }
}

void Vocabulary::extend(const std::vector<std::string>& tokens, std::size_t max_size) {
  for (const auto& raw : tokens) {
    std::string t = to_lower(raw);
    if (ids_.count(t)) continue;
    if (tokens_.size() >= max_size)
      throw VocabularyError("vocabulary overflow at token '" + t + "' (max " + std::to_string(max_size) + ")");
    ids_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(t));
  }
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(to_lower(token)) > 0; }

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(to_lower(token));
  if (it == ids_.end()) throw VocabularyError("token '" + std::string(token) + "' is not in the vocabulary");
  return it->second;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<int> Vocabulary::encode_lenient(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  for (const auto& t : tokens) {
    auto it = ids_.find(to_lower(t));
    if (it != ids_.end() && it->second != kPad) out.push_back(it->second);
  }
  return out;
}

// ---- model -----------------------------------------------------------------

ToyModel::Layout ToyModel::layout() const {
  std::size_t V = static_cast<std::size_t>(vocab_.size());
  std::size_t d = static_cast<std::size_t>(config_.embed_dim);
  std::size_t H = static_cast<std::size_t>(config_.hidden_dim);
  Layout l{};
  l.E = 0;
  l.Wx = l.E + V * d;
  l.Wh = l.Wx + H * d;
  l.Wc = l.Wh + H * H;
  l.b = l.Wc + H * d;
  l.Wo = l.b + H;
  l.bo = l.Wo + V * H;
  l.total = l.bo + V;
  return l;
}

ToyModel::ToyModel(Vocabulary vocab, ToyConfig config, std::uint64_t seed)
    : vocab_(std::move(vocab)), config_(config) {
  if (config_.embed_dim < 1 || config_.hidden_dim < 1) throw ValidationError("toy model dimensions must be >= 1");
  Layout l = layout();
  params_.assign(l.total, 0.0);
  SplitMix64 rng(seed);
  auto fill = [&](std::size_t from, std::size_t to, double scale) {
    for (std::size_t i = from; i < to; ++i) params_[i] = (2.0 * rng.unit() - 1.0) * scale;
  };
  double d = config_.embed_dim, H = config_.hidden_dim;
  fill(l.E, l.Wx, 0.5);
  fill(l.Wx, l.Wh, 1.0 / std::sqrt(d));
  fill(l.Wh, l.Wc, 1.0 / std::sqrt(H));
  fill(l.Wc, l.b, 1.0 / std::sqrt(d));
  fill(l.Wo, l.bo, config_.output_init_scale / std::sqrt(H));
}

std::vector<double> ToyModel::pool(const std::vector<int>& condition) const {
  std::size_t d = static_cast<std::size_t>(config_.embed_dim);
  std::vector<double> c(d, 0.0);
  std::size_t n = 0;
  for (int id : condition) {
    if (id == Vocabulary::kPad) continue;
    const double* e = &params_[static_cast<std::size_t>(id) * d];
    for (std::size_t k = 0; k < d; ++k) c[k] += e[k];
    ++n;
  }
  if (n > 0)
    for (auto& v : c) v /= static_cast<double>(n);
  return c;
}

void ToyModel::step(const std::vector<double>& c, int prev, const std::vector<double>& h_prev,
                    std::vector<double>& h, std::vector<double>& probs) const {
  const Layout l = layout();
  const std::size_t V = static_cast<std::size_t>(vocab_.size());
  const std::size_t d = static_cast<std::size_t>(config_.embed_dim);
  const std::size_t H = static_cast<std::size_t>(config_.hidden_dim);
  const double* x = &params_[l.E + static_cast<std::size_t>(prev) * d];
  h.assign(H, 0.0);
  for (std::size_t i = 0; i < H; ++i) {
    double a = params_[l.b + i];
    const double* wx = &params_[l.Wx + i * d];
    const double* wc = &params_[l.Wc + i * d];
    for (std::size_t k = 0; k < d; ++k) a += wx[k] * x[k] + wc[k] * c[k];
    const double* wh = &params_[l.Wh + i * H];
    for (std::size_t k = 0; k < H; ++k) a += wh[k] * h_prev[k];
    h[i] = std::tanh(a);
  }
  probs.assign(V, 0.0);
  double mx = -1e300;
  for (std::size_t v = 0; v < V; ++v) {
    double z = params_[l.bo + v];
    const double* wo = &params_[l.Wo + v * H];
    for (std::size_t k = 0; k < H; ++k) z += wo[k] * h[k];
    probs[v] = z;
    mx = std::max(mx, z);
  }
  double sum = 0;
  for (auto& p : probs) sum += (p = std::exp(p - mx));
  for (auto& p : probs) p /= sum;
}

double ToyModel::nll(const SeqPair& pair) const {
  std::vector<double> none;
  return nll_and_grad(pair, none, 0.0);
}

double ToyModel::nll_and_grad(const SeqPair& pair, std::vector<double>& grad, double scale) const {
  const bool want_grad = scale != 0.0;
  if (want_grad && grad.size() != params_.size()) throw ValidationError("gradient buffer has the wrong size");
  const Layout l = layout();
  const std::size_t V = static_cast<std::size_t>(vocab_.size());
  const std::size_t d = static_cast<std::size_t>(config_.embed_dim);
  const std::size_t H = static_cast<std::size_t>(config_.hidden_dim);
  for (int id : pair.condition)
    if (id < 0 || static_cast<std::size_t>(id) >= V) throw VocabularyError("condition token id out of range");
  for (int id : pair.target)
    if (id < 0 || static_cast<std::size_t>(id) >= V) throw VocabularyError("target token id out of range");

  std::vector<int> inputs{Vocabulary::kBos};
  std::vector<int> outputs;
  for (int id : pair.target) {
    outputs.push_back(id);
    inputs.push_back(id);
  }
  outputs.push_back(Vocabulary::kEos);
  const std::size_t T = outputs.size();

  std::vector<double> c = pool(pair.condition);
  std::vector<std::vector<double>> hs(T + 1, std::vector<double>(H, 0.0));
  std::vector<std::vector<double>> ps(T);
  double loss = 0;
  for (std::size_t t = 0; t < T; ++t) {
    step(c, inputs[t], hs[t], hs[t + 1], ps[t]);
    loss -= std::log(std::max(ps[t][static_cast<std::size_t>(outputs[t])], 1e-300));
  }
  loss /= static_cast<double>(T);
  if (!want_grad) return loss;

  const double w = scale / static_cast<double>(T);
  std::vector<double> dh_next(H, 0.0), dc(d, 0.0), da(H), dh(H);
  for (std::size_t t = T; t-- > 0;) {
    const auto& h = hs[t + 1];
    const auto& hp = hs[t];
    std::vector<double>& p = ps[t];
    p[static_cast<std::size_t>(outputs[t])] -= 1.0;
    dh = dh_next;
    for (std::size_t v = 0; v < V; ++v) {
      double dz = p[v] * w;
      grad[l.bo + v] += dz;
      double* gwo = &grad[l.Wo + v * H];
      const double* wo = &params_[l.Wo + v * H];
      for (std::size_t k = 0; k < H; ++k) {
        gwo[k] += dz * h[k];
        dh[k] += wo[k] * dz;
      }
    }
    for (std::size_t i = 0; i < H; ++i) da[i] = dh[i] * (1.0 - h[i] * h[i]);
    const std::size_t xoff = l.E + static_cast<std::size_t>(inputs[t]) * d;
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    for (std::size_t i = 0; i < H; ++i) {
      const double a = da[i];
      grad[l.b + i] += a;
      for (std::size_t k = 0; k < d; ++k) {
        grad[l.Wx + i * d + k] += a * params_[xoff + k];
        grad[l.Wc + i * d + k] += a * c[k];
        dc[k] += a * params_[l.Wc + i * d + k];
      }
      for (std::size_t k = 0; k < d; ++k) grad[xoff + k] += a * params_[l.Wx + i * d + k];
      for (std::size_t k = 0; k < H; ++k) {
        grad[l.Wh + i * H + k] += a * hp[k];
        dh_next[k] += params_[l.Wh + i * H + k] * a;
      }
    }
  }
  std::size_t n = 0;
  for (int id : pair.condition)
    if (id != Vocabulary::kPad) ++n;
  if (n > 0) {
    for (int id : pair.condition) {
      if (id == Vocabulary::kPad) continue;
      double* ge = &grad[l.E + static_cast<std::size_t>(id) * d];
      for (std::size_t k = 0; k < d; ++k) ge[k] += dc[k] / static_cast<double>(n);
    }
  }
  return loss;
}

std::vector<double> ToyModel::next_distribution(const std::vector<int>& condition,
                                                const std::vector<int>& prefix) const {
  std::vector<double> c = pool(condition);
  std::vector<double> h(static_cast<std::size_t>(config_.hidden_dim), 0.0), h2, p;
  int prev = Vocabulary::kBos;
  step(c, prev, h, h2, p);
  for (int id : prefix) {
    h = h2;
    step(c, id, h, h2, p);
  }
  return p;
}

std::vector<int> ToyModel::generate(const std::vector<int>& condition, int max_tokens, double temperature,
                                    std::uint64_t seed) const {
  std::vector<double> c = pool(condition);
  std::vector<double> h(static_cast<std::size_t>(config_.hidden_dim), 0.0), h2, p;
  SplitMix64 rng(seed);
  std::vector<int> out;
  int prev = Vocabulary::kBos;
  for (int t = 0; t < max_tokens; ++t) {
    step(c, prev, h, h2, p);
    h = h2;
    // Never stop before the first token, never emit structural tokens.
    p[Vocabulary::kPad] = p[Vocabulary::kBos] = 0.0;
    if (t == 0) p[Vocabulary::kEos] = 0.0;
    int next;
    if (temperature <= 0) {
      next = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    } else {
      double sum = 0;
      for (auto& v : p) sum += (v = std::pow(v, 1.0 / temperature));
      double r = rng.unit() * sum, acc = 0;
      next = static_cast<int>(p.size()) - 1;
      for (std::size_t v = 0; v < p.size(); ++v)
        if ((acc += p[v]) > r) {
          next = static_cast<int>(v);
          break;
        }
    }
    if (next == Vocabulary::kEos) break;
    out.push_back(next);
    prev = next;
  }
  return out;
}

nlohmann::json ToyModel::to_json() const {
  return {{"format", "dialfuse-toy-model"},
          {"version", 1},
          {"embed_dim", config_.embed_dim},
          {"hidden_dim", config_.hidden_dim},
          {"max_vocab", config_.max_vocab},
          {"vocab", vocab_.tokens()},
          {"params", params_}};
}

ToyModel ToyModel::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "dialfuse-toy-model" || j.at("version") != 1)
      throw ParseError("not a version-1 toy model file");
    ToyConfig cfg;
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.hidden_dim = j.at("hidden_dim").get<int>();
    cfg.max_vocab = j.at("max_vocab").get<std::size_t>();
    Vocabulary vocab;
    vocab.extend(j.at("vocab").get<std::vector<std::string>>(), cfg.max_vocab);
    ToyModel m(std::move(vocab), cfg, 0);
    auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != m.params_.size()) throw ParseError("toy model parameter count mismatch");
    m.params_ = std::move(params);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("toy model: ") + e.what());
  }
}

void ToyModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write toy model '" + path.string() + "'");
  out << to_json().dump() << '\n';
  if (!out) throw IoError("write failed for toy model '" + path.string() + "'");
}

ToyModel ToyModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open toy model '" + path.string() + "'");
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("toy model '" + path.string() + "': " + e.what());
  }
}

// ---- objective and training -----------------------------------------------

SeqPair encode_pair(const Vocabulary& vocab, const std::vector<Segment>& condition, const std::string& target) {
  auto target_tokens = tokenize(to_lower(target));
  if (target_tokens.empty()) throw ValidationError("target is empty after tokenization");
  return {vocab.encode(condition_tokens(condition)), vocab.encode(target_tokens)};
}

double conditional_nll(const ToyModel& model, const std::vector<Segment>& condition, const std::string& target) {
  return model.nll(encode_pair(model.vocab(), condition, target));
}

nlohmann::ordered_json report_to_json(const TrainReport& r) {
  nlohmann::ordered_json j;
  j["epochs"] = r.epoch_loss.empty() ? 0 : r.epoch_loss.size() - 1;
  j["epoch_loss"] = r.epoch_loss;
  return j;
}

double mean_item_loss(const ToyModel& model, const std::vector<std::vector<SeqPair>>& items) {
  double total = 0;
  for (const auto& item : items)
    for (const auto& part : item) total += model.nll(part);
  return total / static_cast<double>(items.size());
}

TrainReport fit_items(ToyModel& model, const std::vector<std::vector<SeqPair>>& items, const FitOptions& options) {
  if (items.empty()) throw ValidationError("fit needs at least one example");
  if (options.epochs < 0) throw ValidationError("epochs must be >= 0");
  if (options.batch_size < 1) throw ValidationError("batch size must be >= 1");
  TrainReport report;
  report.epoch_loss.push_back(mean_item_loss(model, items));
  if (!std::isfinite(report.epoch_loss.back())) throw TrainingError("non-finite loss before training", 0);

  auto& params = model.params();
  const std::size_t n = params.size();
  std::vector<double> m(n, 0.0), v(n, 0.0), grad(n, 0.0);
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 rng(options.seed);
  long step = 0;
  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0;
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k)
        for (const auto& part : items[order[k]]) batch_loss += model.nll_and_grad(part, grad, scale);
      if (!std::isfinite(batch_loss)) throw TrainingError("non-finite loss in epoch " + std::to_string(epoch), epoch);
      ++step;
      const double bc1 = 1.0 - std::pow(options.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(options.beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < n; ++i) {
        const double g = grad[i];
        m[i] = options.beta1 * m[i] + (1.0 - options.beta1) * g;
        v[i] = options.beta2 * v[i] + (1.0 - options.beta2) * g * g;
        params[i] -= options.learning_rate * options.weight_decay * params[i];
        params[i] -= options.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + options.epsilon);
      }
    }
    double loss = mean_item_loss(model, items);
    if (!std::isfinite(loss)) throw TrainingError("non-finite loss after epoch " + std::to_string(epoch), epoch);
    report.epoch_loss.push_back(loss);
  }
  return report;
}

TrainReport fit(ToyModel& model, const std::vector<SeqPair>& examples, const FitOptions& options) {
  std::vector<std::vector<SeqPair>> items;
  items.reserve(examples.size());
  for (const auto& e : examples) items.push_back({e});
  return fit_items(model, items, options);
}

Vocabulary build_vocabulary(const std::vector<std::pair<std::vector<Segment>, std::string>>& examples,
                            std::size_t max_size) {
  Vocabulary v;
  for (const auto& [cond, target] : examples) {
    v.extend(condition_tokens(cond), max_size);
    v.extend(tokenize(to_lower(target)), max_size);
  }
  return v;
}

std::string ToyBackend::generate(const GenRequest& request) {
  validate_request(request);
  auto cond = model_.vocab().encode_lenient(condition_tokens(request.condition));
  auto ids = model_.generate(cond, request.max_tokens, temperature_, request.seed);
  std::vector<std::string> tokens;
  for (int id : ids) tokens.push_back(model_.vocab().token(id));
  std::string out = detokenize(tokens);
  if (trim(out).empty()) throw ProviderError("toy model produced an empty reply");
  return out;
}

}  // namespace dialfuse
