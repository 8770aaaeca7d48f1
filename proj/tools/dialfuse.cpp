#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dialfuse/backends.hpp"
#include "dialfuse/corpus.hpp"
#include "dialfuse/error.hpp"
#include "dialfuse/evalkit.hpp"
#include "dialfuse/intent.hpp"
#include "dialfuse/knowledge.hpp"
#include "dialfuse/pivot.hpp"
#include "dialfuse/service.hpp"
#include "dialfuse/service_http.hpp"
#include "dialfuse/synthesis.hpp"
#include "dialfuse/toy_model.hpp"

namespace fs = std::filesystem;
using namespace dialfuse;
using nlohmann::ordered_json;

namespace {

// Every artifact goes through here so nothing lands outside the output dir.
class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) {}

  fs::path file(const std::string& name) const {
    if (name.empty() || name.find('/') != std::string::npos || name == "." || name == "..")
      throw ValidationError("invalid output file name '" + name + "'");
    fs::create_directories(root_);
    return root_ / name;
  }

  void write(const std::string& name, const std::string& content) const {
    fs::path p = file(name);
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    out << content;
    if (!out) throw IoError("write failed on " + p.string());
  }

  void write_json(const std::string& name, const ordered_json& j) const { write(name, j.dump(2) + "\n"); }

 private:
  fs::path root_;
};

bool is_jsonl(const fs::path& p) { return p.extension() == ".jsonl"; }

DialogSet load_any_corpus(const fs::path& path, const std::string& ontology_path) {
  if (is_jsonl(path)) return load_fused_corpus(path);
  if (ontology_path.empty()) throw ValidationError("--ontology is required for MultiWOZ-format input " + path.string());
  return load_tod_corpus(path, load_ontology(ontology_path));
}

std::vector<TrainingExample> load_examples(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<TrainingExample> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(example_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  if (out.empty()) throw ValidationError(path.string() + " holds no examples");
  return out;
}

std::unique_ptr<SearchProvider> make_search(const std::string& mock_path, const std::string& cache_dir) {
  if (!mock_path.empty() && !cache_dir.empty()) throw ValidationError("--search and --search-cache are exclusive");
  if (!mock_path.empty()) return std::make_unique<MockSearchProvider>(load_mock_search(mock_path));
  if (!cache_dir.empty()) return std::make_unique<CachingSearchProvider>(cache_dir, nullptr);
  return nullptr;
}

struct ToyOptions {
  int epochs = 10;
  double lr = 1e-3;
  int batch = 8;
  int embed_dim = 32;
  int hidden_dim = 64;

  void add_to(CLI::App* app) {
    app->add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--lr", lr, "AdamW learning rate")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--batch", batch, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--embed-dim", embed_dim, "Embedding width")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--hidden-dim", hidden_dim, "Recurrent width")->check(CLI::PositiveNumber)->capture_default_str();
  }

  ToyModel train(const std::vector<TrainingExample>& examples, std::uint64_t seed, TrainReport* report) const {
    ToyConfig cfg;
    cfg.embed_dim = embed_dim;
    cfg.hidden_dim = hidden_dim;
    ToyModel model(pivot_vocabulary(examples), cfg, seed);
    FitOptions fo;
    fo.epochs = epochs;
    fo.learning_rate = lr;
    fo.batch_size = batch;
    fo.seed = seed;
    TrainReport r = train_pivot(examples, model, fo);
    if (report) *report = r;
    return model;
  }
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("bad seed '" + item + "' in --seeds");
    }
  }
  if (out.empty()) throw ValidationError("--seeds needs at least one seed");
  return out;
}

std::pair<std::string, std::string> split_assignment(const std::string& s, const char* flag) {
  auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size())
    throw ValidationError(std::string(flag) + " expects setting=path, got '" + s + "'");
  std::string setting = s.substr(0, eq);
  parse_setting(setting);
  return {setting, s.substr(eq + 1)};
}

std::string predictions_jsonl(const std::vector<DialogPrediction>& preds) {
  std::string out;
  for (const auto& p : preds) out += prediction_to_json(p).dump() + "\n";
  return out;
}

std::string stats_table(const CorpusStats& s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "dialogs " << s.n_dialogs << "\n";
  os << "                      total      avg\n";
  auto line = [&](const char* name, long total, double avg) {
    os << std::left << std::setw(20) << name << std::right << std::setw(9) << total << std::setw(9) << avg << "\n";
  };
  line("mode switches", s.total_mode_switches, s.avg_mode_switch);
  line("ODD turns", s.total_odd_turns, s.avg_odd_turns_per_dialog);
  line("TOD turns", s.total_tod_turns, s.avg_tod_turns_per_dialog);
  line("ODD utt. length", s.odd_tokens, s.avg_odd_utterance_length_tokens);
  line("TOD utt. length", s.tod_tokens, s.avg_tod_utterance_length_tokens);
  return os.str();
}

std::atomic<HttpFrontend*> g_frontend{nullptr};

void on_signal(int) {
  if (auto* f = g_frontend.load()) f->stop();
}

// A saved detector, or labeled "mode<TAB>utterance" lines trained on the spot.
IntentDetector detector_from_path(const fs::path& path, std::uint64_t seed) {
  if (path.extension() == ".tsv") return train_detector(load_intent_examples(path), DetectorConfig{}, seed);
  return load_detector(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dialfuse: fused task-oriented / open-domain dialog workbench"};
  app.set_config("--config", "", "TOML config file; flags override it");
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string out_dir;

  // ---- synthesize
  auto* syn = app.add_subcommand("synthesize", "Insert open-domain snippets into task-oriented dialogs");
  std::string syn_input, syn_ontology, syn_setting, syn_registry, syn_detector, syn_personas;
  std::string chat_name = "chat", user_name = "user", system_name = "system", transition_name = "transition";
  int max_odd = 0, workers = 1, syn_max_tokens = 48;
  bool no_transition = false;
  syn->add_option("--input", syn_input, "TOD corpus (MultiWOZ data.json or .jsonl)")->required()->check(CLI::ExistingFile);
  syn->add_option("--ontology", syn_ontology, "Ontology file")->required()->check(CLI::ExistingFile);
  syn->add_option("--setting", syn_setting, "initial | transition | multiple")
      ->required()
      ->check(CLI::IsMember({"initial", "transition", "multiple"}));
  syn->add_option("--backends", syn_registry, "Backend registry")->required()->check(CLI::ExistingFile);
  syn->add_option("--chat-backend", chat_name, "Opener backend")->capture_default_str();
  syn->add_option("--user-backend", user_name, "User simulator backend")->capture_default_str();
  syn->add_option("--system-backend", system_name, "Chatbot backend")->capture_default_str();
  syn->add_option("--transition-backend", transition_name, "Transition backend")->capture_default_str();
  syn->add_option("--detector", syn_detector, "Intent detector (.json) or labeled utterances (.tsv)")->check(CLI::ExistingFile);
  syn->add_option("--personas", syn_personas, "Persona file, one per line")->check(CLI::ExistingFile);
  syn->add_option("--max-odd-turns", max_odd, "ODD user-turn cap (0 = setting default)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  syn->add_option("--max-tokens", syn_max_tokens, "Generation length cap")->check(CLI::PositiveNumber)->capture_default_str();
  syn->add_flag("--no-transition-after-multiple", no_transition, "End MULTIPLE interludes with a plain system reply");
  syn->add_option("--workers", workers, "Dialog-parallel workers")->check(CLI::PositiveNumber)->capture_default_str();
  syn->add_option("--seed", seed, "Random seed")->required();
  syn->add_option("--out", out_dir, "Output directory")->required();

  // ---- stats
  auto* sta = app.add_subcommand("stats", "Corpus statistics");
  std::string sta_input, sta_ontology;
  sta->add_option("--input", sta_input, "Corpus (.jsonl or MultiWOZ data.json)")->required()->check(CLI::ExistingFile);
  sta->add_option("--ontology", sta_ontology, "Ontology for MultiWOZ input")->check(CLI::ExistingFile);
  sta->add_option("--out", out_dir, "Optional output directory for stats.json");

  // ---- build-examples
  auto* bex = app.add_subcommand("build-examples", "Derive (history, state, knowledge, response) examples");
  std::string bex_input, bex_db, search_mock, search_cache;
  int window_k = 2, search_limit = 3;
  bex->add_option("--input", bex_input, "Fused corpus (.jsonl)")->required()->check(CLI::ExistingFile);
  bex->add_option("--db", bex_db, "Database file or directory")->required()->check(CLI::ExistingPath);
  bex->add_option("--search", search_mock, "Mock search fixture")->check(CLI::ExistingFile);
  bex->add_option("--search-cache", search_cache, "Offline search cache directory")->check(CLI::ExistingDirectory);
  bex->add_option("--window-k", window_k, "History exchanges")->check(CLI::NonNegativeNumber)->capture_default_str();
  bex->add_option("--search-limit", search_limit, "Snippets per query")->check(CLI::PositiveNumber)->capture_default_str();
  bex->add_option("--out", out_dir, "Output directory")->required();

  // ---- train-toy
  auto* trn = app.add_subcommand("train-toy", "Train the toy pivot model");
  std::string trn_examples;
  ToyOptions toy;
  trn->add_option("--examples", trn_examples, "examples.jsonl")->required()->check(CLI::ExistingFile);
  toy.add_to(trn);
  trn->add_option("--seed", seed, "Random seed")->required();
  trn->add_option("--out", out_dir, "Output directory")->required();

  // ---- evaluate
  auto* evl = app.add_subcommand("evaluate", "Predict and score a gold corpus over several seeds");
  std::string evl_gold, evl_db, evl_setting, evl_model, evl_train, evl_registry, evl_backend, seeds_text;
  bool no_transition_bleu = false;
  evl->add_option("--gold", evl_gold, "Gold fused corpus (.jsonl)")->required()->check(CLI::ExistingFile);
  evl->add_option("--db", evl_db, "Database file or directory")->required()->check(CLI::ExistingPath);
  evl->add_option("--setting", evl_setting, "Label of the evaluated setting")->required();
  evl->add_option("--seeds", seeds_text, "Comma-separated seeds")->required();
  auto* m_opt = evl->add_option("--model", evl_model, "Saved toy model")->check(CLI::ExistingFile);
  auto* t_opt = evl->add_option("--train", evl_train, "examples.jsonl; retrain a toy model per seed")->check(CLI::ExistingFile);
  auto* r_opt = evl->add_option("--backends", evl_registry, "Backend registry")->check(CLI::ExistingFile);
  evl->add_option("--backend", evl_backend, "Backend name in the registry")->needs(r_opt);
  m_opt->excludes(t_opt)->excludes(r_opt);
  t_opt->excludes(r_opt);
  evl->add_option("--search", search_mock, "Mock search fixture")->check(CLI::ExistingFile);
  evl->add_option("--search-cache", search_cache, "Offline search cache directory")->check(CLI::ExistingDirectory);
  evl->add_flag("--no-transition-in-odd-bleu", no_transition_bleu, "Exclude transition turns from ODD BLEU");
  toy.add_to(evl);
  evl->add_option("--out", out_dir, "Output directory")->required();

  // ---- cross-eval
  auto* crs = app.add_subcommand("cross-eval", "Train on each setting, evaluate on each setting");
  std::vector<std::string> crs_train, crs_eval;
  std::string crs_db;
  crs->add_option("--train", crs_train, "setting=examples.jsonl (repeatable)")->required();
  crs->add_option("--eval", crs_eval, "setting=gold.jsonl (repeatable)")->required();
  crs->add_option("--db", crs_db, "Database file or directory")->required()->check(CLI::ExistingPath);
  crs->add_option("--seeds", seeds_text, "Comma-separated seeds")->required();
  crs->add_option("--search", search_mock, "Mock search fixture")->check(CLI::ExistingFile);
  toy.add_to(crs);
  crs->add_option("--out", out_dir, "Output directory")->required();

  // ---- serve
  auto* srv = app.add_subcommand("serve", "Run the human-evaluation HTTP service");
  std::string srv_registry, srv_goals, srv_ontology, srv_db, srv_detector, host = "127.0.0.1";
  int port = 8080, idle_s = 1800;
  srv->add_option("--backends", srv_registry, "Backend registry; every entry becomes a model")
      ->required()
      ->check(CLI::ExistingFile);
  srv->add_option("--goals", srv_goals, "Corpus supplying goal cards")->required()->check(CLI::ExistingFile);
  srv->add_option("--ontology", srv_ontology, "Ontology for MultiWOZ goal input")->check(CLI::ExistingFile);
  srv->add_option("--db", srv_db, "Database file or directory")->required()->check(CLI::ExistingPath);
  srv->add_option("--search", search_mock, "Mock search fixture")->check(CLI::ExistingFile);
  srv->add_option("--search-cache", search_cache, "Offline search cache directory")->check(CLI::ExistingDirectory);
  srv->add_option("--detector", srv_detector, "Intent detector (.json or .tsv) for state fallback")->check(CLI::ExistingFile);
  srv->add_option("--host", host, "Bind address")->capture_default_str();
  srv->add_option("--port", port, "Port (0 = any)")->check(CLI::Range(0, 65535))->capture_default_str();
  srv->add_option("--idle-timeout", idle_s, "Seconds before an idle session is abandoned")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  srv->add_option("--seed", seed, "Random seed")->required();
  srv->add_option("--out", out_dir, "Directory holding the event store")->required();

  // ---- chat
  auto* cht = app.add_subcommand("chat", "Terminal chat through the pivot pipeline");
  std::string cht_model, cht_registry, cht_backend, cht_db, cht_detector;
  auto* cm = cht->add_option("--model", cht_model, "Saved toy model")->check(CLI::ExistingFile);
  auto* cr = cht->add_option("--backends", cht_registry, "Backend registry")->check(CLI::ExistingFile);
  cht->add_option("--backend", cht_backend, "Backend name in the registry")->needs(cr);
  cm->excludes(cr);
  cht->add_option("--db", cht_db, "Database file or directory")->required()->check(CLI::ExistingPath);
  cht->add_option("--search", search_mock, "Mock search fixture")->check(CLI::ExistingFile);
  cht->add_option("--search-cache", search_cache, "Offline search cache directory")->check(CLI::ExistingDirectory);
  cht->add_option("--detector", cht_detector, "Intent detector (.json or .tsv) for state fallback")->check(CLI::ExistingFile);
  cht->add_option("--seed", seed, "Random seed")->required();
  cht->add_option("--out", out_dir, "Optional directory for chat_trace.jsonl");

  CLI11_PARSE(app, argc, argv);
  for (const auto* sub : app.get_subcommands())
    std::cerr << "# resolved configuration\n[" << sub->get_name() << "]\n" << sub->config_to_str(true, false);

  try {
    OutputDir out(out_dir);

    if (*syn) {
      Ontology ontology = load_ontology(syn_ontology);
      DialogSet tod = is_jsonl(syn_input) ? load_fused_corpus(syn_input) : load_tod_corpus(syn_input, ontology);
      BackendRegistry registry = load_registry(syn_registry);
      std::optional<IntentDetector> detector;
      if (!syn_detector.empty()) detector = detector_from_path(syn_detector, seed);
      SynthesisConfig cfg;
      cfg.setting = parse_setting(syn_setting);
      cfg.max_odd_turns = max_odd;
      cfg.personas = syn_personas.empty() ? default_personas() : load_personas(syn_personas);
      cfg.seed = seed;
      cfg.transition_after_multiple = !no_transition;
      cfg.max_tokens = syn_max_tokens;
      validate_config(cfg);
      auto chat = registry.get(chat_name);
      auto user = registry.get(user_name);
      auto system = registry.get(system_name);
      auto transition = registry.get(transition_name);
      SynthesisBackends backends{chat.get(), user.get(), system.get(), transition.get()};

      SynthesisResult r = synthesize_corpus(tod, cfg, backends, detector ? &*detector : nullptr, ontology, workers);
      {
        std::ostringstream os;
        write_jsonl(os, r.dialogs);
        out.write("fused.jsonl", os.str());
      }
      std::string traces;
      for (const auto& t : r.traces) traces += trace_to_json(t).dump() + "\n";
      out.write("traces.jsonl", traces);
      ordered_json skipped = ordered_json::array();
      for (const auto& s : r.skipped) skipped.push_back({{"dialog_id", s.dialog_id}, {"reason", s.reason}});
      out.write_json("skipped.json", skipped);
      out.write_json("stats.json", stats_to_json(r.stats));
      std::cout << "synthesized " << r.dialogs.size() << " of " << tod.size() << " dialogs (" << r.skipped.size()
                << " skipped)\n"
                << stats_table(r.stats);
    } else if (*sta) {
      DialogSet corpus = load_any_corpus(sta_input, sta_ontology);
      CorpusStats s = compute_stats(corpus);
      std::cout << stats_table(s);
      if (!out_dir.empty()) out.write_json("stats.json", stats_to_json(s));
    } else if (*bex) {
      DialogSet corpus = load_fused_corpus(bex_input);
      Database db = load_database(bex_db);
      auto search = make_search(search_mock, search_cache);
      ExampleOptions eo{window_k, search_limit};
      std::string lines;
      std::size_t n = 0;
      for (const auto& d : corpus)
        for (const auto& e : make_training_examples(d, db, search.get(), eo)) {
          lines += example_to_json(e).dump() + "\n";
          ++n;
        }
      out.write("examples.jsonl", lines);
      std::cout << "wrote " << n << " examples from " << corpus.size() << " dialogs\n";
    } else if (*trn) {
      auto examples = load_examples(trn_examples);
      TrainReport report;
      ToyModel model = toy.train(examples, seed, &report);
      model.save(out.file("model.json"));
      out.write_json("train_report.json", report_to_json(report));
      std::cout << "trained on " << examples.size() << " examples; loss " << report.epoch_loss.front() << " -> "
                << report.epoch_loss.back() << "\n";
    } else if (*evl) {
      auto seeds = parse_seeds(seeds_text);
      if (evl_model.empty() && evl_train.empty() && evl_registry.empty())
        throw ValidationError("evaluate needs one of --model, --train or --backends");
      if (!evl_registry.empty() && evl_backend.empty()) throw ValidationError("--backends needs --backend");
      DialogSet gold = load_fused_corpus(evl_gold);
      Database db = load_database(evl_db);
      auto search = make_search(search_mock, search_cache);
      std::vector<TrainingExample> examples;
      if (!evl_train.empty()) examples = load_examples(evl_train);
      std::optional<BackendRegistry> registry;
      if (!evl_registry.empty()) registry = load_registry(evl_registry);
      EvalOptions eo;
      eo.transition_in_odd_bleu = !no_transition_bleu;

      std::vector<EvalReport> reports;
      for (std::uint64_t s : seeds) {
        std::shared_ptr<Backend> backend;
        if (!evl_model.empty()) {
          backend = std::make_shared<ToyBackend>(ToyModel::load(evl_model));
        } else if (!examples.empty()) {
          backend = std::make_shared<ToyBackend>(toy.train(examples, s, nullptr));
        } else {
          backend = registry->get(evl_backend);
        }
        auto preds = predict_corpus(gold, *backend, db, search.get(), {}, s);
        out.write("predictions_seed" + std::to_string(s) + ".jsonl", predictions_jsonl(preds));
        reports.push_back(evaluate(gold, preds, db, evl_setting, s, eo));
        out.write_json("report_seed" + std::to_string(s) + ".json", report_to_json(reports.back()));
      }
      if (reports.size() >= 2) {
        RunAggregate agg = aggregate_runs(reports);
        out.write_json("aggregate.json", aggregate_to_json(agg));
        std::cout << format_aggregate(agg);
      } else {
        std::cout << format_report(reports.front());
      }
    } else if (*crs) {
      auto seeds = parse_seeds(seeds_text);
      std::vector<std::pair<std::string, std::string>> trains, evals;
      for (const auto& t : crs_train) trains.push_back(split_assignment(t, "--train"));
      for (const auto& e : crs_eval) evals.push_back(split_assignment(e, "--eval"));
      for (const auto& [_, p] : trains)
        if (!fs::exists(p)) throw ValidationError("no such file " + p);
      for (const auto& [_, p] : evals)
        if (!fs::exists(p)) throw ValidationError("no such file " + p);
      Database db = load_database(crs_db);
      auto search = make_search(search_mock, "");
      std::map<std::string, DialogSet> gold;
      for (const auto& [setting, p] : evals) gold[setting] = load_fused_corpus(p);

      std::map<std::pair<std::string, std::string>, std::vector<EvalReport>> runs;
      for (const auto& [train_setting, p] : trains) {
        auto examples = load_examples(p);
        for (std::uint64_t s : seeds) {
          ToyBackend backend(toy.train(examples, s, nullptr));
          for (const auto& [eval_setting, g] : gold) {
            auto preds = predict_corpus(g, backend, db, search.get(), {}, s);
            runs[{train_setting, eval_setting}].push_back(evaluate(g, preds, db, eval_setting, s));
          }
        }
      }
      std::vector<std::string> settings;
      for (const char* name : {"initial", "transition", "multiple"}) {
        bool used = std::any_of(trains.begin(), trains.end(), [&](const auto& t) { return t.first == name; }) ||
                    gold.count(name);
        if (used) settings.push_back(name);
      }
      CrossMatrix m = cross_setting_eval(runs, settings);
      out.write_json("cross.json", cross_to_json(m));
      std::cout << format_cross(m);
    } else if (*srv) {
      GoalSampler sampler = GoalSampler::from_corpus(load_any_corpus(srv_goals, srv_ontology));
      BackendRegistry registry = load_registry(srv_registry);
      Database db = load_database(srv_db);
      auto search = make_search(search_mock, search_cache);
      std::optional<IntentDetector> detector;
      if (!srv_detector.empty()) detector = detector_from_path(srv_detector, seed);
      ServiceConfig sc;
      sc.store = out.file("store.jsonl");
      sc.idle_timeout = std::chrono::seconds(idle_s);
      sc.seed = seed;
      EvalService service(sc, std::move(sampler));
      for (const auto& name : registry.names())
        service.register_model(name, ModelEntry{registry.get(name), &db, search.get(), detector ? &*detector : nullptr});
      HttpFrontend http(service);
      int bound = http.bind(host, port);
      g_frontend = &http;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on " << host << ":" << bound << std::endl;
      http.serve();
      g_frontend = nullptr;
    } else if (*cht) {
      if (cht_model.empty() && cht_registry.empty()) throw ValidationError("chat needs --model or --backends");
      if (!cht_registry.empty() && cht_backend.empty()) throw ValidationError("--backends needs --backend");
      Database db = load_database(cht_db);
      auto search = make_search(search_mock, search_cache);
      std::optional<IntentDetector> detector;
      if (!cht_detector.empty()) detector = detector_from_path(cht_detector, seed);
      std::shared_ptr<Backend> backend;
      std::optional<BackendRegistry> registry;
      if (!cht_model.empty()) {
        backend = std::make_shared<ToyBackend>(ToyModel::load(cht_model));
      } else {
        registry = load_registry(cht_registry);
        backend = registry->get(cht_backend);
      }
      KnowledgeRouter router(&db, search.get());
      PivotSession session;
      session.seed = seed;
      std::optional<std::ofstream> trace;
      if (!out_dir.empty()) trace.emplace(out.file("chat_trace.jsonl"), std::ios::trunc);
      std::string line;
      while (std::cout << "> " << std::flush, std::getline(std::cin, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ChatOutcome o = chat_turn(session, line, *backend, router, detector ? &*detector : nullptr);
        std::cout << o.response << "\n";
        if (trace) *trace << outcome_to_json(o).dump() << "\n" << std::flush;
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
