#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dialfuse/corpus.hpp"
#include "dialfuse/knowledge.hpp"
#include "dialfuse/pivot.hpp"
#include "dialfuse/synthesis.hpp"

namespace dialfuse {

// Report header values; bump when a metric definition changes.
inline constexpr int kReportSchemaVersion = 1;
inline constexpr std::string_view kBleuVariant = "corpus-bleu4/floor-0.1/dialfuse-tokenize-lower";

// Corpus 4-gram BLEU in [0, 100]. Hypotheses and references are lowercased
// and split with tokenize(). A zero n-gram match count is floored to 0.1
// before the geometric mean; an empty hypothesis corpus scores 0.
double bleu(const std::vector<std::string>& references, const std::vector<std::string>& hypotheses);

inline double combined(double inform, double success, double bleu_score) {
  return (inform + success) * 0.5 + bleu_score;
}

// Reference response of a gold system turn: its delexicalized text when
// annotated, else the raw text.
std::string gold_response(const Turn& turn);

// Predictions re-ordered to follow the gold set, validated turn by turn.
// Throws ValidationError on a missing dialog or misaligned turns.
std::vector<const DialogPrediction*> align_predictions(const DialogSet& gold,
                                                       const std::vector<DialogPrediction>& predictions);

struct InformSuccess {
  double inform = 0;   // percent
  double success = 0;  // percent
};

// Per-dialog outcome of the MultiWOZ-style check.
struct DialogMatch {
  bool inform = false;
  bool success = false;
};

// Inform: every goal domain with informable constraints has an offered
// entity, where an offer is a response carrying the domain's entity
// placeholder ([<domain>_name], or [train_id]) and the offered entity is the
// first DB match of the latest predicted belief that constrains the domain.
// The last offer counts and must satisfy the goal constraints. Domains
// absent from the database count as informed.
// Success: inform, and every requested slot with a placeholder appears in
// some response.
DialogMatch match_dialog(const Dialog& gold, const DialogPrediction& prediction, const Database& db);

// Percentages over dialogs. Throws ValidationError when a gold dialog has
// no goal card or the prediction set does not align with the gold set.
InformSuccess inform_success(const DialogSet& gold, const std::vector<DialogPrediction>& predictions,
                             const Database& db);

// Percent of gold-ODD turns predicted ODD. Throws ValidationError on length
// mismatch and UndefinedMetric when there is no gold-ODD turn.
double mode_accuracy(const std::vector<Mode>& predicted, const std::vector<Mode>& gold);

// Percent of dialogs with >= 1 gold-ODD turn in which every gold-ODD turn
// was predicted ODD. UndefinedMetric when no dialog has an ODD turn.
double odd_success_rate(const std::vector<std::vector<Mode>>& predicted, const std::vector<std::vector<Mode>>& gold);

struct TodBlock {
  double bleu = 0, inform = 0, success = 0, combined = 0;
};
struct OddBlock {
  double accuracy = 0, success_rate = 0, bleu = 0;
};
struct FullBlock {
  double bleu = 0, inform = 0, success = 0, combined = 0;
};

struct EvalOptions {
  // Transition turns are tagged ODD; they count toward ODD BLEU unless off.
  bool transition_in_odd_bleu = true;
};

// BLEU over every system response; inform/success over the full dialog set
// with any dialog that missed a gold-ODD turn counted as a failure.
FullBlock full_task_eval(const DialogSet& gold, const std::vector<DialogPrediction>& predictions, const Database& db);

struct EvalReport {
  int schema_version = kReportSchemaVersion;
  std::string bleu_variant = std::string(kBleuVariant);
  std::string setting;
  TodBlock tod;
  std::optional<OddBlock> odd;  // absent when the gold set has no ODD turn
  FullBlock full;
  std::size_t n_dialogs = 0;
  std::uint64_t seed = 0;
};

// TOD block: BLEU over gold-TOD turns, inform/success over all dialogs.
// ODD block: accuracy and success rate over gold-ODD turns, BLEU over gold-ODD responses.
EvalReport evaluate(const DialogSet& gold, const std::vector<DialogPrediction>& predictions, const Database& db,
                    const std::string& setting, std::uint64_t seed, const EvalOptions& options = {});

nlohmann::ordered_json report_to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

struct MeanStd {
  double mean = 0;
  double std = 0;  // sample standard deviation
  std::size_t n = 0;
};

MeanStd mean_std(const std::vector<double>& values);

// Metric name ("tod.bleu", "odd.accuracy", "full.combined", ...) -> mean/std.
struct RunAggregate {
  std::string setting;
  std::size_t runs = 0;
  std::map<std::string, MeanStd> metrics;
};

std::map<std::string, double> flatten(const EvalReport& r);

// >= 2 reports of one setting, else ValidationError.
RunAggregate aggregate_runs(const std::vector<EvalReport>& reports);
nlohmann::ordered_json aggregate_to_json(const RunAggregate& a);

// Cell (train setting, eval setting) -> reports over seeds. Cells hold the
// full-task Combined score, aggregated when several seeds are supplied.
struct CrossCell {
  double combined = 0;
  std::optional<MeanStd> aggregate;
};
struct CrossMatrix {
  std::vector<std::string> settings;
  std::map<std::pair<std::string, std::string>, CrossCell> cells;  // missing cells are absent
};

CrossMatrix cross_setting_eval(const std::map<std::pair<std::string, std::string>, std::vector<EvalReport>>& runs,
                               const std::vector<std::string>& settings = {"initial", "transition", "multiple"});
nlohmann::ordered_json cross_to_json(const CrossMatrix& m);

// Two-sided paired bootstrap p-value for mean(a - b) != 0.
double paired_bootstrap(const std::vector<double>& a, const std::vector<double>& b, int resamples = 10000,
                        std::uint64_t seed = 0);

// Plain-text tables in the layout of the usual result tables.
std::string format_report(const EvalReport& r);
std::string format_aggregate(const RunAggregate& a);
std::string format_cross(const CrossMatrix& m);

}  // namespace dialfuse
