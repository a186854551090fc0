#pragma once

// Caption metrics over single-reference corpora and object top-k accuracy.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace drivex::metrics {

struct EvalRecord {
  std::string clip_id;
  std::string candidate;
  std::string reference;
  std::string attention_source;

  bool operator==(const EvalRecord&) const = default;
};

/// Lowercase, whitespace split.
std::vector<std::string> tokenize(std::string_view text);

/// Corpus BLEU-4, uniform weights, no smoothing, standard brevity penalty.
/// Throws std::invalid_argument on an empty corpus.
double bleu4(std::span<const EvalRecord> records);
/// Sentence BLEU-4 with add-one smoothing on every order (diagnostic only).
double sentence_bleu_smoothed(std::string_view candidate, std::string_view reference);

inline constexpr double kRougeBeta = 1.2;
double rouge_l_pair(std::string_view candidate, std::string_view reference);
/// Mean per-record ROUGE-L F-measure. Throws on an empty corpus.
double rouge_l(std::span<const EvalRecord> records);

/// Per-record CIDEr with document frequencies from the reference corpus.
/// Throws std::invalid_argument when fewer than two records are given.
std::vector<double> cider_per_record(std::span<const EvalRecord> records);
double cider(std::span<const EvalRecord> records);

/// Slot F1 between a candidate and a reference. Throws std::invalid_argument
/// when the reference is outside the template grammar.
double spice_slot_pair(std::string_view candidate, std::string_view reference);
double spice_slot(std::span<const EvalRecord> records);

struct TopkCase {
  std::vector<double> a_sig;
  int gt_index = 0;
};

/// Whether gt is among the k highest entries, ties toward the lower index.
bool topk_hit(const TopkCase& c, int k);
double topk_accuracy(std::span<const TopkCase> cases, int k);

struct RecordDiagnostics {
  std::string clip_id;
  double bleu_smoothed = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  double spice_slot = 0.0;
  bool candidate_parses = false;
};

struct MetricReport {
  size_t count = 0;
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  double spice_slot = 0.0;
  double parse_rate = 0.0;
  std::optional<double> top1;
  std::optional<double> top3;
  std::vector<RecordDiagnostics> records;
};

MetricReport evaluate(std::span<const EvalRecord> records, std::span<const TopkCase> topk_cases = {});

/// Report with scores, metric variant annotations and per-record diagnostics.
nlohmann::json to_json(const MetricReport& report);

void write_jsonl(const std::filesystem::path& path, std::span<const EvalRecord> records);
/// Throws std::runtime_error naming the line on malformed input.
std::vector<EvalRecord> read_jsonl(const std::filesystem::path& path);

}  // namespace drivex::metrics
