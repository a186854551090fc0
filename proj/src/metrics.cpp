#include "drivex/metrics.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "drivex/scene_data.hpp"

namespace drivex::metrics {

namespace {

using NgramCounts = std::map<std::string, int>;

NgramCounts ngrams(const std::vector<std::string>& words, int n) {
  NgramCounts out;
  for (size_t i = 0; i + static_cast<size_t>(n) <= words.size(); ++i) {
    std::string key = words[i];
    for (int k = 1; k < n; ++k) key.append(" ").append(words[i + static_cast<size_t>(k)]);
    ++out[key];
  }
  return out;
}

void require_nonempty(std::span<const EvalRecord> records, const char* metric) {
  if (records.empty()) throw std::invalid_argument(std::string(metric) + ": empty corpus");
}

std::string normalized(std::string_view text) {
  std::string out;
  for (const auto& w : tokenize(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double bleu4(std::span<const EvalRecord> records) {
  require_nonempty(records, "bleu4");
  double matched[4] = {0, 0, 0, 0};
  double total[4] = {0, 0, 0, 0};
  double cand_len = 0, ref_len = 0;
  for (const auto& r : records) {
    const auto c = tokenize(r.candidate);
    const auto ref = tokenize(r.reference);
    cand_len += static_cast<double>(c.size());
    ref_len += static_cast<double>(ref.size());
    for (int n = 1; n <= 4; ++n) {
      const auto cc = ngrams(c, n);
      const auto rc = ngrams(ref, n);
      for (const auto& [g, count] : cc) {
        auto it = rc.find(g);
        if (it != rc.end()) matched[n - 1] += std::min(count, it->second);
        total[n - 1] += count;
      }
    }
  }
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (total[n] == 0 || matched[n] == 0) return 0.0;
    log_sum += std::log(matched[n] / total[n]);
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum / 4.0);
}

double sentence_bleu_smoothed(std::string_view candidate, std::string_view reference) {
  const auto c = tokenize(candidate);
  const auto ref = tokenize(reference);
  if (c.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    const auto cc = ngrams(c, n);
    const auto rc = ngrams(ref, n);
    double m = 0, t = 0;
    for (const auto& [g, count] : cc) {
      auto it = rc.find(g);
      if (it != rc.end()) m += std::min(count, it->second);
      t += count;
    }
    log_sum += std::log((m + 1.0) / (t + 1.0));
  }
  const double cl = static_cast<double>(c.size());
  const double rl = static_cast<double>(ref.size());
  const double bp = cl > rl ? 1.0 : std::exp(1.0 - rl / cl);
  return bp * std::exp(log_sum / 4.0);
}

double rouge_l_pair(std::string_view candidate, std::string_view reference) {
  const auto c = tokenize(candidate);
  const auto r = tokenize(reference);
  if (c.empty() || r.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(c, r));
  if (lcs == 0) return 0.0;
  const double p = lcs / static_cast<double>(c.size());
  const double rec = lcs / static_cast<double>(r.size());
  const double b2 = kRougeBeta * kRougeBeta;
  return (1.0 + b2) * p * rec / (rec + b2 * p);
}

double rouge_l(std::span<const EvalRecord> records) {
  require_nonempty(records, "rouge_l");
  double sum = 0.0;
  for (const auto& r : records) sum += rouge_l_pair(r.candidate, r.reference);
  return sum / static_cast<double>(records.size());
}

std::vector<double> cider_per_record(std::span<const EvalRecord> records) {
  if (records.size() < 2) throw std::invalid_argument("cider: needs at least two records");
  const double log_n = std::log(static_cast<double>(records.size()));
  std::vector<std::array<NgramCounts, 4>> refs(records.size()), cands(records.size());
  std::array<std::map<std::string, int>, 4> df;
  for (size_t i = 0; i < records.size(); ++i) {
    const auto c = tokenize(records[i].candidate);
    const auto r = tokenize(records[i].reference);
    for (int n = 1; n <= 4; ++n) {
      refs[i][static_cast<size_t>(n - 1)] = ngrams(r, n);
      cands[i][static_cast<size_t>(n - 1)] = ngrams(c, n);
      for (const auto& [g, count] : refs[i][static_cast<size_t>(n - 1)]) ++df[static_cast<size_t>(n - 1)][g];
    }
  }
  auto idf = [&](size_t n, const std::string& g) {
    auto it = df[n].find(g);
    const int d = it == df[n].end() ? 0 : it->second;
    return log_n - std::log(static_cast<double>(std::max(1, d)));
  };
  std::vector<double> out(records.size(), 0.0);
  for (size_t i = 0; i < records.size(); ++i) {
    double sum = 0.0;
    int orders = 0;
    for (size_t n = 0; n < 4; ++n) {
      double ref_norm2 = 0.0, cand_norm2 = 0.0, dot = 0.0;
      for (const auto& [g, count] : refs[i][n]) {
        const double w = count * idf(n, g);
        ref_norm2 += w * w;
      }
      if (ref_norm2 == 0.0) continue;
      ++orders;
      for (const auto& [g, count] : cands[i][n]) {
        const double w = count * idf(n, g);
        cand_norm2 += w * w;
        auto it = refs[i][n].find(g);
        if (it != refs[i][n].end()) dot += w * it->second * idf(n, g);
      }
      if (cand_norm2 > 0.0) sum += dot / (std::sqrt(cand_norm2) * std::sqrt(ref_norm2));
    }
    out[i] = orders == 0 ? 0.0 : 10.0 * sum / orders;
  }
  return out;
}

double cider(std::span<const EvalRecord> records) {
  const auto per = cider_per_record(records);
  double sum = 0.0;
  for (double v : per) sum += v;
  return sum / static_cast<double>(per.size());
}

double spice_slot_pair(std::string_view candidate, std::string_view reference) {
  const auto ref = scene::parse_explanation(normalized(reference));
  if (!ref) throw std::invalid_argument("spice_slot: reference outside the template grammar: '" +
                                        std::string(reference) + "'");
  const auto cand = scene::parse_explanation(normalized(candidate));
  if (!cand) return 0.0;
  int matches = 0;
  matches += cand->object_name == ref->object_name ? 1 : 0;
  matches += cand->action_status == ref->action_status ? 1 : 0;
  matches += cand->position == ref->position ? 1 : 0;
  // Both sides carry exactly three filled slots, so P = R = F1.
  return matches / 3.0;
}

double spice_slot(std::span<const EvalRecord> records) {
  require_nonempty(records, "spice_slot");
  double sum = 0.0;
  for (const auto& r : records) sum += spice_slot_pair(r.candidate, r.reference);
  return sum / static_cast<double>(records.size());
}

bool topk_hit(const TopkCase& c, int k) {
  if (c.gt_index < 0 || c.gt_index >= static_cast<int>(c.a_sig.size())) {
    throw std::invalid_argument("topk: gt index " + std::to_string(c.gt_index) + " out of range");
  }
  const double g = c.a_sig[static_cast<size_t>(c.gt_index)];
  int ahead = 0;
  for (int j = 0; j < static_cast<int>(c.a_sig.size()); ++j) {
    const double v = c.a_sig[static_cast<size_t>(j)];
    if (v > g || (v == g && j < c.gt_index)) ++ahead;
  }
  return ahead < k;
}

double topk_accuracy(std::span<const TopkCase> cases, int k) {
  if (cases.empty()) return 0.0;
  int hits = 0;
  for (const auto& c : cases) hits += topk_hit(c, k) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(cases.size());
}

MetricReport evaluate(std::span<const EvalRecord> records, std::span<const TopkCase> topk_cases) {
  MetricReport rep;
  rep.count = records.size();
  rep.bleu4 = bleu4(records);
  rep.rouge_l = rouge_l(records);
  rep.spice_slot = spice_slot(records);
  const auto per_cider = records.size() >= 2 ? cider_per_record(records) : std::vector<double>(records.size(), 0.0);
  double cider_sum = 0.0;
  int parsed = 0;
  for (size_t i = 0; i < records.size(); ++i) {
    RecordDiagnostics d;
    d.clip_id = records[i].clip_id;
    d.bleu_smoothed = sentence_bleu_smoothed(records[i].candidate, records[i].reference);
    d.rouge_l = rouge_l_pair(records[i].candidate, records[i].reference);
    d.cider = per_cider[i];
    d.spice_slot = spice_slot_pair(records[i].candidate, records[i].reference);
    d.candidate_parses = scene::parse_explanation(normalized(records[i].candidate)).has_value();
    parsed += d.candidate_parses ? 1 : 0;
    cider_sum += d.cider;
    rep.records.push_back(std::move(d));
  }
  rep.cider = cider_sum / static_cast<double>(records.size());
  rep.parse_rate = static_cast<double>(parsed) / static_cast<double>(records.size());
  if (!topk_cases.empty()) {
    rep.top1 = topk_accuracy(topk_cases, 1);
    rep.top3 = topk_accuracy(topk_cases, 3);
  }
  return rep;
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j;
  j["count"] = r.count;
  j["scores"] = {{"bleu4", r.bleu4}, {"rouge_l", r.rouge_l}, {"cider", r.cider}, {"spice_slot", r.spice_slot}};
  j["scores"]["top1"] = r.top1 ? nlohmann::json(*r.top1) : nlohmann::json(nullptr);
  j["scores"]["top3"] = r.top3 ? nlohmann::json(*r.top3) : nlohmann::json(nullptr);
  j["parse_rate"] = r.parse_rate;
  j["variants"] = {
      {"bleu4", "corpus-level BLEU-4, uniform weights, no smoothing, standard brevity penalty; "
                "per-record column is add-one smoothed sentence BLEU"},
      {"rouge_l", "mean ROUGE-L F-measure, beta 1.2"},
      {"cider", "plain CIDEr (no CIDEr-D length penalty or clipping), raw n-gram counts, "
                "idf from the reference corpus, mean cosine over orders 1-4 with a nonzero "
                "reference vector, times 10"},
      {"spice_slot", "SPICE replaced by slot-level F1 over (object, action/status, position) "
                     "parsed from the template grammar; unparseable candidate scores 0"},
      {"topk", "significant-object top-k accuracy, ties toward the lower index"},
      {"tokenization", "lowercase, whitespace split"}};
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& d : r.records) {
    recs.push_back({{"clip_id", d.clip_id},
                    {"bleu_smoothed", d.bleu_smoothed},
                    {"rouge_l", d.rouge_l},
                    {"cider", d.cider},
                    {"spice_slot", d.spice_slot},
                    {"candidate_parses", d.candidate_parses}});
  }
  j["records"] = std::move(recs);
  return j;
}

void write_jsonl(const std::filesystem::path& path, std::span<const EvalRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::json j = {{"clip_id", r.clip_id},
                        {"generated", r.candidate},
                        {"reference", r.reference},
                        {"attention_source", r.attention_source}};
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<EvalRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<EvalRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EvalRecord r;
      r.clip_id = j.at("clip_id").get<std::string>();
      r.candidate = j.at("generated").get<std::string>();
      r.reference = j.at("reference").get<std::string>();
      r.attention_source = j.value("attention_source", std::string());
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace drivex::metrics
