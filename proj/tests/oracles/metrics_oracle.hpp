#pragma once

// Deliberately naive metric implementations: n-grams as word vectors,
// linear scans instead of maps, subsequence enumeration for LCS, dense
// TF-IDF vectors and template enumeration for slot parsing.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "drivex/metrics.hpp"
#include "drivex/scene_data.hpp"

namespace drivex::oracle {

using Words = std::vector<std::string>;

inline Words words_of(const std::string& text) {
  std::string lower;
  for (char c : text) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  std::istringstream in(lower);
  Words w;
  std::string s;
  while (in >> s) w.push_back(s);
  return w;
}

inline std::vector<Words> grams_of(const Words& w, int n) {
  std::vector<Words> out;
  for (int i = 0; i + n <= static_cast<int>(w.size()); ++i) out.emplace_back(w.begin() + i, w.begin() + i + n);
  return out;
}

inline int occurrences(const std::vector<Words>& list, const Words& g) {
  return static_cast<int>(std::count(list.begin(), list.end(), g));
}

inline double bleu4(const std::vector<metrics::EvalRecord>& recs) {
  double num[4] = {}, den[4] = {};
  double c_len = 0, r_len = 0;
  for (const auto& r : recs) {
    const Words c = words_of(r.candidate), ref = words_of(r.reference);
    c_len += c.size();
    r_len += ref.size();
    for (int n = 1; n <= 4; ++n) {
      const auto cg = grams_of(c, n), rg = grams_of(ref, n);
      den[n - 1] += cg.size();
      std::vector<Words> seen;
      for (const auto& g : cg) {
        if (occurrences(seen, g)) continue;
        seen.push_back(g);
        num[n - 1] += std::min(occurrences(cg, g), occurrences(rg, g));
      }
    }
  }
  double prod = 1.0;
  for (int n = 0; n < 4; ++n) prod *= den[n] > 0 ? num[n] / den[n] : 0.0;
  if (prod == 0.0) return 0.0;
  const double bp = c_len > r_len ? 1.0 : std::exp(1.0 - r_len / c_len);
  return bp * std::pow(prod, 0.25);
}

inline size_t lcs_brute(const Words& a, const Words& b) {
  size_t best = 0;
  const size_t n = a.size();
  for (unsigned long mask = 0; mask < (1ul << n); ++mask) {
    Words sub;
    for (size_t i = 0; i < n; ++i) {
      if (mask & (1ul << i)) sub.push_back(a[i]);
    }
    if (sub.size() <= best) continue;
    size_t j = 0;
    for (const auto& w : b) {
      if (j < sub.size() && sub[j] == w) ++j;
    }
    if (j == sub.size()) best = sub.size();
  }
  return best;
}

inline double rouge_l(const std::vector<metrics::EvalRecord>& recs) {
  double total = 0;
  for (const auto& r : recs) {
    const Words c = words_of(r.candidate), ref = words_of(r.reference);
    const double l = static_cast<double>(lcs_brute(c, ref));
    if (l == 0) continue;
    const double p = l / c.size(), rc = l / ref.size(), b = 1.2;
    total += (1 + b * b) * p * rc / (rc + b * b * p);
  }
  return total / recs.size();
}

inline std::vector<double> cider_per_record(const std::vector<metrics::EvalRecord>& recs) {
  const double N = static_cast<double>(recs.size());
  std::vector<double> out;
  for (size_t i = 0; i < recs.size(); ++i) {
    double acc = 0;
    int used = 0;
    for (int n = 1; n <= 4; ++n) {
      // Dense axis: every n-gram in this pair.
      const auto cg = grams_of(words_of(recs[i].candidate), n);
      const auto rg = grams_of(words_of(recs[i].reference), n);
      std::vector<Words> axis;
      for (const auto* list : {&cg, &rg}) {
        for (const auto& g : *list) {
          if (!occurrences(axis, g)) axis.push_back(g);
        }
      }
      std::vector<double> vc, vr;
      for (const auto& g : axis) {
        int df = 0;
        for (const auto& other : recs) df += occurrences(grams_of(words_of(other.reference), n), g) > 0 ? 1 : 0;
        const double idf = std::log(N / std::max(1, df));
        vc.push_back(occurrences(cg, g) * idf);
        vr.push_back(occurrences(rg, g) * idf);
      }
      double dot = 0, nc = 0, nr = 0;
      for (size_t k = 0; k < axis.size(); ++k) {
        dot += vc[k] * vr[k];
        nc += vc[k] * vc[k];
        nr += vr[k] * vr[k];
      }
      if (nr == 0) continue;
      ++used;
      if (nc > 0) acc += dot / std::sqrt(nc * nr);
    }
    out.push_back(used ? 10.0 * acc / used : 0.0);
  }
  return out;
}

inline double cider(const std::vector<metrics::EvalRecord>& recs) {
  double s = 0;
  for (double v : cider_per_record(recs)) s += v;
  return s / recs.size();
}

struct Slots {
  std::string object, status, position;
};

/// Matches the text against every string the template can produce.
inline std::optional<Slots> template_lookup(const std::string& text) {
  const Words w = words_of(text);
  for (auto o : scene::kObjectNames) {
    for (auto s : scene::kStatusPhrases) {
      for (auto p : scene::kPositionPhrases) {
        const std::string t = std::string(o) + " " + std::string(s) + " " + std::string(p);
        if (words_of(t) == w) return Slots{std::string(o), std::string(s), std::string(p)};
      }
    }
  }
  return std::nullopt;
}

inline double spice_slot(const std::vector<metrics::EvalRecord>& recs) {
  double total = 0;
  for (const auto& r : recs) {
    const auto ref = template_lookup(r.reference);
    if (!ref) throw std::invalid_argument("reference outside grammar");
    const auto c = template_lookup(r.candidate);
    if (!c) continue;
    const double m = (c->object == ref->object) + (c->status == ref->status) + (c->position == ref->position);
    const double p = m / 3.0, rc = m / 3.0;
    total += m == 0 ? 0.0 : 2 * p * rc / (p + rc);
  }
  return total / recs.size();
}

inline double topk(const std::vector<metrics::TopkCase>& cases, int k) {
  int hits = 0;
  for (const auto& c : cases) {
    std::vector<int> order(c.a_sig.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return c.a_sig[a] > c.a_sig[b]; });
    for (int r = 0; r < k && r < static_cast<int>(order.size()); ++r) {
      if (order[r] == c.gt_index) ++hits;
    }
  }
  return cases.empty() ? 0.0 : static_cast<double>(hits) / cases.size();
}

}  // namespace drivex::oracle
