#pragma once

// Monte-Carlo estimate of the ego-action marginal implied by the scene
// sampling distribution and the rule table. Only object placement is
// simulated; nothing is rendered.

#include <array>
#include <cmath>
#include <random>

#include "drivex/scene_data.hpp"

namespace drivex::oracle {

inline std::array<double, scene::kNumActions> action_marginal_mc(const scene::SceneSpec& spec,
                                                                 int samples, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::array<double, scene::kNumActions> counts{};
  int accepted = 0;
  while (accepted < samples) {
    const int n = spec.min_objects +
                  static_cast<int>(unit(rng) * (spec.max_objects - spec.min_objects + 1));
    struct P {
      int kind;
      double cx, cy, w, h;
    };
    std::vector<P> objs;
    bool ok = true;
    for (int i = 0; i < n; ++i) {
      const int kind = static_cast<int>(unit(rng) * scene::kNumKinds);
      const auto size = scene::glyph_size(static_cast<scene::ObjectKind>(kind));
      const double w = size[0], h = size[1];
      P p{kind, w / 2 + 1 + unit(rng) * (spec.width - w - 2),
          0.3 * spec.height + unit(rng) * (0.7 * spec.height - h / 2 - 1), w, h};
      for (const auto& q : objs) {
        const bool apart = std::abs(p.cx - q.cx) >= (p.w + q.w) / 2 + 2 ||
                           std::abs(p.cy - q.cy) >= (p.h + q.h) / 2 + 2;
        ok = ok && apart;
      }
      objs.push_back(p);
    }
    if (!ok) continue;
    int best = 0;
    std::vector<double> d;
    for (const auto& p : objs) d.push_back(std::hypot(p.cx - spec.width / 2.0, p.cy - spec.height));
    for (int i = 1; i < n; ++i) {
      if (d[static_cast<size_t>(i)] < d[static_cast<size_t>(best)]) best = i;
    }
    for (int i = 0; i < n; ++i) {
      if (i != best && d[static_cast<size_t>(i)] - d[static_cast<size_t>(best)] < spec.significance_margin) ok = false;
    }
    if (!ok) continue;
    const auto& s = objs[static_cast<size_t>(best)];
    const int third = s.cx < spec.width / 3.0 ? 0 : (s.cx < 2.0 * spec.width / 3.0 ? 1 : 2);
    const auto a = scene::action_rule(static_cast<scene::ObjectKind>(s.kind),
                                      static_cast<scene::Position>(third));
    counts[static_cast<size_t>(a)] += 1;
    ++accepted;
  }
  for (auto& c : counts) c /= samples;
  return counts;
}

}  // namespace drivex::oracle
