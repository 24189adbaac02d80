#pragma once

// Piecewise-linear contact bias waveform with optional periodic extension.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "gld/errors.hpp"

namespace gld {

struct BiasSignal {
  std::vector<std::pair<double, double>> breakpoints;  // (time s, volts), strictly increasing times
  bool periodic = true;

  double period() const { return breakpoints.back().first - breakpoints.front().first; }

  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (breakpoints.size() < 2) {
      out.push_back("signal needs at least two breakpoints");
      return out;
    }
    for (std::size_t i = 1; i < breakpoints.size(); ++i)
      if (!(breakpoints[i].first > breakpoints[i - 1].first))
        out.push_back("signal breakpoint times must be strictly increasing");
    for (const auto& [t, v] : breakpoints)
      if (!std::isfinite(t) || !std::isfinite(v)) out.push_back("signal breakpoints must be finite");
    if (periodic && std::abs(breakpoints.front().second - breakpoints.back().second) > 1e-12)
      out.push_back("periodic signal must end at its starting value");
    return out;
  }
};

/// Triangle wave 0 -> +100 V (20 ns) -> -100 V (60 ns) -> 0 (80 ns), repeated.
inline BiasSignal triangle_signal() {
  return {{{0.0, 0.0}, {20e-9, 100.0}, {60e-9, -100.0}, {80e-9, 0.0}}, true};
}

inline double bias_at(const BiasSignal& s, double t) {
  const auto& bp = s.breakpoints;
  if (bp.empty()) return 0.0;
  if (s.periodic && bp.size() >= 2) {
    const double t0 = bp.front().first, p = s.period();
    t = t0 + std::fmod(t - t0, p);
    if (t < t0) t += p;
  }
  if (t <= bp.front().first) return bp.front().second;
  if (t >= bp.back().first) return bp.back().second;
  std::size_t i = 1;
  while (bp[i].first < t) ++i;
  const auto [ta, va] = bp[i - 1];
  const auto [tb, vb] = bp[i];
  return va + (vb - va) * (t - ta) / (tb - ta);
}

}  // namespace gld
