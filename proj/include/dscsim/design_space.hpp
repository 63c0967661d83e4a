#pragma once

// Linear resource model calibrated on one synthesized design point, device
// gating, and throughput-vs-resource Pareto fronts.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "dscsim/error.hpp"
#include "dscsim/memory_sim.hpp"
#include "dscsim/network_model.hpp"
#include "dscsim/scheduler.hpp"

namespace dscsim {

struct DeviceSpec {
  std::string name;
  std::int64_t alms = 0;
  std::int64_t m20k_blocks = 0;
  std::int64_t dsp_blocks = 0;
};

inline void validate(const DeviceSpec& d) {
  if (d.alms <= 0 || d.m20k_blocks <= 0 || d.dsp_blocks <= 0) throw ShapeError("device resources must be positive");
}

inline DeviceSpec arria10_device() { return {"Arria 10 SoC 10AS066N3F40E2SG", 251'680, 2'131, 1'687}; }

// Calibration point: 4 MMEs, 2 x 18,432-bit weight banks, 25,690,112-bit
// feature-map buffer.
struct ResourceModel {
  Rational alm_per_mme{66'127, 4};
  Rational dsp_per_mme{1'278, 4};
  Rational m20k_per_mme{51, 4};
  Rational weight_alm_per_bit{9'317, 36'864};
  std::int64_t feature_map_alms = 1;
  Rational feature_map_m20k_per_bit{1'779, 25'690'112};
  std::int64_t other_alms = 6'308;
  std::int64_t other_dsps = 0;
  std::int64_t other_m20k = 14;
};

struct ResourceRow {
  std::string name;
  std::int64_t alms = 0;
  std::int64_t dsps = 0;
  std::int64_t m20k = 0;
};

struct ResourceEstimate {
  std::vector<ResourceRow> rows;  // MME, weight buffer, feature-map buffer, others
  std::int64_t alms = 0;
  std::int64_t dsps = 0;
  std::int64_t m20k = 0;

  bool fits(const DeviceSpec& d) const { return alms <= d.alms && dsps <= d.dsp_blocks && m20k <= d.m20k_blocks; }
};

inline std::int64_t ceil_rational(const Rational& r) {
  std::int64_t q = r.numerator() / r.denominator();
  if (q * r.denominator() < r.numerator()) ++q;
  return q;
}

inline ResourceEstimate resources_for(const AcceleratorConfig& cfg, const ResourceModel& m = {}) {
  validate(cfg);
  const std::int64_t n = cfg.num_mmes;
  const std::int64_t weight_bits = 2 * cfg.weight_bank_bits;
  ResourceEstimate e;
  e.rows.push_back({"mme", ceil_rational(m.alm_per_mme * n), ceil_rational(m.dsp_per_mme * n),
                    ceil_rational(m.m20k_per_mme * n)});
  e.rows.push_back({"weight_buffer", ceil_rational(m.weight_alm_per_bit * weight_bits), 0, 0});
  e.rows.push_back({"feature_map_buffer", m.feature_map_alms, 0,
                    ceil_rational(m.feature_map_m20k_per_bit * cfg.feature_map_bits)});
  e.rows.push_back({"others", m.other_alms, m.other_dsps, m.other_m20k});
  for (const auto& r : e.rows) {
    e.alms += r.alms;
    e.dsps += r.dsps;
    e.m20k += r.m20k;
  }
  return e;
}

// Names the first device limit exceeded, empty when the estimate fits.
inline std::string resource_violation(const ResourceEstimate& e, const DeviceSpec& d) {
  if (e.dsps > d.dsp_blocks) return "dsp";
  if (e.m20k > d.m20k_blocks) return "m20k";
  if (e.alms > d.alms) return "alm";
  return {};
}

struct ExploreRanges {
  std::vector<int> num_mmes;
  std::vector<std::int64_t> weight_bank_bits;   // 0 = sized for one full pointwise round
  std::vector<std::int64_t> feature_map_bits;
};

struct DesignPoint {
  AcceleratorConfig config;
  ResourceEstimate resources;
  std::optional<PerformanceReport> performance;
  bool feasible = false;
  std::string violation;  // dsp, m20k, alm, memory, bank
};

struct ExploreResult {
  std::vector<DesignPoint> points;
  std::vector<std::size_t> pareto;  // indices into points
};

// p dominates q: at least as fast with no more DSP or M20K, strictly better somewhere.
inline bool dominates(const DesignPoint& p, const DesignPoint& q) {
  const double fp = p.performance ? p.performance->fps : 0.0;
  const double fq = q.performance ? q.performance->fps : 0.0;
  const bool no_worse = fp >= fq && p.resources.dsps <= q.resources.dsps && p.resources.m20k <= q.resources.m20k;
  const bool better = fp > fq || p.resources.dsps < q.resources.dsps || p.resources.m20k < q.resources.m20k;
  return no_worse && better;
}

inline std::vector<std::size_t> pareto_front(const std::vector<DesignPoint>& pts) {
  std::vector<std::size_t> front;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!pts[i].feasible) continue;
    bool dominated = false;
    for (std::size_t j = 0; j < pts.size() && !dominated; ++j)
      dominated = j != i && pts[j].feasible && dominates(pts[j], pts[i]);
    if (!dominated) front.push_back(i);
  }
  return front;
}

inline DesignPoint evaluate_point(const NetworkSpec& net, const DeviceSpec& device, const AcceleratorConfig& cfg,
                                  const ResourceModel& model = {}) {
  DesignPoint p;
  p.config = cfg;
  p.resources = resources_for(cfg, model);
  try {
    p.performance = estimate_network(net, cfg);
  } catch (const InfeasibleError& e) {
    const std::string what = e.what();
    p.violation = what.find("feature maps") != std::string::npos ? "memory" : "bank";
  }
  if (p.violation.empty()) p.violation = resource_violation(p.resources, device);
  p.feasible = p.violation.empty();
  return p;
}

// Enumerates every combination in `ranges`, ordered by (MMEs, bank bits,
// feature-map bits).
inline ExploreResult explore(const NetworkSpec& net, const DeviceSpec& device, const ExploreRanges& ranges,
                             const AcceleratorConfig& base = {}, const ResourceModel& model = {}) {
  validate(device);
  validate_network(net);
  std::vector<AcceleratorConfig> cfgs;
  for (int n : ranges.num_mmes)
    for (std::int64_t bank : ranges.weight_bank_bits)
      for (std::int64_t fm : ranges.feature_map_bits) {
        AcceleratorConfig c = base;
        c.num_mmes = n;
        c.weight_bank_bits = bank > 0 ? bank : full_round_bank_bits(n, c.mme);
        c.feature_map_bits = fm;
        validate(c);
        cfgs.push_back(c);
      }
  std::sort(cfgs.begin(), cfgs.end(), [](const auto& a, const auto& b) {
    return std::tie(a.num_mmes, a.weight_bank_bits, a.feature_map_bits) <
           std::tie(b.num_mmes, b.weight_bank_bits, b.feature_map_bits);
  });
  ExploreResult r;
  for (const auto& c : cfgs) r.points.push_back(evaluate_point(net, device, c, model));
  r.pareto = pareto_front(r.points);
  return r;
}

}  // namespace dscsim
