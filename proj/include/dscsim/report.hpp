#pragma once

// Text and CSV renderings of cost, performance and exploration results.
// Field names are listed in docs/formats.md.

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <string>

#include "dscsim/design_space.hpp"
#include "dscsim/network_model.hpp"
#include "dscsim/scheduler.hpp"

namespace dscsim {

// Round-trip decimal form, locale independent.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt(const Rational& r) {
  return std::to_string(r.numerator()) + "/" + std::to_string(r.denominator());
}

inline void write_cost_report(std::ostream& out, const NetworkSpec& net, const CostReport& c) {
  out << "network = " << net.name << "\nlayers = " << net.layers.size() << "\ntotal_weights = " << c.total_weights
      << "\ntotal_macs = " << c.total_macs << "\ntotal_ops = " << c.total_ops()
      << "\ntotal_elementwise = " << c.total_elementwise << "\n\n";
  out << "# layer,kind,kernel,stride,input,output,weights,macs,ops\n";
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    out << i << "," << to_string(l.kind) << "," << l.kernel << "," << l.stride << "," << to_string(l.input) << ","
        << to_string(l.output) << "," << c.layers[i].weights << "," << c.layers[i].macs << ","
        << 2 * c.layers[i].macs << "\n";
  }
  out << "\n# depthwise_layer,pointwise_layer,weight_factor,op_factor,weight_factor_decimal\n";
  for (const auto& p : c.dsc_pairs)
    out << p.depthwise_layer << "," << p.pointwise_layer << "," << fmt(p.weight_factor) << "," << fmt(p.op_factor)
        << "," << fmt(boost::rational_cast<double>(p.weight_factor)) << "\n";
}

inline void write_layer_csv(std::ostream& out, const PerformanceReport& r) {
  out << "layer,kind,mode,fused,busy_mmes,rounds,round_weight_bits,macs,compute_cycles,fill_cycles,stall_cycles,"
         "warmup_cycles,drain_cycles,total_cycles\n";
  for (const auto& l : r.layers)
    out << l.layer << "," << to_string(l.kind) << "," << to_string(l.mode) << "," << (l.fused ? 1 : 0) << ","
        << l.busy_mmes << "," << l.rounds << "," << l.round_weight_bits << "," << l.macs << ","
        << l.cycles.compute_cycles << "," << l.cycles.fill_cycles << "," << l.cycles.stall_cycles << ","
        << l.cycles.warmup_cycles << "," << l.cycles.drain_cycles << "," << l.cycles.total() << "\n";
}

inline void write_performance_report(std::ostream& out, const PerformanceReport& r) {
  out << "network = " << r.network << "\nnum_mmes = " << r.num_mmes << "\nclock_hz = " << r.clock_hz
      << "\ntotal_cycles = " << r.total_cycles << "\ncompute_cycles = " << r.compute_cycles
      << "\nfill_cycles = " << r.fill_cycles << "\nstall_cycles = " << r.stall_cycles
      << "\npreload_cycles = " << r.preload_cycles << "\nlatency_ms = " << fmt(r.latency_s * 1e3)
      << "\nfps = " << fmt(r.fps) << "\nmacs = " << r.macs << "\nops_macs = " << r.ops_macs
      << "\nachieved_gops = " << fmt(r.achieved_gops) << "\npeak_gops = " << fmt(r.peak_gops)
      << "\nutilization = " << fmt(r.utilization) << "\npeak_residency_bits = " << r.peak_residency_bits
      << "\nlargest_tensor_bits = " << r.largest_tensor_bits << "\n\n";
  write_layer_csv(out, r);
}

inline void write_explore_csv(std::ostream& out, const ExploreResult& e) {
  out << "num_mmes,weight_bank_bits,feature_map_bits,alms,dsps,m20k,feasible,violation,fps,latency_ms,"
         "achieved_gops,utilization,pareto\n";
  for (std::size_t i = 0; i < e.points.size(); ++i) {
    const auto& p = e.points[i];
    const bool front = std::find(e.pareto.begin(), e.pareto.end(), i) != e.pareto.end();
    out << p.config.num_mmes << "," << p.config.weight_bank_bits << "," << p.config.feature_map_bits << ","
        << p.resources.alms << "," << p.resources.dsps << "," << p.resources.m20k << "," << (p.feasible ? 1 : 0) << ","
        << (p.violation.empty() ? "-" : p.violation) << ",";
    if (p.performance)
      out << fmt(p.performance->fps) << "," << fmt(p.performance->latency_s * 1e3) << ","
          << fmt(p.performance->achieved_gops) << "," << fmt(p.performance->utilization);
    else
      out << "-,-,-,-";
    out << "," << (front ? 1 : 0) << "\n";
  }
}

inline void write_pareto_summary(std::ostream& out, const ExploreResult& e) {
  out << "points = " << e.points.size() << "\npareto_points = " << e.pareto.size() << "\n";
  for (std::size_t k = 0; k < e.pareto.size(); ++k) {
    const auto& p = e.points[e.pareto[k]];
    out << "pareto." << k << " = num_mmes=" << p.config.num_mmes << " weight_bank_bits=" << p.config.weight_bank_bits
        << " feature_map_bits=" << p.config.feature_map_bits << " fps=" << fmt(p.performance->fps)
        << " dsps=" << p.resources.dsps << " m20k=" << p.resources.m20k << "\n";
  }
}

inline void write_resources(std::ostream& out, const ResourceEstimate& r) {
  out << "# component,alms,dsps,m20k\n";
  for (const auto& row : r.rows) out << row.name << "," << row.alms << "," << row.dsps << "," << row.m20k << "\n";
  out << "total," << r.alms << "," << r.dsps << "," << r.m20k << "\n";
}

}  // namespace dscsim
