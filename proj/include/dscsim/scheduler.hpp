#pragma once

// Maps a network onto an array of MMEs: channel tiling, work division,
// sequential layer composition and weight-prefetch stalls.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dscsim/error.hpp"
#include "dscsim/functional.hpp"
#include "dscsim/memory_sim.hpp"
#include "dscsim/mme_sim.hpp"
#include "dscsim/network_model.hpp"

namespace dscsim {

enum class DwcPolicy { ChannelSplit, TimeMultiplex };
enum class PwcPolicy { OutputSplit, InputSplit };

inline const char* to_string(DwcPolicy p) { return p == DwcPolicy::ChannelSplit ? "channel-split" : "time-multiplex"; }
inline const char* to_string(PwcPolicy p) { return p == PwcPolicy::OutputSplit ? "output-split" : "input-split"; }

struct AcceleratorConfig {
  int num_mmes = 4;
  std::int64_t clock_hz = 133'000'000;
  MmeConfig mme;
  std::int64_t weight_bank_bits = 18'432;  // per bank; two banks
  std::int64_t feature_map_bits = 25'690'112;
  ExternalMemoryModel memory;
  DwcPolicy dwc_policy = DwcPolicy::ChannelSplit;
  PwcPolicy pwc_policy = PwcPolicy::OutputSplit;
  bool count_elementwise_ops = false;

  double peak_gops() const { return double(num_mmes) * mme.multipliers() * 2.0 * double(clock_hz) / 1e9; }
};

inline void validate(const AcceleratorConfig& c) {
  if (c.num_mmes < 1) throw ShapeError("num_mmes must be >= 1");
  if (c.clock_hz <= 0) throw ShapeError("clock_hz must be positive");
  if (c.weight_bank_bits <= 0) throw ShapeError("weight bank bits must be positive");
  if (c.feature_map_bits <= 0) throw ShapeError("feature-map buffer bits must be positive");
  validate(c.mme);
  validate(c.memory);
}

// Weight bits of one full pointwise round: every MME holds a 32 x 9 tile.
inline std::int64_t full_round_bank_bits(int num_mmes, const MmeConfig& m) {
  return std::int64_t(num_mmes) * m.slices * m.kernel_side * m.kernel_side * 16;
}

struct ScheduledPass {
  int mme = 0;
  PassSpec pass;
};

// Passes issued together; every MME in a round streams in lockstep.
struct Round {
  std::vector<ScheduledPass> passes;

  std::int64_t duration() const {
    std::int64_t d = 0;
    for (const auto& p : passes) d = std::max(d, p.pass.duration());
    return d;
  }
  std::int64_t warmup() const {
    std::int64_t w = 0;
    for (const auto& p : passes) w = std::max(w, p.pass.warmup());
    return w;
  }
  std::int64_t weight_bits() const {
    std::int64_t b = 0;
    for (const auto& p : passes) b += p.pass.weight_bits();
    return b;
  }
};

struct LayerSchedule {
  std::size_t layer = 0;
  PassKind kind = PassKind::Depthwise;
  PostStages post;
  int drain = 0;
  std::vector<Round> rounds;
  std::optional<std::size_t> fused_pool;  // pool layer executed in this layer's post pipeline
  bool fused_into_previous = false;       // this pool layer has no rounds of its own

  AdderTreeMode mode() const { return tree_mode(kind); }
  int busy_mmes() const {
    std::size_t b = 0;
    for (const auto& r : rounds) b = std::max(b, r.passes.size());
    return int(b);
  }
  std::int64_t passes() const {
    std::int64_t n = 0;
    for (const auto& r : rounds) n += std::int64_t(r.passes.size());
    return n;
  }
  std::int64_t max_round_bits() const {
    std::int64_t b = 0;
    for (const auto& r : rounds) b = std::max(b, r.weight_bits());
    return b;
  }
  // compute and fill, stalls excluded
  CycleReport cycles() const {
    CycleReport c;
    if (fused_into_previous) return c;
    for (const auto& r : rounds) {
      c.warmup_cycles += r.warmup();
      c.compute_cycles += r.duration() - r.warmup();
    }
    c.passes = passes();
    c.drain_cycles = drain;
    c.fill_cycles = c.warmup_cycles + c.drain_cycles;
    return c;
  }
};

inline PassKind pass_kind(LayerKind k) {
  switch (k) {
    case LayerKind::StandardConv: return PassKind::Standard;
    case LayerKind::DepthwiseConv: return PassKind::Depthwise;
    case LayerKind::PointwiseConv: return PassKind::Pointwise;
    default: return PassKind::PassThrough;
  }
}

inline PostStages default_post(const LayerSpec& l, bool fused_pool) {
  if (is_pool(l.kind)) return {false, true};
  return {l.has_batchnorm, l.residual > 0 || fused_pool};
}

// Tiles one layer across the array. `first_layer` gates standard convolution.
inline LayerSchedule schedule_layer(const LayerSpec& l, const AcceleratorConfig& cfg, bool first_layer = true,
                                    std::optional<PostStages> post = std::nullopt) {
  validate(cfg);
  const MmeConfig& m = cfg.mme;
  LayerSchedule s;
  s.kind = pass_kind(l.kind);
  s.post = post ? *post : default_post(l, false);
  s.drain = pipeline_latency(m, s.post);
  const int mm = cfg.num_mmes;
  const int m_in = l.input.height;

  auto base = [&](ChannelTile in, ChannelTile out) {
    PassSpec p;
    p.kind = s.kind;
    p.m_in = m_in;
    p.stride = l.stride;
    p.kernel = is_pool(l.kind) ? 1 : l.kernel;
    p.in = in;
    p.out = out;
    return p;
  };
  // tiles handed out round-robin, `mm` per round
  auto spread = [&](const std::vector<ChannelTile>& tiles, auto make) {
    for (std::size_t r = 0; r < tiles.size(); r += std::size_t(mm)) {
      Round round;
      for (int k = 0; k < mm && r + std::size_t(k) < tiles.size(); ++k)
        round.passes.push_back({k, make(tiles[r + std::size_t(k)])});
      s.rounds.push_back(std::move(round));
    }
  };

  switch (l.kind) {
    case LayerKind::StandardConv: {
      if (!first_layer) throw ShapeError("standard convolution is supported only as the first layer");
      if (l.input.channels != kStandardInputChannels)
        throw ShapeError("standard convolution needs 3 input channels, got " + std::to_string(l.input.channels));
      if (l.kernel > m.kernel_side) throw ShapeError("kernel larger than the multiplier slices");
      const ChannelTile in{0, kStandardInputChannels};
      spread(split_channels(l.output.channels, outputs_per_cycle(AdderTreeMode::StandardSum, m)),
             [&](ChannelTile t) { return base(in, t); });
      break;
    }
    case LayerKind::DepthwiseConv: {
      if (l.kernel > m.kernel_side) throw ShapeError("kernel larger than the multiplier slices");
      const auto groups = split_channels(l.input.channels, m.slices);
      if (cfg.dwc_policy == DwcPolicy::TimeMultiplex) {
        for (const auto& g : groups) s.rounds.push_back(Round{{{0, base(g, g)}}});
      } else {
        spread(groups, [&](ChannelTile t) { return base(t, t); });
      }
      break;
    }
    case LayerKind::PointwiseConv: {
      const auto tiles = split_channels(l.input.channels, m.slices);
      const auto groups = split_channels(l.output.channels, m.kernel_side * m.kernel_side);
      if (cfg.pwc_policy == PwcPolicy::OutputSplit) {
        // output groups across MMEs, all sharing one input tile stream
        for (std::size_t r = 0; r < groups.size(); r += std::size_t(mm))
          for (std::size_t t = 0; t < tiles.size(); ++t) {
            Round round;
            for (int k = 0; k < mm && r + std::size_t(k) < groups.size(); ++k) {
              PassSpec p = base(tiles[t], groups[r + std::size_t(k)]);
              p.finalize = t + 1 == tiles.size();
              round.passes.push_back({k, p});
            }
            s.rounds.push_back(std::move(round));
          }
      } else {
        for (const auto& g : groups)
          for (std::size_t r = 0; r < tiles.size(); r += std::size_t(mm)) {
            Round round;
            for (int k = 0; k < mm && r + std::size_t(k) < tiles.size(); ++k) {
              PassSpec p = base(tiles[r + std::size_t(k)], g);
              p.finalize = r + std::size_t(k) + 1 == tiles.size();
              round.passes.push_back({k, p});
            }
            s.rounds.push_back(std::move(round));
          }
      }
      break;
    }
    case LayerKind::AvgPool:
    case LayerKind::MaxPool:
      if (l.input.width > m.max_line_width) throw ShapeError("feature map wider than the line buffers");
      spread(split_channels(l.input.channels, m.slices), [&](ChannelTile t) { return base(t, t); });
      break;
  }
  for (const auto& r : s.rounds)
    for (const auto& p : r.passes)
      if (p.pass.kind != PassKind::Pointwise && p.pass.kind != PassKind::PassThrough)
        make_line_buffer(m, p.pass.kernel, p.pass.m_in);
  return s;
}

// A pool directly after a conv runs in the conv's post pipeline unless the
// conv output is also needed as a shortcut.
inline std::vector<LayerSchedule> plan_network(const NetworkSpec& net, const AcceleratorConfig& cfg) {
  validate_network(net);
  validate(cfg);
  const std::size_t n = net.layers.size();
  std::vector<bool> is_shortcut(n + 1, false);
  for (std::size_t i = 0; i < n; ++i)
    if (net.layers[i].residual > 0) is_shortcut[i + 1 - std::size_t(net.layers[i].residual)] = true;

  std::vector<LayerSchedule> plan;
  for (std::size_t i = 0; i < n; ++i) {
    const LayerSpec& l = net.layers[i];
    if (is_pool(l.kind) && i > 0 && is_conv(net.layers[i - 1].kind) && !is_shortcut[i]) {
      LayerSchedule fused;
      fused.layer = i;
      fused.kind = PassKind::PassThrough;
      fused.fused_into_previous = true;
      plan.back().fused_pool = i;
      plan.back().post = default_post(net.layers[i - 1], true);
      plan.back().drain = pipeline_latency(cfg.mme, plan.back().post);
      plan.push_back(std::move(fused));
      continue;
    }
    LayerSchedule s = schedule_layer(l, cfg, i == 0);
    s.layer = i;
    plan.push_back(std::move(s));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Performance report.

struct LayerPerf {
  std::size_t layer = 0;
  LayerKind kind = LayerKind::PointwiseConv;
  AdderTreeMode mode = AdderTreeMode::DepthwiseSum;
  bool fused = false;
  int busy_mmes = 0;
  std::int64_t rounds = 0;
  std::int64_t round_weight_bits = 0;  // largest round
  std::int64_t macs = 0;
  CycleReport cycles;

  friend bool operator==(const LayerPerf&, const LayerPerf&) = default;
};

struct PerformanceReport {
  std::string network;
  int num_mmes = 0;
  std::int64_t clock_hz = 0;
  std::int64_t total_cycles = 0;
  std::int64_t compute_cycles = 0;
  std::int64_t fill_cycles = 0;
  std::int64_t stall_cycles = 0;
  std::int64_t preload_cycles = 0;  // before cycle 0, not part of latency
  std::int64_t macs = 0;
  std::int64_t ops_macs = 0;  // MACs counted toward GOPS
  double latency_s = 0;
  double fps = 0;
  double achieved_gops = 0;
  double peak_gops = 0;
  double utilization = 0;
  std::int64_t peak_residency_bits = 0;
  std::int64_t largest_tensor_bits = 0;
  std::vector<LayerPerf> layers;

  friend bool operator==(const PerformanceReport&, const PerformanceReport&) = default;
};

// Fills the derived fields from totals.
inline void finalize(PerformanceReport& r, const AcceleratorConfig& cfg) {
  r.num_mmes = cfg.num_mmes;
  r.clock_hz = cfg.clock_hz;
  r.compute_cycles = r.fill_cycles = r.stall_cycles = 0;
  for (const auto& l : r.layers) {
    r.compute_cycles += l.cycles.compute_cycles;
    r.fill_cycles += l.cycles.fill_cycles;
    r.stall_cycles += l.cycles.stall_cycles;
  }
  r.total_cycles = r.compute_cycles + r.fill_cycles + r.stall_cycles;
  r.peak_gops = cfg.peak_gops();
  if (r.total_cycles > 0) {
    r.latency_s = double(r.total_cycles) / double(r.clock_hz);
    r.fps = 1.0 / r.latency_s;
    r.achieved_gops = 2.0 * double(r.ops_macs) * r.fps / 1e9;
    r.utilization = r.achieved_gops / r.peak_gops;
  }
}

// Transfer cycles of each round's weights, in global round order.
inline std::vector<std::int64_t> round_transfers(const std::vector<LayerSchedule>& plan, const AcceleratorConfig& cfg) {
  std::vector<std::int64_t> x;
  for (const auto& s : plan)
    for (const auto& r : s.rounds) {
      const std::int64_t bits = r.weight_bits();
      if (bits > cfg.weight_bank_bits)
        throw InfeasibleError("layer " + std::to_string(s.layer) + ": weight round of " + std::to_string(bits) +
                              " bits exceeds bank of " + std::to_string(cfg.weight_bank_bits) + " bits");
      x.push_back(transfer_cycles(bits_to_bytes(bits), cfg.clock_hz, cfg.memory));
    }
  return x;
}

inline void require_residency(const NetworkSpec& net, const AcceleratorConfig& cfg, PerformanceReport& r) {
  const ResidencyReport res = feature_map_residency(net, cfg.feature_map_bits);
  r.peak_residency_bits = res.peak_bits;
  r.largest_tensor_bits = res.largest_tensor_bits;
  if (!res.fits())
    throw InfeasibleError("feature maps need " + std::to_string(res.peak_bits) + " bits at layer " +
                          std::to_string(res.peak_layer) + ", buffer holds " + std::to_string(cfg.feature_map_bits));
}

inline std::int64_t input_load_cycles(const NetworkSpec& net, const AcceleratorConfig& cfg) {
  return transfer_cycles(bits_to_bytes(net.input_shape.elements() * 16), cfg.clock_hz, cfg.memory);
}

// Closed-form composition: layers run back to back; round k's weights load
// while round k-1 (and, at a layer end, its drain) runs.
inline PerformanceReport estimate_network(const NetworkSpec& net, const AcceleratorConfig& cfg) {
  const auto plan = plan_network(net, cfg);
  PerformanceReport r;
  r.network = net.name;
  require_residency(net, cfg, r);
  const auto xfer = round_transfers(plan, cfg);
  const CostReport cost = network_cost(net);
  r.macs = cost.total_macs;
  r.ops_macs = cost.total_macs + (cfg.count_elementwise_ops ? cost.total_elementwise : 0);

  std::size_t g = 0;
  std::int64_t prev_window = 0;  // cycles the previous round overlaps the next load
  for (const auto& s : plan) {
    LayerPerf lp;
    lp.layer = s.layer;
    lp.kind = net.layers[s.layer].kind;
    lp.mode = s.mode();
    lp.fused = s.fused_into_previous;
    lp.busy_mmes = s.busy_mmes();
    lp.rounds = std::int64_t(s.rounds.size());
    lp.round_weight_bits = s.max_round_bits();
    lp.macs = cost.layers[s.layer].macs;
    lp.cycles = s.cycles();
    for (std::size_t k = 0; k < s.rounds.size(); ++k, ++g) {
      if (g == 0)
        r.preload_cycles = xfer[0];
      else
        lp.cycles.stall_cycles += std::max<std::int64_t>(0, xfer[g] - prev_window);
      prev_window = s.rounds[k].duration() + (k + 1 == s.rounds.size() ? s.drain : 0);
    }
    r.layers.push_back(lp);
  }
  r.preload_cycles += input_load_cycles(net, cfg);
  finalize(r, cfg);
  return r;
}

}  // namespace dscsim
