#pragma once

// Lockstep co-simulation of the MME array, the ping-pong weight buffer and
// the feature-map buffer. Produces the network output (when weights are
// given) and an event-counted PerformanceReport.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "dscsim/error.hpp"
#include "dscsim/fixedpoint.hpp"
#include "dscsim/memory_sim.hpp"
#include "dscsim/mme_sim.hpp"
#include "dscsim/scheduler.hpp"
#include "dscsim/tensor.hpp"
#include "dscsim/weights.hpp"

namespace dscsim {

struct SimOptions {
  bool keep_activations = false;
  bool keep_trace = true;
};

struct SimResult {
  std::optional<QTensor> output;
  std::vector<QTensor> activations;  // per layer, when kept and data given
  PerformanceReport report;
  std::vector<BankEvent> trace;
  std::vector<std::int64_t> layer_useful_macs;  // summed over MMEs
  std::int64_t peak_multipliers_per_cycle = 0;   // any single MME
  SaturationCounter saturations;
};

namespace detail {

// Pooling window accumulator fed in raster order per channel.
class PoolStage {
 public:
  PoolStage(const LayerSpec& pool, QParams params) : l_(pool), out_(pool.output, params) {
    acc_.assign(out_.data.size(), pool.kind == LayerKind::MaxPool ? std::numeric_limits<std::int64_t>::min() : 0);
  }

  void push(int c, int y, int x, q16 v) {
    const int w = l_.kernel, s = l_.stride;
    const int oh = l_.output.height, ow = l_.output.width;
    // windows oy with oy*s <= y <= oy*s + w - 1
    const int oy_lo = std::max(0, (y - w + s) / s), oy_hi = std::min(oh - 1, y / s);
    const int ox_lo = std::max(0, (x - w + s) / s), ox_hi = std::min(ow - 1, x / s);
    for (int oy = oy_lo; oy <= oy_hi; ++oy) {
      if (y < oy * s || y > oy * s + w - 1) continue;
      for (int ox = ox_lo; ox <= ox_hi; ++ox) {
        if (x < ox * s || x > ox * s + w - 1) continue;
        const std::size_t i = out_.index(c, oy, ox);
        if (l_.kind == LayerKind::MaxPool)
          acc_[i] = std::max<std::int64_t>(acc_[i], v);
        else
          acc_[i] += v;
        if (y == oy * s + w - 1 && x == ox * s + w - 1)
          out_.data[i] = l_.kind == LayerKind::MaxPool ? static_cast<q16>(acc_[i])
                                                       : average_from_sum(acc_[i], std::int64_t(w) * w);
      }
    }
  }

  QTensor take() { return std::move(out_); }

 private:
  LayerSpec l_;
  QTensor out_;
  std::vector<std::int64_t> acc_;
};

// Norm / requantize / ReLU / residual / pool for one layer's results.
class PostProcessor {
 public:
  PostProcessor(const LayerSpec& l, const LayerWeights* lw, const QTensor* input, const QTensor* shortcut,
                const LayerSpec* fused_pool, SaturationCounter* sat)
      : l_(l), lw_(lw), shortcut_(shortcut), sat_(sat) {
    const QParams out_params = is_pool(l.kind) ? input->params : lw->output;
    if (is_conv(l.kind)) {
      acc_frac_ = input->params.frac_bits + lw->weights->params.frac_bits;
      if (l.kind == LayerKind::PointwiseConv) partial_.assign(std::size_t(l.output.elements()), 0);
    }
    if (is_pool(l.kind))
      pool_.emplace(l, out_params);
    else if (fused_pool)
      pool_.emplace(*fused_pool, out_params);
    else
      out_ = QTensor(l.output, out_params);
  }

  void accumulate(const PipelineEntry& e) { partial_[index(e)] += e.value; }

  void finalize(const PipelineEntry& e) {
    q16 v;
    if (is_pool(l_.kind)) {
      v = static_cast<q16>(e.value);
    } else {
      std::int64_t acc = e.value;
      if (!partial_.empty()) acc += partial_[index(e)];
      const QuantizedNorm* norm = lw_->norm ? &*lw_->norm : nullptr;
      v = finish_accumulator(acc, acc_frac_, norm, std::size_t(e.channel), lw_->output.frac_bits, sat_);
      v = relu_fixed(v, l_.relu, lw_->output);
      if (shortcut_)
        v = residual_add(v, shortcut_->at(e.channel, e.y, e.x), shortcut_->params.frac_bits, lw_->output.frac_bits,
                         sat_);
    }
    if (pool_)
      pool_->push(e.channel, e.y, e.x, v);
    else
      out_.at(e.channel, e.y, e.x) = v;
  }

  QTensor take() { return pool_ ? pool_->take() : std::move(out_); }

 private:
  std::size_t index(const PipelineEntry& e) const {
    return (std::size_t(e.channel) * l_.output.height + std::size_t(e.y)) * l_.output.width + std::size_t(e.x);
  }

  const LayerSpec& l_;
  const LayerWeights* lw_;
  const QTensor* shortcut_;
  SaturationCounter* sat_;
  int acc_frac_ = 0;
  std::vector<std::int64_t> partial_;
  std::optional<PoolStage> pool_;
  QTensor out_;
};

}  // namespace detail

// Cycle-stepped run. With `weights` and `input` null only timing is simulated.
inline SimResult simulate_network(const NetworkSpec& net, const AcceleratorConfig& cfg, const NetworkWeights* weights,
                                  const QTensor* input, SimOptions opt = {}) {
  const auto plan = plan_network(net, cfg);
  const bool data = weights && input;
  if (data) {
    validate_weights(net, *weights);
    if (!(input->shape == net.input_shape)) throw ShapeError("input shape does not match network input");
  }

  SimResult res;
  PerformanceReport& rep = res.report;
  rep.network = net.name;
  require_residency(net, cfg, rep);
  const CostReport cost = network_cost(net);
  rep.macs = cost.total_macs;
  rep.ops_macs = cost.total_macs + (cfg.count_elementwise_ops ? cost.total_elementwise : 0);

  const std::size_t n = net.layers.size();
  // feature-map buffer contents with shortcut lifetimes
  std::vector<std::optional<QTensor>> acts(n + 1);
  std::vector<std::size_t> last_use(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    last_use[i] = std::max(last_use[i], i);
    if (net.layers[i].residual > 0)
      last_use[i + 1 - std::size_t(net.layers[i].residual)] =
          std::max(last_use[i + 1 - std::size_t(net.layers[i].residual)], i);
  }
  if (data) acts[0] = *input;

  std::vector<Mme> mmes(std::size_t(cfg.num_mmes), Mme(cfg.mme));
  PingPongBuffer banks(cfg.weight_bank_bits);

  // flatten rounds to know the next load at every round start
  struct RoundRef {
    std::size_t plan_index, round;
    std::int64_t bits;
  };
  std::vector<RoundRef> order;
  for (std::size_t p = 0; p < plan.size(); ++p)
    for (std::size_t k = 0; k < plan[p].rounds.size(); ++k) order.push_back({p, k, plan[p].rounds[k].weight_bits()});
  for (const auto& o : order)
    if (o.bits > cfg.weight_bank_bits)
      throw InfeasibleError("layer " + std::to_string(plan[o.plan_index].layer) + ": weight round of " +
                            std::to_string(o.bits) + " bits exceeds bank of " + std::to_string(cfg.weight_bank_bits) +
                            " bits");

  std::int64_t clock = 0;
  std::vector<std::int64_t> load_done(order.size(), 0);
  if (!order.empty()) {
    // first round is preloaded before cycle 0
    banks.begin_load(0, order[0].bits, 0);
    banks.finish_load(0, 0);
    rep.preload_cycles = transfer_cycles(bits_to_bytes(order[0].bits), cfg.clock_hz, cfg.memory);
  }
  rep.preload_cycles += input_load_cycles(net, cfg);
  std::optional<std::size_t> pending_load;  // global round whose load is in flight

  std::vector<PipelineEntry> exiting;
  std::size_t g = 0;
  res.layer_useful_macs.assign(n, 0);

  for (std::size_t p = 0; p < plan.size(); ++p) {
    const LayerSchedule& s = plan[p];
    const LayerSpec& l = net.layers[s.layer];
    LayerPerf lp;
    lp.layer = s.layer;
    lp.kind = l.kind;
    lp.mode = s.mode();
    lp.fused = s.fused_into_previous;
    lp.busy_mmes = s.busy_mmes();
    lp.rounds = std::int64_t(s.rounds.size());
    lp.round_weight_bits = s.max_round_bits();
    lp.macs = cost.layers[s.layer].macs;
    if (s.fused_into_previous) {
      rep.layers.push_back(lp);
      continue;
    }

    std::vector<std::int64_t> macs_before;
    for (const auto& m : mmes) macs_before.push_back(m.useful_macs());
    for (auto& m : mmes) m.configure_layer(s.drain);

    const LayerWeights* lw = data ? &weights->layers[s.layer] : nullptr;
    const QTensor* in = data ? &*acts[s.layer] : nullptr;
    const QTensor* shortcut = data && l.residual > 0 ? &*acts[s.layer + 1 - std::size_t(l.residual)] : nullptr;
    const LayerSpec* fused = s.fused_pool ? &net.layers[*s.fused_pool] : nullptr;
    std::optional<detail::PostProcessor> post;
    if (data) post.emplace(l, lw, in, shortcut, fused, &res.saturations);
    PassOperands ops;
    if (data) {
      ops.input = in;
      if (lw->weights) ops.weights = &*lw->weights;
      if (lw->bias) ops.bias = &*lw->bias;
    }

    auto tick = [&]() -> MmePhase {
      exiting.clear();
      MmePhase phase = MmePhase::Idle;
      for (auto& m : mmes) {
        const MmePhase ph = m.step(exiting);
        if (phase == MmePhase::Idle) phase = ph;
      }
      if (post) {
        for (const auto& e : exiting)
          if (!e.finalize) post->accumulate(e);
        for (const auto& e : exiting)
          if (e.finalize) post->finalize(e);
      }
      ++clock;
      return phase;
    };
    auto complete_load = [&]() {
      if (pending_load && load_done[*pending_load] <= clock) {
        banks.finish_load(int(*pending_load % 2), load_done[*pending_load]);
        pending_load.reset();
      }
    };

    for (std::size_t k = 0; k < s.rounds.size(); ++k, ++g) {
      // wait for this round's weights
      while (true) {
        complete_load();
        if (!pending_load || *pending_load != g) break;
        tick();
        ++lp.cycles.stall_cycles;
      }
      const int bank = int(g % 2);
      banks.begin_drain(bank, clock);
      if (g + 1 < order.size()) {
        const std::int64_t x = transfer_cycles(bits_to_bytes(order[g + 1].bits), cfg.clock_hz, cfg.memory);
        banks.begin_load(int((g + 1) % 2), order[g + 1].bits, clock);
        load_done[g + 1] = clock + x;
        pending_load = g + 1;
      }
      for (const auto& sp : s.rounds[k].passes) mmes[std::size_t(sp.mme)].start_pass(sp.pass, data ? &ops : nullptr);
      for (bool busy = true; busy;) {
        complete_load();
        const MmePhase ph = tick();
        if (ph == MmePhase::Warmup)
          ++lp.cycles.warmup_cycles;
        else
          ++lp.cycles.compute_cycles;
        busy = std::any_of(mmes.begin(), mmes.end(), [](const Mme& m) { return m.busy(); });
      }
      banks.finish_drain(bank, clock);
      lp.cycles.passes += std::int64_t(s.rounds[k].passes.size());
    }
    // flush the post pipeline
    while (!std::all_of(mmes.begin(), mmes.end(), [](const Mme& m) { return m.pipeline_empty(); }) ||
           lp.cycles.drain_cycles < s.drain) {
      complete_load();
      tick();
      ++lp.cycles.drain_cycles;
    }
    lp.cycles.fill_cycles = lp.cycles.warmup_cycles + lp.cycles.drain_cycles;

    for (std::size_t m = 0; m < mmes.size(); ++m) {
      res.layer_useful_macs[s.layer] += mmes[m].useful_macs() - macs_before[m];
      res.peak_multipliers_per_cycle = std::max(res.peak_multipliers_per_cycle, mmes[m].peak_multipliers_per_cycle());
    }
    rep.layers.push_back(lp);

    if (data) {
      const std::size_t out_act = (s.fused_pool ? *s.fused_pool : s.layer) + 1;
      acts[out_act] = post->take();
      post.reset();
      if (opt.keep_activations) {
        if (s.fused_pool) res.activations.push_back(QTensor{});  // conv output never materialized
        res.activations.push_back(*acts[out_act]);
      }
      for (std::size_t j = 0; j < out_act; ++j)
        if (acts[j] && last_use[j] < out_act) acts[j].reset();
    }
  }
  finalize(rep, cfg);
  if (data) res.output = std::move(acts[n]);
  if (opt.keep_trace) res.trace = banks.trace();
  return res;
}

inline SimResult simulate_network(const NetworkSpec& net, const NetworkWeights& weights, const QTensor& input,
                                  const AcceleratorConfig& cfg, SimOptions opt = {}) {
  return simulate_network(net, cfg, &weights, &input, opt);
}

inline PerformanceReport simulate_timing(const NetworkSpec& net, const AcceleratorConfig& cfg) {
  return simulate_network(net, cfg, nullptr, nullptr, {false, false}).report;
}

struct LayerSimResult {
  QTensor output;
  CycleReport cycles;
};

// One layer on its own (standard convolution only as a first layer, which a
// single-layer network always is).
inline LayerSimResult simulate_layer(const LayerSpec& layer, const LayerWeights& lw, const QTensor& input,
                                     const AcceleratorConfig& cfg) {
  if (layer.residual > 0) throw ShapeError("simulate_layer: residual layers need the network context");
  NetworkSpec net{"layer", layer.input, {layer}};
  NetworkWeights w{{lw}};
  SimResult r = simulate_network(net, cfg, &w, &input, {false, false});
  return {std::move(*r.output), r.report.layers[0].cycles};
}

}  // namespace dscsim
