#pragma once

// Matrix Multiplication Engine: 32 line-buffer slices feeding 32 slices of
// 3x3 multipliers, one configurable adder tree, then Norm / ReLU / pooling
// stages. This header has the closed-form cycle model and the cycle-stepped
// engine used for co-simulation.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "dscsim/error.hpp"
#include "dscsim/fixedpoint.hpp"
#include "dscsim/functional.hpp"
#include "dscsim/network_model.hpp"
#include "dscsim/tensor.hpp"

namespace dscsim {

struct MmeConfig {
  int slices = 32;
  int kernel_side = 3;
  int max_line_width = 224;  // widest feature map the line buffers hold

  // pipeline stage latencies, cycles
  int multiplier_latency = 1;
  int adder_tree_latency = 9;
  int norm_latency = 2;
  int requant_latency = 1;  // requantization and activation clamp
  int post_op_latency = 1;  // residual add or pooling

  int multipliers() const { return slices * kernel_side * kernel_side; }
};

inline void validate(const MmeConfig& c) {
  if (c.slices < 3 || c.kernel_side < 1 || c.max_line_width < 1)
    throw ShapeError("MME config needs >= 3 slices, kernel side >= 1 and a positive line width");
  if (c.multiplier_latency < 0 || c.adder_tree_latency < 0 || c.norm_latency < 0 || c.requant_latency < 0 ||
      c.post_op_latency < 0)
    throw ShapeError("MME pipeline latencies must be non-negative");
}

enum class AdderTreeMode { DepthwiseSum, PointwiseSum, StandardSum };

inline const char* to_string(AdderTreeMode m) {
  switch (m) {
    case AdderTreeMode::DepthwiseSum: return "depthwise";
    case AdderTreeMode::PointwiseSum: return "pointwise";
    case AdderTreeMode::StandardSum: return "standard";
  }
  return "?";
}

// Standard convolution needs this many input channels: one slice each, so
// slices are grouped in threes per output channel.
inline constexpr int kStandardInputChannels = 3;

inline int outputs_per_cycle(AdderTreeMode mode, const MmeConfig& c) {
  switch (mode) {
    case AdderTreeMode::DepthwiseSum: return c.slices;
    case AdderTreeMode::PointwiseSum: return c.kernel_side * c.kernel_side;
    case AdderTreeMode::StandardSum: return c.slices / kStandardInputChannels;
  }
  return 0;
}

inline std::int64_t line_buffer_length(std::int64_t k, std::int64_t m) {
  if (k < 1 || m < 1) throw ShapeError("line_buffer_length: K and M must be >= 1");
  return (k - 1) * m + k;
}

struct LineBufferModel {
  int configured_m = 0;
  int kernel = 0;
  std::int64_t implemented_length = 0;  // sized for the widest supported map

  std::int64_t working_length() const { return line_buffer_length(kernel, configured_m); }
};

inline LineBufferModel make_line_buffer(const MmeConfig& c, int kernel, int m) {
  LineBufferModel lb{m, kernel, line_buffer_length(c.kernel_side, c.max_line_width)};
  if (kernel > c.kernel_side) throw ShapeError("kernel larger than the multiplier slices");
  if (m > c.max_line_width) throw ShapeError("feature map wider than the line buffers");
  return lb;
}

// Stages enabled after the adder tree for one layer.
struct PostStages {
  bool norm = false;
  bool post_op = false;  // residual add and/or fused pooling
};

inline int pipeline_latency(const MmeConfig& c, PostStages post) {
  return c.multiplier_latency + c.adder_tree_latency + (post.norm ? c.norm_latency : 0) + c.requant_latency +
         (post.post_op ? c.post_op_latency : 0);
}

struct CycleReport {
  std::int64_t compute_cycles = 0;  // streaming slots
  std::int64_t fill_cycles = 0;     // line-buffer warm-up plus pipeline drain
  std::int64_t stall_cycles = 0;    // waiting on weights
  std::int64_t passes = 0;
  std::int64_t warmup_cycles = 0;
  std::int64_t drain_cycles = 0;

  std::int64_t total() const { return compute_cycles + fill_cycles + stall_cycles; }
  friend bool operator==(const CycleReport&, const CycleReport&) = default;
};

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

// One MME, depthwise mode: channel groups of `slices`, each streaming the
// full input (`m_stream` = input side) through the line buffers.
inline CycleReport cycles_depthwise(std::int64_t m_stream, std::int64_t channels, const MmeConfig& cfg,
                                    PostStages post = {}, int kernel = 3) {
  if (channels < 1) throw ShapeError("cycles_depthwise: channels must be >= 1");
  if (m_stream < 1) throw ShapeError("cycles_depthwise: M must be >= 1");
  CycleReport r;
  r.passes = ceil_div(channels, cfg.slices);
  r.compute_cycles = r.passes * m_stream * m_stream;
  r.warmup_cycles = r.passes * (line_buffer_length(kernel, m_stream) - 1);
  r.drain_cycles = pipeline_latency(cfg, post);
  r.fill_cycles = r.warmup_cycles + r.drain_cycles;
  return r;
}

// One MME, pointwise mode: ceil(N/32) input tiles x ceil(P/9) output groups,
// each pass streaming M^2 pixels. No line-buffer warm-up (K = 1).
inline CycleReport cycles_pointwise(std::int64_t m, std::int64_t n, std::int64_t p, const MmeConfig& cfg,
                                    PostStages post = {}) {
  if (n < 1 || p < 1 || m < 1) throw ShapeError("cycles_pointwise: M, N and P must be >= 1");
  CycleReport r;
  r.passes = ceil_div(n, cfg.slices) * ceil_div(p, cfg.kernel_side * cfg.kernel_side);
  r.compute_cycles = r.passes * m * m;
  r.drain_cycles = pipeline_latency(cfg, post);
  r.fill_cycles = r.drain_cycles;
  return r;
}

// One MME, standard mode for the 3-channel first layer: floor(32/3) = 10
// output channels per pass.
inline CycleReport cycles_standard_first_layer(std::int64_t m_stream, std::int64_t n_in, std::int64_t p,
                                               const MmeConfig& cfg, PostStages post = {}, int kernel = 3) {
  if (n_in != kStandardInputChannels)
    throw ShapeError("standard convolution is supported only for 3 input channels, got " + std::to_string(n_in));
  if (p < 1 || m_stream < 1) throw ShapeError("cycles_standard_first_layer: M and P must be >= 1");
  CycleReport r;
  r.passes = ceil_div(p, outputs_per_cycle(AdderTreeMode::StandardSum, cfg));
  r.compute_cycles = r.passes * m_stream * m_stream;
  r.warmup_cycles = r.passes * (line_buffer_length(kernel, m_stream) - 1);
  r.drain_cycles = pipeline_latency(cfg, post);
  r.fill_cycles = r.warmup_cycles + r.drain_cycles;
  return r;
}

// ---------------------------------------------------------------------------
// Cycle-stepped engine.

enum class PassKind { Standard, Depthwise, Pointwise, PassThrough };

inline AdderTreeMode tree_mode(PassKind k) {
  switch (k) {
    case PassKind::Standard: return AdderTreeMode::StandardSum;
    case PassKind::Pointwise: return AdderTreeMode::PointwiseSum;
    default: return AdderTreeMode::DepthwiseSum;
  }
}

// One streamed pass of a layer through a single MME.
struct PassSpec {
  PassKind kind = PassKind::Depthwise;
  int m_in = 1;    // input side
  int stride = 1;
  int kernel = 1;
  ChannelTile in;   // input channels (depthwise / pass-through: same as out)
  ChannelTile out;  // output channels produced
  bool finalize = true;  // pointwise: last contribution to these outputs

  int m_out() const { return conv_output_side(m_in, stride); }
  // pointwise streams output pixels only; the others stream every input pixel
  int m_stream() const { return kind == PassKind::Pointwise ? m_out() : m_in; }
  std::int64_t warmup() const {
    if (kind == PassKind::Pointwise || kind == PassKind::PassThrough) return 0;
    return line_buffer_length(kernel, m_in) - 1;
  }
  std::int64_t duration() const { return warmup() + std::int64_t(m_stream()) * m_stream(); }
  // weight bits loaded from the ping-pong bank for this pass
  std::int64_t weight_bits() const {
    switch (kind) {
      case PassKind::Standard: return std::int64_t(out.size) * in.size * kernel * kernel * 16;
      case PassKind::Depthwise: return std::int64_t(out.size) * kernel * kernel * 16;
      case PassKind::Pointwise: return std::int64_t(out.size) * in.size * 16;
      case PassKind::PassThrough: return 0;
    }
    return 0;
  }
};

// Adder-tree result travelling through the post pipeline.
struct PipelineEntry {
  int channel = 0;
  int y = 0;
  int x = 0;
  std::int64_t value = 0;
  bool finalize = true;  // false: add into the pointwise accumulator only
};

// Read-only operands of the pass currently streaming. Null in timing-only runs.
struct PassOperands {
  const QTensor* input = nullptr;
  const QArray* weights = nullptr;
  const QArray* bias = nullptr;
};

enum class MmePhase { Idle, Warmup, Compute };

class Mme {
 public:
  explicit Mme(MmeConfig cfg) : cfg_(cfg), lines_(std::size_t(cfg.slices)) {}

  const MmeConfig& config() const { return cfg_; }

  // Sets the post-pipeline depth for the next layer; the pipeline must be empty.
  void configure_layer(int latency) {
    if (in_flight_ != 0) throw Error("MME reconfigured with results still in flight");
    delay_.assign(std::size_t(std::max(latency, 1)), {});
    latency_ = latency;
    head_ = 0;
  }

  void start_pass(const PassSpec& pass, const PassOperands* ops) {
    if (active_) throw Error("MME started a pass while busy");
    check_fits(pass);
    pass_ = pass;
    ops_ = ops && ops->input ? *ops : PassOperands{};
    has_data_ = ops_.input != nullptr;
    cycle_in_pass_ = 0;
    lb_len_ = pass.kind == PassKind::Pointwise || pass.kind == PassKind::PassThrough
                  ? 1
                  : line_buffer_length(pass.kernel, pass.m_in);
    if (has_data_) {
      for (int s = 0; s < active_slices(); ++s) {
        lines_[std::size_t(s)].assign(std::size_t(lb_len_), 0);
      }
      ring_head_ = 0;
      if (pass.kind != PassKind::Pointwise && pass.kind != PassKind::PassThrough) load_weights();
    }
    active_ = true;
  }

  bool busy() const { return active_; }
  bool pipeline_empty() const { return in_flight_ == 0; }

  // Advances one clock. Entries leaving the post pipeline this cycle are
  // appended to `exiting`.
  MmePhase step(std::vector<PipelineEntry>& exiting) {
    std::vector<PipelineEntry> produced;
    MmePhase phase = MmePhase::Idle;
    if (active_) phase = stream_cycle(produced);

    if (latency_ == 0) {
      exiting.insert(exiting.end(), produced.begin(), produced.end());
    } else {
      auto& slot = delay_[head_];
      in_flight_ -= std::int64_t(slot.size());
      exiting.insert(exiting.end(), slot.begin(), slot.end());
      slot = std::move(produced);
      in_flight_ += std::int64_t(slot.size());
      head_ = (head_ + 1) % delay_.size();
    }
    return phase;
  }

  std::int64_t useful_macs() const { return useful_macs_; }
  std::int64_t peak_multipliers_per_cycle() const { return peak_mults_; }

 private:
  int active_slices() const {
    switch (pass_.kind) {
      case PassKind::Standard: return pass_.out.size * kStandardInputChannels;
      case PassKind::Pointwise: return pass_.in.size;
      default: return pass_.out.size;
    }
  }

  void check_fits(const PassSpec& p) const {
    const int groups = outputs_per_cycle(tree_mode(p.kind), cfg_);
    switch (p.kind) {
      case PassKind::Standard:
        if (p.in.size != kStandardInputChannels) throw ShapeError("standard pass needs 3 input channels");
        if (p.out.size > groups) throw ShapeError("standard pass exceeds slice groups");
        break;
      case PassKind::Depthwise:
      case PassKind::PassThrough:
        if (p.out.size > cfg_.slices || !(p.in == p.out)) throw ShapeError("depthwise pass exceeds slices");
        break;
      case PassKind::Pointwise:
        if (p.in.size > cfg_.slices || p.out.size > groups) throw ShapeError("pointwise pass exceeds array");
        break;
    }
    if (p.kind == PassKind::Standard || p.kind == PassKind::Depthwise) make_line_buffer(cfg_, p.kernel, p.m_in);
  }

  // Weights stay resident for the whole pass: [slot][tap]
  void load_weights() {
    const int kk = pass_.kernel * pass_.kernel;
    weights_.assign(std::size_t(active_slices()) * kk, 0);
    const QArray& w = *ops_.weights;
    if (pass_.kind == PassKind::Depthwise) {
      for (int s = 0; s < pass_.out.size; ++s)
        for (int t = 0; t < kk; ++t) weights_[std::size_t(s) * kk + t] = w.data[std::size_t(pass_.out.begin + s) * kk + t];
    } else {  // standard: slice 3g+n holds kernel (out g, in n)
      for (int g = 0; g < pass_.out.size; ++g)
        for (int n = 0; n < kStandardInputChannels; ++n)
          for (int t = 0; t < kk; ++t)
            weights_[std::size_t(g * kStandardInputChannels + n) * kk + t] =
                w.data[(std::size_t(pass_.out.begin + g) * kStandardInputChannels + n) * kk + t];
    }
  }

  std::int64_t bias_at_acc(int channel) const {
    if (!ops_.bias) return 0;
    const int acc_frac = ops_.input->params.frac_bits + ops_.weights->params.frac_bits;
    return static_cast<std::int64_t>(
        shift_round(Wide{ops_.bias->data[std::size_t(channel)]}, ops_.bias->params.frac_bits - acc_frac));
  }

  // Input channel streamed by a slice.
  int slice_channel(int s) const {
    switch (pass_.kind) {
      case PassKind::Standard: return s % kStandardInputChannels;
      case PassKind::Pointwise: return pass_.in.begin + s;
      default: return pass_.out.begin + s;
    }
  }

  MmePhase stream_cycle(std::vector<PipelineEntry>& produced) {
    const std::int64_t c = cycle_in_pass_;
    MmePhase phase;
    if (pass_.kind == PassKind::Pointwise)
      phase = pointwise_cycle(c, produced);
    else
      phase = window_cycle(c, produced);
    if (++cycle_in_pass_ == pass_.duration()) active_ = false;
    return phase;
  }

  MmePhase pointwise_cycle(std::int64_t c, std::vector<PipelineEntry>& produced) {
    const int m = pass_.m_out();
    const int oy = int(c / m), ox = int(c % m);
    const std::int64_t mults = std::int64_t(pass_.in.size) * pass_.out.size;
    useful_macs_ += mults;
    peak_mults_ = std::max(peak_mults_, mults);
    if (!has_data_) {
      for (int j = 0; j < pass_.out.size; ++j) produced.push_back({pass_.out.begin + j, oy, ox, 0, pass_.finalize});
      return MmePhase::Compute;
    }
    const QTensor& in = *ops_.input;
    const QArray& w = *ops_.weights;
    const int n_total = in.shape.channels;
    // slice s carries input channel in.begin+s for this pixel
    pixel_.resize(std::size_t(pass_.in.size));
    for (int s = 0; s < pass_.in.size; ++s)
      pixel_[std::size_t(s)] = in.at(slice_channel(s), oy * pass_.stride, ox * pass_.stride);
    for (int j = 0; j < pass_.out.size; ++j) {
      const int p = pass_.out.begin + j;
      std::int64_t sum = 0;  // pointwise adder-tree: 32 products per cell
      for (int s = 0; s < pass_.in.size; ++s)
        sum = mac_fixed(pixel_[std::size_t(s)], w.data[std::size_t(p) * n_total + pass_.in.begin + s], sum);
      if (pass_.finalize) sum += bias_at_acc(p);
      produced.push_back({p, oy, ox, sum, pass_.finalize});
    }
    return MmePhase::Compute;
  }

  MmePhase window_cycle(std::int64_t c, std::vector<PipelineEntry>& produced) {
    const int m = pass_.m_in;
    const int k = pass_.kernel;
    const int before = conv_padding(k), after = k - 1 - before;
    const bool windowed = pass_.kind != PassKind::PassThrough;

    if (has_data_ && windowed) {
      // newest stream element: raster index c - before*(M+1), zero outside the map
      const std::int64_t raster = c - std::int64_t(before) * (m + 1);
      const bool inside = raster >= 0 && raster < std::int64_t(m) * m;
      for (int s = 0; s < active_slices(); ++s) {
        const q16 v = inside ? ops_.input->at(slice_channel(s), int(raster / m), int(raster % m)) : q16{0};
        lines_[std::size_t(s)][ring_head_] = v;
      }
    }

    const std::int64_t warm = windowed ? lb_len_ - 1 : 0;
    if (c < warm) {
      advance_ring();
      return MmePhase::Warmup;
    }
    const std::int64_t slot = c - warm;
    const int cy = int(slot / m), cx = int(slot % m);
    const int s = windowed ? pass_.stride : 1;  // pooling windows are formed downstream
    if (cy % s == 0 && cx % s == 0) {
      const int oy = cy / s, ox = cx / s;
      const int kk = k * k;
      if (pass_.kind == PassKind::PassThrough) {
        for (int ch = 0; ch < pass_.out.size; ++ch) {
          const std::int64_t v = has_data_ ? ops_.input->at(pass_.out.begin + ch, cy, cx) : 0;
          produced.push_back({pass_.out.begin + ch, oy, ox, v, true});
        }
      } else if (pass_.kind == PassKind::Depthwise) {
        useful_macs_ += std::int64_t(pass_.out.size) * kk;
        peak_mults_ = std::max(peak_mults_, std::int64_t(pass_.out.size) * kk);
        for (int ch = 0; ch < pass_.out.size; ++ch) {
          std::int64_t sum = 0;
          if (has_data_) {
            sum = window_sum(ch, ch, cy, cx, before, after);
            sum += bias_at_acc(pass_.out.begin + ch);
          }
          produced.push_back({pass_.out.begin + ch, oy, ox, sum, true});
        }
      } else {  // standard: each group of three slices feeds one output channel
        useful_macs_ += std::int64_t(pass_.out.size) * kStandardInputChannels * kk;
        peak_mults_ = std::max(peak_mults_, std::int64_t(pass_.out.size) * kStandardInputChannels * kk);
        for (int g = 0; g < pass_.out.size; ++g) {
          std::int64_t sum = 0;
          if (has_data_) {
            for (int n = 0; n < kStandardInputChannels; ++n) {
              const int slice = g * kStandardInputChannels + n;
              sum += window_sum(slice, slice, cy, cx, before, after);
            }
            sum += bias_at_acc(pass_.out.begin + g);
          }
          produced.push_back({pass_.out.begin + g, oy, ox, sum, true});
        }
      }
    }
    advance_ring();
    return MmePhase::Compute;
  }

  // 3x3 (K x K) multiplier slice: taps read from the line buffer relative to
  // the newest element, with edge masking for the zero padding.
  std::int64_t window_sum(int slice, int weight_slot, int cy, int cx, int before, int after) const {
    const int m = pass_.m_in;
    const int k = pass_.kernel;
    const auto& line = lines_[std::size_t(slice)];
    const std::int64_t newest_offset = std::int64_t(after) * (m + 1);
    std::int64_t sum = 0;
    for (int dy = -before; dy <= after; ++dy) {
      if (cy + dy < 0 || cy + dy >= m) continue;
      for (int dx = -before; dx <= after; ++dx) {
        if (cx + dx < 0 || cx + dx >= m) continue;
        const std::int64_t back = newest_offset - std::int64_t(dy) * m - dx;
        const std::size_t pos = std::size_t((std::int64_t(ring_head_) - back % lb_len_ + lb_len_) % lb_len_);
        const q16 w = weights_[std::size_t(weight_slot) * k * k + std::size_t((dy + before) * k + (dx + before))];
        sum = mac_fixed(line[pos], w, sum);
      }
    }
    return sum;
  }

  void advance_ring() {
    if (lb_len_ > 0) ring_head_ = (ring_head_ + 1) % std::size_t(lb_len_);
  }

  MmeConfig cfg_;
  PassSpec pass_;
  PassOperands ops_;
  bool has_data_ = false;
  bool active_ = false;
  std::int64_t cycle_in_pass_ = 0;
  std::int64_t lb_len_ = 1;

  std::vector<std::vector<q16>> lines_;  // circular line buffer per slice
  std::size_t ring_head_ = 0;
  std::vector<q16> weights_;
  std::vector<q16> pixel_;

  std::vector<std::vector<PipelineEntry>> delay_{1};
  std::size_t head_ = 0;
  int latency_ = 0;
  std::int64_t in_flight_ = 0;

  std::int64_t useful_macs_ = 0;
  std::int64_t peak_mults_ = 0;
};

}  // namespace dscsim
