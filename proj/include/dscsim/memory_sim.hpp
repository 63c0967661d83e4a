#pragma once

// On-chip buffers and the external-memory (DMA) model.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dscsim/error.hpp"
#include "dscsim/network_model.hpp"

namespace dscsim {

struct ExternalMemoryModel {
  std::int64_t bandwidth_bytes_per_s = 8'500'000'000;
  std::int64_t setup_cycles = 8;  // per descriptor
};

inline void validate(const ExternalMemoryModel& m) {
  if (m.bandwidth_bytes_per_s <= 0) throw ShapeError("external memory bandwidth must be positive");
  if (m.setup_cycles < 0) throw ShapeError("DMA setup cycles must be non-negative");
}

struct AddressRange {
  std::uint64_t address = 0;
  std::uint64_t bytes = 0;
};

// ceil(sum over descriptors of setup + bytes * clock / bandwidth), exact in integers
inline std::int64_t dma_transfer(std::span<const AddressRange> ranges, std::int64_t clock_hz,
                                 const ExternalMemoryModel& mem) {
  validate(mem);
  if (clock_hz <= 0) throw ShapeError("clock must be positive");
  std::vector<AddressRange> sorted(ranges.begin(), ranges.end());
  std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.address < b.address; });
  unsigned __int128 bytes = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i].bytes == 0) throw ShapeError("DMA range of zero bytes");
    if (i > 0 && sorted[i - 1].address + sorted[i - 1].bytes > sorted[i].address)
      throw ShapeError("DMA ranges overlap");
    bytes += sorted[i].bytes;
  }
  if (sorted.empty()) return 0;
  const auto bw = static_cast<unsigned __int128>(mem.bandwidth_bytes_per_s);
  const unsigned __int128 num =
      static_cast<unsigned __int128>(sorted.size()) * std::uint64_t(mem.setup_cycles) * bw + bytes * std::uint64_t(clock_hz);
  return static_cast<std::int64_t>((num + bw - 1) / bw);
}

inline std::int64_t transfer_cycles(std::int64_t bytes, std::int64_t clock_hz, const ExternalMemoryModel& mem) {
  if (bytes <= 0) return 0;
  const AddressRange r{0, std::uint64_t(bytes)};
  return dma_transfer(std::span<const AddressRange>(&r, 1), clock_hz, mem);
}

inline std::int64_t bits_to_bytes(std::int64_t bits) { return (bits + 7) / 8; }

// Stall of one tile whose load overlaps `overlap_cycles` of compute.
inline std::int64_t prefetch_schedule(std::int64_t tile_bits, std::int64_t overlap_cycles, std::int64_t clock_hz,
                                      const ExternalMemoryModel& mem, std::int64_t bank_bits) {
  if (tile_bits < 0 || overlap_cycles < 0) throw ShapeError("prefetch_schedule: negative input");
  if (tile_bits > bank_bits)
    throw InfeasibleError("weight tile of " + std::to_string(tile_bits) + " bits exceeds bank of " +
                          std::to_string(bank_bits) + " bits");
  return std::max<std::int64_t>(0, transfer_cycles(bits_to_bytes(tile_bits), clock_hz, mem) - overlap_cycles);
}

// ---------------------------------------------------------------------------
// Ping-pong weight buffer: one bank loads while the other feeds the MMEs.

enum class BankState { Empty, Loading, Ready, Draining };

inline const char* to_string(BankState s) {
  switch (s) {
    case BankState::Empty: return "empty";
    case BankState::Loading: return "loading";
    case BankState::Ready: return "ready";
    case BankState::Draining: return "draining";
  }
  return "?";
}

struct BankEvent {
  std::int64_t cycle = 0;
  int bank = 0;
  BankState state = BankState::Empty;
  std::int64_t bits = 0;
};

class PingPongBuffer {
 public:
  explicit PingPongBuffer(std::int64_t bank_bits) : bank_bits_(bank_bits) {
    if (bank_bits <= 0) throw ShapeError("weight bank must hold at least one bit");
  }

  std::int64_t bank_bits() const { return bank_bits_; }
  BankState state(int bank) const { return state_[bank]; }
  const std::vector<BankEvent>& trace() const { return trace_; }

  void begin_load(int bank, std::int64_t bits, std::int64_t cycle) {
    if (bits > bank_bits_)
      throw InfeasibleError("weight tile of " + std::to_string(bits) + " bits exceeds bank of " +
                            std::to_string(bank_bits_) + " bits");
    require(bank, BankState::Empty, "load");
    set(bank, BankState::Loading, bits, cycle);
  }
  void finish_load(int bank, std::int64_t cycle) {
    require(bank, BankState::Loading, "finish load");
    set(bank, BankState::Ready, bits_[bank], cycle);
  }
  void begin_drain(int bank, std::int64_t cycle) {
    require(bank, BankState::Ready, "drain");
    set(bank, BankState::Draining, bits_[bank], cycle);
  }
  void finish_drain(int bank, std::int64_t cycle) {
    require(bank, BankState::Draining, "finish drain");
    set(bank, BankState::Empty, 0, cycle);
  }

 private:
  void require(int bank, BankState want, const char* op) const {
    if (bank < 0 || bank > 1) throw Error("ping-pong bank index out of range");
    if (state_[bank] != want)
      throw Error(std::string("ping-pong ") + op + " on bank " + std::to_string(bank) + " in state " +
                  to_string(state_[bank]));
  }
  void set(int bank, BankState s, std::int64_t bits, std::int64_t cycle) {
    state_[bank] = s;
    bits_[bank] = bits;
    trace_.push_back({cycle, bank, s, bits});
  }

  std::int64_t bank_bits_;
  BankState state_[2] = {BankState::Empty, BankState::Empty};
  std::int64_t bits_[2] = {0, 0};
  std::vector<BankEvent> trace_;
};

// Replays a trace: a bank is never loaded and drained at the same time and
// never drained before its load completed.
inline bool trace_is_safe(const std::vector<BankEvent>& trace) {
  BankState st[2] = {BankState::Empty, BankState::Empty};
  std::int64_t last = 0;
  for (const auto& e : trace) {
    if (e.bank < 0 || e.bank > 1 || e.cycle < last) return false;
    last = e.cycle;
    const BankState prev = st[e.bank];
    const bool ok = (e.state == BankState::Loading && prev == BankState::Empty) ||
                    (e.state == BankState::Ready && prev == BankState::Loading) ||
                    (e.state == BankState::Draining && prev == BankState::Ready) ||
                    (e.state == BankState::Empty && prev == BankState::Draining);
    if (!ok) return false;
    st[e.bank] = e.state;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Feature-map buffer residency: every activation stays on chip.

struct ResidencyReport {
  std::int64_t capacity_bits = 0;
  std::int64_t peak_bits = 0;  // input + output + live shortcuts of one layer
  std::size_t peak_layer = 0;
  std::int64_t largest_tensor_bits = 0;
  std::size_t largest_activation = 0;
  std::vector<std::int64_t> layer_bits;

  bool fits() const { return peak_bits <= capacity_bits; }
};

inline ResidencyReport feature_map_residency(const NetworkSpec& net, std::int64_t capacity_bits,
                                             int bits_per_element = 16) {
  validate_network(net);
  ResidencyReport r;
  r.capacity_bits = capacity_bits;
  const std::size_t n = net.layers.size();
  auto bits = [&](std::size_t a) { return net.activation(a).elements() * bits_per_element; };
  for (std::size_t a = 0; a <= n; ++a)
    if (bits(a) > r.largest_tensor_bits) {
      r.largest_tensor_bits = bits(a);
      r.largest_activation = a;
    }
  // last layer that reads each activation as a shortcut
  std::vector<std::ptrdiff_t> shortcut_until(n + 1, -1);
  for (std::size_t i = 0; i < n; ++i)
    if (net.layers[i].residual > 0) {
      const std::size_t a = i + 1 - std::size_t(net.layers[i].residual);
      shortcut_until[a] = std::max<std::ptrdiff_t>(shortcut_until[a], std::ptrdiff_t(i));
    }
  if (n == 0) {
    r.peak_bits = bits(0);
    return r;
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::int64_t live = bits(i) + bits(i + 1);
    for (std::size_t a = 0; a < i; ++a)
      if (shortcut_until[a] >= std::ptrdiff_t(i)) live += bits(a);
    r.layer_bits.push_back(live);
    if (live > r.peak_bits) {
      r.peak_bits = live;
      r.peak_layer = i;
    }
  }
  return r;
}

}  // namespace dscsim
