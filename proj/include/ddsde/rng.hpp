#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace ddsde {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix_label(std::uint64_t state, std::uint64_t label) {
  return splitmix64(state ^ splitmix64(label + 0x632be59bd9b4e019ull));
}

// Philox4x32-10 block function (Salmon et al., SC'11).
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u;
  constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u;
  constexpr std::uint32_t kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

}  // namespace detail

/// Counter-based random stream.
///
/// A stream is identified by a 64-bit key (derived from the run seed) and a
/// 64-bit substream label; draws are a pure function of (key, label, counter),
/// so any two streams with different label paths are independent and results
/// never depend on the order in which streams are consumed. `split` derives a
/// child stream, which is how per-path and per-component streams are keyed.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : key_(detail::splitmix64(seed)), label_(0) {}

  [[nodiscard]] RngStream split(std::uint64_t label) const {
    RngStream child = *this;
    child.label_ = detail::mix_label(label_, label);
    child.counter_ = 0;
    child.buffered_ = 0;
    child.has_normal_ = false;
    return child;
  }

  [[nodiscard]] RngStream split(std::initializer_list<std::uint64_t> labels) const {
    RngStream child = *this;
    for (auto l : labels) child = child.split(l);
    return child;
  }

  std::uint64_t next_u64() {
    if (buffered_ == 0) refill();
    return block_[--buffered_];
  }

  /// Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; both variates of a pair are used.
  double normal() {
    if (has_normal_) {
      has_normal_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_normal_ = true;
    return r * std::cos(theta);
  }

  [[nodiscard]] std::uint64_t label() const { return label_; }

 private:
  void refill() {
    const std::array<std::uint32_t, 4> ctr = {
        static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
        static_cast<std::uint32_t>(label_), static_cast<std::uint32_t>(label_ >> 32)};
    const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(key_),
                                              static_cast<std::uint32_t>(key_ >> 32)};
    const auto out = detail::philox4x32(ctr, key);
    block_[0] = (std::uint64_t{out[0]} << 32) | out[1];
    block_[1] = (std::uint64_t{out[2]} << 32) | out[3];
    buffered_ = 2;
    ++counter_;
  }

  std::uint64_t key_;
  std::uint64_t label_;
  std::uint64_t counter_ = 0;
  std::array<std::uint64_t, 2> block_{};
  int buffered_ = 0;
  double spare_ = 0.0;
  bool has_normal_ = false;
};

// Stream labels used across the library, so that e.g. initial data and noise
// for the same particle never share a substream.
namespace stream_tag {
inline constexpr std::uint64_t kNoise = 0x4e4f495345ull;
inline constexpr std::uint64_t kInitial = 0x494e4954ull;
inline constexpr std::uint64_t kField = 0x4649454c44ull;
inline constexpr std::uint64_t kProbe = 0x50524f4245ull;
inline constexpr std::uint64_t kReplica = 0x5245504cull;
inline constexpr std::uint64_t kTwin = 0x5457494eull;
}  // namespace stream_tag

}  // namespace ddsde
