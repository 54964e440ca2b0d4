#pragma once

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ddsde/errors.hpp"
#include "ddsde/rng.hpp"

namespace ddsde {

using complex = std::complex<double>;

inline constexpr std::size_t kMaxFieldDim = 4;

/// Integer wave number; only the first `dim` entries are meaningful.
using Wavevector = std::array<int, kMaxFieldDim>;

namespace detail {

inline std::int64_t norm_sq(const Wavevector& k, std::size_t dim) {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < dim; ++i) s += std::int64_t{k[i]} * k[i];
  return s;
}

inline bool is_zero(const Wavevector& k, std::size_t dim) { return norm_sq(k, dim) == 0; }

// Canonical half-space: first nonzero component positive.
inline bool is_canonical(const Wavevector& k, std::size_t dim) {
  for (std::size_t i = 0; i < dim; ++i) {
    if (k[i] > 0) return true;
    if (k[i] < 0) return false;
  }
  return false;
}

inline Wavevector negate(Wavevector k) {
  for (auto& c : k) c = -c;
  return k;
}

inline void check_field_dim(std::size_t dim) {
  require<ContractError>(dim >= 1 && dim <= kMaxFieldDim, "SpectralField: dimension must be in [1, 4]");
}

}  // namespace detail

/// Dyadic level of a wave number: -1 for k = 0, otherwise the n with
/// 2^{n-1} < |k| <= 2^n.
inline int block_level(const Wavevector& k, std::size_t dim) {
  const std::int64_t s = detail::norm_sq(k, dim);
  if (s == 0) return -1;
  int n = 0;
  while ((std::int64_t{1} << (2 * n)) < s) ++n;
  return n;
}

/// The modes of one Littlewood-Paley block. Coefficients are stored
/// mode-major: coeffs[m * output_dim + o].
struct LittlewoodPaleyBlock {
  int level = -1;
  std::vector<Wavevector> wavevectors;
  std::vector<complex> coeffs;

  [[nodiscard]] std::size_t n_modes() const { return wavevectors.size(); }
};

/// A real vector field on the torus [0, L)^d, stored as a finite Fourier
/// series grouped into dyadic blocks.
///
/// Only wave numbers in the canonical half-space (plus k = 0) are stored; the
/// coefficient at -k is implicitly the conjugate of the one at k, so
///   f(x) = c_0 + 2 Re sum_{k canonical} c_k exp(2 pi i k.x / L).
class SpectralField {
 public:
  SpectralField(std::size_t dim, double period, std::size_t output_dim)
      : dim_(dim), period_(period), output_dim_(output_dim) {
    detail::check_field_dim(dim);
    detail::require<ContractError>(period > 0.0 && std::isfinite(period),
                                   "SpectralField: period must be positive");
    detail::require<ContractError>(output_dim >= 1, "SpectralField: output_dim must be >= 1");
  }

  [[nodiscard]] std::size_t dim() const { return dim_; }
  [[nodiscard]] double period() const { return period_; }
  [[nodiscard]] std::size_t output_dim() const { return output_dim_; }
  [[nodiscard]] const std::vector<LittlewoodPaleyBlock>& blocks() const { return blocks_; }

  [[nodiscard]] int max_level() const { return blocks_.empty() ? -2 : blocks_.back().level; }

  [[nodiscard]] const LittlewoodPaleyBlock* block(int level) const {
    for (const auto& b : blocks_)
      if (b.level == level) return &b;
    return nullptr;
  }

  [[nodiscard]] std::size_t n_modes() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += b.n_modes();
    return n;
  }

  /// Largest |k_i| over stored modes, per axis.
  [[nodiscard]] std::array<int, kMaxFieldDim> max_abs_wavenumber() const {
    std::array<int, kMaxFieldDim> m{};
    for (const auto& b : blocks_)
      for (const auto& k : b.wavevectors)
        for (std::size_t i = 0; i < dim_; ++i) m[i] = std::max(m[i], std::abs(k[i]));
    return m;
  }

  [[nodiscard]] bool same_domain(const SpectralField& o) const {
    return dim_ == o.dim_ && period_ == o.period_ && output_dim_ == o.output_dim_;
  }

  /// Applies fn(k, coeffs) to every stored mode; the block layout is kept.
  template <class Fn>
  [[nodiscard]] SpectralField map_modes(Fn&& fn) const {
    SpectralField out = *this;
    for (auto& b : out.blocks_)
      for (std::size_t m = 0; m < b.n_modes(); ++m)
        fn(b.wavevectors[m], std::span<complex>(b.coeffs.data() + m * output_dim_, output_dim_));
    return out;
  }

  friend bool operator==(const SpectralField& a, const SpectralField& b) {
    if (!a.same_domain(b) || a.blocks_.size() != b.blocks_.size()) return false;
    for (std::size_t i = 0; i < a.blocks_.size(); ++i) {
      const auto& x = a.blocks_[i];
      const auto& y = b.blocks_[i];
      if (x.level != y.level || x.wavevectors != y.wavevectors || x.coeffs != y.coeffs) return false;
    }
    return true;
  }

 private:
  friend class FieldBuilder;

  std::size_t dim_;
  double period_;
  std::size_t output_dim_;
  std::vector<LittlewoodPaleyBlock> blocks_;
};

/// Accumulates modes (any orientation; non-canonical ones are folded by
/// conjugation) and produces a SpectralField with sorted blocks.
class FieldBuilder {
 public:
  FieldBuilder(std::size_t dim, double period, std::size_t output_dim)
      : proto_(dim, period, output_dim) {}

  explicit FieldBuilder(const SpectralField& like) : proto_(like.dim(), like.period(), like.output_dim()) {}

  FieldBuilder& add(const Wavevector& k_in, std::span<const complex> c) {
    const std::size_t dim = proto_.dim_;
    detail::require<ContractError>(c.size() == proto_.output_dim_,
                                   "FieldBuilder: coefficient count must equal output_dim");
    Wavevector k{};
    for (std::size_t i = 0; i < dim; ++i) k[i] = k_in[i];
    const bool zero = detail::is_zero(k, dim);
    const bool flip = !zero && !detail::is_canonical(k, dim);
    if (flip) k = detail::negate(k);
    auto [it, inserted] = modes_.try_emplace(k, proto_.output_dim_, complex{});
    for (std::size_t o = 0; o < c.size(); ++o) {
      complex v = flip ? std::conj(c[o]) : c[o];
      // The mean of a real field is real; an imaginary part would be dropped.
      if (zero) v = complex(v.real(), 0.0);
      it->second[o] += v;
    }
    return *this;
  }

  FieldBuilder& add(const Wavevector& k, complex c) { return add(k, std::span<const complex>(&c, 1)); }

  FieldBuilder& add_field(const SpectralField& f, double scale = 1.0) {
    detail::require<ContractError>(f.same_domain(proto_), "FieldBuilder: field domains differ");
    std::vector<complex> tmp(proto_.output_dim_);
    for (const auto& b : f.blocks())
      for (std::size_t m = 0; m < b.n_modes(); ++m) {
        for (std::size_t o = 0; o < tmp.size(); ++o) tmp[o] = scale * b.coeffs[m * tmp.size() + o];
        add(b.wavevectors[m], tmp);
      }
    return *this;
  }

  [[nodiscard]] SpectralField build() const {
    SpectralField out = proto_;
    std::map<int, LittlewoodPaleyBlock> by_level;
    for (const auto& [k, c] : modes_) {
      const int level = block_level(k, proto_.dim_);
      auto& b = by_level[level];
      b.level = level;
      b.wavevectors.push_back(k);
      b.coeffs.insert(b.coeffs.end(), c.begin(), c.end());
    }
    for (auto& [level, b] : by_level) out.blocks_.push_back(std::move(b));
    return out;
  }

 private:
  SpectralField proto_;
  std::map<Wavevector, std::vector<complex>> modes_;
};

inline SpectralField zero_field(std::size_t dim, double period, std::size_t output_dim) {
  return SpectralField(dim, period, output_dim);
}

inline SpectralField constant_field(std::size_t dim, double period, std::span<const double> value) {
  FieldBuilder b(dim, period, value.size());
  std::vector<complex> c(value.begin(), value.end());
  b.add(Wavevector{}, c);
  return b.build();
}

inline SpectralField scaled(const SpectralField& f, double a) {
  return f.map_modes([a](const Wavevector&, std::span<complex> c) {
    for (auto& v : c) v *= a;
  });
}

inline SpectralField operator+(const SpectralField& f, const SpectralField& g) {
  return FieldBuilder(f).add_field(f).add_field(g).build();
}

inline SpectralField operator-(const SpectralField& f, const SpectralField& g) {
  return FieldBuilder(f).add_field(f).add_field(g, -1.0).build();
}

/// x -> f(x - shift).
inline SpectralField translated(const SpectralField& f, std::span<const double> shift) {
  detail::require<ContractError>(shift.size() == f.dim(), "translated: shift dimension mismatch");
  const double w = 2.0 * std::numbers::pi / f.period();
  return f.map_modes([&](const Wavevector& k, std::span<complex> c) {
    double phase = 0.0;
    for (std::size_t i = 0; i < f.dim(); ++i) phase += k[i] * shift[i];
    const complex factor = std::polar(1.0, -w * phase);
    for (auto& v : c) v *= factor;
  });
}

/// Drops every block above level_cut (sharp dyadic frequency truncation).
inline SpectralField mollify(const SpectralField& f, int level_cut) {
  detail::require<ContractError>(level_cut >= -1, "mollify: level_cut must be >= -1");
  FieldBuilder b(f);
  for (const auto& blk : f.blocks()) {
    if (blk.level > level_cut) continue;
    for (std::size_t m = 0; m < blk.n_modes(); ++m)
      b.add(blk.wavevectors[m],
            std::span<const complex>(blk.coeffs.data() + m * f.output_dim(), f.output_dim()));
  }
  return b.build();
}

/// Spatial Jacobian as a field with output_dim * dim components, ordered
/// (output o, axis i) -> o * dim + i.
inline SpectralField gradient(const SpectralField& f) {
  const std::size_t od = f.output_dim(), dim = f.dim();
  const double w = 2.0 * std::numbers::pi / f.period();
  FieldBuilder b(dim, f.period(), od * dim);
  std::vector<complex> c(od * dim);
  for (const auto& blk : f.blocks())
    for (std::size_t m = 0; m < blk.n_modes(); ++m) {
      const auto& k = blk.wavevectors[m];
      for (std::size_t o = 0; o < od; ++o)
        for (std::size_t i = 0; i < dim; ++i)
          c[o * dim + i] = complex(0.0, w * k[i]) * blk.coeffs[m * od + o];
      b.add(k, c);
    }
  return b.build();
}

/// Point evaluator with reusable scratch; one instance per thread.
///
/// exp(2 pi i k.x / L) is assembled from per-axis power tables, re-anchored
/// with an exact polar every 64 powers to bound round-off growth.
class FieldEvaluator {
 public:
  explicit FieldEvaluator(const SpectralField& f) : field_(&f), max_k_(f.max_abs_wavenumber()) {
    for (std::size_t i = 0; i < f.dim(); ++i) powers_[i].resize(static_cast<std::size_t>(max_k_[i]) + 1);
  }

  void operator()(std::span<const double> x, std::span<double> out) {
    const SpectralField& f = *field_;
    const std::size_t od = f.output_dim();
    const double w = 2.0 * std::numbers::pi / f.period();
    for (std::size_t i = 0; i < f.dim(); ++i) {
      const double theta = w * x[i];
      const complex z = std::polar(1.0, theta);
      auto& p = powers_[i];
      p[0] = 1.0;
      for (std::size_t m = 1; m < p.size(); ++m)
        p[m] = (m % 64 == 0) ? std::polar(1.0, theta * static_cast<double>(m)) : p[m - 1] * z;
    }
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& blk : f.blocks()) {
      for (std::size_t m = 0; m < blk.n_modes(); ++m) {
        const auto& k = blk.wavevectors[m];
        const complex* c = blk.coeffs.data() + m * od;
        if (blk.level < 0) {
          for (std::size_t o = 0; o < od; ++o) out[o] += c[o].real();
          continue;
        }
        complex e = 1.0;
        for (std::size_t i = 0; i < f.dim(); ++i) {
          const int ki = k[i];
          if (ki > 0) e *= powers_[i][static_cast<std::size_t>(ki)];
          else if (ki < 0) e *= std::conj(powers_[i][static_cast<std::size_t>(-ki)]);
        }
        for (std::size_t o = 0; o < od; ++o)
          out[o] += 2.0 * (c[o].real() * e.real() - c[o].imag() * e.imag());
      }
    }
  }

  std::vector<double> operator()(std::span<const double> x) {
    std::vector<double> out(field_->output_dim());
    (*this)(x, out);
    return out;
  }

 private:
  const SpectralField* field_;
  std::array<int, kMaxFieldDim> max_k_;
  std::array<std::vector<complex>, kMaxFieldDim> powers_;
};

inline std::vector<double> evaluate(const SpectralField& f, std::span<const double> x) {
  detail::require<ContractError>(x.size() == f.dim(), "evaluate: point dimension mismatch");
  FieldEvaluator ev(f);
  return ev(x);
}

inline double evaluate_scalar(const SpectralField& f, double x) {
  return evaluate(f, std::span<const double>(&x, 1))[0];
}

namespace detail {

inline std::size_t grid_size_for_level(int level, std::size_t dim) {
  // Samples per shortest wavelength: 16 in 1-D, 8 in 2-D (both >= 4x Nyquist).
  const std::size_t per_wavelength = dim == 1 ? 16 : 8;
  const std::size_t top = level <= 0 ? 1 : (std::size_t{1} << level);
  return std::max<std::size_t>(16, per_wavelength * top);
}

// Samples the modes of `blocks` on an M^dim grid; returns, per grid point, the
// Euclidean norm of the output vector.
inline std::vector<double> sample_on_grid(const SpectralField& f,
                                          std::span<const LittlewoodPaleyBlock* const> blocks,
                                          std::size_t M) {
  const std::size_t dim = f.dim();
  require<ContractError>(dim <= 2, "grid sampling supports d <= 2");
  const std::size_t od = f.output_dim();
  const std::size_t npts = dim == 1 ? M : M * M;
  std::vector<double> norm2(npts, 0.0);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::Unscaled);
  auto wrap = [M](long k) { return static_cast<std::size_t>(((k % static_cast<long>(M)) + static_cast<long>(M)) % static_cast<long>(M)); };
  for (std::size_t o = 0; o < od; ++o) {
    std::vector<complex> spec(npts, 0.0);
    for (const auto* blk : blocks)
      for (std::size_t m = 0; m < blk->n_modes(); ++m) {
        const auto& k = blk->wavevectors[m];
        const complex c = blk->coeffs[m * od + o];
        if (blk->level < 0) {
          spec[0] += c.real();
          continue;
        }
        if (dim == 1) {
          spec[wrap(k[0])] += c;
          spec[wrap(-k[0])] += std::conj(c);
        } else {
          spec[wrap(k[0]) * M + wrap(k[1])] += c;
          spec[wrap(-k[0]) * M + wrap(-k[1])] += std::conj(c);
        }
      }
    std::vector<complex> vals;
    if (dim == 1) {
      fft.inv(vals, spec);
    } else {
      vals.assign(npts, 0.0);
      std::vector<complex> row(M), tmp;
      for (std::size_t r = 0; r < M; ++r) {
        std::copy_n(spec.begin() + static_cast<long>(r * M), M, row.begin());
        fft.inv(tmp, row);
        std::copy(tmp.begin(), tmp.end(), vals.begin() + static_cast<long>(r * M));
      }
      for (std::size_t cidx = 0; cidx < M; ++cidx) {
        for (std::size_t r = 0; r < M; ++r) row[r] = vals[r * M + cidx];
        fft.inv(tmp, row);
        for (std::size_t r = 0; r < M; ++r) vals[r * M + cidx] = tmp[r];
      }
    }
    for (std::size_t i = 0; i < npts; ++i) norm2[i] += vals[i].real() * vals[i].real();
  }
  for (auto& v : norm2) v = std::sqrt(v);
  return norm2;
}

}  // namespace detail

/// Grid supremum of |Delta_n f| for one block.
inline double block_sup_norm(const SpectralField& f, const LittlewoodPaleyBlock& blk) {
  if (blk.level < 0) {
    double s = 0.0;
    for (const auto& c : blk.coeffs) s += c.real() * c.real();
    return std::sqrt(s);
  }
  const LittlewoodPaleyBlock* ptr = &blk;
  const auto vals = detail::sample_on_grid(f, std::span(&ptr, 1), detail::grid_size_for_level(blk.level, f.dim()));
  return *std::max_element(vals.begin(), vals.end());
}

/// (level, sup-norm) for every stored block.
inline std::vector<std::pair<int, double>> block_norms(const SpectralField& f) {
  std::vector<std::pair<int, double>> out;
  out.reserve(f.blocks().size());
  for (const auto& b : f.blocks()) out.emplace_back(b.level, block_sup_norm(f, b));
  return out;
}

/// sup_n 2^{alpha n} ||Delta_n f||_inf over the stored blocks (n >= -1).
inline double besov_norm(const SpectralField& f, double alpha) {
  double best = 0.0;
  for (const auto& [level, norm] : block_norms(f)) best = std::max(best, std::exp2(alpha * level) * norm);
  return best;
}

/// Grid supremum of |f| at the resolution of its top block.
inline double sup_norm(const SpectralField& f) {
  if (f.blocks().empty()) return 0.0;
  std::vector<const LittlewoodPaleyBlock*> all;
  for (const auto& b : f.blocks()) all.push_back(&b);
  const auto vals = detail::sample_on_grid(f, all, detail::grid_size_for_level(f.max_level(), f.dim()));
  return *std::max_element(vals.begin(), vals.end());
}

inline double gradient_sup_norm(const SpectralField& f) { return sup_norm(gradient(f)); }

/// Canonical wave numbers of one dyadic level, in lexicographic order.
inline std::vector<Wavevector> level_wavevectors(int level, std::size_t dim) {
  detail::check_field_dim(dim);
  std::vector<Wavevector> out;
  if (level < 0) {
    out.push_back(Wavevector{});
    return out;
  }
  const int r = 1 << level;
  Wavevector k{};
  std::function<void(std::size_t)> rec = [&](std::size_t axis) {
    if (axis == dim) {
      if (detail::is_canonical(k, dim) && block_level(k, dim) == level) out.push_back(k);
      return;
    }
    for (int v = -r; v <= r; ++v) {
      k[axis] = v;
      rec(axis + 1);
    }
    k[axis] = 0;
  };
  rec(0);
  return out;
}

struct SynthOptions {
  double period = 2.0 * std::numbers::pi;
  std::size_t output_dim = 1;
  bool normalize = true;
  /// Block weights are drawn uniformly from [1 - jitter, 1].
  double block_jitter = 0.5;
};

/// Random band-limited field with blocks 0..max_level (no mean), random
/// phases, and block n rescaled to sup-norm u_n 2^{-alpha n}. Before
/// normalization besov_norm(f, alpha) = max_n u_n lies in [1/2, 1].
inline SpectralField synth_besov_field(double alpha, int max_level, std::size_t dim, RngStream rng,
                                       const SynthOptions& opt = {}) {
  detail::require<ContractError>(max_level >= 1, "synth_besov_field: max_level must be >= 1");
  detail::require<ContractError>(opt.block_jitter >= 0.0 && opt.block_jitter < 1.0,
                                 "synth_besov_field: block_jitter must lie in [0, 1)");
  const std::size_t od = opt.output_dim;
  FieldBuilder builder(dim, opt.period, od);
  std::vector<complex> c(od);
  std::vector<double> weights;
  for (int n = 0; n <= max_level; ++n) {
    for (const auto& k : level_wavevectors(n, dim)) {
      for (auto& v : c) v = std::polar(1.0, 2.0 * std::numbers::pi * rng.uniform());
      builder.add(k, c);
    }
    weights.push_back(1.0 - opt.block_jitter * rng.uniform());
  }
  SpectralField raw = builder.build();
  FieldBuilder scaled_builder(raw);
  for (const auto& blk : raw.blocks()) {
    const double target = weights[static_cast<std::size_t>(blk.level)] * std::exp2(-alpha * blk.level);
    const double factor = target / block_sup_norm(raw, blk);
    for (std::size_t m = 0; m < blk.n_modes(); ++m) {
      for (std::size_t o = 0; o < od; ++o) c[o] = factor * blk.coeffs[m * od + o];
      scaled_builder.add(blk.wavevectors[m], c);
    }
  }
  SpectralField out = scaled_builder.build();
  if (opt.normalize) out = scaled(out, 1.0 / besov_norm(out, alpha));
  return out;
}

}  // namespace ddsde
