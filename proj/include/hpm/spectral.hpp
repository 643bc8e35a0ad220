// hpm/spectral.hpp
//
// Periodic tensor grids over x (optionally extended by bounded velocity
// axes p), complex fields sampled on them, and the forward/inverse discrete
// Fourier transform along the spatial axes.
//
// Conventions
//   x_j       = j * L / n                         (spatial nodes on [0, L))
//   xi_k      = k / L,  k in {-n/2+1, ..., n/2}   (Nyquist on the positive side)
//   p_i       = -P/2 + (i + 1/2) * P / n_p        (midpoint velocity nodes)
//   F u(xi)   = sum_x u(x) exp(-2 pi i x.xi) * prod(L/n)
//   F^-1 U(x) = sum_xi U(xi) exp(2 pi i x.xi) * prod(1/L)
//
// Storage is row-major with the last axis fastest; spatial axes come first,
// then velocity axes. Frequency fields keep FFT index order.

#pragma once

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <complex>
#include <cstddef>
#include <functional>
#include <limits>
#include <mutex>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hpm/errors.hpp"

namespace hpm {

using cplx = std::complex<double>;

enum class Space { physical, frequency };

inline const char* to_string(Space s) { return s == Space::physical ? "physical" : "frequency"; }

class SpectralGrid {
 public:
  SpectralGrid() = default;

  SpectralGrid(std::vector<std::size_t> n, std::vector<double> length,
               std::vector<std::size_t> n_velocity = {}, std::vector<double> velocity_length = {})
      : n_(std::move(n)), length_(std::move(length)), np_(std::move(n_velocity)),
        plen_(std::move(velocity_length)) {
    if (n_.empty()) throw DomainError("SpectralGrid: spatial dimension must be >= 1");
    if (length_.size() != n_.size()) throw DomainError("SpectralGrid: one period per spatial axis");
    if (plen_.size() != np_.size()) throw DomainError("SpectralGrid: one length per velocity axis");
    for (std::size_t k = 0; k < n_.size(); ++k) {
      if (n_[k] < 4 || !std::has_single_bit(n_[k]))
        throw DomainError("SpectralGrid: samples per axis must be a power of two >= 4");
      if (!(length_[k] > 0.0)) throw DomainError("SpectralGrid: period must be positive");
    }
    for (std::size_t j = 0; j < np_.size(); ++j) {
      if (np_[j] < 1) throw DomainError("SpectralGrid: velocity axis needs at least one node");
      if (!(plen_[j] > 0.0)) throw DomainError("SpectralGrid: velocity length must be positive");
    }
    spatial_size_ = checked_product(n_);
    velocity_size_ = checked_product(np_);
    if (spatial_size_ > std::numeric_limits<std::size_t>::max() / velocity_size_ ||
        spatial_size_ * velocity_size_ > (std::size_t{1} << 40))
      throw DomainError("SpectralGrid: total sample count exceeds addressable memory");
  }

  /// Spatial-only grid, same period on every axis.
  static SpectralGrid cube(std::size_t d, std::size_t n, double length = 1.0) {
    return SpectralGrid(std::vector<std::size_t>(d, n), std::vector<double>(d, length));
  }

  std::size_t dim() const noexcept { return n_.size(); }
  std::size_t velocity_dim() const noexcept { return np_.size(); }
  const std::vector<std::size_t>& n() const noexcept { return n_; }
  const std::vector<double>& length() const noexcept { return length_; }
  const std::vector<std::size_t>& n_velocity() const noexcept { return np_; }
  const std::vector<double>& velocity_length() const noexcept { return plen_; }

  std::size_t spatial_size() const noexcept { return spatial_size_; }
  std::size_t velocity_size() const noexcept { return velocity_size_; }
  std::size_t size() const noexcept { return spatial_size_ * velocity_size_; }

  double dx(std::size_t k) const { return length_[k] / static_cast<double>(n_[k]); }
  double dp(std::size_t j) const { return plen_[j] / static_cast<double>(np_[j]); }

  double x_node(std::size_t k, std::size_t i) const { return static_cast<double>(i) * dx(k); }
  double p_node(std::size_t j, std::size_t i) const {
    return -0.5 * plen_[j] + (static_cast<double>(i) + 0.5) * dp(j);
  }

  /// Integer wavenumber for FFT index i (Nyquist assigned to +n/2).
  long wavenumber(std::size_t k, std::size_t i) const {
    const auto nk = static_cast<long>(n_[k]);
    const auto ii = static_cast<long>(i);
    return ii <= nk / 2 ? ii : ii - nk;
  }
  double frequency(std::size_t k, std::size_t i) const {
    return static_cast<double>(wavenumber(k, i)) / length_[k];
  }
  bool is_nyquist(std::size_t k, std::size_t i) const { return 2 * i == n_[k]; }

  double cell_volume() const {
    double v = 1.0;
    for (std::size_t k = 0; k < dim(); ++k) v *= dx(k);
    return v;
  }
  double frequency_volume() const {
    double v = 1.0;
    for (double l : length_) v /= l;
    return v;
  }
  double velocity_cell_volume() const {
    double v = 1.0;
    for (std::size_t j = 0; j < velocity_dim(); ++j) v *= dp(j);
    return v;
  }
  double velocity_domain_volume() const {
    double v = 1.0;
    for (double l : plen_) v *= l;
    return v;
  }

  /// Multi-index of a flat spatial index.
  void spatial_index(std::size_t flat, std::span<std::size_t> out) const {
    for (std::size_t k = dim(); k-- > 0;) {
      out[k] = flat % n_[k];
      flat /= n_[k];
    }
  }
  void velocity_index(std::size_t flat, std::span<std::size_t> out) const {
    for (std::size_t j = velocity_dim(); j-- > 0;) {
      out[j] = flat % np_[j];
      flat /= np_[j];
    }
  }

  /// Spatial-only grid with the same spatial axes.
  SpectralGrid spatial() const { return SpectralGrid(n_, length_); }

  bool operator==(const SpectralGrid&) const = default;

 private:
  static std::size_t checked_product(const std::vector<std::size_t>& v) {
    std::size_t p = 1;
    for (auto x : v) {
      if (x != 0 && p > std::numeric_limits<std::size_t>::max() / x)
        throw DomainError("SpectralGrid: total sample count exceeds addressable memory");
      p *= x;
    }
    return p;
  }

  std::vector<std::size_t> n_;
  std::vector<double> length_;
  std::vector<std::size_t> np_;
  std::vector<double> plen_;
  std::size_t spatial_size_ = 0;
  std::size_t velocity_size_ = 1;
};

class SpectralField {
 public:
  SpectralField() = default;

  SpectralField(SpectralGrid grid, Space space, std::vector<cplx> values)
      : grid_(std::move(grid)), space_(space), values_(std::move(values)) {
    if (values_.size() != grid_.size())
      throw ContractError("SpectralField: value count " + std::to_string(values_.size()) +
                          " does not match grid size " + std::to_string(grid_.size()));
  }

  static SpectralField zeros(const SpectralGrid& grid, Space space = Space::physical) {
    return SpectralField(grid, space, std::vector<cplx>(grid.size()));
  }

  /// Samples fn(x, p) at every node (p is empty without velocity axes).
  static SpectralField sample(
      const SpectralGrid& grid,
      const std::function<cplx(std::span<const double>, std::span<const double>)>& fn) {
    std::vector<cplx> v(grid.size());
    std::vector<std::size_t> ix(grid.dim()), ip(grid.velocity_dim());
    std::vector<double> x(grid.dim()), p(grid.velocity_dim());
    for (std::size_t s = 0; s < grid.spatial_size(); ++s) {
      grid.spatial_index(s, ix);
      for (std::size_t k = 0; k < grid.dim(); ++k) x[k] = grid.x_node(k, ix[k]);
      for (std::size_t q = 0; q < grid.velocity_size(); ++q) {
        grid.velocity_index(q, ip);
        for (std::size_t j = 0; j < grid.velocity_dim(); ++j) p[j] = grid.p_node(j, ip[j]);
        v[s * grid.velocity_size() + q] = fn(x, p);
      }
    }
    return SpectralField(grid, Space::physical, std::move(v));
  }

  /// Samples a spatial function fn(x) on a grid without velocity axes.
  static SpectralField sample_x(const SpectralGrid& grid,
                                const std::function<cplx(std::span<const double>)>& fn) {
    return sample(grid, [&](std::span<const double> x, std::span<const double>) { return fn(x); });
  }

  const SpectralGrid& grid() const noexcept { return grid_; }
  Space space() const noexcept { return space_; }
  std::span<const cplx> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  const cplx& operator[](std::size_t i) const { return values_[i]; }
  const cplx& at(std::size_t spatial, std::size_t velocity = 0) const {
    return values_[spatial * grid_.velocity_size() + velocity];
  }

  /// Moves the sample buffer out, leaving the field empty.
  std::vector<cplx> release() && { return std::move(values_); }

 private:
  SpectralGrid grid_;
  Space space_ = Space::physical;
  std::vector<cplx> values_;
};

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// In-place unnormalized transform over the spatial axes of every velocity slot.
inline void fftw_spatial_inplace(const SpectralGrid& grid, std::vector<cplx>& data, int sign) {
  std::vector<int> dims(grid.n().begin(), grid.n().end());
  const int howmany = static_cast<int>(grid.velocity_size());
  auto* buf = reinterpret_cast<fftw_complex*>(data.data());
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    // FFTW_UNALIGNED keeps codelet choice independent of buffer alignment so
    // repeated runs are bitwise reproducible.
    plan = fftw_plan_many_dft(static_cast<int>(dims.size()), dims.data(), howmany, buf, nullptr,
                              howmany, 1, buf, nullptr, howmany, 1, sign,
                              FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  if (plan == nullptr) throw Error("FFTW failed to create a plan");
  fftw_execute_dft(plan, buf, buf);
  std::lock_guard lock(fftw_planner_mutex());
  fftw_destroy_plan(plan);
}

}  // namespace detail

inline SpectralField forward_dft(const SpectralField& f) {
  if (f.space() != Space::physical) throw ContractError("forward_dft expects a physical field");
  std::vector<cplx> data(f.values().begin(), f.values().end());
  detail::fftw_spatial_inplace(f.grid(), data, FFTW_FORWARD);
  const double vol = f.grid().cell_volume();
  for (auto& z : data) z *= vol;
  return SpectralField(f.grid(), Space::frequency, std::move(data));
}

inline SpectralField inverse_dft(const SpectralField& f) {
  if (f.space() != Space::frequency) throw ContractError("inverse_dft expects a frequency field");
  std::vector<cplx> data(f.values().begin(), f.values().end());
  detail::fftw_spatial_inplace(f.grid(), data, FFTW_BACKWARD);
  const double vol = f.grid().frequency_volume();
  for (auto& z : data) z *= vol;
  return SpectralField(f.grid(), Space::physical, std::move(data));
}

inline SpectralField to_frequency(const SpectralField& f) {
  return f.space() == Space::frequency ? f : forward_dft(f);
}
inline SpectralField to_physical(const SpectralField& f) {
  return f.space() == Space::physical ? f : inverse_dft(f);
}

/// Frequency vector of a flat spatial index.
inline void frequency_vector(const SpectralGrid& grid, std::size_t flat, std::span<double> xi) {
  std::vector<std::size_t> ix(grid.dim());
  grid.spatial_index(flat, ix);
  for (std::size_t k = 0; k < grid.dim(); ++k) xi[k] = grid.frequency(k, ix[k]);
}

/// Evaluates fn(xi) on every lattice frequency; the result is indexed like a
/// spatial slot of a frequency field.
inline std::vector<cplx> lattice_symbol(const SpectralGrid& grid,
                                        const std::function<cplx(std::span<const double>)>& fn) {
  std::vector<cplx> out(grid.spatial_size());
  std::vector<std::size_t> ix(grid.dim());
  std::vector<double> xi(grid.dim());
  for (std::size_t s = 0; s < grid.spatial_size(); ++s) {
    grid.spatial_index(s, ix);
    for (std::size_t k = 0; k < grid.dim(); ++k) xi[k] = grid.frequency(k, ix[k]);
    out[s] = fn(xi);
  }
  return out;
}

/// Applies a lattice multiplier to every velocity slot. The output is in the
/// same space as the input.
inline SpectralField apply_multiplier(const SpectralField& f, std::span<const cplx> symbol) {
  if (symbol.size() != f.grid().spatial_size())
    throw ContractError("apply_multiplier: symbol size does not match the spatial lattice");
  const bool physical = f.space() == Space::physical;
  auto data = physical ? std::move(forward_dft(f)).release()
                       : std::vector<cplx>(f.values().begin(), f.values().end());
  const std::size_t nv = f.grid().velocity_size();
  for (std::size_t s = 0; s < symbol.size(); ++s)
    for (std::size_t q = 0; q < nv; ++q) data[s * nv + q] *= symbol[s];
  SpectralField out(f.grid(), Space::frequency, std::move(data));
  return physical ? inverse_dft(out) : out;
}

// ---------------------------------------------------------------------------
// Small field algebra used throughout.

inline double l2_norm_squared(const SpectralField& f) {
  double acc = 0.0;
  for (const auto& z : f.values()) acc += std::norm(z);
  double w = f.space() == Space::physical ? f.grid().cell_volume() : f.grid().frequency_volume();
  return acc * w * f.grid().velocity_cell_volume();
}

inline double l2_norm(const SpectralField& f) { return std::sqrt(l2_norm_squared(f)); }

/// Discrete L^p norm of a physical field (midpoint quadrature in x and p).
inline double lp_norm(const SpectralField& f, double p) {
  if (f.space() != Space::physical) throw ContractError("lp_norm expects a physical field");
  double acc = 0.0;
  for (const auto& z : f.values()) acc += std::pow(std::abs(z), p);
  return std::pow(acc * f.grid().cell_volume() * f.grid().velocity_cell_volume(), 1.0 / p);
}

inline double max_abs_difference(const SpectralField& a, const SpectralField& b) {
  if (a.size() != b.size()) throw ContractError("max_abs_difference: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs(const SpectralField& a) {
  double m = 0.0;
  for (const auto& z : a.values()) m = std::max(m, std::abs(z));
  return m;
}

inline SpectralField linear_combination(cplx a, const SpectralField& f, cplx b,
                                        const SpectralField& g) {
  if (!(f.grid() == g.grid()) || f.space() != g.space())
    throw ContractError("linear_combination: fields live on different grids or spaces");
  std::vector<cplx> v(f.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a * f[i] + b * g[i];
  return SpectralField(f.grid(), f.space(), std::move(v));
}

inline SpectralField pointwise_product(const SpectralField& f, const SpectralField& g) {
  if (f.space() != Space::physical || g.space() != Space::physical)
    throw ContractError("pointwise_product expects physical fields");
  const auto& gf = f.grid();
  const auto& gg = g.grid();
  if (gf.n() != gg.n() || gf.length() != gg.length())
    throw ContractError("pointwise_product: spatial grids differ");
  // g may be spatial-only and is then broadcast over the velocity axes of f.
  const std::size_t nv = gf.velocity_size();
  std::vector<cplx> v(f.size());
  if (gg.velocity_size() == 1 && nv != 1) {
    for (std::size_t s = 0; s < gf.spatial_size(); ++s)
      for (std::size_t q = 0; q < nv; ++q) v[s * nv + q] = f[s * nv + q] * g[s];
  } else {
    if (f.size() != g.size()) throw ContractError("pointwise_product: size mismatch");
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f[i] * g[i];
  }
  return SpectralField(gf, Space::physical, std::move(v));
}

/// Spatial mean per velocity slot, subtracted. Physical fields only.
inline SpectralField subtract_spatial_mean(const SpectralField& f) {
  if (f.space() != Space::physical) throw ContractError("subtract_spatial_mean expects a physical field");
  const auto& g = f.grid();
  const std::size_t nv = g.velocity_size();
  std::vector<cplx> v(f.values().begin(), f.values().end());
  for (std::size_t q = 0; q < nv; ++q) {
    cplx mean = 0.0;
    for (std::size_t s = 0; s < g.spatial_size(); ++s) mean += v[s * nv + q];
    mean /= static_cast<double>(g.spatial_size());
    for (std::size_t s = 0; s < g.spatial_size(); ++s) v[s * nv + q] -= mean;
  }
  return SpectralField(g, Space::physical, std::move(v));
}

/// Extracts the spatial field at velocity slot q.
inline SpectralField velocity_slice(const SpectralField& f, std::size_t q) {
  const auto& g = f.grid();
  std::vector<cplx> v(g.spatial_size());
  for (std::size_t s = 0; s < v.size(); ++s) v[s] = f.at(s, q);
  return SpectralField(g.spatial(), f.space(), std::move(v));
}

}  // namespace hpm
