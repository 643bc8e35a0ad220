// hpm/hmeasure.hpp
//
// Numerical H_P-measures. For a sequence u_n -> 0 the bilinear form
//   V_n = sum_xi psi(pi_P(xi)) F(phi1 u_n)(xi) conj(F(phi2 u_n)(xi)) dxi
// is evaluated on the lattice and its limit in n is estimated by tail
// averaging. The measure itself is discretized on x-cells (squared smooth
// partition of a window inside the torus) times P-cells (kernel partition of
// unity over a mesh of P), which keeps positivity and Cauchy-Schwarz exact at
// every n.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hpm/anisotropy.hpp"
#include "hpm/errors.hpp"
#include "hpm/field_io.hpp"
#include "hpm/multiplier.hpp"
#include "hpm/parallel.hpp"
#include "hpm/spectral.hpp"

namespace hpm {

using SpatialFn = std::function<cplx(std::span<const double>)>;

struct BilinearValue {
  cplx value = 0.0;
  bool support_warning = false;  // a test function does not vanish near the boundary
};

namespace detail {

inline void require_spatial(const SpectralField& u, const char* who) {
  if (u.space() != Space::physical) throw ContractError(std::string(who) + ": expects a physical field");
  if (u.grid().velocity_dim() != 0) throw ContractError(std::string(who) + ": expects a field without velocity axes");
}

/// True if phi is non-negligible within 10% of the boundary on any axis.
inline bool touches_boundary(const SpectralField& phi) {
  const auto& g = phi.grid();
  const double scale = max_abs(phi);
  if (scale == 0.0) return false;
  std::vector<std::size_t> ix(g.dim());
  for (std::size_t s = 0; s < g.spatial_size(); ++s) {
    if (std::abs(phi[s]) <= 1e-12 * scale) continue;
    g.spatial_index(s, ix);
    for (std::size_t k = 0; k < g.dim(); ++k) {
      const double x = g.x_node(k, ix[k]);
      if (x < 0.1 * g.length()[k] || x > 0.9 * g.length()[k]) return true;
    }
  }
  return false;
}

}  // namespace detail

/// Frequency form with pre-sampled test functions on the spatial grid.
inline BilinearValue bilinear_form(const SpectralField& u1, const SpectralField& u2, const SpectralField& phi1,
                                   const SpectralField& phi2, const SymbolOnP& psi,
                                   const AnisotropyProfile& profile) {
  detail::require_spatial(u1, "bilinear_form");
  detail::require_spatial(u2, "bilinear_form");
  if (!(u1.grid() == u2.grid())) throw ContractError("bilinear_form: fields live on different grids");
  BilinearValue out;
  out.support_warning = detail::touches_boundary(phi1) || detail::touches_boundary(phi2);
  const auto F1 = forward_dft(pointwise_product(phi1, u1));
  const auto F2 = forward_dft(pointwise_product(phi2, u2));
  const auto sym = projected_symbol_lattice(u1.grid(), psi, profile);
  cplx acc = 0.0;
  for (std::size_t s = 0; s < sym.size(); ++s) acc += sym[s] * F1[s] * std::conj(F2[s]);
  out.value = acc * u1.grid().frequency_volume();
  return out;
}

inline BilinearValue bilinear_form(const SpectralField& u1, const SpectralField& u2, const SpatialFn& phi1,
                                   const SpatialFn& phi2, const SymbolOnP& psi, const AnisotropyProfile& profile) {
  const auto g = u1.grid();
  return bilinear_form(u1, u2, SpectralField::sample_x(g, phi1), SpectralField::sample_x(g, phi2), psi, profile);
}

inline BilinearValue bilinear_form(const SpectralField& u, const SpatialFn& phi1, const SpatialFn& phi2,
                                   const SymbolOnP& psi, const AnisotropyProfile& profile) {
  return bilinear_form(u, u, phi1, phi2, psi, profile);
}

/// The same form evaluated in physical space: integral of A_psi(phi1 u1) conj(phi2 u2).
inline cplx bilinear_form_physical(const SpectralField& u1, const SpectralField& u2, const SpatialFn& phi1,
                                   const SpatialFn& phi2, const SymbolOnP& psi, const AnisotropyProfile& profile) {
  detail::require_spatial(u1, "bilinear_form_physical");
  const auto& g = u1.grid();
  const auto a = apply_projected_symbol(pointwise_product(SpectralField::sample_x(g, phi1), u1), psi, profile);
  const auto b = pointwise_product(SpectralField::sample_x(g, phi2), u2);
  cplx acc = 0.0;
  for (std::size_t s = 0; s < a.size(); ++s) acc += a[s] * std::conj(b[s]);
  return acc * g.cell_volume();
}

// ---------------------------------------------------------------------------
// Sequence generators.

/// kappa_k(n) = round(n^(1/alpha_k) c_k L_k) / L_k: the lattice frequency
/// nearest to the fibre through c at parameter t = n^l.
inline std::vector<double> oscillation_frequency(const SpectralGrid& grid, const AnisotropyProfile& profile,
                                                 std::span<const double> c, long n) {
  if (c.size() != grid.dim() || profile.dim() != grid.dim())
    throw DomainError("oscillation_frequency: dimension mismatch");
  if (n <= 0) throw DomainError("oscillation_frequency: n must be positive");
  std::vector<double> kappa(c.size());
  bool nonzero = false;
  for (std::size_t k = 0; k < c.size(); ++k) {
    const double L = grid.length()[k];
    const double m = std::round(std::pow(static_cast<double>(n), 1.0 / profile.alpha()[k]) * c[k] * L);
    if (2.0 * std::abs(m) >= static_cast<double>(grid.n()[k]))
      throw DomainError("oscillation_frequency: kappa(" + std::to_string(n) + ") exceeds the resolvable band on axis " +
                        std::to_string(k));
    kappa[k] = m / L;
    nonzero = nonzero || m != 0.0;
  }
  if (!nonzero) throw DomainError("oscillation_frequency: kappa(" + std::to_string(n) + ") is zero");
  return kappa;
}

/// v(x) exp(2 pi i kappa(n).x) minus its mean.
inline SpectralField oscillation_sequence(const AnisotropyProfile& profile, std::span<const double> c,
                                          const SpectralField& v, long n) {
  detail::require_spatial(v, "oscillation_sequence");
  const auto& g = v.grid();
  const auto kappa = oscillation_frequency(g, profile, c, n);
  auto wave = SpectralField::sample_x(g, [&](std::span<const double> x) {
    double ph = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) ph += kappa[k] * x[k];
    return std::polar(1.0, 2.0 * std::numbers::pi * ph);
  });
  return subtract_spatial_mean(pointwise_product(wave, v));
}

/// n^(sigma/2) v(n^(1/alpha_k)(x_k - x0_k)), sigma = sum 1/alpha_k, with
/// x - x0 wrapped into [-L/2, L/2). Preserves the L2 norm of compactly
/// supported v once the rescaled support fits in the torus.
inline SpectralField concentration_sequence(const SpectralGrid& grid, const AnisotropyProfile& profile,
                                            std::span<const double> x0, const SpatialFn& v, long n) {
  if (x0.size() != grid.dim() || profile.dim() != grid.dim())
    throw DomainError("concentration_sequence: dimension mismatch");
  if (n <= 0) throw DomainError("concentration_sequence: n must be positive");
  double sigma = 0.0;
  for (double a : profile.alpha()) sigma += 1.0 / a;
  const double nd = static_cast<double>(n);
  const double amp = std::pow(nd, 0.5 * sigma);
  std::vector<double> y(grid.dim());
  auto f = SpectralField::sample_x(grid.spatial(), [&](std::span<const double> x) {
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double L = grid.length()[k];
      double r = x[k] - x0[k];
      r -= L * std::floor(r / L + 0.5);
      y[k] = std::pow(nd, 1.0 / profile.alpha()[k]) * r;
    }
    return amp * v(y);
  });
  return subtract_spatial_mean(f);
}

/// A sequence n -> u_n. Calling it returns a physical field with zero spatial
/// mean in every velocity slot.
struct SequenceGenerator {
  std::string kind;
  SpectralGrid grid;
  std::function<SpectralField(long)> make;

  SpectralField operator()(long n) const { return subtract_spatial_mean(to_physical(make(n))); }
};

inline SequenceGenerator oscillation_generator(const AnisotropyProfile& profile, std::vector<double> c,
                                               SpectralField v) {
  detail::require_spatial(v, "oscillation_generator");
  SpectralGrid g = v.grid();
  return {"oscillation", g, [profile, c = std::move(c), v = std::move(v)](long n) {
            return oscillation_sequence(profile, c, v, n);
          }};
}

inline SequenceGenerator concentration_generator(const SpectralGrid& grid, const AnisotropyProfile& profile,
                                                 std::vector<double> x0, SpatialFn v) {
  return {"concentration", grid.spatial(), [grid, profile, x0 = std::move(x0), v = std::move(v)](long n) {
            return concentration_sequence(grid, profile, x0, v, n);
          }};
}

/// u_n read from field files, one per index.
inline SequenceGenerator file_generator(std::map<long, std::filesystem::path> files) {
  if (files.empty()) throw DomainError("file_generator: no files");
  const SpectralGrid g = read_field(files.begin()->second).grid();
  return {"file", g, [files = std::move(files), g](long n) {
            auto it = files.find(n);
            if (it == files.end()) throw DomainError("file_generator: no field for n = " + std::to_string(n));
            auto f = read_field(it->second);
            if (!(f.grid() == g)) throw FormatError("file_generator: " + it->second.string() + " has a different grid");
            return f;
          }};
}

/// u_n(x, p) = g(p) w_n(x) for a spatial generator w and a full grid whose
/// spatial part matches w.
inline SequenceGenerator with_velocity_profile(const SequenceGenerator& w, const SpectralGrid& full,
                                               std::function<cplx(std::span<const double>)> g) {
  if (!(full.spatial() == w.grid.spatial())) throw ContractError("with_velocity_profile: spatial grids differ");
  return {w.kind, full, [w, full, g = std::move(g)](long n) {
            auto profile = SpectralField::sample(full, [&](std::span<const double>, std::span<const double> p) {
              return g(p);
            });
            return pointwise_product(profile, w(n));
          }};
}

// ---------------------------------------------------------------------------
// Cells.

namespace detail {

inline double smoothstep(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * (3.0 - 2.0 * s);
}

/// One-dimensional cell functions eta_0..eta_{K-1} on [0, L]. Breakpoints
/// b_0..b_K split [0.1L, 0.9L]; around each one a transition of half-width w
/// hands eta_{j-1} = cos(theta) over to eta_j = sin(theta), so the squares
/// sum to a window that vanishes outside [0.1L, 0.9L]. C1 everywhere.
inline double cell_profile_1d(double x, std::size_t a, std::size_t K, double L) {
  const double w = 0.8 * L / (4.0 * static_cast<double>(K) + 2.0);
  const double step = 4.0 * w;
  const double b_lo = 0.1 * L + w + static_cast<double>(a) * step;
  const double b_hi = b_lo + step;
  if (x <= b_lo - w || x >= b_hi + w) return 0.0;
  const double half_pi = 0.5 * std::numbers::pi;
  const double rise = std::sin(half_pi * smoothstep((x - b_lo + w) / (2.0 * w)));
  const double fall = std::cos(half_pi * smoothstep((x - b_hi + w) / (2.0 * w)));
  return rise * fall;
}

}  // namespace detail

/// Tensor-product x-cells; eta_a(x) = prod_k eta_{a_k}(x_k), last axis fastest.
class XCells {
 public:
  XCells(const SpectralGrid& grid, std::size_t per_axis) : grid_(grid.spatial()), per_axis_(per_axis) {
    if (per_axis == 0) throw DomainError("XCells: need at least one cell per axis");
    count_ = 1;
    for (std::size_t k = 0; k < grid_.dim(); ++k) count_ *= per_axis;
    values_.assign(count_, std::vector<double>(grid_.spatial_size()));
    volume_.assign(count_, 0.0);
    std::vector<std::size_t> ix(grid_.dim()), ia(grid_.dim());
    for (std::size_t a = 0; a < count_; ++a) {
      cell_index(a, ia);
      for (std::size_t s = 0; s < grid_.spatial_size(); ++s) {
        grid_.spatial_index(s, ix);
        double v = 1.0;
        for (std::size_t k = 0; k < grid_.dim() && v != 0.0; ++k)
          v *= detail::cell_profile_1d(grid_.x_node(k, ix[k]), ia[k], per_axis_, grid_.length()[k]);
        values_[a][s] = v;
        volume_[a] += v * v;
      }
      volume_[a] *= grid_.cell_volume();
    }
  }

  std::size_t count() const noexcept { return count_; }
  std::size_t per_axis() const noexcept { return per_axis_; }
  const SpectralGrid& grid() const noexcept { return grid_; }

  void cell_index(std::size_t a, std::span<std::size_t> out) const {
    for (std::size_t k = grid_.dim(); k-- > 0;) {
      out[k] = a % per_axis_;
      a /= per_axis_;
    }
  }

  /// eta_a sampled on the spatial nodes.
  SpectralField function(std::size_t a) const {
    return SpectralField(grid_, Space::physical, std::vector<cplx>(values_[a].begin(), values_[a].end()));
  }
  std::span<const double> samples(std::size_t a) const { return values_[a]; }

  /// Integral of eta_a^2.
  double volume(std::size_t a) const { return volume_[a]; }

 private:
  SpectralGrid grid_;
  std::size_t per_axis_;
  std::size_t count_ = 0;
  std::vector<std::vector<double>> values_;
  std::vector<double> volume_;
};

/// P-cells: zeta_b(xi) = K(angle(xi, m_b) / h) / sum_c K(angle(xi, m_c) / h),
/// K(r) = (1 - r^2)^2 on r < 1, where angles are between the unit directions
/// of points of P and h is 1.5 times the largest nearest-neighbour angle of
/// the mesh (capped at pi/2).
class PCells {
 public:
  PCells(const AnisotropyProfile& profile, std::size_t resolution) : profile_(profile) {
    mesh_ = mesh_P(profile, resolution);
    dirs_.reserve(mesh_.size());
    for (const auto& m : mesh_) dirs_.push_back(unit(m.xi));
    spacing_ = 0.0;
    for (std::size_t b = 0; b < dirs_.size(); ++b) {
      double nearest = std::numbers::pi;
      for (std::size_t c = 0; c < dirs_.size(); ++c)
        if (c != b) nearest = std::min(nearest, angle(dirs_[b], dirs_[c]));
      spacing_ = std::max(spacing_, nearest);
    }
    bandwidth_ = std::min(1.5 * spacing_, 0.5 * std::numbers::pi);
  }

  std::size_t count() const noexcept { return mesh_.size(); }
  const std::vector<PMeshPoint>& points() const noexcept { return mesh_; }
  double spacing() const noexcept { return spacing_; }
  double bandwidth() const noexcept { return bandwidth_; }
  const AnisotropyProfile& profile() const noexcept { return profile_; }

  /// Nonzero (cell, weight) pairs for a nonzero frequency; weights sum to 1.
  std::vector<std::pair<std::size_t, double>> weights(std::span<const double> xi) const {
    const auto u = unit(project_to_P(xi, profile_));
    std::vector<std::pair<std::size_t, double>> out;
    double total = 0.0;
    std::size_t nearest = 0;
    double best = 10.0;
    for (std::size_t b = 0; b < dirs_.size(); ++b) {
      const double t = angle(u, dirs_[b]);
      if (t < best) best = t, nearest = b;
      const double r = t / bandwidth_;
      if (r < 1.0) {
        const double k = (1.0 - r * r) * (1.0 - r * r);
        out.emplace_back(b, k);
        total += k;
      }
    }
    if (total == 0.0) return {{nearest, 1.0}};
    for (auto& [b, w] : out) w /= total;
    return out;
  }

  /// Cells within bandwidth + spacing of the direction of pi_P(xi).
  std::vector<std::size_t> adjacent(std::span<const double> xi) const {
    const auto u = unit(project_to_P(xi, profile_));
    std::vector<std::size_t> out;
    for (std::size_t b = 0; b < dirs_.size(); ++b)
      if (angle(u, dirs_[b]) <= bandwidth_ + spacing_) out.push_back(b);
    return out;
  }

 private:
  static std::vector<double> unit(std::span<const double> v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    std::vector<double> u(v.begin(), v.end());
    for (double& x : u) x /= n;
    return u;
  }
  static double angle(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
    return std::acos(std::clamp(dot, -1.0, 1.0));
  }

  AnisotropyProfile profile_;
  std::vector<PMeshPoint> mesh_;
  std::vector<std::vector<double>> dirs_;
  double spacing_ = 0.0;
  double bandwidth_ = 0.0;
};

// ---------------------------------------------------------------------------
// Velocity bases, projections, mollification.

struct VelocityBasis {
  SpectralGrid grid;
  std::vector<std::vector<double>> functions;  // each sampled on the velocity nodes

  std::size_t size() const noexcept { return functions.size(); }
};

/// Throws DomainError unless sum_q e_i e_j dp = delta_ij to 1e-10.
inline void check_orthonormal(const VelocityBasis& basis) {
  const double w = basis.grid.velocity_cell_volume();
  for (std::size_t i = 0; i < basis.size(); ++i) {
    if (basis.functions[i].size() != basis.grid.velocity_size())
      throw DomainError("velocity basis: function " + std::to_string(i) + " has the wrong length");
    for (std::size_t j = 0; j <= i; ++j) {
      double dot = 0.0;
      for (std::size_t q = 0; q < basis.grid.velocity_size(); ++q)
        dot += basis.functions[i][q] * basis.functions[j][q];
      if (std::abs(dot * w - (i == j ? 1.0 : 0.0)) > 1e-10)
        throw DomainError("velocity basis is not orthonormal at (" + std::to_string(i) + "," + std::to_string(j) + ")");
    }
  }
}

/// Tensor cosine family cos(k pi (p - p_lo) / P), normalized, ordered by
/// total degree and then lexicographically. Exactly orthonormal on the
/// midpoint nodes while every degree stays below the node count.
inline VelocityBasis cosine_basis(const SpectralGrid& grid, std::size_t count) {
  const std::size_t m = grid.velocity_dim();
  if (m == 0) throw DomainError("cosine_basis: grid has no velocity axes");
  std::vector<std::vector<std::size_t>> degrees;
  for (std::size_t total = 0; degrees.size() < count; ++total) {
    std::size_t limit = 0;
    for (auto n : grid.n_velocity()) limit += n;
    if (total >= limit) throw DomainError("cosine_basis: velocity grid too coarse for the requested size");
    std::vector<std::size_t> deg(m, 0);
    std::vector<std::vector<std::size_t>> level;
    std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t k, std::size_t left) {
      if (k + 1 == m) {
        deg[k] = left;
        level.push_back(deg);
        return;
      }
      for (std::size_t v = left + 1; v-- > 0;) {
        deg[k] = v;
        rec(k + 1, left - v);
      }
    };
    rec(0, total);
    std::sort(level.begin(), level.end());
    for (auto& d : level) {
      bool ok = true;
      for (std::size_t k = 0; k < m; ++k) ok = ok && d[k] < grid.n_velocity()[k];
      if (ok && degrees.size() < count) degrees.push_back(d);
    }
  }
  VelocityBasis basis{grid, {}};
  std::vector<std::size_t> ip(m);
  for (const auto& d : degrees) {
    std::vector<double> e(grid.velocity_size());
    for (std::size_t q = 0; q < e.size(); ++q) {
      grid.velocity_index(q, ip);
      double v = 1.0;
      for (std::size_t k = 0; k < m; ++k) {
        const double P = grid.velocity_length()[k];
        const double s = (static_cast<double>(ip[k]) + 0.5) / static_cast<double>(grid.n_velocity()[k]);
        v *= d[k] == 0 ? 1.0 / std::sqrt(P)
                       : std::sqrt(2.0 / P) * std::cos(static_cast<double>(d[k]) * std::numbers::pi * s);
      }
      e[q] = v;
    }
    basis.functions.push_back(std::move(e));
  }
  check_orthonormal(basis);
  return basis;
}

/// x -> integral e(p) u(x, p) dp.
inline SpectralField velocity_project(const SpectralField& u, std::span<const double> e) {
  const auto& g = u.grid();
  if (e.size() != g.velocity_size()) throw ContractError("velocity_project: weight length mismatch");
  const std::size_t nv = g.velocity_size();
  const double w = g.velocity_cell_volume();
  std::vector<cplx> out(g.spatial_size());
  for (std::size_t s = 0; s < out.size(); ++s) {
    cplx acc = 0.0;
    for (std::size_t q = 0; q < nv; ++q) acc += e[q] * u[s * nv + q];
    out[s] = acc * w;
  }
  return SpectralField(g.spatial(), u.space(), std::move(out));
}

/// Mollifier omega on R^m supported in the ball of the given radius.
struct VelocityKernel {
  std::function<double(std::span<const double>)> omega;
  double radius = 1.0;
  std::size_t dim = 1;
};

namespace detail {

/// Midpoint quadrature of a kernel over its support box.
inline double kernel_mass(const VelocityKernel& k) {
  const std::size_t per_axis = k.dim == 1 ? 4000 : k.dim == 2 ? 600 : 120;
  const double h = 2.0 * k.radius / static_cast<double>(per_axis);
  std::size_t total = 1;
  for (std::size_t j = 0; j < k.dim; ++j) total *= per_axis;
  std::vector<double> p(k.dim);
  double acc = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    std::size_t r = i;
    for (std::size_t j = k.dim; j-- > 0;) {
      p[j] = -k.radius + (static_cast<double>(r % per_axis) + 0.5) * h;
      r /= per_axis;
    }
    acc += k.omega(p);
  }
  return acc * std::pow(h, static_cast<double>(k.dim));
}

}  // namespace detail

/// exp(-1/(1 - |p|^2)) on the unit ball, normalized to mass 1.
inline VelocityKernel standard_velocity_kernel(std::size_t dim) {
  VelocityKernel k{[](std::span<const double> p) {
                     double r2 = 0.0;
                     for (double v : p) r2 += v * v;
                     return r2 < 1.0 ? std::exp(-1.0 / (1.0 - r2)) : 0.0;
                   },
                   1.0, dim};
  const double c = 1.0 / detail::kernel_mass(k);
  auto raw = k.omega;
  k.omega = [raw, c](std::span<const double> p) { return c * raw(p); };
  return k;
}

/// Periodic convolution along the velocity axes with omega_k(p) = k^m omega(k p),
/// sampled on the node offsets and renormalized to unit discrete mass.
inline SpectralField velocity_mollify(const SpectralField& u, int k, const VelocityKernel& kernel) {
  const auto& g = u.grid();
  const std::size_t m = g.velocity_dim();
  if (m == 0) throw ContractError("velocity_mollify: field has no velocity axes");
  if (kernel.dim != m) throw DomainError("velocity_mollify: kernel dimension does not match the velocity axes");
  if (k <= 0) throw DomainError("velocity_mollify: k must be positive");
  if (std::abs(detail::kernel_mass(kernel) - 1.0) > 1e-8) throw DomainError("velocity_mollify: kernel mass is not 1");

  // Offsets within the scaled support, as signed per-axis steps.
  std::vector<std::vector<long>> offsets;
  std::vector<double> weights;
  std::vector<long> reach(m);
  for (std::size_t j = 0; j < m; ++j)
    reach[j] = std::min<long>(static_cast<long>(std::floor(kernel.radius / (k * g.dp(j)))),
                              static_cast<long>(g.n_velocity()[j]) / 2);
  std::vector<long> off(m);
  std::vector<double> p(m);
  std::function<void(std::size_t)> rec = [&](std::size_t j) {
    if (j == m) {
      for (std::size_t i = 0; i < m; ++i) p[i] = static_cast<double>(k) * static_cast<double>(off[i]) * g.dp(i);
      const double w = kernel.omega(p);
      if (w > 0.0) {
        offsets.push_back(off);
        weights.push_back(w);
      }
      return;
    }
    for (long o = -reach[j]; o <= reach[j]; ++o) {
      off[j] = o;
      rec(j + 1);
    }
  };
  rec(0);
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw DomainError("velocity_mollify: kernel is not resolved by the velocity grid");
  for (double& w : weights) w /= total;

  const std::size_t nv = g.velocity_size();
  std::vector<cplx> out(u.size());
  std::vector<std::size_t> ip(m), iq(m);
  std::vector<std::size_t> shifted(nv * offsets.size());
  for (std::size_t q = 0; q < nv; ++q) {
    g.velocity_index(q, ip);
    for (std::size_t o = 0; o < offsets.size(); ++o) {
      std::size_t flat = 0;
      for (std::size_t j = 0; j < m; ++j) {
        const long n = static_cast<long>(g.n_velocity()[j]);
        const long idx = ((static_cast<long>(ip[j]) - offsets[o][j]) % n + n) % n;
        flat = flat * static_cast<std::size_t>(n) + static_cast<std::size_t>(idx);
      }
      shifted[q * offsets.size() + o] = flat;
    }
  }
  for (std::size_t s = 0; s < g.spatial_size(); ++s)
    for (std::size_t q = 0; q < nv; ++q) {
      cplx acc = 0.0;
      for (std::size_t o = 0; o < offsets.size(); ++o) acc += weights[o] * u[s * nv + shifted[q * offsets.size() + o]];
      out[s * nv + q] = acc;
    }
  return SpectralField(g, u.space(), std::move(out));
}

// ---------------------------------------------------------------------------
// Limits and cell measures.

struct LimitEstimate {
  cplx value = 0.0;
  double error = 0.0;
};

/// Mean of the last ceil(N/2) values; error is the largest deviation from it
/// within that tail.
inline LimitEstimate estimate_limit(std::span<const cplx> values) {
  if (values.size() < 3) throw DomainError("estimate_limit: need at least 3 values");
  const std::size_t tail = (values.size() + 1) / 2;
  const auto first = values.size() - tail;
  LimitEstimate out;
  for (std::size_t i = first; i < values.size(); ++i) out.value += values[i];
  out.value /= static_cast<double>(tail);
  for (std::size_t i = first; i < values.size(); ++i) out.error = std::max(out.error, std::abs(values[i] - out.value));
  return out;
}

/// Cell measure of a vector of components U_0..U_{N-1}:
///   mu_ij(a, b) = sum_xi zeta_b(xi) F(eta_a U_i) conj(F(eta_a U_j)) dxi,
/// per n and extrapolated. trace = sum_i weight_i Re mu_ii, marginal(a) = sum_b trace(a, b).
struct MatrixMeasure {
  std::size_t basis_size = 0;
  std::size_t x_cells = 0;
  std::size_t p_cells = 0;
  std::vector<long> n_list;
  std::vector<double> x_cell_volume;  // integral of eta_a^2
  std::vector<cplx> raw;              // [n][i][j][a][b]
  std::vector<cplx> entries;          // extrapolated, [i][j][a][b]
  std::vector<double> errors;         // tail deviation, [i][j][a][b]
  std::vector<double> trace;          // [a][b]
  std::vector<double> marginal;       // [a]

  std::size_t index(std::size_t i, std::size_t j, std::size_t a, std::size_t b) const {
    return ((i * basis_size + j) * x_cells + a) * p_cells + b;
  }
  cplx mu(std::size_t i, std::size_t j, std::size_t a, std::size_t b) const { return entries[index(i, j, a, b)]; }
  cplx raw_mu(std::size_t n_pos, std::size_t i, std::size_t j, std::size_t a, std::size_t b) const {
    return raw[n_pos * entries.size() + index(i, j, a, b)];
  }
  double trace_at(std::size_t a, std::size_t b) const { return trace[a * p_cells + b]; }
  /// marginal(a) / integral of eta_a^2.
  double density(std::size_t a) const { return x_cell_volume[a] > 0.0 ? marginal[a] / x_cell_volume[a] : 0.0; }
};

namespace detail {

inline void check_n_list(std::span<const long> n_list) {
  if (n_list.size() < 3) throw DomainError("n_list must have at least 3 entries");
  for (std::size_t i = 1; i < n_list.size(); ++i)
    if (n_list[i] <= n_list[i - 1]) throw DomainError("n_list must be strictly increasing");
}

inline MatrixMeasure assemble_cell_measure(const std::function<std::vector<SpectralField>(long)>& components,
                                           std::size_t basis_size, std::span<const double> trace_weights,
                                           const XCells& xcells, const PCells& pcells, std::span<const long> n_list,
                                           std::size_t jobs) {
  check_n_list(n_list);
  const auto& g = xcells.grid();
  if (g.dim() != pcells.profile().dim()) throw DomainError("cell measure: profile/grid dimension mismatch");
  MatrixMeasure M;
  M.basis_size = basis_size;
  M.x_cells = xcells.count();
  M.p_cells = pcells.count();
  M.n_list.assign(n_list.begin(), n_list.end());
  for (std::size_t a = 0; a < M.x_cells; ++a) M.x_cell_volume.push_back(xcells.volume(a));
  const std::size_t per_n = basis_size * basis_size * M.x_cells * M.p_cells;

  // zeta_b on the lattice, sparse per frequency.
  std::vector<std::vector<std::pair<std::size_t, double>>> zeta(g.spatial_size());
  std::vector<double> xi(g.dim());
  for (std::size_t s = 1; s < g.spatial_size(); ++s) {
    frequency_vector(g, s, xi);
    zeta[s] = pcells.weights(xi);
  }

  M.raw.assign(per_n * n_list.size(), 0.0);
  const double vol = g.frequency_volume();
  parallel_for(n_list.size(), jobs, [&](std::size_t t) {
    const auto U = components(n_list[t]);
    if (U.size() != basis_size) throw ContractError("cell measure: component count mismatch");
    cplx* out = M.raw.data() + t * per_n;
    std::vector<SpectralField> F(basis_size);
    for (std::size_t a = 0; a < M.x_cells; ++a) {
      const auto eta = xcells.function(a);
      for (std::size_t i = 0; i < basis_size; ++i) F[i] = forward_dft(pointwise_product(eta, U[i]));
      for (std::size_t i = 0; i < basis_size; ++i)
        for (std::size_t j = i; j < basis_size; ++j) {
          std::vector<cplx> acc(M.p_cells, 0.0);
          for (std::size_t s = 1; s < g.spatial_size(); ++s) {
            const cplx z = F[i][s] * std::conj(F[j][s]);
            for (const auto& [b, w] : zeta[s]) acc[b] += w * z;
          }
          for (std::size_t b = 0; b < M.p_cells; ++b) {
            out[M.index(i, j, a, b)] = acc[b] * vol;
            if (i != j) out[M.index(j, i, a, b)] = std::conj(acc[b] * vol);
            else out[M.index(i, i, a, b)] = acc[b].real() * vol;
          }
        }
    }
  });

  M.entries.resize(per_n);
  M.errors.resize(per_n);
  std::vector<cplx> seq(n_list.size());
  for (std::size_t e = 0; e < per_n; ++e) {
    for (std::size_t t = 0; t < n_list.size(); ++t) seq[t] = M.raw[t * per_n + e];
    const auto lim = estimate_limit(seq);
    M.entries[e] = lim.value;
    M.errors[e] = lim.error;
  }
  M.trace.assign(M.x_cells * M.p_cells, 0.0);
  M.marginal.assign(M.x_cells, 0.0);
  for (std::size_t a = 0; a < M.x_cells; ++a)
    for (std::size_t b = 0; b < M.p_cells; ++b) {
      double nu = 0.0;
      for (std::size_t i = 0; i < basis_size; ++i) nu += trace_weights[i] * M.mu(i, i, a, b).real();
      M.trace[a * M.p_cells + b] = nu;
      M.marginal[a] += nu;
    }
  return M;
}

}  // namespace detail

/// Scalar measure of a spatial sequence (basis size 1, trace = mu).
inline MatrixMeasure scalar_hmeasure(const SequenceGenerator& gen, const XCells& xcells, const PCells& pcells,
                                     std::span<const long> n_list, std::size_t jobs = 1) {
  if (gen.grid.velocity_dim() != 0) throw ContractError("scalar_hmeasure: generator has velocity axes");
  const double w[] = {1.0};
  return detail::assemble_cell_measure([&](long n) { return std::vector<SpectralField>{gen(n)}; }, 1, w, xcells,
                                       pcells, n_list, jobs);
}

/// Matrix measure of u_n(x, p) against an orthonormal velocity basis;
/// trace = sum_i 2^-(i+1) mu_ii (0-based i).
inline MatrixMeasure matrix_hmeasure(const SequenceGenerator& gen, const VelocityBasis& basis, const XCells& xcells,
                                     const PCells& pcells, std::span<const long> n_list, std::size_t jobs = 1) {
  if (gen.grid.velocity_dim() == 0) throw ContractError("matrix_hmeasure: generator has no velocity axes");
  if (basis.grid.n_velocity() != gen.grid.n_velocity() || basis.grid.velocity_length() != gen.grid.velocity_length())
    throw DomainError("matrix_hmeasure: basis lives on a different velocity grid");
  if (basis.size() == 0) throw DomainError("matrix_hmeasure: empty basis");
  check_orthonormal(basis);
  std::vector<double> w(basis.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::ldexp(1.0, -static_cast<int>(i + 1));
  return detail::assemble_cell_measure(
      [&](long n) {
        const auto u = gen(n);
        std::vector<SpectralField> U;
        for (const auto& e : basis.functions) U.push_back(velocity_project(u, e));
        return U;
      },
      basis.size(), w, xcells, pcells, n_list, jobs);
}

/// Sum over p, q of rho(p, q) times the bilinear form of u(., p) and u(., q).
inline cplx velocity_bilinear_form(const SpectralField& u,
                                   const std::function<cplx(std::span<const double>, std::span<const double>)>& rho,
                                   const SpatialFn& phi1, const SpatialFn& phi2, const SymbolOnP& psi,
                                   const AnisotropyProfile& profile) {
  const auto& g = u.grid();
  if (u.space() != Space::physical) throw ContractError("velocity_bilinear_form expects a physical field");
  const auto sp = g.spatial();
  const auto p1 = SpectralField::sample_x(sp, phi1);
  const auto p2 = SpectralField::sample_x(sp, phi2);
  const std::size_t nv = g.velocity_size();
  std::vector<SpectralField> F1(nv), F2(nv);
  for (std::size_t q = 0; q < nv; ++q) {
    const auto slice = velocity_slice(u, q);
    F1[q] = forward_dft(pointwise_product(p1, slice));
    F2[q] = forward_dft(pointwise_product(p2, slice));
  }
  const auto sym = projected_symbol_lattice(sp, psi, profile);
  std::vector<std::size_t> ia(g.velocity_dim()), ib(g.velocity_dim());
  std::vector<double> pa(g.velocity_dim()), pb(g.velocity_dim());
  cplx total = 0.0;
  for (std::size_t qa = 0; qa < nv; ++qa) {
    g.velocity_index(qa, ia);
    for (std::size_t j = 0; j < pa.size(); ++j) pa[j] = g.p_node(j, ia[j]);
    for (std::size_t qb = 0; qb < nv; ++qb) {
      g.velocity_index(qb, ib);
      for (std::size_t j = 0; j < pb.size(); ++j) pb[j] = g.p_node(j, ib[j]);
      const cplx r = rho(pa, pb);
      if (r == 0.0) continue;
      cplx acc = 0.0;
      for (std::size_t s = 0; s < sym.size(); ++s) acc += sym[s] * F1[qa][s] * std::conj(F2[qb][s]);
      total += r * acc;
    }
  }
  const double w = g.velocity_cell_volume();
  return total * sp.frequency_volume() * w * w;
}

/// Share of the extrapolated mass of mu_ii that lies in the given P-cells.
inline double mass_fraction(const MatrixMeasure& M, std::size_t i, std::span<const std::size_t> cells) {
  double inside = 0.0, total = 0.0;
  std::vector<bool> mark(M.p_cells, false);
  for (auto b : cells) mark[b] = true;
  for (std::size_t a = 0; a < M.x_cells; ++a)
    for (std::size_t b = 0; b < M.p_cells; ++b) {
      const double v = M.mu(i, i, a, b).real();
      total += v;
      if (mark[b]) inside += v;
    }
  return total > 0.0 ? inside / total : 0.0;
}

struct MarginalReport {
  std::vector<double> lr_norm;  // discrete L^{r'} norm of the density per refinement
  std::vector<double> ratios;   // lr_norm[k + 1] / lr_norm[k]
  double min_conditional_mass = 0.0;
  double max_slicing_defect = 0.0;  // |sum_b nu(a, b) - marginal(a)|
};

/// Checks the x-marginal of the trace across refinements and the discrete
/// slicing of nu over P-cells.
inline MarginalReport marginal_density_check(std::span<const MatrixMeasure> levels, double r_prime) {
  if (levels.size() < 2) throw DomainError("marginal_density_check: need at least two refinements");
  if (!(r_prime > 1.0)) throw DomainError("marginal_density_check: r' must exceed 1");
  MarginalReport rep;
  for (const auto& M : levels) {
    double acc = 0.0;
    for (std::size_t a = 0; a < M.x_cells; ++a) {
      acc += std::pow(std::abs(M.density(a)), r_prime) * M.x_cell_volume[a];
      double sum = 0.0;
      for (std::size_t b = 0; b < M.p_cells; ++b) {
        const double nu = M.trace_at(a, b);
        rep.min_conditional_mass = std::min(rep.min_conditional_mass, nu);
        if (nu < -1e-9)
          throw IntegrityError("negative conditional mass " + std::to_string(nu) + " at x-cell " + std::to_string(a) +
                               ", P-cell " + std::to_string(b));
        sum += nu;
      }
      rep.max_slicing_defect = std::max(rep.max_slicing_defect, std::abs(sum - M.marginal[a]));
    }
    rep.lr_norm.push_back(std::pow(acc, 1.0 / r_prime));
  }
  for (std::size_t k = 0; k + 1 < rep.lr_norm.size(); ++k)
    rep.ratios.push_back(rep.lr_norm[k] > 0.0 ? rep.lr_norm[k + 1] / rep.lr_norm[k]
                                              : (rep.lr_norm[k + 1] == 0.0 ? 1.0 : INFINITY));
  return rep;
}

}  // namespace hpm
