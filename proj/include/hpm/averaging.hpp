// hpm/averaging.hpp
//
// Velocity averaging for
//   sum_k d^{alpha_k}_{x_k}(a_k(x, p) u) = d^kappa_p G.
// Transport solutions are computed exactly in Fourier space, averages by
// midpoint quadrature in p, and the non-degeneracy condition
//   A(x, xi, p) = sum_k a_k(x, p) (2 pi i xi_k)^{alpha_k} != 0 for a.e. p
// is scanned on a mesh of P.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "hpm/anisotropy.hpp"
#include "hpm/errors.hpp"
#include "hpm/hmeasure.hpp"
#include "hpm/multiplier.hpp"
#include "hpm/parallel.hpp"
#include "hpm/spectral.hpp"

namespace hpm {

using CoefficientFn = std::function<cplx(std::span<const double> x, std::span<const double> p)>;

/// coeff(x, p) * prod_k (2 pi i xi_k)^{orders_k}; an order of 0 drops the axis.
struct SymbolTerm {
  CoefficientFn coeff;
  std::vector<double> orders;
};

/// One term per axis: a_k(x, p) (2 pi i xi_k)^{alpha_k}.
inline std::vector<SymbolTerm> diagonal_terms(const std::vector<CoefficientFn>& a, std::span<const double> alpha) {
  if (a.size() != alpha.size()) throw DomainError("diagonal_terms: need one coefficient per axis");
  std::vector<SymbolTerm> terms;
  for (std::size_t k = 0; k < a.size(); ++k) {
    std::vector<double> o(alpha.size(), 0.0);
    o[k] = alpha[k];
    terms.push_back({a[k], std::move(o)});
  }
  return terms;
}

inline cplx term_factor(std::span<const double> xi, std::span<const double> orders) {
  cplx f = 1.0;
  for (std::size_t k = 0; k < orders.size(); ++k)
    if (orders[k] != 0.0) f *= fractional_factor(xi[k], orders[k]);
  return f;
}

inline cplx principal_symbol(std::span<const double> x, std::span<const double> xi, std::span<const double> p,
                             const std::vector<SymbolTerm>& terms) {
  cplx A = 0.0;
  for (const auto& t : terms) {
    if (t.orders.size() != xi.size()) throw DomainError("principal_symbol: term order length does not match xi");
    A += t.coeff(x, p) * term_factor(xi, t.orders);
  }
  return A;
}

/// |A|^2 / (|A|^2 + delta).
inline double regularized_ratio(cplx A, double delta) {
  if (!(delta > 0.0)) throw DomainError("regularized_ratio: delta must be positive");
  const double a2 = std::norm(A);
  return a2 / (a2 + delta);
}

// ---------------------------------------------------------------------------
// Non-degeneracy scan.

struct NonDegeneracyEntry {
  std::size_t x_index = 0;
  std::size_t xi_index = 0;
  std::vector<double> xi;
  std::vector<double> measure;  // per eps
  double slope = 0.0;           // least-squares d measure / d eps
  double exponent = 0.0;        // log-log fit over eps with positive measure
};

struct NonDegeneracyReport {
  std::vector<double> eps_list;
  std::vector<std::vector<double>> x_samples;
  std::vector<NonDegeneracyEntry> entries;
  std::vector<double> sup_measure;  // per eps
  double sup_exponent = 0.0;
  double p_domain = 0.0;
  double threshold = 0.0;  // 1% of the p-domain
  bool degenerate = false;
};

namespace detail {

inline double fit_slope(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double den = n * sxx - sx * sx;
  return den == 0.0 ? 0.0 : (n * sxy - sx * sy) / den;
}

inline double fit_exponent(std::span<const double> eps, std::span<const double> m) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < eps.size(); ++i)
    if (m[i] > 0.0) {
      lx.push_back(std::log(eps[i]));
      ly.push_back(std::log(m[i]));
    }
  return lx.size() < 2 ? 0.0 : fit_slope(lx, ly);
}

/// Shared core of the symbol scans: for every (x sample, mesh point) the
/// midpoint measure of {node : |symbol| <= eps}, each node carrying weight w.
inline NonDegeneracyReport measure_scan(
    const std::function<cplx(std::span<const double> x, std::span<const double> xi, std::span<const double> node)>& symbol,
    const std::vector<std::vector<double>>& x_samples, const std::vector<PMeshPoint>& mesh,
    const std::vector<std::vector<double>>& nodes, double w, double domain, std::vector<double> eps_list,
    std::size_t jobs) {
  if (eps_list.empty()) throw DomainError("symbol scan: empty eps list");
  for (std::size_t i = 0; i < eps_list.size(); ++i)
    if (!(eps_list[i] > 0.0) || (i > 0 && eps_list[i] <= eps_list[i - 1]))
      throw DomainError("symbol scan: eps list must be positive and increasing");
  if (x_samples.empty()) throw DomainError("symbol scan: no x samples");

  NonDegeneracyReport rep;
  rep.eps_list = eps_list;
  rep.x_samples = x_samples;
  rep.p_domain = domain;
  rep.threshold = 0.01 * domain;
  rep.entries.resize(x_samples.size() * mesh.size());
  parallel_for(rep.entries.size(), jobs, [&](std::size_t e) {
    auto& entry = rep.entries[e];
    entry.x_index = e / mesh.size();
    entry.xi_index = e % mesh.size();
    entry.xi = mesh[entry.xi_index].xi;
    std::vector<double> absA(nodes.size());
    for (std::size_t q = 0; q < nodes.size(); ++q) absA[q] = std::abs(symbol(x_samples[entry.x_index], entry.xi, nodes[q]));
    std::sort(absA.begin(), absA.end());
    entry.measure.resize(eps_list.size());
    for (std::size_t i = 0; i < eps_list.size(); ++i) {
      const auto count = std::upper_bound(absA.begin(), absA.end(), eps_list[i]) - absA.begin();
      entry.measure[i] = static_cast<double>(count) * w;
    }
    entry.slope = eps_list.size() >= 2 ? fit_slope(eps_list, entry.measure) : 0.0;
    entry.exponent = fit_exponent(eps_list, entry.measure);
  });

  rep.sup_measure.assign(eps_list.size(), 0.0);
  for (const auto& e : rep.entries)
    for (std::size_t i = 0; i < eps_list.size(); ++i) rep.sup_measure[i] = std::max(rep.sup_measure[i], e.measure[i]);
  rep.sup_exponent = fit_exponent(eps_list, rep.sup_measure);
  rep.degenerate = rep.sup_measure.front() > rep.threshold;
  return rep;
}

}  // namespace detail

/// Midpoint quadrature over the velocity nodes of `grid` of the indicator
/// |A(x, xi, p)| <= eps, for every x sample, every xi on mesh_P and every eps.
inline NonDegeneracyReport nondegeneracy_scan(const std::vector<SymbolTerm>& terms,
                                              const std::vector<std::vector<double>>& x_samples,
                                              const AnisotropyProfile& profile, std::size_t P_resolution,
                                              const SpectralGrid& grid, std::vector<double> eps_list,
                                              std::size_t jobs = 1) {
  if (grid.velocity_dim() == 0) throw DomainError("nondegeneracy_scan: grid has no velocity axes");
  const std::size_t nv = grid.velocity_size();
  std::vector<std::vector<double>> pnodes(nv, std::vector<double>(grid.velocity_dim()));
  std::vector<std::size_t> ip(grid.velocity_dim());
  for (std::size_t q = 0; q < nv; ++q) {
    grid.velocity_index(q, ip);
    for (std::size_t j = 0; j < ip.size(); ++j) pnodes[q][j] = grid.p_node(j, ip[j]);
  }
  return detail::measure_scan(
      [&](std::span<const double> x, std::span<const double> xi, std::span<const double> p) {
        return principal_symbol(x, xi, p, terms);
      },
      x_samples, mesh_P(profile, P_resolution), pnodes, grid.velocity_cell_volume(), grid.velocity_domain_volume(),
      std::move(eps_list), jobs);
}

// ---------------------------------------------------------------------------
// Transport.

struct TransportProblem {
  SpectralGrid grid;                                   // spatial and velocity axes
  std::function<std::vector<double>(std::span<const double>)> a;  // a(p), one entry per spatial axis
  std::function<SpectralField(long)> initial;          // u_{0,n}(x, p)
  double t = 1.0;
};

/// Exact solution of d_t u + a(p) . grad_x u = 0 at time t:
/// F u(t)(xi, p) = exp(-2 pi i t a(p) . xi) F u_0(xi, p).
inline SpectralField transport_evolve(const TransportProblem& prob, long n) {
  const auto& g = prob.grid;
  auto u0 = to_physical(prob.initial(n));
  if (!(u0.grid() == g)) throw ContractError("transport_evolve: initial data lives on a different grid");
  auto data = std::move(forward_dft(u0)).release();
  const std::size_t nv = g.velocity_size();
  std::vector<std::size_t> ip(g.velocity_dim());
  std::vector<double> p(g.velocity_dim()), xi(g.dim());
  std::vector<std::vector<double>> a(nv);
  for (std::size_t q = 0; q < nv; ++q) {
    g.velocity_index(q, ip);
    for (std::size_t j = 0; j < p.size(); ++j) p[j] = g.p_node(j, ip[j]);
    a[q] = prob.a(p);
    if (a[q].size() != g.dim()) throw DomainError("transport_evolve: a(p) has the wrong length");
    for (double v : a[q])
      if (!std::isfinite(v)) throw DomainError("transport_evolve: a(p) is not finite");
  }
  for (std::size_t s = 0; s < g.spatial_size(); ++s) {
    frequency_vector(g, s, xi);
    for (std::size_t q = 0; q < nv; ++q) {
      double dot = 0.0;
      for (std::size_t k = 0; k < xi.size(); ++k) dot += a[q][k] * xi[k];
      data[s * nv + q] *= std::polar(1.0, -2.0 * std::numbers::pi * prob.t * dot);
    }
  }
  return inverse_dft(SpectralField(g, Space::frequency, std::move(data)));
}

/// The transported sequence as a generator (mean removed per p).
inline SequenceGenerator transport_generator(TransportProblem prob) {
  SpectralGrid g = prob.grid;
  return {"transport", g, [prob = std::move(prob)](long n) { return transport_evolve(prob, n); }};
}

struct AverageResult {
  SpectralField field;
  bool support_warning = false;  // rho does not vanish on the outermost velocity nodes
};

/// x -> sum_q u(x, p_q) rho(p_q) dp.
inline AverageResult velocity_average(const SpectralField& u, std::span<const double> rho) {
  const auto& g = u.grid();
  if (g.velocity_dim() == 0) throw ContractError("velocity_average: field has no velocity axes");
  if (rho.size() != g.velocity_size()) throw ContractError("velocity_average: rho has the wrong length");
  AverageResult out{velocity_project(u, rho), false};
  double scale = 0.0;
  for (double r : rho) scale = std::max(scale, std::abs(r));
  std::vector<std::size_t> ip(g.velocity_dim());
  for (std::size_t q = 0; q < rho.size() && scale > 0.0; ++q) {
    if (std::abs(rho[q]) <= 1e-12 * scale) continue;
    g.velocity_index(q, ip);
    for (std::size_t j = 0; j < ip.size(); ++j)
      if (ip[j] == 0 || ip[j] + 1 == g.n_velocity()[j]) out.support_warning = true;
  }
  return out;
}

/// rho sampled on the velocity nodes of a grid.
inline std::vector<double> sample_velocity_weight(const SpectralGrid& g,
                                                  const std::function<double(std::span<const double>)>& rho) {
  std::vector<double> out(g.velocity_size());
  std::vector<std::size_t> ip(g.velocity_dim());
  std::vector<double> p(g.velocity_dim());
  for (std::size_t q = 0; q < out.size(); ++q) {
    g.velocity_index(q, ip);
    for (std::size_t j = 0; j < p.size(); ++j) p[j] = g.p_node(j, ip[j]);
    out[q] = rho(p);
  }
  return out;
}

struct Window {
  std::vector<double> lo, hi;
};

struct CompactnessTable {
  std::vector<long> n_list;
  std::vector<double> norms;
  std::vector<double> ratios;  // norms[i] / norms[0]
};

/// L2 norm over a window of the velocity average of u_n, for each n.
inline CompactnessTable compactness_metric(const SequenceGenerator& gen, std::span<const double> rho,
                                           const Window& window, std::span<const long> n_list,
                                           std::size_t jobs = 1) {
  const auto& g = gen.grid;
  if (window.lo.size() != g.dim() || window.hi.size() != g.dim())
    throw DomainError("compactness_metric: window dimension mismatch");
  for (std::size_t k = 0; k < g.dim(); ++k)
    if (!(window.lo[k] > 0.0 && window.hi[k] < g.length()[k] && window.lo[k] < window.hi[k]))
      throw DomainError("compactness_metric: window must lie strictly inside the torus");
  if (n_list.empty()) throw DomainError("compactness_metric: empty n list");
  CompactnessTable tab;
  tab.n_list.assign(n_list.begin(), n_list.end());
  tab.norms.resize(n_list.size());
  parallel_for(n_list.size(), jobs, [&](std::size_t i) {
    const auto avg = velocity_average(gen(n_list[i]), rho).field;
    const auto& sg = avg.grid();
    std::vector<std::size_t> ix(sg.dim());
    double acc = 0.0;
    for (std::size_t s = 0; s < sg.spatial_size(); ++s) {
      sg.spatial_index(s, ix);
      bool in = true;
      for (std::size_t k = 0; k < sg.dim() && in; ++k) {
        const double x = sg.x_node(k, ix[k]);
        in = x >= window.lo[k] && x <= window.hi[k];
      }
      if (in) acc += std::norm(avg[s]);
    }
    tab.norms[i] = std::sqrt(acc * sg.cell_volume());
  });
  for (double v : tab.norms) tab.ratios.push_back(tab.norms[0] > 0.0 ? v / tab.norms[0] : 0.0);
  return tab;
}

// ---------------------------------------------------------------------------
// beta splitting.

struct BetaSplit {
  double w_u = 0.0;
  double w_g = 0.0;
};

/// w_u = beta^2 |xi|^2 / ((tau + a.xi)^2 + beta^2 |xi|^2),
/// w_g = |tau + a.xi| |xi| / ((tau + a.xi)^2 + beta^2 |xi|^2).
inline BetaSplit beta_split_weights(double tau, std::span<const double> xi, std::span<const double> a,
                                    double beta) {
  if (xi.size() != a.size()) throw DomainError("beta_split_weights: xi and a differ in length");
  if (!(beta > 0.0)) throw DomainError("beta_split_weights: beta must be positive");
  double dot = 0.0, x2 = 0.0;
  for (std::size_t k = 0; k < xi.size(); ++k) {
    dot += a[k] * xi[k];
    x2 += xi[k] * xi[k];
  }
  const double s = tau + dot;
  const double den = s * s + beta * beta * x2;
  if (den == 0.0) throw SingularPointError("beta_split_weights: both denominator terms vanish");
  return {beta * beta * x2 / den, std::abs(s) * std::sqrt(x2) / den};
}

// ---------------------------------------------------------------------------
// Weak form.

using FieldFn = std::function<cplx(std::span<const double> x, std::span<const double> p)>;

/// Test function g(x, p) together with its velocity derivative d^kappa_p g.
struct WeakTestFunction {
  FieldFn value;
  FieldFn p_derivative;
};

namespace detail {

/// prod_k (-d_k)^{orders_k} applied to a physical field.
inline SpectralField adjoint_derivative(const SpectralField& g, std::span<const double> orders) {
  const auto sym = lattice_symbol(g.grid(), [&](std::span<const double> xi) { return std::conj(term_factor(xi, orders)); });
  return apply_multiplier(g, sym);
}

inline SpectralField sample_coefficient(const SpectralGrid& g, const CoefficientFn& c) {
  return SpectralField::sample(g, [&](std::span<const double> x, std::span<const double> p) { return c(x, p); });
}

}  // namespace detail

/// LHS - RHS of
///   sum_terms int c u conj(prod_k (-d_k)^{o_k} g) dx dp
///     = (-1)^{|kappa|} int G conj(d^kappa_p g) dx dp,
/// with x-derivatives taken spectrally and midpoint quadrature in p.
/// An empty G means G = 0.
inline cplx weak_form_residual(const SpectralField& u, const std::vector<SymbolTerm>& terms, const SpectralField& G,
                               const WeakTestFunction& g, std::span<const int> kappa) {
  const auto& grid = u.grid();
  if (u.space() != Space::physical) throw ContractError("weak_form_residual expects a physical field");
  const double w = grid.cell_volume() * grid.velocity_cell_volume();
  const auto gv = SpectralField::sample(grid, g.value);
  cplx lhs = 0.0;
  for (const auto& t : terms) {
    const auto dg = detail::adjoint_derivative(gv, t.orders);
    const auto c = detail::sample_coefficient(grid, t.coeff);
    for (std::size_t i = 0; i < u.size(); ++i) lhs += c[i] * u[i] * std::conj(dg[i]);
  }
  lhs *= w;
  cplx rhs = 0.0;
  if (G.size() != 0) {
    if (!(G.grid() == grid)) throw ContractError("weak_form_residual: G lives on a different grid");
    const auto gp = SpectralField::sample(grid, g.p_derivative);
    const auto Gp = to_physical(G);
    for (std::size_t i = 0; i < u.size(); ++i) rhs += Gp[i] * std::conj(gp[i]);
    int order = 0;
    for (int k : kappa) order += k;
    rhs *= (order % 2 == 0 ? 1.0 : -1.0) * w;
  }
  return lhs - rhs;
}

/// g(x, p) = rho1(p) sum_q (I o A_psi)(phi u(., q))(x) rho2(q) dq, where I
/// has symbol (1 - theta(xi)) / quasi_norm(xi) with cut-off radius R.
inline SpectralField build_gn_test_function(const SpectralField& u, const SymbolOnP& psi, const SpatialFn& phi,
                                            std::span<const double> rho1, std::span<const double> rho2,
                                            const AnisotropyProfile& profile, double radius) {
  const auto& g = u.grid();
  if (u.space() != Space::physical) throw ContractError("build_gn_test_function expects a physical field");
  if (rho1.size() != g.velocity_size() || rho2.size() != g.velocity_size())
    throw ContractError("build_gn_test_function: velocity weights have the wrong length");
  const auto phis = SpectralField::sample_x(g.spatial(), phi);
  const auto avg = velocity_project(u, rho2);
  const auto inner = smoothing_inverse(apply_projected_symbol(pointwise_product(phis, avg), psi, profile), profile,
                                       radius);
  const std::size_t nv = g.velocity_size();
  std::vector<cplx> out(g.size());
  for (std::size_t s = 0; s < g.spatial_size(); ++s)
    for (std::size_t q = 0; q < nv; ++q) out[s * nv + q] = rho1[q] * inner[s];
  return SpectralField(g, Space::physical, std::move(out));
}

}  // namespace hpm
