// hpm/kinetic.hpp
//
// Degenerate parabolic equations
//   div f(x, u) - div div B(x, u) + psi(x, u) = 0
// seen through the kinetic function h(x, lambda) = sgn(u(x) - lambda).
// The first l_split directions are hyperbolic (B vanishes there), the rest
// parabolic. Provides flux pairs with sampled ellipticity and continuity
// checks, the symbol on {|xi_hat|^2 + |xi_tilde|^4 = 1} with its
// lambda-scan, and a midpoint-quadrature entropy residual.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "hpm/anisotropy.hpp"
#include "hpm/averaging.hpp"
#include "hpm/errors.hpp"
#include "hpm/parallel.hpp"

namespace hpm {

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// ---------------------------------------------------------------------------
// Kinetic transform.

struct KineticTransform {
  double M = 0.0;
  std::vector<double> lambda_edges;  // uniform on [-M, M]
  std::vector<double> lambda;        // cell midpoints
  std::vector<double> u;
  std::vector<double> h;  // h[i * lambda.size() + q] = sgn(u_i - lambda_q)

  double at(std::size_t i, std::size_t q) const { return h[i * lambda.size() + q]; }
};

inline KineticTransform kinetic_transform(std::span<const double> u, double M, std::size_t n_lambda) {
  if (!(M > 0.0)) throw DomainError("kinetic_transform: M must be positive");
  if (n_lambda == 0) throw DomainError("kinetic_transform: empty lambda grid");
  for (double v : u)
    if (!(std::abs(v) <= M)) throw DomainError("kinetic_transform: |u| exceeds M");
  KineticTransform kt;
  kt.M = M;
  kt.u.assign(u.begin(), u.end());
  const double dl = 2.0 * M / static_cast<double>(n_lambda);
  for (std::size_t q = 0; q <= n_lambda; ++q)
    kt.lambda_edges.push_back(q == n_lambda ? M : -M + static_cast<double>(q) * dl);
  for (std::size_t q = 0; q < n_lambda; ++q) kt.lambda.push_back(-M + (static_cast<double>(q) + 0.5) * dl);
  kt.h.resize(u.size() * n_lambda);
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t q = 0; q < n_lambda; ++q) kt.h[i * n_lambda + q] = sgn(u[i] - kt.lambda[q]);
  return kt;
}

/// Integral of sgn(u - lambda) over [edges.front(), edges.back()], summed
/// cell by cell in closed form: on [a, b] it is (c - a) - (b - c), c = clamp(u, a, b).
inline double kinetic_integral(double u, std::span<const double> edges) {
  double s = 0.0;
  for (std::size_t q = 0; q + 1 < edges.size(); ++q) {
    const double a = edges[q], b = edges[q + 1];
    const double c = std::clamp(u, a, b);
    s += (c - a) - (b - c);
  }
  return s;
}

inline double kinetic_integral(const KineticTransform& kt, std::size_t i) {
  return kinetic_integral(kt.u.at(i), kt.lambda_edges);
}

// ---------------------------------------------------------------------------
// Flux pairs.

using VectorFn = std::function<std::vector<double>(std::span<const double> x, double lambda)>;

struct EllipticityCertificate {
  double c = std::numeric_limits<double>::infinity();  // sampled lower bound
  std::size_t samples = 0;
  bool vacuous = false;  // no parabolic directions
};

struct FluxSampling {
  std::vector<std::vector<double>> x_samples;  // empty: the origin only
  double M = 2.0;
  std::size_t lambda_count = 17;
  std::size_t xi_resolution = 16;
};

/// f and B with lambda-derivatives. B and dB are row-major d x d.
struct FluxPair {
  std::string name;
  std::size_t d = 0;
  std::size_t l_split = 0;
  VectorFn f, df, B, dB;
  EllipticityCertificate ellipticity;
};

namespace detail {

inline std::vector<std::vector<double>> flux_x_samples(const FluxPair& fp, const FluxSampling& s) {
  if (!s.x_samples.empty()) return s.x_samples;
  return {std::vector<double>(fp.d, 0.0)};
}

inline std::vector<double> lambda_samples(double M, std::size_t count) {
  std::vector<double> out;
  for (std::size_t q = 0; q < count; ++q)
    out.push_back(count == 1 ? 0.0 : -M + 2.0 * M * static_cast<double>(q) / static_cast<double>(count - 1));
  return out;
}

inline std::vector<std::vector<double>> unit_directions(std::size_t m, std::size_t resolution) {
  std::vector<std::vector<double>> out;
  for (auto& p : sphere_mesh(m, std::max<std::size_t>(resolution, 8))) out.push_back(p.x);
  return out;
}

}  // namespace detail

/// Checks shapes, symmetry of B and dB, the vanishing of B on hyperbolic
/// rows and columns, and the sampled ellipticity bound
///   (B~(l1) - B~(l2)) xi~ . xi~ >= c (l1 - l2) |xi~|^2,  c > 0.
/// Throws DomainError on any violation; otherwise stores the certificate.
inline FluxPair validate_flux(FluxPair fp, const FluxSampling& s = {}) {
  if (fp.d == 0) throw DomainError("flux: dimension must be positive");
  if (fp.l_split > fp.d) throw DomainError("flux: l_split exceeds the dimension");
  if (!fp.f || !fp.df || !fp.B || !fp.dB) throw DomainError("flux: missing component");
  const std::size_t d = fp.d, l = fp.l_split;
  const auto xs = detail::flux_x_samples(fp, s);
  const auto lams = detail::lambda_samples(s.M, s.lambda_count);

  for (const auto& x : xs) {
    if (x.size() != d) throw DomainError("flux: x sample has wrong dimension");
    for (double lam : lams) {
      if (fp.f(x, lam).size() != d || fp.df(x, lam).size() != d) throw DomainError("flux: f must have d components");
      for (const VectorFn* g : {&fp.B, &fp.dB}) {
        const auto b = (*g)(x, lam);
        if (b.size() != d * d) throw DomainError("flux: B must be d x d");
        for (std::size_t j = 0; j < d; ++j)
          for (std::size_t k = 0; k < d; ++k) {
            const double v = b[j * d + k];
            if (std::abs(v - b[k * d + j]) > 1e-12 * (1.0 + std::abs(v))) throw DomainError("flux: B is not symmetric");
            if (std::min(j, k) < l && v != 0.0) throw DomainError("flux: B must vanish on hyperbolic directions");
          }
      }
    }
  }

  EllipticityCertificate cert;
  if (l == d) {
    cert.vacuous = true;
    fp.ellipticity = cert;
    return fp;
  }
  const auto dirs = detail::unit_directions(d - l, s.xi_resolution);
  for (const auto& x : xs)
    for (std::size_t a = 0; a < lams.size(); ++a)
      for (std::size_t b = a + 1; b < lams.size(); ++b) {
        const auto B1 = fp.B(x, lams[b]), B2 = fp.B(x, lams[a]);
        for (const auto& e : dirs) {
          double q = 0.0;
          for (std::size_t j = 0; j < d - l; ++j)
            for (std::size_t k = 0; k < d - l; ++k)
              q += (B1[(l + j) * d + l + k] - B2[(l + j) * d + l + k]) * e[j] * e[k];
          cert.c = std::min(cert.c, q / (lams[b] - lams[a]));
          ++cert.samples;
        }
      }
  if (!(cert.c > 0.0)) throw DomainError("flux: ellipticity fails, sampled constant " + std::to_string(cert.c));
  fp.ellipticity = cert;
  return fp;
}

struct ModulusReport {
  double worst_ratio = 0.0;  // max |lhs| / bound over samples with a positive bound
  std::size_t samples = 0;
  bool holds = true;
};

/// |f(x, l1) - f(x, l2)| <= w(|l1 - l2|) |sigma(x)| on the sample lattice.
inline ModulusReport continuity_modulus_check(const FluxPair& fp, const std::vector<std::vector<double>>& x_samples,
                                              std::span<const double> lambdas,
                                              const std::function<double(double)>& w,
                                              const std::function<double(std::span<const double>)>& sigma) {
  ModulusReport r;
  for (const auto& x : x_samples) {
    const double sx = std::abs(sigma(x));
    for (std::size_t a = 0; a < lambdas.size(); ++a)
      for (std::size_t b = a + 1; b < lambdas.size(); ++b) {
        const auto f1 = fp.f(x, lambdas[a]), f2 = fp.f(x, lambdas[b]);
        double n2 = 0.0;
        for (std::size_t k = 0; k < f1.size(); ++k) n2 += (f1[k] - f2[k]) * (f1[k] - f2[k]);
        const double lhs = std::sqrt(n2), bound = w(std::abs(lambdas[a] - lambdas[b])) * sx;
        ++r.samples;
        if (bound > 0.0) r.worst_ratio = std::max(r.worst_ratio, lhs / bound);
        else if (lhs > 0.0) r.worst_ratio = std::numeric_limits<double>::infinity();
      }
  }
  r.holds = r.worst_ratio <= 1.0;
  return r;
}

/// |<G(l1) - G(l2), phi_j>| <= C w(|l1 - l2|) ||phi_j|| where
/// pairing[q][j] = <G(lambda_q), phi_j> are user-supplied samples.
inline ModulusReport forcing_modulus_check(std::span<const double> lambdas,
                                           const std::vector<std::vector<double>>& pairing,
                                           std::span<const double> phi_norms, double C,
                                           const std::function<double(double)>& w) {
  if (pairing.size() != lambdas.size()) throw DomainError("forcing_modulus_check: one pairing row per lambda");
  ModulusReport r;
  for (std::size_t a = 0; a < lambdas.size(); ++a)
    for (std::size_t b = a + 1; b < lambdas.size(); ++b)
      for (std::size_t j = 0; j < phi_norms.size(); ++j) {
        const double lhs = std::abs(pairing[a].at(j) - pairing[b].at(j));
        const double bound = C * w(std::abs(lambdas[a] - lambdas[b])) * phi_norms[j];
        ++r.samples;
        if (bound > 0.0) r.worst_ratio = std::max(r.worst_ratio, lhs / bound);
        else if (lhs > 0.0) r.worst_ratio = std::numeric_limits<double>::infinity();
      }
  r.holds = r.worst_ratio <= 1.0;
  return r;
}

// Registry. Indices are 0-based: B vanishes on rows/columns < l_split.

/// d = 2, l_split = 1: f = (lambda^2 / 2, 0), B = diag(0, lambda).
inline FluxPair burgers_heat_flux(const FluxSampling& s = {}) {
  FluxPair fp;
  fp.name = "burgers-heat";
  fp.d = 2;
  fp.l_split = 1;
  fp.f = [](std::span<const double>, double lam) { return std::vector<double>{0.5 * lam * lam, 0.0}; };
  fp.df = [](std::span<const double>, double lam) { return std::vector<double>{lam, 0.0}; };
  fp.B = [](std::span<const double>, double lam) { return std::vector<double>{0.0, 0.0, 0.0, lam}; };
  fp.dB = [](std::span<const double>, double) { return std::vector<double>{0.0, 0.0, 0.0, 1.0}; };
  return validate_flux(std::move(fp), s);
}

/// f = v lambda, B = 0, all directions hyperbolic.
inline FluxPair linear_transport_flux(std::vector<double> v, const FluxSampling& s = {}) {
  if (v.empty()) throw DomainError("linear-transport: empty velocity");
  FluxPair fp;
  fp.name = "linear-transport";
  fp.d = v.size();
  fp.l_split = v.size();
  const std::size_t d = v.size();
  fp.f = [v](std::span<const double>, double lam) {
    std::vector<double> out(v);
    for (auto& c : out) c *= lam;
    return out;
  };
  fp.df = [v](std::span<const double>, double) { return v; };
  fp.B = [d](std::span<const double>, double) { return std::vector<double>(d * d, 0.0); };
  fp.dB = fp.B;
  return validate_flux(std::move(fp), s);
}

/// x-independent tables of df and dB at increasing lambda nodes, linearly
/// interpolated. f and B are their exact integrals from lambda.front().
struct FluxTable {
  std::size_t d = 0;
  std::size_t l_split = 0;
  std::vector<double> lambda;
  std::vector<std::vector<double>> df;  // per node, d entries
  std::vector<std::vector<double>> dB;  // per node, d * d entries
};

inline FluxPair custom_flux(const FluxTable& t, const FluxSampling& s = {}) {
  const std::size_t m = t.lambda.size();
  if (m < 2) throw DomainError("custom flux: need at least two lambda nodes");
  if (t.df.size() != m || t.dB.size() != m) throw DomainError("custom flux: one table row per lambda node");
  for (std::size_t q = 0; q < m; ++q) {
    if (t.df[q].size() != t.d || t.dB[q].size() != t.d * t.d) throw DomainError("custom flux: table row has wrong size");
    if (q > 0 && !(t.lambda[q] > t.lambda[q - 1])) throw DomainError("custom flux: lambda nodes must increase");
  }
  auto locate = [t](double lam) {
    if (lam < t.lambda.front() || lam > t.lambda.back()) throw DomainError("custom flux: lambda outside the table");
    const auto it = std::upper_bound(t.lambda.begin(), t.lambda.end(), lam);
    return std::min<std::size_t>(static_cast<std::size_t>(it - t.lambda.begin()), t.lambda.size() - 1) - 1;
  };
  // Cumulative integrals at the nodes, then a partial trapezoid on the last cell.
  auto make = [t, locate](const std::vector<std::vector<double>>& rows) {
    const std::size_t w = rows.front().size();
    std::vector<std::vector<double>> cum(rows.size(), std::vector<double>(w, 0.0));
    for (std::size_t q = 1; q < rows.size(); ++q)
      for (std::size_t k = 0; k < w; ++k)
        cum[q][k] = cum[q - 1][k] + 0.5 * (t.lambda[q] - t.lambda[q - 1]) * (rows[q][k] + rows[q - 1][k]);
    VectorFn deriv = [rows, t, locate](std::span<const double>, double lam) {
      const std::size_t q = locate(lam);
      const double s = (lam - t.lambda[q]) / (t.lambda[q + 1] - t.lambda[q]);
      std::vector<double> out(rows[q].size());
      for (std::size_t k = 0; k < out.size(); ++k) out[k] = (1.0 - s) * rows[q][k] + s * rows[q + 1][k];
      return out;
    };
    VectorFn integral = [rows, cum, t, locate](std::span<const double>, double lam) {
      const std::size_t q = locate(lam);
      const double h = lam - t.lambda[q], H = t.lambda[q + 1] - t.lambda[q];
      std::vector<double> out(rows[q].size());
      for (std::size_t k = 0; k < out.size(); ++k) {
        const double slope = (rows[q + 1][k] - rows[q][k]) / H;
        out[k] = cum[q][k] + rows[q][k] * h + 0.5 * slope * h * h;
      }
      return out;
    };
    return std::pair{integral, deriv};
  };
  FluxPair fp;
  fp.name = "custom";
  fp.d = t.d;
  fp.l_split = t.l_split;
  std::tie(fp.f, fp.df) = make(t.df);
  std::tie(fp.B, fp.dB) = make(t.dB);
  FluxSampling s2 = s;
  s2.M = std::min({s.M, -t.lambda.front(), t.lambda.back()});
  if (!(s2.M > 0.0)) throw DomainError("custom flux: table must contain a neighbourhood of 0");
  return validate_flux(std::move(fp), s2);
}

// ---------------------------------------------------------------------------
// Symbol on {|xi_hat|^2 + |xi_tilde|^4 = 1}.

struct UPManifold {
  std::size_t d = 0;
  std::size_t l_split = 0;

  std::vector<double> exponents() const {
    std::vector<double> e(d, 4.0);
    for (std::size_t k = 0; k < l_split; ++k) e[k] = 2.0;
    return e;
  }
  double constraint(std::span<const double> xi) const { return detail::power_sum(xi, exponents()) - 1.0; }
  /// Sphere mesh pushed onto the manifold along xi_k t^(1/e_k).
  std::vector<PMeshPoint> mesh(std::size_t resolution) const {
    if (d == 0 || l_split > d) throw DomainError("UPManifold: bad dimensions");
    const auto e = exponents();
    std::vector<PMeshPoint> out;
    for (auto& s : detail::sphere_mesh(d, resolution)) out.push_back({detail::power_projection(s.x, e), s.weight});
    return out;
  }
};

/// 2 pi i sum_{k < l_split} xi_k df_k + 4 pi^2 <dB xi, xi>.
inline cplx up_symbol(std::span<const double> x, std::span<const double> xi, double lambda, const FluxPair& fp) {
  const auto df = fp.df(x, lambda);
  const auto dB = fp.dB(x, lambda);
  double im = 0.0, re = 0.0;
  for (std::size_t k = 0; k < fp.l_split; ++k) im += xi[k] * df[k];
  for (std::size_t j = 0; j < fp.d; ++j)
    for (std::size_t k = 0; k < fp.d; ++k) re += dB[j * fp.d + k] * xi[j] * xi[k];
  constexpr double pi = std::numbers::pi;
  return {4.0 * pi * pi * re, 2.0 * pi * im};
}

/// Measure of {lambda in [-M, M] : |up_symbol| <= eps} by midpoint
/// quadrature on n_lambda cells, for every x sample and mesh point.
inline NonDegeneracyReport up_nondegeneracy_scan(const FluxPair& fp, const std::vector<std::vector<double>>& x_samples,
                                                 const std::vector<PMeshPoint>& mesh, double M, std::size_t n_lambda,
                                                 std::vector<double> eps_list, std::size_t jobs = 1) {
  if (!(M > 0.0) || n_lambda == 0) throw DomainError("up_nondegeneracy_scan: bad lambda grid");
  const double dl = 2.0 * M / static_cast<double>(n_lambda);
  std::vector<std::vector<double>> nodes;
  for (std::size_t q = 0; q < n_lambda; ++q) nodes.push_back({-M + (static_cast<double>(q) + 0.5) * dl});
  return detail::measure_scan(
      [&](std::span<const double> x, std::span<const double> xi, std::span<const double> lam) {
        return up_symbol(x, xi, lam[0], fp);
      },
      x_samples, mesh, nodes, dl, 2.0 * M, std::move(eps_list), jobs);
}

// ---------------------------------------------------------------------------
// Entropy residual.

/// Cell-centred grid on the box prod [lo_k, hi_k]; the last axis varies fastest.
struct BoxGrid {
  std::vector<double> lo, hi;
  std::vector<std::size_t> n;

  std::size_t dim() const { return n.size(); }
  std::size_t size() const {
    std::size_t s = 1;
    for (auto v : n) s *= v;
    return s;
  }
  double spacing(std::size_t k) const { return (hi[k] - lo[k]) / static_cast<double>(n[k]); }
  double cell_volume() const {
    double v = 1.0;
    for (std::size_t k = 0; k < dim(); ++k) v *= spacing(k);
    return v;
  }
  std::vector<double> centre(std::size_t flat) const {
    std::vector<double> x(dim());
    for (std::size_t k = dim(); k-- > 0;) {
      const std::size_t i = flat % n[k];
      flat /= n[k];
      x[k] = lo[k] + (static_cast<double>(i) + 0.5) * spacing(k);
    }
    return x;
  }
  void check() const {
    if (n.empty() || lo.size() != n.size() || hi.size() != n.size()) throw DomainError("BoxGrid: inconsistent sizes");
    for (std::size_t k = 0; k < dim(); ++k)
      if (n[k] == 0 || !(hi[k] > lo[k])) throw DomainError("BoxGrid: empty axis");
  }
};

/// Test function with analytic derivatives. The Hessian (row-major) is used
/// only on parabolic directions and may be left empty when there are none.
struct EntropyTestFunction {
  std::function<double(std::span<const double>)> value;
  std::function<std::vector<double>(std::span<const double>)> gradient;
  std::function<std::vector<double>(std::span<const double>)> hessian;
};

struct EntropySources {
  std::vector<double> psi;       // psi(x, u(x)) per cell; empty means 0
  std::vector<double> omega;     // omega(x, lambda) per cell; empty means 0
  std::vector<double> singular;  // nonnegative masses at cell centres; empty means 0
};

/// Midpoint quadrature of
///   -S (f(u) - f(lambda)) . grad phi - S (B(u) - B(lambda)) : Hess phi
///   + (S (omega + psi) - |omega|) phi,   S = sgn(u - lambda),
/// minus sum of singular masses times phi. Non-positive for admissible data
/// up to quadrature error.
inline double entropy_residual(const BoxGrid& g, std::span<const double> u, double lambda, const FluxPair& fp,
                               const EntropySources& src, const EntropyTestFunction& phi) {
  g.check();
  const std::size_t N = g.size(), d = fp.d;
  if (g.dim() != d) throw DomainError("entropy_residual: grid and flux dimensions differ");
  if (u.size() != N) throw DomainError("entropy_residual: u has wrong size");
  auto check_len = [N](const std::vector<double>& v, const char* what) {
    if (!v.empty() && v.size() != N) throw DomainError(std::string("entropy_residual: ") + what + " has wrong size");
  };
  check_len(src.psi, "psi");
  check_len(src.omega, "omega");
  check_len(src.singular, "singular mass");
  const bool parabolic = fp.l_split < d;
  if (!phi.value || !phi.gradient || (parabolic && !phi.hessian))
    throw DomainError("entropy_residual: test function lacks derivatives");

  double acc = 0.0, sing = 0.0;
  for (std::size_t c = 0; c < N; ++c) {
    const auto x = g.centre(c);
    const double p = phi.value(x);
    if (p < 0.0) throw DomainError("entropy_residual: test function is negative");
    const double S = sgn(u[c] - lambda);
    double cell = 0.0;
    if (S != 0.0) {
      const auto fu = fp.f(x, u[c]), fl = fp.f(x, lambda);
      const auto gp = phi.gradient(x);
      for (std::size_t k = 0; k < d; ++k) cell -= S * (fu[k] - fl[k]) * gp[k];
      if (parabolic) {
        const auto Bu = fp.B(x, u[c]), Bl = fp.B(x, lambda);
        const auto H = phi.hessian(x);
        for (std::size_t j = fp.l_split; j < d; ++j)
          for (std::size_t k = fp.l_split; k < d; ++k) cell -= S * (Bu[j * d + k] - Bl[j * d + k]) * H[j * d + k];
      }
    }
    const double om = src.omega.empty() ? 0.0 : src.omega[c];
    const double ps = src.psi.empty() ? 0.0 : src.psi[c];
    cell += (S * (om + ps) - std::abs(om)) * p;
    acc += cell;
    if (!src.singular.empty()) {
      if (src.singular[c] < 0.0) throw DomainError("entropy_residual: negative singular mass");
      sing += src.singular[c] * p;
    }
  }
  return acc * g.cell_volume() - sing;
}

}  // namespace hpm
