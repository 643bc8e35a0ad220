// hpm/anisotropy.hpp
//
// Anisotropy profile alpha, the derived exponent l, the manifold
//   P = { xi : sum_k |xi_k|^(l alpha_k) = 1 },
// the quasi-norm (sum_k |xi_k|^(l alpha_k))^(1/l), the projection pi_P along
// the fibres eta_k = xi_k t^(1/(l alpha_k)), and quadrature meshes on P.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "hpm/errors.hpp"

namespace hpm {

/// Minimal integer l >= 1 with l * alpha_k > d for every k.
inline int compute_l(std::span<const double> alpha, std::size_t d) {
  if (alpha.empty()) throw DomainError("compute_l: empty alpha");
  for (double a : alpha)
    if (!(a > 0.0) || !std::isfinite(a)) throw DomainError("compute_l: alpha entries must be positive");
  const double amin = *std::min_element(alpha.begin(), alpha.end());
  int l = std::max(1, static_cast<int>(std::floor(static_cast<double>(d) / amin)));
  while (l > 1 && (l - 1) * amin > static_cast<double>(d)) --l;
  while (!(l * amin > static_cast<double>(d))) ++l;
  return l;
}

class AnisotropyProfile {
 public:
  AnisotropyProfile() = default;

  explicit AnisotropyProfile(std::vector<double> alpha)
      : alpha_(std::move(alpha)), l_(compute_l(alpha_, alpha_.size())) {
    exponents_.reserve(alpha_.size());
    for (double a : alpha_) exponents_.push_back(l_ * a);
  }

  std::size_t dim() const noexcept { return alpha_.size(); }
  const std::vector<double>& alpha() const noexcept { return alpha_; }
  int l() const noexcept { return l_; }
  /// l * alpha_k, the exponents defining P.
  const std::vector<double>& exponents() const noexcept { return exponents_; }

  bool isotropic() const {
    return std::all_of(alpha_.begin(), alpha_.end(), [&](double a) { return a == alpha_.front(); });
  }

 private:
  std::vector<double> alpha_;
  int l_ = 0;
  std::vector<double> exponents_;
};

namespace detail {

inline void check_dim(std::span<const double> xi, std::size_t d, const char* who) {
  if (xi.size() != d) throw DomainError(std::string(who) + ": vector has wrong dimension");
}

inline double power_sum(std::span<const double> xi, std::span<const double> e) {
  double s = 0.0;
  for (std::size_t k = 0; k < xi.size(); ++k) s += std::pow(std::abs(xi[k]), e[k]);
  return s;
}

// log(sum |xi_k|^e_k) without overflow, for extreme magnitudes.
inline double log_power_sum(std::span<const double> xi, std::span<const double> e) {
  double m = -INFINITY;
  std::vector<double> t(xi.size(), -INFINITY);
  for (std::size_t k = 0; k < xi.size(); ++k) {
    if (xi[k] != 0.0) t[k] = e[k] * std::log(std::abs(xi[k]));
    m = std::max(m, t[k]);
  }
  double s = 0.0;
  for (double v : t)
    if (v > -INFINITY) s += std::exp(v - m);
  return m + std::log(s);
}

/// Projection onto { sum |xi_k|^e_k = 1 } along xi_k t^(1/e_k).
inline std::vector<double> power_projection(std::span<const double> xi, std::span<const double> e) {
  std::vector<double> out(xi.size());
  const double s = power_sum(xi, e);
  if (s > 0.0 && std::isfinite(s) && s > 1e-280) {
    for (std::size_t k = 0; k < xi.size(); ++k) out[k] = xi[k] / std::pow(s, 1.0 / e[k]);
    return out;
  }
  bool zero = std::all_of(xi.begin(), xi.end(), [](double v) { return v == 0.0; });
  if (zero) throw SingularPointError("projection onto P is undefined at xi = 0");
  const double ls = log_power_sum(xi, e);
  for (std::size_t k = 0; k < xi.size(); ++k) out[k] = xi[k] * std::exp(-ls / e[k]);
  return out;
}

/// Surface measure of the unit sphere S^(d-1).
inline double sphere_area(std::size_t d) {
  return 2.0 * std::pow(std::numbers::pi, 0.5 * static_cast<double>(d)) /
         std::tgamma(0.5 * static_cast<double>(d));
}

struct SpherePoint {
  std::vector<double> x;
  double weight;
};

// Uniform mesh of the Euclidean unit sphere in R^d. d = 2: r equally spaced
// angles 2 pi j / r. d >= 3: cube-sphere with ceil(r/4)^(d-1) cell-centred
// points per face and solid-angle weights normalized to the exact area.
inline std::vector<SpherePoint> sphere_mesh(std::size_t d, std::size_t resolution) {
  std::vector<SpherePoint> pts;
  if (d == 1) {
    pts.push_back({{1.0}, 1.0});
    pts.push_back({{-1.0}, 1.0});
    return pts;
  }
  if (d == 2) {
    const double w = 2.0 * std::numbers::pi / static_cast<double>(resolution);
    for (std::size_t j = 0; j < resolution; ++j) {
      const double a = w * static_cast<double>(j);
      pts.push_back({{std::cos(a), std::sin(a)}, w});
    }
    return pts;
  }
  const std::size_t k = std::max<std::size_t>(2, (resolution + 3) / 4);
  const double du = 2.0 / static_cast<double>(k);
  std::size_t per_face = 1;
  for (std::size_t i = 0; i + 1 < d; ++i) per_face *= k;
  double total = 0.0;
  std::vector<double> u(d - 1);
  for (std::size_t axis = 0; axis < d; ++axis) {
    for (double sign : {1.0, -1.0}) {
      for (std::size_t f = 0; f < per_face; ++f) {
        std::size_t rem = f;
        for (std::size_t i = 0; i + 1 < d; ++i) {
          u[i] = -1.0 + (static_cast<double>(rem % k) + 0.5) * du;
          rem /= k;
        }
        std::vector<double> x(d);
        double r2 = 1.0;
        for (std::size_t i = 0, c = 0; i < d; ++i) {
          if (i == axis) x[i] = sign;
          else {
            x[i] = u[c];
            r2 += u[c] * u[c];
            ++c;
          }
        }
        const double r = std::sqrt(r2);
        for (auto& v : x) v /= r;
        const double w = std::pow(du, static_cast<double>(d - 1)) / std::pow(r2, 0.5 * static_cast<double>(d));
        total += w;
        pts.push_back({std::move(x), w});
      }
    }
  }
  const double scale = sphere_area(d) / total;
  for (auto& p : pts) p.weight *= scale;
  return pts;
}

}  // namespace detail

inline double quasi_norm(std::span<const double> xi, const AnisotropyProfile& profile) {
  detail::check_dim(xi, profile.dim(), "quasi_norm");
  const double s = detail::power_sum(xi, profile.exponents());
  if (std::isfinite(s) && (s > 1e-280 || s == 0.0)) return std::pow(s, 1.0 / profile.l());
  return std::exp(detail::log_power_sum(xi, profile.exponents()) / profile.l());
}

inline std::vector<double> project_to_P(std::span<const double> xi, const AnisotropyProfile& profile) {
  detail::check_dim(xi, profile.dim(), "project_to_P");
  return detail::power_projection(xi, profile.exponents());
}

/// eta_k = xi_k * t^(1/(l alpha_k)); quasi_norm(eta) = t^(1/l) for xi on P.
inline std::vector<double> fibre_point(std::span<const double> xi_p, double t,
                                       const AnisotropyProfile& profile) {
  detail::check_dim(xi_p, profile.dim(), "fibre_point");
  if (!(t > 0.0)) throw DomainError("fibre_point: t must be positive");
  std::vector<double> eta(xi_p.size());
  for (std::size_t k = 0; k < eta.size(); ++k) eta[k] = xi_p[k] * std::pow(t, 1.0 / profile.exponents()[k]);
  return eta;
}

/// Anisotropic dilation (lambda^(1/alpha_k) xi_k)_k.
inline std::vector<double> anisotropic_dilation(std::span<const double> xi, double lambda,
                                                const AnisotropyProfile& profile) {
  std::vector<double> out(xi.size());
  for (std::size_t k = 0; k < xi.size(); ++k) out[k] = xi[k] * std::pow(lambda, 1.0 / profile.alpha()[k]);
  return out;
}

struct PMeshPoint {
  std::vector<double> xi;
  double weight = 0.0;
};

/// Sphere mesh pushed through pi_P. Weights are the sphere-mesh weights.
inline std::vector<PMeshPoint> mesh_P(const AnisotropyProfile& profile, std::size_t resolution) {
  if (resolution < 8) throw DomainError("mesh_P: resolution must be >= 8");
  std::vector<PMeshPoint> out;
  for (auto& s : detail::sphere_mesh(profile.dim(), resolution))
    out.push_back({project_to_P(s.x, profile), s.weight});
  return out;
}

/// Residual of the P-constraint, sum |xi_k|^(l alpha_k) - 1.
inline double P_constraint_residual(std::span<const double> xi, const AnisotropyProfile& profile) {
  return detail::power_sum(xi, profile.exponents()) - 1.0;
}

}  // namespace hpm
