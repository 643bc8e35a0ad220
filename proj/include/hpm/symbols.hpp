// hpm/symbols.hpp
//
// Built-in symbols on P, addressable by name:
//   one                          psi = 1
//   coordinate:k                 psi = xi_k           (k is 0-based)
//   bump:center=[c..],width=w    exp(1 - 1/(1 - r^2)), r = |xi - c| / w
//   sector:axis=k,sign=+|-       smooth ramp in +-xi_k, 0 below -1/4, 1 above 1/4

#pragma once

#include <cctype>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hpm/errors.hpp"
#include "hpm/multiplier.hpp"

namespace hpm {

inline SymbolOnP symbol_one() {
  return {[](std::span<const double>) -> cplx { return 1.0; }, 1000, "one", true};
}

inline SymbolOnP symbol_coordinate(std::size_t k) {
  return {[k](std::span<const double> xi) -> cplx { return xi[k]; }, 1000, "coordinate:" + std::to_string(k), false};
}

/// Compactly supported C-infinity bump, 1 at the centre, 0 outside radius w.
inline double bump_profile(double r) {
  if (r >= 1.0) return 0.0;
  return std::exp(1.0 - 1.0 / (1.0 - r * r));
}

inline SymbolOnP symbol_bump(std::vector<double> center, double width) {
  if (!(width > 0.0)) throw DomainError("bump symbol: width must be positive");
  std::string name = "bump:center=[";
  for (std::size_t i = 0; i < center.size(); ++i) name += (i ? "," : "") + std::to_string(center[i]);
  name += "],width=" + std::to_string(width);
  auto eval = [c = std::move(center), width](std::span<const double> xi) -> cplx {
    double r2 = 0.0;
    for (std::size_t k = 0; k < xi.size(); ++k) r2 += (xi[k] - c[k]) * (xi[k] - c[k]);
    return bump_profile(std::sqrt(r2) / width);
  };
  return {eval, 1000, name, false};
}

inline SymbolOnP symbol_sector(std::size_t axis, int sign) {
  auto eval = [axis, sign](std::span<const double> xi) -> cplx {
    return smooth_ramp(0.5 + 2.0 * sign * xi[axis]);
  };
  return {eval, 1000, std::string("sector:axis=") + std::to_string(axis) + ",sign=" + (sign > 0 ? "+" : "-"), false};
}

namespace detail {

inline std::string trim(std::string s) {
  auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && issp(s.front())) s.erase(s.begin());
  while (!s.empty() && issp(s.back())) s.pop_back();
  return s;
}

inline double parse_number(const std::string& s, const std::string& ctx) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DomainError("symbol '" + ctx + "': cannot parse number '" + s + "'");
  }
}

}  // namespace detail

/// Resolves a registry name for a d-dimensional profile.
inline SymbolOnP make_symbol(const std::string& spec, std::size_t d) {
  const std::string s = detail::trim(spec);
  if (s == "one") return symbol_one();
  const auto colon = s.find(':');
  const std::string head = s.substr(0, colon);
  const std::string args = colon == std::string::npos ? "" : s.substr(colon + 1);
  if (head == "coordinate") {
    const double k = detail::parse_number(detail::trim(args), s);
    if (k < 0 || k >= static_cast<double>(d) || k != std::floor(k))
      throw DomainError("symbol '" + s + "': coordinate index out of range");
    return symbol_coordinate(static_cast<std::size_t>(k));
  }
  if (head == "bump") {
    const auto lb = args.find('['), rb = args.find(']');
    const auto wpos = args.find("width=");
    if (lb == std::string::npos || rb == std::string::npos || wpos == std::string::npos)
      throw DomainError("symbol '" + s + "': expected bump:center=[..],width=w");
    std::vector<double> c;
    std::string list = args.substr(lb + 1, rb - lb - 1);
    std::size_t start = 0;
    while (start <= list.size()) {
      const auto comma = list.find(',', start);
      const auto tok = detail::trim(list.substr(start, comma - start));
      if (!tok.empty()) c.push_back(detail::parse_number(tok, s));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (c.size() != d) throw DomainError("symbol '" + s + "': centre has wrong dimension");
    auto wend = args.find(',', wpos);
    const double w = detail::parse_number(detail::trim(args.substr(wpos + 6, wend - wpos - 6)), s);
    return symbol_bump(std::move(c), w);
  }
  if (head == "sector") {
    const auto apos = args.find("axis="), spos = args.find("sign=");
    if (apos == std::string::npos || spos == std::string::npos)
      throw DomainError("symbol '" + s + "': expected sector:axis=k,sign=+|-");
    const auto aend = args.find(',', apos);
    const double k = detail::parse_number(detail::trim(args.substr(apos + 5, aend - apos - 5)), s);
    if (k < 0 || k >= static_cast<double>(d) || k != std::floor(k))
      throw DomainError("symbol '" + s + "': axis out of range");
    const auto sg = detail::trim(args.substr(spos + 5));
    int sign;
    if (sg == "+") sign = 1;
    else if (sg == "-") sign = -1;
    else throw DomainError("symbol '" + s + "': sign must be + or -");
    return symbol_sector(static_cast<std::size_t>(k), sign);
  }
  throw DomainError("unknown symbol '" + s + "'");
}

}  // namespace hpm
