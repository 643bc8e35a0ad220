// hpm/expression.hpp
//
// Real-valued formulas in configs, e.g. "sin(2*pi*x0) * (1 + 0.5*p0)".
// Variables x0, x1, ... and p0, p1, ...; constant pi; binary + - * / ^
// (^ binds tighter than unary minus and is right-associative); functions
// sin cos tan exp log abs sqrt bump (one argument) and min max pow (two).
// bump(r) = exp(1 - 1/(1 - r^2)) for |r| < 1, else 0.

#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "hpm/errors.hpp"

namespace hpm {

class Expression {
 public:
  using Eval = std::function<double(std::span<const double> x, std::span<const double> p)>;

  Expression() = default;
  explicit Expression(std::string source) : source_(std::move(source)) {
    Parser ps{source_, 0, 0, 0};
    eval_ = ps.expr();
    ps.skip();
    if (ps.pos != source_.size()) ps.fail("unexpected '" + std::string(1, source_[ps.pos]) + "'");
    max_x_ = ps.max_x;
    max_p_ = ps.max_p;
  }

  double operator()(std::span<const double> x, std::span<const double> p = {}) const {
    if (x.size() < max_x_ || p.size() < max_p_) throw DomainError("expression '" + source_ + "': too few variables");
    return eval_(x, p);
  }

  const std::string& source() const noexcept { return source_; }
  /// One past the largest x / p index referenced.
  std::size_t x_arity() const noexcept { return max_x_; }
  std::size_t p_arity() const noexcept { return max_p_; }

 private:
  struct Parser {
    const std::string& s;
    std::size_t pos;
    std::size_t max_x, max_p;

    [[noreturn]] void fail(const std::string& why) const {
      throw DomainError("expression '" + s + "' at column " + std::to_string(pos + 1) + ": " + why);
    }
    void skip() {
      while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    bool eat(char c) {
      skip();
      if (pos < s.size() && s[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }

    Eval expr() {
      Eval lhs = term();
      for (;;) {
        if (eat('+')) {
          Eval r = term();
          lhs = [lhs, r](auto x, auto p) { return lhs(x, p) + r(x, p); };
        } else if (eat('-')) {
          Eval r = term();
          lhs = [lhs, r](auto x, auto p) { return lhs(x, p) - r(x, p); };
        } else {
          return lhs;
        }
      }
    }
    Eval term() {
      Eval lhs = unary();
      for (;;) {
        if (eat('*')) {
          Eval r = unary();
          lhs = [lhs, r](auto x, auto p) { return lhs(x, p) * r(x, p); };
        } else if (eat('/')) {
          Eval r = unary();
          lhs = [lhs, r](auto x, auto p) { return lhs(x, p) / r(x, p); };
        } else {
          return lhs;
        }
      }
    }
    Eval unary() {
      if (eat('-')) {
        Eval v = unary();
        return [v](auto x, auto p) { return -v(x, p); };
      }
      if (eat('+')) return unary();
      return power();
    }
    Eval power() {
      Eval base = primary();
      if (!eat('^')) return base;
      Eval e = unary();
      return [base, e](auto x, auto p) { return std::pow(base(x, p), e(x, p)); };
    }
    Eval primary() {
      skip();
      if (pos >= s.size()) fail("unexpected end");
      if (eat('(')) {
        Eval v = expr();
        if (!eat(')')) fail("expected ')'");
        return v;
      }
      const char c = s[pos];
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
      if (std::isalpha(static_cast<unsigned char>(c))) return identifier();
      fail("unexpected '" + std::string(1, c) + "'");
    }
    Eval number() {
      double v = 0.0;
      const auto [end, ec] = std::from_chars(s.data() + pos, s.data() + s.size(), v);
      if (ec != std::errc()) fail("bad number");
      pos = static_cast<std::size_t>(end - s.data());
      return [v](auto, auto) { return v; };
    }
    Eval identifier() {
      const std::size_t start = pos;
      while (pos < s.size() && (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_')) ++pos;
      const std::string name = s.substr(start, pos - start);
      if (name == "pi") return [](auto, auto) { return std::numbers::pi; };
      if ((name[0] == 'x' || name[0] == 'p') && name.size() > 1 &&
          name.find_first_not_of("0123456789", 1) == std::string::npos) {
        const std::size_t k = std::stoul(name.substr(1));
        if (name[0] == 'x') {
          max_x = std::max(max_x, k + 1);
          return [k](auto x, auto) { return x[k]; };
        }
        max_p = std::max(max_p, k + 1);
        return [k](auto, auto p) { return p[k]; };
      }
      if (!eat('(')) fail("unknown variable '" + name + "'");
      std::vector<Eval> args{expr()};
      while (eat(',')) args.push_back(expr());
      if (!eat(')')) fail("expected ')'");
      return call(name, std::move(args));
    }
    Eval call(const std::string& name, std::vector<Eval> a) {
      using F1 = double (*)(double);
      static const std::pair<const char*, F1> unary_fns[] = {
          {"sin", [](double v) { return std::sin(v); }},   {"cos", [](double v) { return std::cos(v); }},
          {"tan", [](double v) { return std::tan(v); }},   {"exp", [](double v) { return std::exp(v); }},
          {"log", [](double v) { return std::log(v); }},   {"abs", [](double v) { return std::abs(v); }},
          {"sqrt", [](double v) { return std::sqrt(v); }},
          {"bump", [](double r) { return std::abs(r) >= 1.0 ? 0.0 : std::exp(1.0 - 1.0 / (1.0 - r * r)); }},
      };
      for (const auto& [n, f] : unary_fns)
        if (name == n) {
          if (a.size() != 1) fail(name + " takes one argument");
          return [f, g = a[0]](auto x, auto p) { return f(g(x, p)); };
        }
      using F2 = double (*)(double, double);
      static const std::pair<const char*, F2> binary_fns[] = {
          {"min", [](double u, double v) { return std::min(u, v); }},
          {"max", [](double u, double v) { return std::max(u, v); }},
          {"pow", [](double u, double v) { return std::pow(u, v); }},
      };
      for (const auto& [n, f] : binary_fns)
        if (name == n) {
          if (a.size() != 2) fail(name + " takes two arguments");
          return [f, g = a[0], h = a[1]](auto x, auto p) { return f(g(x, p), h(x, p)); };
        }
      fail("unknown function '" + name + "'");
    }
  };

  std::string source_;
  Eval eval_;
  std::size_t max_x_ = 0, max_p_ = 0;
};

}  // namespace hpm
