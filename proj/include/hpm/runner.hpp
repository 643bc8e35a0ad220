// hpm/runner.hpp
//
// Experiment runner behind the hpm CLI. A run reads one JSON config, resolves
// defaults, computes, and writes manifest.json plus result files into the
// output directory. Exit status: 0 success, 2 invalid input, 3 integrity or
// internal failure. Output bytes depend only on (config, seed).
//
// Config layout:
//   { "command": ..., "seed": 0, "output_dir": ..., "grid": {...},
//     "alpha": [...], "params": {...} }
// grid = { "n": [...], "length": [...], "n_velocity": [...], "velocity_length": [...] }.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hpm/anisotropy.hpp"
#include "hpm/averaging.hpp"
#include "hpm/errors.hpp"
#include "hpm/expression.hpp"
#include "hpm/field_io.hpp"
#include "hpm/hmeasure.hpp"
#include "hpm/kinetic.hpp"
#include "hpm/multiplier.hpp"
#include "hpm/rng.hpp"
#include "hpm/spectral.hpp"
#include "hpm/symbols.hpp"
#include "json.hpp"

namespace hpm {

using json = nlohmann::json;

inline const std::vector<std::string>& runner_commands() {
  static const std::vector<std::string> c{"project",       "multiplier-apply", "multiplier-check", "hmeasure",
                                          "averaging",     "nondegeneracy",    "kinetic"};
  return c;
}

// ---------------------------------------------------------------------------
// Text output.

inline std::string format_double(double v) {
  if (v == 0.0) return "0";  // folds -0
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

/// Whitespace-separated columns under a "#" header naming them.
inline std::string emit_plotdata(const std::vector<std::string>& columns, const std::vector<std::vector<double>>& rows) {
  std::string out = "#";
  for (const auto& c : columns) out += " " + c;
  out += "\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) out += (i ? " " : "") + format_double(r[i]);
    out += "\n";
  }
  return out;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header) {
    for (std::size_t i = 0; i < header.size(); ++i) text_ += (i ? "," : "") + header[i];
    text_ += "\n";
  }
  CsvWriter& cell(const std::string& s) {
    text_ += (first_ ? "" : ",") + s;
    first_ = false;
    return *this;
  }
  CsvWriter& cell(double v) { return cell(format_double(v)); }
  CsvWriter& cell(std::size_t v) { return cell(std::to_string(v)); }
  CsvWriter& cell(long v) { return cell(std::to_string(v)); }
  void end_row() {
    text_ += "\n";
    first_ = true;
  }
  const std::string& str() const { return text_; }

 private:
  std::string text_;
  bool first_ = true;
};

// ---------------------------------------------------------------------------
// Config access with line-numbered errors.

class ConfigDoc {
 public:
  ConfigDoc(std::string text) : text_(std::move(text)) {
    try {
      root_ = json::parse(text_);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("malformed JSON: ") + e.what(), line_at(e.byte == 0 ? 0 : e.byte - 1));
    }
    if (!root_.is_object()) throw ConfigError("config must be a JSON object", 1);
  }

  const json& root() const { return root_; }

  /// Line of the first occurrence of "key": at or after `from`.
  std::size_t line_of(const std::string& key, std::size_t from = 0) const { return line_at(offset_of(key, from)); }
  std::size_t offset_of(const std::string& key, std::size_t from = 0) const {
    const std::string quoted = "\"" + key + "\"";
    std::size_t pos = from;
    while ((pos = text_.find(quoted, pos)) != std::string::npos) {
      std::size_t k = pos + quoted.size();
      while (k < text_.size() && std::isspace(static_cast<unsigned char>(text_[k]))) ++k;
      if (k < text_.size() && text_[k] == ':') return pos;
      pos += quoted.size();
    }
    return from;
  }

 private:
  std::size_t line_at(std::size_t offset) const {
    offset = std::min(offset, text_.size());
    return 1 + static_cast<std::size_t>(std::count(text_.begin(), text_.begin() + static_cast<long>(offset), '\n'));
  }

  std::string text_;
  json root_;
};

/// A JSON object section. Reads are recorded into `resolved` with defaults
/// filled in; unknown keys are rejected.
class Section {
 public:
  Section(const ConfigDoc& doc, const json& obj, std::string name, std::size_t offset)
      : doc_(doc), obj_(obj), name_(std::move(name)), offset_(offset) {
    if (!obj_.is_object()) throw ConfigError("'" + name_ + "' must be an object", doc_.line_of(name_));
  }

  void allow(const std::set<std::string>& keys) const {
    for (const auto& [k, v] : obj_.items())
      if (!keys.count(k)) throw ConfigError("unknown key '" + k + "' in " + name_, line(k));
  }
  bool has(const std::string& key) const { return obj_.contains(key) && !obj_.at(key).is_null(); }
  std::size_t line(const std::string& key) const { return doc_.line_of(key, offset_); }
  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw ConfigError(name_ + "." + key + ": " + why, line(key));
  }

  template <class T>
  T get(const std::string& key, const T& def) {
    if (!has(key)) {
      resolved[key] = def;
      return def;
    }
    return require<T>(key);
  }
  template <class T>
  T require(const std::string& key) {
    if (!has(key)) throw ConfigError("missing key '" + key + "' in " + name_, doc_.line_of(name_));
    try {
      T v = obj_.at(key).get<T>();
      resolved[key] = obj_.at(key);
      return v;
    } catch (const json::exception& e) {
      fail(key, std::string("wrong type (") + e.what() + ")");
    }
  }
  Expression expression(const std::string& key, const std::string& def) {
    const auto src = get<std::string>(key, def);
    try {
      return Expression(src);
    } catch (const DomainError& e) {
      fail(key, e.what());
    }
  }
  std::vector<Expression> expressions(const std::string& key, std::vector<std::string> def) {
    std::vector<Expression> out;
    for (const auto& s : get<std::vector<std::string>>(key, def)) {
      try {
        out.emplace_back(s);
      } catch (const DomainError& e) {
        fail(key, e.what());
      }
    }
    return out;
  }
  Section child(const std::string& key) const { return Section(doc_, obj_.at(key), name_ + "." + key, doc_.offset_of(key, offset_)); }

  json resolved = json::object();

 private:
  const ConfigDoc& doc_;
  const json& obj_;
  std::string name_;
  std::size_t offset_;
};

// ---------------------------------------------------------------------------
// Run context.

struct RunOptions {
  std::string command;
  std::string config_text;
  std::filesystem::path config_dir = ".";       // base for relative input paths
  std::optional<std::filesystem::path> out;     // --out
  std::size_t jobs = 1;
};

struct RunResult {
  int status = 0;
  std::string message;
  std::filesystem::path output_dir;
  std::vector<std::string> files;
};

namespace detail {

struct RunContext {
  const ConfigDoc& doc;
  std::string command;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::filesystem::path config_dir;
  std::optional<SpectralGrid> grid;
  std::optional<AnisotropyProfile> profile;
  json manifest = json::object();
  json derived = json::object();
  std::map<std::string, std::string> files;  // name -> contents, written after the run

  const SpectralGrid& need_grid() const {
    if (!grid) throw ConfigError("command '" + command + "' needs a grid", doc.line_of("command"));
    return *grid;
  }
  const AnisotropyProfile& need_profile() const {
    if (!profile) throw ConfigError("command '" + command + "' needs alpha", doc.line_of("command"));
    return *profile;
  }
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  for (int i = 15; i >= 0; --i, v >>= 4) buf[i] = "0123456789abcdef"[v & 15];
  buf[16] = 0;
  return buf;
}

inline json vec_json(std::span<const double> v) { return json(std::vector<double>(v.begin(), v.end())); }

inline void check_arity(Section& s, const std::string& key, const Expression& e, std::size_t dx, std::size_t dp) {
  if (e.x_arity() > dx) s.fail(key, "'" + e.source() + "' uses x" + std::to_string(e.x_arity() - 1) + " but there are " + std::to_string(dx) + " spatial axes");
  if (e.p_arity() > dp) s.fail(key, "'" + e.source() + "' uses p" + std::to_string(e.p_arity() - 1) + " but there are " + std::to_string(dp) + " velocity axes");
}

inline std::vector<long> n_list_from(Section& s, std::vector<long> def) {
  auto n = s.get<std::vector<long>>("n_list", std::move(def));
  try {
    check_n_list(n);
  } catch (const DomainError& e) {
    s.fail("n_list", e.what());
  }
  return n;
}

inline std::vector<std::vector<double>> x_samples_from(Section& s, std::size_t d, double centre) {
  auto xs = s.get<std::vector<std::vector<double>>>("x_samples", {std::vector<double>(d, centre)});
  if (xs.empty()) s.fail("x_samples", "need at least one sample");
  for (const auto& x : xs)
    if (x.size() != d) s.fail("x_samples", "each sample needs " + std::to_string(d) + " coordinates");
  return xs;
}

inline void scan_outputs(RunContext& ctx, const NonDegeneracyReport& rep, const std::string& stem) {
  CsvWriter csv({"x_idx", "P_idx", "eps", "measure"});
  for (const auto& e : rep.entries)
    for (std::size_t i = 0; i < rep.eps_list.size(); ++i) {
      csv.cell(e.x_index).cell(e.xi_index).cell(rep.eps_list[i]).cell(e.measure[i]);
      csv.end_row();
    }
  ctx.files[stem + ".csv"] = csv.str();
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < rep.eps_list.size(); ++i) rows.push_back({rep.eps_list[i], rep.sup_measure[i]});
  ctx.files[stem + ".dat"] = emit_plotdata({"eps", "sup_measure"}, rows);
}

inline json scan_summary(const NonDegeneracyReport& rep) {
  return json{{"degenerate", rep.degenerate},    {"threshold", rep.threshold},
              {"domain", rep.p_domain},          {"eps_list", rep.eps_list},
              {"sup_measure", rep.sup_measure},  {"sup_exponent", rep.sup_exponent},
              {"entries", rep.entries.size()}};
}

// --- commands -----------------------------------------------------------------

inline void run_project(RunContext& ctx, Section& p) {
  p.allow({"points", "resolution"});
  const auto& prof = ctx.need_profile();
  const std::size_t d = prof.dim();
  const auto res = p.get<std::size_t>("resolution", 32);
  auto points = p.get<std::vector<std::vector<double>>>("points", {});

  CsvWriter mesh_csv([&] {
    std::vector<std::string> h{"idx"};
    for (std::size_t k = 0; k < d; ++k) h.push_back("xi" + std::to_string(k));
    h.push_back("weight");
    return h;
  }());
  std::vector<PMeshPoint> mesh;
  try {
    mesh = mesh_P(prof, res);
  } catch (const DomainError& e) {
    p.fail("resolution", e.what());
  }
  double max_res = 0.0;
  for (std::size_t i = 0; i < mesh.size(); ++i) {
    mesh_csv.cell(i);
    for (double v : mesh[i].xi) mesh_csv.cell(v);
    mesh_csv.cell(mesh[i].weight);
    mesh_csv.end_row();
    max_res = std::max(max_res, std::abs(P_constraint_residual(mesh[i].xi, prof)));
  }
  ctx.files["P_mesh.csv"] = mesh_csv.str();

  std::vector<std::string> h{"idx"};
  for (std::size_t k = 0; k < d; ++k) h.push_back("xi" + std::to_string(k));
  for (std::size_t k = 0; k < d; ++k) h.push_back("proj" + std::to_string(k));
  h.push_back("quasi_norm");
  h.push_back("residual");
  CsvWriter csv(h);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != d) p.fail("points", "each point needs " + std::to_string(d) + " coordinates");
    std::vector<double> pr;
    try {
      pr = project_to_P(points[i], prof);
    } catch (const DomainError& e) {
      p.fail("points", std::string("point ") + std::to_string(i) + ": " + e.what());
    }
    csv.cell(i);
    for (double v : points[i]) csv.cell(v);
    for (double v : pr) csv.cell(v);
    csv.cell(quasi_norm(points[i], prof)).cell(P_constraint_residual(pr, prof));
    csv.end_row();
  }
  ctx.files["projection.csv"] = csv.str();
  ctx.derived["mesh_points"] = mesh.size();
  ctx.derived["mesh_max_residual"] = max_res;
}

inline SpectralField input_field(RunContext& ctx, Section& p) {
  const auto& g = ctx.need_grid();
  if (p.has("input")) {
    const auto path = ctx.config_dir / p.require<std::string>("input");
    try {
      auto f = read_field(path);
      if (!(f.grid() == g)) p.fail("input", "field grid differs from the configured grid");
      return f;
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      p.fail("input", e.what());
    }
  }
  p.resolved["input"] = nullptr;
  CounterRng rng(ctx.seed, "multiplier-input");
  std::vector<cplx> v(g.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.normal(i);
  return SpectralField(g, Space::physical, std::move(v));
}

inline void run_multiplier_apply(RunContext& ctx, Section& p) {
  p.allow({"operation", "symbol", "cutoff_radius", "axis", "order", "input"});
  const auto& prof = ctx.need_profile();
  const auto& g = ctx.need_grid();
  if (g.dim() != prof.dim()) throw ConfigError("alpha and grid have different dimensions", ctx.doc.line_of("alpha"));
  const auto op = p.get<std::string>("operation", "symbol");
  const auto u = input_field(ctx, p);
  SpectralField out;
  try {
    if (op == "symbol") {
      out = apply_projected_symbol(u, make_symbol(p.get<std::string>("symbol", "one"), g.dim()), prof);
    } else if (op == "smoothing-inverse") {
      const double r = p.get<double>("cutoff_radius", 1.0);
      ctx.derived["cutoff_radius"] = r;
      out = smoothing_inverse(u, prof, r);
    } else if (op == "derivative") {
      const auto axis = p.get<std::size_t>("axis", 0);
      if (axis >= g.dim()) p.fail("axis", "out of range");
      out = fractional_derivative(u, axis, p.get<double>("order", prof.alpha()[axis]));
    } else {
      p.fail("operation", "expected symbol, smoothing-inverse or derivative");
    }
  } catch (const DomainError& e) {
    p.fail("operation", e.what());
  }
  out = to_physical(out);
  ctx.files["input.fld"] = encode_field(u);
  ctx.files["output.fld"] = encode_field(out);
  ctx.files["multiplier_apply.json"] =
      json{{"operation", op}, {"l2_in", l2_norm(u)}, {"l2_out", l2_norm(out)}, {"max_abs_out", max_abs(out)}}.dump(2) + "\n";
}

inline void run_multiplier_check(RunContext& ctx, Section& p) {
  p.allow({"symbol", "shells", "samples_per_shell"});
  const auto& prof = ctx.need_profile();
  const auto name = p.get<std::string>("symbol", "one");
  const auto shells = p.get<std::size_t>("shells", 10);
  const auto samples = p.get<std::size_t>("samples_per_shell", 64);
  MarcinkiewiczReport rep;
  try {
    rep = marcinkiewicz_certify(make_symbol(name, prof.dim()), prof, shells, samples);
  } catch (const DomainError& e) {
    p.fail("symbol", e.what());
  }
  json per_beta = json::object();
  for (const auto& [b, v] : rep.per_beta_sup) per_beta[multi_index_key(b)] = v;
  json out{{"symbol", name},
           {"constant", rep.constant_estimate},
           {"diverged", rep.diverged},
           {"shells", rep.shells},
           {"samples_per_shell", rep.samples_per_shell},
           {"shell_exponents", rep.shell_exponents},
           {"per_shell_sup", rep.per_shell_sup},
           {"per_beta_sup", per_beta},
           {"coarse_level_sup", rep.coarse_level_sup},
           {"fine_level_sup", rep.fine_level_sup}};
  ctx.files["marcinkiewicz.json"] = out.dump(2) + "\n";
}

inline void run_hmeasure(RunContext& ctx, Section& p) {
  p.allow({"sequence", "c", "x0", "v", "g", "files", "n_list", "x_cells", "p_cells", "basis_size"});
  const auto& prof = ctx.need_profile();
  const auto& g = ctx.need_grid();
  const std::size_t d = g.dim();
  if (d != prof.dim()) throw ConfigError("alpha and grid have different dimensions", ctx.doc.line_of("alpha"));
  const auto kind = p.get<std::string>("sequence", "oscillation");
  const auto n_list = n_list_from(p, {16, 24, 32});
  const auto K = p.get<std::size_t>("x_cells", 4);
  const auto R = p.get<std::size_t>("p_cells", 32);
  if (K == 0) p.fail("x_cells", "must be positive");
  const auto v = p.expression("v", "1");
  check_arity(p, "v", v, d, 0);
  const SpatialFn vfn = [v](std::span<const double> x) -> cplx { return v(x); };
  const SpectralGrid sg = g.spatial();

  SequenceGenerator gen;
  std::vector<double> c;
  try {
    if (kind == "oscillation") {
      c = p.require<std::vector<double>>("c");
      if (c.size() != d) p.fail("c", "needs " + std::to_string(d) + " entries");
      gen = oscillation_generator(prof, c, SpectralField::sample_x(sg, vfn));
      for (long n : n_list) {
        const auto kappa = oscillation_frequency(sg, prof, c, n);
        ctx.derived["kappa"][std::to_string(n)] = kappa;
      }
    } else if (kind == "concentration") {
      auto x0 = p.get<std::vector<double>>("x0", std::vector<double>(d, 0.5));
      if (x0.size() != d) p.fail("x0", "needs " + std::to_string(d) + " entries");
      gen = concentration_generator(sg, prof, x0, vfn);
    } else if (kind == "files") {
      std::map<long, std::filesystem::path> files;
      for (const auto& [k, val] : p.require<std::map<std::string, std::string>>("files")) {
        long n = 0;
        const auto r = std::from_chars(k.data(), k.data() + k.size(), n);
        if (r.ec != std::errc() || r.ptr != k.data() + k.size()) p.fail("files", "keys must be integers");
        files[n] = ctx.config_dir / val;
      }
      gen = file_generator(std::move(files));
      if (!(gen.grid == g)) p.fail("files", "field grid differs from the configured grid");
    } else {
      p.fail("sequence", "expected oscillation, concentration or files");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const DomainError& e) {
    p.fail("sequence", e.what());
  }

  const XCells xc(sg, K);
  const PCells pc(prof, R);
  MatrixMeasure M;
  try {
    if (g.velocity_dim() == 0) {
      M = scalar_hmeasure(gen, xc, pc, n_list, ctx.jobs);
    } else {
      const auto gp = p.expression("g", "1");
      check_arity(p, "g", gp, 0, g.velocity_dim());
      const auto basis = cosine_basis(g, p.get<std::size_t>("basis_size", 2));
      SequenceGenerator full = kind == "files"
                                   ? gen
                                   : with_velocity_profile(gen, g, [gp](std::span<const double> q) -> cplx {
                                       return gp(std::span<const double>{}, q);
                                     });
      M = matrix_hmeasure(full, basis, xc, pc, n_list, ctx.jobs);
    }
  } catch (const DomainError& e) {
    throw ConfigError(std::string("hmeasure: ") + e.what(), ctx.doc.line_of("params"));
  }

  double scale = 0.0;
  for (const auto& z : M.entries) scale = std::max(scale, std::abs(z));
  for (std::size_t i = 0; i < M.basis_size; ++i)
    for (std::size_t a = 0; a < M.x_cells; ++a)
      for (std::size_t b = 0; b < M.p_cells; ++b)
        if (M.mu(i, i, a, b).real() < -1e-9 * std::max(scale, 1.0))
          throw IntegrityError("negative diagonal measure at i=" + std::to_string(i) + " x_cell=" + std::to_string(a) +
                               " P_cell=" + std::to_string(b));

  const std::string run_id = hex64(detail::fnv1a(ctx.manifest.dump()));
  CsvWriter csv({"run_id", "i", "j", "x_cell", "P_cell", "n", "re", "im", "extrap_re", "extrap_im", "err"});
  for (std::size_t t = 0; t < M.n_list.size(); ++t)
    for (std::size_t i = 0; i < M.basis_size; ++i)
      for (std::size_t j = 0; j < M.basis_size; ++j)
        for (std::size_t a = 0; a < M.x_cells; ++a)
          for (std::size_t b = 0; b < M.p_cells; ++b) {
            const cplx r = M.raw_mu(t, i, j, a, b), e = M.mu(i, j, a, b);
            csv.cell(run_id).cell(i).cell(j).cell(a).cell(b).cell(M.n_list[t]);
            csv.cell(r.real()).cell(r.imag()).cell(e.real()).cell(e.imag()).cell(M.errors[M.index(i, j, a, b)]);
            csv.end_row();
          }
  ctx.files["hmeasure.csv"] = csv.str();

  json summary{{"run_id", run_id}, {"marginal", M.marginal}, {"x_cell_volume", M.x_cell_volume}};
  double total = 0.0;
  for (double m : M.marginal) total += m;
  summary["total_mass"] = total;
  if (kind == "oscillation") {
    const auto target = project_to_P(c, prof);
    const auto adj = pc.adjacent(target);
    double frac = 0.0;
    for (std::size_t a = 0; a < M.x_cells; ++a) {
      for (auto b : adj) frac += M.trace_at(a, b);
    }
    summary["target"] = target;
    summary["adjacent_cells"] = adj;
    summary["adjacent_mass_fraction"] = total > 0 ? frac / total : 0.0;
  }
  ctx.files["hmeasure.json"] = summary.dump(2) + "\n";
  ctx.derived["x_cells"] = xc.count();
  ctx.derived["p_cells"] = pc.count();
  ctx.derived["p_cell_spacing"] = pc.spacing();
  ctx.derived["p_cell_bandwidth"] = pc.bandwidth();
  ctx.derived["n_list"] = n_list;
}

inline std::vector<CoefficientFn> coefficient_fns(const std::vector<Expression>& a) {
  std::vector<CoefficientFn> out;
  for (const auto& e : a)
    out.push_back([e](std::span<const double> x, std::span<const double> p) -> cplx { return e(x, p); });
  return out;
}

inline void run_averaging(RunContext& ctx, Section& p) {
  p.allow({"a", "rho", "t", "n_list", "envelope", "direction", "window"});
  const auto& g = ctx.need_grid();
  const std::size_t d = g.dim(), m = g.velocity_dim();
  if (m == 0) throw ConfigError("averaging needs velocity axes (grid.n_velocity)", ctx.doc.line_of("grid"));
  std::vector<std::string> def_a(d, "1");
  const auto a = p.expressions("a", def_a);
  if (a.size() != d) p.fail("a", "needs one coefficient per spatial axis");
  for (const auto& e : a) check_arity(p, "a", e, 0, m);
  const auto rho = p.expression("rho", "1");
  check_arity(p, "rho", rho, 0, m);
  const auto env = p.expression("envelope", "1");
  check_arity(p, "envelope", env, d, m);
  std::vector<long> def_dir(d, 0);
  def_dir.back() = 1;
  const auto dir = p.get<std::vector<long>>("direction", def_dir);
  if (dir.size() != d) p.fail("direction", "needs one entry per spatial axis");
  const double t = p.get<double>("t", 1.0);
  const auto n_list = n_list_from(p, {1, 2, 4, 8, 16});
  Window w{std::vector<double>(d), std::vector<double>(d)};
  for (std::size_t k = 0; k < d; ++k) {
    w.lo[k] = 0.25 * g.length()[k];
    w.hi[k] = 0.75 * g.length()[k];
  }
  if (p.has("window")) {
    auto ws = p.child("window");
    ws.allow({"lo", "hi"});
    w.lo = ws.require<std::vector<double>>("lo");
    w.hi = ws.require<std::vector<double>>("hi");
    p.resolved["window"] = ws.resolved;
  } else {
    p.resolved["window"] = json{{"lo", w.lo}, {"hi", w.hi}};
  }

  TransportProblem prob;
  prob.grid = g;
  prob.t = t;
  prob.a = [a](std::span<const double> q) {
    std::vector<double> out;
    for (const auto& e : a) out.push_back(e(std::span<const double>{}, q));
    return out;
  };
  prob.initial = [g, env, dir](long n) {
    return SpectralField::sample(g, [&](std::span<const double> x, std::span<const double> q) {
      double ph = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) ph += static_cast<double>(dir[k]) * x[k] / g.length()[k];
      return env(x, q) * std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>(n) * ph);
    });
  };
  const auto weights = sample_velocity_weight(g, [rho](std::span<const double> q) { return rho(std::span<const double>{}, q); });
  CompactnessTable table;
  try {
    table = compactness_metric(transport_generator(prob), weights, w, n_list, ctx.jobs);
  } catch (const DomainError& e) {
    throw ConfigError(std::string("averaging: ") + e.what(), ctx.doc.line_of("params"));
  }
  CsvWriter csv({"n", "norm", "ratio"});
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < table.n_list.size(); ++i) {
    csv.cell(table.n_list[i]).cell(table.norms[i]).cell(table.ratios[i]);
    csv.end_row();
    rows.push_back({static_cast<double>(table.n_list[i]), table.norms[i], table.ratios[i]});
  }
  ctx.files["decay.csv"] = csv.str();
  ctx.files["decay.dat"] = emit_plotdata({"n", "norm", "ratio"}, rows);
  bool edge = false;
  {
    const auto avg = velocity_average(prob.initial(n_list.front()), weights);
    edge = avg.support_warning;
  }
  ctx.files["averaging.json"] =
      json{{"final_ratio", table.ratios.back()},
           {"min_ratio", *std::min_element(table.ratios.begin() + 1, table.ratios.end())},
           {"rho_support_warning", edge}}
          .dump(2) +
      "\n";
  ctx.derived["n_list"] = n_list;
}

inline void run_nondegeneracy(RunContext& ctx, Section& p) {
  p.allow({"a", "eps_list", "x_samples", "p_resolution"});
  const auto& prof = ctx.need_profile();
  const auto& g = ctx.need_grid();
  const std::size_t d = g.dim(), m = g.velocity_dim();
  if (m == 0) throw ConfigError("nondegeneracy needs velocity axes (grid.n_velocity)", ctx.doc.line_of("grid"));
  if (d != prof.dim()) throw ConfigError("alpha and grid have different dimensions", ctx.doc.line_of("alpha"));
  const auto a = p.expressions("a", std::vector<std::string>(d, "1"));
  if (a.size() != d) p.fail("a", "needs one coefficient per spatial axis");
  for (const auto& e : a) check_arity(p, "a", e, d, m);
  const auto eps = p.get<std::vector<double>>("eps_list", {0.01, 0.02, 0.04, 0.08});
  const auto xs = x_samples_from(p, d, 0.5);
  const auto res = p.get<std::size_t>("p_resolution", 64);
  NonDegeneracyReport rep;
  try {
    rep = nondegeneracy_scan(diagonal_terms(coefficient_fns(a), prof.alpha()), xs, prof, res, g, eps, ctx.jobs);
  } catch (const DomainError& e) {
    p.fail("eps_list", e.what());
  }
  scan_outputs(ctx, rep, "nondegeneracy");
  ctx.files["nondegeneracy.json"] = scan_summary(rep).dump(2) + "\n";
}

inline FluxPair flux_from(Section& p) {
  const auto name = p.get<std::string>("flux", "burgers-heat");
  try {
    if (name == "burgers-heat") return burgers_heat_flux();
    if (name == "linear-transport") return linear_transport_flux(p.get<std::vector<double>>("velocity", {1.0, 0.0}));
    if (name == "custom") {
      auto ts = p.child("table");
      ts.allow({"d", "l_split", "lambda", "df", "dB"});
      FluxTable t;
      t.d = ts.require<std::size_t>("d");
      t.l_split = ts.require<std::size_t>("l_split");
      t.lambda = ts.require<std::vector<double>>("lambda");
      t.df = ts.require<std::vector<std::vector<double>>>("df");
      t.dB = ts.require<std::vector<std::vector<double>>>("dB");
      p.resolved["table"] = ts.resolved;
      return custom_flux(t);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const json::exception& e) {
    p.fail("table", e.what());
  } catch (const DomainError& e) {
    p.fail("flux", e.what());
  }
  p.fail("flux", "expected burgers-heat, linear-transport or custom");
}

inline void run_kinetic(RunContext& ctx, Section& p) {
  p.allow({"flux", "velocity", "table", "M", "n_lambda", "eps_list", "mesh_resolution", "x_samples", "samples"});
  const auto fp = flux_from(p);
  const double M = p.get<double>("M", 1.0);
  const auto nl = p.get<std::size_t>("n_lambda", 2000);
  const auto eps = p.get<std::vector<double>>("eps_list", {0.01, 0.02, 0.04, 0.08});
  const auto res = p.get<std::size_t>("mesh_resolution", 32);
  const auto xs = x_samples_from(p, fp.d, 0.0);
  const auto count = p.get<std::size_t>("samples", 1000);

  // Kinetic identity on seeded samples in [-M, M].
  CounterRng rng(ctx.seed, "kinetic-samples");
  std::vector<double> u(count);
  for (std::size_t i = 0; i < count; ++i) u[i] = M * (2.0 * rng.uniform(i) - 1.0);
  double worst = 0.0;
  try {
    const auto kt = kinetic_transform(u, M, std::max<std::size_t>(nl, 1));
    for (std::size_t i = 0; i < count; ++i) worst = std::max(worst, std::abs(kinetic_integral(kt, i) - 2.0 * u[i]));
  } catch (const DomainError& e) {
    p.fail("M", e.what());
  }

  const UPManifold up{fp.d, fp.l_split};
  NonDegeneracyReport rep;
  try {
    rep = up_nondegeneracy_scan(fp, xs, up.mesh(res), M, nl, eps, ctx.jobs);
  } catch (const DomainError& e) {
    p.fail("eps_list", e.what());
  }
  scan_outputs(ctx, rep, "kinetic_scan");
  json cert{{"vacuous", fp.ellipticity.vacuous}, {"samples", fp.ellipticity.samples}};
  cert["c"] = fp.ellipticity.vacuous ? json(nullptr) : json(fp.ellipticity.c);
  json out{{"flux", fp.name},
           {"d", fp.d},
           {"l_split", fp.l_split},
           {"ellipticity", cert},
           {"identity_max_error", worst},
           {"scan", scan_summary(rep)}};
  ctx.files["kinetic.json"] = out.dump(2) + "\n";
  ctx.derived["up_exponents"] = up.exponents();
}

inline void write_text(const std::filesystem::path& path, const std::string& s) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IntegrityError("cannot write " + path.string());
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!f) throw IntegrityError("write failed for " + path.string());
}

inline void execute(const RunOptions& opt, RunResult& result) {
  const ConfigDoc doc(opt.config_text);
  Section top(doc, doc.root(), "config", 0);
  top.allow({"command", "seed", "output_dir", "grid", "alpha", "params"});

  RunContext ctx{doc, opt.command, 0, 1, opt.config_dir, {}, {}, json::object(), json::object(), {}};
  if (top.has("command")) {
    const auto c = top.require<std::string>("command");
    if (ctx.command.empty()) ctx.command = c;
    else if (c != ctx.command) top.fail("command", "config is for '" + c + "', invoked as '" + ctx.command + "'");
  }
  if (std::find(runner_commands().begin(), runner_commands().end(), ctx.command) == runner_commands().end())
    throw ConfigError("unknown command '" + ctx.command + "'", doc.line_of("command"));
  ctx.seed = top.get<std::uint64_t>("seed", 0);
  ctx.jobs = std::max<std::size_t>(1, opt.jobs);
  ctx.config_dir = opt.config_dir;

  json manifest_grid = nullptr;
  if (top.has("grid")) {
    auto gs = top.child("grid");
    gs.allow({"n", "length", "n_velocity", "velocity_length"});
    auto n = gs.require<std::vector<std::size_t>>("n");
    auto L = gs.get<std::vector<double>>("length", std::vector<double>(n.size(), 1.0));
    auto nv = gs.get<std::vector<std::size_t>>("n_velocity", {});
    auto Lv = gs.get<std::vector<double>>("velocity_length", std::vector<double>(nv.size(), 2.0));
    try {
      ctx.grid = SpectralGrid(n, L, nv, Lv);
    } catch (const DomainError& e) {
      gs.fail("n", e.what());
    }
    manifest_grid = gs.resolved;
  }
  json manifest_alpha = nullptr;
  if (top.has("alpha")) {
    const auto alpha = top.require<std::vector<double>>("alpha");
    try {
      ctx.profile = AnisotropyProfile(alpha);
    } catch (const DomainError& e) {
      top.fail("alpha", e.what());
    }
    manifest_alpha = alpha;
  }

  const json empty = json::object();
  Section params = top.has("params") ? top.child("params") : Section(doc, empty, "params", 0);

  ctx.manifest = json{{"command", ctx.command}, {"seed", ctx.seed}, {"grid", manifest_grid}, {"alpha", manifest_alpha}};
  if (ctx.profile) {
    ctx.manifest["l"] = ctx.profile->l();
    ctx.manifest["exponents"] = ctx.profile->exponents();
  }

  if (ctx.command == "project") run_project(ctx, params);
  else if (ctx.command == "multiplier-apply") run_multiplier_apply(ctx, params);
  else if (ctx.command == "multiplier-check") run_multiplier_check(ctx, params);
  else if (ctx.command == "hmeasure") run_hmeasure(ctx, params);
  else if (ctx.command == "averaging") run_averaging(ctx, params);
  else if (ctx.command == "nondegeneracy") run_nondegeneracy(ctx, params);
  else run_kinetic(ctx, params);

  // Output directory: --out, then config, then HPM_OUTPUT_DIR, then ./hpm_out.
  std::filesystem::path dir = "hpm_out";
  if (const char* env = std::getenv("HPM_OUTPUT_DIR"); env && *env) dir = env;
  if (top.has("output_dir")) dir = opt.config_dir / top.require<std::string>("output_dir");
  if (opt.out) dir = *opt.out;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());

  ctx.manifest["params"] = params.resolved;
  ctx.manifest["derived"] = ctx.derived;
  std::vector<std::string> names;
  for (const auto& [name, body] : ctx.files) names.push_back(name);
  ctx.manifest["outputs"] = names;
  ctx.files["manifest.json"] = ctx.manifest.dump(2) + "\n";

  for (const auto& [name, body] : ctx.files) {
    write_text(dir / name, body);
    result.files.push_back(name);
  }
  result.output_dir = dir;
}

}  // namespace detail

/// Runs one experiment. Never throws; failures are reported via status.
inline RunResult run(const RunOptions& opt) {
  RunResult r;
  try {
    detail::execute(opt, r);
    r.status = 0;
  } catch (const ConfigError& e) {
    r.status = 2;
    r.message = e.what();
  } catch (const IntegrityError& e) {
    r.status = 3;
    r.message = e.what();
  } catch (const Error& e) {
    r.status = 2;
    r.message = e.what();
  } catch (const json::exception& e) {
    r.status = 2;
    r.message = e.what();
  } catch (const std::exception& e) {
    r.status = 3;
    r.message = e.what();
  }
  return r;
}

inline RunResult run_file(const std::string& command, const std::filesystem::path& config,
                          std::optional<std::filesystem::path> out = std::nullopt, std::size_t jobs = 1) {
  std::ifstream f(config, std::ios::binary);
  if (!f) return {2, "cannot read config " + config.string(), {}, {}};
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return run({command, std::move(text), config.parent_path().empty() ? "." : config.parent_path(), std::move(out), jobs});
}

}  // namespace hpm
