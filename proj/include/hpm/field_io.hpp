// hpm/field_io.hpp
//
// HPFLD1 field files:
//   "HPFLD1\n"
//   {"d":..,"m":..,"n":[..],"L":[..],"space":"physical"|"frequency"}\n
//   raw little-endian float64 (re, im) pairs, row-major, last axis fastest.
// "n" and "L" list the d spatial axes followed by the m velocity axes.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "hpm/errors.hpp"
#include "hpm/spectral.hpp"

namespace hpm {

inline constexpr std::string_view kFieldMagic = "HPFLD1\n";

namespace detail {

inline std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

}  // namespace detail

/// The HPFLD1 byte image of f.
inline std::string encode_field(const SpectralField& f) {
  const auto& g = f.grid();
  nlohmann::ordered_json h;
  h["d"] = g.dim();
  h["m"] = g.velocity_dim();
  std::vector<std::size_t> n(g.n());
  n.insert(n.end(), g.n_velocity().begin(), g.n_velocity().end());
  std::vector<double> len(g.length());
  len.insert(len.end(), g.velocity_length().begin(), g.velocity_length().end());
  h["n"] = n;
  h["L"] = len;
  h["space"] = to_string(f.space());

  std::string out(kFieldMagic);
  out += h.dump();
  out += '\n';
  std::vector<std::uint64_t> raw(2 * f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    raw[2 * i] = detail::to_little_endian(std::bit_cast<std::uint64_t>(f[i].real()));
    raw[2 * i + 1] = detail::to_little_endian(std::bit_cast<std::uint64_t>(f[i].imag()));
  }
  out.append(reinterpret_cast<const char*>(raw.data()), raw.size() * sizeof(std::uint64_t));
  return out;
}

inline void write_field(const SpectralField& f, const std::filesystem::path& path) {
  const auto bytes = encode_field(f);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("write_field: cannot open " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write_field: write failed for " + path.string());
}

inline SpectralField read_field(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_field: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.compare(0, kFieldMagic.size(), kFieldMagic) != 0)
    throw FormatError("read_field: bad magic in " + path.string());
  const auto eol = bytes.find('\n', kFieldMagic.size());
  if (eol == std::string::npos) throw FormatError("read_field: unterminated header");

  std::size_t d = 0, m = 0;
  std::vector<std::size_t> n;
  std::vector<double> len;
  Space space;
  try {
    const auto h = nlohmann::json::parse(bytes.substr(kFieldMagic.size(), eol - kFieldMagic.size()));
    d = h.at("d").get<std::size_t>();
    m = h.at("m").get<std::size_t>();
    n = h.at("n").get<std::vector<std::size_t>>();
    len = h.at("L").get<std::vector<double>>();
    const auto s = h.at("space").get<std::string>();
    if (s == "physical") space = Space::physical;
    else if (s == "frequency") space = Space::frequency;
    else throw FormatError("read_field: unknown space tag '" + s + "'");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("read_field: malformed header: ") + e.what());
  }
  if (d == 0) throw FormatError("read_field: header declares d = 0");
  if (n.size() != d + m || len.size() != d + m)
    throw FormatError("read_field: header axis lists do not match d + m");

  SpectralGrid grid;
  try {
    grid = SpectralGrid(std::vector<std::size_t>(n.begin(), n.begin() + static_cast<long>(d)),
                        std::vector<double>(len.begin(), len.begin() + static_cast<long>(d)),
                        std::vector<std::size_t>(n.begin() + static_cast<long>(d), n.end()),
                        std::vector<double>(len.begin() + static_cast<long>(d), len.end()));
  } catch (const DomainError& e) {
    throw FormatError(std::string("read_field: invalid grid: ") + e.what());
  }

  const std::size_t payload = bytes.size() - (eol + 1);
  if (payload != grid.size() * 16)
    throw CorruptionError("read_field: payload has " + std::to_string(payload) + " bytes, expected " +
                          std::to_string(grid.size() * 16));
  std::vector<cplx> v(grid.size());
  const char* p = bytes.data() + eol + 1;
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint64_t re, im;
    std::memcpy(&re, p + 16 * i, 8);
    std::memcpy(&im, p + 16 * i + 8, 8);
    v[i] = {std::bit_cast<double>(detail::to_little_endian(re)),
            std::bit_cast<double>(detail::to_little_endian(im))};
  }
  return SpectralField(std::move(grid), space, std::move(v));
}

}  // namespace hpm
