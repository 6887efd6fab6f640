#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace bcil {

enum class ErrorKind {
  InvalidArgument,
  Io,
  Malformed,
  VersionMismatch,
  TooShort,
  EmptyDataset,
  DimensionMismatch,
  UnsupportedVariant,
  TaskMismatch,
  NoCycles,
  NonFinite,
  NonFiniteGradient,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
    case ErrorKind::Malformed: return "Malformed";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::TooShort: return "TooShort";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::UnsupportedVariant: return "UnsupportedVariant";
    case ErrorKind::TaskMismatch: return "TaskMismatch";
    case ErrorKind::NoCycles: return "NoCycles";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
  }
  return "Unknown";
}

/// Library-wide exception. The kind drives the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// 2 usage, 3 data, 4 numeric failure.
  int exit_code() const noexcept {
    switch (kind_) {
      case ErrorKind::InvalidArgument: return 2;
      case ErrorKind::NonFinite:
      case ErrorKind::NonFiniteGradient: return 4;
      default: return 3;
    }
  }

 private:
  ErrorKind kind_;
};

/// Three per-joint values. Units depend on use (rad, rad/s, N·m).
struct JointTriple {
  std::array<double, 3> v{};

  constexpr JointTriple() = default;
  constexpr JointTriple(double j1, double j2, double j3) : v{j1, j2, j3} {}

  constexpr double& operator[](std::size_t j) { return v[j]; }
  constexpr double operator[](std::size_t j) const { return v[j]; }

  bool finite() const { return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]); }

  friend constexpr JointTriple operator+(JointTriple a, const JointTriple& b) {
    for (std::size_t j = 0; j < 3; ++j) a.v[j] += b.v[j];
    return a;
  }
  friend constexpr JointTriple operator-(JointTriple a, const JointTriple& b) {
    for (std::size_t j = 0; j < 3; ++j) a.v[j] -= b.v[j];
    return a;
  }
  friend constexpr JointTriple operator-(JointTriple a) {
    for (auto& x : a.v) x = -x;
    return a;
  }
  friend constexpr JointTriple operator*(double s, JointTriple a) {
    for (auto& x : a.v) x *= s;
    return a;
  }
  constexpr JointTriple& operator+=(const JointTriple& b) { return *this = *this + b; }
  friend constexpr bool operator==(const JointTriple&, const JointTriple&) = default;
};

/// Elementwise product.
constexpr JointTriple hadamard(JointTriple a, const JointTriple& b) {
  for (std::size_t j = 0; j < 3; ++j) a.v[j] *= b.v[j];
  return a;
}

/// Seeded generator with a portable normal sampler (std::normal_distribution
/// output is implementation defined, which would break cross-toolchain replay).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw Error(ErrorKind::InvalidArgument, "Rng::below(0)");
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
    std::uint64_t x;
    do { x = engine_(); } while (x >= limit);
    return x % n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do { u1 = uniform(); } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Derives an independent stream seed from a base seed and a tag.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// 64-bit FNV-1a.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  void update(double x) {
    const auto bits = std::bit_cast<std::uint64_t>(x);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    update(bytes, 8);
  }
  std::uint64_t digest() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t x) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, x >>= 4) out[static_cast<std::size_t>(i)] = digits[x & 0xf];
  return out;
}

/// Shortest decimal that round-trips to the same binary64.
inline std::string format_double(double x) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc{}) throw Error(ErrorKind::InvalidArgument, "cannot format number");
  return std::string(buf, end);
}

inline bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace bcil
