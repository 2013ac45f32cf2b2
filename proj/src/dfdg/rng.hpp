#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace dfdg {

/// Seeded pseudo-random source. The engine is std::mt19937_64, whose output
/// sequence is fixed by the standard; every distribution is implemented here
/// so that draws do not depend on the standard library vendor.
class Rng {
 public:
  static constexpr std::string_view kFamily = "mt19937_64";

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Independent child seed for a named stream (splitmix64 finalizer).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64() { return engine_(); }
  double uniform();                        // [0, 1)
  std::uint64_t uniform_int(std::uint64_t n);  // [0, n)
  double normal();
  double gamma(double shape);
  std::vector<double> dirichlet(double alpha, int n);
  int categorical(std::span<const double> probs);

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = uniform_int(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dfdg
