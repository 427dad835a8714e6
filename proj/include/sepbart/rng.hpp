#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Core>

namespace sepbart {

// Stateless mixer used to derive independent stream seeds from a master seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(splitmix64(master) ^ splitmix64(stream * 0x9e3779b97f4a7c15ULL + 1));
}

// mt19937_64 core with explicit, implementation-independent distributions.
// std::normal_distribution et al. are avoided: their sequences are not
// pinned by the standard, and determinism of retained draws is a contract.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // (0, 1]
  double uniform_pos() { return (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // 0 .. n-1
  int uniform_int(int n) {
    int k = static_cast<int>(uniform() * n);
    return k >= n ? n - 1 : k;
  }

  // Box-Muller, one value per call (stateless across calls).
  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  double exponential(double rate) { return -std::log(uniform_pos()) / rate; }

  // Marsaglia-Tsang; scale 1.
  double gamma(double shape) {
    if (shape < 1.0) {
      double u = uniform_pos();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_pos();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  // InverseGamma(shape, rate): density ∝ x^{-shape-1} exp(-rate/x).
  double inv_gamma(double shape, double rate) { return rate / gamma(shape); }

  Eigen::VectorXd dirichlet(const Eigen::VectorXd& conc) {
    Eigen::VectorXd g(conc.size());
    for (Eigen::Index i = 0; i < conc.size(); ++i) g[i] = gamma(conc[i]);
    double s = g.sum();
    if (s <= 0.0) return Eigen::VectorXd::Constant(conc.size(), 1.0 / conc.size());
    return g / s;
  }

  // Fisher-Yates; std::shuffle's sequence is implementation-defined.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace sepbart
