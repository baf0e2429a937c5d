#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mixclip {

/// Dense 64-bit vector. Embeddings, logits and raw features all use this.
using Vec64 = std::vector<double>;

/// Raised when two operands have incompatible dimensions.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Vector arithmetic. Every reduction runs left to right in index order so
// results are bit-reproducible.
// ---------------------------------------------------------------------------

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double norm(std::span<const double> a);

/// a / ||a||. Throws std::invalid_argument on a zero (or non-finite) norm.
Vec64 l2_normalize(std::span<const double> a);

/// Overflow-safe softmax: exp(l_i - max) / sum_j exp(l_j - max).
Vec64 softmax(std::span<const double> logits);

/// max + log(sum exp(l_i - max)).
double log_sum_exp(std::span<const double> logits);

/// alpha * a + (1 - alpha) * b, elementwise.
Vec64 lerp(std::span<const double> a, std::span<const double> b, double alpha);

void require_same_dim(std::span<const double> a, std::span<const double> b,
                      const char* what);
bool all_finite(std::span<const double> a);

// ---------------------------------------------------------------------------
// Randomness
// ---------------------------------------------------------------------------

/// SplitMix64 finalizer (Steele, Lea, Flood 2014):
///   z += 0x9E3779B97F4A7C15
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   return z ^ (z >> 31)
/// `state` is advanced by the golden-ratio increment.
std::uint64_t splitmix64(std::uint64_t& state);

/// Child seed for an independent stream:
///   s = parent ^ 0x6A09E667F3BCC909; splitmix64(s);       // discard
///   s ^= index * 0x9E3779B97F4A7C15; return splitmix64(s)
/// Streams derived from the same parent with different indices are
/// independent for all practical purposes.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

/// 64-bit FNV-1a over the bytes of `text`.
std::uint64_t fnv1a64(std::string_view text);

/// xoshiro256** 1.0 (Blackman and Vigna), state filled from the seed with
/// four successive splitmix64 outputs. The stream is fully determined by the
/// seed on every platform.
class SeededRng {
 public:
  static constexpr const char* kAlgorithmId = "xoshiro256**/splitmix64";

  explicit SeededRng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform on the open interval (0, 1): ((x >> 11) + 0.5) * 2^-53.
  double uniform_open();

  /// Uniform integer in [0, n) by rejection; n > 0.
  std::uint64_t uniform_index(std::uint64_t n);

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();

  /// Fisher-Yates permutation of 0..n-1, drawn from the back.
  std::vector<std::size_t> permutation(std::size_t n);

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

struct BetaParams {
  double alpha = 0.2;
  double beta = 0.2;

  void validate() const;
};

/// Draws from Beta(alpha, beta) with Johnk's accept-reject method evaluated
/// in log space: X = U^(1/alpha), Y = V^(1/beta), accept when X + Y <= 1 and
/// return X / (X + Y). Exact for any shape; efficient when both shapes <= 1.
double sample_beta(SeededRng& rng, const BetaParams& params);

// ---------------------------------------------------------------------------
// Gradient oracle
// ---------------------------------------------------------------------------

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
/// Throws std::domain_error if f is non-finite anywhere on the stencil.
Vec64 finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h);

/// ||a - b|| / max(||a||, ||b||, floor).
double relative_error(std::span<const double> a, std::span<const double> b,
                      double floor = 1e-12);

// ---------------------------------------------------------------------------
// Text formatting
// ---------------------------------------------------------------------------

/// Shortest decimal string that parses back to exactly `value`.
std::string format_shortest(double value);

/// Fixed-point with `digits` fractional digits.
std::string format_fixed(double value, int digits);

}  // namespace mixclip
