#include "mixclip/numcore.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

namespace mixclip {

void require_same_dim(std::span<const double> a, std::span<const double> b,
                      const char* what) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": dimension mismatch (" +
                         std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
  }
}

bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(),
                     [](double v) { return std::isfinite(v); });
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += a[i] * b[i];
  }
  return acc;
}

double squared_norm(std::span<const double> a) {
  double acc = 0.0;
  for (double v : a) {
    acc += v * v;
  }
  return acc;
}

double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

Vec64 l2_normalize(std::span<const double> a) {
  const double n = norm(a);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw std::invalid_argument("l2_normalize: vector has zero or non-finite norm");
  }
  Vec64 out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = a[i] / n;
  }
  return out;
}

Vec64 softmax(std::span<const double> logits) {
  if (logits.empty()) {
    throw std::invalid_argument("softmax: empty logits");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  Vec64 out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    total += out[i];
  }
  for (double& v : out) {
    v /= total;
  }
  return out;
}

double log_sum_exp(std::span<const double> logits) {
  if (logits.empty()) {
    throw std::invalid_argument("log_sum_exp: empty logits");
  }
  // m + log(1 + rest): log1p keeps the small-loss regime accurate.
  const auto top = std::max_element(logits.begin(), logits.end());
  const double m = *top;
  double rest = 0.0;
  for (auto it = logits.begin(); it != logits.end(); ++it) {
    if (it != top) {
      rest += std::exp(*it - m);
    }
  }
  return m + std::log1p(rest);
}

Vec64 lerp(std::span<const double> a, std::span<const double> b, double alpha) {
  require_same_dim(a, b, "lerp");
  const double rest = 1.0 - alpha;
  Vec64 out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = alpha * a[i] + rest * b[i];
  }
  return out;
}

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  std::uint64_t s = parent ^ 0x6A09E667F3BCC909ULL;
  splitmix64(s);
  s ^= index * 0x9E3779B97F4A7C15ULL;
  return splitmix64(s);
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

namespace {

constexpr std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t sm = seed;
  for (auto& word : s_) {
    word = splitmix64(sm);
  }
}

std::uint64_t SeededRng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double SeededRng::uniform_open() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t SeededRng::uniform_index(std::uint64_t n) {
  if (n == 0) {
    throw std::invalid_argument("uniform_index: empty range");
  }
  // Reject the low sliver that would bias x % n.
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t x = next_u64();
    if (x >= threshold) {
      return x % n;
    }
  }
}

double SeededRng::normal() {
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return spare_normal_;
  }
  const double u1 = uniform_open();
  const double u2 = uniform_open();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_normal_ = r * std::sin(theta);
  has_spare_normal_ = true;
  return r * std::cos(theta);
}

std::vector<std::size_t> SeededRng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

void BetaParams::validate() const {
  if (!(alpha > 0.0) || !(beta > 0.0) || !std::isfinite(alpha) ||
      !std::isfinite(beta)) {
    throw std::invalid_argument("Beta shape parameters must be positive and finite");
  }
}

double sample_beta(SeededRng& rng, const BetaParams& params) {
  params.validate();
  for (;;) {
    const double log_x = std::log(rng.uniform_open()) / params.alpha;
    const double log_y = std::log(rng.uniform_open()) / params.beta;
    const double hi = std::max(log_x, log_y);
    const double lo = std::min(log_x, log_y);
    const double log_sum = hi + std::log1p(std::exp(lo - hi));
    if (log_sum <= 0.0) {
      return std::exp(log_x - log_sum);
    }
  }
}

Vec64 finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h) {
  if (!(h > 0.0)) {
    throw std::invalid_argument("finite_diff_grad: step must be positive");
  }
  Vec64 probe(x.begin(), x.end());
  Vec64 grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = probe[i];
    probe[i] = xi + h;
    const double up = f(probe);
    probe[i] = xi - h;
    const double down = f(probe);
    probe[i] = xi;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::domain_error("finite_diff_grad: non-finite function value at coordinate " +
                              std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(std::span<const double> a, std::span<const double> b,
                      double floor) {
  require_same_dim(a, b, "relative_error");
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    diff += d * d;
  }
  const double scale = std::max({norm(a), norm(b), floor});
  return std::sqrt(diff) / scale;
}

std::string format_shortest(double value) {
  if (!std::isfinite(value)) {
    throw std::invalid_argument("format_shortest: non-finite value");
  }
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string format_fixed(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, value);
  std::string out(buf);
  // "-0.00" renders as "0.00"
  if (out.front() == '-' &&
      out.find_first_not_of("-0.") == std::string::npos) {
    out.erase(0, 1);
  }
  return out;
}

}  // namespace mixclip
