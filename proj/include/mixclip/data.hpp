#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixclip/numcore.hpp"

namespace mixclip {

struct LabeledSample {
  Vec64 features;
  std::size_t label = 0;
  std::size_t domain = 0;
};

/// A bag of labeled samples drawn from one or more domains over a shared
/// label space. When `encoded` is set, `features` are precomputed image
/// embeddings and no encoder runs on them.
struct DomainDataset {
  std::vector<LabeledSample> samples;
  std::vector<std::string> class_names;
  std::vector<std::string> domain_names;
  bool encoded = false;
  /// Precomputed text-side table, one row per class, if the file carried one.
  std::optional<std::vector<Vec64>> class_embeddings;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  /// Feature dimension (0 when empty).
  std::size_t dim() const { return samples.empty() ? 0 : samples.front().features.size(); }

  /// counts[domain][class]
  std::vector<std::vector<std::size_t>> cell_counts() const;

  /// Labels and domains in range, features finite and of one dimension.
  void validate() const;
};

struct SynthConfig {
  std::size_t classes = 7;
  std::size_t domains = 4;
  std::size_t n_per_cell = 30;
  std::size_t dim = 16;
  double noise_sigma = 0.3;
  double shift_mag = 0.5;
  std::uint64_t seed = 1;
  /// Optional explicit names; generated as class_<i> / domain_<i> when empty.
  std::vector<std::string> class_names;
  std::vector<std::string> domain_names;

  void validate() const;
};

/// Class prototypes are seeded unit vectors. Each domain rotates every
/// prototype by an angle in [shift_mag/2, shift_mag] within a seeded random
/// plane and translates it by a seeded vector of norm shift_mag; samples add
/// N(0, noise_sigma^2) per coordinate. Random streams (derive_seed):
///   prototypes  derive_seed(seed, 0)
///   domain d    derive_seed(derive_seed(seed, 1), d)
///   cell (d,c)  derive_seed(derive_seed(seed, 2), d * classes + c)
/// Samples are ordered by domain, then class, then draw.
DomainDataset generate(const SynthConfig& cfg);

struct DomainSplit {
  DomainDataset source;
  DomainDataset target;
};

/// Holds out `target_domain` entirely; the rest becomes the source.
/// Name lists and domain indices are preserved on both sides.
DomainSplit leave_one_domain_out(const DomainDataset& ds, std::size_t target_domain);

/// Malformed dataset or checkpoint text. `line()` is 1-based, 0 if unknown.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, std::size_t line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message
                                    : message),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Line-delimited JSON. An optional first record carries metadata:
//   {"class_names":[...],"domain_names":[...],"encoded":false,"dim":16}
// optionally with "class_embeddings":[[...],...]. Each further line is
//   {"domain":"<name>","label":"<class name>","features":[...]}
// Without metadata, names are assigned in order of first appearance.

DomainDataset read_dataset(std::istream& in);
DomainDataset load_dataset(const std::filesystem::path& path);

/// Canonical form: metadata first, then samples, numbers in shortest
/// round-trip notation, one record per line.
void write_dataset(std::ostream& out, const DomainDataset& ds);
void save_dataset(const std::filesystem::path& path, const DomainDataset& ds);

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace mixclip
