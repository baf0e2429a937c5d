#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mixclip/config.hpp"
#include "mixclip/data.hpp"
#include "mixclip/train.hpp"

namespace mixclip::cli {

enum class Format { Text, Csv };

struct CommandOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> checkpoint;
  std::vector<std::string> overrides;  // key=value
  Format format = Format::Text;
};

/// Defaults, then the config file, then --set overrides.
RunConfig resolve_config(const CommandOptions& opts);

int cmd_gen_data(const CommandOptions& opts, std::ostream& out);
int cmd_train(const CommandOptions& opts, std::ostream& out);
int cmd_eval(const CommandOptions& opts, std::ostream& out);
int cmd_compare_losses(const CommandOptions& opts, std::ostream& out);

struct ComparisonRow {
  std::string batch;  // index, or "all"
  std::size_t samples = 0;
  double mean_paper = 0.0;
  double mean_actual = 0.0;
  double mean_abs_diff = 0.0;
  double max_abs_diff = 0.0;
  std::optional<double> grad_cos_mean;  // absent when every gradient pair is degenerate
  std::optional<double> grad_cos_min;
};

struct LossComparison {
  std::vector<ComparisonRow> batches;
  ComparisonRow overall;
};

/// Evaluates the documented and the actual margin losses, and their image
/// gradients, on seeded batches drawn with replacement from `ds`. Encoded
/// datasets are used as embeddings after normalization; raw ones go through
/// `encoder`.
LossComparison compare_losses(const DomainDataset& ds, const ClassEmbeddings& classes,
                              const EncoderParams* encoder, const RunConfig& cfg);

std::string render_comparison(const LossComparison& cmp, Format format);

/// Parses argv and dispatches. Errors go to `err` and yield exit status 1.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mixclip::cli
