#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mixclip/data.hpp"
#include "mixclip/losses.hpp"
#include "mixclip/model.hpp"

namespace mixclip {

struct ModelConfig {
  std::size_t hidden_dim = 32;  // 0 selects a single linear layer
  std::size_t embed_dim = 8;
  std::uint64_t seed = 7;       // encoder init and class table
  PromptTemplate prompt;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;
  LossConfig loss;
  std::uint64_t seed = 3;
  std::size_t eval_every = 1;
  ModelConfig model;
  /// Overrides every drawn eta (partners are still drawn). Test hook.
  std::optional<double> fixed_eta;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss_actual = 0.0;
  double loss_mix = 0.0;
  double loss_total = 0.0;
  std::optional<double> target_accuracy;
};

struct RunRecord {
  double initial_accuracy = 0.0;  // untrained encoder on the target
  std::vector<EpochRecord> epochs;
  double final_accuracy = 0.0;
};

struct TrainResult {
  EncoderParams params;
  RunRecord record;
};

/// Mini-batch SGD with classical momentum on the batch objective
/// actual + lambda * mix:
///   v <- momentum * v + g;  w <- w - lr * v
/// Each epoch shuffles the source with derive_seed(cfg.seed, 1); mix draws
/// come from derive_seed(cfg.seed, 2). The last partial batch is kept.
/// The target is only ever read by evaluation.
TrainResult train_run(const DomainDataset& source, const DomainDataset& target,
                      EncoderParams model, const ClassEmbeddings& classes,
                      const TrainConfig& cfg);

/// 100 * correct / |target|. Encoded datasets bypass the encoder.
double evaluate(const EncoderParams& model, const ClassEmbeddings& classes,
                const DomainDataset& target);

/// Accuracy of the raw (pre-encoded) features against the class table.
double evaluate_encoded(const ClassEmbeddings& classes, const DomainDataset& target);

/// Accuracy per domain index for domains present in `ds` (others absent).
std::vector<std::optional<double>> evaluate_per_domain(const EncoderParams& model,
                                                       const ClassEmbeddings& classes,
                                                       const DomainDataset& ds);

/// The dataset's own table if it carries one, otherwise the seeded
/// prompt-keyed table of `model`.
ClassEmbeddings resolve_class_embeddings(const DomainDataset& ds, const ModelConfig& model);

struct TaskResult {
  std::size_t target_domain = 0;
  double baseline_accuracy = 0.0;
  double accuracy = 0.0;
  RunRecord record;
  EncoderParams params;
};

struct ProtocolResult {
  std::vector<std::string> domain_names;
  std::vector<TaskResult> tasks;  // one per domain, in domain order
  double baseline_average = 0.0;
  double average = 0.0;
};

/// Leave-one-domain-out over every domain: fresh encoder from
/// cfg.model.seed for each task, train on the rest, evaluate on the held-out
/// domain.
ProtocolResult run_protocol(const DomainDataset& ds, const TrainConfig& cfg);

std::string method_label(const TrainConfig& cfg);

/// Table with one row per method (untrained baseline, trained) and one
/// column per target domain plus Avg. Text uses 2 decimals, CSV 6.
std::string render_report_text(const ProtocolResult& result, const TrainConfig& cfg);
std::string render_report_csv(const ProtocolResult& result, const TrainConfig& cfg);

/// epoch,loss_actual,loss_mix,loss_total,target_accuracy with 6 decimals;
/// the accuracy field is empty on epochs without evaluation.
std::string render_curve_csv(const RunRecord& record);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

class VersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  EncoderParams params;
  ClassEmbeddings classes;
  TrainConfig config;
};

std::string serialize_checkpoint(const EncoderParams& params, const ClassEmbeddings& classes,
                                 const TrainConfig& cfg);
Checkpoint parse_checkpoint(const std::string& text);

void save_checkpoint(const EncoderParams& params, const ClassEmbeddings& classes,
                     const TrainConfig& cfg, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mixclip
