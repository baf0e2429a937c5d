#pragma once

#include <string>
#include <vector>

#include "mixclip/numcore.hpp"

namespace mixclip {

/// Embeddings entering the MMS losses must be unit-norm within this bound.
/// Loose enough to admit finite-difference probes around a unit vector.
inline constexpr double kUnitNormTolerance = 1e-4;

/// Which margin metric softmax form drives the classification term of the
/// batch objective. The mix-up term always uses the actual-form logits.
enum class MmsForm { Actual, Paper };

std::string to_string(MmsForm form);
MmsForm parse_mms_form(const std::string& text);

struct LossConfig {
  double tau = 0.01;     // temperature
  double margin = 0.3;   // margin coefficient on text-text similarity
  double lambda = 0.1;   // weight of the mix-up consistency term
  BetaParams beta{0.2, 0.2};
  MmsForm form = MmsForm::Actual;

  void validate() const;
};

/// Frozen per-class text-side embeddings. Rows are unit-norm, C >= 2.
class ClassEmbeddings {
 public:
  ClassEmbeddings(std::vector<Vec64> rows, std::vector<std::string> names);

  std::size_t size() const { return rows_.size(); }
  std::size_t dim() const { return rows_.front().size(); }
  const Vec64& operator[](std::size_t c) const { return rows_[c]; }
  const std::vector<Vec64>& rows() const { return rows_; }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<Vec64> rows_;
  std::vector<std::string> names_;
};

/// Loss value plus its gradient with respect to every image embedding the
/// loss reads. Single-sample MMS losses carry one gradient; mixup_loss
/// carries two (original, mixed).
struct LossValueWithGrad {
  double value = 0.0;
  std::vector<Vec64> grad_image_embeddings;
};

/// Mixing coefficient and partner index for one batch element.
struct MixDraw {
  double eta = 1.0;
  std::size_t partner = 0;
};

/// Margin metric softmax loss as documented:
///   -log exp(s_y / tau) / sum_c exp((s_c + margin (1 - t_yc)) / tau)
/// with s_c = <img, T_c> and t_yc = <T_y, T_c>.
LossValueWithGrad mms_paper_loss(const Vec64& img, std::size_t y,
                                 const ClassEmbeddings& classes,
                                 const LossConfig& cfg);

/// Margin metric softmax loss as used in training:
///   -log exp(-(s_y - margin) / tau) / sum_c exp(-(s_c - margin t_yc) / tau)
/// Implemented verbatim, negations included.
LossValueWithGrad mms_actual_loss(const Vec64& img, std::size_t y,
                                  const ClassEmbeddings& classes,
                                  const LossConfig& cfg);

/// Softmax over c of -(<img, T_c> - margin <ty, T_c>) / tau. `ty` may be a
/// mixed (non-unit) text embedding.
Vec64 class_distribution(const Vec64& img, const Vec64& ty,
                         const ClassEmbeddings& classes, const LossConfig& cfg);

/// One MixDraw per batch element: eta_i ~ Beta drawn in index order, then a
/// uniform permutation supplies partners (self-pairing allowed).
std::vector<MixDraw> build_mix(std::size_t batch_size, SeededRng& rng,
                               const BetaParams& beta);

/// Linear mixing of raw samples, eta * x + (1 - eta) * x2.
Vec64 mix_features(const Vec64& x, const Vec64& x2, double eta);

struct MixedEmbeddings {
  Vec64 image;
  Vec64 text;
};

/// (eta I + (1-eta) I', eta T_y + (1-eta) T_y'). Not re-normalized.
MixedEmbeddings mix_embeddings(const Vec64& img, const Vec64& img2,
                               const Vec64& ty, const Vec64& ty2, double eta);

/// L1 distance between class_distribution(img, T_y) and
/// class_distribution(img_mix, ty_mix). Gradients: [d/d img, d/d img_mix].
/// The subgradient of |d| at d == 0 is taken as 0.
LossValueWithGrad mixup_loss(const Vec64& img, std::size_t y,
                             const Vec64& img_mix, const Vec64& ty_mix,
                             const ClassEmbeddings& classes,
                             const LossConfig& cfg);

/// Batch objective mean_i [mms_i + lambda * mix_i] with the two parts
/// reported separately; mms_i is the actual form unless cfg.form says
/// otherwise. Gradients are per batch embedding.
struct BatchLoss {
  double value = 0.0;
  double actual = 0.0;  // mean MMS term
  double mix = 0.0;     // mean mix-up term, before lambda
  std::vector<Vec64> grad_image_embeddings;
  std::vector<double> per_sample_actual;
  std::vector<double> per_sample_mix;
};

BatchLoss total_loss(const std::vector<Vec64>& image_embeddings,
                     const std::vector<std::size_t>& labels,
                     const std::vector<MixDraw>& draws,
                     const ClassEmbeddings& classes, const LossConfig& cfg);

}  // namespace mixclip
