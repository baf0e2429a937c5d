#include "mixclip/losses.hpp"

#include <algorithm>
#include <cmath>

namespace mixclip {

namespace {

constexpr double kClassRowTolerance = 1e-9;

void check_unit(const Vec64& v, const char* what) {
  if (std::abs(norm(v) - 1.0) > kUnitNormTolerance) {
    throw std::invalid_argument(std::string(what) + ": embedding is not unit-norm");
  }
}

void check_label(std::size_t y, const ClassEmbeddings& classes) {
  if (y >= classes.size()) {
    throw std::out_of_range("class index " + std::to_string(y) +
                            " out of range for " + std::to_string(classes.size()) +
                            " classes");
  }
}

// Accumulates scale * sum_c weights[c] * T_c into a fresh vector.
Vec64 weighted_class_sum(const Vec64& weights, const ClassEmbeddings& classes,
                         double scale) {
  Vec64 out(classes.dim(), 0.0);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const double w = weights[c] * scale;
    const Vec64& row = classes[c];
    for (std::size_t k = 0; k < out.size(); ++k) {
      out[k] += w * row[k];
    }
  }
  return out;
}

// scale * sum_c weights[c] * (T_c - T_y). With weights summing to 1 this
// equals scale * (sum_c weights[c] T_c - T_y) without the cancellation
// when the weights are nearly one-hot on y.
Vec64 weighted_offset_sum(const Vec64& weights, const ClassEmbeddings& classes,
                          std::size_t y, double scale) {
  Vec64 out(classes.dim(), 0.0);
  const Vec64& ty = classes[y];
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (c == y) {
      continue;
    }
    const double w = weights[c] * scale;
    const Vec64& row = classes[c];
    for (std::size_t k = 0; k < out.size(); ++k) {
      out[k] += w * (row[k] - ty[k]);
    }
  }
  return out;
}

// -log softmax(l)[y] = log_sum_exp(l - l_y). `gaps` holds (l_c - l_y) * tau,
// formed before the division so the y term cancels exactly instead of
// carrying the rounding of two separately scaled similarities.
struct SoftmaxCe {
  double value;
  Vec64 probs;
};

SoftmaxCe softmax_ce(Vec64 gaps, double tau) {
  for (double& g : gaps) {
    g /= tau;
  }
  return {log_sum_exp(gaps), softmax(gaps)};
}

void check_finite_value(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw std::domain_error(std::string(what) + ": non-finite loss value");
  }
}

}  // namespace

std::string to_string(MmsForm form) {
  return form == MmsForm::Actual ? "actual" : "paper";
}

MmsForm parse_mms_form(const std::string& text) {
  if (text == "actual") {
    return MmsForm::Actual;
  }
  if (text == "paper") {
    return MmsForm::Paper;
  }
  throw std::invalid_argument("unknown MMS form '" + text + "' (expected actual or paper)");
}

void LossConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw std::invalid_argument("loss.tau must be positive");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw std::invalid_argument("loss.lambda must be non-negative");
  }
  if (!std::isfinite(margin)) {
    throw std::invalid_argument("loss.margin must be finite");
  }
  beta.validate();
}

ClassEmbeddings::ClassEmbeddings(std::vector<Vec64> rows,
                                 std::vector<std::string> names)
    : rows_(std::move(rows)), names_(std::move(names)) {
  if (rows_.size() < 2) {
    throw std::invalid_argument("class table needs at least 2 classes");
  }
  if (names_.size() != rows_.size()) {
    throw std::invalid_argument("class table: names and rows differ in count");
  }
  const std::size_t d = rows_.front().size();
  if (d == 0) {
    throw DimensionError("class table: empty embeddings");
  }
  for (const auto& row : rows_) {
    if (row.size() != d) {
      throw DimensionError("class table: rows differ in dimension");
    }
    if (!all_finite(row) || std::abs(norm(row) - 1.0) > kClassRowTolerance) {
      throw std::invalid_argument("class table: rows must be finite and unit-norm");
    }
  }
}

LossValueWithGrad mms_paper_loss(const Vec64& img, std::size_t y,
                                 const ClassEmbeddings& classes,
                                 const LossConfig& cfg) {
  check_label(y, classes);
  require_same_dim(img, classes[0], "mms_paper_loss");
  check_unit(img, "mms_paper_loss");

  const Vec64& ty = classes[y];
  const double s_y = dot(img, ty);
  Vec64 gaps(classes.size());
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const double margin_term = cfg.margin * (1.0 - dot(ty, classes[c]));
    gaps[c] = (dot(img, classes[c]) - s_y) + margin_term;
  }
  gaps[y] = 0.0;  // <T_y, T_y> = 1 for unit rows
  auto ce = softmax_ce(std::move(gaps), cfg.tau);
  check_finite_value(ce.value, "mms_paper_loss");

  // d/d img = (sum_c p_c T_c - T_y) / tau
  Vec64 grad = weighted_offset_sum(ce.probs, classes, y, 1.0 / cfg.tau);
  return {ce.value, {std::move(grad)}};
}

LossValueWithGrad mms_actual_loss(const Vec64& img, std::size_t y,
                                  const ClassEmbeddings& classes,
                                  const LossConfig& cfg) {
  check_label(y, classes);
  require_same_dim(img, classes[0], "mms_actual_loss");
  check_unit(img, "mms_actual_loss");

  const Vec64& ty = classes[y];
  // -(s_c - m t_yc) + (s_y - m) = (s_y - s_c) + m (t_yc - 1)
  const double s_y = dot(img, ty);
  Vec64 gaps(classes.size());
  for (std::size_t c = 0; c < classes.size(); ++c) {
    gaps[c] = (s_y - dot(img, classes[c])) + cfg.margin * (dot(ty, classes[c]) - 1.0);
  }
  gaps[y] = 0.0;  // the numerator is exactly the c = y term
  auto ce = softmax_ce(std::move(gaps), cfg.tau);
  check_finite_value(ce.value, "mms_actual_loss");

  // d/d img = (T_y - sum_c p_c T_c) / tau
  Vec64 grad = weighted_offset_sum(ce.probs, classes, y, -1.0 / cfg.tau);
  return {ce.value, {std::move(grad)}};
}

Vec64 class_distribution(const Vec64& img, const Vec64& ty,
                         const ClassEmbeddings& classes, const LossConfig& cfg) {
  require_same_dim(img, classes[0], "class_distribution");
  require_same_dim(ty, classes[0], "class_distribution");
  Vec64 logits(classes.size());
  for (std::size_t c = 0; c < classes.size(); ++c) {
    logits[c] = -(dot(img, classes[c]) - cfg.margin * dot(ty, classes[c])) / cfg.tau;
  }
  return softmax(logits);
}

std::vector<MixDraw> build_mix(std::size_t batch_size, SeededRng& rng,
                               const BetaParams& beta) {
  if (batch_size == 0) {
    throw std::invalid_argument("build_mix: empty batch");
  }
  std::vector<MixDraw> draws(batch_size);
  for (auto& d : draws) {
    d.eta = sample_beta(rng, beta);
  }
  const auto perm = rng.permutation(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    draws[i].partner = perm[i];
  }
  return draws;
}

Vec64 mix_features(const Vec64& x, const Vec64& x2, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) {
    throw std::invalid_argument("mixing coefficient must lie in [0, 1]");
  }
  return lerp(x, x2, eta);
}

MixedEmbeddings mix_embeddings(const Vec64& img, const Vec64& img2,
                               const Vec64& ty, const Vec64& ty2, double eta) {
  require_same_dim(img, ty, "mix_embeddings");
  return {mix_features(img, img2, eta), mix_features(ty, ty2, eta)};
}

LossValueWithGrad mixup_loss(const Vec64& img, std::size_t y,
                             const Vec64& img_mix, const Vec64& ty_mix,
                             const ClassEmbeddings& classes,
                             const LossConfig& cfg) {
  check_label(y, classes);
  const Vec64 p = class_distribution(img, classes[y], classes, cfg);
  const Vec64 q = class_distribution(img_mix, ty_mix, classes, cfg);

  const std::size_t n = classes.size();
  double value = 0.0;
  Vec64 sign(n);
  for (std::size_t c = 0; c < n; ++c) {
    const double d = p[c] - q[c];
    value += std::abs(d);
    sign[c] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
  }
  // Rounding in the two normalizations can nudge the sum past its bound.
  value = std::min(value, 2.0);

  // Softmax VJP: dL/dl = p * (g - <g, p>), then dl_c/d img = -T_c / tau.
  auto backprop = [&](const Vec64& probs, double direction) {
    double inner = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      inner += direction * sign[c] * probs[c];
    }
    Vec64 dl(n);
    for (std::size_t c = 0; c < n; ++c) {
      dl[c] = probs[c] * (direction * sign[c] - inner);
    }
    return weighted_class_sum(dl, classes, -1.0 / cfg.tau);
  };

  return {value, {backprop(p, 1.0), backprop(q, -1.0)}};
}

BatchLoss total_loss(const std::vector<Vec64>& image_embeddings,
                     const std::vector<std::size_t>& labels,
                     const std::vector<MixDraw>& draws,
                     const ClassEmbeddings& classes, const LossConfig& cfg) {
  const std::size_t batch = image_embeddings.size();
  if (batch == 0) {
    throw std::invalid_argument("total_loss: empty batch");
  }
  if (labels.size() != batch || draws.size() != batch) {
    throw std::invalid_argument("total_loss: labels/draws not aligned with batch");
  }
  for (const auto& d : draws) {
    if (d.partner >= batch || !(d.eta >= 0.0 && d.eta <= 1.0)) {
      throw std::invalid_argument("total_loss: invalid mix draw");
    }
  }

  BatchLoss out;
  out.grad_image_embeddings.assign(batch, Vec64(classes.dim(), 0.0));
  out.per_sample_actual.resize(batch);
  out.per_sample_mix.resize(batch);
  const double inv_batch = 1.0 / static_cast<double>(batch);

  auto accumulate = [&](std::size_t idx, const Vec64& g, double scale) {
    Vec64& dst = out.grad_image_embeddings[idx];
    for (std::size_t k = 0; k < dst.size(); ++k) {
      dst[k] += scale * g[k];
    }
  };

  double sum_total = 0.0;
  double sum_actual = 0.0;
  double sum_mix = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const auto actual = cfg.form == MmsForm::Actual
                            ? mms_actual_loss(image_embeddings[i], labels[i], classes, cfg)
                            : mms_paper_loss(image_embeddings[i], labels[i], classes, cfg);
    accumulate(i, actual.grad_image_embeddings[0], inv_batch);

    double mix_value = 0.0;
    const std::size_t j = draws[i].partner;
    // Self-pairing reproduces the original sample, so the term is identically 0.
    if (j != i) {
      const double eta = draws[i].eta;
      const auto mixed = mix_embeddings(image_embeddings[i], image_embeddings[j],
                                        classes[labels[i]], classes[labels[j]], eta);
      const auto mix = mixup_loss(image_embeddings[i], labels[i], mixed.image,
                                  mixed.text, classes, cfg);
      mix_value = mix.value;
      const double w = cfg.lambda * inv_batch;
      accumulate(i, mix.grad_image_embeddings[0], w);
      accumulate(i, mix.grad_image_embeddings[1], w * eta);
      accumulate(j, mix.grad_image_embeddings[1], w * (1.0 - eta));
    }

    out.per_sample_actual[i] = actual.value;
    out.per_sample_mix[i] = mix_value;
    sum_actual += actual.value;
    sum_mix += mix_value;
    sum_total += actual.value + cfg.lambda * mix_value;
  }
  const auto n = static_cast<double>(batch);
  out.value = sum_total / n;
  out.actual = sum_actual / n;
  out.mix = sum_mix / n;
  return out;
}

}  // namespace mixclip
