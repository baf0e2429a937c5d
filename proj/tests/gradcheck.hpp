#pragma once

// Randomized analytic-vs-central-difference gradient checks shared by the
// unit tests and the acceptance binary.

#include <algorithm>
#include <functional>

#include "mixclip/losses.hpp"
#include "mixclip/model.hpp"
#include "mixclip/numcore.hpp"
#include "test_helpers.hpp"

namespace gradcheck {

using mixclip::Vec64;

inline constexpr double kStep = 1e-5;
// Relative errors are taken against max(|a|, |n|, kFloor / tau): gradients
// of these losses scale with 1/tau, and a difference quotient of a value
// near 2 cannot resolve much below 1e-10.
inline constexpr double kFloor = 1e-6;
inline constexpr double kKinkGap = 1e-6;
inline constexpr double kTaus[] = {0.01, 0.1, 1.0};
// Instances are drawn until `trials` pass the kink filter, up to this many.
inline constexpr std::size_t kMaxDrawFactor = 4;

struct Stats {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;

  void add(const Vec64& analytic, const Vec64& numeric, double tau) {
    max_rel = std::max(max_rel, mixclip::relative_error(analytic, numeric, kFloor / tau));
    ++checked;
  }
};

using DiffFn = std::function<Vec64(std::span<const double>)>;

// True when every p_c - q_c stays clear of zero at x and keeps its sign at
// every point of the central-difference stencil.
inline bool away_from_kinks(const DiffFn& diffs, const Vec64& x) {
  const Vec64 centre = diffs(x);
  for (double d : centre) {
    if (std::abs(d) < kKinkGap) return false;
  }
  Vec64 probe(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (double s : {-1.0, 1.0}) {
      probe[i] = x[i] + s * kStep;
      const Vec64 d = diffs(probe);
      for (std::size_t k = 0; k < d.size(); ++k) {
        if ((d[k] > 0.0) != (centre[k] > 0.0)) return false;
      }
    }
    probe[i] = x[i];
  }
  return true;
}

inline Vec64 concat(const std::vector<Vec64>& parts) {
  Vec64 out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

inline std::vector<Vec64> split(std::span<const double> flat, std::size_t n, std::size_t dim) {
  std::vector<Vec64> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i].assign(flat.begin() + i * dim, flat.begin() + (i + 1) * dim);
  return out;
}

struct Instance {
  mixclip::ClassEmbeddings classes;
  mixclip::LossConfig cfg;
};

inline Instance random_instance(mixclip::SeededRng& rng, std::size_t trial, std::size_t max_dim,
                                std::size_t max_classes) {
  const std::size_t dim = 2 + rng.uniform_index(max_dim - 1);
  const std::size_t count = 2 + rng.uniform_index(max_classes - 1);
  mixclip::LossConfig cfg;
  cfg.tau = kTaus[trial % 3];
  cfg.margin = 0.5 * rng.uniform_open();
  cfg.lambda = 0.05 + rng.uniform_open();
  return {testing::random_classes(rng, count, dim), cfg};
}

inline Stats check_mms(mixclip::SeededRng& rng, std::size_t trials, mixclip::MmsForm form) {
  Stats stats;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto inst = random_instance(rng, t, 16, 8);
    const Vec64 img = testing::random_unit(rng, inst.classes.dim());
    const std::size_t y = rng.uniform_index(inst.classes.size());
    auto eval = [&](const Vec64& v) {
      return form == mixclip::MmsForm::Paper ? mixclip::mms_paper_loss(v, y, inst.classes, inst.cfg)
                                             : mixclip::mms_actual_loss(v, y, inst.classes, inst.cfg);
    };
    const auto analytic = eval(img).grad_image_embeddings[0];
    const auto numeric = mixclip::finite_diff_grad(
        [&](std::span<const double> v) { return eval(Vec64(v.begin(), v.end())).value; }, img, kStep);
    stats.add(analytic, numeric, inst.cfg.tau);
  }
  return stats;
}

inline Stats check_mixup(mixclip::SeededRng& rng, std::size_t trials) {
  Stats stats;
  for (std::size_t t = 0; stats.checked < trials && t < kMaxDrawFactor * trials; ++t) {
    const auto inst = random_instance(rng, t, 16, 8);
    const std::size_t dim = inst.classes.dim();
    const std::size_t y = rng.uniform_index(inst.classes.size());
    const std::size_t y2 = rng.uniform_index(inst.classes.size());
    const double eta = rng.uniform_open();
    const Vec64 img = testing::random_unit(rng, dim);
    const auto mixed = mixclip::mix_embeddings(img, testing::random_unit(rng, dim), inst.classes[y],
                                               inst.classes[y2], eta);
    // Both embeddings as one independent variable.
    const Vec64 x = concat({img, mixed.image});
    auto parts = [&](std::span<const double> v) { return split(v, 2, dim); };
    auto diffs = [&](std::span<const double> v) {
      const auto p = parts(v);
      const Vec64 a = mixclip::class_distribution(p[0], inst.classes[y], inst.classes, inst.cfg);
      const Vec64 b = mixclip::class_distribution(p[1], mixed.text, inst.classes, inst.cfg);
      Vec64 d(a.size());
      for (std::size_t c = 0; c < a.size(); ++c) d[c] = a[c] - b[c];
      return d;
    };
    if (!away_from_kinks(diffs, x)) {
      ++stats.skipped;
      continue;
    }
    auto value = [&](std::span<const double> v) {
      const auto p = parts(v);
      return mixclip::mixup_loss(p[0], y, p[1], mixed.text, inst.classes, inst.cfg).value;
    };
    const auto res = mixclip::mixup_loss(img, y, mixed.image, mixed.text, inst.classes, inst.cfg);
    stats.add(concat(res.grad_image_embeddings), mixclip::finite_diff_grad(value, x, kStep), inst.cfg.tau);
  }
  return stats;
}

struct BatchSetup {
  std::vector<std::size_t> labels;
  std::vector<mixclip::MixDraw> draws;
};

inline BatchSetup random_batch(mixclip::SeededRng& rng, std::size_t batch, std::size_t classes) {
  BatchSetup b;
  for (std::size_t i = 0; i < batch; ++i) {
    b.labels.push_back(rng.uniform_index(classes));
    b.draws.push_back({rng.uniform_open(), rng.uniform_index(batch)});
  }
  return b;
}

// p - q for every non-self pair of the batch, given its embeddings.
inline Vec64 batch_diffs(const std::vector<Vec64>& embs, const BatchSetup& b, const Instance& inst) {
  Vec64 out;
  for (std::size_t i = 0; i < embs.size(); ++i) {
    const std::size_t j = b.draws[i].partner;
    if (j == i) continue;
    const auto mixed = mixclip::mix_embeddings(embs[i], embs[j], inst.classes[b.labels[i]],
                                               inst.classes[b.labels[j]], b.draws[i].eta);
    const Vec64 p = mixclip::class_distribution(embs[i], inst.classes[b.labels[i]], inst.classes, inst.cfg);
    const Vec64 q = mixclip::class_distribution(mixed.image, mixed.text, inst.classes, inst.cfg);
    for (std::size_t c = 0; c < p.size(); ++c) out.push_back(p[c] - q[c]);
  }
  return out;
}

inline Stats check_total(mixclip::SeededRng& rng, std::size_t trials) {
  Stats stats;
  for (std::size_t t = 0; stats.checked < trials && t < kMaxDrawFactor * trials; ++t) {
    auto inst = random_instance(rng, t, 16, 8);
    if (t % 2 == 1) inst.cfg.form = mixclip::MmsForm::Paper;
    const std::size_t dim = inst.classes.dim();
    const std::size_t batch = 1 + rng.uniform_index(4);
    const auto setup = random_batch(rng, batch, inst.classes.size());
    std::vector<Vec64> embs;
    for (std::size_t i = 0; i < batch; ++i) embs.push_back(testing::random_unit(rng, dim));
    const Vec64 x = concat(embs);
    auto diffs = [&](std::span<const double> v) { return batch_diffs(split(v, batch, dim), setup, inst); };
    if (!away_from_kinks(diffs, x)) {
      ++stats.skipped;
      continue;
    }
    auto value = [&](std::span<const double> v) {
      return mixclip::total_loss(split(v, batch, dim), setup.labels, setup.draws, inst.classes, inst.cfg).value;
    };
    const auto res = mixclip::total_loss(embs, setup.labels, setup.draws, inst.classes, inst.cfg);
    stats.add(concat(res.grad_image_embeddings), mixclip::finite_diff_grad(value, x, kStep), inst.cfg.tau);
  }
  return stats;
}

// d total_loss / d params through encode and encode_backward.
inline Stats check_encoder(mixclip::SeededRng& rng, std::size_t trials) {
  Stats stats;
  for (std::size_t t = 0; stats.checked < trials && t < kMaxDrawFactor * trials; ++t) {
    auto inst = random_instance(rng, t, 8, 5);
    if (t % 2 == 1) inst.cfg.form = mixclip::MmsForm::Paper;
    const mixclip::EncoderShape shape{1 + rng.uniform_index(8), rng.uniform_index(7), inst.classes.dim()};
    auto params = mixclip::init_encoder(shape, rng.next_u64());
    const std::size_t batch = 1 + rng.uniform_index(4);
    const auto setup = random_batch(rng, batch, inst.classes.size());
    std::vector<Vec64> xs(batch, Vec64(shape.input_dim));
    for (auto& x : xs) {
      for (double& v : x) v = rng.normal();
    }
    auto embed = [&](std::span<const double> theta) {
      auto p = params;
      mixclip::assign_flat(p, theta);
      std::vector<Vec64> embs;
      for (const auto& x : xs) embs.push_back(mixclip::encode(p, x));
      return embs;
    };
    const Vec64 theta = mixclip::flatten(params);
    auto diffs = [&](std::span<const double> v) { return batch_diffs(embed(v), setup, inst); };
    if (!away_from_kinks(diffs, theta)) {
      ++stats.skipped;
      continue;
    }
    auto value = [&](std::span<const double> v) {
      return mixclip::total_loss(embed(v), setup.labels, setup.draws, inst.classes, inst.cfg).value;
    };
    const auto embs = embed(theta);
    const auto res = mixclip::total_loss(embs, setup.labels, setup.draws, inst.classes, inst.cfg);
    Vec64 analytic(theta.size(), 0.0);
    for (std::size_t i = 0; i < batch; ++i) {
      const Vec64 g = mixclip::flatten(mixclip::encode_backward(params, xs[i], res.grad_image_embeddings[i]));
      for (std::size_t k = 0; k < g.size(); ++k) analytic[k] += g[k];
    }
    stats.add(analytic, mixclip::finite_diff_grad(value, theta, kStep), inst.cfg.tau);
  }
  return stats;
}

}  // namespace gradcheck
