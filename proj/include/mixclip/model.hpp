#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mixclip/losses.hpp"
#include "mixclip/numcore.hpp"

namespace mixclip {

/// Fully connected layer; `weights` is row-major, out x in.
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  Vec64 weights;
  Vec64 bias;

  double w(std::size_t row, std::size_t col) const { return weights[row * in + col]; }
};

/// Image encoder: one linear layer, or linear -> tanh -> linear. The output
/// is always L2-normalized. tanh is applied after the hidden layer only.
struct EncoderParams {
  static constexpr const char* kActivationId = "tanh";

  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.front().in; }
  std::size_t embed_dim() const { return layers.back().out; }
  /// 0 for a single-layer encoder.
  std::size_t hidden_dim() const { return layers.size() == 2 ? layers.front().out : 0; }
  std::size_t parameter_count() const;

  /// Shapes chain and every value is finite.
  void validate() const;
};

struct EncoderShape {
  std::size_t input_dim = 16;
  std::size_t hidden_dim = 32;  // 0 selects a single linear layer
  std::size_t embed_dim = 8;
};

/// Weights ~ N(0, 1/fan_in) from derive_seed(seed, layer_index), biases 0.
EncoderParams init_encoder(const EncoderShape& shape, std::uint64_t seed);

/// Single layer with W = I and b = 0.
EncoderParams identity_encoder(std::size_t dim);

/// Parameters in layer order, weights before bias.
Vec64 flatten(const EncoderParams& params);
void assign_flat(EncoderParams& params, std::span<const double> flat);

/// Forward pass followed by L2 normalization.
Vec64 encode(const EncoderParams& params, const Vec64& x);

/// dL/dparams given dL/d(encode(x)). The normalization Jacobian
/// (I - u u^T) / ||z|| is applied first. Returned in the shape of `params`.
EncoderParams encode_backward(const EncoderParams& params, const Vec64& x,
                              const Vec64& grad_embedding);

/// Prompt with a single `[CLASS]` placeholder.
struct PromptTemplate {
  static constexpr const char* kPlaceholder = "[CLASS]";
  static constexpr const char* kDefault = "a photo of a [CLASS]";

  std::string text = kDefault;

  void validate() const;
};

/// Substitutes the class name for the placeholder verbatim.
std::string build_prompt(const PromptTemplate& tmpl, const std::string& class_name);

/// Frozen text-side table: each rendered prompt is hashed (FNV-1a) and
/// combined with `seed` via derive_seed, a standard normal vector of length
/// `embed_dim` is drawn from that stream and normalized.
ClassEmbeddings make_class_embeddings(const std::vector<std::string>& class_names,
                                      std::size_t embed_dim, std::uint64_t seed,
                                      const PromptTemplate& tmpl = {});

/// argmax_c <img, T_c>; ties go to the lowest index.
std::size_t zero_shot_classify(const Vec64& img, const ClassEmbeddings& classes);

}  // namespace mixclip
