#include "mixclip/model.hpp"

#include <cmath>
#include <set>

namespace mixclip {

namespace {

Vec64 affine(const DenseLayer& layer, const Vec64& x) {
  Vec64 out(layer.out);
  for (std::size_t r = 0; r < layer.out; ++r) {
    double acc = layer.bias[r];
    for (std::size_t c = 0; c < layer.in; ++c) {
      acc += layer.w(r, c) * x[c];
    }
    out[r] = acc;
  }
  return out;
}

DenseLayer zero_like(const DenseLayer& layer) {
  return {layer.in, layer.out, Vec64(layer.weights.size(), 0.0),
          Vec64(layer.bias.size(), 0.0)};
}

// grad_out -> fills layer gradient and returns grad wrt the layer input.
Vec64 affine_backward(const DenseLayer& layer, const Vec64& input,
                      const Vec64& grad_out, DenseLayer& grad) {
  Vec64 grad_in(layer.in, 0.0);
  for (std::size_t r = 0; r < layer.out; ++r) {
    const double g = grad_out[r];
    grad.bias[r] = g;
    for (std::size_t c = 0; c < layer.in; ++c) {
      grad.weights[r * layer.in + c] = g * input[c];
      grad_in[c] += layer.w(r, c) * g;
    }
  }
  return grad_in;
}

struct Forward {
  Vec64 hidden;  // post-activation, empty for a single layer
  Vec64 pre_norm;
};

Forward forward(const EncoderParams& params, const Vec64& x) {
  if (x.size() != params.input_dim()) {
    throw DimensionError("encode: input has dimension " + std::to_string(x.size()) +
                         ", encoder expects " + std::to_string(params.input_dim()));
  }
  Forward f;
  if (params.layers.size() == 1) {
    f.pre_norm = affine(params.layers[0], x);
    return f;
  }
  f.hidden = affine(params.layers[0], x);
  for (double& v : f.hidden) {
    v = std::tanh(v);
  }
  f.pre_norm = affine(params.layers[1], f.hidden);
  return f;
}

}  // namespace

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) {
    n += l.weights.size() + l.bias.size();
  }
  return n;
}

void EncoderParams::validate() const {
  if (layers.empty() || layers.size() > 2) {
    throw std::invalid_argument("encoder must have 1 or 2 layers");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.in == 0 || l.out == 0 || l.weights.size() != l.in * l.out ||
        l.bias.size() != l.out) {
      throw DimensionError("encoder layer " + std::to_string(i) + " has inconsistent shape");
    }
    if (i > 0 && layers[i - 1].out != l.in) {
      throw DimensionError("encoder layers do not chain");
    }
    if (!all_finite(l.weights) || !all_finite(l.bias)) {
      throw std::invalid_argument("encoder weights must be finite");
    }
  }
}

EncoderParams init_encoder(const EncoderShape& shape, std::uint64_t seed) {
  if (shape.input_dim == 0 || shape.embed_dim == 0) {
    throw std::invalid_argument("encoder dimensions must be positive");
  }
  std::vector<std::pair<std::size_t, std::size_t>> dims;
  if (shape.hidden_dim == 0) {
    dims.emplace_back(shape.input_dim, shape.embed_dim);
  } else {
    dims.emplace_back(shape.input_dim, shape.hidden_dim);
    dims.emplace_back(shape.hidden_dim, shape.embed_dim);
  }
  EncoderParams params;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const auto [in, out] = dims[i];
    SeededRng rng(derive_seed(seed, i));
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    DenseLayer layer{in, out, Vec64(in * out), Vec64(out, 0.0)};
    for (double& w : layer.weights) {
      w = scale * rng.normal();
    }
    params.layers.push_back(std::move(layer));
  }
  return params;
}

EncoderParams identity_encoder(std::size_t dim) {
  DenseLayer layer{dim, dim, Vec64(dim * dim, 0.0), Vec64(dim, 0.0)};
  for (std::size_t i = 0; i < dim; ++i) {
    layer.weights[i * dim + i] = 1.0;
  }
  EncoderParams params;
  params.layers.push_back(std::move(layer));
  return params;
}

Vec64 flatten(const EncoderParams& params) {
  Vec64 flat;
  flat.reserve(params.parameter_count());
  for (const auto& l : params.layers) {
    flat.insert(flat.end(), l.weights.begin(), l.weights.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

void assign_flat(EncoderParams& params, std::span<const double> flat) {
  if (flat.size() != params.parameter_count()) {
    throw DimensionError("assign_flat: parameter count mismatch");
  }
  auto it = flat.begin();
  for (auto& l : params.layers) {
    std::copy_n(it, l.weights.size(), l.weights.begin());
    it += static_cast<std::ptrdiff_t>(l.weights.size());
    std::copy_n(it, l.bias.size(), l.bias.begin());
    it += static_cast<std::ptrdiff_t>(l.bias.size());
  }
}

Vec64 encode(const EncoderParams& params, const Vec64& x) {
  auto f = forward(params, x);
  try {
    return l2_normalize(f.pre_norm);
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument("encode: degenerate encoder output (zero vector)");
  }
}

EncoderParams encode_backward(const EncoderParams& params, const Vec64& x,
                              const Vec64& grad_embedding) {
  auto f = forward(params, x);
  require_same_dim(grad_embedding, f.pre_norm, "encode_backward");
  const double z_norm = norm(f.pre_norm);
  if (!(z_norm > 0.0)) {
    throw std::invalid_argument("encode_backward: degenerate encoder output (zero vector)");
  }

  // dL/dz = (g - u <u, g>) / ||z||
  Vec64 u(f.pre_norm.size());
  for (std::size_t k = 0; k < u.size(); ++k) {
    u[k] = f.pre_norm[k] / z_norm;
  }
  const double ug = dot(u, grad_embedding);
  Vec64 grad_z(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) {
    grad_z[k] = (grad_embedding[k] - u[k] * ug) / z_norm;
  }

  EncoderParams grads;
  for (const auto& l : params.layers) {
    grads.layers.push_back(zero_like(l));
  }
  if (params.layers.size() == 1) {
    affine_backward(params.layers[0], x, grad_z, grads.layers[0]);
    return grads;
  }
  Vec64 grad_h = affine_backward(params.layers[1], f.hidden, grad_z, grads.layers[1]);
  for (std::size_t k = 0; k < grad_h.size(); ++k) {
    grad_h[k] *= 1.0 - f.hidden[k] * f.hidden[k];
  }
  affine_backward(params.layers[0], x, grad_h, grads.layers[0]);
  return grads;
}

void PromptTemplate::validate() const {
  const std::string ph = kPlaceholder;
  const auto first = text.find(ph);
  if (first == std::string::npos || text.find(ph, first + 1) != std::string::npos) {
    throw std::invalid_argument("prompt template must contain " + ph + " exactly once");
  }
}

std::string build_prompt(const PromptTemplate& tmpl, const std::string& class_name) {
  if (class_name.empty()) {
    throw std::invalid_argument("build_prompt: empty class name");
  }
  tmpl.validate();
  std::string out = tmpl.text;
  out.replace(out.find(PromptTemplate::kPlaceholder),
              std::string_view(PromptTemplate::kPlaceholder).size(), class_name);
  return out;
}

ClassEmbeddings make_class_embeddings(const std::vector<std::string>& class_names,
                                      std::size_t embed_dim, std::uint64_t seed,
                                      const PromptTemplate& tmpl) {
  if (class_names.size() < 2) {
    throw std::invalid_argument("need at least 2 class names");
  }
  if (embed_dim == 0) {
    throw std::invalid_argument("embedding dimension must be positive");
  }
  std::set<std::string> seen;
  std::vector<Vec64> rows;
  for (const auto& name : class_names) {
    if (!seen.insert(name).second) {
      throw std::invalid_argument("duplicate class name: " + name);
    }
    const std::string prompt = build_prompt(tmpl, name);
    SeededRng rng(derive_seed(seed, fnv1a64(prompt)));
    Vec64 v(embed_dim);
    for (double& x : v) {
      x = rng.normal();
    }
    rows.push_back(l2_normalize(v));
  }
  return ClassEmbeddings(std::move(rows), class_names);
}

std::size_t zero_shot_classify(const Vec64& img, const ClassEmbeddings& classes) {
  require_same_dim(img, classes[0], "zero_shot_classify");
  std::size_t best = 0;
  double best_score = dot(img, classes[0]);
  for (std::size_t c = 1; c < classes.size(); ++c) {
    const double s = dot(img, classes[c]);
    if (s > best_score) {
      best = c;
      best_score = s;
    }
  }
  return best;
}

}  // namespace mixclip
