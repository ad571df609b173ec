#pragma once

// Shared MLPs and multi-scale set abstraction built on the autodiff engine.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "iassd/neighborhood.hpp"
#include "iassd/nn/tensor.hpp"
#include "iassd/random.hpp"

namespace iassd::nn {

enum class Activation { kRelu, kNone, kSigmoid };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kNone: return "none";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "none";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "none") return Activation::kNone;
  if (s == "sigmoid") return Activation::kSigmoid;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

/// widths = {in, h1, ..., out}; one activation per affine layer.
struct MlpSpec {
  std::vector<std::size_t> widths;
  std::vector<Activation> activations;

  /// All hidden layers relu, final layer `last`.
  static MlpSpec chain(std::vector<std::size_t> widths, Activation last = Activation::kRelu) {
    MlpSpec s;
    s.activations.assign(widths.size() > 0 ? widths.size() - 1 : 0, Activation::kRelu);
    if (!s.activations.empty()) s.activations.back() = last;
    s.widths = std::move(widths);
    return s;
  }

  std::size_t layers() const { return activations.size(); }
  std::size_t in_width() const { return widths.front(); }
  std::size_t out_width() const { return widths.back(); }

  void validate() const {
    if (widths.size() < 2 || activations.size() + 1 != widths.size())
      throw std::invalid_argument("MlpSpec: need at least one layer and one activation per layer");
    for (std::size_t w : widths)
      if (w == 0) throw std::invalid_argument("MlpSpec: widths must be positive");
  }
};

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out
};

struct MlpParams {
  std::vector<Linear> layers;
};

/// He-uniform weights, zero biases.
inline MlpParams init_mlp(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  MlpParams p;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::size_t in = spec.widths[l], out = spec.widths[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    std::vector<double> w(in * out);
    for (double& x : w) x = rng.uniform(-bound, bound);
    p.layers.push_back({Tensor({in, out}, std::move(w), true), Tensor::zeros({out}, true)});
  }
  return p;
}

inline Tensor activate(const Tensor& x, Activation a) {
  switch (a) {
    case Activation::kRelu: return relu(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kNone: return x;
  }
  return x;
}

inline Tensor forward_mlp(const MlpSpec& spec, const MlpParams& params, const Tensor& input) {
  spec.validate();
  if (params.layers.size() != spec.layers()) throw std::invalid_argument("forward_mlp: parameter count mismatch");
  if (input.cols() != spec.in_width())
    throw std::invalid_argument("forward_mlp: input width " + std::to_string(input.cols()) + " but MLP expects " +
                                std::to_string(spec.in_width()));
  Tensor x = input;
  for (std::size_t l = 0; l < spec.layers(); ++l)
    x = activate(linear(x, params.layers[l].weight, params.layers[l].bias), spec.activations[l]);
  return x;
}

// ---------------------------------------------------------------------------
// Set abstraction

/// One grouping scale: radius, neighbors per center, hidden widths of the
/// shared MLP (input width is implied by 3 + feature width).
struct ScaleSpec {
  double radius = 1.0;
  std::size_t nquery = 16;
  std::vector<std::size_t> mlp;
};

struct SaSpec {
  std::vector<ScaleSpec> scales;
  std::size_t post_width = 0;  // 0 disables the post-concatenation MLP

  std::size_t concat_width() const {
    std::size_t w = 0;
    for (const auto& s : scales) w += s.mlp.back();
    return w;
  }
  std::size_t out_width() const { return post_width ? post_width : concat_width(); }

  MlpSpec scale_mlp(std::size_t s, std::size_t feature_width) const {
    std::vector<std::size_t> widths{3 + feature_width};
    widths.insert(widths.end(), scales[s].mlp.begin(), scales[s].mlp.end());
    return MlpSpec::chain(std::move(widths));
  }
  MlpSpec post_mlp() const { return MlpSpec::chain({concat_width(), post_width}); }
};

struct SaParams {
  std::vector<MlpParams> scales;
  MlpParams post;
};

inline SaParams init_sa(const SaSpec& spec, std::size_t feature_width, Rng& rng) {
  SaParams p;
  for (std::size_t s = 0; s < spec.scales.size(); ++s) p.scales.push_back(init_mlp(spec.scale_mlp(s, feature_width), rng));
  if (spec.post_width) p.post = init_mlp(spec.post_mlp(), rng);
  return p;
}

/// Grouping input of one scale: relative coordinates (constant) plus the
/// group index used to gather differentiable source features.
struct ScaleInput {
  GroupIndex groups;
  std::vector<double> relative;  // (centers * nquery) x 3
};

/// Shared MLP per neighbor, max-pool over the neighbor axis per scale,
/// concatenation across scales and the optional post MLP. `features` holds
/// one row per source point (undefined tensor for coordinate-only input).
inline Tensor sa_layer(const SaSpec& spec, const SaParams& params, std::span<const ScaleInput> inputs,
                       const Tensor& features) {
  if (inputs.size() != spec.scales.size()) throw std::invalid_argument("sa_layer: scale count mismatch");
  const std::size_t fw = features.defined() ? features.cols() : 0;
  std::vector<Tensor> pooled;
  for (std::size_t s = 0; s < spec.scales.size(); ++s) {
    const ScaleInput& in = inputs[s];
    const std::size_t rows = in.groups.centers * in.groups.nquery;
    if (in.relative.size() != rows * 3) throw std::invalid_argument("sa_layer: relative coordinate shape mismatch");
    Tensor rel({rows, 3}, in.relative);
    Tensor grouped = fw ? concat_cols({rel, gather_rows(features, std::span<const std::uint32_t>(in.groups.indices))})
                        : rel;
    Tensor h = forward_mlp(spec.scale_mlp(s, fw), params.scales[s], grouped);
    pooled.push_back(max_pool_groups(h, in.groups.nquery));
  }
  Tensor cat = pooled.size() == 1 ? pooled[0] : concat_cols(pooled);
  return spec.post_width ? forward_mlp(spec.post_mlp(), params.post, cat) : cat;
}

/// Variant over dense grouped blocks (relative coordinates followed by
/// features, all treated as constants).
inline Tensor sa_layer(const SaSpec& spec, const SaParams& params, std::span<const GroupedBlock> blocks) {
  if (blocks.size() != spec.scales.size()) throw std::invalid_argument("sa_layer: scale count mismatch");
  std::vector<Tensor> pooled;
  for (std::size_t s = 0; s < blocks.size(); ++s) {
    const GroupedBlock& b = blocks[s];
    if (b.channels < 3) throw std::invalid_argument("sa_layer: grouped block lacks coordinates");
    Tensor grouped({b.centers * b.nquery, b.channels}, b.data);
    Tensor h = forward_mlp(spec.scale_mlp(s, b.channels - 3), params.scales[s], grouped);
    pooled.push_back(max_pool_groups(h, b.nquery));
  }
  Tensor cat = pooled.size() == 1 ? pooled[0] : concat_cols(pooled);
  return spec.post_width ? forward_mlp(spec.post_mlp(), params.post, cat) : cat;
}

// ---------------------------------------------------------------------------
// Parameter collection

/// Flat, ordered view of named parameters (the checkpoint and optimizer
/// both iterate in this order).
struct NamedParams {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  void add(std::string name, const Tensor& t) {
    names.push_back(std::move(name));
    tensors.push_back(t);
  }
  void add(const std::string& prefix, const MlpParams& p) {
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      add(prefix + ".l" + std::to_string(l) + ".w", p.layers[l].weight);
      add(prefix + ".l" + std::to_string(l) + ".b", p.layers[l].bias);
    }
  }
  void add(const std::string& prefix, const SaParams& p) {
    for (std::size_t s = 0; s < p.scales.size(); ++s) add(prefix + ".s" + std::to_string(s), p.scales[s]);
    add(prefix + ".post", p.post);
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }
  void zero_grad() {
    for (auto& t : tensors) t.zero_grad();
  }
};

}  // namespace iassd::nn
