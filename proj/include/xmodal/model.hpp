#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "xmodal/autodiff.hpp"
#include "xmodal/config.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

enum class Activation { kTanh, kRelu };

std::string to_string(Activation activation);
Activation parse_activation(const std::string& name);

// Shape of the network: one MLP backbone per modality producing modal-specific features of
// width feature_dim, and a single affine encoder shared by all modalities producing
// embeddings of width embedding_dim.
struct ModelConfig {
  std::size_t num_modalities = 2;
  std::vector<std::size_t> input_dims{32, 32};
  std::vector<std::size_t> hidden_dims{64};
  std::size_t feature_dim = 64;
  std::size_t embedding_dim = 128;
  Activation activation = Activation::kTanh;
  std::uint64_t seed = 0;

  // Throws ConfigError on the first invalid field.
  void validate() const;

  // Keys: num_modalities, input_dims, hidden_dims, feature_dim, embedding_dim, activation,
  // init_seed. A single input_dims value applies to every modality.
  static ModelConfig from_config(KeyValueConfig& config);
  void write_to(KeyValueConfig& config) const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct DenseLayer {
  Tensor weight;  // [fan_in x fan_out]
  Tensor bias;    // [fan_out]
};

struct ModelParams {
  ModelConfig config;
  std::vector<std::vector<DenseLayer>> backbones;  // one stack per modality
  DenseLayer encoder;

  // Stable flat ordering used by the optimizer and checkpoints: backbone 0 layers, backbone 1
  // layers, ..., then the encoder; weight before bias.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  std::vector<std::string> tensor_names() const;
  std::vector<Shape> tensor_shapes() const;

  bool all_finite() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);
};

// Uniform(-s, s) weights with s = sqrt(6 / (fan_in + fan_out)), zero biases. Deterministic in
// config.seed.
ModelParams init_params(const ModelConfig& config);

// Parameters placed on a tape, either as grad-enabled leaves (training) or as constants
// (inference). The encoder is bound once and reused for every modality.
class BoundModel {
 public:
  BoundModel(Tape& tape, const ModelParams& params, bool trainable);

  Var forward_backbone(std::size_t modality, const Var& x) const;
  Var forward_encoder(const Var& y) const;
  Var embed(std::size_t modality, const Var& x) const;

  // Vars in ModelParams::tensors() order.
  const std::vector<Var>& parameters() const { return flat_; }
  const std::vector<Var>& backbone_parameters(std::size_t modality) const;
  const std::vector<Var>& encoder_parameters() const { return encoder_; }
  const ModelConfig& config() const { return *config_; }

 private:
  const ModelConfig* config_;
  std::vector<std::vector<Var>> backbones_;
  std::vector<Var> encoder_;
  std::vector<Var> flat_;
};

// Value-level forward passes; same kernels as the training path.
Tensor forward_backbone(const ModelParams& params, std::size_t modality, const Tensor& x);
Tensor forward_encoder(const ModelParams& params, const Tensor& y);
Tensor embed(const ModelParams& params, std::size_t modality, const Tensor& x);

}  // namespace xmodal
