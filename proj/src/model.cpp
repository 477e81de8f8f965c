#include "xmodal/model.hpp"

#include <cmath>
#include <random>

#include "xmodal/errors.hpp"

namespace xmodal {

namespace {

std::vector<std::size_t> layer_widths(const ModelConfig& config, std::size_t modality) {
  std::vector<std::size_t> widths{config.input_dims.at(modality)};
  widths.insert(widths.end(), config.hidden_dims.begin(), config.hidden_dims.end());
  widths.push_back(config.feature_dim);
  return widths;
}

DenseLayer init_layer(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-s, s);
  DenseLayer layer{Tensor(Shape{fan_in, fan_out}), Tensor(Shape{fan_out})};
  for (double& w : layer.weight.data()) w = dist(rng);
  return layer;
}

Var activate(Activation activation, const Var& x) {
  return activation == Activation::kTanh ? tanh(x) : relu(x);
}

void check_modality(const ModelConfig& config, std::size_t modality) {
  if (modality >= config.num_modalities) {
    throw IndexError("modality " + std::to_string(modality) + " out of range for " +
                     std::to_string(config.num_modalities) + " modalities");
  }
}

}  // namespace

std::string to_string(Activation activation) { return activation == Activation::kTanh ? "tanh" : "relu"; }

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  throw ConfigError("activation", "expected tanh or relu, got '" + name + "'");
}

void ModelConfig::validate() const {
  if (num_modalities < 2) throw ConfigError("num_modalities", "need at least 2 modalities");
  if (input_dims.size() != num_modalities) {
    throw ConfigError("input_dims", "expected " + std::to_string(num_modalities) + " entries");
  }
  for (std::size_t d : input_dims) {
    if (d == 0) throw ConfigError("input_dims", "dimensions must be positive");
  }
  for (std::size_t d : hidden_dims) {
    if (d == 0) throw ConfigError("hidden_dims", "dimensions must be positive");
  }
  if (feature_dim == 0) throw ConfigError("feature_dim", "must be positive");
  if (embedding_dim == 0) throw ConfigError("embedding_dim", "must be positive");
}

ModelConfig ModelConfig::from_config(KeyValueConfig& kv) {
  ModelConfig c;
  c.num_modalities = kv.get_uint("num_modalities", c.num_modalities);
  c.input_dims = kv.get_size_list("input_dims", std::vector<std::size_t>(c.num_modalities, 32));
  if (c.input_dims.size() == 1 && c.num_modalities > 1) c.input_dims.assign(c.num_modalities, c.input_dims[0]);
  c.hidden_dims = kv.get_size_list("hidden_dims", c.hidden_dims);
  c.feature_dim = kv.get_uint("feature_dim", c.feature_dim);
  c.embedding_dim = kv.get_uint("embedding_dim", c.embedding_dim);
  c.activation = parse_activation(kv.get_string("activation", to_string(c.activation)));
  c.seed = kv.get_uint("init_seed", c.seed);
  c.validate();
  return c;
}

void ModelConfig::write_to(KeyValueConfig& kv) const {
  kv.set("num_modalities", std::to_string(num_modalities));
  kv.set("input_dims", format_size_list(input_dims));
  kv.set("hidden_dims", format_size_list(hidden_dims));
  kv.set("feature_dim", std::to_string(feature_dim));
  kv.set("embedding_dim", std::to_string(embedding_dim));
  kv.set("activation", to_string(activation));
  kv.set("init_seed", std::to_string(seed));
}

std::vector<Tensor*> ModelParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& stack : backbones) {
    for (auto& layer : stack) {
      out.push_back(&layer.weight);
      out.push_back(&layer.bias);
    }
  }
  out.push_back(&encoder.weight);
  out.push_back(&encoder.bias);
  return out;
}

std::vector<const Tensor*> ModelParams::tensors() const {
  auto mutable_view = const_cast<ModelParams*>(this)->tensors();
  return {mutable_view.begin(), mutable_view.end()};
}

std::vector<std::string> ModelParams::tensor_names() const {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < backbones.size(); ++j) {
    for (std::size_t l = 0; l < backbones[j].size(); ++l) {
      const std::string prefix = "backbone" + std::to_string(j) + ".layer" + std::to_string(l);
      names.push_back(prefix + ".weight");
      names.push_back(prefix + ".bias");
    }
  }
  names.push_back("encoder.weight");
  names.push_back("encoder.bias");
  return names;
}

std::vector<Shape> ModelParams::tensor_shapes() const {
  std::vector<Shape> shapes;
  for (const Tensor* t : tensors()) shapes.push_back(t->shape());
  return shapes;
}

bool ModelParams::all_finite() const {
  for (const Tensor* t : tensors()) {
    if (!t->all_finite()) return false;
  }
  return true;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (!(a.config == b.config)) return false;
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!(*ta[i] == *tb[i])) return false;
  }
  return true;
}

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    0x6d6f64u};
  std::mt19937_64 rng(seq);
  ModelParams params;
  params.config = config;
  for (std::size_t j = 0; j < config.num_modalities; ++j) {
    const auto widths = layer_widths(config, j);
    std::vector<DenseLayer> stack;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) stack.push_back(init_layer(widths[l], widths[l + 1], rng));
    params.backbones.push_back(std::move(stack));
  }
  params.encoder = init_layer(config.feature_dim, config.embedding_dim, rng);
  return params;
}

BoundModel::BoundModel(Tape& tape, const ModelParams& params, bool trainable) : config_(&params.config) {
  auto bind = [&](const Tensor& t) { return trainable ? tape.leaf(t) : tape.constant(t); };
  for (const auto& stack : params.backbones) {
    std::vector<Var> vars;
    for (const auto& layer : stack) {
      vars.push_back(bind(layer.weight));
      vars.push_back(bind(layer.bias));
    }
    flat_.insert(flat_.end(), vars.begin(), vars.end());
    backbones_.push_back(std::move(vars));
  }
  encoder_ = {bind(params.encoder.weight), bind(params.encoder.bias)};
  flat_.insert(flat_.end(), encoder_.begin(), encoder_.end());
}

const std::vector<Var>& BoundModel::backbone_parameters(std::size_t modality) const {
  check_modality(*config_, modality);
  return backbones_[modality];
}

Var BoundModel::forward_backbone(std::size_t modality, const Var& x) const {
  check_modality(*config_, modality);
  const auto& vars = backbones_[modality];
  const std::size_t expected = config_->input_dims[modality];
  if (x.value().rank() != 2 || x.value().cols() != expected) {
    throw DimensionError("backbone " + std::to_string(modality) + " expects [batch x " + std::to_string(expected) +
                         "], got " + shape_string(x.value().shape()));
  }
  const std::size_t layers = vars.size() / 2;
  Var h = x;
  for (std::size_t l = 0; l < layers; ++l) {
    h = affine(h, vars[2 * l], vars[2 * l + 1]);
    if (l + 1 < layers) h = activate(config_->activation, h);
  }
  return h;
}

Var BoundModel::forward_encoder(const Var& y) const {
  if (y.value().rank() != 2 || y.value().cols() != config_->feature_dim) {
    throw DimensionError("encoder expects [batch x " + std::to_string(config_->feature_dim) + "], got " +
                         shape_string(y.value().shape()));
  }
  return affine(y, encoder_[0], encoder_[1]);
}

Var BoundModel::embed(std::size_t modality, const Var& x) const {
  return forward_encoder(forward_backbone(modality, x));
}

Tensor forward_backbone(const ModelParams& params, std::size_t modality, const Tensor& x) {
  Tape tape;
  BoundModel model(tape, params, false);
  return model.forward_backbone(modality, tape.constant(x)).value();
}

Tensor forward_encoder(const ModelParams& params, const Tensor& y) {
  Tape tape;
  BoundModel model(tape, params, false);
  return model.forward_encoder(tape.constant(y)).value();
}

Tensor embed(const ModelParams& params, std::size_t modality, const Tensor& x) {
  Tape tape;
  BoundModel model(tape, params, false);
  return model.embed(modality, tape.constant(x)).value();
}

}  // namespace xmodal
