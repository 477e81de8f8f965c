#include "xmodal/trainer.hpp"

#include <chrono>
#include <charconv>
#include <cmath>
#include <sstream>

#include "xmodal/errors.hpp"

namespace xmodal {

namespace {

constexpr const char* kCsvHeader = "epoch,mim,mde,msp,total,alpha,beta,val_total,seconds";

WeightSchedule parse_schedule(const std::string& name) {
  if (name == "exponential") return WeightSchedule::kExponential;
  if (name == "fixed") return WeightSchedule::kFixed;
  throw ConfigError("weight_schedule", "expected exponential or fixed, got '" + name + "'");
}

void check_compatible(const ModelConfig& model, const TupleDataset& ds, const char* which) {
  if (ds.num_modalities != model.num_modalities) {
    throw ContractError(std::string(which) + " set has " + std::to_string(ds.num_modalities) +
                        " modalities, model expects " + std::to_string(model.num_modalities));
  }
  if (ds.size() > 0 && ds.dims() != model.input_dims) {
    throw ContractError(std::string(which) + " set feature widths " + format_size_list(ds.dims()) +
                        " do not match model input_dims " + format_size_list(model.input_dims));
  }
}

// Loss of one batch of tuples on modalities 0 and 1.
CombinedLoss batch_loss(Tape& tape, const BoundModel& model, const TupleDataset& ds,
                        const std::vector<std::size_t>& batch, const LossWeights& weights) {
  Var yj = model.forward_backbone(0, tape.constant(ds.features(0, batch)));
  Var yk = model.forward_backbone(1, tape.constant(ds.features(1, batch)));
  return combined_loss(model.forward_encoder(yj), model.forward_encoder(yk), yj, yk, weights);
}

void accumulate(LossBreakdown& sum, const LossBreakdown& b) {
  sum.mim += b.mim;
  sum.mde += b.mde;
  sum.msp += b.msp;
  sum.total += b.total;
}

void divide(LossBreakdown& sum, std::size_t n) {
  const double d = static_cast<double>(n);
  sum.mim /= d;
  sum.mde /= d;
  sum.msp /= d;
  sum.total /= d;
}

double parse_csv_double(const std::string& field, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
    throw ParseError(line, "bad number '" + field + "'");
  }
  return v;
}

}  // namespace

std::string to_string(WeightSchedule schedule) {
  return schedule == WeightSchedule::kExponential ? "exponential" : "fixed";
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs", "need at least one epoch");
  if (batch_size < 2) throw ConfigError("batch_size", "need at least 2 tuples per batch");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate", "must be >= 0");
  if (!(tau > 0.0)) throw ConfigError("tau", "must be positive");
  const bool scheduled = schedule == WeightSchedule::kExponential;
  auto check_weight = [&](const char* key, double w) {
    if (scheduled ? !(w > 0.0 && w <= 1.0) : !(w >= 0.0 && std::isfinite(w))) {
      throw ConfigError(key, scheduled ? "must be in (0, 1] for the exponential schedule" : "must be >= 0");
    }
  };
  check_weight("alpha0", alpha0);
  check_weight("beta0", beta0);
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1", "must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2", "must be in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon", "must be positive");
  const double fractions[] = {split_fractions.train, split_fractions.val, split_fractions.test};
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("split", "fractions must be positive");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw ConfigError("split", "fractions must sum to 1");
  }
}

TrainConfig TrainConfig::from_config(KeyValueConfig& kv) {
  TrainConfig c;
  c.epochs = kv.get_uint("epochs", c.epochs);
  c.batch_size = kv.get_uint("batch_size", c.batch_size);
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.tau = kv.get_double("tau", c.tau);
  c.alpha0 = kv.get_double("alpha0", c.alpha0);
  c.beta0 = kv.get_double("beta0", c.beta0);
  c.schedule = parse_schedule(kv.get_string("weight_schedule", to_string(c.schedule)));
  c.include_positive_in_denominator = kv.get_bool("include_positive", c.include_positive_in_denominator);
  c.adam_beta1 = kv.get_double("adam_beta1", c.adam_beta1);
  c.adam_beta2 = kv.get_double("adam_beta2", c.adam_beta2);
  c.adam_epsilon = kv.get_double("adam_epsilon", c.adam_epsilon);
  c.seed = kv.get_uint("seed", c.seed);
  c.checkpoint_every = kv.get_uint("checkpoint_every", c.checkpoint_every);
  c.split_fractions.train = kv.get_double("split_train", c.split_fractions.train);
  c.split_fractions.val = kv.get_double("split_val", c.split_fractions.val);
  c.split_fractions.test = kv.get_double("split_test", c.split_fractions.test);
  c.split_seed = kv.get_uint("split_seed", c.split_seed);
  c.validate();
  return c;
}

void TrainConfig::write_to(KeyValueConfig& kv) const {
  kv.set("epochs", std::to_string(epochs));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("learning_rate", format_double(learning_rate));
  kv.set("tau", format_double(tau));
  kv.set("alpha0", format_double(alpha0));
  kv.set("beta0", format_double(beta0));
  kv.set("weight_schedule", to_string(schedule));
  kv.set("include_positive", include_positive_in_denominator ? "true" : "false");
  kv.set("adam_beta1", format_double(adam_beta1));
  kv.set("adam_beta2", format_double(adam_beta2));
  kv.set("adam_epsilon", format_double(adam_epsilon));
  kv.set("seed", std::to_string(seed));
  kv.set("checkpoint_every", std::to_string(checkpoint_every));
  kv.set("split_train", format_double(split_fractions.train));
  kv.set("split_val", format_double(split_fractions.val));
  kv.set("split_test", format_double(split_fractions.test));
  kv.set("split_seed", std::to_string(split_seed));
}

LossWeights TrainConfig::weights_at(std::size_t epoch) const {
  LossWeights w;
  w.tau = tau;
  w.include_positive_in_denominator = include_positive_in_denominator;
  if (schedule == WeightSchedule::kExponential) {
    w.alpha = schedule_weight(epoch, epochs, alpha0);
    w.beta = schedule_weight(epoch, epochs, beta0);
  } else {
    w.alpha = alpha0;
    w.beta = beta0;
  }
  return w;
}

AdamState AdamState::zeros_like(const std::vector<const Tensor*>& params) {
  AdamState s;
  for (const Tensor* p : params) {
    s.m.push_back(Tensor::zeros_like(*p));
    s.v.push_back(Tensor::zeros_like(*p));
  }
  return s;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamHyper& hyper) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!grads[k].same_shape(*params[k]) || !state.m[k].same_shape(*params[k]) ||
        !state.v[k].same_shape(*params[k])) {
      throw ContractError("adam_step: shape mismatch at tensor " + std::to_string(k));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->data();
    auto g = grads[k].data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= hyper.learning_rate * m_hat / (std::sqrt(v_hat) + hyper.epsilon);
    }
  }
}

bool EpochRecord::operator==(const EpochRecord& other) const {
  return epoch == other.epoch && train == other.train && val_total == other.val_total;
}

std::string TrainReport::to_csv(bool include_timing) const {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const EpochRecord& r : epochs) {
    out += std::to_string(r.epoch);
    for (double v : {r.train.mim, r.train.mde, r.train.msp, r.train.total, r.train.alpha, r.train.beta, r.val_total,
                     include_timing ? r.seconds : 0.0}) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

TrainReport TrainReport::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw ParseError(1, "missing training report header");
  TrainReport report;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    std::vector<std::string> fields;
    std::istringstream row(line);
    std::string f;
    while (std::getline(row, f, ',')) fields.push_back(f);
    if (fields.size() != 9) throw ParseError(n, "expected 9 columns");
    EpochRecord r;
    r.epoch = static_cast<std::size_t>(parse_csv_double(fields[0], n));
    r.train.mim = parse_csv_double(fields[1], n);
    r.train.mde = parse_csv_double(fields[2], n);
    r.train.msp = parse_csv_double(fields[3], n);
    r.train.total = parse_csv_double(fields[4], n);
    r.train.alpha = parse_csv_double(fields[5], n);
    r.train.beta = parse_csv_double(fields[6], n);
    r.val_total = parse_csv_double(fields[7], n);
    r.seconds = parse_csv_double(fields[8], n);
    report.epochs.push_back(std::move(r));
  }
  return report;
}

TrainState TrainState::fresh(const ModelConfig& config) {
  TrainState s;
  s.params = init_params(config);
  s.adam = AdamState::zeros_like(std::as_const(s.params).tensors());
  return s;
}

LossBreakdown evaluate_loss(const ModelParams& params, const TupleDataset& ds, const LossWeights& weights,
                            std::size_t batch_size) {
  if (batch_size < 2) throw ContractError("evaluate_loss: batch size must be at least 2");
  check_compatible(params.config, ds, "evaluation");
  LossBreakdown sum;
  std::size_t batches = 0;
  for (std::size_t start = 0; start + 2 <= ds.size(); start += batch_size) {
    const std::size_t end = std::min(ds.size(), start + batch_size);
    std::vector<std::size_t> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(i);
    Tape tape;
    BoundModel model(tape, params, false);
    accumulate(sum, batch_loss(tape, model, ds, batch, weights).breakdown);
    ++batches;
  }
  if (batches == 0) throw ContractError("evaluate_loss: dataset has fewer than 2 tuples");
  divide(sum, batches);
  sum.alpha = weights.alpha;
  sum.beta = weights.beta;
  return sum;
}

void train(TrainState& state, const TupleDataset& train_ds, const TupleDataset& val_ds, const TrainConfig& config,
           const TrainHooks& hooks) {
  config.validate();
  const ModelConfig& model_config = state.params.config;
  check_compatible(model_config, train_ds, "training");
  check_compatible(model_config, val_ds, "validation");
  if (model_config.num_modalities != 2) throw ContractError("train: pairwise objective needs exactly 2 modalities");
  if (state.adam.m.size() != state.params.tensors().size()) {
    throw ContractError("train: optimizer state does not match parameters");
  }
  const AdamHyper hyper{config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon};
  LossWeights val_weights;
  val_weights.tau = config.tau;
  val_weights.include_positive_in_denominator = config.include_positive_in_denominator;

  const std::size_t last = std::min(config.epochs, hooks.stop_after.value_or(config.epochs));
  for (std::size_t epoch = state.epochs_done; epoch < last; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const LossWeights weights = config.weights_at(epoch);
    const auto batches = batch_iter(train_ds, config.batch_size, config.seed, epoch);
    if (batches.empty()) throw ContractError("train: training set yields no batch of at least 2 tuples");

    EpochRecord record;
    record.epoch = epoch;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Tape tape;
      BoundModel model(tape, state.params, true);
      CombinedLoss loss = batch_loss(tape, model, train_ds, batches[b], weights);
      if (!std::isfinite(loss.breakdown.total)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                           " (mim=" + format_double(loss.breakdown.mim) + ", mde=" +
                           format_double(loss.breakdown.mde) + ", msp=" + format_double(loss.breakdown.msp) + ")");
      }
      const Gradients grads = tape.backward(loss.total);
      std::vector<Tensor> g;
      for (const Var& p : model.parameters()) g.push_back(grads.of(p));
      adam_step(state.params.tensors(), g, state.adam, hyper);
      accumulate(record.train, loss.breakdown);
      record.batches.push_back(loss.breakdown);
    }
    divide(record.train, batches.size());
    record.train.alpha = weights.alpha;
    record.train.beta = weights.beta;
    record.val_total = evaluate_loss(state.params, val_ds, val_weights, config.batch_size).total;
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    state.epochs_done = epoch + 1;
    state.report.epochs.push_back(record);
    if (hooks.on_epoch_end) hooks.on_epoch_end(state, record);
  }
}

TrainResult train(const TupleDataset& train_ds, const TupleDataset& val_ds, const ModelConfig& model_config,
                  const TrainConfig& train_config) {
  TrainState state = TrainState::fresh(model_config);
  train(state, train_ds, val_ds, train_config);
  return {std::move(state.params), std::move(state.report)};
}

}  // namespace xmodal
