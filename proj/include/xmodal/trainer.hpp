#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xmodal/config.hpp"
#include "xmodal/data.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/model.hpp"

namespace xmodal {

enum class WeightSchedule {
  kExponential,  // alpha(e) = alpha0^((E-1-e)/(E-1)), likewise beta
  kFixed,        // alpha0 and beta0 held constant; zero allowed (ablation)
};

std::string to_string(WeightSchedule schedule);

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double tau = 0.2;
  double alpha0 = 1e-4;
  double beta0 = 1e-4;
  WeightSchedule schedule = WeightSchedule::kExponential;
  bool include_positive_in_denominator = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  SplitFractions split_fractions;
  std::uint64_t split_seed = 0;

  void validate() const;
  static TrainConfig from_config(KeyValueConfig& kv);
  void write_to(KeyValueConfig& kv) const;

  // Loss weights used by every batch of `epoch`.
  LossWeights weights_at(std::size_t epoch) const;

  bool operator==(const TrainConfig&) const = default;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const std::vector<const Tensor*>& params);
  bool operator==(const AdamState&) const = default;
};

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One bias-corrected Adam update of every tensor in `params`.
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamHyper& hyper);

struct EpochRecord {
  std::size_t epoch = 0;
  LossBreakdown train;  // batch means; alpha/beta are the epoch's weights
  double val_total = 0.0;
  double seconds = 0.0;
  std::vector<LossBreakdown> batches;  // not persisted

  // Compares the deterministic fields only: seconds and batches are ignored.
  bool operator==(const EpochRecord& other) const;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;

  // Columns: epoch,mim,mde,msp,total,alpha,beta,val_total,seconds. With include_timing false the
  // seconds column is written as 0 so reruns are byte-identical.
  std::string to_csv(bool include_timing = false) const;
  static TrainReport from_csv(const std::string& text);
};

// Everything needed to continue a run.
struct TrainState {
  ModelParams params;
  AdamState adam;
  std::size_t epochs_done = 0;
  TrainReport report;

  static TrainState fresh(const ModelConfig& config);
};

struct TrainHooks {
  // Called after every completed epoch with the updated state.
  std::function<void(const TrainState&, const EpochRecord&)> on_epoch_end;
  // Stop once this many epochs are done in total (for interrupted runs).
  std::optional<std::size_t> stop_after;
};

// Mean combined loss over consecutive batches of `ds` in stored order.
LossBreakdown evaluate_loss(const ModelParams& params, const TupleDataset& ds, const LossWeights& weights,
                            std::size_t batch_size);

// Runs epochs [state.epochs_done, config.epochs). Throws NumericError naming epoch and batch
// when a loss goes non-finite.
void train(TrainState& state, const TupleDataset& train_ds, const TupleDataset& val_ds, const TrainConfig& config,
           const TrainHooks& hooks = {});

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

TrainResult train(const TupleDataset& train_ds, const TupleDataset& val_ds, const ModelConfig& model_config,
                  const TrainConfig& train_config);

}  // namespace xmodal
