#include "xmodal/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "xmodal/errors.hpp"

namespace xmodal {

namespace {

void require_batch(const Tensor& a, const Tensor& b, const char* what) {
  if (a.rank() != 2 || !a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": inputs must be matrices of equal shape, got " +
                         shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  if (a.rows() < 2) throw ContractError(std::string(what) + ": need at least 2 tuples per batch");
}

std::vector<std::uint8_t> denominator_mask(std::size_t t, bool include_positive) {
  std::vector<std::uint8_t> mask(t * t, 1);
  if (!include_positive) {
    for (std::size_t i = 0; i < t; ++i) mask[i * t + i] = 0;
  }
  return mask;
}

std::vector<std::size_t> diagonal(std::size_t t) {
  std::vector<std::size_t> idx(t);
  for (std::size_t i = 0; i < t; ++i) idx[i] = i * t + i;
  return idx;
}

// Per-anchor terms from an already scaled similarity matrix (rows = anchors).
Var terms_from_logits(const Var& logits, bool include_positive) {
  const std::size_t t = logits.value().rows();
  return sub(masked_row_logsumexp(logits, denominator_mask(t, include_positive)), gather(logits, diagonal(t)));
}

Var similarity_term(const Var& features, const std::vector<std::size_t>& neighbors) {
  return sum(row_cosine(features, select_rows(features, neighbors)));
}

}  // namespace

void LossWeights::validate() const {
  if (!(tau > 0.0)) throw ContractError("temperature must be positive");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ContractError("loss weights must be non-negative");
}

Var nt_xent_terms(const Var& z_src, const Var& z_tgt, double tau, bool include_positive) {
  require_batch(z_src.value(), z_tgt.value(), "nt_xent");
  if (!(tau > 0.0)) throw ContractError("nt_xent: temperature must be positive");
  return terms_from_logits(scale(cosine_matrix(z_src, z_tgt), 1.0 / tau), include_positive);
}

Var nt_xent_term(std::size_t i, const Var& z_src, const Var& z_tgt, double tau, bool include_positive) {
  if (i >= z_src.value().rows()) throw IndexError("nt_xent_term: anchor index out of range");
  return gather(nt_xent_terms(z_src, z_tgt, tau, include_positive), {i});
}

Var loss_mim(const Var& z_j, const Var& z_k, double tau, bool include_positive) {
  require_batch(z_j.value(), z_k.value(), "loss_mim");
  if (!(tau > 0.0)) throw ContractError("loss_mim: temperature must be positive");
  const std::size_t t = z_j.value().rows();
  Var logits = scale(cosine_matrix(z_j, z_k), 1.0 / tau);
  Var forward = sum(terms_from_logits(logits, include_positive));
  Var reverse = sum(terms_from_logits(transpose(logits), include_positive));
  return scale(add(forward, reverse), 1.0 / (2.0 * static_cast<double>(t)));
}

Var loss_mde(const Var& y_j, const Var& y_k) {
  require_batch(y_j.value(), y_k.value(), "loss_mde");
  return scale(sum(softplus(row_cosine(y_j, y_k))), -1.0 / static_cast<double>(y_j.value().rows()));
}

std::vector<std::size_t> nearest_neighbors(const Tensor& features) {
  const std::size_t t = features.rows();
  if (features.rank() != 2 || t < 2) throw ContractError("nearest_neighbors: need at least 2 rows");
  std::vector<std::size_t> nn(t);
  for (std::size_t i = 0; i < t; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_idx = i == 0 ? 1 : 0;
    for (std::size_t k = 0; k < t; ++k) {
      if (k == i) continue;
      const double d = euclidean_distance(features.row(i), features.row(k));
      if (d < best) {
        best = d;
        best_idx = k;
      }
    }
    nn[i] = best_idx;
  }
  return nn;
}

MspNeighbors msp_neighbors(const Tensor& y_j, const Tensor& y_k) {
  return {nearest_neighbors(y_j), nearest_neighbors(y_k)};
}

Var loss_msp(const Var& y_j, const Var& y_k) {
  require_batch(y_j.value(), y_k.value(), "loss_msp");
  return loss_msp(y_j, y_k, msp_neighbors(y_j.value(), y_k.value()));
}

Var loss_msp(const Var& y_j, const Var& y_k, const MspNeighbors& neighbors) {
  require_batch(y_j.value(), y_k.value(), "loss_msp");
  const std::size_t t = y_j.value().rows();
  if (neighbors.first.size() != t || neighbors.second.size() != t) {
    throw DimensionError("loss_msp: neighbour lists do not match batch size");
  }
  Var total = add(similarity_term(y_j, neighbors.first), similarity_term(y_k, neighbors.second));
  return scale(total, -1.0 / (2.0 * static_cast<double>(t)));
}

CombinedLoss combined_loss(const Var& z_j, const Var& z_k, const Var& y_j, const Var& y_k,
                           const LossWeights& weights, const MspNeighbors* neighbors) {
  weights.validate();
  if (z_j.value().rows() != y_j.value().rows()) {
    throw DimensionError("combined_loss: embedding and feature batches differ in size");
  }
  Var mim = loss_mim(z_j, z_k, weights.tau, weights.include_positive_in_denominator);
  Var mde = loss_mde(y_j, y_k);
  Var msp = neighbors ? loss_msp(y_j, y_k, *neighbors) : loss_msp(y_j, y_k);
  Var total = add(add(mim, scale(mde, weights.alpha)), scale(msp, weights.beta));

  LossBreakdown b;
  b.mim = mim.value().item();
  b.mde = mde.value().item();
  b.msp = msp.value().item();
  b.total = total.value().item();
  b.alpha = weights.alpha;
  b.beta = weights.beta;
  return {total, b};
}

double schedule_weight(std::size_t epoch, std::size_t total_epochs, double initial) {
  if (total_epochs < 1) throw ContractError("schedule_weight: need at least one epoch");
  if (epoch >= total_epochs) {
    throw ContractError("schedule_weight: epoch " + std::to_string(epoch) + " outside [0, " +
                        std::to_string(total_epochs) + ")");
  }
  if (!(initial > 0.0) || initial > 1.0) throw ContractError("schedule_weight: initial weight must be in (0, 1]");
  if (total_epochs == 1) return 1.0;
  const double exponent =
      static_cast<double>(total_epochs - 1 - epoch) / static_cast<double>(total_epochs - 1);
  return std::pow(initial, exponent);
}

double loss_mim(const Tensor& z_j, const Tensor& z_k, double tau, bool include_positive) {
  Tape tape;
  return loss_mim(tape.constant(z_j), tape.constant(z_k), tau, include_positive).value().item();
}

double loss_mde(const Tensor& y_j, const Tensor& y_k) {
  Tape tape;
  return loss_mde(tape.constant(y_j), tape.constant(y_k)).value().item();
}

double loss_msp(const Tensor& y_j, const Tensor& y_k) {
  Tape tape;
  return loss_msp(tape.constant(y_j), tape.constant(y_k)).value().item();
}

LossBreakdown combined_loss(const Tensor& z_j, const Tensor& z_k, const Tensor& y_j, const Tensor& y_k,
                            const LossWeights& weights) {
  Tape tape;
  return combined_loss(tape.constant(z_j), tape.constant(z_k), tape.constant(y_j), tape.constant(y_k), weights)
      .breakdown;
}

}  // namespace xmodal
