#pragma once

#include <cstddef>
#include <vector>

#include "xmodal/autodiff.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

struct LossWeights {
  double alpha = 1.0;  // weight of the discrepancy-elimination term
  double beta = 1.0;   // weight of the similarity-preservation term
  double tau = 0.2;    // contrastive temperature
  // Standard NT-Xent puts the positive pair in the denominator; the default leaves it out.
  bool include_positive_in_denominator = false;

  void validate() const;
};

struct LossBreakdown {
  double mim = 0.0;
  double mde = 0.0;
  double msp = 0.0;
  double total = 0.0;
  double alpha = 0.0;
  double beta = 0.0;

  bool operator==(const LossBreakdown&) const = default;
};

// ---------------------------------------------------------------------------------------
// Mutual-information maximization (contrastive) term.
//
// For anchor i with source embeddings z_src and target embeddings z_tgt:
//   l_i = -log( exp(S(src_i, tgt_i)/tau) / sum_{q != i} exp(S(src_i, tgt_q)/tau) )
// computed as logsumexp_{q != i}(S_iq / tau) - S_ii / tau.
// ---------------------------------------------------------------------------------------

// All T per-anchor terms as a [T x 1] column. Requires T >= 2.
Var nt_xent_terms(const Var& z_src, const Var& z_tgt, double tau, bool include_positive = false);
Var nt_xent_term(std::size_t i, const Var& z_src, const Var& z_tgt, double tau, bool include_positive = false);

// (1 / 2T) * sum_i [ l_i(j,k) + l_i(k,j) ]
Var loss_mim(const Var& z_j, const Var& z_k, double tau, bool include_positive = false);

// Inter-modal discrepancy elimination: -(1/T) sum_i log(1 + exp(S(y_j[i], y_k[i]))).
// Lies in [-ln(1+e), -ln(1+1/e)].
Var loss_mde(const Var& y_j, const Var& y_k);

// Within-batch nearest neighbour of every row under Euclidean distance, excluding the row
// itself. Exact ties resolve to the lowest index. Requires at least 2 rows.
std::vector<std::size_t> nearest_neighbors(const Tensor& features);

struct MspNeighbors {
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
};

MspNeighbors msp_neighbors(const Tensor& y_j, const Tensor& y_k);

// Intra-modal similarity preservation: -(1/2T) sum_i [ S(y_j[i], y_j[nn_j(i)]) + S(y_k[i], y_k[nn_k(i)]) ].
// Neighbour selection is a constant of the batch; gradients reach both the anchor and the
// selected neighbour through the cosine.
Var loss_msp(const Var& y_j, const Var& y_k);
Var loss_msp(const Var& y_j, const Var& y_k, const MspNeighbors& neighbors);

struct CombinedLoss {
  Var total;
  LossBreakdown breakdown;
};

// total = mim + alpha * mde + beta * msp. Pass `neighbors` to freeze the MSP selection.
CombinedLoss combined_loss(const Var& z_j, const Var& z_k, const Var& y_j, const Var& y_k,
                           const LossWeights& weights, const MspNeighbors* neighbors = nullptr);

// Geometric ramp from `initial` at epoch 0 to exactly 1 at epoch total_epochs - 1:
//   w(e) = initial^((E - 1 - e) / (E - 1)), and 1 when E == 1.
double schedule_weight(std::size_t epoch, std::size_t total_epochs, double initial);

// Value-only conveniences (no gradient).
double loss_mim(const Tensor& z_j, const Tensor& z_k, double tau, bool include_positive = false);
double loss_mde(const Tensor& y_j, const Tensor& y_k);
double loss_msp(const Tensor& y_j, const Tensor& y_k);
LossBreakdown combined_loss(const Tensor& z_j, const Tensor& z_k, const Tensor& y_j, const Tensor& y_k,
                            const LossWeights& weights);

}  // namespace xmodal
