#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xmodal/autodiff.hpp"
#include "xmodal/losses.hpp"

namespace xmodal {

// Inputs handed to every probe: embeddings of both modalities, then features of both.
struct ProbeInputs {
  Var z_j;
  Var z_k;
  Var y_j;
  Var y_k;
  const MspNeighbors* neighbors;  // selected at the unperturbed point and held fixed
  const LossWeights* weights;
};

struct GradProbe {
  std::string name;
  std::function<Var(const ProbeInputs&)> loss;
};

// MIM, MDE, MSP and the combined objective.
std::vector<GradProbe> standard_probes();

struct GradcheckOptions {
  std::size_t trials = 20;
  std::size_t batch = 4;
  std::size_t feature_dim = 8;    // a
  std::size_t embedding_dim = 8;  // b
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  double tau = 0.2;
};

struct ProbeResult {
  std::string name;
  double max_error = 0.0;
  // Where the worst error occurred.
  std::size_t trial = 0;
  std::string input;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  std::vector<ProbeResult> probes;
  bool passed = true;
  double seconds = 0.0;
};

// Each trial draws fresh N(0,1) inputs and random loss weights in [0.1, 1].
GradcheckReport run_gradcheck(const GradcheckOptions& options, const std::vector<GradProbe>& probes);

}  // namespace xmodal
