#include "xmodal/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include "xmodal/errors.hpp"
#include "xmodal/finite_diff.hpp"

namespace xmodal {

namespace {

constexpr const char* kInputNames[] = {"z_j", "z_k", "y_j", "y_k"};

Tensor normal_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

std::vector<GradProbe> standard_probes() {
  return {
      {"mim", [](const ProbeInputs& in) { return loss_mim(in.z_j, in.z_k, in.weights->tau); }},
      {"mde", [](const ProbeInputs& in) { return loss_mde(in.y_j, in.y_k); }},
      {"msp", [](const ProbeInputs& in) { return loss_msp(in.y_j, in.y_k, *in.neighbors); }},
      {"combined",
       [](const ProbeInputs& in) {
         return combined_loss(in.z_j, in.z_k, in.y_j, in.y_k, *in.weights, in.neighbors).total;
       }},
  };
}

GradcheckReport run_gradcheck(const GradcheckOptions& options, const std::vector<GradProbe>& probes) {
  if (options.trials < 1) throw ContractError("gradcheck: at least one trial is required");
  if (options.batch < 2) throw ContractError("gradcheck: batch must be at least 2");
  if (options.feature_dim < 1 || options.embedding_dim < 1) throw ContractError("gradcheck: dims must be positive");
  if (!(options.step > 0.0)) throw ContractError("gradcheck: step must be positive");
  const auto started = std::chrono::steady_clock::now();

  GradcheckReport report;
  for (const GradProbe& p : probes) report.probes.push_back({p.name});

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> weight(0.1, 1.0);
  for (std::size_t trial = 0; trial < options.trials; ++trial) {
    const Tensor inputs[] = {normal_tensor({options.batch, options.embedding_dim}, rng),
                             normal_tensor({options.batch, options.embedding_dim}, rng),
                             normal_tensor({options.batch, options.feature_dim}, rng),
                             normal_tensor({options.batch, options.feature_dim}, rng)};
    LossWeights w;
    w.tau = options.tau;
    w.alpha = weight(rng);
    w.beta = weight(rng);
    const MspNeighbors nn = msp_neighbors(inputs[2], inputs[3]);

    for (std::size_t p = 0; p < probes.size(); ++p) {
      Tape tape;
      Var vars[] = {tape.leaf(inputs[0]), tape.leaf(inputs[1]), tape.leaf(inputs[2]), tape.leaf(inputs[3])};
      const Gradients grads = tape.backward(probes[p].loss({vars[0], vars[1], vars[2], vars[3], &nn, &w}));

      for (std::size_t which = 0; which < 4; ++which) {
        auto f = [&](const Tensor& probe_input) {
          Tape t;
          auto bind = [&](std::size_t i) { return t.constant(i == which ? probe_input : inputs[i]); };
          const Var v[] = {bind(0), bind(1), bind(2), bind(3)};
          return probes[p].loss({v[0], v[1], v[2], v[3], &nn, &w}).value().item();
        };
        const Tensor numeric = finite_diff_grad(f, inputs[which], options.step);
        const Tensor analytic = grads.of(vars[which]);
        const ErrorLocation worst = max_relative_error(analytic, numeric);
        const double error = std::isnan(worst.error) ? std::numeric_limits<double>::infinity() : worst.error;
        ProbeResult& r = report.probes[p];
        if (error > r.max_error || r.input.empty()) {
          r.max_error = error;
          r.trial = trial;
          r.input = kInputNames[which];
          r.index = worst.index;
          r.analytic = analytic[worst.index];
          r.numeric = numeric[worst.index];
        }
      }
    }
  }
  for (ProbeResult& r : report.probes) {
    r.passed = r.max_error < options.tolerance;
    report.passed = report.passed && r.passed;
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace xmodal
