#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "permflow/autograd.hpp"
#include "permflow/tensor.hpp"

namespace permflow::flow {

enum class Coupling { OptimalTransport, Identity };

struct PathSample {
  Tensor x_t;       // (1-t) x0 + t x1, row-wise
  Tensor u_target;  // x1 - x0
};

// Straight-line probability path between paired source and data rows.
PathSample sample_path(const Tensor& x0, const Tensor& x1, const std::vector<double>& t);

// v_uncond + s * (v_cond - v_uncond).
Tensor guided_field(const Tensor& v_cond, const Tensor& v_uncond, double s);

// Model-facing interface for training: evaluates the conditional vector
// field on a batch. `drop_mask[j] != 0` replaces example j's
// conditioning with the learned dropout vector.
class FlowFieldModel {
 public:
  virtual ~FlowFieldModel() = default;
  virtual nn::Var field(const nn::Var& x_t, const std::vector<double>& t, const nn::Var& cond,
                        const std::vector<uint8_t>& drop_mask) = 0;
  // Additional loss terms (e.g. assignment sparsity); may be undefined.
  virtual nn::Var regularizer() { return nn::Var(); }
};

// Conditional flow-matching loss with minibatch optimal-transport
// coupling and 10% conditioning dropout. Draw order from `seed`:
// source rows from hash_seed(seed,1), times from hash_seed(seed,2),
// dropout mask from hash_seed(seed,3).
nn::Var cfm_loss(FlowFieldModel& model, const Tensor& data, const nn::Var& cond, uint64_t seed,
                 Coupling coupling = Coupling::OptimalTransport, double dropout_prob = 0.1);

// Batch sampling interface: f(x, t, conditional) evaluates the field
// for every row of x at scalar time t, either with each row's own
// conditioning (true) or with the dropout vector (false).
using BatchField = std::function<Tensor(const Tensor& x, double t, bool conditional)>;

// Classical fixed-step RK4 integration of the guided field from t=0 to
// t=1 starting from the given state. Aborts with the step index if the
// state goes non-finite.
Tensor sample_rk4_from(const BatchField& f, Tensor x0, int steps, double guidance_scale);

// Same, starting from per-row Gaussian noise drawn from `seeds`.
Tensor sample_rk4_batch(const BatchField& f, int dim, int steps, double guidance_scale,
                        const std::vector<uint64_t>& seeds);

// Single-sample convenience wrapper.
std::vector<double> sample_rk4(const BatchField& f, int dim, int steps, double guidance_scale,
                               uint64_t seed);

}  // namespace permflow::flow
