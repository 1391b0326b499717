#include "permflow/flow.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "permflow/assign.hpp"
#include "permflow/rng.hpp"

namespace permflow::flow {

PathSample sample_path(const Tensor& x0, const Tensor& x1, const std::vector<double>& t) {
  if (!x0.same_shape(x1) || x0.ndim() != 2)
    throw std::invalid_argument("sample_path: x0/x1 must be matching [B,D]");
  int64_t b = x0.dim(0), d = x0.dim(1);
  if (static_cast<int64_t>(t.size()) != b)
    throw std::invalid_argument("sample_path: need one t per row");
  PathSample out;
  out.x_t = Tensor(x0.shape());
  out.u_target = Tensor(x0.shape());
  for (int64_t r = 0; r < b; ++r) {
    double tr = t[static_cast<size_t>(r)];
    if (tr < 0.0 || tr > 1.0) throw std::invalid_argument("sample_path: t must be in [0,1]");
    for (int64_t j = 0; j < d; ++j) {
      int64_t i = r * d + j;
      out.x_t[i] = (1.0 - tr) * x0[i] + tr * x1[i];
      out.u_target[i] = x1[i] - x0[i];
    }
  }
  return out;
}

Tensor guided_field(const Tensor& v_cond, const Tensor& v_uncond, double s) {
  if (!v_cond.same_shape(v_uncond))
    throw std::invalid_argument("guided_field: shape mismatch");
  if (s == 1.0) return v_cond;
  if (s == 0.0) return v_uncond;
  Tensor out(v_cond.shape());
  for (int64_t i = 0; i < out.size(); ++i)
    out[i] = v_uncond[i] + s * (v_cond[i] - v_uncond[i]);
  return out;
}

nn::Var cfm_loss(FlowFieldModel& model, const Tensor& data, const nn::Var& cond, uint64_t seed,
                 Coupling coupling, double dropout_prob) {
  if (data.ndim() != 2 || data.dim(0) < 1)
    throw std::invalid_argument("cfm_loss: data must be a non-empty [B,D] batch");
  int64_t b = data.dim(0), d = data.dim(1);
  if (cond.val().ndim() != 2 || cond.val().dim(0) != b)
    throw std::invalid_argument("cfm_loss: conditioning batch size mismatch");

  Tensor x0({b, d});
  {
    Rng rng(hash_seed(seed, 1));
    for (int64_t i = 0; i < x0.size(); ++i) x0[i] = rng.gaussian();
  }

  std::vector<int> pairing;
  if (coupling == Coupling::OptimalTransport) {
    pairing = assign::ot_pair_minibatch(x0, data);
  } else {
    pairing.resize(static_cast<size_t>(b));
    for (int64_t j = 0; j < b; ++j) pairing[static_cast<size_t>(j)] = static_cast<int>(j);
  }
  Tensor x1({b, d});
  for (int64_t r = 0; r < b; ++r)
    for (int64_t j = 0; j < d; ++j)
      x1[r * d + j] = data[static_cast<int64_t>(pairing[static_cast<size_t>(r)]) * d + j];

  std::vector<double> t(static_cast<size_t>(b));
  {
    Rng rng(hash_seed(seed, 2));
    for (auto& v : t) v = rng.uniform();
  }
  std::vector<uint8_t> drop(static_cast<size_t>(b), 0);
  {
    Rng rng(hash_seed(seed, 3));
    for (auto& m : drop) m = rng.uniform() < dropout_prob ? 1 : 0;
  }

  PathSample path = sample_path(x0, x1, t);
  nn::Var cond_paired = nn::row_gather(cond, pairing);
  nn::Var v = model.field(nn::Var::constant(path.x_t), t, cond_paired, drop);
  if (!v.val().same_shape(path.u_target))
    throw std::invalid_argument("cfm_loss: field output shape mismatch");

  // mean over the batch of squared residual norms
  nn::Var diff = nn::sub(v, nn::Var::constant(path.u_target));
  nn::Var loss = nn::scale(nn::sum_all(nn::mul(diff, diff)), 1.0 / static_cast<double>(b));
  nn::Var reg = model.regularizer();
  if (reg.defined()) loss = nn::add(loss, reg);
  if (!std::isfinite(loss.val().item()))
    throw std::runtime_error("cfm_loss: non-finite loss");
  return loss;
}

Tensor sample_rk4_from(const BatchField& f, Tensor x0, int steps, double guidance_scale) {
  if (steps < 1) throw std::invalid_argument("sample_rk4: steps must be >= 1");
  Tensor x = std::move(x0);

  auto guided = [&](const Tensor& state, double t) {
    Tensor vc = f(state, t, true);
    if (guidance_scale == 1.0) return vc;
    Tensor vu = f(state, t, false);
    return guided_field(vc, vu, guidance_scale);
  };

  double h = 1.0 / static_cast<double>(steps);
  for (int s = 0; s < steps; ++s) {
    double t = s * h;
    Tensor k1 = guided(x, t);
    Tensor tmp(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
    Tensor k2 = guided(tmp, t + 0.5 * h);
    for (int64_t i = 0; i < x.size(); ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
    Tensor k3 = guided(tmp, t + 0.5 * h);
    for (int64_t i = 0; i < x.size(); ++i) tmp[i] = x[i] + h * k3[i];
    Tensor k4 = guided(tmp, t + h);
    for (int64_t i = 0; i < x.size(); ++i)
      x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    for (int64_t i = 0; i < x.size(); ++i) {
      if (!std::isfinite(x[i]))
        throw std::runtime_error("sample_rk4: non-finite state at step " + std::to_string(s));
    }
  }
  return x;
}

Tensor sample_rk4_batch(const BatchField& f, int dim, int steps, double guidance_scale,
                        const std::vector<uint64_t>& seeds) {
  int64_t b = static_cast<int64_t>(seeds.size());
  Tensor x({b, static_cast<int64_t>(dim)});
  for (int64_t r = 0; r < b; ++r) {
    Rng rng(seeds[static_cast<size_t>(r)]);
    for (int j = 0; j < dim; ++j) x[r * dim + j] = rng.gaussian();
  }
  return sample_rk4_from(f, std::move(x), steps, guidance_scale);
}

std::vector<double> sample_rk4(const BatchField& f, int dim, int steps, double guidance_scale,
                               uint64_t seed) {
  Tensor out = sample_rk4_batch(f, dim, steps, guidance_scale, {seed});
  return out.vec();
}

}  // namespace permflow::flow
