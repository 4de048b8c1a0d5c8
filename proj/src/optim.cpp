#include "mtn/optim.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace mtn {

void AdanHyper::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  for (double b : {beta1, beta2, beta3}) {
    if (!(b >= 0.0 && b < 1.0)) throw ConfigError("adan betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("adan eps must be positive");
}

void adan_update(const AdanHyper& hyper, AdanTensorState& state, std::span<double> param,
                 std::span<const double> grad) {
  const std::size_t n = param.size();
  if (grad.size() != n || state.m.size() != n || state.v.size() != n || state.n.size() != n ||
      state.prev_grad.size() != n) {
    throw ContractError("adan: parameter, gradient and state sizes differ (" +
                        std::to_string(n) + " vs " + std::to_string(grad.size()) + ")");
  }
  ++state.step;
  const bool first = state.step == 1;
  const double k = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(hyper.beta1, k);
  const double bc2 = 1.0 - std::pow(hyper.beta2, k);
  const double bc3_sqrt = std::sqrt(1.0 - std::pow(hyper.beta3, k));
  const double shrink = 1.0 / (1.0 + hyper.lr * hyper.weight_decay);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    const double diff = first ? 0.0 : g - state.prev_grad[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * diff;
    const double u = g + hyper.beta2 * diff;
    state.n[i] = hyper.beta3 * state.n[i] + (1.0 - hyper.beta3) * u * u;
    const double denom = std::sqrt(state.n[i]) / bc3_sqrt + hyper.eps;
    const double update = (state.m[i] / bc1 + hyper.beta2 * state.v[i] / bc2) / denom;
    param[i] = (param[i] - hyper.lr * update) * shrink;
    state.prev_grad[i] = g;
  }
}

bool tensor_trainable(const ConstParamRef& ref, int stage) {
  if (ref.group == ParamGroup::kDecoder) return true;
  return !ref.frozen && ref.level <= stage;
}

AdanOptimizer::AdanOptimizer(const MultiScaleField& field, const AdanHyper& hyper) : hyper_(hyper) {
  hyper_.validate();
  for (const auto& ref : field.parameters()) states_.emplace_back(ref.values.size());
}

void AdanOptimizer::step(MultiScaleField& field, const FieldGradients& grads, int stage) {
  if (grads.tensors.size() != states_.size()) {
    throw ContractError("adan: gradient has " + std::to_string(grads.tensors.size()) +
                        " tensors, optimizer has " + std::to_string(states_.size()));
  }
  const auto view = std::as_const(field).parameters();
  auto refs = field.parameters();
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (!tensor_trainable(view[i], stage)) continue;
    adan_update(hyper_, states_[i], refs[i].values, grads.tensors[i]);
  }
}

namespace {

void add_pair(std::span<const double> x, std::size_t a, std::size_t b, double scale, RegLoss& out) {
  const double d = x[a] - x[b];
  out.value += d * d;
  out.grad[a] += 2.0 * d * scale;
  out.grad[b] -= 2.0 * d * scale;
}

}  // namespace

RegLoss tv_reg_plane(std::span<const double> texels, int resolution, int channels) {
  const auto N = static_cast<std::size_t>(resolution);
  const auto C = static_cast<std::size_t>(channels);
  if (texels.size() != N * N * C) throw ContractError("tv_reg_plane: size does not match N*N*C");
  RegLoss out;
  out.grad.assign(texels.size(), 0.0);
  if (N < 2) return out;
  const double count = static_cast<double>(2 * N * (N - 1) * C);
  const double scale = 1.0 / count;
  for (std::size_t r = 0; r < N; ++r) {
    for (std::size_t c = 0; c < N; ++c) {
      for (std::size_t ch = 0; ch < C; ++ch) {
        const std::size_t here = (r * N + c) * C + ch;
        if (c + 1 < N) add_pair(texels, here, here + C, scale, out);
        if (r + 1 < N) add_pair(texels, here, here + N * C, scale, out);
      }
    }
  }
  out.value /= count;
  return out;
}

RegLoss tv_reg_line(std::span<const double> values, int resolution, int channels) {
  const auto N = static_cast<std::size_t>(resolution);
  const auto C = static_cast<std::size_t>(channels);
  if (values.size() != N * C) throw ContractError("tv_reg_line: size does not match N*C");
  RegLoss out;
  out.grad.assign(values.size(), 0.0);
  if (N < 2) return out;
  const double count = static_cast<double>((N - 1) * C);
  for (std::size_t i = 0; i + 1 < N; ++i) {
    for (std::size_t ch = 0; ch < C; ++ch) add_pair(values, i * C + ch, (i + 1) * C + ch, 1.0 / count, out);
  }
  out.value /= count;
  return out;
}

RegLoss l2_reg(std::span<const std::span<const double>> tensors) {
  RegLoss out;
  std::size_t count = 0;
  for (const auto& t : tensors) count += t.size();
  if (count == 0) return out;
  out.grad.reserve(count);
  const double inv = 1.0 / static_cast<double>(count);
  for (const auto& t : tensors) {
    for (double x : t) {
      out.value += x * x;
      out.grad.push_back(2.0 * x * inv);
    }
  }
  out.value *= inv;
  return out;
}

double add_regularizers(const MultiScaleField& field, int stage, double lambda_tv,
                        double lambda_l2, FieldGradients& grads) {
  const auto refs = field.parameters();
  if (grads.tensors.size() != refs.size()) throw ContractError("add_regularizers: gradient layout mismatch");
  double total = 0.0;
  std::vector<std::size_t> l2_ids;
  std::vector<std::span<const double>> l2_tensors;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& ref = refs[i];
    if (ref.group == ParamGroup::kDecoder || !tensor_trainable(ref, stage)) continue;
    l2_ids.push_back(i);
    l2_tensors.push_back(ref.values);
    if (lambda_tv == 0.0) continue;
    const int N = static_cast<int>(ref.shape[0]);
    const int C = static_cast<int>(ref.shape.back());
    const RegLoss tv = ref.group == ParamGroup::kPlane ? tv_reg_plane(ref.values, N, C)
                                                       : tv_reg_line(ref.values, N, C);
    total += lambda_tv * tv.value;
    auto& g = grads.tensors[i];
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += lambda_tv * tv.grad[k];
  }
  if (lambda_l2 != 0.0 && !l2_tensors.empty()) {
    const RegLoss l2 = l2_reg(l2_tensors);
    total += lambda_l2 * l2.value;
    std::size_t offset = 0;
    for (std::size_t id : l2_ids) {
      auto& g = grads.tensors[id];
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += lambda_l2 * l2.grad[offset + k];
      offset += g.size();
    }
  }
  return total;
}

double clip_global_norm(FieldGradients& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

}  // namespace mtn
