#include "gtep/nn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "gtep/errors.hpp"

namespace gtep {

namespace {

void check_dims(std::span<const std::size_t> dims) {
  if (dims.size() < 2) throw std::invalid_argument("mlp dims need at least 2 entries");
  for (auto d : dims) {
    if (d == 0) throw std::invalid_argument("mlp dims must be >= 1");
  }
}

bool same_shape(const Gradients& g, const Gradients& h) {
  if (g.weights.size() != h.weights.size()) return false;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    if (g.weights[l].size() != h.weights[l].size() || g.bias[l].size() != h.bias[l].size()) return false;
  }
  return true;
}

}  // namespace

std::size_t param_count(std::span<const std::size_t> dims) {
  check_dims(dims);
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) n += dims[i] * dims[i + 1] + dims[i + 1];
  return n;
}

double gelu(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

// --- BasicMlp -------------------------------------------------------------

template <class T>
BasicMlp<T>::BasicMlp(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  check_dims(dims_);
  if (dims_.back() != 1) throw std::invalid_argument("mlp output dimension must be 1");
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    Layer<T> layer;
    layer.in = dims_[l];
    layer.out = dims_[l + 1];
    layer.weights.assign(layer.in * layer.out, T{0});
    layer.bias.assign(layer.out, T{0});
    layers_.push_back(std::move(layer));
  }
}

template <class T>
BasicMlp<T> BasicMlp<T>::init(std::vector<std::size_t> dims, std::uint64_t seed) {
  BasicMlp mlp(std::move(dims));
  Rng rng(seed, 0x1d17);
  for (auto& layer : mlp.layers_) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.in));
    for (auto& w : layer.weights) {
      T value = static_cast<T>(rng.uniform(-bound, bound));
      if (std::abs(static_cast<double>(value)) > bound) value = std::nextafter(value, T{0});
      w = value;
    }
  }
  return mlp;
}

template <class T>
std::size_t BasicMlp<T>::param_count() const noexcept {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weights.size() + layer.bias.size();
  return n;
}

template <class T>
T BasicMlp<T>::parameter(std::size_t k) const {
  for (const auto& layer : layers_) {
    if (k < layer.weights.size()) return layer.weights[k];
    k -= layer.weights.size();
    if (k < layer.bias.size()) return layer.bias[k];
    k -= layer.bias.size();
  }
  throw std::out_of_range("parameter index out of range");
}

template <class T>
void BasicMlp<T>::set_parameter(std::size_t k, T value) {
  ++revision_;
  for (auto& layer : layers_) {
    if (k < layer.weights.size()) {
      layer.weights[k] = value;
      return;
    }
    k -= layer.weights.size();
    if (k < layer.bias.size()) {
      layer.bias[k] = value;
      return;
    }
    k -= layer.bias.size();
  }
  throw std::out_of_range("parameter index out of range");
}

template <class T>
T BasicMlp<T>::forward(std::span<const T> input) const {
  ForwardWorkspace<T> workspace;
  return forward(input, workspace);
}

template <class T>
T BasicMlp<T>::forward(std::span<const T> input, ForwardWorkspace<T>& ws) const {
  if (input.size() != input_dim()) {
    throw std::invalid_argument("mlp forward: expected " + std::to_string(input_dim()) +
                                " inputs, got " + std::to_string(input.size()));
  }
  ws.current.assign(input.begin(), input.end());
  T output{};
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const bool hidden = l + 1 < layers_.size();
    ws.next.resize(layer.out);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const T* row = layer.weights.data() + o * layer.in;
      double z = static_cast<double>(layer.bias[o]);
      for (std::size_t i = 0; i < layer.in; ++i) {
        z += static_cast<double>(row[i]) * static_cast<double>(ws.current[i]);
      }
      ws.next[o] = static_cast<T>(hidden ? gelu(z) : z);
    }
    std::swap(ws.current, ws.next);
  }
  output = ws.current[0];
  return output;
}

template <class T>
bool BasicMlp<T>::all_finite() const noexcept {
  for (const auto& layer : layers_) {
    for (auto w : layer.weights) {
      if (!std::isfinite(static_cast<double>(w))) return false;
    }
    for (auto b : layer.bias) {
      if (!std::isfinite(static_cast<double>(b))) return false;
    }
  }
  return true;
}

// --- training passes ------------------------------------------------------

void DropoutSpec::validate() const {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout probability must be in [0, 1)");
}

template <class T>
void forward_train(const BasicMlp<T>& mlp, std::span<const T> input, const DropoutSpec& dropout,
                   Rng& rng, TrainPass<T>& pass) {
  dropout.validate();
  if (input.size() != mlp.input_dim()) {
    throw std::invalid_argument("mlp forward_train: expected " + std::to_string(mlp.input_dim()) +
                                " inputs, got " + std::to_string(input.size()));
  }
  const auto layers = mlp.layers();
  const std::size_t n_layers = layers.size();
  pass.inputs.resize(n_layers);
  pass.pre_activations.resize(n_layers);
  pass.masks.resize(n_layers - 1);
  pass.inputs[0].assign(input.begin(), input.end());
  const double keep_scale = 1.0 / (1.0 - dropout.p);

  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& layer = layers[l];
    const bool hidden = l + 1 < n_layers;
    const auto& x = pass.inputs[l];
    auto& z = pass.pre_activations[l];
    z.resize(layer.out);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const T* row = layer.weights.data() + o * layer.in;
      double acc = static_cast<double>(layer.bias[o]);
      for (std::size_t i = 0; i < layer.in; ++i) {
        acc += static_cast<double>(row[i]) * static_cast<double>(x[i]);
      }
      z[o] = acc;
    }
    if (!hidden) {
      pass.prediction = static_cast<T>(z[0]);
      break;
    }
    auto& mask = pass.masks[l];
    mask.resize(layer.out);
    auto& next = pass.inputs[l + 1];
    next.resize(layer.out);
    for (std::size_t o = 0; o < layer.out; ++o) {
      if (dropout.p > 0.0) {
        mask[o] = rng.uniform() < dropout.p ? 0.0 : keep_scale;
      } else {
        mask[o] = 1.0;
      }
      const T activated = static_cast<T>(gelu(z[o]));
      next[o] = static_cast<T>(static_cast<double>(activated) * mask[o]);
    }
  }
  pass.owner = &mlp;
  pass.revision = mlp.revision();
}

template <class T>
TrainPass<T> forward_train(const BasicMlp<T>& mlp, std::span<const T> input,
                           const DropoutSpec& dropout, Rng& rng) {
  TrainPass<T> pass;
  forward_train(mlp, input, dropout, rng, pass);
  return pass;
}

template <class T>
Gradients Gradients::like(const BasicMlp<T>& mlp) {
  Gradients g;
  for (const auto& layer : mlp.layers()) {
    g.weights.emplace_back(layer.weights.size(), 0.0);
    g.bias.emplace_back(layer.bias.size(), 0.0);
  }
  return g;
}

void Gradients::zero() {
  for (auto& w : weights) std::fill(w.begin(), w.end(), 0.0);
  for (auto& b : bias) std::fill(b.begin(), b.end(), 0.0);
}

void Gradients::scale(double factor) {
  for (auto& w : weights) {
    for (auto& x : w) x *= factor;
  }
  for (auto& b : bias) {
    for (auto& x : b) x *= factor;
  }
}

std::size_t Gradients::size() const noexcept {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + bias[l].size();
  return n;
}

double Gradients::flat(std::size_t k) const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (k < weights[l].size()) return weights[l][k];
    k -= weights[l].size();
    if (k < bias[l].size()) return bias[l][k];
    k -= bias[l].size();
  }
  throw std::out_of_range("gradient index out of range");
}

template <class T>
void backward_accumulate(const BasicMlp<T>& mlp, const TrainPass<T>& pass, double loss_grad,
                         Gradients& grads) {
  if (pass.owner != &mlp || pass.revision != mlp.revision()) {
    throw InvalidState("backward: training pass does not belong to the current model parameters");
  }
  const auto layers = mlp.layers();
  if (pass.inputs.size() != layers.size() || grads.weights.size() != layers.size()) {
    throw InvalidState("backward: training pass shape does not match model");
  }
  if (loss_grad == 0.0) return;

  std::vector<double> delta{loss_grad};
  std::vector<double> upstream;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& layer = layers[l];
    const auto& x = pass.inputs[l];
    auto& gw = grads.weights[l];
    auto& gb = grads.bias[l];
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double d = delta[o];
      gb[o] += d;
      if (d == 0.0) continue;
      double* grow = gw.data() + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) grow[i] += d * static_cast<double>(x[i]);
    }
    if (l == 0) break;
    upstream.assign(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const T* row = layer.weights.data() + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) upstream[i] += static_cast<double>(row[i]) * d;
    }
    const auto& mask = pass.masks[l - 1];
    const auto& z = pass.pre_activations[l - 1];
    delta.resize(layer.in);
    for (std::size_t i = 0; i < layer.in; ++i) {
      delta[i] = mask[i] == 0.0 ? 0.0 : upstream[i] * mask[i] * gelu_derivative(z[i]);
    }
  }
}

template <class T>
Gradients backward(const BasicMlp<T>& mlp, const TrainPass<T>& pass, double loss_grad) {
  Gradients g = Gradients::like(mlp);
  backward_accumulate(mlp, pass, loss_grad, g);
  return g;
}

template <class T>
AdamState AdamState::for_model(const BasicMlp<T>& mlp) {
  AdamState s;
  s.first_moment = Gradients::like(mlp);
  s.second_moment = Gradients::like(mlp);
  return s;
}

template <class T>
void adam_step(BasicMlp<T>& mlp, const Gradients& grads, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be > 0");
  const Gradients shape = Gradients::like(mlp);
  if (!same_shape(shape, grads) || !same_shape(shape, state.first_moment) ||
      !same_shape(shape, state.second_moment)) {
    throw std::invalid_argument("adam_step: gradient/state shapes do not match model");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);

  auto update = [&](std::vector<T>& params, const std::vector<double>& g, std::vector<double>& m,
                    std::vector<double>& v) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      const double step = lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
      if (step != 0.0) params[k] = static_cast<T>(static_cast<double>(params[k]) - step);
    }
  };
  auto& layers = mlp.mutable_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weights, grads.weights[l], state.first_moment.weights[l],
           state.second_moment.weights[l]);
    update(layers[l].bias, grads.bias[l], state.first_moment.bias[l], state.second_moment.bias[l]);
  }
}

#define GTEP_INSTANTIATE(T)                                                                        \
  template class BasicMlp<T>;                                                                      \
  template void forward_train<T>(const BasicMlp<T>&, std::span<const T>, const DropoutSpec&, Rng&, \
                                 TrainPass<T>&);                                                   \
  template TrainPass<T> forward_train<T>(const BasicMlp<T>&, std::span<const T>,                   \
                                         const DropoutSpec&, Rng&);                                \
  template Gradients Gradients::like<T>(const BasicMlp<T>&);                                       \
  template Gradients backward<T>(const BasicMlp<T>&, const TrainPass<T>&, double);                 \
  template void backward_accumulate<T>(const BasicMlp<T>&, const TrainPass<T>&, double,            \
                                       Gradients&);                                                \
  template AdamState AdamState::for_model<T>(const BasicMlp<T>&);                                  \
  template void adam_step<T>(BasicMlp<T>&, const Gradients&, AdamState&, double);

GTEP_INSTANTIATE(float)
GTEP_INSTANTIATE(double)

#undef GTEP_INSTANTIATE

}  // namespace gtep
