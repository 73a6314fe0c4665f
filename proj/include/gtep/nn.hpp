#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gtep/rng.hpp"

namespace gtep {

inline constexpr std::array<std::size_t, 5> kDefaultDims = {11, 64, 64, 32, 1};

/// Sum over layers of in*out weights plus out biases.
std::size_t param_count(std::span<const std::size_t> dims);

/// Exact GELU, x * Phi(x) with Phi the standard normal CDF.
double gelu(double x);
double gelu_derivative(double x);

template <class T>
struct Layer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<T> weights;  // out x in, row-major
  std::vector<T> bias;     // out

  T& weight(std::size_t o, std::size_t i) { return weights[o * in + i]; }
  const T& weight(std::size_t o, std::size_t i) const { return weights[o * in + i]; }
  friend bool operator==(const Layer&, const Layer&) = default;
};

template <class T>
struct ForwardWorkspace {
  std::vector<T> current;
  std::vector<T> next;
};

/// Feed-forward regressor: GELU after every hidden layer, identity output,
/// single scalar output. Sums are accumulated in double whatever T is.
template <class T>
class BasicMlp {
 public:
  BasicMlp() = default;
  /// All-zero parameters.
  explicit BasicMlp(std::vector<std::size_t> dims);
  /// Weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.
  static BasicMlp init(std::vector<std::size_t> dims, std::uint64_t seed);

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t input_dim() const noexcept { return dims_.empty() ? 0 : dims_.front(); }
  std::size_t param_count() const noexcept;
  std::span<const Layer<T>> layers() const noexcept { return layers_; }
  /// Mutable access invalidates outstanding training caches.
  std::vector<Layer<T>>& mutable_layers() noexcept {
    ++revision_;
    return layers_;
  }
  std::uint64_t revision() const noexcept { return revision_; }

  /// Flat parameter view: layer by layer, weights then biases.
  T parameter(std::size_t k) const;
  void set_parameter(std::size_t k, T value);

  T forward(std::span<const T> input) const;
  T forward(std::span<const T> input, ForwardWorkspace<T>& workspace) const;

  bool all_finite() const noexcept;

  template <class U>
  BasicMlp<U> cast() const {
    BasicMlp<U> out(dims_);
    auto& dst = out.mutable_layers();
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      for (std::size_t k = 0; k < layers_[l].weights.size(); ++k) {
        dst[l].weights[k] = static_cast<U>(layers_[l].weights[k]);
      }
      for (std::size_t k = 0; k < layers_[l].bias.size(); ++k) {
        dst[l].bias[k] = static_cast<U>(layers_[l].bias[k]);
      }
    }
    return out;
  }

  friend bool operator==(const BasicMlp& a, const BasicMlp& b) {
    return a.dims_ == b.dims_ && a.layers_ == b.layers_;
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<Layer<T>> layers_;
  std::uint64_t revision_ = 0;
};

using Mlp = BasicMlp<float>;

/// Inverted dropout after each hidden activation; survivors scale by 1/(1-p).
struct DropoutSpec {
  double p = 0.1;
  void validate() const;
};

/// Activations recorded by forward_train for the matching backward call.
template <class T>
struct TrainPass {
  T prediction{};
  std::vector<std::vector<T>> inputs;            // input to each layer
  std::vector<std::vector<double>> pre_activations;  // per layer
  std::vector<std::vector<double>> masks;        // per hidden layer: 0 or 1/(1-p)
  const void* owner = nullptr;
  std::uint64_t revision = 0;
};

template <class T>
void forward_train(const BasicMlp<T>& mlp, std::span<const T> input, const DropoutSpec& dropout,
                   Rng& rng, TrainPass<T>& pass);
template <class T>
TrainPass<T> forward_train(const BasicMlp<T>& mlp, std::span<const T> input,
                           const DropoutSpec& dropout, Rng& rng);

/// Per-parameter gradients, always double.
struct Gradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> bias;

  template <class T>
  static Gradients like(const BasicMlp<T>& mlp);
  void zero();
  void scale(double factor);
  std::size_t size() const noexcept;
  /// Same flat order as BasicMlp::parameter.
  double flat(std::size_t k) const;
};

/// d(loss)/d(params) given d(loss)/d(prediction). Throws InvalidState when the
/// pass was produced by a different model or before a parameter update.
template <class T>
Gradients backward(const BasicMlp<T>& mlp, const TrainPass<T>& pass, double loss_grad);
template <class T>
void backward_accumulate(const BasicMlp<T>& mlp, const TrainPass<T>& pass, double loss_grad,
                         Gradients& grads);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  Gradients first_moment;
  Gradients second_moment;

  template <class T>
  static AdamState for_model(const BasicMlp<T>& mlp);
};

/// One bias-corrected Adam update.
template <class T>
void adam_step(BasicMlp<T>& mlp, const Gradients& grads, AdamState& state, double lr);

}  // namespace gtep
