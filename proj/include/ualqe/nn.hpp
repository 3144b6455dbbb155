#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ualqe/rng.hpp"

namespace ualqe {

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

enum class OutputActivation {
  kIdentity,
  // offset + scale * tanh(z): maps onto the box [offset - scale, offset + scale]
  kBoundedTanh,
};

/// Intermediate activations of a batched forward pass (one column per sample).
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // input to each layer
  std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
  Eigen::MatrixXd output;
};

struct Gradients {
  std::vector<DenseLayer> layers;

  Gradients& operator+=(const Gradients& other);
  Gradients& operator*=(double s);
};

/// Fully connected network: rectifier hidden units, identity or bounded tanh output.
class Mlp {
 public:
  Mlp() = default;
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization of weights and biases.
  Mlp(std::vector<int> layer_sizes, OutputActivation output, Rng& rng);
  /// All parameters zero.
  Mlp(std::vector<int> layer_sizes, OutputActivation output);

  void set_output_bounds(const Eigen::VectorXd& low, const Eigen::VectorXd& high);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  OutputActivation output_activation() const { return output_; }
  const Eigen::VectorXd& output_offset() const { return offset_; }
  const Eigen::VectorXd& output_scale() const { return scale_; }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs, ForwardCache& cache) const;
  std::vector<double> forward(std::span<const double> input) const;

  /// Reverse pass for d(loss)/d(output) = upstream (out x batch). Returns
  /// parameter gradients summed over the batch; writes d(loss)/d(input) when asked.
  Gradients backward(const ForwardCache& cache, const Eigen::MatrixXd& upstream,
                     Eigen::MatrixXd* input_gradient = nullptr) const;

  std::size_t parameter_count() const;
  /// Flat parameter order: layer 0 weights row-major, layer 0 biases, layer 1 weights, ...
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> params);

  bool same_architecture(const Mlp& other) const;
  bool all_finite() const;

 private:
  std::vector<int> sizes_;
  OutputActivation output_ = OutputActivation::kIdentity;
  Eigen::VectorXd offset_;
  Eigen::VectorXd scale_;
  std::vector<DenseLayer> layers_;
};

Gradients zero_gradients(const Mlp& net);
std::vector<double> flatten(const Gradients& g);

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<DenseLayer> first;
  std::vector<DenseLayer> second;

  AdamState() = default;
  AdamState(const Mlp& net, double lr);
};

/// Bias-corrected Adam update of `net` (descent on the gradients).
void adam_step(AdamState& state, Mlp& net, const Gradients& grads);

/// target <- tau * online + (1 - tau) * target, per parameter.
void soft_update(Mlp& target, const Mlp& online, double tau);

// Binary checkpoint: one JSON header line, then little-endian float64 parameters.
void save_network(const std::filesystem::path& path, const Mlp& net,
                  const std::map<std::string, std::uint64_t>& counters = {});
Mlp load_network(const std::filesystem::path& path, std::map<std::string, std::uint64_t>* counters = nullptr);
void save_adam(const std::filesystem::path& path, const AdamState& state);
AdamState load_adam(const std::filesystem::path& path, const Mlp& net);

}  // namespace ualqe
