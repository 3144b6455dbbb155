#include "ualqe/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "binary_io.hpp"

namespace ualqe {

namespace {

void check_sizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
  for (int s : sizes)
    if (s < 1) throw std::invalid_argument("Mlp: layer sizes must be positive");
}

const char* activation_name(OutputActivation a) {
  return a == OutputActivation::kIdentity ? "identity" : "bounded_tanh";
}

OutputActivation activation_from_name(const std::string& name) {
  if (name == "identity") return OutputActivation::kIdentity;
  if (name == "bounded_tanh") return OutputActivation::kBoundedTanh;
  throw std::runtime_error("unknown output activation '" + name + "'");
}

std::vector<double> flatten_layers(const std::vector<DenseLayer>& layers) {
  std::vector<double> out;
  for (const DenseLayer& l : layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out.push_back(l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) out.push_back(l.bias[r]);
  }
  return out;
}

std::size_t unflatten_layers(std::vector<DenseLayer>& layers, std::span<const double> params) {
  std::size_t pos = 0;
  for (DenseLayer& l : layers) {
    const std::size_t need = static_cast<std::size_t>(l.weight.size() + l.bias.size());
    if (pos + need > params.size()) throw std::invalid_argument("unflatten: parameter vector too short");
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = params[pos++];
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = params[pos++];
  }
  return pos;
}

std::vector<DenseLayer> zero_like(const std::vector<DenseLayer>& layers) {
  std::vector<DenseLayer> out;
  out.reserve(layers.size());
  for (const DenseLayer& l : layers)
    out.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()), Eigen::VectorXd::Zero(l.bias.size())});
  return out;
}

}  // namespace

Gradients& Gradients::operator+=(const Gradients& other) {
  if (other.layers.size() != layers.size()) throw std::invalid_argument("Gradients: layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += other.layers[i].weight;
    layers[i].bias += other.layers[i].bias;
  }
  return *this;
}

Gradients& Gradients::operator*=(double s) {
  for (DenseLayer& l : layers) {
    l.weight *= s;
    l.bias *= s;
  }
  return *this;
}

Mlp::Mlp(std::vector<int> layer_sizes, OutputActivation output) : sizes_(std::move(layer_sizes)), output_(output) {
  check_sizes(sizes_);
  for (std::size_t i = 0; i + 1 < sizes_.size(); ++i)
    layers_.push_back({Eigen::MatrixXd::Zero(sizes_[i + 1], sizes_[i]), Eigen::VectorXd::Zero(sizes_[i + 1])});
  offset_ = Eigen::VectorXd::Zero(sizes_.back());
  scale_ = Eigen::VectorXd::Ones(sizes_.back());
}

Mlp::Mlp(std::vector<int> layer_sizes, OutputActivation output, Rng& rng) : Mlp(std::move(layer_sizes), output) {
  for (DenseLayer& l : layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = dist(rng);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = dist(rng);
  }
}

void Mlp::set_output_bounds(const Eigen::VectorXd& low, const Eigen::VectorXd& high) {
  if (low.size() != output_dim() || high.size() != output_dim())
    throw std::invalid_argument("Mlp::set_output_bounds: dimension mismatch");
  if (((high - low).array() <= 0.0).any()) throw std::invalid_argument("Mlp::set_output_bounds: low must be < high");
  offset_ = 0.5 * (low + high);
  scale_ = 0.5 * (high - low);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& inputs) const {
  if (inputs.rows() != input_dim()) throw std::invalid_argument("Mlp::forward: input dimension mismatch");
  Eigen::MatrixXd x = inputs;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Eigen::MatrixXd z = layers_[i].weight * x;
    z.colwise() += layers_[i].bias;
    if (i + 1 < layers_.size()) {
      x = z.cwiseMax(0.0);
    } else {
      x = std::move(z);
    }
  }
  if (output_ == OutputActivation::kBoundedTanh)
    x = ((x.array().tanh().colwise() * scale_.array()).colwise() + offset_.array()).matrix();
  return x;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& inputs, ForwardCache& cache) const {
  if (inputs.rows() != input_dim()) throw std::invalid_argument("Mlp::forward: input dimension mismatch");
  cache.inputs.resize(layers_.size());
  cache.pre.resize(layers_.size());
  cache.inputs[0] = inputs;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    cache.pre[i] = layers_[i].weight * cache.inputs[i];
    cache.pre[i].colwise() += layers_[i].bias;
    if (i + 1 < layers_.size()) cache.inputs[i + 1] = cache.pre[i].cwiseMax(0.0);
  }
  const Eigen::MatrixXd& z = cache.pre.back();
  if (output_ == OutputActivation::kBoundedTanh) {
    cache.output = ((z.array().tanh().colwise() * scale_.array()).colwise() + offset_.array()).matrix();
  } else {
    cache.output = z;
  }
  return cache.output;
}

std::vector<double> Mlp::forward(std::span<const double> input) const {
  const Eigen::MatrixXd x = Eigen::Map<const Eigen::VectorXd>(input.data(), static_cast<Eigen::Index>(input.size()));
  const Eigen::MatrixXd y = forward(x);
  return {y.data(), y.data() + y.size()};
}

Gradients Mlp::backward(const ForwardCache& cache, const Eigen::MatrixXd& upstream, Eigen::MatrixXd* input_gradient) const {
  if (cache.pre.size() != layers_.size()) throw std::invalid_argument("Mlp::backward: cache does not match network");
  const Eigen::MatrixXd& z_out = cache.pre.back();
  if (upstream.rows() != z_out.rows() || upstream.cols() != z_out.cols())
    throw std::invalid_argument("Mlp::backward: upstream gradient shape mismatch");

  Eigen::MatrixXd delta;
  if (output_ == OutputActivation::kBoundedTanh) {
    const Eigen::ArrayXXd t = z_out.array().tanh();
    delta = ((upstream.array() * (1.0 - t.square())).colwise() * scale_.array()).matrix();
  } else {
    delta = upstream;
  }

  Gradients g;
  g.layers.resize(layers_.size());
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g.layers[i].weight.noalias() = delta * cache.inputs[i].transpose();
    g.layers[i].bias = delta.rowwise().sum();
    if (i == 0 && input_gradient == nullptr) break;
    Eigen::MatrixXd prev = layers_[i].weight.transpose() * delta;
    if (i > 0) {
      delta = (cache.pre[i - 1].array() > 0.0).select(prev, 0.0);
    } else {
      *input_gradient = std::move(prev);
    }
  }
  return g;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const DenseLayer& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

std::vector<double> Mlp::flatten() const { return flatten_layers(layers_); }

void Mlp::unflatten(std::span<const double> params) {
  if (params.size() != parameter_count()) throw std::invalid_argument("Mlp::unflatten: parameter count mismatch");
  unflatten_layers(layers_, params);
}

bool Mlp::same_architecture(const Mlp& other) const { return sizes_ == other.sizes_ && output_ == other.output_; }

bool Mlp::all_finite() const {
  for (const DenseLayer& l : layers_)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

Gradients zero_gradients(const Mlp& net) { return Gradients{zero_like(net.layers())}; }

std::vector<double> flatten(const Gradients& g) { return flatten_layers(g.layers); }

AdamState::AdamState(const Mlp& net, double lr)
    : learning_rate(lr), first(zero_like(net.layers())), second(zero_like(net.layers())) {}

void adam_step(AdamState& state, Mlp& net, const Gradients& grads) {
  auto& layers = net.layers();
  if (grads.layers.size() != layers.size() || state.first.size() != layers.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double lr = state.learning_rate;
  const double eps = state.epsilon;
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (grads.layers[i].weight.rows() != layers[i].weight.rows() || grads.layers[i].weight.cols() != layers[i].weight.cols())
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    update(layers[i].weight, state.first[i].weight, state.second[i].weight, grads.layers[i].weight);
    update(layers[i].bias, state.first[i].bias, state.second[i].bias, grads.layers[i].bias);
  }
}

void soft_update(Mlp& target, const Mlp& online, double tau) {
  if (!target.same_architecture(online)) throw std::invalid_argument("soft_update: architectures differ");
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("soft_update: tau must lie in [0, 1]");
  for (std::size_t i = 0; i < target.layers().size(); ++i) {
    DenseLayer& t = target.layers()[i];
    const DenseLayer& o = online.layers()[i];
    t.weight = tau * o.weight + (1.0 - tau) * t.weight;
    t.bias = tau * o.bias + (1.0 - tau) * t.bias;
  }
}

void save_network(const std::filesystem::path& path, const Mlp& net, const std::map<std::string, std::uint64_t>& counters) {
  nlohmann::json header;
  header["format"] = "ualqe-mlp";
  header["layer_sizes"] = net.layer_sizes();
  header["hidden_activation"] = "relu";
  header["output_activation"] = activation_name(net.output_activation());
  header["output_offset"] = std::vector<double>(net.output_offset().begin(), net.output_offset().end());
  header["output_scale"] = std::vector<double>(net.output_scale().begin(), net.output_scale().end());
  header["counters"] = counters;
  header["parameter_count"] = net.parameter_count();
  detail::write_blob(path, header, net.flatten());
}

Mlp load_network(const std::filesystem::path& path, std::map<std::string, std::uint64_t>* counters) {
  const detail::Blob blob = detail::read_blob(path);
  if (blob.header.value("format", "") != "ualqe-mlp") throw std::runtime_error(path.string() + " is not a network checkpoint");
  Mlp net(blob.header.at("layer_sizes").get<std::vector<int>>(),
          activation_from_name(blob.header.at("output_activation").get<std::string>()));
  const auto offset = blob.header.at("output_offset").get<std::vector<double>>();
  const auto scale = blob.header.at("output_scale").get<std::vector<double>>();
  if (net.output_activation() == OutputActivation::kBoundedTanh) {
    Eigen::VectorXd lo(net.output_dim()), hi(net.output_dim());
    for (int i = 0; i < net.output_dim(); ++i) {
      lo[i] = offset.at(i) - scale.at(i);
      hi[i] = offset.at(i) + scale.at(i);
    }
    net.set_output_bounds(lo, hi);
  }
  if (blob.values.size() != net.parameter_count()) throw std::runtime_error("parameter blob size mismatch in " + path.string());
  net.unflatten(blob.values);
  if (counters != nullptr) *counters = blob.header.value("counters", std::map<std::string, std::uint64_t>{});
  return net;
}

void save_adam(const std::filesystem::path& path, const AdamState& state) {
  nlohmann::json header;
  header["format"] = "ualqe-adam";
  header["learning_rate"] = state.learning_rate;
  header["beta1"] = state.beta1;
  header["beta2"] = state.beta2;
  header["epsilon"] = state.epsilon;
  header["step"] = state.step;
  std::vector<double> values = flatten_layers(state.first);
  const std::vector<double> second = flatten_layers(state.second);
  values.insert(values.end(), second.begin(), second.end());
  detail::write_blob(path, header, values);
}

AdamState load_adam(const std::filesystem::path& path, const Mlp& net) {
  const detail::Blob blob = detail::read_blob(path);
  if (blob.header.value("format", "") != "ualqe-adam") throw std::runtime_error(path.string() + " is not an Adam state");
  AdamState st(net, blob.header.at("learning_rate").get<double>());
  st.beta1 = blob.header.at("beta1").get<double>();
  st.beta2 = blob.header.at("beta2").get<double>();
  st.epsilon = blob.header.at("epsilon").get<double>();
  st.step = blob.header.at("step").get<std::uint64_t>();
  const std::size_t n = net.parameter_count();
  if (blob.values.size() != 2 * n) throw std::runtime_error("Adam blob size mismatch in " + path.string());
  unflatten_layers(st.first, std::span<const double>(blob.values).subspan(0, n));
  unflatten_layers(st.second, std::span<const double>(blob.values).subspan(n, n));
  return st;
}

}  // namespace ualqe
