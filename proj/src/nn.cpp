#include "fedsel/nn.hpp"

#include "fedsel/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

namespace fedsel {

namespace {

using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const Eigen::RowVectorXd>;
using RowMap = Eigen::Map<Eigen::RowVectorXd>;

void check_inputs(const MlpArchitecture& arch, const ParamVector& w, const RowMatrix& inputs) {
  arch.validate();
  if (w.size() != param_count(arch)) {
    throw DimensionError("parameter vector has length " + std::to_string(w.size()) +
                         ", architecture needs " + std::to_string(param_count(arch)));
  }
  if (static_cast<std::size_t>(inputs.cols()) != arch.input_dim) {
    throw DimensionError("input rows have length " + std::to_string(inputs.cols()) +
                         ", architecture expects " + std::to_string(arch.input_dim));
  }
}

void check_batch(const MlpArchitecture& arch, const ParamVector& w, const Batch& batch) {
  check_inputs(arch, w, batch.inputs);
  if (batch.labels.empty()) {
    throw DimensionError("empty batch");
  }
  if (static_cast<std::size_t>(batch.inputs.rows()) != batch.labels.size()) {
    throw DimensionError("batch has " + std::to_string(batch.inputs.rows()) + " rows but " +
                         std::to_string(batch.labels.size()) + " labels");
  }
  for (int label : batch.labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= arch.output_dim) {
      throw DimensionError("label " + std::to_string(label) + " outside [0, " +
                           std::to_string(arch.output_dim) + ")");
    }
  }
}

// Hidden activations are kept (post-ReLU) for the backward pass.
struct ForwardPass {
  std::vector<RowMatrix> hidden;
  RowMatrix logits;
};

ForwardPass run_forward(const MlpArchitecture& arch, const ParamVector& w, const RowMatrix& inputs) {
  const auto slices = layer_slices(arch);
  ForwardPass pass;
  pass.hidden.reserve(slices.size() - 1);
  const RowMatrix* activation = &inputs;
  for (std::size_t l = 0; l < slices.size(); ++l) {
    const LayerSlice& s = slices[l];
    ConstMatrixMap weight(w.data() + s.weight_offset, static_cast<Eigen::Index>(s.fan_in),
                          static_cast<Eigen::Index>(s.fan_out));
    ConstRowMap bias(w.data() + s.bias_offset, static_cast<Eigen::Index>(s.fan_out));
    RowMatrix z(activation->rows(), static_cast<Eigen::Index>(s.fan_out));
    z.noalias() = (*activation) * weight;
    z.rowwise() += bias;
    if (l + 1 < slices.size()) {
      pass.hidden.push_back(z.cwiseMax(0.0));
      activation = &pass.hidden.back();
    } else {
      pass.logits = std::move(z);
    }
  }
  return pass;
}

double mean_cross_entropy(const RowMatrix& logits, const std::vector<int>& labels) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    double s = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      s += std::exp(logits(i, j) - m);
    }
    total += m + std::log(s) - logits(i, labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(logits.rows());
}

}  // namespace

ParamVector::ParamVector(std::span<const double> values)
    : values_(Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()))) {}

bool ParamVector::operator==(const ParamVector& other) const {
  if (size() != other.size()) {
    return false;
  }
  const auto a = values();
  const auto b = other.values();
  return std::equal(a.begin(), a.end(), b.begin(),
                    [](double x, double y) { return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y); });
}

std::vector<std::size_t> MlpArchitecture::layer_sizes() const {
  std::vector<std::size_t> sizes;
  sizes.reserve(hidden_dims.size() + 2);
  sizes.push_back(input_dim);
  sizes.insert(sizes.end(), hidden_dims.begin(), hidden_dims.end());
  sizes.push_back(output_dim);
  return sizes;
}

void MlpArchitecture::validate() const {
  if (input_dim == 0 || output_dim == 0) {
    throw DimensionError("architecture dimensions must be positive");
  }
  if (std::find(hidden_dims.begin(), hidden_dims.end(), 0U) != hidden_dims.end()) {
    throw DimensionError("hidden layer widths must be positive");
  }
}

std::size_t param_count(const MlpArchitecture& arch) {
  arch.validate();
  const auto sizes = arch.layer_sizes();
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    total += sizes[l] * sizes[l + 1] + sizes[l + 1];
  }
  return total;
}

std::vector<LayerSlice> layer_slices(const MlpArchitecture& arch) {
  const auto sizes = arch.layer_sizes();
  std::vector<LayerSlice> slices;
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::size_t fan_in = sizes[l];
    const std::size_t fan_out = sizes[l + 1];
    slices.push_back({offset, offset + fan_in * fan_out, fan_in, fan_out});
    offset += fan_in * fan_out + fan_out;
  }
  return slices;
}

ParamVector init_params(const MlpArchitecture& arch, std::uint64_t seed) {
  arch.validate();
  ParamVector w(param_count(arch));
  rng::Stream stream(rng::derive(seed, {0x1417}));
  for (const LayerSlice& s : layer_slices(arch)) {
    const double limit = std::sqrt(6.0 / static_cast<double>(s.fan_in + s.fan_out));
    for (std::size_t i = 0; i < s.fan_in * s.fan_out; ++i) {
      w[s.weight_offset + i] = (2.0 * stream.uniform() - 1.0) * limit;
    }
  }
  return w;
}

RowMatrix logits(const MlpArchitecture& arch, const ParamVector& w, const RowMatrix& inputs) {
  check_inputs(arch, w, inputs);
  return run_forward(arch, w, inputs).logits;
}

RowMatrix softmax_rows(const RowMatrix& z) {
  RowMatrix p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    double s = 0.0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      p(i, j) = std::exp(z(i, j) - m);
      s += p(i, j);
    }
    p.row(i) /= s;
  }
  return p;
}

double forward_loss(const MlpArchitecture& arch, const ParamVector& w, const Batch& batch) {
  check_batch(arch, w, batch);
  return mean_cross_entropy(run_forward(arch, w, batch.inputs).logits, batch.labels);
}

LossAndGradient backward(const MlpArchitecture& arch, const ParamVector& w, const Batch& batch) {
  check_batch(arch, w, batch);
  const auto slices = layer_slices(arch);
  ForwardPass pass = run_forward(arch, w, batch.inputs);
  const double loss = mean_cross_entropy(pass.logits, batch.labels);

  const auto n = static_cast<double>(batch.size());
  RowMatrix delta = softmax_rows(pass.logits);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    delta(static_cast<Eigen::Index>(i), batch.labels[i]) -= 1.0;
  }
  delta /= n;

  ParamVector grad(w.size());
  for (std::size_t l = slices.size(); l-- > 0;) {
    const LayerSlice& s = slices[l];
    const auto fan_in = static_cast<Eigen::Index>(s.fan_in);
    const auto fan_out = static_cast<Eigen::Index>(s.fan_out);
    const RowMatrix& input = l == 0 ? batch.inputs : pass.hidden[l - 1];

    MatrixMap weight_grad(grad.data() + s.weight_offset, fan_in, fan_out);
    weight_grad.noalias() = input.transpose() * delta;
    RowMap(grad.data() + s.bias_offset, fan_out) = delta.colwise().sum();

    if (l > 0) {
      ConstMatrixMap weight(w.data() + s.weight_offset, fan_in, fan_out);
      RowMatrix upstream(delta.rows(), fan_in);
      upstream.noalias() = delta * weight.transpose();
      delta = upstream.cwiseProduct((input.array() > 0.0).cast<double>().matrix());
    }
  }
  return {loss, std::move(grad)};
}

double vector_norm(std::span<const double> v) {
  double sum = 0.0;
  for (double x : v) {
    sum += x * x;
  }
  return std::sqrt(sum);
}

ParamVector axpy(const ParamVector& w, const ParamVector& g, double eta) {
  if (w.size() != g.size()) {
    throw DimensionError("axpy length mismatch: " + std::to_string(w.size()) + " vs " +
                         std::to_string(g.size()));
  }
  ParamVector out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    out[i] = w[i] - eta * g[i];
  }
  return out;
}

}  // namespace fedsel
