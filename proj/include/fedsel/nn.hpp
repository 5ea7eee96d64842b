#pragma once

// Dense MLP (ReLU hidden layers, softmax cross-entropy head) over a flat
// parameter vector. Every per-client loss and gradient in the simulator comes
// from here.

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace fedsel {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat model or gradient vector. The length is fixed at construction.
/// Storage is Eigen-aligned so that vectorized kernels see the same layer
/// offsets (and therefore the same rounding) on every run.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t size) : values_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size))) {}
  explicit ParamVector(std::span<const double> values);

  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
  double operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }
  double& operator[](std::size_t i) { return values_[static_cast<Eigen::Index>(i)]; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> values() { return {values_.data(), size()}; }
  std::span<const double> values() const { return {values_.data(), size()}; }

  /// Bitwise equality of every coordinate.
  bool operator==(const ParamVector& other) const;

 private:
  Eigen::VectorXd values_;
};

struct MlpArchitecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 0;

  /// input, hidden..., output
  std::vector<std::size_t> layer_sizes() const;
  void validate() const;
  bool operator==(const MlpArchitecture&) const = default;
};

/// Row i of `inputs` is one sample; `labels[i]` its class.
struct Batch {
  RowMatrix inputs;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

/// Sum over consecutive layer pairs of n_in * n_out + n_out.
std::size_t param_count(const MlpArchitecture& arch);

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
ParamVector init_params(const MlpArchitecture& arch, std::uint64_t seed);

/// Offsets of one dense layer inside the flat vector. The weight block is a
/// row-major (n_in x n_out) matrix followed by n_out biases.
struct LayerSlice {
  std::size_t weight_offset;
  std::size_t bias_offset;
  std::size_t fan_in;
  std::size_t fan_out;
};
std::vector<LayerSlice> layer_slices(const MlpArchitecture& arch);

/// Output logits, one row per input row.
RowMatrix logits(const MlpArchitecture& arch, const ParamVector& w, const RowMatrix& inputs);

/// Row-wise softmax with max-logit subtraction.
RowMatrix softmax_rows(const RowMatrix& logits);

/// Mean softmax cross-entropy over the batch.
double forward_loss(const MlpArchitecture& arch, const ParamVector& w, const Batch& batch);

struct LossAndGradient {
  double loss;
  ParamVector grad;
};

/// Exact gradient of forward_loss at w (ReLU derivative taken as 0 at 0).
LossAndGradient backward(const MlpArchitecture& arch, const ParamVector& w, const Batch& batch);

double vector_norm(std::span<const double> v);
inline double vector_norm(const ParamVector& v) { return vector_norm(v.values()); }

/// w - eta * g
ParamVector axpy(const ParamVector& w, const ParamVector& g, double eta);

}  // namespace fedsel
