#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nnkg/error.hpp"
#include "nnkg/rng.hpp"

namespace nnkg {

// Row-major so batches (one row per item) serialize in natural order.
template <typename S>
using MatrixT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Scalar = float;
using Matrix = MatrixT<Scalar>;
using Index = Eigen::Index;

// ---- Stable elementwise nonlinearities ----------------------------------

inline Scalar sigmoid(Scalar x) {
  if (x >= 0) return 1.0f / (1.0f + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (1.0f + e);
}

// log σ(x), evaluated in double: the loss accumulates these and the
// finite-difference oracle needs the extra headroom.
inline double log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
  return x.cwiseMax(typename Derived::Scalar(0));
}

// dx for y = relu(x), given the forward input.
template <typename Derived>
Matrix relu_backward(const Eigen::MatrixBase<Derived>& x, const Matrix& dy) {
  return (x.array() > 0).template cast<Scalar>().matrix().cwiseProduct(dy);
}

template <typename Derived>
Matrix sigmoid(const Eigen::MatrixBase<Derived>& x) {
  return x.unaryExpr([](Scalar v) { return sigmoid(v); });
}

// Rows are independent distributions; max-shifted for stability.
Matrix softmax_rows(const Matrix& x);
Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy);

// ---- Parameters ----------------------------------------------------------

struct Parameter {
  Matrix value;
  Matrix grad;
  std::string name;

  Parameter() = default;
  Parameter(Index rows, Index cols, std::string n)
      : value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)), name(std::move(n)) {}

  void zero_grad() { grad.setZero(); }
};

// Uniform ±(6/(fan_in+fan_out))^1/2, filled row-major so init is
// reproducible from the rng stream alone.
void glorot_fill(Parameter& p, Index fan_in, Index fan_out, Rng& rng);
void uniform_fill(Parameter& p, Scalar lo, Scalar hi, Rng& rng);

// ---- Layers --------------------------------------------------------------
// Each layer owns its parameters and exposes forward (optionally recording a
// cache) and backward (consuming the cache, accumulating parameter gradients,
// returning the input gradient). No tape: composites chain these by hand.

struct Affine {
  Parameter W;  // in × out
  Parameter b;  // 1 × out

  struct Cache {
    Matrix x;
  };

  Affine() = default;
  Affine(Index in, Index out, const std::string& name, Rng& rng);

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(std::vector<Parameter*>& out);
};

struct LayerNorm {
  Parameter gain;  // 1 × d
  Parameter bias;  // 1 × d
  Scalar eps = 1e-5f;

  struct Cache {
    Matrix xhat;
    Matrix inv_std;  // n × 1
  };

  LayerNorm() = default;
  explicit LayerNorm(Index d, const std::string& name);

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(std::vector<Parameter*>& out);
};

struct Dropout {
  Scalar keep = 1.0f;  // keep-probability; scaling folded into the mask

  struct Cache {
    Matrix mask;
  };

  Dropout() = default;
  explicit Dropout(Scalar keep_probability);

  // Training mode draws a fresh mask from rng; eval mode is the identity.
  Matrix forward(const Matrix& x, bool train, Rng& rng, Cache* cache = nullptr) const;
  Matrix backward(const Cache& cache, const Matrix& dy) const;
};

// Valid cross-correlation over channels × length inputs, one sample at a time.
struct Conv1d {
  Parameter W;  // out_channels × (in_channels · ksize)
  Parameter b;  // 1 × out_channels
  Index in_channels = 0;
  Index out_channels = 0;
  Index ksize = 0;

  struct Cache {
    Matrix patches;  // out_length × (in_channels · ksize)
    Index in_length = 0;
  };

  Conv1d() = default;
  Conv1d(Index in_ch, Index out_ch, Index k, const std::string& name, Rng& rng);

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(std::vector<Parameter*>& out);
};

// Non-overlapping windows (stride = window); a trailing remainder shorter
// than the window is dropped.
struct MaxPool1d {
  Index window = 1;

  struct Cache {
    Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax;
    Index in_length = 0;
  };

  explicit MaxPool1d(Index w) : window(w) {}

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  Matrix backward(const Cache& cache, const Matrix& dy) const;
};

// k× (affine at input width + ReLU), then one affine to the output width —
// the perceptron shape shared by the projection/intersection/negation nets.
struct MlpStack {
  std::vector<Affine> blocks;
  Affine out;

  struct Cache {
    std::vector<Affine::Cache> block_caches;
    std::vector<Matrix> preacts;
    Affine::Cache out_cache;
  };

  MlpStack() = default;
  MlpStack(Index in, Index out_dim, int k, const std::string& name, Rng& rng);

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(std::vector<Parameter*>& out);
};

// ---- Optimizer -----------------------------------------------------------

struct Adam {
  Scalar beta1 = 0.9f;
  Scalar beta2 = 0.999f;
  Scalar eps = 1e-8f;
  std::uint64_t steps = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  // Sizes the moment buffers; parameter order must stay fixed afterwards.
  void attach(const std::vector<Parameter*>& params);

  // Bias-corrected update; gradients are zeroed afterwards. A non-finite
  // gradient rejects the whole step so a diagnostic checkpoint can be cut.
  void step(const std::vector<Parameter*>& params, Scalar lr);
};

}  // namespace nnkg
