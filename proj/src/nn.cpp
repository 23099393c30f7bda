#include "nnkg/nn.hpp"

namespace nnkg {

Matrix softmax_rows(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar mx = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - mx).exp();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy) {
  Matrix dx(y.rows(), y.cols());
  for (Index i = 0; i < y.rows(); ++i) {
    const Scalar dot = y.row(i).dot(dy.row(i));
    dx.row(i) = y.row(i).array() * (dy.row(i).array() - dot);
  }
  return dx;
}

void glorot_fill(Parameter& p, Index fan_in, Index fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  uniform_fill(p, static_cast<Scalar>(-a), static_cast<Scalar>(a), rng);
}

void uniform_fill(Parameter& p, Scalar lo, Scalar hi, Rng& rng) {
  for (Index i = 0; i < p.value.rows(); ++i)
    for (Index j = 0; j < p.value.cols(); ++j)
      p.value(i, j) = static_cast<Scalar>(rng.uniform(lo, hi));
}

// ---- Affine ---------------------------------------------------------------

Affine::Affine(Index in, Index out, const std::string& name, Rng& rng)
    : W(in, out, name + ".W"), b(1, out, name + ".b") {
  glorot_fill(W, in, out, rng);
}

Matrix Affine::forward(const Matrix& x, Cache* cache) const {
  if (x.cols() != W.value.rows())
    throw DimensionError(W.name + ": input has " + std::to_string(x.cols()) +
                         " columns, weight expects " + std::to_string(W.value.rows()));
  if (cache) cache->x = x;
  return (x * W.value).rowwise() + b.value.row(0);
}

Matrix Affine::backward(const Cache& cache, const Matrix& dy) {
  W.grad.noalias() += cache.x.transpose() * dy;
  b.grad.row(0) += dy.colwise().sum();
  return dy * W.value.transpose();
}

void Affine::collect(std::vector<Parameter*>& out) {
  out.push_back(&W);
  out.push_back(&b);
}

// ---- LayerNorm -------------------------------------------------------------

LayerNorm::LayerNorm(Index d, const std::string& name)
    : gain(1, d, name + ".gain"), bias(1, d, name + ".bias") {
  gain.value.setOnes();
}

Matrix LayerNorm::forward(const Matrix& x, Cache* cache) const {
  const Index n = x.rows(), d = x.cols();
  Matrix xhat(n, d);
  Matrix inv_std(n, 1);
  for (Index i = 0; i < n; ++i) {
    const Scalar mu = x.row(i).mean();
    const Scalar var = (x.row(i).array() - mu).square().mean();
    const Scalar is = 1.0f / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * is;
    inv_std(i, 0) = is;
  }
  Matrix y = xhat;
  y.array().rowwise() *= gain.value.row(0).array();
  y.array().rowwise() += bias.value.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix LayerNorm::backward(const Cache& cache, const Matrix& dy) {
  const Index n = dy.rows(), d = dy.cols();
  gain.grad.row(0) += dy.cwiseProduct(cache.xhat).colwise().sum();
  bias.grad.row(0) += dy.colwise().sum();
  Matrix dx(n, d);
  for (Index i = 0; i < n; ++i) {
    const Matrix dxhat = dy.row(i).cwiseProduct(gain.value.row(0));
    const Scalar s1 = dxhat.sum();
    const Scalar s2 = dxhat.row(0).dot(cache.xhat.row(i));
    dx.row(i) = (cache.inv_std(i, 0) / static_cast<Scalar>(d)) *
                (static_cast<Scalar>(d) * dxhat.row(0).array() - s1 -
                 cache.xhat.row(i).array() * s2);
  }
  return dx;
}

void LayerNorm::collect(std::vector<Parameter*>& out) {
  out.push_back(&gain);
  out.push_back(&bias);
}

// ---- Dropout ----------------------------------------------------------------

Dropout::Dropout(Scalar keep_probability) : keep(keep_probability) {
  if (!(keep > 0.0f && keep <= 1.0f))
    throw ConfigError("dropout keep-probability must lie in (0, 1], got " +
                      std::to_string(keep));
}

Matrix Dropout::forward(const Matrix& x, bool train, Rng& rng, Cache* cache) const {
  if (!train || keep == 1.0f) {
    if (cache) cache->mask = Matrix::Ones(x.rows(), x.cols());
    return x;
  }
  Matrix mask(x.rows(), x.cols());
  const Scalar scale = 1.0f / keep;
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < x.cols(); ++j)
      mask(i, j) = rng.uniform01() < keep ? scale : 0.0f;
  Matrix y = x.cwiseProduct(mask);
  if (cache) cache->mask = std::move(mask);
  return y;
}

Matrix Dropout::backward(const Cache& cache, const Matrix& dy) const {
  return dy.cwiseProduct(cache.mask);
}

// ---- Conv1d -----------------------------------------------------------------

Conv1d::Conv1d(Index in_ch, Index out_ch, Index k, const std::string& name, Rng& rng)
    : W(out_ch, in_ch * k, name + ".W"),
      b(1, out_ch, name + ".b"),
      in_channels(in_ch),
      out_channels(out_ch),
      ksize(k) {
  glorot_fill(W, in_ch * k, out_ch * k, rng);
}

Matrix Conv1d::forward(const Matrix& x, Cache* cache) const {
  if (x.rows() != in_channels)
    throw DimensionError(W.name + ": expected " + std::to_string(in_channels) +
                         " input channels, got " + std::to_string(x.rows()));
  if (x.cols() < ksize)
    throw DimensionError(W.name + ": input length " + std::to_string(x.cols()) +
                         " shorter than kernel " + std::to_string(ksize));
  const Index out_len = x.cols() - ksize + 1;
  Matrix patches(out_len, in_channels * ksize);
  for (Index t = 0; t < out_len; ++t)
    for (Index c = 0; c < in_channels; ++c)
      patches.block(t, c * ksize, 1, ksize) = x.block(c, t, 1, ksize);
  Matrix y = (patches * W.value.transpose()).transpose();  // out_ch × out_len
  y.colwise() += b.value.row(0).transpose();
  if (cache) {
    cache->patches = std::move(patches);
    cache->in_length = x.cols();
  }
  return y;
}

Matrix Conv1d::backward(const Cache& cache, const Matrix& dy) {
  // dy: out_ch × out_len; forward used y_col = patches · Wᵀ with y = y_colᵀ.
  const Matrix dy_col = dy.transpose();
  W.grad.noalias() += dy_col.transpose() * cache.patches;
  b.grad.row(0) += dy.rowwise().sum().transpose();
  const Matrix dpatches = dy_col * W.value;
  Matrix dx = Matrix::Zero(in_channels, cache.in_length);
  for (Index t = 0; t < dpatches.rows(); ++t)
    for (Index c = 0; c < in_channels; ++c)
      dx.block(c, t, 1, ksize) += dpatches.block(t, c * ksize, 1, ksize);
  return dx;
}

void Conv1d::collect(std::vector<Parameter*>& out) {
  out.push_back(&W);
  out.push_back(&b);
}

// ---- MaxPool1d --------------------------------------------------------------

Matrix MaxPool1d::forward(const Matrix& x, Cache* cache) const {
  if (x.cols() < window)
    throw DimensionError("max-pool input length " + std::to_string(x.cols()) +
                         " shorter than window " + std::to_string(window));
  const Index out_len = x.cols() / window;
  Matrix y(x.rows(), out_len);
  Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> arg(x.rows(), out_len);
  for (Index c = 0; c < x.rows(); ++c) {
    for (Index t = 0; t < out_len; ++t) {
      Index best = t * window;
      for (Index k = 1; k < window; ++k)
        if (x(c, t * window + k) > x(c, best)) best = t * window + k;
      y(c, t) = x(c, best);
      arg(c, t) = best;
    }
  }
  if (cache) {
    cache->argmax = std::move(arg);
    cache->in_length = x.cols();
  }
  return y;
}

Matrix MaxPool1d::backward(const Cache& cache, const Matrix& dy) const {
  Matrix dx = Matrix::Zero(cache.argmax.rows(), cache.in_length);
  for (Index c = 0; c < dy.rows(); ++c)
    for (Index t = 0; t < dy.cols(); ++t) dx(c, cache.argmax(c, t)) += dy(c, t);
  return dx;
}

// ---- MlpStack ---------------------------------------------------------------

MlpStack::MlpStack(Index in, Index out_dim, int k, const std::string& name, Rng& rng) {
  if (k < 1) throw ConfigError(name + ": layer count must be at least 1");
  blocks.reserve(k);
  for (int i = 0; i < k; ++i)
    blocks.emplace_back(in, in, name + ".block" + std::to_string(i), rng);
  out = Affine(in, out_dim, name + ".out", rng);
}

Matrix MlpStack::forward(const Matrix& x, Cache* cache) const {
  if (cache) {
    cache->block_caches.resize(blocks.size());
    cache->preacts.resize(blocks.size());
  }
  Matrix h = x;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    Matrix pre = blocks[i].forward(h, cache ? &cache->block_caches[i] : nullptr);
    h = relu(pre);
    if (cache) cache->preacts[i] = std::move(pre);
  }
  return out.forward(h, cache ? &cache->out_cache : nullptr);
}

Matrix MlpStack::backward(const Cache& cache, const Matrix& dy) {
  Matrix d = out.backward(cache.out_cache, dy);
  for (std::size_t i = blocks.size(); i-- > 0;) {
    d = relu_backward(cache.preacts[i], d);
    d = blocks[i].backward(cache.block_caches[i], d);
  }
  return d;
}

void MlpStack::collect(std::vector<Parameter*>& out_params) {
  for (Affine& a : blocks) a.collect(out_params);
  out.collect(out_params);
}

// ---- Adam -------------------------------------------------------------------

void Adam::attach(const std::vector<Parameter*>& params) {
  steps = 0;
  m.clear();
  v.clear();
  m.reserve(params.size());
  v.reserve(params.size());
  for (const Parameter* p : params) {
    m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step(const std::vector<Parameter*>& params, Scalar lr) {
  if (params.size() != m.size())
    throw DimensionError("optimizer is attached to a different parameter list");
  for (const Parameter* p : params)
    if (!p->grad.allFinite())
      throw NumericError("non-finite gradient in parameter " + p->name);
  ++steps;
  const Scalar c1 = 1.0f - std::pow(beta1, static_cast<Scalar>(steps));
  const Scalar c2 = 1.0f - std::pow(beta2, static_cast<Scalar>(steps));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    m[i] = beta1 * m[i] + (1.0f - beta1) * p.grad;
    v[i] = beta2 * v[i] + (1.0f - beta2) * p.grad.cwiseProduct(p.grad);
    const Matrix mhat = m[i] / c1;
    const Matrix vhat = v[i] / c2;
    p.value.array() -= lr * mhat.array() / (vhat.array().sqrt() + eps);
    p.zero_grad();
  }
}

}  // namespace nnkg
