#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "muso/numerics.hpp"

namespace muso {

enum class Activation { relu, cos, tanh };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::cos: return "cos";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

inline Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "cos") return Activation::cos;
  if (name == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation: " + name);
}

/// Random-feature map z(x) = act(W x) with W entries i.i.d. N(0, 1/sigma^2).
struct RFMap {
  Matrix w;  // D x d
  double sigma = 1.0;
  Activation activation = Activation::relu;
  std::uint64_t seed = 0;

  Index input_dim() const { return w.cols(); }
  Index feature_dim() const { return w.rows(); }
};

inline RFMap sample_rf_map(Index d, Index feature_dim, double sigma, Activation activation,
                           std::uint64_t seed) {
  require(d >= 1 && feature_dim >= 1, "sample_rf_map: dimensions must be positive");
  require(sigma > 0.0, "sample_rf_map: sigma must be positive");
  RFMap map;
  map.sigma = sigma;
  map.activation = activation;
  map.seed = seed;
  auto rng = make_rng(derive_seed(seed, "rf_map"));
  std::normal_distribution<double> dist(0.0, 1.0 / sigma);
  map.w.resize(feature_dim, d);
  for (Index i = 0; i < feature_dim; ++i)
    for (Index j = 0; j < d; ++j) map.w(i, j) = dist(rng);
  return map;
}

inline Matrix apply_activation(Matrix a, Activation activation) {
  switch (activation) {
    case Activation::relu: return a.cwiseMax(0.0);
    case Activation::cos: return a.array().cos().matrix();
    case Activation::tanh: return a.array().tanh().matrix();
  }
  return a;
}

/// Z = act(W X), one feature column per sample.
inline Matrix featurize(const RFMap& map, const Matrix& x) {
  require(x.rows() == map.input_dim(), "featurize: input dimension mismatch");
  return apply_activation(map.w * x, map.activation);
}

/// Trainable output weights with a frozen snapshot of their initialization.
class LinearHead {
 public:
  LinearHead() = default;
  explicit LinearHead(Matrix w_init) : w_init_(std::move(w_init)), w_(w_init_) {}

  const Matrix& init() const { return w_init_; }
  const Matrix& weights() const { return w_; }
  void set_weights(Matrix w) {
    require(w.rows() == w_.rows() && w.cols() == w_.cols(), "LinearHead: shape mismatch");
    w_ = std::move(w);
  }

 private:
  Matrix w_init_;
  Matrix w_;
};

/// Seeded i.i.d. N(0, 1/D) head initialization.
inline Matrix sample_head_init(Index feature_dim, Index out_dim, std::uint64_t seed) {
  auto rng = make_rng(derive_seed(seed, "head_init"));
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(feature_dim)));
  Matrix w(feature_dim, out_dim);
  for (Index i = 0; i < feature_dim; ++i)
    for (Index j = 0; j < out_dim; ++j) w(i, j) = dist(rng);
  return w;
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

/// Minimum-distance interpolant from w0: w = w0 + Z (Z^T Z + lambda I)^{-1} (Y - Z^T w0).
/// With lambda = 0 this interpolates exactly in the over-parameterized regime.
inline Matrix minnorm_fit(const Matrix& z, const Matrix& y, const Matrix& w0,
                          double lambda = 0.0) {
  require(z.rows() == w0.rows(), "minnorm_fit: feature/weight dimension mismatch");
  require(z.cols() == y.rows(), "minnorm_fit: sample count mismatch");
  require(y.cols() == w0.cols(), "minnorm_fit: output width mismatch");
  Matrix gram = symmetrized(z.transpose() * z);
  gram.diagonal().array() += lambda;
  const Matrix residual = y - z.transpose() * w0;
  return w0 + z * spd_solve(gram, residual, "training Gram Z^T Z + lambda*I");
}

struct SgdConfig {
  double learning_rate = 1e-2;
  int epochs = 1;
  Index batch_size = 32;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const {
    require(learning_rate >= 0.0, "SgdConfig: learning rate must be nonnegative");
    require(epochs >= 0, "SgdConfig: epochs must be nonnegative");
    require(batch_size >= 1, "SgdConfig: batch size must be positive");
  }
};

/// Plain seeded mini-batch gradient descent on (1/N) ||Z^T w - Y||_F^2.
/// No momentum or weight decay: plainness is what makes the iterates stay in
/// w0 + col(Z) and converge to the minnorm_fit solution on over-parameterized
/// instances.
inline Matrix sgd_fit(const Matrix& z, const Matrix& y, const Matrix& w0, const SgdConfig& cfg) {
  require(z.rows() == w0.rows(), "sgd_fit: feature/weight dimension mismatch");
  require(z.cols() == y.rows(), "sgd_fit: sample count mismatch");
  cfg.validate();
  const Index n = z.cols();
  Matrix w = w0;

  const auto loss = [&](const Matrix& weights) {
    return (z.transpose() * weights - y).squaredNorm() / static_cast<double>(n);
  };
  const double initial_loss = loss(w);
  const double guard = 10.0 * std::max(initial_loss, 1e-12);

  auto rng = make_rng(derive_seed(cfg.seed, "sgd_fit"));
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) detail::seeded_shuffle_indices(order, rng);
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index count = std::min(cfg.batch_size, n - start);
      Matrix zb(z.rows(), count);
      Matrix yb(count, y.cols());
      for (Index i = 0; i < count; ++i) {
        zb.col(i) = z.col(order[start + i]);
        yb.row(i) = y.row(order[start + i]);
      }
      const Matrix grad = (2.0 / static_cast<double>(count)) * (zb * (zb.transpose() * w - yb));
      w -= cfg.learning_rate * grad;
    }
    if (loss(w) > guard) {
      throw DivergenceError("sgd_fit: loss diverged; lower the learning rate");
    }
  }
  return w;
}

inline Matrix predict(const Matrix& w, const Matrix& z) {
  require(z.rows() == w.rows(), "predict: dimension mismatch");
  return z.transpose() * w;  // N x C
}

enum class DecisionScheme { pm_one, one_hot };

/// pm-one: sign with sign(0) -> +1 (class 1). one-hot: argmax, ties -> lowest index.
inline std::vector<int> decide(const Matrix& outputs, DecisionScheme scheme) {
  std::vector<int> labels(outputs.rows());
  if (scheme == DecisionScheme::pm_one) {
    require(outputs.cols() == 1, "decide: pm-one expects a single output column");
    for (Index i = 0; i < outputs.rows(); ++i) labels[i] = outputs(i, 0) >= 0.0 ? 1 : 0;
  } else {
    for (Index i = 0; i < outputs.rows(); ++i) {
      int best = 0;
      for (Index c = 1; c < outputs.cols(); ++c)
        if (outputs(i, c) > outputs(i, best)) best = static_cast<int>(c);
      labels[i] = best;
    }
  }
  return labels;
}

/// Random-feature classifier bundle used by the harness and metrics.
struct RfClassifier {
  RFMap map;
  Matrix w;

  Matrix outputs(const Matrix& x) const { return predict(w, featurize(map, x)); }
};

// ---------------------------------------------------------------------------
// Serialization: flat little-endian f64 blob with a (D, C) header
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u64_le(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    const auto byte = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(&byte), 1);
  }
}

inline std::uint64_t read_u64_le(std::istream& in, const std::string& path) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    unsigned char byte;
    in.read(reinterpret_cast<char*>(&byte), 1);
    if (!in) throw std::runtime_error("truncated weight file: " + path);
    v |= std::uint64_t(byte) << (8 * i);
  }
  return v;
}

}  // namespace detail

inline void save_weights(const Matrix& w, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write weights: " + path);
  detail::write_u64_le(out, static_cast<std::uint64_t>(w.rows()));
  detail::write_u64_le(out, static_cast<std::uint64_t>(w.cols()));
  for (Index j = 0; j < w.cols(); ++j)
    for (Index i = 0; i < w.rows(); ++i) {
      const double v = w(i, j);
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      detail::write_u64_le(out, bits);
    }
}

inline Matrix load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weights: " + path);
  const auto rows = static_cast<Index>(detail::read_u64_le(in, path));
  const auto cols = static_cast<Index>(detail::read_u64_le(in, path));
  Matrix w(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) {
      const std::uint64_t bits = detail::read_u64_le(in, path);
      double v;
      std::memcpy(&v, &bits, 8);
      w(i, j) = v;
    }
  return w;
}

}  // namespace muso
