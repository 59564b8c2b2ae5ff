#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "muso/unlearn_linear.hpp"

namespace muso {

// ---------------------------------------------------------------------------
// Small MLP: the first L-1 layers act as the feature map Z(.), the head as w.
// ---------------------------------------------------------------------------

struct MlpLayer {
  Matrix w;  // d_i x d_{i-1}
  Vector b;  // d_i
};

struct Mlp {
  std::vector<MlpLayer> layers;          // feature layers
  std::vector<Activation> activations;   // one per feature layer
  LinearHead head;                       // D x C over the last hidden width
  int frozen_prefix = 0;                 // leading feature layers excluded from updates

  Index input_dim() const { return layers.front().w.cols(); }
  Index feature_dim() const { return layers.back().w.rows(); }
  Index output_dim() const { return head.weights().cols(); }

  /// Prefix forward pass; the head is not applied.
  Matrix features(const Matrix& x) const {
    require(x.rows() == input_dim(), "Mlp::features: input dimension mismatch");
    Matrix z = x;
    for (std::size_t i = 0; i < layers.size(); ++i)
      z = apply_activation((layers[i].w * z).colwise() + layers[i].b, activations[i]);
    return z;
  }

  Matrix outputs(const Matrix& x) const { return predict(head.weights(), features(x)); }

  void validate() const {
    require(!layers.empty(), "Mlp: needs at least one feature layer");
    require(activations.size() == layers.size(), "Mlp: one activation per feature layer");
    require(head.weights().rows() == feature_dim(),
            "Mlp: head input width must equal the last hidden width");
    require(frozen_prefix >= 0 && frozen_prefix <= static_cast<int>(layers.size()),
            "Mlp: frozen prefix out of range");
    for (std::size_t i = 1; i < layers.size(); ++i)
      require(layers[i].w.cols() == layers[i - 1].w.rows(), "Mlp: layer widths do not chain");
  }
};

/// Scaled-Gaussian initialization: layer entries N(0, 1/fan_in), zero biases,
/// head N(0, 1/D); everything seeded.
inline Mlp mlp_init(Index input_dim, const std::vector<Index>& hidden_widths, Index out_dim,
                    Activation activation, std::uint64_t seed, int frozen_prefix = 0) {
  require(!hidden_widths.empty(), "mlp_init: needs at least one hidden layer");
  Mlp m;
  Index prev = input_dim;
  for (std::size_t i = 0; i < hidden_widths.size(); ++i) {
    auto rng = make_rng(derive_seed(seed, "mlp/layer" + std::to_string(i)));
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(prev)));
    MlpLayer layer;
    layer.w.resize(hidden_widths[i], prev);
    for (Index r = 0; r < layer.w.rows(); ++r)
      for (Index c = 0; c < layer.w.cols(); ++c) layer.w(r, c) = dist(rng);
    layer.b = Vector::Zero(hidden_widths[i]);
    m.layers.push_back(std::move(layer));
    m.activations.push_back(activation);
    prev = hidden_widths[i];
  }
  m.head = LinearHead(sample_head_init(prev, out_dim, derive_seed(seed, "mlp/head")));
  m.frozen_prefix = frozen_prefix;
  m.validate();
  return m;
}

inline Matrix mlp_forward_features(const Mlp& m, const Matrix& x) { return m.features(x); }

inline double mlp_mse_loss(const Mlp& m, const Matrix& x, const Matrix& y) {
  return (m.outputs(x) - y).squaredNorm() / static_cast<double>(x.cols());
}

struct MlpGradients {
  std::vector<MlpLayer> layers;  // gradient per feature layer (zero when frozen)
  Matrix head;
};

namespace detail {

inline Matrix activation_derivative(const Matrix& pre, const Matrix& post, Activation act) {
  switch (act) {
    case Activation::relu: return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::cos: return (-pre.array().sin()).matrix();
    case Activation::tanh: return (1.0 - post.array().square()).matrix();
  }
  return Matrix::Ones(pre.rows(), pre.cols());
}

}  // namespace detail

/// Full-batch analytic gradients of (1/N) ||Z^T w - Y||_F^2 with respect to the
/// head and every non-frozen feature layer.
inline MlpGradients mlp_mse_gradients(const Mlp& m, const Matrix& x, const Matrix& y) {
  const Index n = x.cols();
  require(y.rows() == n, "mlp_mse_gradients: sample count mismatch");

  // Forward with stored pre/post activations.
  std::vector<Matrix> pre(m.layers.size());
  std::vector<Matrix> post(m.layers.size() + 1);
  post[0] = x;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    pre[i] = (m.layers[i].w * post[i]).colwise() + m.layers[i].b;
    post[i + 1] = apply_activation(pre[i], m.activations[i]);
  }
  const Matrix& z = post.back();
  const Matrix out_grad = (2.0 / static_cast<double>(n)) * (z.transpose() * m.head.weights() - y);

  MlpGradients g;
  g.head = z * out_grad;
  g.layers.resize(m.layers.size());
  Matrix upstream = m.head.weights() * out_grad.transpose();  // dL/dZ, D x N
  for (std::size_t i = m.layers.size(); i-- > 0;) {
    const Matrix local = upstream.cwiseProduct(
        detail::activation_derivative(pre[i], post[i + 1], m.activations[i]));
    if (static_cast<int>(i) >= m.frozen_prefix) {
      g.layers[i].w = local * post[i].transpose();
      g.layers[i].b = local.rowwise().sum();
    } else {
      g.layers[i].w = Matrix::Zero(m.layers[i].w.rows(), m.layers[i].w.cols());
      g.layers[i].b = Vector::Zero(m.layers[i].b.size());
    }
    if (i == 0) break;
    upstream = m.layers[i].w.transpose() * local;
  }
  return g;
}

/// Seeded mini-batch gradient descent on MSE through all non-frozen layers.
inline Mlp mlp_train(Mlp m, const Matrix& x, const Matrix& y, const SgdConfig& cfg) {
  m.validate();
  cfg.validate();
  require(x.allFinite() && y.allFinite(), "mlp_train: non-finite data");
  const Index n = x.cols();

  const double initial_loss = mlp_mse_loss(m, x, y);
  const double guard = 10.0 * std::max(initial_loss, 1e-12);

  auto rng = make_rng(derive_seed(cfg.seed, "mlp_train"));
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) detail::seeded_shuffle_indices(order, rng);
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index count = std::min(cfg.batch_size, n - start);
      Matrix xb(x.rows(), count);
      Matrix yb(count, y.cols());
      for (Index i = 0; i < count; ++i) {
        xb.col(i) = x.col(order[start + i]);
        yb.row(i) = y.row(order[start + i]);
      }
      const MlpGradients g = mlp_mse_gradients(m, xb, yb);
      for (std::size_t i = 0; i < m.layers.size(); ++i) {
        if (static_cast<int>(i) < m.frozen_prefix) continue;
        m.layers[i].w -= cfg.learning_rate * g.layers[i].w;
        m.layers[i].b -= cfg.learning_rate * g.layers[i].b;
      }
      m.head.set_weights(m.head.weights() - cfg.learning_rate * g.head);
    }
    if (mlp_mse_loss(m, x, y) > guard) {
      throw DivergenceError("mlp_train: loss diverged; lower the learning rate");
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Leverage-score column selection
// ---------------------------------------------------------------------------

struct ColumnSelectResult {
  std::vector<Index> indices;  // multiset of size c
  Vector probabilities;        // leverage scores, sums to 1
};

/// p_i = (1/k) ||(V_k)_{:,i}||^2 from the top-k right singular vectors; c
/// columns drawn i.i.d. from multinomial(p).
inline ColumnSelectResult column_select(const Matrix& x, Index k, Index c, std::uint64_t seed) {
  require(c >= 1 && c < x.cols(), "column_select: c must satisfy 1 <= c < N");
  const Matrix vk = truncated_svd(x, k);  // validates k
  ColumnSelectResult out;
  out.probabilities = vk.colwise().squaredNorm() / static_cast<double>(k);

  std::vector<double> cumulative(static_cast<std::size_t>(x.cols()));
  double acc = 0.0;
  for (Index i = 0; i < x.cols(); ++i) {
    acc += out.probabilities(i);
    cumulative[static_cast<std::size_t>(i)] = acc;
  }
  auto rng = make_rng(derive_seed(seed, "column_select"));
  out.indices.reserve(c);
  for (Index draw = 0; draw < c; ++draw) {
    const double u = uniform_unit(rng) * acc;
    const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
    out.indices.push_back(static_cast<Index>(it - cumulative.begin()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dynamic optimal labels and the alternating unlearning loop
// ---------------------------------------------------------------------------

/// Label rule for drifting features: the static rule plus the correction
/// (Z_u^T w_p - y_u) that compensates broken interpolation,
///   y_new = Z_u^T (P_hat (w_p - w_init) + w_init) - y_u + Z_u^T w_p.
inline RelabelResult muso_labels_dynamic(const Matrix& z_u_t, const ProjectorOperator& proj_hat,
                                         const Matrix& w_p, const Matrix& w_init,
                                         const Matrix& y_u) {
  require(z_u_t.rows() == proj_hat.dim(), "muso_labels_dynamic: feature dimension mismatch");
  require(y_u.rows() == z_u_t.cols() && y_u.cols() == w_p.cols(),
          "muso_labels_dynamic: target shape mismatch");
  RelabelResult out;
  out.method = RelabelMethod::muso;
  out.targets = z_u_t.transpose() * (proj_hat.apply(w_p - w_init) + w_init) - y_u +
                z_u_t.transpose() * w_p;
  return out;
}

enum class SubsetSelector { random, column_select };

struct MusoConfig {
  double sample_ratio = 0.2;  // R
  SubsetSelector selector = SubsetSelector::random;
  Index sample_rank = 0;      // ColumnSelect k; 0 -> min(d, N_r, 32)
  double lambda = 1e-6;
  double unlearn_lr = 1e-3;   // typically a few percent of the pretraining rate
  int max_outer_iters = 10;
  int inner_epochs = 1;
  Index batch_size = 32;
  double label_tolerance = 1e-4;  // mean absolute label change between iterations
  std::uint64_t seed = 0;
  bool closed_form_head = false;  // valid only when every feature layer is frozen

  void validate() const {
    require(sample_ratio > 0.0 && sample_ratio <= 1.0, "MusoConfig: R must be in (0,1]");
    require(lambda > 0.0, "MusoConfig: lambda must be positive");
    require(unlearn_lr > 0.0, "MusoConfig: unlearn learning rate must be positive");
    require(max_outer_iters >= 0, "MusoConfig: iterations must be nonnegative");
    require(inner_epochs >= 1, "MusoConfig: inner epochs must be positive");
    require(batch_size >= 1, "MusoConfig: batch size must be positive");
    require(label_tolerance >= 0.0, "MusoConfig: tolerance must be nonnegative");
  }
};

/// Alternating relabel/fine-tune loop: per iteration, subsample the retain
/// set (random or leverage-score), rebuild features through the current
/// prefix, approximate the retain projector via the Woodbury route, set the
/// dynamic labels, and descend on retain + relabeled forget data. Stops when
/// the labels move less than the tolerance or the iteration cap is reached.
inline Mlp muso_unlearn(const Mlp& pretrained, const Mlp& initial, const Matrix& x_r,
                        const Matrix& y_r, const Matrix& x_u, const Matrix& y_u,
                        const MusoConfig& cfg) {
  pretrained.validate();
  initial.validate();
  cfg.validate();
  require(pretrained.layers.size() == initial.layers.size(),
          "muso_unlearn: architecture mismatch");
  for (std::size_t i = 0; i < pretrained.layers.size(); ++i)
    require(pretrained.layers[i].w.rows() == initial.layers[i].w.rows() &&
                pretrained.layers[i].w.cols() == initial.layers[i].w.cols(),
            "muso_unlearn: architecture mismatch");
  if (cfg.closed_form_head)
    require(pretrained.frozen_prefix == static_cast<int>(pretrained.layers.size()),
            "muso_unlearn: closed-form head update requires all feature layers frozen");

  const Matrix w_p = pretrained.head.weights();
  const Matrix w_init = initial.head.weights();
  const Index n_r = x_r.cols();
  const Index n_sub = std::min<Index>(
      n_r, static_cast<Index>(cfg.sample_ratio * static_cast<double>(n_r)));
  require(n_sub >= 1, "muso_unlearn: empty retain subsample (R too small)");

  Matrix x_a(x_r.rows(), x_r.cols() + x_u.cols());
  x_a << x_r, x_u;

  Mlp m = pretrained;
  Matrix prev_labels;
  for (int t = 0; t < cfg.max_outer_iters; ++t) {
    // Subsample the retain inputs, redrawn every iteration.
    std::vector<Index> subset;
    if (cfg.selector == SubsetSelector::random) {
      std::vector<Index> all(n_r);
      std::iota(all.begin(), all.end(), Index{0});
      auto rng = make_rng(derive_seed(cfg.seed, "muso/subsample/" + std::to_string(t)));
      detail::seeded_shuffle_indices(all, rng);
      subset.assign(all.begin(), all.begin() + n_sub);
    } else {
      const Index k = cfg.sample_rank > 0
                          ? cfg.sample_rank
                          : std::min<Index>({x_r.rows(), n_r, Index{32}});
      subset = column_select(x_r, k, std::min(n_sub, n_r - 1),
                             derive_seed(cfg.seed, "muso/colselect/" + std::to_string(t)))
                   .indices;
    }
    const Matrix x_rs = gather_columns(x_r, subset);

    const Matrix z_u_t = m.features(x_u);
    const Matrix z_rs_t = m.features(x_rs);
    const ProjectorOperator proj = projector_woodbury(z_rs_t, cfg.lambda);
    const Matrix labels = muso_labels_dynamic(z_u_t, proj, w_p, w_init, y_u).targets;

    if (cfg.closed_form_head) {
      const Matrix z_r_t = m.features(x_r);
      Matrix z_a(z_r_t.rows(), z_r_t.cols() + z_u_t.cols());
      z_a << z_r_t, z_u_t;
      Matrix y_a(y_r.rows() + labels.rows(), y_r.cols());
      y_a << y_r, labels;
      m.head.set_weights(minnorm_fit(z_a, y_a, m.head.weights(), cfg.lambda));
    } else {
      Matrix y_a(y_r.rows() + labels.rows(), y_r.cols());
      y_a << y_r, labels;
      SgdConfig inner;
      inner.learning_rate = cfg.unlearn_lr;
      inner.epochs = cfg.inner_epochs;
      inner.batch_size = cfg.batch_size;
      inner.seed = derive_seed(cfg.seed, "muso/finetune/" + std::to_string(t));
      m = mlp_train(std::move(m), x_a, y_a, inner);
    }

    if (prev_labels.size() > 0) {
      const double change = (labels - prev_labels).cwiseAbs().mean();
      if (change < cfg.label_tolerance) break;
    }
    prev_labels = labels;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Serialization: JSON manifest + flat little-endian f64 blob
// ---------------------------------------------------------------------------

inline void save_mlp(const Mlp& m, const std::string& manifest_path,
                     const std::string& blob_path) {
  nlohmann::json manifest;
  manifest["frozen_prefix"] = m.frozen_prefix;
  manifest["layers"] = nlohmann::json::array();
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    manifest["layers"].push_back({{"rows", m.layers[i].w.rows()},
                                  {"cols", m.layers[i].w.cols()},
                                  {"activation", activation_name(m.activations[i])}});
  }
  manifest["head"] = {{"rows", m.head.weights().rows()}, {"cols", m.head.weights().cols()}};
  std::ofstream mf(manifest_path);
  if (!mf) throw std::runtime_error("cannot write manifest: " + manifest_path);
  mf << manifest.dump(2) << "\n";

  std::ofstream out(blob_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write blob: " + blob_path);
  const auto write_matrix = [&out](const Matrix& w) {
    for (Index j = 0; j < w.cols(); ++j)
      for (Index i = 0; i < w.rows(); ++i) {
        const double v = w(i, j);
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        detail::write_u64_le(out, bits);
      }
  };
  for (const MlpLayer& layer : m.layers) {
    write_matrix(layer.w);
    write_matrix(layer.b);
  }
  write_matrix(m.head.init());
  write_matrix(m.head.weights());
}

inline Mlp load_mlp(const std::string& manifest_path, const std::string& blob_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw std::runtime_error("cannot open manifest: " + manifest_path);
  nlohmann::json manifest;
  mf >> manifest;

  std::ifstream in(blob_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open blob: " + blob_path);
  const auto read_matrix = [&in, &blob_path](Index rows, Index cols) {
    Matrix w(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) {
        const std::uint64_t bits = detail::read_u64_le(in, blob_path);
        double v;
        std::memcpy(&v, &bits, 8);
        w(i, j) = v;
      }
    return w;
  };

  Mlp m;
  m.frozen_prefix = manifest.at("frozen_prefix").get<int>();
  for (const auto& spec : manifest.at("layers")) {
    MlpLayer layer;
    const auto rows = spec.at("rows").get<Index>();
    const auto cols = spec.at("cols").get<Index>();
    layer.w = read_matrix(rows, cols);
    layer.b = read_matrix(rows, 1);
    m.layers.push_back(std::move(layer));
    m.activations.push_back(activation_from_name(spec.at("activation").get<std::string>()));
  }
  const auto head_rows = manifest.at("head").at("rows").get<Index>();
  const auto head_cols = manifest.at("head").at("cols").get<Index>();
  m.head = LinearHead(read_matrix(head_rows, head_cols));
  m.head.set_weights(read_matrix(head_rows, head_cols));
  m.validate();
  return m;
}

}  // namespace muso
