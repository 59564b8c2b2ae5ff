#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "muso/data.hpp"
#include "muso/numerics.hpp"
#include "muso/rf_model.hpp"

namespace muso {

/// Thrown by gap_decomposition when the pretrained head does not interpolate
/// its training data; the decomposition is only valid on that manifold.
class InterpolationError : public std::runtime_error {
 public:
  explicit InterpolationError(const std::string& what) : std::runtime_error(what) {}
};

enum class RelabelMethod { muso, amnesiac, badteacher, mixed };

inline const char* relabel_method_name(RelabelMethod m) {
  switch (m) {
    case RelabelMethod::muso: return "muso";
    case RelabelMethod::amnesiac: return "amnesiac";
    case RelabelMethod::badteacher: return "badteacher";
    case RelabelMethod::mixed: return "mixed";
  }
  return "?";
}

struct RelabelResult {
  Matrix targets;  // N_u x C replacement targets for the forget set
  RelabelMethod method = RelabelMethod::muso;
  // Provenance.
  std::uint64_t seed = 0;
  double mixing_c = 0.0;
  std::vector<Index> sub_indices;
  std::vector<int> resampled_labels;

  void validate() const {
    require(targets.allFinite(), "RelabelResult: non-finite targets");
  }
};

// ---------------------------------------------------------------------------
// Closed-form fits (retrain is the gold standard, finetune the unlearning step)
// ---------------------------------------------------------------------------

/// Gold standard: fit on the retain set from the initial weights.
inline Matrix retrain(const Matrix& z_r, const Matrix& y_r, const Matrix& w_init,
                      double lambda = 0.0) {
  return minnorm_fit(z_r, y_r, w_init, lambda);
}

/// Fine-tune from the pretrained weights on retain data plus relabeled forget data.
inline Matrix finetune(const Matrix& z_r, const Matrix& y_r, const Matrix& z_u,
                       const Matrix& y_u_new, const Matrix& w_p, double lambda = 0.0) {
  require(z_r.rows() == z_u.rows(), "finetune: feature dimensions differ");
  require(y_r.cols() == y_u_new.cols(), "finetune: target widths differ");
  Matrix z_a(z_r.rows(), z_r.cols() + z_u.cols());
  z_a << z_r, z_u;
  Matrix y_a(y_r.rows() + y_u_new.rows(), y_r.cols());
  y_a << y_r, y_u_new;
  return minnorm_fit(z_a, y_a, w_p, lambda);
}

// ---------------------------------------------------------------------------
// Optimal relabeling
// ---------------------------------------------------------------------------

/// Forget-set targets that make fine-tuning land exactly on the retrained
/// model: y_u_new = Z_u^T (P_r (w_p - w_init) + w_init). Accepts any projector
/// (exact or Woodbury-subsampled), so the theory and practical paths share
/// this code.
inline RelabelResult muso_labels(const Matrix& z_u, const ProjectorOperator& proj_r,
                                 const Matrix& w_p, const Matrix& w_init) {
  require(z_u.rows() == proj_r.dim(), "muso_labels: feature dimension mismatch");
  require(w_p.rows() == z_u.rows() && w_init.rows() == z_u.rows(),
          "muso_labels: weight dimension mismatch");
  require(w_p.cols() == w_init.cols(), "muso_labels: weight widths differ");
  RelabelResult out;
  out.method = RelabelMethod::muso;
  out.targets = z_u.transpose() * (proj_r.apply(w_p - w_init) + w_init);
  return out;
}

// ---------------------------------------------------------------------------
// Gap to the gold standard
// ---------------------------------------------------------------------------

/// Factored form of the retrain/fine-tune gap:
///   w_r - w_u = C (b - y_u_new),  C = (I - P_r) Z_u M,
///   b = Z_u^T (P_r (w_p - w_init) + w_init),
/// together with the two bridge terms through w_p.
struct GapDecomposition {
  Matrix c_matrix;  // D x N_u
  Matrix b_vector;  // N_u x C
  Matrix term_rp;   // D x C, equals w_r - w_p
  Matrix term_pu;   // D x C, equals w_p - w_u
  Matrix y_u_new;   // relabels the decomposition was evaluated at

  Matrix predicted_gap() const { return c_matrix * (b_vector - y_u_new); }
  Matrix predicted_gap_for(const Matrix& other_labels) const {
    return c_matrix * (b_vector - other_labels);
  }
};

inline GapDecomposition gap_decomposition(const Matrix& z_r, const Matrix& z_u,
                                          const Matrix& y_r, const Matrix& y_u,
                                          const Matrix& y_u_new, const Matrix& w_p,
                                          const Matrix& w_init, double lambda = 0.0) {
  const double res_u = rel_error(z_u.transpose() * w_p, y_u);
  const double res_r = rel_error(z_r.transpose() * w_p, y_r);
  if (res_u > 1e-6 || res_r > 1e-6) {
    throw InterpolationError(
        "gap_decomposition: pretrained weights do not interpolate the training data "
        "(retain residual " + std::to_string(res_r) + ", forget residual " +
        std::to_string(res_u) + "); the decomposition is invalid off that manifold");
  }

  const ProjectorOperator proj = projector_exact(z_r, lambda);
  GapDecomposition out;
  out.b_vector = z_u.transpose() * (proj.apply(w_p - w_init) + w_init);
  out.y_u_new = y_u_new;

  const Matrix rejected = z_u - proj.apply(z_u);
  if (lambda == 0.0 && rejected.norm() <= 1e-10 * z_u.norm()) {
    // Forget features lie inside the retain span: w_r = w_p = w_u and the gap
    // vanishes identically, while the Schur complement itself is singular.
    out.c_matrix = Matrix::Zero(z_u.rows(), z_u.cols());
    out.term_rp = Matrix::Zero(w_p.rows(), w_p.cols());
    out.term_pu = Matrix::Zero(w_p.rows(), w_p.cols());
    return out;
  }

  const GramBlocks g = gram_blocks(z_r, z_u);
  const SchurInverse si = schur_block_inverse(g, lambda);
  out.c_matrix = rejected * si.m;

  Matrix k_rr = g.k_rr;
  k_rr.diagonal().array() += lambda;
  const Matrix bridge =
      g.k_ur * spd_solve(k_rr, y_r - z_r.transpose() * w_init, "retain Gram K_rr + lambda*I");
  out.term_rp = out.c_matrix * (bridge + z_u.transpose() * w_init - y_u);
  out.term_pu = out.c_matrix * (z_u.transpose() * w_p - y_u_new);
  return out;
}

// ---------------------------------------------------------------------------
// Baseline relabelers
// ---------------------------------------------------------------------------

/// Each forget label resampled uniformly over the other C-1 classes, then encoded.
inline RelabelResult amnesiac_labels(const std::vector<int>& labels_u, int num_classes,
                                     TargetEncoding encoding, std::uint64_t seed) {
  require(num_classes >= 2, "amnesiac_labels: needs at least 2 classes");
  auto rng = make_rng(derive_seed(seed, "amnesiac"));
  RelabelResult out;
  out.method = RelabelMethod::amnesiac;
  out.seed = seed;
  out.resampled_labels.reserve(labels_u.size());
  for (int original : labels_u) {
    const int offset =
        1 + static_cast<int>(uniform_unit(rng) * static_cast<double>(num_classes - 1));
    out.resampled_labels.push_back((original + std::min(offset, num_classes - 1)) % num_classes);
  }
  out.targets = encode_targets(out.resampled_labels, num_classes, encoding).y;
  return out;
}

struct RfTeacherConfig {
  Index feature_dim = 64;
  double sigma = 1.0;
  Activation activation = Activation::relu;
};

/// Targets taken from a freshly seeded random model of the same family:
/// independent random-feature map and head, forward-passed on the forget inputs.
inline RelabelResult badteacher_labels(const Matrix& x_u, std::uint64_t teacher_seed,
                                       const RfTeacherConfig& cfg, Index out_cols) {
  const RFMap teacher = sample_rf_map(x_u.rows(), cfg.feature_dim, cfg.sigma, cfg.activation,
                                      derive_seed(teacher_seed, "badteacher/map"));
  const Matrix head =
      sample_head_init(cfg.feature_dim, out_cols, derive_seed(teacher_seed, "badteacher/head"));
  RelabelResult out;
  out.method = RelabelMethod::badteacher;
  out.seed = teacher_seed;
  out.targets = predict(head, featurize(teacher, x_u));
  return out;
}

// ---------------------------------------------------------------------------
// Mixed features (forget features blended with retain features)
// ---------------------------------------------------------------------------

inline Matrix mixed_features(const Matrix& z_r_sub, const Matrix& z_u, double c) {
  require(z_r_sub.cols() == z_u.cols(),
          "mixed_features: Z_r_sub must have exactly N_u columns");
  require(z_r_sub.rows() == z_u.rows(), "mixed_features: feature dimensions differ");
  require(c > 0.0 && c < 1.0, "mixed_features: c must lie in (0,1)");
  return (1.0 - c) * z_r_sub + c * z_u;
}

// ---------------------------------------------------------------------------
// Audit CSV: index, original label, new target vector
// ---------------------------------------------------------------------------

inline void save_relabel_csv(const RelabelResult& result, const std::vector<int>& original_labels,
                             const std::string& path) {
  require(static_cast<Index>(original_labels.size()) == result.targets.rows(),
          "save_relabel_csv: label count mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write relabel CSV: " + path);
  out << "index,original_label";
  for (Index c = 0; c < result.targets.cols(); ++c) out << ",target" << c;
  out << "\n";
  out.precision(17);
  for (Index i = 0; i < result.targets.rows(); ++i) {
    out << i << ',' << original_labels[i];
    for (Index c = 0; c < result.targets.cols(); ++c) out << ',' << result.targets(i, c);
    out << "\n";
  }
}

}  // namespace muso
