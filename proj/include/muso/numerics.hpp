#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "muso/common.hpp"

namespace muso {

// ---------------------------------------------------------------------------
// SPD solves
//
// Every Gram inversion in the library funnels through spd_factor/spd_solve.
// Cholesky failure (or a pivot ratio below sqrt(n*eps), which LLT can survive
// by rounding luck on exactly-singular input) is the singularity signal.
// ---------------------------------------------------------------------------

class SpdFactor {
 public:
  SpdFactor(const Matrix& a, const std::string& what) : llt_(a) {
    require(a.rows() == a.cols(), "spd_factor: matrix must be square");
    if (llt_.info() != Eigen::Success) throw SingularMatrixError(what);
    const Vector d = llt_.matrixLLT().diagonal();
    const double dmax = d.maxCoeff();
    const double dmin = d.minCoeff();
    const double eps = std::numeric_limits<double>::epsilon();
    if (!(dmin > std::sqrt(static_cast<double>(a.rows()) * eps) * dmax)) {
      throw SingularMatrixError(what);
    }
  }

  Matrix solve(const Matrix& b) const { return llt_.solve(b); }

  Matrix inverse() const {
    return llt_.solve(Matrix::Identity(llt_.rows(), llt_.rows()));
  }

 private:
  Eigen::LLT<Matrix> llt_;
};

inline Matrix spd_solve(const Matrix& a, const Matrix& b, const std::string& what) {
  return SpdFactor(a, what).solve(b);
}

// ---------------------------------------------------------------------------
// Gram blocks and Schur-complement block inversion
// ---------------------------------------------------------------------------

/// Blocks of the joint Gram matrix of retain and forget features.
struct GramBlocks {
  Matrix k_rr;  // N_r x N_r
  Matrix k_ru;  // N_r x N_u
  Matrix k_ur;  // N_u x N_r, transpose of k_ru by construction
  Matrix k_uu;  // N_u x N_u

  Index n_r() const { return k_rr.rows(); }
  Index n_u() const { return k_uu.rows(); }
};

inline GramBlocks gram_blocks(const Matrix& z_r, const Matrix& z_u) {
  require(z_r.rows() == z_u.rows(), "gram_blocks: feature dimensions differ");
  GramBlocks g;
  g.k_rr = symmetrized(z_r.transpose() * z_r);
  g.k_ru = z_r.transpose() * z_u;
  g.k_ur = g.k_ru.transpose();
  g.k_uu = symmetrized(z_u.transpose() * z_u);
  return g;
}

/// Block decomposition of (K_aa + lambda I)^{-1} driven by the inverse Schur
/// complement M = (K_uu - K_ur (K_rr + lambda I)^{-1} K_ru + lambda I)^{-1}.
struct SchurInverse {
  Matrix top_left;      // N_r x N_r
  Matrix top_right;     // N_r x N_u
  Matrix bottom_left;   // N_u x N_r
  Matrix bottom_right;  // N_u x N_u, equals m
  Matrix m;

  Matrix assemble() const {
    const Index nr = top_left.rows();
    const Index nu = bottom_right.rows();
    Matrix full(nr + nu, nr + nu);
    full.topLeftCorner(nr, nr) = top_left;
    full.topRightCorner(nr, nu) = top_right;
    full.bottomLeftCorner(nu, nr) = bottom_left;
    full.bottomRightCorner(nu, nu) = bottom_right;
    return full;
  }
};

inline SchurInverse schur_block_inverse(const GramBlocks& g, double lambda = 0.0) {
  require(lambda >= 0.0, "schur_block_inverse: lambda must be nonnegative");
  const Index nr = g.n_r();
  const Index nu = g.n_u();

  Matrix k_rr = g.k_rr;
  k_rr.diagonal().array() += lambda;
  SpdFactor rr(k_rr, "retain Gram K_rr + lambda*I");

  const Matrix t = rr.solve(g.k_ru);  // (K_rr + lambda I)^{-1} K_ru
  Matrix schur = g.k_uu - g.k_ur * t;
  schur.diagonal().array() += lambda;
  SpdFactor sc(symmetrized(schur), "Schur complement K_uu - K_ur K_rr^{-1} K_ru");

  SchurInverse out;
  out.m = symmetrized(sc.inverse());
  out.bottom_right = out.m;
  out.top_right = -t * out.m;
  out.bottom_left = out.top_right.transpose();
  out.top_left = symmetrized(rr.inverse() + t * out.m * t.transpose());
  return out;
}

// ---------------------------------------------------------------------------
// Orthogonal projectors onto col(Z_s), stored factored as basis * inner * basis^T.
// The D x D operator is never materialized.
// ---------------------------------------------------------------------------

enum class ProjectorMode { exact, woodbury };

class ProjectorOperator {
 public:
  ProjectorOperator(Matrix basis, Matrix inner, double lambda, ProjectorMode mode)
      : basis_(std::move(basis)), inner_(std::move(inner)), lambda_(lambda), mode_(mode) {
    require(inner_.rows() == inner_.cols() && inner_.rows() == basis_.cols(),
            "ProjectorOperator: inner matrix must be N_s x N_s");
  }

  /// Applies the operator columnwise: v -> Z_s * inner * Z_s^T * v.
  Matrix apply(const Matrix& v) const {
    require(v.rows() == basis_.rows(), "ProjectorOperator::apply: dimension mismatch");
    return basis_ * (inner_ * (basis_.transpose() * v));
  }

  Index dim() const { return basis_.rows(); }
  Index basis_size() const { return basis_.cols(); }
  const Matrix& basis() const { return basis_; }
  const Matrix& inner() const { return inner_; }
  double lambda() const { return lambda_; }
  ProjectorMode mode() const { return mode_; }

 private:
  Matrix basis_;
  Matrix inner_;
  double lambda_;
  ProjectorMode mode_;
};

/// v -> Z_s (Z_s^T Z_s + lambda I)^{-1} Z_s^T v. Inverts an N_s x N_s Gram.
inline ProjectorOperator projector_exact(const Matrix& z_s, double lambda = 0.0) {
  require(z_s.rows() >= 1 && z_s.cols() >= 1, "projector_exact: empty basis");
  require(lambda >= 0.0, "projector_exact: lambda must be nonnegative");
  Matrix gram = symmetrized(z_s.transpose() * z_s);
  gram.diagonal().array() += lambda;
  Matrix inner = symmetrized(SpdFactor(gram, "projector Gram Z_s^T Z_s + lambda*I").inverse());
  return ProjectorOperator(z_s, std::move(inner), lambda, ProjectorMode::exact);
}

namespace detail {

/// Kahan-compensated accumulator with FMA-captured product rounding.
struct CompensatedSum {
  double sum = 0.0;
  double comp = 0.0;

  void add(double x) {
    const double t = sum + x;
    comp += (std::abs(sum) >= std::abs(x)) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  void add_product(double a, double b) {
    const double prod = a * b;
    add(prod);
    comp += std::fma(a, b, -prod);
  }
  double value() const { return sum + comp; }
};

/// (I - Z^T (S_hi + S_lo)) / lambda with compensated dot products. S is carried
/// as a high/low pair because a plain double S rounds to eps * ||S||, and the
/// division by a small lambda amplifies exactly that rounding.
inline Matrix scaled_identity_residual(const Matrix& z, const Matrix& s_hi,
                                       const Matrix& s_lo, double lambda) {
  const Index n = z.cols();
  const Index d = z.rows();
  Matrix inner(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j <= i; ++j) {
      CompensatedSum acc;  // accumulates Z^T S - I
      if (i == j) acc.add(-1.0);
      for (Index k = 0; k < d; ++k) {
        acc.add_product(z(k, i), s_hi(k, j));
        acc.add_product(z(k, i), s_lo(k, j));
      }
      const double value = -acc.value() / lambda;
      inner(i, j) = value;
      inner(j, i) = value;
    }
  }
  return inner;
}

/// lambda*I + Z Z^T as a hi/lo matrix pair. The lo part holds the rounding of
/// the Gram product, which would otherwise cost ~eps*||C||/lambda downstream.
inline std::pair<Matrix, Matrix> capacitance_pair(const Matrix& z, double lambda) {
  const Index d = z.rows();
  Matrix hi(d, d);
  Matrix lo(d, d);
  for (Index k = 0; k < d; ++k) {
    for (Index l = 0; l <= k; ++l) {
      CompensatedSum acc;
      if (k == l) acc.add(lambda);
      for (Index i = 0; i < z.cols(); ++i) acc.add_product(z(k, i), z(l, i));
      const double h = acc.sum + acc.comp;
      const double rest = acc.comp - (h - acc.sum);
      hi(k, l) = hi(l, k) = h;
      lo(k, l) = lo(l, k) = rest;
    }
  }
  return {std::move(hi), std::move(lo)};
}

/// B - (C_hi + C_lo) * S with compensated entries, for one refinement step.
inline Matrix refinement_residual(const Matrix& b, const Matrix& c_hi, const Matrix& c_lo,
                                  const Matrix& s) {
  Matrix r(b.rows(), b.cols());
  for (Index j = 0; j < b.cols(); ++j) {
    for (Index k = 0; k < b.rows(); ++k) {
      CompensatedSum acc;
      acc.add(b(k, j));
      for (Index i = 0; i < c_hi.cols(); ++i) {
        acc.add_product(-c_hi(k, i), s(i, j));
        acc.add_product(-c_lo(k, i), s(i, j));
      }
      r(k, j) = acc.value();
    }
  }
  return r;
}

}  // namespace detail

/// Same operator at matching lambda, but routed through the Woodbury identity so
/// only a D x D system is factored: inner = (1/lambda)(I - Z_s^T (lambda I_D + Z_s Z_s^T)^{-1} Z_s).
/// The capacitance solve gets one compensated refinement step; without it the
/// lambda-cluster in the capacitance spectrum leaks ~eps/lambda into the inner factor.
inline ProjectorOperator projector_woodbury(const Matrix& z_s, double lambda) {
  require(z_s.rows() >= 1 && z_s.cols() >= 1, "projector_woodbury: empty basis");
  require(lambda > 0.0, "projector_woodbury: lambda must be positive");
  const auto [cap_hi, cap_lo] = detail::capacitance_pair(z_s, lambda);
  const SpdFactor factor(cap_hi, "Woodbury capacitance lambda*I_D + Z_s Z_s^T");
  const Matrix solved = factor.solve(z_s);
  const Matrix correction =
      factor.solve(detail::refinement_residual(z_s, cap_hi, cap_lo, solved));
  Matrix inner = detail::scaled_identity_residual(z_s, solved, correction, lambda);
  return ProjectorOperator(z_s, std::move(inner), lambda, ProjectorMode::woodbury);
}

// ---------------------------------------------------------------------------
// Truncated SVD
// ---------------------------------------------------------------------------

/// Top-k right singular vectors of X (d x N), returned as rows of a k x N matrix.
/// Signs are fixed deterministically: first non-negligible entry of each row positive.
inline Matrix truncated_svd(const Matrix& x, Index k) {
  require(k >= 1 && k <= std::min(x.rows(), x.cols()),
          "truncated_svd: k must be in [1, min(d, N)]");
  Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeThinV);
  Matrix vk = svd.matrixV().leftCols(k).transpose();  // k x N
  for (Index i = 0; i < vk.rows(); ++i) {
    const double scale = vk.row(i).cwiseAbs().maxCoeff();
    for (Index j = 0; j < vk.cols(); ++j) {
      if (std::abs(vk(i, j)) > 1e-12 * scale) {
        if (vk(i, j) < 0.0) vk.row(i) = -vk.row(i);
        break;
      }
    }
  }
  return vk;
}

}  // namespace muso
