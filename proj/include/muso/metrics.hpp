#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include <json.hpp>

#include "muso/rf_model.hpp"

namespace muso {

/// Evaluation bundle for one (model, scenario) pair. Percentages in [0,100];
/// delta_w only on the linear path, avg_gap only when a reference was supplied.
struct MetricsReport {
  double ra = 0.0;
  double ta = 0.0;
  double fa = 0.0;
  double mia = 0.0;
  std::optional<double> delta_w;
  std::optional<double> avg_gap;
  double wall_seconds = 0.0;
};

inline double accuracy(const Matrix& outputs, const std::vector<int>& labels,
                       DecisionScheme scheme) {
  require(!labels.empty(), "accuracy: empty evaluation set");
  require(outputs.rows() == static_cast<Index>(labels.size()), "accuracy: size mismatch");
  const std::vector<int> decided = decide(outputs, scheme);
  Index correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += decided[i] == labels[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

template <typename Model>
double accuracy(const Model& model, const Matrix& x, const std::vector<int>& labels,
                DecisionScheme scheme) {
  return accuracy(model.outputs(x), labels, scheme);
}

/// (1/D) ||w - w_r||_F^2, the parameter-space distance to the gold standard.
inline double delta_w(const Matrix& w, const Matrix& w_r, Index feature_dim) {
  require(w.rows() == w_r.rows() && w.cols() == w_r.cols(), "delta_w: shape mismatch");
  require(feature_dim >= 1, "delta_w: feature dimension must be positive");
  return (w - w_r).squaredNorm() / static_cast<double>(feature_dim);
}

/// Per-sample squared-error losses, one row per sample.
inline Vector per_sample_mse(const Matrix& outputs, const Matrix& targets) {
  require(outputs.rows() == targets.rows() && outputs.cols() == targets.cols(),
          "per_sample_mse: shape mismatch");
  return (outputs - targets).rowwise().squaredNorm();
}

/// Loss-threshold membership inference. The threshold is the observed loss
/// value maximizing balanced accuracy on (retain = member, test = non-member);
/// a sample is called a member when its loss <= threshold. Depending only on
/// loss order makes the attack invariant to monotone loss rescaling.
inline double mia_threshold(const Vector& retain_losses, const Vector& test_losses) {
  require(retain_losses.size() >= 1 && test_losses.size() >= 1,
          "mia_threshold: empty calibration set");
  std::vector<double> retain(retain_losses.data(), retain_losses.data() + retain_losses.size());
  std::vector<double> test(test_losses.data(), test_losses.data() + test_losses.size());
  std::sort(retain.begin(), retain.end());
  std::sort(test.begin(), test.end());

  std::vector<double> candidates;
  candidates.reserve(retain.size() + test.size());
  candidates.insert(candidates.end(), retain.begin(), retain.end());
  candidates.insert(candidates.end(), test.begin(), test.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  const auto frac_le = [](const std::vector<double>& sorted, double t) {
    const auto it = std::upper_bound(sorted.begin(), sorted.end(), t);
    return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
  };

  double best_tau = candidates.front();
  double best_score = -1.0;
  for (double tau : candidates) {
    const double score = 0.5 * (frac_le(retain, tau) + 1.0 - frac_le(test, tau));
    if (score > best_score) {
      best_score = score;
      best_tau = tau;
    }
  }
  return best_tau;
}

inline double mia_member_rate(const Vector& forget_losses, const Vector& test_losses,
                              const Vector& retain_losses) {
  require(forget_losses.size() >= 1, "mia_member_rate: empty forget set");
  const double tau = mia_threshold(retain_losses, test_losses);
  Index members = 0;
  for (Index i = 0; i < forget_losses.size(); ++i) members += forget_losses(i) <= tau;
  return 100.0 * static_cast<double>(members) / static_cast<double>(forget_losses.size());
}

/// Mean absolute deviation from the reference over RA, TA, FA, MIA.
inline double avg_gap(const MetricsReport& report, const MetricsReport& reference) {
  const double values[4] = {report.ra - reference.ra, report.ta - reference.ta,
                            report.fa - reference.fa, report.mia - reference.mia};
  double sum = 0.0;
  for (double v : values) {
    require(std::isfinite(v), "avg_gap: reports must be complete");
    sum += std::abs(v);
  }
  return sum / 4.0;
}

// ---------------------------------------------------------------------------
// JSON form (one object per scenario x method)
// ---------------------------------------------------------------------------

inline nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["ra"] = r.ra;
  j["ta"] = r.ta;
  j["fa"] = r.fa;
  j["mia"] = r.mia;
  if (r.delta_w) j["delta_w"] = *r.delta_w;
  if (r.avg_gap) j["avg_gap"] = *r.avg_gap;
  j["wall_seconds"] = r.wall_seconds;
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.ra = j.at("ra").get<double>();
  r.ta = j.at("ta").get<double>();
  r.fa = j.at("fa").get<double>();
  r.mia = j.at("mia").get<double>();
  if (j.contains("delta_w")) r.delta_w = j.at("delta_w").get<double>();
  if (j.contains("avg_gap")) r.avg_gap = j.at("avg_gap").get<double>();
  if (j.contains("wall_seconds")) r.wall_seconds = j.at("wall_seconds").get<double>();
  return r;
}

}  // namespace muso
