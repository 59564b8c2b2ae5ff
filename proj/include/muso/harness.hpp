#pragma once

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "muso/data.hpp"
#include "muso/metrics.hpp"
#include "muso/unlearn_nn.hpp"

namespace muso {

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

struct DatasetSpec {
  std::string kind;  // "idx" | "synthetic"
  // idx
  std::string images, labels, test_images, test_labels;
  std::vector<int> keep_classes;
  std::optional<Index> per_class_cap;
  // synthetic
  Index d = 0;
  int classes = 0;
  Index per_class = 0;
  Index test_per_class = 0;
  double separation = 2.0;
};

struct ModelSpec {
  std::string kind;  // "rf" | "mlp"
  // rf
  Index feature_dim = 0;
  double sigma = 1.0;
  std::string activation = "relu";
  // mlp
  std::vector<Index> hidden_widths;
  int frozen_prefix = 0;
};

struct ScenarioConfig {
  std::string kind;  // "full-class" | "sub-class" | "random"
  int target = -1;
  double fraction = 0.0;
  Index subclass_forget_count = 0;
};

struct FitSpec {
  std::string mode = "closed-form";  // "closed-form" | "sgd"
  double lambda = 0.0;
  double lr = 0.01;
  int epochs = 100;
  Index batch = 32;
  bool early_stop_fa = false;  // SGD-mode baselines: stop once FA <= TA
};

struct MusoSpec {
  double sample_ratio = 0.2;
  std::string selector = "random";  // "random" | "column-select"
  Index sample_rank = 0;
  double lambda = 1e-6;
  double unlearn_lr = 0.0;  // 0 -> 5% of the pretraining rate
  int iterations = 10;
  int inner_epochs = 1;
  double label_tolerance = 1e-4;
  int freeze_prefix = 0;  // feature layers frozen during unlearning (all methods)
};

struct ExperimentConfig {
  DatasetSpec dataset;
  ModelSpec model;
  std::vector<ScenarioConfig> scenarios;
  std::vector<std::string> methods;
  FitSpec fit;
  MusoSpec muso;
  std::string encoding = "one-hot";  // "one-hot" | "pm-one"
  std::vector<std::uint64_t> seeds;
  std::string output_dir = "out";
};

// ---------------------------------------------------------------------------
// Parsing and validation (throws ConfigError naming the offending field)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
T get_field(const nlohmann::json& j, const std::string& path, const std::string& key) {
  if (!j.contains(key)) throw ConfigError(path + key, "missing required field");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(path + key, "wrong type");
  }
}

template <typename T>
T get_field_or(const nlohmann::json& j, const std::string& path, const std::string& key,
               T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(path + key, "wrong type");
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::get_field;
  using detail::get_field_or;
  ExperimentConfig cfg;

  if (!j.contains("dataset")) throw ConfigError("dataset", "missing required field");
  const auto& jd = j.at("dataset");
  cfg.dataset.kind = get_field<std::string>(jd, "dataset.", "kind");
  if (cfg.dataset.kind == "idx") {
    cfg.dataset.images = get_field<std::string>(jd, "dataset.", "images");
    cfg.dataset.labels = get_field<std::string>(jd, "dataset.", "labels");
    cfg.dataset.test_images = get_field<std::string>(jd, "dataset.", "test_images");
    cfg.dataset.test_labels = get_field<std::string>(jd, "dataset.", "test_labels");
    cfg.dataset.keep_classes =
        get_field_or<std::vector<int>>(jd, "dataset.", "keep_classes", {});
    if (jd.contains("per_class_cap"))
      cfg.dataset.per_class_cap = get_field<Index>(jd, "dataset.", "per_class_cap");
  } else if (cfg.dataset.kind == "synthetic") {
    cfg.dataset.d = get_field<Index>(jd, "dataset.", "d");
    cfg.dataset.classes = get_field<int>(jd, "dataset.", "classes");
    cfg.dataset.per_class = get_field<Index>(jd, "dataset.", "per_class");
    cfg.dataset.test_per_class =
        get_field_or<Index>(jd, "dataset.", "test_per_class", cfg.dataset.per_class);
    cfg.dataset.separation = get_field_or<double>(jd, "dataset.", "separation", 2.0);
    if (cfg.dataset.d < 1) throw ConfigError("dataset.d", "must be positive");
    if (cfg.dataset.classes < 2) throw ConfigError("dataset.classes", "need at least 2 classes");
    if (cfg.dataset.per_class < 1) throw ConfigError("dataset.per_class", "must be positive");
  } else {
    throw ConfigError("dataset.kind", "must be \"idx\" or \"synthetic\"");
  }

  if (!j.contains("model")) throw ConfigError("model", "missing required field");
  const auto& jm = j.at("model");
  cfg.model.kind = get_field<std::string>(jm, "model.", "kind");
  if (cfg.model.kind == "rf") {
    cfg.model.feature_dim = get_field<Index>(jm, "model.", "D");
    cfg.model.sigma = get_field<double>(jm, "model.", "sigma");
    cfg.model.activation = get_field_or<std::string>(jm, "model.", "activation", "relu");
    if (cfg.model.feature_dim < 1) throw ConfigError("model.D", "must be positive");
    if (cfg.model.sigma <= 0) throw ConfigError("model.sigma", "must be positive");
    activation_from_name(cfg.model.activation);  // validates
  } else if (cfg.model.kind == "mlp") {
    cfg.model.hidden_widths = get_field<std::vector<Index>>(jm, "model.", "hidden_widths");
    cfg.model.frozen_prefix = get_field_or<int>(jm, "model.", "frozen_prefix", 0);
    if (cfg.model.hidden_widths.empty())
      throw ConfigError("model.hidden_widths", "need at least one hidden layer");
  } else {
    throw ConfigError("model.kind", "must be \"rf\" or \"mlp\"");
  }

  if (!j.contains("scenarios") || !j.at("scenarios").is_array() || j.at("scenarios").empty())
    throw ConfigError("scenarios", "must be a nonempty array");
  for (std::size_t i = 0; i < j.at("scenarios").size(); ++i) {
    const std::string path = "scenarios[" + std::to_string(i) + "].";
    const auto& js = j.at("scenarios").at(i);
    ScenarioConfig sc;
    sc.kind = get_field<std::string>(js, path, "kind");
    if (sc.kind == "full-class") {
      sc.target = get_field<int>(js, path, "target");
    } else if (sc.kind == "sub-class") {
      sc.target = get_field<int>(js, path, "target");
      sc.subclass_forget_count = get_field_or<Index>(js, path, "forget_count", 0);
    } else if (sc.kind == "random") {
      sc.fraction = get_field<double>(js, path, "fraction");
      if (!(sc.fraction > 0.0 && sc.fraction < 1.0))
        throw ConfigError(path + "fraction", "must be in (0,1)");
    } else {
      throw ConfigError(path + "kind", "must be \"full-class\", \"sub-class\" or \"random\"");
    }
    cfg.scenarios.push_back(sc);
  }

  cfg.methods = get_field_or<std::vector<std::string>>(j, "", "methods", {"none"});
  if (cfg.methods.empty()) throw ConfigError("methods", "must be nonempty");
  for (std::size_t i = 0; i < cfg.methods.size(); ++i) {
    const std::string& m = cfg.methods[i];
    if (m != "muso" && m != "amnesiac" && m != "badteacher" && m != "none")
      throw ConfigError("methods[" + std::to_string(i) + "]",
                        "must be one of muso, amnesiac, badteacher, none");
  }

  if (j.contains("fit")) {
    const auto& jf = j.at("fit");
    cfg.fit.mode = get_field_or<std::string>(jf, "fit.", "mode", "closed-form");
    cfg.fit.lambda = get_field_or<double>(jf, "fit.", "lambda", 0.0);
    cfg.fit.lr = get_field_or<double>(jf, "fit.", "lr", 0.01);
    cfg.fit.epochs = get_field_or<int>(jf, "fit.", "epochs", 100);
    cfg.fit.batch = get_field_or<Index>(jf, "fit.", "batch", 32);
    cfg.fit.early_stop_fa = get_field_or<bool>(jf, "fit.", "early_stop_fa", false);
    if (cfg.fit.mode != "closed-form" && cfg.fit.mode != "sgd")
      throw ConfigError("fit.mode", "must be \"closed-form\" or \"sgd\"");
    if (cfg.fit.lambda < 0) throw ConfigError("fit.lambda", "must be nonnegative");
  }
  if (cfg.model.kind == "mlp" && cfg.fit.mode != "sgd")
    throw ConfigError("fit.mode", "mlp models require \"sgd\"");

  if (j.contains("muso")) {
    const auto& ju = j.at("muso");
    cfg.muso.sample_ratio = get_field_or<double>(ju, "muso.", "R", 0.2);
    cfg.muso.selector = get_field_or<std::string>(ju, "muso.", "selector", "random");
    cfg.muso.sample_rank = get_field_or<Index>(ju, "muso.", "sample_rank", 0);
    cfg.muso.lambda = get_field_or<double>(ju, "muso.", "lambda", 1e-6);
    cfg.muso.unlearn_lr = get_field_or<double>(ju, "muso.", "unlearn_lr", 0.0);
    cfg.muso.iterations = get_field_or<int>(ju, "muso.", "iterations", 10);
    cfg.muso.inner_epochs = get_field_or<int>(ju, "muso.", "inner_epochs", 1);
    cfg.muso.label_tolerance = get_field_or<double>(ju, "muso.", "label_tolerance", 1e-4);
    cfg.muso.freeze_prefix = get_field_or<int>(ju, "muso.", "freeze_prefix", 0);
    if (!(cfg.muso.sample_ratio > 0.0 && cfg.muso.sample_ratio <= 1.0))
      throw ConfigError("muso.R", "must be in (0,1]");
    if (cfg.muso.selector != "random" && cfg.muso.selector != "column-select")
      throw ConfigError("muso.selector", "must be \"random\" or \"column-select\"");
    if (cfg.muso.lambda <= 0) throw ConfigError("muso.lambda", "must be positive");
  }

  cfg.encoding = get_field_or<std::string>(j, "", "encoding", "one-hot");
  if (cfg.encoding != "one-hot" && cfg.encoding != "pm-one")
    throw ConfigError("encoding", "must be \"one-hot\" or \"pm-one\"");

  cfg.seeds = get_field_or<std::vector<std::uint64_t>>(j, "", "seeds", {});
  if (cfg.seeds.empty()) throw ConfigError("seeds", "must be nonempty");
  cfg.output_dir = get_field_or<std::string>(j, "", "output_dir", "out");
  if (const char* env = std::getenv("MUSO_OUTPUT_DIR")) cfg.output_dir = env;
  return cfg;
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

namespace detail {

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline std::string scenario_slug(const ExperimentConfig& cfg, std::size_t index) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "s%02zu", index);
  return std::string(buf) + "-" + cfg.scenarios[index].kind;
}

struct EvalSets {
  Matrix z_retain, z_forget, z_test;
  Matrix y_retain, y_forget, y_test;  // encoded targets
  std::vector<int> labels_retain, labels_forget, labels_test;
};

inline MetricsReport evaluate_linear(const Matrix& w, const EvalSets& s, DecisionScheme scheme) {
  MetricsReport r;
  r.ra = accuracy(predict(w, s.z_retain), s.labels_retain, scheme);
  r.ta = accuracy(predict(w, s.z_test), s.labels_test, scheme);
  r.fa = accuracy(predict(w, s.z_forget), s.labels_forget, scheme);
  r.mia = mia_member_rate(per_sample_mse(predict(w, s.z_forget), s.y_forget),
                          per_sample_mse(predict(w, s.z_test), s.y_test),
                          per_sample_mse(predict(w, s.z_retain), s.y_retain));
  return r;
}

struct NnEvalSets {
  Matrix x_retain, x_forget, x_test;
  Matrix y_retain, y_forget, y_test;
  std::vector<int> labels_retain, labels_forget, labels_test;
};

inline MetricsReport evaluate_mlp(const Mlp& m, const NnEvalSets& s, DecisionScheme scheme) {
  MetricsReport r;
  r.ra = accuracy(m.outputs(s.x_retain), s.labels_retain, scheme);
  r.ta = accuracy(m.outputs(s.x_test), s.labels_test, scheme);
  r.fa = accuracy(m.outputs(s.x_forget), s.labels_forget, scheme);
  r.mia = mia_member_rate(per_sample_mse(m.outputs(s.x_forget), s.y_forget),
                          per_sample_mse(m.outputs(s.x_test), s.y_test),
                          per_sample_mse(m.outputs(s.x_retain), s.y_retain));
  return r;
}

/// Gradient-descent fine-tune for the SGD-mode baselines, with the optional
/// FA <= TA early stop (the retrain-free proxy).
template <typename EvalFa>
Mlp nn_finetune_baseline(Mlp m, const Matrix& x_a, const Matrix& y_a, const MusoConfig& cfg,
                         bool early_stop, EvalFa&& eval_fa_ta) {
  for (int t = 0; t < cfg.max_outer_iters; ++t) {
    SgdConfig inner;
    inner.learning_rate = cfg.unlearn_lr;
    inner.epochs = cfg.inner_epochs;
    inner.batch_size = cfg.batch_size;
    inner.seed = derive_seed(cfg.seed, "baseline/finetune/" + std::to_string(t));
    m = mlp_train(std::move(m), x_a, y_a, inner);
    if (early_stop) {
      const auto [fa, ta] = eval_fa_ta(m);
      if (fa <= ta) break;
    }
  }
  return m;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double std_of(const std::vector<double>& v) {
  if (v.size() <= 1) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline std::string format_pm(const std::vector<double>& values, int decimals) {
  char buf[80];
  std::snprintf(buf, sizeof(buf), "%.*f\xc2\xb1%.*f", decimals, mean_of(values), decimals,
                std_of(values));
  return std::string(buf);
}

}  // namespace detail

/// Re-renders summary.csv from the report_*.json files in a directory.
/// Returns the CSV text. Used both by `run` (after writing reports) and by
/// the `report` subcommand, so the two are identical by construction.
inline std::string render_summary(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("report_", 0) == 0 && name.size() > 5 &&
        name.substr(name.size() - 5) == ".json")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  // (scenario, model) -> metric -> values across seeds
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::vector<double>>> rows;
  for (const auto& file : files) {
    std::ifstream in(file);
    nlohmann::json j;
    in >> j;
    const std::string scenario = j.at("scenario").get<std::string>();
    for (const auto& [model, rj] : j.at("models").items()) {
      auto& cell = rows[{scenario, model}];
      cell["ra"].push_back(rj.at("ra").get<double>());
      cell["ta"].push_back(rj.at("ta").get<double>());
      cell["fa"].push_back(rj.at("fa").get<double>());
      cell["mia"].push_back(rj.at("mia").get<double>());
      if (rj.contains("delta_w")) cell["delta_w"].push_back(rj.at("delta_w").get<double>());
      if (rj.contains("avg_gap")) cell["avg_gap"].push_back(rj.at("avg_gap").get<double>());
    }
  }

  std::string csv = "scenario,method,RA,TA,FA,MIA,delta_w,avg_gap\n";
  for (auto& [key, cell] : rows) {
    csv += key.first + "," + key.second;
    csv += "," + detail::format_pm(cell["ra"], 2);
    csv += "," + detail::format_pm(cell["ta"], 2);
    csv += "," + detail::format_pm(cell["fa"], 2);
    csv += "," + detail::format_pm(cell["mia"], 2);
    csv += cell.count("delta_w") ? "," + detail::format_pm(cell["delta_w"], 6) : ",";
    csv += cell.count("avg_gap") ? "," + detail::format_pm(cell["avg_gap"], 2) : ",";
    csv += "\n";
  }
  std::ofstream out(fs::path(dir) / "summary.csv", std::ios::binary);
  out << csv;
  return csv;
}

/// Full pipeline: per seed and scenario, pretrain, run every method, compute
/// the retrain oracle, evaluate, and write one JSON per (scenario, seed) plus
/// a CSV summary. Methods only ever see D_r, D_u, w_p and w_init.
inline void run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);

  const DecisionScheme scheme =
      cfg.encoding == "pm-one" ? DecisionScheme::pm_one : DecisionScheme::one_hot;
  const TargetEncoding encoding =
      cfg.encoding == "pm-one" ? TargetEncoding::pm_one_binary : TargetEncoding::one_hot;

  for (std::uint64_t seed : cfg.seeds) {
    // Data (shared across scenarios within one seed).
    Dataset train, test;
    if (cfg.dataset.kind == "idx") {
      train = load_idx(cfg.dataset.images, cfg.dataset.labels, SplitTag::train);
      test = load_idx(cfg.dataset.test_images, cfg.dataset.test_labels, SplitTag::test);
      if (!cfg.dataset.keep_classes.empty()) {
        train = filter_classes(train, cfg.dataset.keep_classes, cfg.dataset.per_class_cap,
                               derive_seed(seed, "filter/train"));
        test = filter_classes(test, cfg.dataset.keep_classes, std::nullopt, 0);
      }
    } else {
      train = synth_gaussian(cfg.dataset.d, cfg.dataset.classes, cfg.dataset.per_class,
                             cfg.dataset.separation, derive_seed(seed, "synth/train"),
                             SplitTag::train);
      test = synth_gaussian(cfg.dataset.d, cfg.dataset.classes, cfg.dataset.test_per_class,
                            cfg.dataset.separation, derive_seed(seed, "synth/test"),
                            SplitTag::test);
    }

    for (std::size_t si = 0; si < cfg.scenarios.size(); ++si) {
      const ScenarioConfig& sc = cfg.scenarios[si];
      const std::string slug = detail::scenario_slug(cfg, si);

      Dataset working = train;
      ScenarioSpec spec;
      spec.seed = derive_seed(seed, "scenario/" + slug);
      if (sc.kind == "full-class") {
        spec.kind = ScenarioKind::full_class;
        spec.target = sc.target;
      } else if (sc.kind == "sub-class") {
        spec.kind = ScenarioKind::sub_class;
        if (!working.superclass_map) {
          require(sc.subclass_forget_count >= 1,
                  "scenarios[" + std::to_string(si) + "].forget_count: required to carve a "
                  "fine class out of a flat-labeled dataset");
          working = carve_fine_class(train, sc.target, sc.subclass_forget_count,
                                     derive_seed(seed, "carve/" + slug));
          spec.target = train.num_classes;  // the carved fine class
        } else {
          spec.target = sc.target;
        }
      } else {
        spec.kind = ScenarioKind::random_subset;
        spec.fraction = sc.fraction;
      }
      const ScenarioSplit split = split_scenario(working, spec);

      const std::vector<int> labels_eff = working.effective_labels();
      const int c_eff = working.num_effective_classes();
      const TargetMatrix targets = encode_targets(labels_eff, c_eff, encoding);
      const TargetMatrix targets_test = encode_targets(test.labels, c_eff, encoding);

      nlohmann::json report;
      report["schema"] = "muso-report-v1";
      report["scenario"] = slug;
      report["scenario_kind"] = sc.kind;
      report["seed"] = seed;
      report["n_retain"] = split.n_retain();
      report["n_forget"] = split.n_forget();
      report["encoding"] = cfg.encoding;
      report["fit"] = {{"mode", cfg.fit.mode}, {"lambda", cfg.fit.lambda}};
      report["preprocessing"] = {{"pixel_scale", "[0,1]"}, {"bias_column", false}};
      nlohmann::json models = nlohmann::json::object();

      if (cfg.model.kind == "rf") {
        const RFMap map =
            sample_rf_map(working.dim(), cfg.model.feature_dim, cfg.model.sigma,
                          activation_from_name(cfg.model.activation), derive_seed(seed, "rfmap"));
        const Matrix z = featurize(map, working.x);
        const Matrix w_init =
            sample_head_init(cfg.model.feature_dim, targets.y.cols(), derive_seed(seed, "winit"));

        detail::EvalSets sets;
        sets.z_retain = gather_columns(z, split.retain_indices);
        sets.z_forget = gather_columns(z, split.forget_indices);
        sets.z_test = featurize(map, test.x);
        sets.y_retain = gather_rows(targets.y, split.retain_indices);
        sets.y_forget = gather_rows(targets.y, split.forget_indices);
        sets.y_test = targets_test.y;
        sets.labels_retain = gather(labels_eff, split.retain_indices);
        sets.labels_forget = gather(labels_eff, split.forget_indices);
        sets.labels_test = test.labels;

        // Pretrain and the retrain oracle.
        detail::Timer t_pre;
        Matrix w_p;
        if (cfg.fit.mode == "closed-form") {
          w_p = minnorm_fit(z, targets.y, w_init, cfg.fit.lambda);
        } else {
          SgdConfig fit_cfg;
          fit_cfg.learning_rate = cfg.fit.lr;
          fit_cfg.epochs = cfg.fit.epochs;
          fit_cfg.batch_size = cfg.fit.batch;
          fit_cfg.seed = derive_seed(seed, "pretrain");
          w_p = sgd_fit(z, targets.y, w_init, fit_cfg);
        }
        const double pre_seconds = t_pre.seconds();

        detail::Timer t_ret;
        Matrix w_r;
        if (cfg.fit.mode == "closed-form") {
          w_r = retrain(sets.z_retain, sets.y_retain, w_init, cfg.fit.lambda);
        } else {
          SgdConfig fit_cfg;
          fit_cfg.learning_rate = cfg.fit.lr;
          fit_cfg.epochs = cfg.fit.epochs;
          fit_cfg.batch_size = cfg.fit.batch;
          fit_cfg.seed = derive_seed(seed, "retrain");
          w_r = sgd_fit(sets.z_retain, sets.y_retain, w_init, fit_cfg);
        }
        MetricsReport retrained = detail::evaluate_linear(w_r, sets, scheme);
        retrained.wall_seconds = t_ret.seconds();

        MetricsReport pretrained = detail::evaluate_linear(w_p, sets, scheme);
        pretrained.wall_seconds = pre_seconds;
        pretrained.delta_w = delta_w(w_p, w_r, cfg.model.feature_dim);
        pretrained.avg_gap = avg_gap(pretrained, retrained);
        models["pretrained"] = report_to_json(pretrained);
        models["retrained"] = report_to_json(retrained);

        for (const std::string& method : cfg.methods) {
          if (method == "none") continue;
          detail::Timer t_m;
          Matrix w_u;
          if (method == "muso") {
            const ProjectorOperator proj = projector_exact(sets.z_retain, cfg.fit.lambda);
            const RelabelResult relabeled = muso_labels(sets.z_forget, proj, w_p, w_init);
            w_u = finetune(sets.z_retain, sets.y_retain, sets.z_forget, relabeled.targets, w_p,
                           cfg.fit.lambda);
          } else {
            RelabelResult relabeled;
            if (method == "amnesiac") {
              relabeled = amnesiac_labels(sets.labels_forget, c_eff, encoding,
                                          derive_seed(seed, "amnesiac/" + slug));
            } else {
              RfTeacherConfig teacher;
              teacher.feature_dim = cfg.model.feature_dim;
              teacher.sigma = cfg.model.sigma;
              teacher.activation = activation_from_name(cfg.model.activation);
              relabeled = badteacher_labels(gather_columns(working.x, split.forget_indices),
                                            derive_seed(seed, "badteacher/" + slug), teacher,
                                            targets.y.cols());
            }
            if (cfg.fit.mode == "closed-form") {
              w_u = finetune(sets.z_retain, sets.y_retain, sets.z_forget, relabeled.targets, w_p,
                             cfg.fit.lambda);
            } else {
              Matrix z_a(z.rows(), split.n_retain() + split.n_forget());
              z_a << sets.z_retain, sets.z_forget;
              Matrix y_a(split.n_retain() + split.n_forget(), targets.y.cols());
              y_a << sets.y_retain, relabeled.targets;
              SgdConfig fit_cfg;
              fit_cfg.learning_rate = cfg.fit.lr;
              fit_cfg.epochs = 1;
              fit_cfg.batch_size = cfg.fit.batch;
              Matrix w = w_p;
              for (int epoch = 0; epoch < cfg.fit.epochs; ++epoch) {
                fit_cfg.seed = derive_seed(seed, method + "/epoch" + std::to_string(epoch));
                w = sgd_fit(z_a, y_a, w, fit_cfg);
                if (cfg.fit.early_stop_fa) {
                  const double fa = accuracy(predict(w, sets.z_forget), sets.labels_forget, scheme);
                  const double ta = accuracy(predict(w, sets.z_test), sets.labels_test, scheme);
                  if (fa <= ta) break;
                }
              }
              w_u = w;
            }
          }
          MetricsReport mr = detail::evaluate_linear(w_u, sets, scheme);
          mr.wall_seconds = t_m.seconds();
          mr.delta_w = delta_w(w_u, w_r, cfg.model.feature_dim);
          mr.avg_gap = avg_gap(mr, retrained);
          models[method] = report_to_json(mr);
        }
      } else {
        // MLP path.
        detail::NnEvalSets sets;
        sets.x_retain = gather_columns(working.x, split.retain_indices);
        sets.x_forget = gather_columns(working.x, split.forget_indices);
        sets.x_test = test.x;
        sets.y_retain = gather_rows(targets.y, split.retain_indices);
        sets.y_forget = gather_rows(targets.y, split.forget_indices);
        sets.y_test = targets_test.y;
        sets.labels_retain = gather(labels_eff, split.retain_indices);
        sets.labels_forget = gather(labels_eff, split.forget_indices);
        sets.labels_test = test.labels;

        const Mlp m_init =
            mlp_init(working.dim(), cfg.model.hidden_widths, targets.y.cols(), Activation::tanh,
                     derive_seed(seed, "mlpinit"), cfg.model.frozen_prefix);
        SgdConfig fit_cfg;
        fit_cfg.learning_rate = cfg.fit.lr;
        fit_cfg.epochs = cfg.fit.epochs;
        fit_cfg.batch_size = cfg.fit.batch;

        detail::Timer t_pre;
        fit_cfg.seed = derive_seed(seed, "pretrain");
        const Mlp m_p = mlp_train(m_init, working.x, targets.y, fit_cfg);
        const double pre_seconds = t_pre.seconds();

        detail::Timer t_ret;
        fit_cfg.seed = derive_seed(seed, "retrain");
        const Mlp m_r = mlp_train(m_init, sets.x_retain, sets.y_retain, fit_cfg);
        MetricsReport retrained = detail::evaluate_mlp(m_r, sets, scheme);
        retrained.wall_seconds = t_ret.seconds();

        MetricsReport pretrained = detail::evaluate_mlp(m_p, sets, scheme);
        pretrained.wall_seconds = pre_seconds;
        pretrained.avg_gap = avg_gap(pretrained, retrained);
        models["pretrained"] = report_to_json(pretrained);
        models["retrained"] = report_to_json(retrained);

        MusoConfig mu;
        mu.sample_ratio = cfg.muso.sample_ratio;
        mu.selector = cfg.muso.selector == "column-select" ? SubsetSelector::column_select
                                                           : SubsetSelector::random;
        mu.sample_rank = cfg.muso.sample_rank;
        mu.lambda = cfg.muso.lambda;
        mu.unlearn_lr = cfg.muso.unlearn_lr > 0 ? cfg.muso.unlearn_lr : 0.05 * cfg.fit.lr;
        mu.max_outer_iters = cfg.muso.iterations;
        mu.inner_epochs = cfg.muso.inner_epochs;
        mu.batch_size = cfg.fit.batch;
        mu.label_tolerance = cfg.muso.label_tolerance;

        Matrix x_a(working.dim(), working.size());
        x_a << sets.x_retain, sets.x_forget;

        Mlp m_p_unlearn = m_p;
        Mlp m_init_unlearn = m_init;
        m_p_unlearn.frozen_prefix =
            std::max(cfg.model.frozen_prefix, cfg.muso.freeze_prefix);
        m_init_unlearn.frozen_prefix = m_p_unlearn.frozen_prefix;

        for (const std::string& method : cfg.methods) {
          if (method == "none") continue;
          detail::Timer t_m;
          Mlp m_u = m_p;
          MusoConfig mcfg = mu;
          mcfg.seed = derive_seed(seed, method + "/" + slug);
          if (method == "muso") {
            m_u = muso_unlearn(m_p_unlearn, m_init_unlearn, sets.x_retain, sets.y_retain,
                               sets.x_forget, sets.y_forget, mcfg);
          } else {
            Matrix relabels;
            if (method == "amnesiac") {
              relabels = amnesiac_labels(sets.labels_forget, c_eff, encoding, mcfg.seed).targets;
            } else {
              const Mlp teacher = mlp_init(working.dim(), cfg.model.hidden_widths,
                                           targets.y.cols(), Activation::tanh,
                                           derive_seed(seed, "badteacher/" + slug),
                                           cfg.model.frozen_prefix);
              relabels = teacher.outputs(sets.x_forget);
            }
            Matrix y_a(working.size(), targets.y.cols());
            y_a << sets.y_retain, relabels;
            m_u = detail::nn_finetune_baseline(
                m_p_unlearn, x_a, y_a, mcfg, cfg.fit.early_stop_fa, [&](const Mlp& model) {
                  return std::pair<double, double>(
                      accuracy(model.outputs(sets.x_forget), sets.labels_forget, scheme),
                      accuracy(model.outputs(sets.x_test), sets.labels_test, scheme));
                });
          }
          MetricsReport mr = detail::evaluate_mlp(m_u, sets, scheme);
          mr.wall_seconds = t_m.seconds();
          mr.avg_gap = avg_gap(mr, retrained);
          models[method] = report_to_json(mr);
        }
      }

      report["models"] = models;
      const std::string filename =
          "report_" + slug + "_seed" + std::to_string(seed) + ".json";
      std::ofstream out(std::filesystem::path(cfg.output_dir) / filename, std::ios::binary);
      out << report.dump(2) << "\n";
    }
  }
  render_summary(cfg.output_dir);
}

}  // namespace muso
