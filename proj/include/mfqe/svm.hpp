#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace mfqe::svm {

/// Rows of features with 0/1 labels.
struct Dataset {
  std::vector<std::vector<double>> x;
  std::vector<int> y;

  std::size_t size() const noexcept { return x.size(); }
  std::size_t dims() const noexcept { return x.empty() ? 0 : x.front().size(); }
  void add(std::span<const double> row, int label) {
    x.emplace_back(row.begin(), row.end());
    y.push_back(label);
  }
};

struct TrainConfig {
  double c = 1.0;
  double gamma = 0.0;  // <= 0 selects 1 / (dims * variance of the standardized data)
  double kkt_tol = 1e-3;
  int max_passes = 200;  // iteration cap is max_passes * n
  std::uint64_t seed = 0;
  int platt_folds = 3;
  bool record_objective = false;
};

/// Per-dimension z-scoring; zero-variance dimensions keep std = 1.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std;

  static Standardizer fit(const std::vector<std::vector<double>>& x);
  std::vector<double> apply(std::span<const double> row) const;
};

struct Model {
  std::vector<std::vector<double>> support_vectors;  // standardized space
  std::vector<double> dual_coefs;                     // alpha_i * y_i
  double bias = 0.0;
  double gamma = 1.0;
  double platt_a = -1.0;
  double platt_b = 0.0;
  Standardizer standardizer;
  bool converged = true;

  std::size_t dims() const noexcept { return standardizer.mean.size(); }
};

struct TrainInfo {
  long iterations = 0;
  bool converged = false;
  double max_kkt_violation = 0.0;   // m(alpha) - M(alpha) at exit
  std::vector<double> dual_objective;  // per SMO step, when record_objective is set
  std::vector<double> alphas;         // final alphas of the full-data solve
};

/// RBF soft-margin SVM trained by SMO with the maximal-violating-pair rule,
/// then Platt-calibrated on out-of-fold decision values.
Model train(const Dataset& data, const TrainConfig& cfg, TrainInfo* info = nullptr);

double decision_value(const Model& model, std::span<const double> x);
/// 1 / (1 + exp(a*f + b)).
double predict_prob(const Model& model, std::span<const double> x);
double platt_prob(const Model& model, double decision);

/// Fits p = 1/(1+exp(a f + b)) to decision values with Newton iterations and a
/// backtracking line search. Returns {a, b}; a < 0 is enforced.
std::pair<double, double> fit_platt(std::span<const double> decisions, std::span<const int> labels);

}  // namespace mfqe::svm
