#include "mfqe/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>

#include "mfqe/errors.hpp"

namespace mfqe::svm {
namespace {

constexpr double kTau = 1e-12;

double rbf(std::span<const double> a, std::span<const double> b, double gamma) {
  double d = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double t = a[k] - b[k];
    d += t * t;
  }
  return std::exp(-gamma * d);
}

struct SolveResult {
  std::vector<double> alpha;
  double rho = 0.0;
  long iterations = 0;
  bool converged = false;
  double gap = 0.0;
  std::vector<double> objective;
};

// Solves min 0.5 a'Qa - e'a, 0 <= a <= C, y'a = 0 with Q_ij = y_i y_j K_ij.
class SmoSolver {
 public:
  SmoSolver(const std::vector<std::vector<double>>& x, const std::vector<int>& y, double gamma)
      : x_(x), y_(y), gamma_(gamma), rows_(x.size()) {}

  SolveResult solve(double c, double eps, long max_iter, bool record) {
    const std::size_t n = x_.size();
    SolveResult r;
    r.alpha.assign(n, 0.0);
    std::vector<double> grad(n, -1.0);
    auto& a = r.alpha;
    auto is_up = [&](std::size_t t) { return (y_[t] > 0 && a[t] < c) || (y_[t] < 0 && a[t] > 0); };
    auto is_low = [&](std::size_t t) { return (y_[t] > 0 && a[t] > 0) || (y_[t] < 0 && a[t] < c); };

    while (true) {
      double gmax = -std::numeric_limits<double>::infinity();
      double gmin = std::numeric_limits<double>::infinity();
      std::size_t i = n, j = n;
      for (std::size_t t = 0; t < n; ++t) {
        const double v = -y_[t] * grad[t];
        if (is_up(t) && v > gmax) {
          gmax = v;
          i = t;
        }
        if (is_low(t) && v < gmin) {
          gmin = v;
          j = t;
        }
      }
      r.gap = (i == n || j == n) ? 0.0 : gmax - gmin;
      if (i == n || j == n || gmax - gmin < eps) {
        r.converged = true;
        break;
      }
      if (r.iterations >= max_iter) break;
      ++r.iterations;

      const auto& qi = row(i);
      const auto& qj = row(j);
      const double yi = y_[i], yj = y_[j];
      const double qii = 1.0, qjj = 1.0;  // RBF: K(x, x) = 1
      const double qij = yi * yj * qi[j];
      const double old_i = a[i], old_j = a[j];
      if (y_[i] != y_[j]) {
        double quad = qii + qjj + 2 * qij;
        if (quad <= 0) quad = kTau;
        const double delta = (-grad[i] - grad[j]) / quad;
        const double diff = a[i] - a[j];
        a[i] += delta;
        a[j] += delta;
        if (diff > 0) {
          if (a[j] < 0) {
            a[j] = 0;
            a[i] = diff;
          }
        } else if (a[i] < 0) {
          a[i] = 0;
          a[j] = -diff;
        }
        if (diff > 0) {
          if (a[i] > c) {
            a[i] = c;
            a[j] = c - diff;
          }
        } else if (a[j] > c) {
          a[j] = c;
          a[i] = c + diff;
        }
      } else {
        double quad = qii + qjj - 2 * qij;
        if (quad <= 0) quad = kTau;
        const double delta = (grad[i] - grad[j]) / quad;
        const double sum = a[i] + a[j];
        a[i] -= delta;
        a[j] += delta;
        if (sum > c) {
          if (a[i] > c) {
            a[i] = c;
            a[j] = sum - c;
          }
        } else if (a[j] < 0) {
          a[j] = 0;
          a[i] = sum;
        }
        if (sum > c) {
          if (a[j] > c) {
            a[j] = c;
            a[i] = sum - c;
          }
        } else if (a[i] < 0) {
          a[i] = 0;
          a[j] = sum;
        }
      }
      const double di = a[i] - old_i;
      const double dj = a[j] - old_j;
      for (std::size_t t = 0; t < n; ++t) grad[t] += y_[t] * (yi * qi[t] * di + yj * qj[t] * dj);

      if (record) {
        double f = 0;
        for (std::size_t t = 0; t < n; ++t) f += a[t] * (grad[t] - 1.0);
        r.objective.push_back(-0.5 * f);
      }
    }

    // Offset: average over free vectors, else midpoint of the feasible interval.
    double ub = std::numeric_limits<double>::infinity();
    double lb = -std::numeric_limits<double>::infinity();
    double sum_free = 0;
    int free_count = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const double yg = y_[t] * grad[t];
      if (a[t] >= c) {
        if (y_[t] < 0)
          ub = std::min(ub, yg);
        else
          lb = std::max(lb, yg);
      } else if (a[t] <= 0) {
        if (y_[t] > 0)
          ub = std::min(ub, yg);
        else
          lb = std::max(lb, yg);
      } else {
        ++free_count;
        sum_free += yg;
      }
    }
    r.rho = free_count > 0 ? sum_free / free_count : (ub + lb) / 2;
    return r;
  }

 private:
  // Kernel row i (unsigned K values), cached on first use.
  const std::vector<double>& row(std::size_t i) {
    if (!rows_[i]) {
      std::vector<double> k(x_.size());
      for (std::size_t t = 0; t < x_.size(); ++t) k[t] = rbf(x_[i], x_[t], gamma_);
      rows_[i] = std::move(k);
    }
    return *rows_[i];
  }

  const std::vector<std::vector<double>>& x_;
  const std::vector<int>& y_;
  double gamma_;
  std::vector<std::optional<std::vector<double>>> rows_;
};

struct Fitted {
  std::vector<std::vector<double>> sv;
  std::vector<double> coef;
  double bias;
  SolveResult solve;
};

Fitted fit_standardized(const std::vector<std::vector<double>>& x, const std::vector<int>& labels,
                        const TrainConfig& cfg, double gamma) {
  std::vector<int> y(labels.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = labels[i] == 1 ? 1 : -1;
  SmoSolver solver(x, y, gamma);
  const long max_iter = static_cast<long>(cfg.max_passes) * static_cast<long>(std::max<std::size_t>(x.size(), 1));
  Fitted f;
  f.solve = solver.solve(cfg.c, cfg.kkt_tol, max_iter, cfg.record_objective);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (f.solve.alpha[i] > 0) {
      f.sv.push_back(x[i]);
      f.coef.push_back(f.solve.alpha[i] * y[i]);
    }
  }
  f.bias = -f.solve.rho;
  return f;
}

double raw_decision(const std::vector<std::vector<double>>& sv, const std::vector<double>& coef, double bias,
                    double gamma, std::span<const double> xs) {
  double s = bias;
  for (std::size_t i = 0; i < sv.size(); ++i) s += coef[i] * rbf(sv[i], xs, gamma);
  return s;
}

}  // namespace

Standardizer Standardizer::fit(const std::vector<std::vector<double>>& x) {
  Standardizer s;
  if (x.empty()) return s;
  const std::size_t d = x.front().size();
  s.mean.assign(d, 0.0);
  s.std.assign(d, 0.0);
  const double n = static_cast<double>(x.size());
  for (const auto& r : x)
    for (std::size_t k = 0; k < d; ++k) s.mean[k] += r[k];
  for (auto& m : s.mean) m /= n;
  for (const auto& r : x)
    for (std::size_t k = 0; k < d; ++k) s.std[k] += (r[k] - s.mean[k]) * (r[k] - s.mean[k]);
  for (std::size_t k = 0; k < d; ++k) {
    s.std[k] = std::sqrt(s.std[k] / n);
    if (!(s.std[k] > 1e-12 * std::max(1.0, std::abs(s.mean[k])))) s.std[k] = 1.0;
  }
  return s;
}

std::vector<double> Standardizer::apply(std::span<const double> row) const {
  if (row.size() != mean.size())
    throw ArgumentError("svm.decision_value: feature dimension " + std::to_string(row.size()) + " != model dimension " +
                        std::to_string(mean.size()));
  std::vector<double> out(row.size());
  for (std::size_t k = 0; k < row.size(); ++k) out[k] = (row[k] - mean[k]) / std[k];
  return out;
}

std::pair<double, double> fit_platt(std::span<const double> dec, std::span<const int> labels) {
  const std::size_t n = dec.size();
  double prior1 = 0, prior0 = 0;
  for (int l : labels) (l == 1 ? prior1 : prior0) += 1;
  const double hi = (prior1 + 1.0) / (prior1 + 2.0);
  const double lo = 1.0 / (prior0 + 2.0);
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = labels[i] == 1 ? hi : lo;

  auto objective = [&](double a, double b) {
    double f = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = dec[i] * a + b;
      f += z >= 0 ? t[i] * z + std::log1p(std::exp(-z)) : (t[i] - 1) * z + std::log1p(std::exp(z));
    }
    return f;
  };

  const double prior_b = std::log((prior0 + 1.0) / (prior1 + 1.0));
  double a = 0.0;
  double b = prior_b;
  double fval = objective(a, b);
  constexpr double kSigma = 1e-12;
  constexpr double kMinStep = 1e-10;
  for (int iter = 0; iter < 100; ++iter) {
    double h11 = kSigma, h22 = kSigma, h21 = 0, g1 = 0, g2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = dec[i] * a + b;
      double p, q;
      if (z >= 0) {
        p = std::exp(-z) / (1.0 + std::exp(-z));
        q = 1.0 / (1.0 + std::exp(-z));
      } else {
        p = 1.0 / (1.0 + std::exp(z));
        q = std::exp(z) / (1.0 + std::exp(z));
      }
      const double d2 = p * q;
      h11 += dec[i] * dec[i] * d2;
      h22 += d2;
      h21 += dec[i] * d2;
      const double d1 = t[i] - p;
      g1 += dec[i] * d1;
      g2 += d1;
    }
    if (std::abs(g1) < 1e-5 && std::abs(g2) < 1e-5) break;
    const double det = h11 * h22 - h21 * h21;
    const double da = -(h22 * g1 - h21 * g2) / det;
    const double db = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * da + g2 * db;
    double step = 1.0;
    while (step >= kMinStep) {
      const double na = a + step * da;
      const double nb = b + step * db;
      const double nf = objective(na, nb);
      if (nf < fval + 1e-4 * step * gd) {
        a = na;
        b = nb;
        fval = nf;
        break;
      }
      step /= 2;
    }
    if (step < kMinStep) break;
  }
  if (!(a < 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
    // Uninformative decision values: fall back to a unit slope and the class prior.
    a = -1.0;
    b = prior_b;
  }
  return {a, b};
}

Model train(const Dataset& data, const TrainConfig& cfg, TrainInfo* info) {
  if (data.x.size() != data.y.size()) throw ArgumentError("svm.train: feature/label count mismatch");
  if (!(cfg.c > 0) || !(cfg.kkt_tol > 0) || cfg.max_passes <= 0)
    throw ArgumentError("svm.train: c, kkt_tol and max_passes must be positive");
  const std::size_t d = data.dims();
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.x[i].size() != d) throw ArgumentError("svm.train: inconsistent feature dimensionality");
    if (data.y[i] != 0 && data.y[i] != 1) throw ArgumentError("svm.train: labels must be 0 or 1");
    (data.y[i] == 1 ? pos : neg) += 1;
  }
  if (pos == 0 || neg == 0) throw ArgumentError("svm.train: training data contains a single class");

  Model m;
  m.standardizer = Standardizer::fit(data.x);
  std::vector<std::vector<double>> xs;
  xs.reserve(data.size());
  for (const auto& r : data.x) xs.push_back(m.standardizer.apply(r));

  if (cfg.gamma > 0) {
    m.gamma = cfg.gamma;
  } else {
    double sum = 0, sq = 0;
    for (const auto& r : xs)
      for (double v : r) {
        sum += v;
        sq += v * v;
      }
    const double cnt = static_cast<double>(xs.size() * d);
    const double var = sq / cnt - (sum / cnt) * (sum / cnt);
    m.gamma = 1.0 / (static_cast<double>(d) * (var > 1e-12 ? var : 1.0));
  }

  Fitted full = fit_standardized(xs, data.y, cfg, m.gamma);
  m.support_vectors = full.sv;
  m.dual_coefs = full.coef;
  m.bias = full.bias;
  m.converged = full.solve.converged;

  // Out-of-fold decision values for calibration; stratified folds from a seeded shuffle.
  std::vector<double> dec(data.size());
  const int folds = std::max(2, cfg.platt_folds);
  if (std::min(pos, neg) >= 2) {
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> pidx, nidx;
    for (std::size_t i = 0; i < data.size(); ++i) (data.y[i] == 1 ? pidx : nidx).push_back(i);
    std::shuffle(pidx.begin(), pidx.end(), rng);
    std::shuffle(nidx.begin(), nidx.end(), rng);
    std::vector<int> fold_of(data.size());
    for (std::size_t k = 0; k < pidx.size(); ++k) fold_of[pidx[k]] = static_cast<int>(k % folds);
    for (std::size_t k = 0; k < nidx.size(); ++k) fold_of[nidx[k]] = static_cast<int>(k % folds);
    for (int f = 0; f < folds; ++f) {
      std::vector<std::vector<double>> tx;
      std::vector<int> ty;
      for (std::size_t i = 0; i < data.size(); ++i)
        if (fold_of[i] != f) {
          tx.push_back(xs[i]);
          ty.push_back(data.y[i]);
        }
      const bool has_both = std::count(ty.begin(), ty.end(), 1) > 0 && std::count(ty.begin(), ty.end(), 0) > 0;
      if (tx.size() == data.size()) continue;  // empty fold
      TrainConfig sub = cfg;
      sub.record_objective = false;
      std::optional<Fitted> part;
      if (has_both) part = fit_standardized(tx, ty, sub, m.gamma);
      for (std::size_t i = 0; i < data.size(); ++i)
        if (fold_of[i] == f)
          dec[i] = part ? raw_decision(part->sv, part->coef, part->bias, m.gamma, xs[i])
                        : raw_decision(full.sv, full.coef, full.bias, m.gamma, xs[i]);
    }
  } else {
    for (std::size_t i = 0; i < data.size(); ++i) dec[i] = raw_decision(full.sv, full.coef, full.bias, m.gamma, xs[i]);
  }
  std::tie(m.platt_a, m.platt_b) = fit_platt(dec, data.y);

  if (info) {
    info->iterations = full.solve.iterations;
    info->converged = full.solve.converged;
    info->max_kkt_violation = full.solve.gap;
    info->dual_objective = std::move(full.solve.objective);
    info->alphas = full.solve.alpha;
  }
  return m;
}

double decision_value(const Model& model, std::span<const double> x) {
  const auto xs = model.standardizer.apply(x);
  return raw_decision(model.support_vectors, model.dual_coefs, model.bias, model.gamma, xs);
}

double platt_prob(const Model& model, double f) {
  const double z = model.platt_a * f + model.platt_b;
  // Both branches stay inside (0, 1) without overflow.
  const double p = z >= 0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
  return std::clamp(p, std::numeric_limits<double>::min(), 1.0 - std::numeric_limits<double>::epsilon());
}

double predict_prob(const Model& model, std::span<const double> x) { return platt_prob(model, decision_value(model, x)); }

}  // namespace mfqe::svm
