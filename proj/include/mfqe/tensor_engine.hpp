#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace mfqe::nn {

// Dense NCHW tensor. float is the training precision; double is the verification mode.
template <class T>
struct Tensor {
  std::array<int, 4> shape{1, 1, 1, 1};
  std::vector<T> data = std::vector<T>(1, T(0));

  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T(0));
  Tensor(std::array<int, 4> shape, std::vector<T> values);

  int n() const { return shape[0]; }
  int c() const { return shape[1]; }
  int h() const { return shape[2]; }
  int w() const { return shape[3]; }
  std::size_t size() const { return data.size(); }
  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * static_cast<std::size_t>(shape[1]) + static_cast<std::size_t>(c)) *
                static_cast<std::size_t>(shape[2]) +
            static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(shape[3]) +
           static_cast<std::size_t>(x);
  }
  T& at(int n, int c, int y, int x) { return data[offset(n, c, y, x)]; }
  T at(int n, int c, int y, int x) const { return data[offset(n, c, y, x)]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  void fill(T v);

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

std::string shape_string(const std::array<int, 4>& s);

// Graph node. Parameters are named leaf nodes that require gradients.
template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty (size 0) until a backward pass reaches it
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;
  std::string name;

  bool is_leaf() const { return !backward_fn; }
  Tensor<T>& ensure_grad();
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
using Parameter = Node<T>;

// While alive on a thread, ops record no graph (inference only).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool grad_enabled();

 private:
  bool prev_;
};

// Hashes the branch decisions taken by piecewise ops (PReLU sign, bilinear cell,
// border clamp) while alive. Finite differences that straddle a kink are skipped.
class KinkTracker {
 public:
  KinkTracker();
  ~KinkTracker();
  KinkTracker(const KinkTracker&) = delete;
  KinkTracker& operator=(const KinkTracker&) = delete;
  std::uint64_t hash() const { return hash_; }
  static void record(std::uint64_t v);

 private:
  std::uint64_t hash_ = 1469598103934665603ull;
  KinkTracker* prev_;
};

// Ordered collection of uniquely named parameters.
template <class T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, Tensor<T> init);
  Var<T> get(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<Var<T>>& params() const { return params_; }
  std::size_t scalar_count() const;
  void zero_grad();
  ParamStore clone() const;
  /// Store sharing the nodes whose names satisfy `keep`.
  ParamStore subset(const std::function<bool(const std::string&)>& keep) const;

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) out.add(p->name, p->value.template cast<U>());
    return out;
  }

 private:
  std::vector<Var<T>> params_;
};

enum class Padding { Same, Valid };

template <class T>
Var<T> constant(Tensor<T> value);
template <class T>
Var<T> leaf(Tensor<T> value, bool requires_grad);

/// Cross-correlation. weights (out_ch, in_ch, kh, kw), bias (1, out_ch, 1, 1).
/// Same padding gives ceil(in/stride) with the extra pad on the bottom/right.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, Padding pad);

/// slopes (1, C, 1, 1).
template <class T>
Var<T> prelu(const Var<T>& x, const Var<T>& slopes);

template <class T>
Var<T> tanh(const Var<T>& x);

template <class T>
Var<T> scale(const Var<T>& x, T s);

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);

/// out(x, y) = bilinear(input at (x + flow0, y + flow1)), source clamped to the border.
template <class T>
Var<T> bilinear_sample(const Var<T>& input, const Var<T>& flow);

/// Half-pixel bilinear upsampling by factor (2 or 4); displacements multiplied by factor.
template <class T>
Var<T> upscale_flow(const Var<T>& flow, int factor);

/// Mean squared difference, returned as a (1,1,1,1) scalar.
template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b);

/// Sum of weights * x, returned as a scalar. Used as a generic probe loss.
template <class T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights);

/// Reverse-mode accumulation from a scalar. Parameter gradients accumulate across calls.
template <class T>
void backward(const Var<T>& loss);

// Initializers.
template <class T>
Tensor<T> he_normal(std::array<int, 4> shape, std::mt19937_64& rng, double gain = 1.0);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
struct AdamState {
  AdamConfig cfg;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  long t = 0;

  static AdamState init(const ParamStore<T>& store, AdamConfig cfg = {});
};

/// Bias-corrected Adam update. Gradients are left in place.
template <class T>
void adam_step(ParamStore<T>& store, AdamState<T>& state);

// Finite-difference verification.
struct GradcheckOptions {
  double h = 1e-3;
  int max_entries_per_tensor = 64;  // sampled without replacement when larger
  std::uint64_t seed = 0;
};

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;  // ||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf)
  int checked = 0;
  int skipped_kinks = 0;
};

/// Compares backward() against central differences for every leaf in `wrt`.
/// `loss_fn` must rebuild the graph from the current leaf values.
template <class T>
std::vector<GradcheckEntry> gradcheck(const std::function<Var<T>()>& loss_fn, const std::vector<Var<T>>& wrt,
                                      const GradcheckOptions& opts = {});

/// Central differences of a 64-bit graph against externally computed gradients, one per
/// leaf (e.g. from the 32-bit engine at the same point).
std::vector<GradcheckEntry> gradcheck_reference(const std::function<Var<double>()>& loss_fn,
                                                const std::vector<Var<double>>& wrt,
                                                const std::vector<Tensor<double>>& analytic,
                                                const GradcheckOptions& opts = {});

}  // namespace mfqe::nn
