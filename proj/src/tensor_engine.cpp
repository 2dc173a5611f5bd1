#include "mfqe/tensor_engine.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "mfqe/errors.hpp"

namespace mfqe::nn {

namespace {

thread_local bool t_grad_enabled = true;
thread_local KinkTracker* t_kinks = nullptr;

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (!t_grad_enabled) return node;
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  if (!any) return node;
  node->requires_grad = true;
  node->parents = std::move(parents);
  node->backward_fn = std::move(fn);
  return node;
}

void check_same(const char* op, const std::array<int, 4>& a, const std::array<int, 4>& b) {
  if (a != b)
    throw ShapeError(std::string("tensor_engine.") + op + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
}

struct ConvGeom {
  int oh, ow, pad_t, pad_l;
};

ConvGeom conv_geom(int h, int w, int kh, int kw, int stride, Padding pad) {
  ConvGeom g{};
  if (pad == Padding::Same) {
    g.oh = (h + stride - 1) / stride;
    g.ow = (w + stride - 1) / stride;
    const int ph = std::max((g.oh - 1) * stride + kh - h, 0);
    const int pw = std::max((g.ow - 1) * stride + kw - w, 0);
    g.pad_t = ph / 2;
    g.pad_l = pw / 2;
  } else {
    if (h < kh || w < kw) throw ShapeError("tensor_engine.conv2d: input smaller than kernel with valid padding");
    g.oh = (h - kh) / stride + 1;
    g.ow = (w - kw) / stride + 1;
    g.pad_t = g.pad_l = 0;
  }
  return g;
}

// col is (cin*kh*kw) x ((oy1-oy0)*ow), row-major, covering output rows [oy0, oy1).
template <class T>
void im2col(const T* x, int cin, int h, int w, int kh, int kw, int stride, const ConvGeom& g, int oy0, int oy1,
            T* col) {
  const std::size_t p = sz(oy1 - oy0) * sz(g.ow);
  std::size_t row = 0;
  for (int c = 0; c < cin; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx, ++row) {
        T* dst = col + row * p;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * stride + ky - g.pad_t;
          T* d = dst + sz(oy - oy0) * sz(g.ow);
          if (iy < 0 || iy >= h) {
            std::fill(d, d + g.ow, T(0));
            continue;
          }
          const T* src = x + (sz(c) * sz(h) + sz(iy)) * sz(w);
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * stride + kx - g.pad_l;
            d[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
}

template <class T>
void col2im_add(const T* col, int cin, int h, int w, int kh, int kw, int stride, const ConvGeom& g, int oy0, int oy1,
                T* dx) {
  const std::size_t p = sz(oy1 - oy0) * sz(g.ow);
  std::size_t row = 0;
  for (int c = 0; c < cin; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx, ++row) {
        const T* src = col + row * p;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * stride + ky - g.pad_t;
          if (iy < 0 || iy >= h) continue;
          const T* s = src + sz(oy - oy0) * sz(g.ow);
          T* d = dx + (sz(c) * sz(h) + sz(iy)) * sz(w);
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * stride + kx - g.pad_l;
            if (ix >= 0 && ix < w) d[ix] += s[ox];
          }
        }
      }
}

struct Axis {
  std::vector<int> i0, i1;
  std::vector<double> wt;
};

// Half-pixel-centred bilinear source positions for upsampling by `factor`.
Axis upsample_axis(int in, int factor) {
  Axis a;
  const int out = in * factor;
  a.i0.resize(sz(out));
  a.i1.resize(sz(out));
  a.wt.resize(sz(out));
  for (int o = 0; o < out; ++o) {
    double s = (o + 0.5) / factor - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const int i0 = std::min(static_cast<int>(std::floor(s)), in - 1);
    a.i0[sz(o)] = i0;
    a.i1[sz(o)] = std::min(i0 + 1, in - 1);
    a.wt[sz(o)] = s - i0;
  }
  return a;
}

}  // namespace

std::string shape_string(const std::array<int, 4>& s) {
  return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + "," +
         std::to_string(s[3]) + ")";
}

template <class T>
Tensor<T>::Tensor(int n, int c, int h, int w, T fill_value) : shape{n, c, h, w} {
  if (n < 1 || c < 1 || h < 1 || w < 1) throw ShapeError("tensor_engine.Tensor: dims must be >= 1, got " + shape_string(shape));
  data.assign(sz(n) * sz(c) * sz(h) * sz(w), fill_value);
}

template <class T>
Tensor<T>::Tensor(std::array<int, 4> s, std::vector<T> values) : shape(s), data(std::move(values)) {
  for (int d : s)
    if (d < 1) throw ShapeError("tensor_engine.Tensor: dims must be >= 1, got " + shape_string(s));
  if (data.size() != sz(s[0]) * sz(s[1]) * sz(s[2]) * sz(s[3]))
    throw ShapeError("tensor_engine.Tensor: " + std::to_string(data.size()) + " values for shape " + shape_string(s));
}

template <class T>
void Tensor<T>::fill(T v) {
  std::fill(data.begin(), data.end(), v);
}

template <class T>
Tensor<T>& Node<T>::ensure_grad() {
  if (grad.data.size() != value.data.size()) {
    grad.shape = value.shape;
    grad.data.assign(value.data.size(), T(0));
  }
  return grad;
}

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }
bool NoGradGuard::grad_enabled() { return t_grad_enabled; }

KinkTracker::KinkTracker() : prev_(t_kinks) { t_kinks = this; }
KinkTracker::~KinkTracker() { t_kinks = prev_; }
void KinkTracker::record(std::uint64_t v) {
  if (!t_kinks) return;
  t_kinks->hash_ = (t_kinks->hash_ ^ v) * 1099511628211ull;
}

template <class T>
Var<T> ParamStore<T>::add(const std::string& name, Tensor<T> init) {
  if (contains(name)) throw ArgumentError("tensor_engine.ParamStore.add: duplicate parameter name '" + name + "'");
  auto p = std::make_shared<Node<T>>();
  p->value = std::move(init);
  p->requires_grad = true;
  p->name = name;
  p->ensure_grad();
  params_.push_back(p);
  return p;
}

template <class T>
Var<T> ParamStore<T>::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p;
  throw ArgumentError("tensor_engine.ParamStore.get: no parameter named '" + name + "'");
}

template <class T>
bool ParamStore<T>::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Var<T>& p) { return p->name == name; });
}

template <class T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <class T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p->ensure_grad().fill(T(0));
}

template <class T>
ParamStore<T> ParamStore<T>::clone() const {
  ParamStore out;
  for (const auto& p : params_) out.add(p->name, p->value);
  return out;
}

template <class T>
ParamStore<T> ParamStore<T>::subset(const std::function<bool(const std::string&)>& keep) const {
  ParamStore out;
  for (const auto& p : params_)
    if (keep(p->name)) out.params_.push_back(p);
  return out;
}

template <class T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return n;
}

template <class T>
Var<T> leaf(Tensor<T> value, bool requires_grad) {
  auto n = constant(std::move(value));
  n->requires_grad = requires_grad;
  return n;
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, Padding pad) {
  const auto& xs = x->value.shape;
  const auto& ws = w->value.shape;
  if (stride < 1) throw ArgumentError("tensor_engine.conv2d: stride must be >= 1");
  if (ws[1] != xs[1])
    throw ShapeError("tensor_engine.conv2d: weights expect " + std::to_string(ws[1]) + " input channels, input has " +
                     std::to_string(xs[1]));
  if (b->value.shape != std::array<int, 4>{1, ws[0], 1, 1})
    throw ShapeError("tensor_engine.conv2d: bias shape " + shape_string(b->value.shape) + " does not match " +
                     std::to_string(ws[0]) + " output channels");
  const int nb = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
  const int cout = ws[0], kh = ws[2], kw = ws[3];
  const ConvGeom g = conv_geom(h, wd, kh, kw, stride, pad);
  const int k = cin * kh * kw;
  const int p = g.oh * g.ow;

  // Output rows are processed in blocks so the column buffer stays cache resident.
  const int rows = std::clamp(static_cast<int>((256u << 10) / (sizeof(T) * sz(k) * sz(g.ow))), 1, g.oh);

  Tensor<T> out(nb, cout, g.oh, g.ow);
  std::vector<T> col(sz(k) * sz(rows) * sz(g.ow));
  CMapMat<T> wm(w->value.data.data(), cout, k);
  for (int n = 0; n < nb; ++n) {
    const T* xn = x->value.data.data() + sz(n) * sz(cin) * sz(h) * sz(wd);
    MapMat<T> ym(out.data.data() + sz(n) * sz(cout) * sz(p), cout, p);
    for (int oy0 = 0; oy0 < g.oh; oy0 += rows) {
      const int oy1 = std::min(oy0 + rows, g.oh);
      const int pb = (oy1 - oy0) * g.ow;
      im2col(xn, cin, h, wd, kh, kw, stride, g, oy0, oy1, col.data());
      ym.middleCols(oy0 * g.ow, pb).noalias() = wm * CMapMat<T>(col.data(), k, pb);
    }
    for (int c = 0; c < cout; ++c) ym.row(c).array() += b->value.data[sz(c)];
  }

  return make_result<T>(std::move(out), {x, w, b}, [=](Node<T>& self) {
    const auto& xp = self.parents[0];
    const auto& wp = self.parents[1];
    const auto& bp = self.parents[2];
    std::vector<T> colb(sz(k) * sz(rows) * sz(g.ow));
    CMapMat<T> wmat(wp->value.data.data(), cout, k);

    // At stride 1 the input gradient is a correlation of dY with the flipped kernel;
    // that needs the smaller column buffer whenever cout <= cin.
    const bool flipped = stride == 1 && cout <= cin;
    const int kt = cout * kh * kw;
    const ConvGeom gt{h, wd, kh - 1 - g.pad_t, kw - 1 - g.pad_l};
    const int rows_t = std::clamp(static_cast<int>((256u << 10) / (sizeof(T) * sz(kt) * sz(wd))), 1, h);
    RowMat<T> wflip;
    std::vector<T> colt;
    if (flipped && xp->requires_grad) {
      wflip.resize(cin, kt);
      for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx)
              wflip(ci, (co * kh + ky) * kw + kx) = wp->value.at(co, ci, kh - 1 - ky, kw - 1 - kx);
      colt.resize(sz(kt) * sz(rows_t) * sz(wd));
    }

    for (int n = 0; n < nb; ++n) {
      CMapMat<T> dy(self.grad.data.data() + sz(n) * sz(cout) * sz(p), cout, p);
      const T* xn = xp->value.data.data() + sz(n) * sz(cin) * sz(h) * sz(wd);
      if (bp->requires_grad) {
        auto& bg = bp->ensure_grad().data;
        // Plain loop: Eigen's vectorized sum peels by address alignment, which makes the order vary.
        for (int c = 0; c < cout; ++c) {
          const T* r = self.grad.data.data() + (sz(n) * sz(cout) + sz(c)) * sz(p);
          T acc = 0;
          for (int i = 0; i < p; ++i) acc += r[i];
          bg[sz(c)] += acc;
        }
      }
      for (int oy0 = 0; oy0 < g.oh; oy0 += rows) {
        const int oy1 = std::min(oy0 + rows, g.oh);
        const int pb = (oy1 - oy0) * g.ow;
        const auto dyb = dy.middleCols(oy0 * g.ow, pb);
        if (wp->requires_grad) {
          im2col(xn, cin, h, wd, kh, kw, stride, g, oy0, oy1, colb.data());
          MapMat<T>(wp->ensure_grad().data.data(), cout, k).noalias() +=
              dyb * CMapMat<T>(colb.data(), k, pb).transpose();
        }
        if (xp->requires_grad && !flipped) {
          MapMat<T>(colb.data(), k, pb).noalias() = wmat.transpose() * dyb;
          col2im_add(colb.data(), cin, h, wd, kh, kw, stride, g, oy0, oy1,
                     xp->ensure_grad().data.data() + sz(n) * sz(cin) * sz(h) * sz(wd));
        }
      }
      if (xp->requires_grad && flipped) {
        MapMat<T> dx(xp->ensure_grad().data.data() + sz(n) * sz(cin) * sz(h) * sz(wd), cin, h * wd);
        const T* dyn = self.grad.data.data() + sz(n) * sz(cout) * sz(p);
        for (int y0 = 0; y0 < h; y0 += rows_t) {
          const int y1 = std::min(y0 + rows_t, h);
          const int pb = (y1 - y0) * wd;
          im2col(dyn, cout, g.oh, g.ow, kh, kw, 1, gt, y0, y1, colt.data());
          dx.middleCols(y0 * wd, pb).noalias() += wflip * CMapMat<T>(colt.data(), kt, pb);
        }
      }
    }
  });
}

template <class T>
Var<T> prelu(const Var<T>& x, const Var<T>& slopes) {
  const auto& s = x->value.shape;
  if (slopes->value.shape != std::array<int, 4>{1, s[1], 1, 1})
    throw ShapeError("tensor_engine.prelu: " + std::to_string(slopes->value.size()) + " slopes for " +
                     std::to_string(s[1]) + " channels");
  const std::size_t plane = sz(s[2]) * sz(s[3]);
  Tensor<T> out(s, x->value.data);
  const bool track = t_kinks != nullptr;
  for (int n = 0; n < s[0]; ++n)
    for (int c = 0; c < s[1]; ++c) {
      const T a = slopes->value.data[sz(c)];
      T* d = out.data.data() + (sz(n) * sz(s[1]) + sz(c)) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (track) KinkTracker::record(d[i] > T(0));
        if (!(d[i] > T(0))) d[i] *= a;
      }
    }
  return make_result<T>(std::move(out), {x, slopes}, [plane](Node<T>& self) {
    const auto& xp = self.parents[0];
    const auto& sp = self.parents[1];
    const auto& sh = xp->value.shape;
    for (int n = 0; n < sh[0]; ++n)
      for (int c = 0; c < sh[1]; ++c) {
        const std::size_t base = (sz(n) * sz(sh[1]) + sz(c)) * plane;
        const T a = sp->value.data[sz(c)];
        const T* xv = xp->value.data.data() + base;
        const T* g = self.grad.data.data() + base;
        if (xp->requires_grad) {
          T* dx = xp->ensure_grad().data.data() + base;
          for (std::size_t i = 0; i < plane; ++i) dx[i] += xv[i] > T(0) ? g[i] : a * g[i];
        }
        if (sp->requires_grad) {
          T acc = 0;
          for (std::size_t i = 0; i < plane; ++i)
            if (!(xv[i] > T(0))) acc += xv[i] * g[i];
          sp->ensure_grad().data[sz(c)] += acc;
        }
      }
  });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
  Tensor<T> out(x->value.shape, x->value.data);
  for (auto& v : out.data) v = std::tanh(v);
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& dx = self.parents[0]->ensure_grad().data;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T y = self.value.data[i];
      dx[i] += self.grad.data[i] * (T(1) - y * y);
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& x, T s) {
  Tensor<T> out(x->value.shape, x->value.data);
  for (auto& v : out.data) v *= s;
  return make_result<T>(std::move(out), {x}, [s](Node<T>& self) {
    auto& dx = self.parents[0]->ensure_grad().data;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += s * self.grad.data[i];
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same("add", a->value.shape, b->value.shape);
  Tensor<T> out(a->value.shape, a->value.data);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& d = p->ensure_grad().data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad.data[i];
    }
  });
}

template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ArgumentError("tensor_engine.concat_channels: no inputs");
  const auto& s0 = parts[0]->value.shape;
  int channels = 0;
  for (const auto& p : parts) {
    const auto& s = p->value.shape;
    if (s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
      throw ShapeError("tensor_engine.concat_channels: " + shape_string(s) + " does not match " + shape_string(s0));
    channels += s[1];
  }
  Tensor<T> out(s0[0], channels, s0[2], s0[3]);
  const std::size_t plane = sz(s0[2]) * sz(s0[3]);
  for (int n = 0; n < s0[0]; ++n) {
    int c0 = 0;
    for (const auto& p : parts) {
      const int c = p->value.shape[1];
      const T* src = p->value.data.data() + sz(n) * sz(c) * plane;
      std::copy(src, src + sz(c) * plane, out.data.data() + (sz(n) * sz(channels) + sz(c0)) * plane);
      c0 += c;
    }
  }
  return make_result<T>(std::move(out), parts, [plane, channels](Node<T>& self) {
    const int nb = self.value.shape[0];
    int c0 = 0;
    for (auto& p : self.parents) {
      const int c = p->value.shape[1];
      if (p->requires_grad) {
        auto& d = p->ensure_grad().data;
        for (int n = 0; n < nb; ++n) {
          const T* g = self.grad.data.data() + (sz(n) * sz(channels) + sz(c0)) * plane;
          T* dd = d.data() + sz(n) * sz(c) * plane;
          for (std::size_t i = 0; i < sz(c) * plane; ++i) dd[i] += g[i];
        }
      }
      c0 += c;
    }
  });
}

namespace {

struct SamplePoint {
  int x0, x1, y0, y1;
  double wx, wy;
  bool clamp_x, clamp_y;
};

SamplePoint sample_point(double sx, double sy, int w, int h) {
  SamplePoint p{};
  // Non-finite positions read pixel 0 with NaN weights so the NaN reaches the loss.
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const bool bad_x = !std::isfinite(sx), bad_y = !std::isfinite(sy);
  if (bad_x) sx = 0.0;
  if (bad_y) sy = 0.0;
  p.clamp_x = sx < 0.0 || sx > w - 1;
  p.clamp_y = sy < 0.0 || sy > h - 1;
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  p.x0 = std::min(static_cast<int>(std::floor(sx)), std::max(w - 2, 0));
  p.y0 = std::min(static_cast<int>(std::floor(sy)), std::max(h - 2, 0));
  p.x1 = std::min(p.x0 + 1, w - 1);
  p.y1 = std::min(p.y0 + 1, h - 1);
  p.wx = sx - p.x0;
  p.wy = sy - p.y0;
  if (bad_x) p.wx = nan;
  if (bad_y) p.wy = nan;
  return p;
}

}  // namespace

template <class T>
Var<T> bilinear_sample(const Var<T>& input, const Var<T>& flow) {
  const auto& is = input->value.shape;
  const auto& fs = flow->value.shape;
  if (fs[0] != is[0] || fs[1] != 2 || fs[2] != is[2] || fs[3] != is[3])
    throw ShapeError("tensor_engine.bilinear_sample: flow " + shape_string(fs) + " does not fit input " +
                     shape_string(is));
  const int nb = is[0], ch = is[1], h = is[2], w = is[3];
  const std::size_t plane = sz(h) * sz(w);
  Tensor<T> out(is[0], is[1], is[2], is[3]);
  const bool track = t_kinks != nullptr;
  for (int n = 0; n < nb; ++n) {
    const T* fx = flow->value.data.data() + sz(n) * 2 * plane;
    const T* fy = fx + plane;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = sz(y) * sz(w) + sz(x);
        const auto sp = sample_point(x + static_cast<double>(fx[i]), y + static_cast<double>(fy[i]), w, h);
        if (track)
          KinkTracker::record((static_cast<std::uint64_t>(sp.x0) << 32) ^ (static_cast<std::uint64_t>(sp.y0) << 8) ^
                              (sp.clamp_x ? 1u : 0u) ^ (sp.clamp_y ? 2u : 0u));
        const T wx = static_cast<T>(sp.wx), wy = static_cast<T>(sp.wy);
        for (int c = 0; c < ch; ++c) {
          const T* img = input->value.data.data() + (sz(n) * sz(ch) + sz(c)) * plane;
          const T top = (T(1) - wx) * img[sz(sp.y0) * sz(w) + sz(sp.x0)] + wx * img[sz(sp.y0) * sz(w) + sz(sp.x1)];
          const T bot = (T(1) - wx) * img[sz(sp.y1) * sz(w) + sz(sp.x0)] + wx * img[sz(sp.y1) * sz(w) + sz(sp.x1)];
          out.data[(sz(n) * sz(ch) + sz(c)) * plane + i] = (T(1) - wy) * top + wy * bot;
        }
      }
  }
  return make_result<T>(std::move(out), {input, flow}, [=](Node<T>& self) {
    const auto& ip = self.parents[0];
    const auto& fp = self.parents[1];
    T* di = ip->requires_grad ? ip->ensure_grad().data.data() : nullptr;
    T* df = fp->requires_grad ? fp->ensure_grad().data.data() : nullptr;
    for (int n = 0; n < nb; ++n) {
      const T* fx = fp->value.data.data() + sz(n) * 2 * plane;
      const T* fy = fx + plane;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const std::size_t i = sz(y) * sz(w) + sz(x);
          const auto sp = sample_point(x + static_cast<double>(fx[i]), y + static_cast<double>(fy[i]), w, h);
          const T wx = static_cast<T>(sp.wx), wy = static_cast<T>(sp.wy);
          const std::size_t i00 = sz(sp.y0) * sz(w) + sz(sp.x0), i01 = sz(sp.y0) * sz(w) + sz(sp.x1);
          const std::size_t i10 = sz(sp.y1) * sz(w) + sz(sp.x0), i11 = sz(sp.y1) * sz(w) + sz(sp.x1);
          T gx = 0, gy = 0;
          for (int c = 0; c < ch; ++c) {
            const std::size_t base = (sz(n) * sz(ch) + sz(c)) * plane;
            const T g = self.grad.data[base + i];
            if (di) {
              di[base + i00] += g * (T(1) - wx) * (T(1) - wy);
              di[base + i01] += g * wx * (T(1) - wy);
              di[base + i10] += g * (T(1) - wx) * wy;
              di[base + i11] += g * wx * wy;
            }
            if (df) {
              const T* img = ip->value.data.data() + base;
              gx += g * ((T(1) - wy) * (img[i01] - img[i00]) + wy * (img[i11] - img[i10]));
              gy += g * ((T(1) - wx) * (img[i10] - img[i00]) + wx * (img[i11] - img[i01]));
            }
          }
          if (df) {
            if (!sp.clamp_x && w > 1) df[sz(n) * 2 * plane + i] += gx;
            if (!sp.clamp_y && h > 1) df[sz(n) * 2 * plane + plane + i] += gy;
          }
        }
    }
  });
}

template <class T>
Var<T> upscale_flow(const Var<T>& flow, int factor) {
  if (factor != 2 && factor != 4) throw ArgumentError("tensor_engine.upscale_flow: factor must be 2 or 4");
  const auto& s = flow->value.shape;
  if (s[1] != 2) throw ShapeError("tensor_engine.upscale_flow: flow needs 2 channels, got " + shape_string(s));
  const int h = s[2], w = s[3], oh = h * factor, ow = w * factor;
  const Axis ay = upsample_axis(h, factor), ax = upsample_axis(w, factor);
  Tensor<T> out(s[0], 2, oh, ow);
  const T f = static_cast<T>(factor);
  for (int nc = 0; nc < s[0] * 2; ++nc) {
    const T* src = flow->value.data.data() + sz(nc) * sz(h) * sz(w);
    T* dst = out.data.data() + sz(nc) * sz(oh) * sz(ow);
    for (int y = 0; y < oh; ++y) {
      const T wy = static_cast<T>(ay.wt[sz(y)]);
      const T* r0 = src + sz(ay.i0[sz(y)]) * sz(w);
      const T* r1 = src + sz(ay.i1[sz(y)]) * sz(w);
      for (int x = 0; x < ow; ++x) {
        const T wx = static_cast<T>(ax.wt[sz(x)]);
        const int x0 = ax.i0[sz(x)], x1 = ax.i1[sz(x)];
        const T top = (T(1) - wx) * r0[x0] + wx * r0[x1];
        const T bot = (T(1) - wx) * r1[x0] + wx * r1[x1];
        dst[sz(y) * sz(ow) + sz(x)] = f * ((T(1) - wy) * top + wy * bot);
      }
    }
  }
  return make_result<T>(std::move(out), {flow}, [=](Node<T>& self) {
    auto& d = self.parents[0]->ensure_grad().data;
    for (int nc = 0; nc < s[0] * 2; ++nc) {
      T* dsrc = d.data() + sz(nc) * sz(h) * sz(w);
      const T* g = self.grad.data.data() + sz(nc) * sz(oh) * sz(ow);
      for (int y = 0; y < oh; ++y) {
        const T wy = static_cast<T>(ay.wt[sz(y)]);
        T* r0 = dsrc + sz(ay.i0[sz(y)]) * sz(w);
        T* r1 = dsrc + sz(ay.i1[sz(y)]) * sz(w);
        for (int x = 0; x < ow; ++x) {
          const T wx = static_cast<T>(ax.wt[sz(x)]);
          const T gv = f * g[sz(y) * sz(ow) + sz(x)];
          const int x0 = ax.i0[sz(x)], x1 = ax.i1[sz(x)];
          r0[x0] += gv * (T(1) - wx) * (T(1) - wy);
          r0[x1] += gv * wx * (T(1) - wy);
          r1[x0] += gv * (T(1) - wx) * wy;
          r1[x1] += gv * wx * wy;
        }
      }
    }
  });
}

template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  check_same("mse", a->value.shape, b->value.shape);
  double acc = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i) {
    const double d = static_cast<double>(a->value.data[i]) - static_cast<double>(b->value.data[i]);
    acc += d * d;
  }
  const double count = static_cast<double>(a->value.size());
  Tensor<T> out(1, 1, 1, 1, static_cast<T>(acc / count));
  return make_result<T>(std::move(out), {a, b}, [count](Node<T>& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    const T k = static_cast<T>(2.0 * static_cast<double>(self.grad.data[0]) / count);
    T* da = pa->requires_grad ? pa->ensure_grad().data.data() : nullptr;
    T* db = pb->requires_grad ? pb->ensure_grad().data.data() : nullptr;
    for (std::size_t i = 0; i < pa->value.size(); ++i) {
      const T d = k * (pa->value.data[i] - pb->value.data[i]);
      if (da) da[i] += d;
      if (db) db[i] -= d;
    }
  });
}

template <class T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights) {
  check_same("weighted_sum", x->value.shape, weights.shape);
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    acc += static_cast<double>(weights.data[i]) * static_cast<double>(x->value.data[i]);
  Tensor<T> out(1, 1, 1, 1, static_cast<T>(acc));
  return make_result<T>(std::move(out), {x}, [weights](Node<T>& self) {
    auto& d = self.parents[0]->ensure_grad().data;
    const T g = self.grad.data[0];
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * weights.data[i];
  });
}

template <class T>
void backward(const Var<T>& loss) {
  if (loss->value.size() != 1)
    throw ArgumentError("tensor_engine.backward: loss must be a scalar, got " + shape_string(loss->value.shape));
  if (!loss->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.get(), 0}};
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order) {
    if (n->is_leaf())
      n->ensure_grad();
    else {
      n->ensure_grad();
      n->grad.fill(T(0));
    }
  }
  loss->grad.data[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

template <class T>
Tensor<T> he_normal(std::array<int, 4> shape, std::mt19937_64& rng, double gain) {
  const double fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
  std::normal_distribution<double> nd(0.0, gain * std::sqrt(2.0 / fan_in));
  Tensor<T> t(shape[0], shape[1], shape[2], shape[3]);
  for (auto& v : t.data) v = static_cast<T>(nd(rng));
  return t;
}

template <class T>
AdamState<T> AdamState<T>::init(const ParamStore<T>& store, AdamConfig cfg) {
  AdamState s;
  s.cfg = cfg;
  for (const auto& p : store.params()) {
    s.m.emplace_back(p->value.shape, std::vector<T>(p->value.size(), T(0)));
    s.v.emplace_back(p->value.shape, std::vector<T>(p->value.size(), T(0)));
  }
  return s;
}

template <class T>
void adam_step(ParamStore<T>& store, AdamState<T>& state) {
  const auto& ps = store.params();
  if (state.m.size() != ps.size() || state.v.size() != ps.size())
    throw ArgumentError("tensor_engine.adam_step: optimizer state is not initialized for this parameter set");
  for (std::size_t k = 0; k < ps.size(); ++k)
    if (!state.m[k].same_shape(ps[k]->value) || !state.v[k].same_shape(ps[k]->value))
      throw ArgumentError("tensor_engine.adam_step: moment shape mismatch for '" + ps[k]->name + "'");
  ++state.t;
  const auto& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto& p = *ps[k];
    p.ensure_grad();
    auto& m = state.m[k].data;
    auto& v = state.v[k].data;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      p.value.data[i] = static_cast<T>(p.value.data[i] - c.lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.epsilon));
    }
  }
}

namespace {

template <class T>
std::vector<GradcheckEntry> numeric_compare(const std::function<Var<T>()>& loss_fn, const std::vector<Var<T>>& wrt,
                                            const std::vector<std::vector<double>>& analytic,
                                            const GradcheckOptions& opts) {
  std::uint64_t base_hash;
  {
    NoGradGuard ng;
    KinkTracker kt;
    loss_fn();
    base_hash = kt.hash();
  }
  auto eval = [&](std::uint64_t& hash) {
    NoGradGuard ng;
    KinkTracker kt;
    const double l = static_cast<double>(loss_fn()->value.data[0]);
    hash = kt.hash();
    return l;
  };

  std::mt19937_64 rng(opts.seed);
  std::vector<GradcheckEntry> out;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    auto& node = *wrt[k];
    GradcheckEntry e;
    e.name = node.name.empty() ? "input" + std::to_string(k) : node.name;
    std::vector<std::size_t> idx(node.value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opts.max_entries_per_tensor > 0 && idx.size() > sz(opts.max_entries_per_tensor)) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(sz(opts.max_entries_per_tensor));
    }
    double max_diff = 0, max_a = 0, max_n = 0;
    for (std::size_t i : idx) {
      const T orig = node.value.data[i];
      const T up = static_cast<T>(orig + opts.h);
      const T dn = static_cast<T>(orig - opts.h);
      std::uint64_t hp = 0, hm = 0;
      node.value.data[i] = up;
      const double lp = eval(hp);
      node.value.data[i] = dn;
      const double lm = eval(hm);
      node.value.data[i] = orig;
      if (hp != base_hash || hm != base_hash) {
        ++e.skipped_kinks;
        continue;
      }
      const double num = (lp - lm) / (static_cast<double>(up) - static_cast<double>(dn));
      const double ana = analytic[k][i];
      max_diff = std::max(max_diff, std::abs(ana - num));
      max_a = std::max(max_a, std::abs(ana));
      max_n = std::max(max_n, std::abs(num));
      ++e.checked;
    }
    const double denom = std::max(max_a, max_n);
    e.max_rel_error = denom > 1e-30 ? max_diff / denom : 0.0;
    out.push_back(e);
  }
  return out;
}

}  // namespace

template <class T>
std::vector<GradcheckEntry> gradcheck(const std::function<Var<T>()>& loss_fn, const std::vector<Var<T>>& wrt,
                                      const GradcheckOptions& opts) {
  for (const auto& v : wrt) {
    v->requires_grad = true;
    v->ensure_grad().fill(T(0));
  }
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (const auto& v : wrt) analytic.emplace_back(v->grad.data.begin(), v->grad.data.end());
  return numeric_compare<T>(loss_fn, wrt, analytic, opts);
}

std::vector<GradcheckEntry> gradcheck_reference(const std::function<Var<double>()>& loss_fn,
                                                const std::vector<Var<double>>& wrt,
                                                const std::vector<Tensor<double>>& analytic,
                                                const GradcheckOptions& opts) {
  if (analytic.size() != wrt.size())
    throw ArgumentError("tensor_engine.gradcheck_reference: one analytic gradient per leaf is required");
  std::vector<std::vector<double>> a;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    if (!analytic[k].same_shape(wrt[k]->value))
      throw ShapeError("tensor_engine.gradcheck_reference: analytic gradient shape mismatch for leaf " +
                       std::to_string(k));
    a.push_back(analytic[k].data);
  }
  return numeric_compare<double>(loss_fn, wrt, a, opts);
}

#define MFQE_INSTANTIATE(T)                                                                                   \
  template struct Tensor<T>;                                                                                  \
  template struct Node<T>;                                                                                    \
  template class ParamStore<T>;                                                                               \
  template struct AdamState<T>;                                                                               \
  template Var<T> constant<T>(Tensor<T>);                                                                     \
  template Var<T> leaf<T>(Tensor<T>, bool);                                                                   \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, Padding);                       \
  template Var<T> prelu<T>(const Var<T>&, const Var<T>&);                                                     \
  template Var<T> tanh<T>(const Var<T>&);                                                                     \
  template Var<T> scale<T>(const Var<T>&, T);                                                                 \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> concat_channels<T>(const std::vector<Var<T>>&);                                             \
  template Var<T> bilinear_sample<T>(const Var<T>&, const Var<T>&);                                           \
  template Var<T> upscale_flow<T>(const Var<T>&, int);                                                        \
  template Var<T> mse<T>(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> weighted_sum<T>(const Var<T>&, const Tensor<T>&);                                           \
  template void backward<T>(const Var<T>&);                                                                   \
  template Tensor<T> he_normal<T>(std::array<int, 4>, std::mt19937_64&, double);                              \
  template void adam_step<T>(ParamStore<T>&, AdamState<T>&);                                                  \
  template std::vector<GradcheckEntry> gradcheck<T>(const std::function<Var<T>()>&, const std::vector<Var<T>>&, \
                                                    const GradcheckOptions&);

MFQE_INSTANTIATE(float)
MFQE_INSTANTIATE(double)

}  // namespace mfqe::nn
