#include "mfqe/qe_subnet.hpp"

#include <algorithm>

#include "layers.hpp"
#include "mfqe/errors.hpp"

namespace mfqe {

using detail::Act;
using detail::ConvSpec;

namespace {

constexpr int kWidths[9] = {128, 128, 128, 64, 64, 64, 64, 32, 1};
constexpr int kKernels[9] = {9, 9, 9, 7, 7, 3, 3, 1, 5};

ConvSpec spec(const QeConfig& cfg, int layer) {
  int in = 1;
  switch (layer) {
    case 4: in = cfg.width(1) + cfg.width(2); break;
    case 5: in = cfg.width(2) + cfg.width(3); break;
    case 6: in = cfg.width(4); break;
    case 7: in = cfg.width(5); break;
    case 8: in = cfg.width(6) + cfg.width(7); break;
    case 9: in = cfg.width(8); break;
    default: break;
  }
  return {"conv" + std::to_string(layer), in, cfg.width(layer), kKernels[layer - 1], 1,
          layer == 9 ? Act::Linear : Act::PRelu};
}

}  // namespace

void QeConfig::validate() const {
  if (reduction < 1) throw ArgumentError("qe_subnet.QeConfig: reduction must be >= 1");
  if (!(conv9_gain >= 0.0)) throw ArgumentError("qe_subnet.QeConfig: conv9_gain must be >= 0");
}

int QeConfig::width(int layer) const {
  if (layer < 1 || layer > 9) throw ArgumentError("qe_subnet.QeConfig.width: layer must be in 1..9");
  if (layer == 9) return 1;
  return std::max(1, kWidths[layer - 1] / reduction);
}

template <class T>
void qe_init(nn::ParamStore<T>& store, const QeConfig& cfg, std::mt19937_64& rng, const std::string& prefix) {
  cfg.validate();
  for (int l = 1; l <= 9; ++l) detail::init_conv(store, prefix, spec(cfg, l), rng, l == 9 ? cfg.conv9_gain : 1.0);
}

template <class T>
QeOutput<T> qe_forward(const nn::Var<T>& f_p1_warped, const nn::Var<T>& f_np, const nn::Var<T>& f_p2_warped,
                       const nn::ParamStore<T>& store, const QeConfig& cfg, const std::string& prefix) {
  cfg.validate();
  const auto& s = f_np->value.shape;
  if (s[1] != 1 || f_p1_warped->value.shape != s || f_p2_warped->value.shape != s)
    throw ShapeError("qe_subnet.qe_forward: expected three equal single-channel inputs, got " +
                     nn::shape_string(f_p1_warped->value.shape) + ", " + nn::shape_string(s) + ", " +
                     nn::shape_string(f_p2_warped->value.shape));
  auto conv = [&](int layer, const nn::Var<T>& x) { return detail::apply_conv(x, store, prefix, spec(cfg, layer)); };
  auto c1 = conv(1, f_p1_warped);
  auto c2 = conv(2, f_np);
  auto c3 = conv(3, f_p2_warped);
  auto c4 = conv(4, nn::concat_channels<T>({c1, c2}));
  auto c5 = conv(5, nn::concat_channels<T>({c2, c3}));
  auto c6 = conv(6, c4);
  auto c7 = conv(7, c5);
  auto c8 = conv(8, nn::concat_channels<T>({c6, c7}));
  QeOutput<T> out;
  out.residual = conv(9, c8);
  out.enhanced = nn::add(f_np, out.residual);
  if (cfg.clamp_output) {
    auto v = out.enhanced->value;
    for (auto& x : v.data) x = std::clamp(x, T(0), T(1));
    out.enhanced = nn::constant(std::move(v));
  }
  return out;
}

template <class T>
QeOutput<T> qe_single_frame(const nn::Var<T>& f, const nn::ParamStore<T>& store, const QeConfig& cfg,
                            const std::string& prefix) {
  return qe_forward(f, f, f, store, cfg, prefix);
}

template void qe_init<float>(nn::ParamStore<float>&, const QeConfig&, std::mt19937_64&, const std::string&);
template void qe_init<double>(nn::ParamStore<double>&, const QeConfig&, std::mt19937_64&, const std::string&);
template QeOutput<float> qe_forward<float>(const nn::Var<float>&, const nn::Var<float>&, const nn::Var<float>&,
                                           const nn::ParamStore<float>&, const QeConfig&, const std::string&);
template QeOutput<double> qe_forward<double>(const nn::Var<double>&, const nn::Var<double>&, const nn::Var<double>&,
                                             const nn::ParamStore<double>&, const QeConfig&, const std::string&);
template QeOutput<float> qe_single_frame<float>(const nn::Var<float>&, const nn::ParamStore<float>&, const QeConfig&,
                                                const std::string&);
template QeOutput<double> qe_single_frame<double>(const nn::Var<double>&, const nn::ParamStore<double>&,
                                                  const QeConfig&, const std::string&);

}  // namespace mfqe
