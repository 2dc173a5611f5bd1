#include "mfqe/mc_subnet.hpp"

#include <vector>

#include "layers.hpp"
#include "mfqe/errors.hpp"

namespace mfqe {

using detail::Act;
using detail::ConvSpec;

namespace {

constexpr double kFlowLayerGain = 0.01;

struct McLayers {
  std::vector<ConvSpec> coarse, fine, pix;
};

McLayers layers(int h) {
  McLayers l;
  l.coarse = {{"coarse.0", 2, h, 5, 2, Act::PRelu},
              {"coarse.1", h, h, 3, 1, Act::PRelu},
              {"coarse.2", h, h, 5, 2, Act::PRelu},
              {"coarse.3", h, h, 3, 1, Act::PRelu},
              {"coarse.4", h, 2, 3, 1, Act::Tanh}};
  l.fine = {{"fine.0", 5, h, 5, 2, Act::PRelu},
            {"fine.1", h, h, 3, 1, Act::PRelu},
            {"fine.2", h, h, 3, 1, Act::PRelu},
            {"fine.3", h, 2, 3, 1, Act::Tanh}};
  l.pix = {{"pix.0", 5, h, 3, 1, Act::PRelu},
           {"pix.1", h, h, 3, 1, Act::PRelu},
           {"pix.2", h, h, 3, 1, Act::PRelu},
           {"pix.3", h, h, 3, 1, Act::PRelu},
           {"pix.4", h, 2, 3, 1, Act::Tanh}};
  return l;
}

template <class T>
nn::Var<T> run_stack(nn::Var<T> x, const std::vector<ConvSpec>& stack, const nn::ParamStore<T>& store,
                     const std::string& prefix) {
  for (const auto& s : stack) x = detail::apply_conv(x, store, prefix, s);
  return x;
}

}  // namespace

void McConfig::validate() const {
  if (!(max_displacement > 0.0)) throw ArgumentError("mc_subnet.McConfig: max_displacement must be > 0");
  if (width < 1 || reduction < 1) throw ArgumentError("mc_subnet.McConfig: width and reduction must be >= 1");
}

int McConfig::hidden() const { return std::max(1, width / reduction); }

template <class T>
void mc_init(nn::ParamStore<T>& store, const McConfig& cfg, std::mt19937_64& rng, const std::string& prefix) {
  cfg.validate();
  const auto l = layers(cfg.hidden());
  for (const auto* stack : {&l.coarse, &l.fine, &l.pix})
    for (const auto& s : *stack) detail::init_conv(store, prefix, s, rng, s.act == Act::Tanh ? kFlowLayerGain : 1.0);
}

template <class T>
McOutputs<T> mc_forward(const nn::Var<T>& f_np, const nn::Var<T>& f_p, const nn::ParamStore<T>& store,
                        const McConfig& cfg, const std::string& prefix) {
  cfg.validate();
  const auto& s = f_np->value.shape;
  if (s != f_p->value.shape || s[1] != 1)
    throw ShapeError("mc_subnet.mc_forward: expected two equal single-channel inputs, got " + nn::shape_string(s) +
                     " and " + nn::shape_string(f_p->value.shape));
  if (s[2] % 4 != 0 || s[3] % 4 != 0)
    throw ShapeError("mc_subnet.mc_forward: frame dims " + std::to_string(s[3]) + "x" + std::to_string(s[2]) +
                     " are not divisible by 4");
  const auto l = layers(cfg.hidden());
  const T d = static_cast<T>(cfg.max_displacement);

  McOutputs<T> out;
  auto t4 = run_stack(nn::concat_channels<T>({f_np, f_p}), l.coarse, store, prefix);
  out.m4 = nn::upscale_flow(nn::scale(t4, d / T(4)), 4);
  auto w4 = nn::bilinear_sample(f_p, out.m4);

  auto t2 = run_stack(nn::concat_channels<T>({f_np, f_p, out.m4, w4}), l.fine, store, prefix);
  out.m2 = nn::add(out.m4, nn::upscale_flow(nn::scale(t2, d / T(2)), 2));
  auto w2 = nn::bilinear_sample(f_p, out.m2);

  auto t1 = run_stack(nn::concat_channels<T>({f_p, f_np, out.m2, w2}), l.pix, store, prefix);
  out.m = nn::add(out.m2, nn::scale(t1, d));
  out.warped_pqf = nn::bilinear_sample(f_p, out.m);
  return out;
}

template <class T>
nn::Var<T> mc_supervised_loss(const McOutputs<T>& out, const nn::Var<T>& raw_np, const nn::Var<T>& raw_p,
                              const McConfig& cfg) {
  if (!raw_np || !raw_p) throw ArgumentError("mc_subnet.mc_supervised_loss: raw frames are required");
  auto loss = nn::mse(nn::bilinear_sample(raw_p, out.m), raw_np);
  if (cfg.strict_eq6) return loss;
  auto aux = nn::add(nn::mse(nn::bilinear_sample(raw_p, out.m4), raw_np),
                     nn::mse(nn::bilinear_sample(raw_p, out.m2), raw_np));
  return nn::add(loss, nn::scale(aux, T(0.1)));
}

template void mc_init<float>(nn::ParamStore<float>&, const McConfig&, std::mt19937_64&, const std::string&);
template void mc_init<double>(nn::ParamStore<double>&, const McConfig&, std::mt19937_64&, const std::string&);
template McOutputs<float> mc_forward<float>(const nn::Var<float>&, const nn::Var<float>&, const nn::ParamStore<float>&,
                                            const McConfig&, const std::string&);
template McOutputs<double> mc_forward<double>(const nn::Var<double>&, const nn::Var<double>&,
                                              const nn::ParamStore<double>&, const McConfig&, const std::string&);
template nn::Var<float> mc_supervised_loss<float>(const McOutputs<float>&, const nn::Var<float>&,
                                                  const nn::Var<float>&, const McConfig&);
template nn::Var<double> mc_supervised_loss<double>(const McOutputs<double>&, const nn::Var<double>&,
                                                    const nn::Var<double>&, const McConfig&);

}  // namespace mfqe
