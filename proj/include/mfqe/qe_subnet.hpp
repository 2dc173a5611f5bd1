#pragma once

#include <random>
#include <string>

#include "mfqe/tensor_engine.hpp"

namespace mfqe {

struct QeConfig {
  int reduction = 1;          // divides every hidden width (conv9 stays at 1 channel)
  bool clamp_output = false;  // clamp enhanced to [0,1]; the clamped tensor carries no gradient
  double conv9_gain = 0.1;    // init std of the linear output layer, relative to He

  void validate() const;
  int width(int layer) const;  // output channels of conv<layer>, layer in 1..9
};

template <class T>
struct QeOutput {
  nn::Var<T> residual;
  nn::Var<T> enhanced;  // f_np + residual
};

/// Registers conv1..conv9 under `prefix` ("qe." for the multi-frame net, "qe_sf." for the single-frame one).
template <class T>
void qe_init(nn::ParamStore<T>& store, const QeConfig& cfg, std::mt19937_64& rng, const std::string& prefix = "qe.");

/// C1 = conv1(p1), C2 = conv2(np), C3 = conv3(p2); C4 = conv4(C1|C2), C5 = conv5(C2|C3);
/// C6 = conv6(C4), C7 = conv7(C5); C8 = conv8(C6|C7); residual = conv9(C8).
template <class T>
QeOutput<T> qe_forward(const nn::Var<T>& f_p1_warped, const nn::Var<T>& f_np, const nn::Var<T>& f_p2_warped,
                       const nn::ParamStore<T>& store, const QeConfig& cfg, const std::string& prefix = "qe.");

/// The same network applied to (f, f, f) with its own parameter set.
template <class T>
QeOutput<T> qe_single_frame(const nn::Var<T>& f, const nn::ParamStore<T>& store, const QeConfig& cfg,
                            const std::string& prefix = "qe_sf.");

}  // namespace mfqe
