#pragma once

#include <random>
#include <string>

#include "mfqe/tensor_engine.hpp"

namespace mfqe {

struct McConfig {
  double max_displacement = 8.0;  // pixels; scale applied to each stage's tanh output
  int width = 24;                 // hidden channel width
  int reduction = 1;              // toy runs divide the width by this
  bool strict_eq6 = false;        // drop the 0.1-weighted coarse-stage loss terms

  void validate() const;
  int hidden() const;
};

// All flows are (N, 2, H, W) in full-resolution pixels: channel 0 horizontal, 1 vertical.
template <class T>
struct McOutputs {
  nn::Var<T> m4;          // coarse x4 stage
  nn::Var<T> m2;          // m4 + x2 refinement
  nn::Var<T> m;           // m2 + pixel-wise refinement
  nn::Var<T> warped_pqf;  // f_p warped by m
};

/// Registers every MC parameter under `prefix` (default "mc.").
template <class T>
void mc_init(nn::ParamStore<T>& store, const McConfig& cfg, std::mt19937_64& rng, const std::string& prefix = "mc.");

/// f_np, f_p: (N, 1, H, W) in [0,1], H and W divisible by 4.
template <class T>
McOutputs<T> mc_forward(const nn::Var<T>& f_np, const nn::Var<T>& f_p, const nn::ParamStore<T>& store,
                        const McConfig& cfg, const std::string& prefix = "mc.");

/// Warps the raw PQF by the estimated fields and compares against the raw non-PQF.
/// Adds 0.1 x the m4 and m2 terms unless cfg.strict_eq6.
template <class T>
nn::Var<T> mc_supervised_loss(const McOutputs<T>& out, const nn::Var<T>& raw_np, const nn::Var<T>& raw_p,
                              const McConfig& cfg);

}  // namespace mfqe
