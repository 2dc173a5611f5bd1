#pragma once

// Shared conv + activation building block for the subnetworks.

#include <string>

#include "mfqe/tensor_engine.hpp"

namespace mfqe::detail {

enum class Act { PRelu, Tanh, Linear };

struct ConvSpec {
  std::string name;
  int in_ch, out_ch, kernel, stride;
  Act act;
};

// Registers <prefix><name>.w/.b (and .a for PReLU slopes, initialized to 0.25).
template <class T>
void init_conv(nn::ParamStore<T>& store, const std::string& prefix, const ConvSpec& s, std::mt19937_64& rng,
               double gain = 1.0) {
  store.add(prefix + s.name + ".w", nn::he_normal<T>({s.out_ch, s.in_ch, s.kernel, s.kernel}, rng, gain));
  store.add(prefix + s.name + ".b", nn::Tensor<T>(1, s.out_ch, 1, 1));
  if (s.act == Act::PRelu) store.add(prefix + s.name + ".a", nn::Tensor<T>(1, s.out_ch, 1, 1, T(0.25)));
}

template <class T>
nn::Var<T> apply_conv(const nn::Var<T>& x, const nn::ParamStore<T>& store, const std::string& prefix,
                      const ConvSpec& s) {
  auto y = nn::conv2d(x, store.get(prefix + s.name + ".w"), store.get(prefix + s.name + ".b"), s.stride,
                      nn::Padding::Same);
  switch (s.act) {
    case Act::PRelu:
      return nn::prelu(y, store.get(prefix + s.name + ".a"));
    case Act::Tanh:
      return nn::tanh(y);
    case Act::Linear:
      break;
  }
  return y;
}

}  // namespace mfqe::detail
