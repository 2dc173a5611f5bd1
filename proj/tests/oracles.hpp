#pragma once

// Independent reference implementations used to cross-check the library.

#include <algorithm>
#include <cmath>
#include <vector>

#include "mfqe/tensor_engine.hpp"

namespace oracle {

// Direct quadruple loop. Same padding: total pad = max((ceil(in/s)-1)*s + k - in, 0),
// with the odd pixel on the bottom/right.
template <class T>
mfqe::nn::Tensor<T> conv2d(const mfqe::nn::Tensor<T>& x, const mfqe::nn::Tensor<T>& w,
                           const mfqe::nn::Tensor<T>& b, int stride, bool same) {
  const int n = x.n(), cin = x.c(), h = x.h(), wd = x.w();
  const int cout = w.n(), kh = w.h(), kw = w.w();
  int oh, ow, pt = 0, pl = 0;
  if (same) {
    oh = (h + stride - 1) / stride;
    ow = (wd + stride - 1) / stride;
    pt = std::max((oh - 1) * stride + kh - h, 0) / 2;
    pl = std::max((ow - 1) * stride + kw - wd, 0) / 2;
  } else {
    oh = (h - kh) / stride + 1;
    ow = (wd - kw) / stride + 1;
  }
  mfqe::nn::Tensor<T> out(n, cout, oh, ow);
  for (int i = 0; i < n; ++i)
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          T acc = 0;
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * stride + ky - pt, ix = ox * stride + kx - pl;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += w.at(co, ci, ky, kx) * x.at(i, ci, iy, ix);
              }
          out.at(i, co, oy, ox) = acc + b.at(0, co, 0, 0);
        }
  return out;
}

// Warp by integer displacements: plain indexed gather with border clamping.
template <class T>
mfqe::nn::Tensor<T> gather(const mfqe::nn::Tensor<T>& img, const mfqe::nn::Tensor<T>& flow) {
  mfqe::nn::Tensor<T> out(img.n(), img.c(), img.h(), img.w());
  for (int n = 0; n < img.n(); ++n)
    for (int y = 0; y < img.h(); ++y)
      for (int x = 0; x < img.w(); ++x) {
        const int sx = std::clamp(x + static_cast<int>(std::lround(flow.at(n, 0, y, x))), 0, img.w() - 1);
        const int sy = std::clamp(y + static_cast<int>(std::lround(flow.at(n, 1, y, x))), 0, img.h() - 1);
        for (int c = 0; c < img.c(); ++c) out.at(n, c, y, x) = img.at(n, c, sy, sx);
      }
  return out;
}

}  // namespace oracle
