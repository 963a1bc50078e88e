#include "mseg/conv.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mseg/errors.hpp"

namespace mseg::ag {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

int conv_out_dim(int in, int k, int stride, int pad) {
  const int num = in + 2 * pad - k;
  if (num < 0 || stride < 1) throw ArgumentError("conv_out_dim: kernel exceeds padded input");
  return num / stride + 1;
}

namespace {

// col is (C*kh*kw, OH*OW), rows ordered (c, ki, kj).
void im2col(const double* x, int c_in, int h, int w, int kh, int kw, int stride, int pad,
            int oh, int ow, double* col) {
  const std::int64_t ohw = static_cast<std::int64_t>(oh) * ow;
  for (int c = 0; c < c_in; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        double* row = col + (static_cast<std::int64_t>(c) * kh * kw + ki * kw + kj) * ohw;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ki;
          double* dst = row + static_cast<std::int64_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::int64_t>(c) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kj;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
}

// Scatter-add the col layout back onto the input grid.
void col2im_acc(const double* col, int c_in, int h, int w, int kh, int kw, int stride, int pad,
                int oh, int ow, double* dx) {
  const std::int64_t ohw = static_cast<std::int64_t>(oh) * ow;
  for (int c = 0; c < c_in; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const double* row = col + (static_cast<std::int64_t>(c) * kh * kw + ki * kw + kj) * ohw;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          double* dst = dx + (static_cast<std::int64_t>(c) * h + iy) * w;
          const double* src = row + static_cast<std::int64_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
}

struct Conv2dDims {
  int cin, h, w, cout, kh, kw, oh, ow, groups, cin_g, cout_g;
};

Conv2dDims conv2d_dims(const Tensor& x, const Tensor& wt, int stride, int pad, int groups) {
  if (x.rank() != 3) throw ArgumentError("conv2d: input must be (C,H,W)");
  if (wt.rank() != 4) throw ArgumentError("conv2d: weight must be (Cout,Cin/g,kh,kw)");
  Conv2dDims d;
  d.cin = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.cout = wt.dim(0);
  d.kh = wt.dim(2);
  d.kw = wt.dim(3);
  d.groups = groups;
  if (groups < 1 || d.cin % groups != 0 || d.cout % groups != 0)
    throw ArgumentError("conv2d: groups must divide both channel counts");
  d.cin_g = d.cin / groups;
  d.cout_g = d.cout / groups;
  if (wt.dim(1) != d.cin_g) throw ArgumentError("conv2d: weight in-channels mismatch");
  d.oh = conv_out_dim(d.h, d.kh, stride, pad);
  d.ow = conv_out_dim(d.w, d.kw, stride, pad);
  if (d.oh < 1 || d.ow < 1) throw ArgumentError("conv2d: empty output");
  return d;
}

Var conv2d_1x1(const Var& x, const Var& wt, const Conv2dDims& d) {
  const std::int64_t hw = static_cast<std::int64_t>(d.h) * d.w;
  Tensor out({d.cout, d.h, d.w});
  for (int g = 0; g < d.groups; ++g) {
    CMapMat wg(wt->value.data() + static_cast<std::int64_t>(g) * d.cout_g * d.cin_g, d.cout_g,
               d.cin_g);
    CMapMat xg(x->value.data() + static_cast<std::int64_t>(g) * d.cin_g * hw, d.cin_g, hw);
    MapMat og(out.data() + static_cast<std::int64_t>(g) * d.cout_g * hw, d.cout_g, hw);
    og.noalias() = wg * xg;
  }
  return make_node(std::move(out), {x, wt}, [d, hw](Node& n) {
    const Tensor& xv = n.parents[0]->value;
    const Tensor& wv = n.parents[1]->value;
    for (int g = 0; g < d.groups; ++g) {
      CMapMat dyg(n.grad.data() + static_cast<std::int64_t>(g) * d.cout_g * hw, d.cout_g, hw);
      if (n.parents[1]->needs_grad) {
        CMapMat xg(xv.data() + static_cast<std::int64_t>(g) * d.cin_g * hw, d.cin_g, hw);
        MapMat dwg(n.parents[1]->g().data() + static_cast<std::int64_t>(g) * d.cout_g * d.cin_g,
                   d.cout_g, d.cin_g);
        dwg.noalias() += dyg * xg.transpose();
      }
      if (n.parents[0]->needs_grad) {
        CMapMat wg(wv.data() + static_cast<std::int64_t>(g) * d.cout_g * d.cin_g, d.cout_g,
                   d.cin_g);
        MapMat dxg(n.parents[0]->g().data() + static_cast<std::int64_t>(g) * d.cin_g * hw, d.cin_g,
                   hw);
        dxg.noalias() += wg.transpose() * dyg;
      }
    }
  });
}

Var conv2d_depthwise(const Var& x, const Var& wt, const Conv2dDims& d, int stride, int pad) {
  Tensor out({d.cout, d.oh, d.ow});
  for (int c = 0; c < d.cin; ++c) {
    const double* xp = x->value.data() + static_cast<std::int64_t>(c) * d.h * d.w;
    const double* wp = wt->value.data() + static_cast<std::int64_t>(c) * d.kh * d.kw;
    double* op = out.data() + static_cast<std::int64_t>(c) * d.oh * d.ow;
    for (int oy = 0; oy < d.oh; ++oy)
      for (int ox = 0; ox < d.ow; ++ox) {
        double acc = 0.0;
        for (int ki = 0; ki < d.kh; ++ki) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= d.h) continue;
          for (int kj = 0; kj < d.kw; ++kj) {
            const int ix = ox * stride - pad + kj;
            if (ix < 0 || ix >= d.w) continue;
            acc += wp[ki * d.kw + kj] * xp[static_cast<std::int64_t>(iy) * d.w + ix];
          }
        }
        op[static_cast<std::int64_t>(oy) * d.ow + ox] = acc;
      }
  }
  return make_node(std::move(out), {x, wt}, [d, stride, pad](Node& n) {
    const Tensor& xv = n.parents[0]->value;
    const Tensor& wv = n.parents[1]->value;
    const bool need_dx = n.parents[0]->needs_grad;
    const bool need_dw = n.parents[1]->needs_grad;
    for (int c = 0; c < d.cin; ++c) {
      const double* xp = xv.data() + static_cast<std::int64_t>(c) * d.h * d.w;
      const double* wp = wv.data() + static_cast<std::int64_t>(c) * d.kh * d.kw;
      const double* dyp = n.grad.data() + static_cast<std::int64_t>(c) * d.oh * d.ow;
      double* dxp = need_dx ? n.parents[0]->g().data() + static_cast<std::int64_t>(c) * d.h * d.w
                            : nullptr;
      double* dwp = need_dw ? n.parents[1]->g().data() + static_cast<std::int64_t>(c) * d.kh * d.kw
                            : nullptr;
      for (int oy = 0; oy < d.oh; ++oy)
        for (int ox = 0; ox < d.ow; ++ox) {
          const double dy = dyp[static_cast<std::int64_t>(oy) * d.ow + ox];
          if (dy == 0.0) continue;
          for (int ki = 0; ki < d.kh; ++ki) {
            const int iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= d.h) continue;
            for (int kj = 0; kj < d.kw; ++kj) {
              const int ix = ox * stride - pad + kj;
              if (ix < 0 || ix >= d.w) continue;
              const std::int64_t xi = static_cast<std::int64_t>(iy) * d.w + ix;
              if (dxp) dxp[xi] += wp[ki * d.kw + kj] * dy;
              if (dwp) dwp[ki * d.kw + kj] += xp[xi] * dy;
            }
          }
        }
    }
  });
}

}  // namespace

Var conv2d(const Var& x, const Var& wt, int stride, int pad, int groups) {
  const Conv2dDims d = conv2d_dims(x->value, wt->value, stride, pad, groups);
  if (d.kh == 1 && d.kw == 1 && stride == 1 && pad == 0) return conv2d_1x1(x, wt, d);
  if (d.groups == d.cin && d.cin_g == 1 && d.cout_g == 1)
    return conv2d_depthwise(x, wt, d, stride, pad);

  const std::int64_t ohw = static_cast<std::int64_t>(d.oh) * d.ow;
  const std::int64_t krows_g = static_cast<std::int64_t>(d.cin_g) * d.kh * d.kw;
  Tensor col({d.cin * d.kh * d.kw, d.oh, d.ow});
  im2col(x->value.data(), d.cin, d.h, d.w, d.kh, d.kw, stride, pad, d.oh, d.ow, col.data());
  Tensor out({d.cout, d.oh, d.ow});
  for (int g = 0; g < d.groups; ++g) {
    CMapMat wg(wt->value.data() + g * d.cout_g * krows_g, d.cout_g, krows_g);
    CMapMat cg(col.data() + g * krows_g * ohw, krows_g, ohw);
    MapMat og(out.data() + g * d.cout_g * ohw, d.cout_g, ohw);
    og.noalias() = wg * cg;
  }
  // The col buffer is rebuilt in backward; retaining it across a whole
  // sequence graph would dominate memory.
  return make_node(std::move(out), {x, wt}, [d, stride, pad, ohw, krows_g](Node& n) {
    const Tensor& xv = n.parents[0]->value;
    const Tensor& wv = n.parents[1]->value;
    Tensor col2({d.cin * d.kh * d.kw, d.oh, d.ow});
    im2col(xv.data(), d.cin, d.h, d.w, d.kh, d.kw, stride, pad, d.oh, d.ow, col2.data());
    if (n.parents[1]->needs_grad) {
      for (int g = 0; g < d.groups; ++g) {
        CMapMat dyg(n.grad.data() + g * d.cout_g * ohw, d.cout_g, ohw);
        CMapMat cg(col2.data() + g * krows_g * ohw, krows_g, ohw);
        MapMat dwg(n.parents[1]->g().data() + g * d.cout_g * krows_g, d.cout_g, krows_g);
        dwg.noalias() += dyg * cg.transpose();
      }
    }
    if (n.parents[0]->needs_grad) {
      Tensor dcol({d.cin * d.kh * d.kw, d.oh, d.ow});
      for (int g = 0; g < d.groups; ++g) {
        CMapMat wg(wv.data() + g * d.cout_g * krows_g, d.cout_g, krows_g);
        CMapMat dyg(n.grad.data() + g * d.cout_g * ohw, d.cout_g, ohw);
        MapMat dcg(dcol.data() + g * krows_g * ohw, krows_g, ohw);
        dcg.noalias() = wg.transpose() * dyg;
      }
      col2im_acc(dcol.data(), d.cin, d.h, d.w, d.kh, d.kw, stride, pad, d.oh, d.ow,
                 n.parents[0]->g().data());
    }
  });
}

Var conv_transpose2d(const Var& x, const Var& wt, int stride, int pad, int out_h, int out_w) {
  if (x->value.rank() != 3) throw ArgumentError("conv_transpose2d: input must be (C,H,W)");
  if (wt->value.rank() != 4) throw ArgumentError("conv_transpose2d: weight must be (Cin,Cout,kh,kw)");
  const int cin = x->value.dim(0), ih = x->value.dim(1), iw = x->value.dim(2);
  const int cout = wt->value.dim(1), kh = wt->value.dim(2), kw = wt->value.dim(3);
  if (wt->value.dim(0) != cin) throw ArgumentError("conv_transpose2d: weight in-channels mismatch");
  const int full_h = (ih - 1) * stride - 2 * pad + kh;
  const int full_w = (iw - 1) * stride - 2 * pad + kw;
  if (out_h < 1 || out_w < 1 || out_h > full_h || out_w > full_w)
    throw ArgumentError("conv_transpose2d: target size out of range");

  const std::int64_t ihw = static_cast<std::int64_t>(ih) * iw;
  const std::int64_t krows = static_cast<std::int64_t>(cout) * kh * kw;
  Tensor col({static_cast<int>(krows), ih, iw});
  {
    CMapMat w2(wt->value.data(), cin, krows);
    CMapMat xm(x->value.data(), cin, ihw);
    MapMat cm(col.data(), krows, ihw);
    cm.noalias() = w2.transpose() * xm;
  }
  Tensor out({cout, out_h, out_w});
  for (int co = 0; co < cout; ++co)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const double* row = col.data() + (static_cast<std::int64_t>(co) * kh * kw + ki * kw + kj) * ihw;
        for (int i = 0; i < ih; ++i) {
          const int oy = i * stride - pad + ki;
          if (oy < 0 || oy >= out_h) continue;
          double* dst = out.data() + (static_cast<std::int64_t>(co) * out_h + oy) * out_w;
          const double* src = row + static_cast<std::int64_t>(i) * iw;
          for (int j = 0; j < iw; ++j) {
            const int ox = j * stride - pad + kj;
            if (ox >= 0 && ox < out_w) dst[ox] += src[j];
          }
        }
      }
  return make_node(std::move(out), {x, wt},
                   [cin, ih, iw, cout, kh, kw, stride, pad, out_h, out_w, ihw, krows](Node& n) {
                     // dcol gathers dy at each input position's footprint.
                     Tensor dcol({static_cast<int>(krows), ih, iw});
                     for (int co = 0; co < cout; ++co)
                       for (int ki = 0; ki < kh; ++ki)
                         for (int kj = 0; kj < kw; ++kj) {
                           double* row = dcol.data() +
                                         (static_cast<std::int64_t>(co) * kh * kw + ki * kw + kj) * ihw;
                           for (int i = 0; i < ih; ++i) {
                             const int oy = i * stride - pad + ki;
                             double* dst = row + static_cast<std::int64_t>(i) * iw;
                             if (oy < 0 || oy >= out_h) {
                               std::fill(dst, dst + iw, 0.0);
                               continue;
                             }
                             const double* src =
                                 n.grad.data() + (static_cast<std::int64_t>(co) * out_h + oy) * out_w;
                             for (int j = 0; j < iw; ++j) {
                               const int ox = j * stride - pad + kj;
                               dst[j] = (ox >= 0 && ox < out_w) ? src[ox] : 0.0;
                             }
                           }
                         }
                     CMapMat dcm(dcol.data(), krows, ihw);
                     if (n.parents[0]->needs_grad) {
                       CMapMat w2(n.parents[1]->value.data(), cin, krows);
                       MapMat dxm(n.parents[0]->g().data(), cin, ihw);
                       dxm.noalias() += w2 * dcm;
                     }
                     if (n.parents[1]->needs_grad) {
                       CMapMat xm(n.parents[0]->value.data(), cin, ihw);
                       MapMat dwm(n.parents[1]->g().data(), cin, krows);
                       dwm.noalias() += xm * dcm.transpose();
                     }
                   });
}

namespace {

void im2col3d(const double* x, int cin, int t, int h, int w, int kt, int kh, int kw, int st,
              int sh, int sw, int pt, int ph, int pw, int ot, int oh, int ow, double* col) {
  const std::int64_t ocols = static_cast<std::int64_t>(ot) * oh * ow;
  std::int64_t r = 0;
  for (int c = 0; c < cin; ++c)
    for (int kk = 0; kk < kt; ++kk)
      for (int ki = 0; ki < kh; ++ki)
        for (int kj = 0; kj < kw; ++kj, ++r) {
          double* row = col + r * ocols;
          std::int64_t q = 0;
          for (int oz = 0; oz < ot; ++oz) {
            const int iz = oz * st - pt + kk;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * sh - ph + ki;
              for (int ox = 0; ox < ow; ++ox, ++q) {
                const int ix = ox * sw - pw + kj;
                row[q] = (iz >= 0 && iz < t && iy >= 0 && iy < h && ix >= 0 && ix < w)
                             ? x[((static_cast<std::int64_t>(c) * t + iz) * h + iy) * w + ix]
                             : 0.0;
              }
            }
          }
        }
}

void col2im3d_acc(const double* col, int cin, int t, int h, int w, int kt, int kh, int kw, int st,
                  int sh, int sw, int pt, int ph, int pw, int ot, int oh, int ow, double* dx) {
  const std::int64_t ocols = static_cast<std::int64_t>(ot) * oh * ow;
  std::int64_t r = 0;
  for (int c = 0; c < cin; ++c)
    for (int kk = 0; kk < kt; ++kk)
      for (int ki = 0; ki < kh; ++ki)
        for (int kj = 0; kj < kw; ++kj, ++r) {
          const double* row = col + r * ocols;
          std::int64_t q = 0;
          for (int oz = 0; oz < ot; ++oz) {
            const int iz = oz * st - pt + kk;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * sh - ph + ki;
              for (int ox = 0; ox < ow; ++ox, ++q) {
                const int ix = ox * sw - pw + kj;
                if (iz >= 0 && iz < t && iy >= 0 && iy < h && ix >= 0 && ix < w)
                  dx[((static_cast<std::int64_t>(c) * t + iz) * h + iy) * w + ix] += row[q];
              }
            }
          }
        }
}

}  // namespace

Var conv3d(const Var& x, const Var& wt, int st, int sh, int sw, int pt, int ph, int pw) {
  if (x->value.rank() != 4) throw ArgumentError("conv3d: input must be (C,T,H,W)");
  if (wt->value.rank() != 5) throw ArgumentError("conv3d: weight must be (Cout,Cin,kt,kh,kw)");
  const int cin = x->value.dim(0), t = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  const int cout = wt->value.dim(0), kt = wt->value.dim(2), kh = wt->value.dim(3),
            kw = wt->value.dim(4);
  if (wt->value.dim(1) != cin) throw ArgumentError("conv3d: weight in-channels mismatch");
  const int ot = conv_out_dim(t, kt, st, pt);
  const int oh = conv_out_dim(h, kh, sh, ph);
  const int ow = conv_out_dim(w, kw, sw, pw);
  const std::int64_t ocols = static_cast<std::int64_t>(ot) * oh * ow;
  const std::int64_t krows = static_cast<std::int64_t>(cin) * kt * kh * kw;

  Tensor col({static_cast<int>(krows), ot, oh * ow});
  im2col3d(x->value.data(), cin, t, h, w, kt, kh, kw, st, sh, sw, pt, ph, pw, ot, oh, ow,
           col.data());
  Tensor out({cout, ot, oh, ow});
  {
    CMapMat wm(wt->value.data(), cout, krows);
    CMapMat cm(col.data(), krows, ocols);
    MapMat om(out.data(), cout, ocols);
    om.noalias() = wm * cm;
  }
  return make_node(std::move(out), {x, wt},
                   [cin, t, h, w, cout, kt, kh, kw, st, sh, sw, pt, ph, pw, ot, oh, ow, ocols,
                    krows](Node& n) {
                     Tensor col2({static_cast<int>(krows), ot, oh * ow});
                     im2col3d(n.parents[0]->value.data(), cin, t, h, w, kt, kh, kw, st, sh, sw, pt,
                              ph, pw, ot, oh, ow, col2.data());
                     CMapMat dym(n.grad.data(), cout, ocols);
                     if (n.parents[1]->needs_grad) {
                       CMapMat cm(col2.data(), krows, ocols);
                       MapMat dwm(n.parents[1]->g().data(), cout, krows);
                       dwm.noalias() += dym * cm.transpose();
                     }
                     if (n.parents[0]->needs_grad) {
                       Tensor dcol({static_cast<int>(krows), ot, oh * ow});
                       CMapMat wm(n.parents[1]->value.data(), cout, krows);
                       MapMat dcm(dcol.data(), krows, ocols);
                       dcm.noalias() = wm.transpose() * dym;
                       col2im3d_acc(dcol.data(), cin, t, h, w, kt, kh, kw, st, sh, sw, pt, ph, pw,
                                    ot, oh, ow, n.parents[0]->g().data());
                     }
                   });
}

Var maxpool2d(const Var& x, int k, int stride, int pad) {
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  const int oh = conv_out_dim(h, k, stride, pad), ow = conv_out_dim(w, k, stride, pad);
  Tensor out({c, oh, ow});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.size()));
  std::int64_t q = 0;
  for (int ch = 0; ch < c; ++ch) {
    const double* xp = x->value.data() + static_cast<std::int64_t>(ch) * h * w;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox, ++q) {
        double best = -std::numeric_limits<double>::infinity();
        std::int64_t best_i = -1;
        for (int ki = 0; ki < k; ++ki) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          for (int kj = 0; kj < k; ++kj) {
            const int ix = ox * stride - pad + kj;
            if (ix < 0 || ix >= w) continue;
            const std::int64_t xi = static_cast<std::int64_t>(iy) * w + ix;
            if (xp[xi] > best) {
              best = xp[xi];
              best_i = xi;
            }
          }
        }
        out[q] = best;
        argmax[static_cast<std::size_t>(q)] = static_cast<std::int64_t>(ch) * h * w + best_i;
      }
  }
  return make_node(std::move(out), {x}, [argmax = std::move(argmax)](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    Tensor& g = n.parents[0]->g();
    const std::int64_t m = n.value.size();
    for (std::int64_t i = 0; i < m; ++i) g[argmax[static_cast<std::size_t>(i)]] += n.grad[i];
  });
}

Var avgpool2d(const Var& x, int k, int stride, int pad) {
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  const int oh = conv_out_dim(h, k, stride, pad), ow = conv_out_dim(w, k, stride, pad);
  Tensor out({c, oh, ow});
  std::int64_t q = 0;
  for (int ch = 0; ch < c; ++ch) {
    const double* xp = x->value.data() + static_cast<std::int64_t>(ch) * h * w;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox, ++q) {
        double acc = 0.0;
        int count = 0;
        for (int ki = 0; ki < k; ++ki) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          for (int kj = 0; kj < k; ++kj) {
            const int ix = ox * stride - pad + kj;
            if (ix < 0 || ix >= w) continue;
            acc += xp[static_cast<std::int64_t>(iy) * w + ix];
            ++count;
          }
        }
        out[q] = acc / count;
      }
  }
  return make_node(std::move(out), {x}, [c, h, w, oh, ow, k, stride, pad](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    Tensor& g = n.parents[0]->g();
    std::int64_t q2 = 0;
    for (int ch = 0; ch < c; ++ch) {
      double* gp = g.data() + static_cast<std::int64_t>(ch) * h * w;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++q2) {
          int count = 0;
          for (int ki = 0; ki < k; ++ki) {
            const int iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= h) continue;
            for (int kj = 0; kj < k; ++kj) {
              const int ix = ox * stride - pad + kj;
              if (ix >= 0 && ix < w) ++count;
            }
          }
          const double dv = n.grad[q2] / count;
          for (int ki = 0; ki < k; ++ki) {
            const int iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= h) continue;
            for (int kj = 0; kj < k; ++kj) {
              const int ix = ox * stride - pad + kj;
              if (ix >= 0 && ix < w) gp[static_cast<std::int64_t>(iy) * w + ix] += dv;
            }
          }
        }
    }
  });
}

}  // namespace mseg::ag
