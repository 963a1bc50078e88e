#pragma once

#include "mseg/autograd.hpp"

namespace mseg::ag {

// Floor formula; with k=3, s=2, p=1 this halves with ceiling, which is what
// lets the encoder accept any input divisible by 8.
int conv_out_dim(int in, int k, int stride, int pad);

// x (Cin,H,W), w (Cout, Cin/groups, kh, kw). No bias; use add_channel_bias.
// Dispatches to direct GEMM for 1x1 s1 p0 and to direct loops for depthwise.
Var conv2d(const Var& x, const Var& w, int stride, int pad, int groups = 1);

// x (Cin,H,W), w (Cin, Cout, k, k). The output is (Cout, out_h, out_w) where
// out_h/out_w must not exceed (in-1)*stride - 2*pad + k; rows/cols past the
// target are dropped, which matches cropping to a skip connection's size.
Var conv_transpose2d(const Var& x, const Var& w, int stride, int pad, int out_h, int out_w);

// x (Cin,T,H,W), w (Cout, Cin, kt, kh, kw).
Var conv3d(const Var& x, const Var& w, int st, int sh, int sw, int pt, int ph, int pw);

// Window positions follow conv_out_dim. Max ignores padding (a window always
// covers at least one valid pixel); avg divides by the valid-pixel count.
Var maxpool2d(const Var& x, int k, int stride, int pad);
Var avgpool2d(const Var& x, int k, int stride, int pad);

}  // namespace mseg::ag
