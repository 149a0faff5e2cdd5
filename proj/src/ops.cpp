#include "mrnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mrnet/rng.hpp"

namespace mrnet {

namespace {

// Integer ceil/floor division for positive divisors; C++ '/' truncates.
std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return a >= 0 ? (a + b - 1) / b : a / b; }
std::int64_t floor_div(std::int64_t a, std::int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
                                ", got shape " + shape_str(t.shape()));
  }
}

}  // namespace

std::int64_t conv_out_extent(std::int64_t n, std::int64_t kernel, std::int64_t stride, std::int64_t padding,
                             std::int64_t dilation) {
  return (n + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, const Conv2dOpts& opts, Tape* tape) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  require_rank(bias, 1, "conv2d", "bias");
  require(opts.stride >= 1, "conv2d: stride must be positive");
  require(opts.dilation >= 1, "conv2d: dilation must be positive");
  require(opts.padding >= 0, "conv2d: padding must be nonnegative");
  require(opts.groups >= 1, "conv2d: groups must be positive");

  const std::int64_t B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::int64_t Cout = kernel.dim(0), Cin_g = kernel.dim(1), Kh = kernel.dim(2), Kw = kernel.dim(3);
  const std::int64_t G = opts.groups;

  require(Cin % G == 0, "conv2d: input channels (" + std::to_string(Cin) + ") not divisible by groups (" +
                            std::to_string(G) + ")");
  require(Cout % G == 0, "conv2d: output channels (" + std::to_string(Cout) + ") not divisible by groups (" +
                             std::to_string(G) + ")");
  require(Cin_g == Cin / G, "conv2d: kernel channel dimension (" + std::to_string(Cin_g) +
                                ") does not match input channels per group (" + std::to_string(Cin / G) + ")");
  require(bias.dim(0) == Cout, "conv2d: bias extent (" + std::to_string(bias.dim(0)) +
                                   ") does not match output channels (" + std::to_string(Cout) + ")");
  require(H + 2 * opts.padding >= opts.dilation * (Kh - 1) + 1,
          "conv2d: height " + std::to_string(H) + " too small for effective kernel extent " +
              std::to_string(opts.dilation * (Kh - 1) + 1) + " at padding " + std::to_string(opts.padding));
  require(W + 2 * opts.padding >= opts.dilation * (Kw - 1) + 1,
          "conv2d: width " + std::to_string(W) + " too small for effective kernel extent " +
              std::to_string(opts.dilation * (Kw - 1) + 1) + " at padding " + std::to_string(opts.padding));

  const std::int64_t s = opts.stride, p = opts.padding, d = opts.dilation;
  const std::int64_t Ho = conv_out_extent(H, Kh, s, p, d);
  const std::int64_t Wo = conv_out_extent(W, Kw, s, p, d);
  const std::int64_t Cout_g = Cout / G;

  Tensor out(Shape{B, Cout, Ho, Wo});
  const double* in = input.data();
  const double* K = kernel.data();
  const double* bs = bias.data();
  double* o = out.data();

  // Valid output row/column range for a given kernel tap, so the inner loops
  // carry no bounds checks.
  auto lo_of = [&](std::int64_t k, std::int64_t n_out) {
    return std::clamp<std::int64_t>(ceil_div(p - k * d, s), 0, n_out);
  };
  auto hi_of = [&](std::int64_t k, std::int64_t n_in, std::int64_t n_out) {
    return std::clamp<std::int64_t>(floor_div(n_in - 1 + p - k * d, s) + 1, 0, n_out);
  };

  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t co = 0; co < Cout; ++co) {
      double* oplane = o + ((b * Cout + co) * Ho) * Wo;
      std::fill(oplane, oplane + Ho * Wo, bs[co]);
      const std::int64_t g = co / Cout_g;
      for (std::int64_t cl = 0; cl < Cin_g; ++cl) {
        const std::int64_t ci = g * Cin_g + cl;
        const double* iplane = in + ((b * Cin + ci) * H) * W;
        for (std::int64_t kh = 0; kh < Kh; ++kh) {
          const std::int64_t oh_lo = lo_of(kh, Ho), oh_hi = hi_of(kh, H, Ho);
          for (std::int64_t kw = 0; kw < Kw; ++kw) {
            const double w = K[((co * Cin_g + cl) * Kh + kh) * Kw + kw];
            const std::int64_t ow_lo = lo_of(kw, Wo), ow_hi = hi_of(kw, W, Wo);
            for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
              const std::int64_t ih = oh * s - p + kh * d;
              const double* irow = iplane + ih * W;
              double* orow = oplane + oh * Wo;
              if (s == 1) {
                const double* ip = irow + (kw * d - p);
                for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += w * ip[ow];
              } else {
                for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += w * irow[ow * s - p + kw * d];
              }
            }
          }
        }
      }
    }
  }

  if (tape && (input.requires_grad() || kernel.requires_grad() || bias.requires_grad())) {
    out.set_requires_grad(true);
    Tensor in_t = input, k_t = kernel, b_t = bias, out_t = out;
    Conv2dOpts op = opts;
    tape->record("conv2d", [in_t, k_t, b_t, out_t, op, B, Cin, H, W, Cout, Cin_g, Kh, Kw, Ho, Wo, Cout_g]() mutable {
      if (!out_t.has_grad()) return;
      const std::int64_t s = op.stride, p = op.padding, d = op.dilation;
      const double* go = out_t.grad().data();
      const double* in = in_t.data();
      const double* K = k_t.data();
      auto lo_of = [&](std::int64_t k, std::int64_t n_out) {
        return std::clamp<std::int64_t>(ceil_div(p - k * d, s), 0, n_out);
      };
      auto hi_of = [&](std::int64_t k, std::int64_t n_in, std::int64_t n_out) {
        return std::clamp<std::int64_t>(floor_div(n_in - 1 + p - k * d, s) + 1, 0, n_out);
      };
      if (b_t.requires_grad()) {
        double* gb = b_t.grad().data();
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t co = 0; co < Cout; ++co) {
            const double* gplane = go + ((b * Cout + co) * Ho) * Wo;
            double acc = 0.0;
            for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += gplane[i];
            gb[co] += acc;
          }
      }
      if (k_t.requires_grad()) {
        double* gk = k_t.grad().data();
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t co = 0; co < Cout; ++co) {
            const double* gplane = go + ((b * Cout + co) * Ho) * Wo;
            const std::int64_t g = co / Cout_g;
            for (std::int64_t cl = 0; cl < Cin_g; ++cl) {
              const std::int64_t ci = g * Cin_g + cl;
              const double* iplane = in + ((b * Cin + ci) * H) * W;
              for (std::int64_t kh = 0; kh < Kh; ++kh) {
                const std::int64_t oh_lo = lo_of(kh, Ho), oh_hi = hi_of(kh, H, Ho);
                for (std::int64_t kw = 0; kw < Kw; ++kw) {
                  const std::int64_t ow_lo = lo_of(kw, Wo), ow_hi = hi_of(kw, W, Wo);
                  double acc = 0.0;
                  for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                    const double* irow = iplane + (oh * s - p + kh * d) * W;
                    const double* grow = gplane + oh * Wo;
                    if (s == 1) {
                      const double* ip = irow + (kw * d - p);
                      for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) acc += ip[ow] * grow[ow];
                    } else {
                      for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) acc += irow[ow * s - p + kw * d] * grow[ow];
                    }
                  }
                  gk[((co * Cin_g + cl) * Kh + kh) * Kw + kw] += acc;
                }
              }
            }
          }
      }
      if (in_t.requires_grad()) {
        double* gi = in_t.grad().data();
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t co = 0; co < Cout; ++co) {
            const double* gplane = go + ((b * Cout + co) * Ho) * Wo;
            const std::int64_t g = co / Cout_g;
            for (std::int64_t cl = 0; cl < Cin_g; ++cl) {
              const std::int64_t ci = g * Cin_g + cl;
              double* giplane = gi + ((b * Cin + ci) * H) * W;
              for (std::int64_t kh = 0; kh < Kh; ++kh) {
                const std::int64_t oh_lo = lo_of(kh, Ho), oh_hi = hi_of(kh, H, Ho);
                for (std::int64_t kw = 0; kw < Kw; ++kw) {
                  const double w = K[((co * Cin_g + cl) * Kh + kh) * Kw + kw];
                  const std::int64_t ow_lo = lo_of(kw, Wo), ow_hi = hi_of(kw, W, Wo);
                  for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                    double* girow = giplane + (oh * s - p + kh * d) * W;
                    const double* grow = gplane + oh * Wo;
                    if (s == 1) {
                      double* gp = girow + (kw * d - p);
                      for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) gp[ow] += w * grow[ow];
                    } else {
                      for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) girow[ow * s - p + kw * d] += w * grow[ow];
                    }
                  }
                }
              }
            }
          }
      }
    });
  }
  return out;
}

Tensor maxpool2d(const Tensor& input, Tape* tape) {
  require_rank(input, 4, "maxpool2d", "input");
  const std::int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  require(H % 2 == 0, "maxpool2d: height " + std::to_string(H) + " is odd");
  require(W % 2 == 0, "maxpool2d: width " + std::to_string(W) + " is odd");

  const std::int64_t Ho = H / 2, Wo = W / 2;
  Tensor out(Shape{B, C, Ho, Wo});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.size()));
  const double* in = input.data();
  double* o = out.data();

  std::int64_t oi = 0;
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* plane = in + bc * H * W;
    for (std::int64_t oh = 0; oh < Ho; ++oh) {
      for (std::int64_t ow = 0; ow < Wo; ++ow, ++oi) {
        const std::int64_t base = (2 * oh) * W + 2 * ow;
        // Scan order (0,0),(0,1),(1,0),(1,1); strict > keeps the first max.
        std::int64_t best = base;
        double bv = plane[base];
        for (std::int64_t k = 1; k < 4; ++k) {
          const std::int64_t idx = base + (k >> 1) * W + (k & 1);
          if (plane[idx] > bv) {
            bv = plane[idx];
            best = idx;
          }
        }
        o[oi] = bv;
        argmax[static_cast<std::size_t>(oi)] = bc * H * W + best;
      }
    }
  }

  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor in_t = input, out_t = out;
    tape->record("maxpool2d", [in_t, out_t, argmax = std::move(argmax)]() mutable {
      if (!out_t.has_grad()) return;
      const double* go = out_t.grad().data();
      double* gi = in_t.grad().data();
      for (std::size_t i = 0; i < argmax.size(); ++i) gi[argmax[i]] += go[i];
    });
  }
  return out;
}

Tensor upconv2x(const Tensor& input, const Tensor& kernel, Tape* tape) {
  require_rank(input, 4, "upconv2x", "input");
  require_rank(kernel, 4, "upconv2x", "kernel");
  const std::int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::int64_t Cout = kernel.dim(1);
  require(kernel.dim(0) == C, "upconv2x: kernel input channels (" + std::to_string(kernel.dim(0)) +
                                  ") do not match input channels (" + std::to_string(C) + ")");
  require(kernel.dim(2) == 2 && kernel.dim(3) == 2, "upconv2x: kernel must be 2x2, got " + shape_str(kernel.shape()));

  Tensor out(Shape{B, Cout, 2 * H, 2 * W});
  const double* in = input.data();
  const double* K = kernel.data();
  double* o = out.data();

  // Stride 2 with a 2x2 kernel: contributions never overlap, each output
  // element out[b,co,2h+kh,2w+kw] = sum_c in[b,c,h,w] * K[c,co,kh,kw].
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      const double* iplane = in + ((b * C + c) * H) * W;
      for (std::int64_t co = 0; co < Cout; ++co) {
        double* oplane = o + ((b * Cout + co) * 2 * H) * 2 * W;
        const double* k4 = K + ((c * Cout + co) * 2) * 2;
        for (std::int64_t h = 0; h < H; ++h) {
          const double* irow = iplane + h * W;
          double* orow0 = oplane + (2 * h) * (2 * W);
          double* orow1 = orow0 + 2 * W;
          for (std::int64_t w = 0; w < W; ++w) {
            const double v = irow[w];
            orow0[2 * w] += v * k4[0];
            orow0[2 * w + 1] += v * k4[1];
            orow1[2 * w] += v * k4[2];
            orow1[2 * w + 1] += v * k4[3];
          }
        }
      }
    }

  if (tape && (input.requires_grad() || kernel.requires_grad())) {
    out.set_requires_grad(true);
    Tensor in_t = input, k_t = kernel, out_t = out;
    tape->record("upconv2x", [in_t, k_t, out_t, B, C, H, W, Cout]() mutable {
      if (!out_t.has_grad()) return;
      const double* go = out_t.grad().data();
      const double* in = in_t.data();
      const double* K = k_t.data();
      double* gi = in_t.requires_grad() ? in_t.grad().data() : nullptr;
      double* gk = k_t.requires_grad() ? k_t.grad().data() : nullptr;
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
          const double* iplane = in + ((b * C + c) * H) * W;
          double* giplane = gi ? gi + ((b * C + c) * H) * W : nullptr;
          for (std::int64_t co = 0; co < Cout; ++co) {
            const double* gplane = go + ((b * Cout + co) * 2 * H) * 2 * W;
            const double* k4 = K + ((c * Cout + co) * 2) * 2;
            double* gk4 = gk ? gk + ((c * Cout + co) * 2) * 2 : nullptr;
            for (std::int64_t h = 0; h < H; ++h) {
              const double* grow0 = gplane + (2 * h) * (2 * W);
              const double* grow1 = grow0 + 2 * W;
              const double* irow = iplane + h * W;
              double* girow = giplane ? giplane + h * W : nullptr;
              for (std::int64_t w = 0; w < W; ++w) {
                const double g00 = grow0[2 * w], g01 = grow0[2 * w + 1];
                const double g10 = grow1[2 * w], g11 = grow1[2 * w + 1];
                if (girow) girow[w] += k4[0] * g00 + k4[1] * g01 + k4[2] * g10 + k4[3] * g11;
                if (gk4) {
                  const double v = irow[w];
                  gk4[0] += v * g00;
                  gk4[1] += v * g01;
                  gk4[2] += v * g10;
                  gk4[3] += v * g11;
                }
              }
            }
          }
        }
    });
  }
  return out;
}

Tensor relu(const Tensor& input, Tape* tape) {
  Tensor out(input.shape());
  const double* in = input.data();
  double* o = out.data();
  const std::int64_t n = input.size();
  for (std::int64_t i = 0; i < n; ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;

  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor in_t = input, out_t = out;
    tape->record("relu", [in_t, out_t, n]() mutable {
      if (!out_t.has_grad()) return;
      const double* go = out_t.grad().data();
      const double* in = in_t.data();
      double* gi = in_t.grad().data();
      for (std::int64_t i = 0; i < n; ++i)
        if (in[i] > 0.0) gi[i] += go[i];
    });
  }
  return out;
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias, Tape* tape) {
  require_rank(input, 2, "dense", "input");
  require_rank(weight, 2, "dense", "weight");
  require_rank(bias, 1, "dense", "bias");
  const std::int64_t B = input.dim(0), N = input.dim(1), M = weight.dim(1);
  require(weight.dim(0) == N, "dense: weight rows (" + std::to_string(weight.dim(0)) +
                                  ") do not match input features (" + std::to_string(N) + ")");
  require(bias.dim(0) == M,
          "dense: bias extent (" + std::to_string(bias.dim(0)) + ") does not match output features (" +
              std::to_string(M) + ")");

  Tensor out(Shape{B, M});
  const double* in = input.data();
  const double* Wt = weight.data();
  const double* bs = bias.data();
  double* o = out.data();
  for (std::int64_t b = 0; b < B; ++b) {
    double* orow = o + b * M;
    std::copy(bs, bs + M, orow);
    const double* irow = in + b * N;
    for (std::int64_t n = 0; n < N; ++n) {
      const double v = irow[n];
      const double* wrow = Wt + n * M;
      for (std::int64_t m = 0; m < M; ++m) orow[m] += v * wrow[m];
    }
  }

  if (tape && (input.requires_grad() || weight.requires_grad() || bias.requires_grad())) {
    out.set_requires_grad(true);
    Tensor in_t = input, w_t = weight, b_t = bias, out_t = out;
    tape->record("dense", [in_t, w_t, b_t, out_t, B, N, M]() mutable {
      if (!out_t.has_grad()) return;
      const double* go = out_t.grad().data();
      const double* in = in_t.data();
      const double* Wt = w_t.data();
      if (b_t.requires_grad()) {
        double* gb = b_t.grad().data();
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t m = 0; m < M; ++m) gb[m] += go[b * M + m];
      }
      if (w_t.requires_grad()) {
        double* gw = w_t.grad().data();
        for (std::int64_t b = 0; b < B; ++b) {
          const double* irow = in + b * N;
          const double* grow = go + b * M;
          for (std::int64_t n = 0; n < N; ++n) {
            const double v = irow[n];
            double* gwrow = gw + n * M;
            for (std::int64_t m = 0; m < M; ++m) gwrow[m] += v * grow[m];
          }
        }
      }
      if (in_t.requires_grad()) {
        double* gi = in_t.grad().data();
        for (std::int64_t b = 0; b < B; ++b) {
          double* girow = gi + b * N;
          const double* grow = go + b * M;
          for (std::int64_t n = 0; n < N; ++n) {
            const double* wrow = Wt + n * M;
            double acc = 0.0;
            for (std::int64_t m = 0; m < M; ++m) acc += wrow[m] * grow[m];
            girow[n] += acc;
          }
        }
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& input, Tape* tape) {
  require_rank(input, 2, "softmax", "input");
  const std::int64_t B = input.dim(0), N = input.dim(1);
  Tensor out(input.shape());
  const double* in = input.data();
  double* o = out.data();
  for (std::int64_t b = 0; b < B; ++b) {
    const double* x = in + b * N;
    double* p = o + b * N;
    double m = x[0];
    for (std::int64_t i = 1; i < N; ++i) m = std::max(m, x[i]);
    double s = 0.0;
    for (std::int64_t i = 0; i < N; ++i) {
      p[i] = std::exp(x[i] - m);
      s += p[i];
    }
    const double inv = 1.0 / s;
    for (std::int64_t i = 0; i < N; ++i) p[i] *= inv;
  }

  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor in_t = input, out_t = out;
    tape->record("softmax", [in_t, out_t, B, N]() mutable {
      if (!out_t.has_grad()) return;
      const double* go = out_t.grad().data();
      const double* p = out_t.data();
      double* gi = in_t.grad().data();
      for (std::int64_t b = 0; b < B; ++b) {
        const double* pr = p + b * N;
        const double* gr = go + b * N;
        double dot = 0.0;
        for (std::int64_t i = 0; i < N; ++i) dot += gr[i] * pr[i];
        double* gir = gi + b * N;
        for (std::int64_t i = 0; i < N; ++i) gir[i] += pr[i] * (gr[i] - dot);
      }
    });
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b, Tape* tape) {
  require_rank(a, 4, "concat_channels", "a");
  require_rank(b, 4, "concat_channels", "b");
  const std::int64_t B = a.dim(0), Ca = a.dim(1), H = a.dim(2), W = a.dim(3), Cb = b.dim(1);
  require(b.dim(0) == B, "concat_channels: batch extents differ (" + std::to_string(B) + " vs " +
                             std::to_string(b.dim(0)) + ")");
  require(b.dim(2) == H && b.dim(3) == W, "concat_channels: spatial extents differ (" + shape_str(a.shape()) +
                                              " vs " + shape_str(b.shape()) + ")");

  Tensor out(Shape{B, Ca + Cb, H, W});
  const std::int64_t plane = H * W;
  double* o = out.data();
  for (std::int64_t i = 0; i < B; ++i) {
    std::copy(a.data() + i * Ca * plane, a.data() + (i + 1) * Ca * plane, o + i * (Ca + Cb) * plane);
    std::copy(b.data() + i * Cb * plane, b.data() + (i + 1) * Cb * plane, o + (i * (Ca + Cb) + Ca) * plane);
  }

  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    Tensor a_t = a, b_t = b, out_t = out;
    tape->record("concat_channels", [a_t, b_t, out_t, B, Ca, Cb, plane]() mutable {
      if (!out_t.has_grad()) return;
      const double* go = out_t.grad().data();
      for (std::int64_t i = 0; i < B; ++i) {
        if (a_t.requires_grad()) {
          double* ga = a_t.grad().data() + i * Ca * plane;
          const double* src = go + i * (Ca + Cb) * plane;
          for (std::int64_t j = 0; j < Ca * plane; ++j) ga[j] += src[j];
        }
        if (b_t.requires_grad()) {
          double* gb = b_t.grad().data() + i * Cb * plane;
          const double* src = go + (i * (Ca + Cb) + Ca) * plane;
          for (std::int64_t j = 0; j < Cb * plane; ++j) gb[j] += src[j];
        }
      }
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& input, Tape* tape) {
  require_rank(input, 4, "global_avg_pool", "input");
  const std::int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  Tensor out(Shape{B, C});
  const double* in = input.data();
  double* o = out.data();
  const double inv = 1.0 / static_cast<double>(H * W);
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* plane = in + bc * H * W;
    double acc = 0.0;
    for (std::int64_t i = 0; i < H * W; ++i) acc += plane[i];
    o[bc] = acc * inv;
  }

  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor in_t = input, out_t = out;
    tape->record("global_avg_pool", [in_t, out_t, B, C, H, W, inv]() mutable {
      if (!out_t.has_grad()) return;
      const double* go = out_t.grad().data();
      double* gi = in_t.grad().data();
      for (std::int64_t bc = 0; bc < B * C; ++bc) {
        const double g = go[bc] * inv;
        double* plane = gi + bc * H * W;
        for (std::int64_t i = 0; i < H * W; ++i) plane[i] += g;
      }
    });
  }
  return out;
}

Tensor flatten2d(const Tensor& input, Tape* tape) {
  require_rank(input, 4, "flatten2d", "input");
  const std::int64_t B = input.dim(0);
  const std::int64_t F = input.dim(1) * input.dim(2) * input.dim(3);
  Tensor out(Shape{B, F}, input.values());

  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor in_t = input, out_t = out;
    tape->record("flatten2d", [in_t, out_t]() mutable {
      if (!out_t.has_grad()) return;
      const double* go = out_t.grad().data();
      double* gi = in_t.grad().data();
      const std::int64_t n = in_t.size();
      for (std::int64_t i = 0; i < n; ++i) gi[i] += go[i];
    });
  }
  return out;
}

Tensor standardize(const Tensor& input, const std::array<double, 3>& mean, const std::array<double, 3>& sd,
                   Tape* tape) {
  require_rank(input, 4, "standardize", "input");
  require(input.dim(1) == 3,
          "standardize: expected 3 channels, got " + std::to_string(input.dim(1)));
  const std::int64_t B = input.dim(0), H = input.dim(2), W = input.dim(3);
  Tensor out(input.shape());
  const double* in = input.data();
  double* o = out.data();
  const std::int64_t plane = H * W;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < 3; ++c) {
      const double* ip = in + (b * 3 + c) * plane;
      double* op = o + (b * 3 + c) * plane;
      const double mu = mean[static_cast<std::size_t>(c)];
      const double inv = 1.0 / sd[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < plane; ++i) op[i] = (ip[i] - mu) * inv;
    }

  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor in_t = input, out_t = out;
    tape->record("standardize", [in_t, out_t, sd, B, plane]() mutable {
      if (!out_t.has_grad()) return;
      const double* go = out_t.grad().data();
      double* gi = in_t.grad().data();
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < 3; ++c) {
          const double inv = 1.0 / sd[static_cast<std::size_t>(c)];
          const double* gp = go + (b * 3 + c) * plane;
          double* ip = gi + (b * 3 + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) ip[i] += gp[i] * inv;
        }
    });
  }
  return out;
}

Tensor square(const Tensor& input, Tape* tape) {
  Tensor out(input.shape());
  const double* in = input.data();
  double* o = out.data();
  const std::int64_t n = input.size();
  for (std::int64_t i = 0; i < n; ++i) o[i] = in[i] * in[i];

  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor in_t = input, out_t = out;
    tape->record("square", [in_t, out_t, n]() mutable {
      if (!out_t.has_grad()) return;
      const double* go = out_t.grad().data();
      const double* in = in_t.data();
      double* gi = in_t.grad().data();
      for (std::int64_t i = 0; i < n; ++i) gi[i] += 2.0 * in[i] * go[i];
    });
  }
  return out;
}

Tensor weighted_sum(const Tensor& input, const std::vector<double>& weights, Tape* tape) {
  require(static_cast<std::int64_t>(weights.size()) == input.size(),
          "weighted_sum: " + std::to_string(weights.size()) + " weights for " + std::to_string(input.size()) +
              " elements");
  double acc = 0.0;
  const double* in = input.data();
  for (std::size_t i = 0; i < weights.size(); ++i) acc += weights[i] * in[i];
  Tensor out = Tensor::scalar(acc);

  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor in_t = input, out_t = out;
    tape->record("weighted_sum", [in_t, out_t, weights]() mutable {
      if (!out_t.has_grad()) return;
      const double g = out_t.grad()[0];
      double* gi = in_t.grad().data();
      for (std::size_t i = 0; i < weights.size(); ++i) gi[i] += weights[i] * g;
    });
  }
  return out;
}

namespace {

double run_scalar(const ScalarFn& f, Tape* tape) {
  Tensor loss = f(tape);
  if (loss.size() != 1) throw std::invalid_argument("finite_diff_check: f must be scalar-valued");
  return loss[0];
}

double check_elements(const ScalarFn& f, Tensor& x, double eps, const std::vector<std::int64_t>& elements) {
  const bool prior = x.requires_grad();
  x.set_requires_grad(true);
  x.grad();
  x.zero_grad();
  Tape tape;
  Tensor loss = f(&tape);
  if (loss.size() != 1) throw std::invalid_argument("finite_diff_check: f must be scalar-valued");
  tape.backward(loss);
  std::vector<double> analytic = x.grad();
  x.drop_grad();
  x.set_requires_grad(prior);

  double max_rel = 0.0;
  for (std::int64_t i : elements) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double fp = run_scalar(f, nullptr);
    x[i] = orig - eps;
    const double fm = run_scalar(f, nullptr);
    x[i] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[static_cast<std::size_t>(i)];
    const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace

double finite_diff_check(const ScalarFn& f, Tensor x, double eps) {
  std::vector<std::int64_t> all(static_cast<std::size_t>(x.size()));
  std::iota(all.begin(), all.end(), 0);
  return check_elements(f, x, eps, all);
}

double finite_diff_check_sampled(const ScalarFn& f, Tensor x, double eps, std::int64_t max_elements,
                                 std::uint64_t seed) {
  const std::int64_t n = x.size();
  if (max_elements >= n) return finite_diff_check(f, std::move(x), eps);
  std::vector<std::int64_t> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  Rng rng(seed);
  for (std::int64_t i = 0; i < max_elements; ++i) {
    const std::int64_t j = i + static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(n - i)));
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
  }
  all.resize(static_cast<std::size_t>(max_elements));
  return check_elements(f, x, eps, all);
}

}  // namespace mrnet
