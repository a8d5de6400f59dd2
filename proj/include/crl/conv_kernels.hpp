#pragma once

// Direct 3x3 convolution kernels over channels-last buffers. Input is
// zero-padded by one pixel on each side: (N, H+2, W+2, Cin). Weights are laid
// out [ky*3+kx][ci][co]. Output channel counts must be multiples of 8; the
// kernels are register-blocked over pixels (forward) or input channels
// (weight gradient) using 8-wide GCC/Clang vector extensions.

#include <cstddef>
#include <cstring>
#include <vector>

#include "crl/types.hpp"

namespace crl::nn::kernels {

typedef float v8f __attribute__((vector_size(32)));

inline v8f load8(const float* p) {
    v8f v;
    std::memcpy(&v, p, sizeof(v));
    return v;
}
inline void store8(float* p, v8f v) { std::memcpy(p, &v, sizeof(v)); }

// (N,H,W,C) -> (N,H+2,W+2,C) with a zero border.
inline std::vector<float> pad1(const float* x, int n, int h, int w, int c) {
    const std::size_t row = static_cast<std::size_t>(w) * c;
    const std::size_t prow = static_cast<std::size_t>(w + 2) * c;
    std::vector<float> out(static_cast<std::size_t>(n) * (h + 2) * prow, 0.0f);
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            std::memcpy(out.data() + (static_cast<std::size_t>(b) * (h + 2) + y + 1) * prow + c,
                        x + (static_cast<std::size_t>(b) * h + y) * row, sizeof(float) * row);
    return out;
}

namespace detail {

// Output block of 8*VC channels starting at co0, PB consecutive pixels of one row.
template <int VC, int PB>
inline void forward_block(const float* xp, const float* w, const float* bias, float* y, int n, int yy, int x0, int h,
                          int width, int cin, int cout, int co0) {
    const std::size_t wp = static_cast<std::size_t>(width + 2);
    v8f acc[PB][VC];
    for (int j = 0; j < PB; ++j)
        for (int v = 0; v < VC; ++v) acc[j][v] = bias ? load8(bias + co0 + 8 * v) : v8f{};
    for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
            const float* xr = xp + ((static_cast<std::size_t>(n) * (h + 2) + yy + ky) * wp + x0 + kx) * cin;
            const float* wk = w + static_cast<std::size_t>(ky * 3 + kx) * cin * cout + co0;
            for (int ci = 0; ci < cin; ++ci) {
                v8f wv[VC];
                for (int v = 0; v < VC; ++v) wv[v] = load8(wk + static_cast<std::size_t>(ci) * cout + 8 * v);
                for (int j = 0; j < PB; ++j) {
                    const float s = xr[static_cast<std::size_t>(j) * cin + ci];
                    for (int v = 0; v < VC; ++v) acc[j][v] += s * wv[v];
                }
            }
        }
    float* out = y + ((static_cast<std::size_t>(n) * h + yy) * width + x0) * cout + co0;
    for (int j = 0; j < PB; ++j)
        for (int v = 0; v < VC; ++v) store8(out + static_cast<std::size_t>(j) * cout + 8 * v, acc[j][v]);
}

template <int VC>
inline void forward_channels(const float* xp, const float* w, const float* bias, float* y, int batch, int h, int width,
                             int cin, int cout, int co0) {
    constexpr int PB = VC <= 2 ? 16 : (VC <= 4 ? 8 : 4);
    for (int n = 0; n < batch; ++n)
        for (int yy = 0; yy < h; ++yy) {
            int x0 = 0;
            for (; x0 + PB <= width; x0 += PB) forward_block<VC, PB>(xp, w, bias, y, n, yy, x0, h, width, cin, cout, co0);
            for (; x0 < width; ++x0) forward_block<VC, 1>(xp, w, bias, y, n, yy, x0, h, width, cin, cout, co0);
        }
}

template <int VC, int CB>
inline void weight_grad_block(const float* xr, const float* grow, float* wk, int width, int cin, int cout, int co0,
                              int c0) {
    v8f acc[CB][VC];
    for (int c = 0; c < CB; ++c)
        for (int v = 0; v < VC; ++v) acc[c][v] = v8f{};
    for (int x = 0; x < width; ++x) {
        v8f gv[VC];
        for (int v = 0; v < VC; ++v) gv[v] = load8(grow + static_cast<std::size_t>(x) * cout + co0 + 8 * v);
        const float* xi = xr + static_cast<std::size_t>(x) * cin + c0;
        for (int c = 0; c < CB; ++c) {
            const float s = xi[c];
            for (int v = 0; v < VC; ++v) acc[c][v] += s * gv[v];
        }
    }
    for (int c = 0; c < CB; ++c)
        for (int v = 0; v < VC; ++v) {
            float* dst = wk + static_cast<std::size_t>(c0 + c) * cout + co0 + 8 * v;
            store8(dst, load8(dst) + acc[c][v]);
        }
}

template <int VC>
inline void weight_grad_channels(const float* xp, const float* dy, float* dw, int batch, int h, int width, int cin,
                                 int cout, int co0) {
    constexpr int CB = VC == 1 ? 8 : (VC <= 4 ? 4 : 2);
    const std::size_t wp = static_cast<std::size_t>(width + 2);
    for (int n = 0; n < batch; ++n)
        for (int yy = 0; yy < h; ++yy) {
            const float* grow = dy + (static_cast<std::size_t>(n) * h + yy) * width * cout;
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    const float* xr = xp + ((static_cast<std::size_t>(n) * (h + 2) + yy + ky) * wp + kx) * cin;
                    float* wk = dw + static_cast<std::size_t>(ky * 3 + kx) * cin * cout;
                    int c0 = 0;
                    for (; c0 + CB <= cin; c0 += CB) weight_grad_block<VC, CB>(xr, grow, wk, width, cin, cout, co0, c0);
                    for (; c0 < cin; ++c0) weight_grad_block<VC, 1>(xr, grow, wk, width, cin, cout, co0, c0);
                }
        }
}

template <typename F>
inline void for_channel_blocks(int cout, F&& f) {
    if (cout % 8 != 0) throw ConfigError("3x3 convolution output channels must be a multiple of 8");
    for (int co0 = 0; co0 < cout;) {
        const int vc = (cout - co0) / 8 >= 8 ? 8 : (cout - co0) / 8;
        f(co0, vc);
        co0 += 8 * vc;
    }
}

}  // namespace detail

// y (N,H,W,Cout) = conv3x3(xp) + bias. bias may be null.
inline void conv3x3_forward(const float* xp, const float* w, const float* bias, float* y, int batch, int h, int width,
                            int cin, int cout) {
    detail::for_channel_blocks(cout, [&](int co0, int vc) {
        switch (vc) {
            case 1: detail::forward_channels<1>(xp, w, bias, y, batch, h, width, cin, cout, co0); break;
            case 2: detail::forward_channels<2>(xp, w, bias, y, batch, h, width, cin, cout, co0); break;
            case 3: detail::forward_channels<3>(xp, w, bias, y, batch, h, width, cin, cout, co0); break;
            case 4: detail::forward_channels<4>(xp, w, bias, y, batch, h, width, cin, cout, co0); break;
            case 5: detail::forward_channels<5>(xp, w, bias, y, batch, h, width, cin, cout, co0); break;
            case 6: detail::forward_channels<6>(xp, w, bias, y, batch, h, width, cin, cout, co0); break;
            case 7: detail::forward_channels<7>(xp, w, bias, y, batch, h, width, cin, cout, co0); break;
            default: detail::forward_channels<8>(xp, w, bias, y, batch, h, width, cin, cout, co0); break;
        }
    });
}

// dw [9][Cin][Cout] = sum over pixels of xp(neighbour) * dy. Overwrites dw.
inline void conv3x3_weight_grad(const float* xp, const float* dy, float* dw, int batch, int h, int width, int cin,
                                int cout) {
    std::memset(dw, 0, sizeof(float) * 9 * static_cast<std::size_t>(cin) * cout);
    detail::for_channel_blocks(cout, [&](int co0, int vc) {
        switch (vc) {
            case 1: detail::weight_grad_channels<1>(xp, dy, dw, batch, h, width, cin, cout, co0); break;
            case 2: detail::weight_grad_channels<2>(xp, dy, dw, batch, h, width, cin, cout, co0); break;
            case 3: detail::weight_grad_channels<3>(xp, dy, dw, batch, h, width, cin, cout, co0); break;
            case 4: detail::weight_grad_channels<4>(xp, dy, dw, batch, h, width, cin, cout, co0); break;
            case 5: detail::weight_grad_channels<5>(xp, dy, dw, batch, h, width, cin, cout, co0); break;
            case 6: detail::weight_grad_channels<6>(xp, dy, dw, batch, h, width, cin, cout, co0); break;
            case 7: detail::weight_grad_channels<7>(xp, dy, dw, batch, h, width, cin, cout, co0); break;
            default: detail::weight_grad_channels<8>(xp, dy, dw, batch, h, width, cin, cout, co0); break;
        }
    });
}

// Weights for the input-gradient pass: dx = conv3x3(pad(dy), flip(w)) with the
// roles of input and output channels swapped.
inline std::vector<float> flip_weights(const float* w, int cin, int cout) {
    std::vector<float> f(9 * static_cast<std::size_t>(cin) * cout);
    for (int k = 0; k < 9; ++k)
        for (int ci = 0; ci < cin; ++ci)
            for (int co = 0; co < cout; ++co)
                f[(static_cast<std::size_t>(8 - k) * cout + co) * cin + ci] =
                    w[(static_cast<std::size_t>(k) * cin + ci) * cout + co];
    return f;
}

}  // namespace crl::nn::kernels
