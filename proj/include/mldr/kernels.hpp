#ifndef MLDR_KERNELS_HPP
#define MLDR_KERNELS_HPP

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "mldr/tensor.hpp"

// Raw numeric kernels all layers are built from. Every function here is pure:
// inputs are never mutated, results come back as fresh tensors.

namespace mldr {

enum class EwKind { add, sub, mul, max, min };

inline const char* to_string(EwKind k) {
    switch (k) {
        case EwKind::add: return "add";
        case EwKind::sub: return "sub";
        case EwKind::mul: return "mul";
        case EwKind::max: return "max";
        case EwKind::min: return "min";
    }
    return "?";
}

inline Tensor elementwise(EwKind kind, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string("elementwise ") + to_string(kind) +
                                    ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    Tensor out(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    const std::size_t n = a.size();
    switch (kind) {
        case EwKind::add:
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
            break;
        case EwKind::sub:
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
            break;
        case EwKind::mul:
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
            break;
        case EwKind::max:
            for (std::size_t i = 0; i < n; ++i) po[i] = std::max(pa[i], pb[i]);
            break;
        case EwKind::min:
            for (std::size_t i = 0; i < n; ++i) po[i] = std::min(pa[i], pb[i]);
            break;
    }
    return out;
}

/// [m,k] x [k,p] -> [m,p]. Accumulates over k in ascending order for every
/// output element, matching the textbook triple loop bit for bit.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw std::invalid_argument("matmul: expects 2-D tensors, got " + a.shape_str() + " and " +
                                    b.shape_str());
    }
    if (a.extent(1) != b.extent(0)) {
        throw std::invalid_argument("matmul: inner dimensions disagree, " + a.shape_str() + " x " +
                                    b.shape_str());
    }
    const std::size_t m = a.extent(0), k = a.extent(1), p = b.extent(1);
    Tensor out({m, p});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = pa + i * k;
        double* orow = po + i * p;
        for (std::size_t t = 0; t < k; ++t) {
            const double av = arow[t];
            const double* brow = pb + t * p;
            for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, int stride, int pad) {
    return (in + 2 * static_cast<std::size_t>(pad) - kernel) / static_cast<std::size_t>(stride) + 1;
}

/// Cross-correlation (no kernel flip) with zero padding.
/// input [N,C,H,W], kernels [F,C,kh,kw], bias [F] -> [N,F,H',W'].
/// Per output element the sum runs in (c, ky, kx) ascending order with the
/// bias as the initial value.
inline Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride,
                     int pad) {
    if (input.rank() != 4)
        throw std::invalid_argument("conv2d: input must be 4-D, got " + input.shape_str());
    if (kernels.rank() != 4)
        throw std::invalid_argument("conv2d: kernels must be 4-D, got " + kernels.shape_str());
    if (bias.rank() != 1 || bias.extent(0) != kernels.extent(0))
        throw std::invalid_argument("conv2d: bias shape " + bias.shape_str() +
                                    " does not match filter count of " + kernels.shape_str());
    if (kernels.extent(1) != input.extent(1))
        throw std::invalid_argument("conv2d: channel mismatch, input " + input.shape_str() +
                                    " vs kernels " + kernels.shape_str());
    if (stride <= 0) throw std::invalid_argument("conv2d: stride must be positive");
    if (pad < 0) throw std::invalid_argument("conv2d: pad must be non-negative");

    const std::size_t n_batch = input.extent(0), channels = input.extent(1);
    const std::size_t height = input.extent(2), width = input.extent(3);
    const std::size_t filters = kernels.extent(0), kh = kernels.extent(2), kw = kernels.extent(3);
    if (kh > height + 2 * static_cast<std::size_t>(pad) ||
        kw > width + 2 * static_cast<std::size_t>(pad)) {
        throw std::invalid_argument("conv2d: kernel " + kernels.shape_str() +
                                    " larger than padded input " + input.shape_str() + " with pad " +
                                    std::to_string(pad));
    }

    const std::size_t oh = conv_out_extent(height, kh, stride, pad);
    const std::size_t ow = conv_out_extent(width, kw, stride, pad);
    Tensor out({n_batch, filters, oh, ow});

    const std::size_t s = static_cast<std::size_t>(stride);
    const long p = pad;
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t f = 0; f < filters; ++f) {
            double* oplane = out.data() + (n * filters + f) * oh * ow;
            std::fill(oplane, oplane + oh * ow, bias[f]);
            for (std::size_t c = 0; c < channels; ++c) {
                const double* iplane = input.data() + (n * channels + c) * height * width;
                const double* kplane = kernels.data() + (f * channels + c) * kh * kw;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const double kv = kplane[ky * kw + kx];
                        for (std::size_t y = 0; y < oh; ++y) {
                            const long iy = static_cast<long>(y * s) - p + static_cast<long>(ky);
                            if (iy < 0 || iy >= static_cast<long>(height)) continue;
                            const double* irow = iplane + static_cast<std::size_t>(iy) * width;
                            double* orow = oplane + y * ow;
                            for (std::size_t x = 0; x < ow; ++x) {
                                const long ix = static_cast<long>(x * s) - p + static_cast<long>(kx);
                                if (ix < 0 || ix >= static_cast<long>(width)) continue;
                                orow[x] += irow[static_cast<std::size_t>(ix)] * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

enum class PoolKind { max, avg };

/// Window max / window mean per channel, no padding; kernel == H == W gives
/// global pooling. Windows always lie fully inside the input.
inline Tensor pool2d(const Tensor& input, PoolKind kind, int kernel, int stride) {
    if (input.rank() != 4)
        throw std::invalid_argument("pool2d: input must be 4-D, got " + input.shape_str());
    if (kernel <= 0 || stride <= 0)
        throw std::invalid_argument("pool2d: kernel and stride must be positive");
    const std::size_t height = input.extent(2), width = input.extent(3);
    const std::size_t k = static_cast<std::size_t>(kernel);
    if (k > height || k > width) {
        throw std::invalid_argument("pool2d: kernel " + std::to_string(kernel) +
                                    " exceeds spatial extent of " + input.shape_str());
    }
    const std::size_t n_batch = input.extent(0), channels = input.extent(1);
    const std::size_t s = static_cast<std::size_t>(stride);
    const std::size_t oh = (height - k) / s + 1;
    const std::size_t ow = (width - k) / s + 1;
    Tensor out({n_batch, channels, oh, ow});

    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const double* iplane = input.data() + (n * channels + c) * height * width;
            double* oplane = out.data() + (n * channels + c) * oh * ow;
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                    const std::size_t y0 = y * s, x0 = x * s;
                    if (kind == PoolKind::max) {
                        double best = iplane[y0 * width + x0];
                        for (std::size_t dy = 0; dy < k; ++dy)
                            for (std::size_t dx = 0; dx < k; ++dx)
                                best = std::max(best, iplane[(y0 + dy) * width + x0 + dx]);
                        oplane[y * ow + x] = best;
                    } else {
                        double sum = 0.0;
                        for (std::size_t dy = 0; dy < k; ++dy)
                            for (std::size_t dx = 0; dx < k; ++dx)
                                sum += iplane[(y0 + dy) * width + x0 + dx];
                        oplane[y * ow + x] = sum / static_cast<double>(k * k);
                    }
                }
            }
        }
    }
    return out;
}

/// Max-pool that also reports, per output element, the flat input index of the
/// selected maximum (ties: lowest flat index). Used by the max-pool layer to
/// route gradients.
inline Tensor pool2d_argmax(const Tensor& input, int kernel, int stride,
                            std::vector<std::size_t>& argmax) {
    if (input.rank() != 4)
        throw std::invalid_argument("pool2d: input must be 4-D, got " + input.shape_str());
    if (kernel <= 0 || stride <= 0)
        throw std::invalid_argument("pool2d: kernel and stride must be positive");
    const std::size_t height = input.extent(2), width = input.extent(3);
    const std::size_t k = static_cast<std::size_t>(kernel);
    if (k > height || k > width) {
        throw std::invalid_argument("pool2d: kernel " + std::to_string(kernel) +
                                    " exceeds spatial extent of " + input.shape_str());
    }
    const std::size_t n_batch = input.extent(0), channels = input.extent(1);
    const std::size_t s = static_cast<std::size_t>(stride);
    const std::size_t oh = (height - k) / s + 1;
    const std::size_t ow = (width - k) / s + 1;
    Tensor out({n_batch, channels, oh, ow});
    argmax.assign(out.size(), 0);

    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t plane_base = (n * channels + c) * height * width;
            const double* iplane = input.data() + plane_base;
            const std::size_t out_base = (n * channels + c) * oh * ow;
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                    const std::size_t y0 = y * s, x0 = x * s;
                    double best = iplane[y0 * width + x0];
                    std::size_t best_idx = y0 * width + x0;
                    for (std::size_t dy = 0; dy < k; ++dy) {
                        for (std::size_t dx = 0; dx < k; ++dx) {
                            const std::size_t idx = (y0 + dy) * width + x0 + dx;
                            if (iplane[idx] > best) {  // strict: keeps lowest flat index on ties
                                best = iplane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[out_base + y * ow + x] = best;
                    argmax[out_base + y * ow + x] = plane_base + best_idx;
                }
            }
        }
    }
    return out;
}

}  // namespace mldr

#endif  // MLDR_KERNELS_HPP
