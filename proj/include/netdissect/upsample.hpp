#pragma once
// Receptive-field anchored bilinear upsampling and unit-mask binarization.
//
// Activation cell (i, j) is anchored at input pixel
// (offset_y + i * stride_y, offset_x + j * stride_x). Each output pixel
// blends its four surrounding anchors; outside the anchor hull the nearest
// anchor value is held constant. All blending is float32.

#include "netdissect/concept_store.hpp"
#include "netdissect/error.hpp"
#include "netdissect/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace netdissect {

using ScaledMap = Raster<float>;

namespace detail {

// a + w (b - a), exact at w = 0 and when a == b, clamped to [min, max].
inline float blend(float a, float b, float w) {
    if (w == 0.0f || a == b) return a;
    float r = a + w * (b - a);
    float lo = std::min(a, b), hi = std::max(a, b);
    return std::clamp(r, lo, hi);
}

struct AxisWeights {
    std::vector<std::uint32_t> lo, hi;
    std::vector<float> w;

    AxisWeights(std::size_t out, std::size_t grid, double offset, double stride) : lo(out), hi(out), w(out) {
        const double last = double(grid - 1);
        for (std::size_t p = 0; p < out; ++p) {
            double f = (double(p) - offset) / stride;
            if (!(f > 0.0)) {
                lo[p] = hi[p] = 0;
                w[p] = 0.0f;
            } else if (f >= last) {
                lo[p] = hi[p] = static_cast<std::uint32_t>(grid - 1);
                w[p] = 0.0f;
            } else {
                double i0 = std::floor(f);
                lo[p] = static_cast<std::uint32_t>(i0);
                hi[p] = lo[p] + 1;
                w[p] = static_cast<float>(f - i0);
            }
        }
    }
};

}  // namespace detail

// Precomputed interpolation tables for one (geometry, output size) pair.
class Upsampler {
public:
    Upsampler(const LayerGeometry& g, std::size_t out_h, std::size_t out_w)
        : h_(g.h), w_(g.w), out_h_(out_h), out_w_(out_w),
          rows_(out_h, std::max<std::size_t>(g.h, 1), g.offset_y, g.stride_y),
          cols_(out_w, std::max<std::size_t>(g.w, 1), g.offset_x, g.stride_x),
          identity_(g.is_identity_for(out_h, out_w)) {
        if (g.h < 1 || g.w < 1) throw Error("activation map must be at least 1x1");
        if (out_h < 1 || out_w < 1) throw Error("output size must be at least 1x1");
        g.validate();
    }

    std::size_t out_h() const { return out_h_; }
    std::size_t out_w() const { return out_w_; }
    bool identity() const { return identity_; }

    void apply(std::span<const float> a, std::span<float> out) const {
        if (a.size() != h_ * w_) throw Error("activation map size does not match geometry");
        if (identity_) {
            std::copy(a.begin(), a.end(), out.begin());
            return;
        }
        for (std::size_t y = 0; y < out_h_; ++y) {
            const float* r0 = a.data() + rows_.lo[y] * w_;
            const float* r1 = a.data() + rows_.hi[y] * w_;
            const float wy = rows_.w[y];
            float* o = out.data() + y * out_w_;
            for (std::size_t x = 0; x < out_w_; ++x) {
                const auto c0 = cols_.lo[x], c1 = cols_.hi[x];
                const float wx = cols_.w[x];
                float top = detail::blend(r0[c0], r0[c1], wx);
                float bot = detail::blend(r1[c0], r1[c1], wx);
                o[x] = detail::blend(top, bot, wy);
            }
        }
    }

    // Fused upsample + threshold; writes M = (S >= t) and returns |M|.
    std::uint64_t mask(std::span<const float> a, float t, std::vector<float>& scratch, Mask& out) const {
        scratch.resize(out_h_ * out_w_);
        apply(a, scratch);
        out.height = out_h_;
        out.width = out_w_;
        out.data.resize(out_h_ * out_w_);
        std::uint64_t n = 0;
        for (std::size_t i = 0; i < scratch.size(); ++i) {
            bool on = scratch[i] >= t;
            out.data[i] = on;
            n += on;
        }
        return n;
    }

private:
    std::size_t h_, w_, out_h_, out_w_;
    detail::AxisWeights rows_, cols_;
    bool identity_;
};

inline ScaledMap upsample_bilinear(std::span<const float> a, const LayerGeometry& g, std::size_t out_h,
                                   std::size_t out_w) {
    Upsampler up(g, out_h, out_w);
    ScaledMap s(out_h, out_w);
    up.apply(a, s.data);
    return s;
}

inline Mask binarize(const ScaledMap& s, float threshold) {
    Mask m(s.height, s.width, 0);
    for (std::size_t i = 0; i < s.size(); ++i) m.data[i] = s.data[i] >= threshold;
    return m;
}

}  // namespace netdissect
