#pragma once

#include <array>
#include <string>

#include "depthadapt/core.hpp"
#include "depthadapt/dataset.hpp"

namespace depthadapt {

// ---------------------------------------------------------------------------
// Augmentation vocabulary
// ---------------------------------------------------------------------------

enum class AugOp {
    AutoContrast,
    Brightness,
    Color,
    Contrast,
    Equalize,
    Identity,
    Posterize,
    Rotate,
    Sharpness,
    ShearX,
    ShearY,
    Solarize,
    TranslateX,
    TranslateY,
};

inline bool is_geometric(AugOp op) {
    return op == AugOp::Rotate || op == AugOp::ShearX || op == AugOp::ShearY || op == AugOp::TranslateX ||
           op == AugOp::TranslateY;
}

inline const char* aug_op_name(AugOp op) {
    switch (op) {
        case AugOp::AutoContrast: return "AutoContrast";
        case AugOp::Brightness: return "Brightness";
        case AugOp::Color: return "Color";
        case AugOp::Contrast: return "Contrast";
        case AugOp::Equalize: return "Equalize";
        case AugOp::Identity: return "Identity";
        case AugOp::Posterize: return "Posterize";
        case AugOp::Rotate: return "Rotate";
        case AugOp::Sharpness: return "Sharpness";
        case AugOp::ShearX: return "ShearX";
        case AugOp::ShearY: return "ShearY";
        case AugOp::Solarize: return "Solarize";
        case AugOp::TranslateX: return "TranslateX";
        case AugOp::TranslateY: return "TranslateY";
    }
    return "?";
}

enum class AugSet { s_fm, s_geo };

// The FixMatch set, and the same set with all geometric ops removed.
inline const std::vector<AugOp>& aug_set_ops(AugSet set) {
    static const std::vector<AugOp> fm = {
        AugOp::AutoContrast, AugOp::Brightness, AugOp::Color,      AugOp::Contrast,  AugOp::Equalize,
        AugOp::Identity,     AugOp::Posterize,  AugOp::Rotate,     AugOp::Sharpness, AugOp::ShearX,
        AugOp::ShearY,       AugOp::Solarize,   AugOp::TranslateX, AugOp::TranslateY};
    static const std::vector<AugOp> geo = {AugOp::AutoContrast, AugOp::Brightness, AugOp::Color,
                                           AugOp::Contrast,     AugOp::Equalize,   AugOp::Identity,
                                           AugOp::Posterize,    AugOp::Sharpness,  AugOp::Solarize};
    return set == AugSet::s_fm ? fm : geo;
}

struct RandAugmentPolicy {
    AugSet set = AugSet::s_fm;
    int n = 1;  // chain depth
    int m = 7;  // severity level, 0..10
    bool apply_static_cutout = true;

    void validate() const {
        if (n < 0 || m < 0) throw ConfigError("RandAugmentPolicy: n and m must be >= 0");
        if (m > 10) throw ConfigError("RandAugmentPolicy: severity m must be <= 10");
    }
};

// ---------------------------------------------------------------------------
// Geometric bookkeeping
//
// The affine matrix maps augmented-frame pixel coordinates (x=col, y=row,
// homogeneous) to original-frame coordinates:  orig = M * [x_aug, y_aug, 1].
// Applying an op with sampling matrix A after a chain with matrix M composes
// to M * A... wait, sampling reads out(p) = in(A p), so chaining op1 then op2
// gives out2(p) = in(A1 * A2 * p); we right-multiply.
// ---------------------------------------------------------------------------

struct Affine2D {
    // row-major 2x3: [a b tx; c d ty]
    std::array<float, 6> m{1, 0, 0, 0, 1, 0};

    static Affine2D identity() { return {}; }

    bool is_identity(float eps = 0.f) const {
        const Affine2D id;
        for (int i = 0; i < 6; ++i)
            if (std::fabs(m[i] - id.m[i]) > eps) return false;
        return true;
    }

    void apply(float x, float y, float& ox, float& oy) const {
        ox = m[0] * x + m[1] * y + m[2];
        oy = m[3] * x + m[4] * y + m[5];
    }

    Affine2D compose(const Affine2D& rhs) const {  // this ∘ rhs
        Affine2D out;
        out.m[0] = m[0] * rhs.m[0] + m[1] * rhs.m[3];
        out.m[1] = m[0] * rhs.m[1] + m[1] * rhs.m[4];
        out.m[2] = m[0] * rhs.m[2] + m[1] * rhs.m[5] + m[2];
        out.m[3] = m[3] * rhs.m[0] + m[4] * rhs.m[3];
        out.m[4] = m[3] * rhs.m[1] + m[4] * rhs.m[4];
        out.m[5] = m[3] * rhs.m[2] + m[4] * rhs.m[5] + m[5];
        return out;
    }

    Affine2D inverse() const {
        float det = m[0] * m[4] - m[1] * m[3];
        if (std::fabs(det) < 1e-8f) throw std::runtime_error("Affine2D: matrix not invertible");
        Affine2D inv;
        inv.m[0] = m[4] / det;
        inv.m[1] = -m[1] / det;
        inv.m[3] = -m[3] / det;
        inv.m[4] = m[0] / det;
        inv.m[2] = -(inv.m[0] * m[2] + inv.m[1] * m[5]);
        inv.m[5] = -(inv.m[3] * m[2] + inv.m[4] * m[5]);
        return inv;
    }
};

struct GeometricRecord {
    Affine2D to_original;  // augmented-frame coords -> original-frame coords
    Mask valid;            // false where the augmented view sampled outside the input

    static GeometricRecord identity(int h, int w) {
        GeometricRecord r;
        r.valid = Mask(h, w, true);
        return r;
    }
};

namespace detail {

// Bilinear taps at continuous (x, y); weights sum to 1 when fully in bounds.
struct Taps {
    int idx[4];
    float w[4];
    int count = 0;
    bool in_bounds = true;  // all nonzero-weight taps inside the image
};

inline Taps bilinear_taps(float x, float y, int h, int w) {
    Taps t;
    int x0 = int(std::floor(x)), y0 = int(std::floor(y));
    float fx = x - float(x0), fy = y - float(y0);
    const float weights[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int i = 0; i < 4; ++i) {
        if (weights[i] <= 0.f) continue;
        if (xs[i] < 0 || xs[i] >= w || ys[i] < 0 || ys[i] >= h) {
            t.in_bounds = false;
            continue;
        }
        t.idx[t.count] = ys[i] * w + xs[i];
        t.w[t.count] = weights[i];
        ++t.count;
    }
    return t;
}

inline void warp_image(const Image& in, const Affine2D& to_src, Image& out, Mask* valid) {
    for (int r = 0; r < in.h; ++r)
        for (int c = 0; c < in.w; ++c) {
            float sx, sy;
            to_src.apply(float(c), float(r), sx, sy);
            auto t = bilinear_taps(sx, sy, in.h, in.w);
            for (int ch = 0; ch < 3; ++ch) {
                float v = 0.f;
                for (int i = 0; i < t.count; ++i) v += t.w[i] * in.data[size_t(ch) * in.pixels() + size_t(t.idx[i])];
                out.at(ch, r, c) = t.in_bounds ? v : 0.f;
            }
            if (valid) valid->set(r, c, t.in_bounds);
        }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// CutMix
// ---------------------------------------------------------------------------

/// Copies one axis-aligned rectangle of area fraction `alpha` from b into a,
/// identically on image and depth.
inline DepthSample cutmix(const DepthSample& a, const DepthSample& b, float alpha, Rng& rng) {
    if (a.image.h != b.image.h || a.image.w != b.image.w)
        throw ArgumentError("cutmix: resolution mismatch");
    if (alpha < 0.f || alpha > 1.f) throw ArgumentError("cutmix: alpha must be in [0,1]");
    DepthSample out = a;
    if (alpha == 0.f) return out;
    const int h = a.image.h, w = a.image.w;
    if (alpha == 1.f) {
        out.image = b.image;
        out.depth = b.depth;
        return out;
    }
    double area = alpha * double(h) * double(w);
    int ph = 0, pw = 0, r0 = 0, c0 = 0;
    for (int tries = 0; tries < 64; ++tries) {
        float aspect = urand(rng, 0.5f, 2.0f);  // height/width
        ph = std::max(1, int(std::lround(std::sqrt(area * aspect))));
        pw = std::max(1, int(std::lround(area / double(ph))));
        if (ph > h || pw > w) continue;
        r0 = irand(rng, 0, h - ph);
        c0 = irand(rng, 0, w - pw);
        break;
    }
    ph = std::min(ph, h);
    pw = std::min(pw, w);
    for (int r = r0; r < r0 + ph; ++r)
        for (int c = c0; c < c0 + pw; ++c) {
            for (int ch = 0; ch < 3; ++ch) out.image.at(ch, r, c) = b.image.at(ch, r, c);
            out.depth.at(r, c) = b.depth.at(r, c);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Pretraining augmentation: color jitter + small rotation
// ---------------------------------------------------------------------------

namespace detail {

inline void scale_brightness(Image& img, float f) {
    for (auto& v : img.data) v = clamp01(v * f);
}

inline void scale_contrast(Image& img, float f) {
    double mean = 0.0;
    for (auto v : img.data) mean += v;
    float mu = float(mean / double(img.data.size()));
    for (auto& v : img.data) v = clamp01(mu + (v - mu) * f);
}

inline void scale_saturation(Image& img, float f) {
    for (int r = 0; r < img.h; ++r)
        for (int c = 0; c < img.w; ++c) {
            float gray = 0.299f * img.at(0, r, c) + 0.587f * img.at(1, r, c) + 0.114f * img.at(2, r, c);
            for (int ch = 0; ch < 3; ++ch) img.at(ch, r, c) = clamp01(gray + (img.at(ch, r, c) - gray) * f);
        }
}

inline Affine2D rotation_about_center(float degrees, int h, int w) {
    float rad = degrees * 3.14159265358979f / 180.f;
    float cx = 0.5f * float(w - 1), cy = 0.5f * float(h - 1);
    float co = std::cos(rad), si = std::sin(rad);
    Affine2D a;
    a.m = {co, -si, cx - co * cx + si * cy, si, co, cy - si * cx - co * cy};
    return a;
}

}  // namespace detail

/// Deterministic core of pretrain_augment; exposed for tests that pin the
/// jitter factors and rotation angle.
inline DepthSample pretrain_augment_with(const DepthSample& s, float brightness, float contrast,
                                         float saturation, float rotation_deg) {
    DepthSample out = s;
    detail::scale_brightness(out.image, brightness);
    detail::scale_contrast(out.image, contrast);
    detail::scale_saturation(out.image, saturation);
    if (rotation_deg != 0.f) {
        auto rot = detail::rotation_about_center(rotation_deg, s.image.h, s.image.w);
        Image warped(s.image.h, s.image.w);
        Mask valid(s.image.h, s.image.w);
        detail::warp_image(out.image, rot, warped, &valid);
        out.image = warped;
        // Depth rotates jointly; nearest-neighbour so labels never blend
        // across discontinuities. Rotated-in pixels become invalid.
        DepthMap rd(s.depth.h, s.depth.w, 0.f);
        for (int r = 0; r < s.depth.h; ++r)
            for (int c = 0; c < s.depth.w; ++c) {
                float sx, sy;
                rot.apply(float(c), float(r), sx, sy);
                int nx = int(std::lround(sx)), ny = int(std::lround(sy));
                if (nx >= 0 && nx < s.depth.w && ny >= 0 && ny < s.depth.h && valid.at(r, c))
                    rd.at(r, c) = out.depth.at(ny, nx);
            }
        out.depth = rd;
    }
    return out;
}

/// Color jitter (brightness/contrast/saturation each uniform in [0.8, 1.2],
/// image only) then a joint rotation uniform in [-5, +5] degrees.
inline DepthSample pretrain_augment(const DepthSample& s, Rng& rng) {
    float b = urand(rng, 0.8f, 1.2f);
    float c = urand(rng, 0.8f, 1.2f);
    float sat = urand(rng, 0.8f, 1.2f);
    float angle = urand(rng, -5.f, 5.f);
    return pretrain_augment_with(s, b, c, sat, angle);
}

// ---------------------------------------------------------------------------
// RandAugment
// ---------------------------------------------------------------------------

namespace detail {

inline void op_autocontrast(Image& img) {
    for (int ch = 0; ch < 3; ++ch) {
        float lo = 1.f, hi = 0.f;
        for (size_t i = 0; i < img.pixels(); ++i) {
            float v = img.data[size_t(ch) * img.pixels() + i];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (hi - lo < 1e-6f) continue;
        float scale = 1.f / (hi - lo);
        for (size_t i = 0; i < img.pixels(); ++i) {
            auto& v = img.data[size_t(ch) * img.pixels() + i];
            v = clamp01((v - lo) * scale);
        }
    }
}

inline void op_equalize(Image& img) {
    for (int ch = 0; ch < 3; ++ch) {
        int hist[256] = {0};
        for (size_t i = 0; i < img.pixels(); ++i)
            ++hist[int(std::lround(clamp01(img.data[size_t(ch) * img.pixels() + i]) * 255.f))];
        int cdf[256], cum = 0;
        for (int i = 0; i < 256; ++i) {
            cum += hist[i];
            cdf[i] = cum;
        }
        int total = int(img.pixels());
        int cdf_min = 0;
        for (int i = 0; i < 256; ++i)
            if (hist[i] > 0) {
                cdf_min = cdf[i];
                break;
            }
        if (total == cdf_min) continue;  // constant channel
        for (size_t i = 0; i < img.pixels(); ++i) {
            auto& v = img.data[size_t(ch) * img.pixels() + i];
            int q = int(std::lround(clamp01(v) * 255.f));
            v = float(cdf[q] - cdf_min) / float(total - cdf_min);
        }
    }
}

inline void op_posterize(Image& img, int bits) {
    int shift = 8 - bits;
    for (auto& v : img.data) {
        int q = int(std::lround(clamp01(v) * 255.f));
        q = (q >> shift) << shift;
        v = float(q) / 255.f;
    }
}

inline void op_solarize(Image& img, float threshold) {
    for (auto& v : img.data)
        if (v > threshold) v = 1.f - v;
}

inline void op_sharpness(Image& img, float factor) {
    // PIL-style: blend with a 3x3 smoothed copy; factor > 1 sharpens.
    Image blur = img;
    for (int ch = 0; ch < 3; ++ch)
        for (int r = 1; r < img.h - 1; ++r)
            for (int c = 1; c < img.w - 1; ++c) {
                float acc = 0.f;
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc)
                        acc += img.at(ch, r + dr, c + dc) * ((dr == 0 && dc == 0) ? 5.f : 1.f);
                blur.at(ch, r, c) = acc / 13.f;
            }
    for (size_t i = 0; i < img.data.size(); ++i)
        img.data[i] = clamp01(blur.data[i] + (img.data[i] - blur.data[i]) * factor);
}

}  // namespace detail

/// Applies the static CutOut: erases one uniformly-placed rectangle covering
/// 10% of the image area (image only, gray fill).
inline void static_cutout(Image& img, Rng& rng) {
    double area = 0.10 * double(img.h) * double(img.w);
    float aspect = urand(rng, 0.5f, 2.0f);
    int ph = std::clamp(int(std::lround(std::sqrt(area * aspect))), 1, img.h);
    int pw = std::clamp(int(std::lround(area / double(ph))), 1, img.w);
    int r0 = irand(rng, 0, img.h - ph);
    int c0 = irand(rng, 0, img.w - pw);
    for (int ch = 0; ch < 3; ++ch)
        for (int r = r0; r < r0 + ph; ++r)
            for (int c = c0; c < c0 + pw; ++c) img.at(ch, r, c) = 0.5f;
}

struct AppliedOp {
    AugOp op;
    float magnitude;  // signed, already scaled to the op's range
};

namespace detail {

// Applies one op in place; geometric ops update the chain matrix and mask.
inline void apply_aug_op(Image& img, Mask& valid_f, Affine2D& chain, AugOp op, int m, Rng& rng,
                         AppliedOp* applied) {
    const float s = float(m) / 10.f;
    float sign = urand(rng) < 0.5f ? -1.f : 1.f;
    float mag = 0.f;
    Affine2D a = Affine2D::identity();
    switch (op) {
        case AugOp::Identity: break;
        case AugOp::AutoContrast: op_autocontrast(img); break;
        case AugOp::Equalize: op_equalize(img); break;
        case AugOp::Brightness:
            mag = sign * s * 0.9f;
            scale_brightness(img, 1.f + mag);
            break;
        case AugOp::Contrast:
            mag = sign * s * 0.9f;
            scale_contrast(img, 1.f + mag);
            break;
        case AugOp::Color:
            mag = sign * s * 0.9f;
            scale_saturation(img, 1.f + mag);
            break;
        case AugOp::Sharpness:
            mag = sign * s * 0.9f;
            op_sharpness(img, 1.f + mag);
            break;
        case AugOp::Posterize:
            // 8 bits at m=0 down to 4 bits at m=10.
            mag = float(8 - int(std::lround(s * 4.f)));
            op_posterize(img, int(mag));
            break;
        case AugOp::Solarize:
            mag = 1.f - s;
            op_solarize(img, mag);
            break;
        case AugOp::Rotate:
            mag = sign * s * 30.f;
            a = rotation_about_center(mag, img.h, img.w);
            break;
        case AugOp::ShearX: {
            mag = sign * s * 0.3f;
            float cy = 0.5f * float(img.h - 1);
            a.m = {1.f, mag, -mag * cy, 0.f, 1.f, 0.f};
            break;
        }
        case AugOp::ShearY: {
            mag = sign * s * 0.3f;
            float cx = 0.5f * float(img.w - 1);
            a.m = {1.f, 0.f, 0.f, mag, 1.f, -mag * cx};
            break;
        }
        case AugOp::TranslateX: {
            // Integer pixel shifts keep realignment exact.
            int t = int(std::lround(sign * s * 0.3f * float(img.w)));
            mag = float(t);
            a.m[2] = -float(t);
            break;
        }
        case AugOp::TranslateY: {
            int t = int(std::lround(sign * s * 0.3f * float(img.h)));
            mag = float(t);
            a.m[5] = -float(t);
            break;
        }
    }
    if (is_geometric(op) && !a.is_identity()) {
        Image warped(img.h, img.w);
        Mask wvalid(img.h, img.w);
        warp_image(img, a, warped, &wvalid);
        // Invalid regions of the running chain propagate through the warp.
        Mask combined(img.h, img.w);
        for (int r = 0; r < img.h; ++r)
            for (int c = 0; c < img.w; ++c) {
                bool ok = wvalid.at(r, c);
                if (ok) {
                    float sx, sy;
                    a.apply(float(c), float(r), sx, sy);
                    auto t = bilinear_taps(sx, sy, img.h, img.w);
                    for (int i = 0; i < t.count && ok; ++i)
                        ok = valid_f.data[size_t(t.idx[i])] != 0;
                }
                combined.set(r, c, ok);
            }
        img = warped;
        valid_f = combined;
        chain = chain.compose(a);
    }
    if (applied) *applied = {op, mag};
}

}  // namespace detail

/// RandAugment chain: optional static CutOut, then n ops sampled uniformly
/// with replacement from the policy set at severity m. Depth is never touched
/// here; target samples carry no labels.
inline std::pair<Image, GeometricRecord> rand_augment(const Image& x, const RandAugmentPolicy& policy,
                                                      Rng& rng, std::vector<AppliedOp>* trace = nullptr) {
    policy.validate();
    Image img = x;
    GeometricRecord rec = GeometricRecord::identity(x.h, x.w);
    if (policy.apply_static_cutout) static_cutout(img, rng);
    const auto& ops = aug_set_ops(policy.set);
    for (int i = 0; i < policy.n; ++i) {
        AugOp op = ops[size_t(irand(rng, 0, int(ops.size()) - 1))];
        AppliedOp applied{};
        detail::apply_aug_op(img, rec.valid, rec.to_original, op, policy.m, rng, &applied);
        if (trace) trace->push_back(applied);
    }
    return {std::move(img), std::move(rec)};
}

// ---------------------------------------------------------------------------
// Prediction realignment
// ---------------------------------------------------------------------------

/// Inverse-warps a prediction made in the augmented frame back to the original
/// frame. A pixel is valid only when every bilinear tap was in bounds and
/// marked valid by the record.
inline std::pair<DepthMap, Mask> realign_prediction(const DepthMap& pred, const GeometricRecord& rec) {
    if (pred.h != rec.valid.h || pred.w != rec.valid.w)
        throw ArgumentError("realign_prediction: resolution mismatch with record mask");
    DepthMap out(pred.h, pred.w, 0.f);
    Mask mask(pred.h, pred.w, false);
    Affine2D to_aug = rec.to_original.inverse();
    for (int r = 0; r < pred.h; ++r)
        for (int c = 0; c < pred.w; ++c) {
            float ax, ay;
            to_aug.apply(float(c), float(r), ax, ay);
            auto t = detail::bilinear_taps(ax, ay, pred.h, pred.w);
            if (!t.in_bounds) continue;
            bool ok = true;
            float v = 0.f;
            for (int i = 0; i < t.count; ++i) {
                ok = ok && rec.valid.data[size_t(t.idx[i])] != 0;
                v += t.w[i] * pred.data[size_t(t.idx[i])];
            }
            if (!ok) continue;
            out.at(r, c) = v;
            mask.set(r, c, true);
        }
    return {std::move(out), std::move(mask)};
}

/// Adjoint of realign_prediction: scatters a gradient in the original frame
/// back onto the augmented-frame prediction. Pixels outside `valid_out`
/// contribute nothing.
inline DepthMap realign_prediction_backward(const DepthMap& grad_out, const Mask& valid_out,
                                            const GeometricRecord& rec) {
    DepthMap grad_pred(grad_out.h, grad_out.w, 0.f);
    Affine2D to_aug = rec.to_original.inverse();
    for (int r = 0; r < grad_out.h; ++r)
        for (int c = 0; c < grad_out.w; ++c) {
            if (!valid_out.at(r, c)) continue;
            float g = grad_out.at(r, c);
            if (g == 0.f) continue;
            float ax, ay;
            to_aug.apply(float(c), float(r), ax, ay);
            auto t = detail::bilinear_taps(ax, ay, grad_out.h, grad_out.w);
            for (int i = 0; i < t.count; ++i) grad_pred.data[size_t(t.idx[i])] += t.w[i] * g;
        }
    return grad_pred;
}

}  // namespace depthadapt
