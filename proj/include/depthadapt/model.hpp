#pragma once

#include <Eigen/Dense>

#include "depthadapt/core.hpp"

namespace depthadapt {

struct ModelSpec {
    int h = 64, w = 96;
    int depth = 4;      // down-sampling stages
    int base = 16;      // channels at full resolution
    float max_depth = 16.f;

    void validate() const {
        if (depth < 1 || base < 1) throw ConfigError("ModelSpec: depth and base must be >= 1");
        if (!(max_depth > 0.f)) throw ConfigError("ModelSpec: max_depth must be > 0");
        int div = 1 << depth;
        if (h % div != 0 || w % div != 0)
            throw ConfigError("ModelSpec: resolution " + std::to_string(h) + "x" + std::to_string(w) +
                              " not divisible by 2^" + std::to_string(depth));
    }

    bool operator==(const ModelSpec&) const = default;
};

/// Feature map, channel-major.
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int c_, int h_, int w_, float fill = 0.f) : c(c_), h(h_), w(w_), data(size_t(c_) * h_ * w_, fill) {}
    size_t plane() const { return size_t(h) * w; }
    size_t size() const { return data.size(); }
};

namespace nn {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixCM = Eigen::MatrixXf;

// 3x3 convolution, pad 1, stride 1 or 2.
struct ConvBlock {
    int in_c = 0, out_c = 0, stride = 1;
    bool norm_relu = true;  // instance norm + ReLU after the conv (head skips both)
    std::vector<float> w;   // out_c x in_c x 3 x 3
    std::vector<float> b;   // out_c

    size_t param_count() const { return w.size() + b.size(); }
};

inline void im2col(const Tensor& x, int stride, MatrixCM& col) {
    const int oh = x.h / stride, ow = x.w / stride;
    col.resize(x.c * 9, oh * ow);
    for (int c = 0; c < x.c; ++c) {
        const float* plane = x.data.data() + size_t(c) * x.plane();
        for (int kr = 0; kr < 3; ++kr)
            for (int kc = 0; kc < 3; ++kc) {
                float* dst = col.data() + size_t((c * 9 + kr * 3 + kc)) ;
                // column-major: element (row, p) at col.data()[p*rows + row]
                const int rows = x.c * 9;
                for (int orow = 0; orow < oh; ++orow) {
                    int ir = orow * stride + kr - 1;
                    for (int ocol = 0; ocol < ow; ++ocol) {
                        int ic = ocol * stride + kc - 1;
                        float v = 0.f;
                        if (ir >= 0 && ir < x.h && ic >= 0 && ic < x.w) v = plane[size_t(ir) * x.w + ic];
                        dst[size_t(orow * ow + ocol) * rows] = v;
                    }
                }
            }
    }
}

inline void col2im(const MatrixCM& dcol, int stride, Tensor& dx) {
    const int oh = dx.h / stride, ow = dx.w / stride;
    const int rows = dx.c * 9;
    for (int c = 0; c < dx.c; ++c) {
        float* plane = dx.data.data() + size_t(c) * dx.plane();
        for (int kr = 0; kr < 3; ++kr)
            for (int kc = 0; kc < 3; ++kc) {
                const float* src = dcol.data() + size_t(c * 9 + kr * 3 + kc);
                for (int orow = 0; orow < oh; ++orow) {
                    int ir = orow * stride + kr - 1;
                    if (ir < 0 || ir >= dx.h) continue;
                    for (int ocol = 0; ocol < ow; ++ocol) {
                        int ic = ocol * stride + kc - 1;
                        if (ic < 0 || ic >= dx.w) continue;
                        plane[size_t(ir) * dx.w + ic] += src[size_t(orow * ow + ocol) * rows];
                    }
                }
            }
    }
}

constexpr float kInstanceNormEps = 1e-5f;

// Per-block forward cache for the backward pass.
struct BlockCache {
    Tensor input;             // block input (for dW)
    Tensor normed;            // post-norm pre-ReLU (x-hat); conv output for the head
    std::vector<float> inv_std;  // per channel
    Tensor output;            // post-ReLU
};

inline void conv_block_forward(const ConvBlock& blk, const Tensor& x, BlockCache& cache) {
    cache.input = x;
    const int oh = x.h / blk.stride, ow = x.w / blk.stride;
    Tensor y(blk.out_c, oh, ow);
    MatrixCM col;
    im2col(x, blk.stride, col);
    Eigen::Map<const MatrixRM> wm(blk.w.data(), blk.out_c, blk.in_c * 9);
    // y.data is channel-major, so each output channel is a contiguous row of
    // the (out_c x pixels) product.
    Eigen::Map<MatrixRM> out(y.data.data(), blk.out_c, oh * ow);
    out.noalias() = wm * col;
    for (int c = 0; c < blk.out_c; ++c) out.row(c).array() += blk.b[size_t(c)];
    if (!blk.norm_relu) {
        cache.normed = y;
        cache.output = std::move(y);
        return;
    }
    // Instance norm (no affine), then ReLU.
    cache.inv_std.assign(size_t(blk.out_c), 0.f);
    for (int c = 0; c < blk.out_c; ++c) {
        float* plane = y.data.data() + size_t(c) * y.plane();
        const size_t n = y.plane();
        double mean = 0.0;
        for (size_t p = 0; p < n; ++p) mean += plane[p];
        mean /= double(n);
        double var = 0.0;
        for (size_t p = 0; p < n; ++p) {
            double d = plane[p] - mean;
            var += d * d;
        }
        var /= double(n);
        float inv = 1.f / std::sqrt(float(var) + kInstanceNormEps);
        cache.inv_std[size_t(c)] = inv;
        for (size_t p = 0; p < n; ++p) plane[p] = (plane[p] - float(mean)) * inv;
    }
    cache.normed = y;
    for (auto& v : y.data)
        if (v < 0.f) v = 0.f;
    cache.output = std::move(y);
}

// dy is the gradient at the block output; returns gradient at the block input
// and accumulates dw/db.
inline Tensor conv_block_backward(const ConvBlock& blk, const BlockCache& cache, Tensor dy,
                                  std::vector<float>& dw, std::vector<float>& db, bool need_dx = true) {
    if (blk.norm_relu) {
        // ReLU
        for (size_t i = 0; i < dy.data.size(); ++i)
            if (cache.normed.data[i] <= 0.f) dy.data[i] = 0.f;
        // Instance norm: dx = inv*(g - mean(g) - xhat*mean(g*xhat))
        for (int c = 0; c < dy.c; ++c) {
            float* g = dy.data.data() + size_t(c) * dy.plane();
            const float* xh = cache.normed.data.data() + size_t(c) * dy.plane();
            const size_t n = dy.plane();
            double gm = 0.0, gxm = 0.0;
            for (size_t p = 0; p < n; ++p) {
                gm += g[p];
                gxm += double(g[p]) * xh[p];
            }
            gm /= double(n);
            gxm /= double(n);
            const float inv = cache.inv_std[size_t(c)];
            for (size_t p = 0; p < n; ++p) g[p] = inv * (g[p] - float(gm) - xh[p] * float(gxm));
        }
    }
    // Conv backward.
    const int oh = dy.h, ow = dy.w;
    MatrixCM col;
    im2col(cache.input, blk.stride, col);
    MatrixCM dyk(blk.out_c, oh * ow);
    for (int c = 0; c < blk.out_c; ++c) {
        const float* plane = dy.data.data() + size_t(c) * dy.plane();
        for (int p = 0; p < oh * ow; ++p) dyk(c, p) = plane[p];
        db[size_t(c)] += dyk.row(c).sum();
    }
    Eigen::Map<MatrixRM> dwm(dw.data(), blk.out_c, blk.in_c * 9);
    dwm.noalias() += dyk * col.transpose();
    if (!need_dx) return {};
    Eigen::Map<const MatrixRM> wm(blk.w.data(), blk.out_c, blk.in_c * 9);
    MatrixCM dcol = wm.transpose() * dyk;
    Tensor dx(cache.input.c, cache.input.h, cache.input.w, 0.f);
    col2im(dcol, blk.stride, dx);
    return dx;
}

inline Tensor upsample2(const Tensor& x) {
    Tensor y(x.c, x.h * 2, x.w * 2);
    for (int c = 0; c < x.c; ++c)
        for (int r = 0; r < y.h; ++r)
            for (int col = 0; col < y.w; ++col)
                y.data[(size_t(c) * y.h + r) * y.w + col] =
                    x.data[(size_t(c) * x.h + r / 2) * x.w + col / 2];
    return y;
}

inline Tensor upsample2_backward(const Tensor& dy) {
    Tensor dx(dy.c, dy.h / 2, dy.w / 2, 0.f);
    for (int c = 0; c < dy.c; ++c)
        for (int r = 0; r < dy.h; ++r)
            for (int col = 0; col < dy.w; ++col)
                dx.data[(size_t(c) * dx.h + r / 2) * dx.w + col / 2] +=
                    dy.data[(size_t(c) * dy.h + r) * dy.w + col];
    return dx;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    Tensor y(a.c + b.c, a.h, a.w);
    std::copy(a.data.begin(), a.data.end(), y.data.begin());
    std::copy(b.data.begin(), b.data.end(), y.data.begin() + std::ptrdiff_t(a.data.size()));
    return y;
}

}  // namespace nn

// ---------------------------------------------------------------------------
// DepthNet
//
// Layer list (depth D, base channels C):
//   stem    conv3x3   3           -> C            full res
//   down_d  conv3x3/2 C*2^(d-1)   -> C*2^d        d = 1..D
//   up_d    conv3x3   C*2^d + C*2^(d-1) -> C*2^(d-1)   on concat(upsample2, skip)
//   head    conv3x3   C           -> 1, sigmoid * max_depth
// Every conv except the head is followed by instance norm and ReLU; instance
// statistics keep every sample independent of its batch neighbours.
// ---------------------------------------------------------------------------

struct GradBuffer {
    struct BlockGrad {
        std::vector<float> dw, db;
    };
    std::vector<BlockGrad> blocks;

    void zero() {
        for (auto& b : blocks) {
            std::fill(b.dw.begin(), b.dw.end(), 0.f);
            std::fill(b.db.begin(), b.db.end(), 0.f);
        }
    }
    void add(const GradBuffer& other) {
        for (size_t i = 0; i < blocks.size(); ++i) {
            for (size_t j = 0; j < blocks[i].dw.size(); ++j) blocks[i].dw[j] += other.blocks[i].dw[j];
            for (size_t j = 0; j < blocks[i].db.size(); ++j) blocks[i].db[j] += other.blocks[i].db[j];
        }
    }
    double l2_norm() const {
        double s = 0.0;
        for (const auto& b : blocks) {
            for (float v : b.dw) s += double(v) * v;
            for (float v : b.db) s += double(v) * v;
        }
        return std::sqrt(s);
    }
};

class DepthNet {
  public:
    DepthNet() = default;

    DepthNet(const ModelSpec& spec, uint32_t seed) : spec_(spec) {
        spec.validate();
        Rng rng(seed);
        auto make = [&](int in_c, int out_c, int stride, bool nr) {
            nn::ConvBlock blk;
            blk.in_c = in_c;
            blk.out_c = out_c;
            blk.stride = stride;
            blk.norm_relu = nr;
            blk.w.resize(size_t(out_c) * in_c * 9);
            blk.b.assign(size_t(out_c), 0.f);
            float scale = std::sqrt(2.f / float(in_c * 9));  // He init
            for (auto& v : blk.w) v = scale * gauss_(rng);
            return blk;
        };
        const int C = spec.base, D = spec.depth;
        stem_ = make(3, C, 1, true);
        for (int d = 1; d <= D; ++d) down_.push_back(make(C << (d - 1), C << d, 2, true));
        for (int d = D; d >= 1; --d) up_.push_back(make((C << d) + (C << (d - 1)), C << (d - 1), 1, true));
        head_ = make(C, 1, 1, false);
    }

    const ModelSpec& spec() const { return spec_; }

    size_t param_count() const {
        size_t n = stem_.param_count() + head_.param_count();
        for (const auto& b : down_) n += b.param_count();
        for (const auto& b : up_) n += b.param_count();
        return n;
    }

    /// Blocks in serialization/gradient order: stem, down..., up..., head.
    std::vector<const nn::ConvBlock*> blocks() const {
        std::vector<const nn::ConvBlock*> out{&stem_};
        for (const auto& b : down_) out.push_back(&b);
        for (const auto& b : up_) out.push_back(&b);
        out.push_back(&head_);
        return out;
    }
    std::vector<nn::ConvBlock*> blocks() {
        std::vector<nn::ConvBlock*> out{&stem_};
        for (auto& b : down_) out.push_back(&b);
        for (auto& b : up_) out.push_back(&b);
        out.push_back(&head_);
        return out;
    }
    std::string block_name(size_t i) const {
        const size_t D = down_.size();
        if (i == 0) return "stem";
        if (i <= D) return "down" + std::to_string(i);
        if (i <= 2 * D) return "up" + std::to_string(2 * D + 1 - i);  // up_D first
        return "head";
    }
    /// Indices of the expansion-phase blocks (up convs + head) within blocks().
    std::vector<size_t> decoder_block_indices() const {
        std::vector<size_t> idx;
        for (size_t i = 1 + down_.size(); i < 2 + 2 * down_.size(); ++i) idx.push_back(i);
        return idx;
    }

    GradBuffer make_grad_buffer() const {
        GradBuffer g;
        for (const auto* b : blocks()) g.blocks.push_back({std::vector<float>(b->w.size(), 0.f),
                                                           std::vector<float>(b->b.size(), 0.f)});
        return g;
    }

    uint64_t checksum() const {
        uint64_t h = 1469598103934665603ull;
        for (const auto* b : blocks()) {
            h = fnv1a(b->w.data(), b->w.size() * 4, h);
            h = fnv1a(b->b.data(), b->b.size() * 4, h);
        }
        return h;
    }

    struct Activations {
        std::vector<nn::BlockCache> enc;  // stem + down blocks
        std::vector<nn::BlockCache> dec;  // up blocks
        nn::BlockCache head;
        DepthMap pred;
    };

    DepthMap forward(const Image& img, Activations* acts = nullptr) const {
        if (img.h != spec_.h || img.w != spec_.w)
            throw ArgumentError("DepthNet: input resolution mismatch");
        Activations local;
        Activations& a = acts ? *acts : local;
        a.enc.resize(1 + down_.size());
        a.dec.resize(up_.size());

        Tensor x(3, img.h, img.w);
        x.data = img.data;
        nn::conv_block_forward(stem_, x, a.enc[0]);
        for (size_t d = 0; d < down_.size(); ++d)
            nn::conv_block_forward(down_[d], a.enc[d].output, a.enc[d + 1]);

        const Tensor* u = &a.enc.back().output;
        for (size_t k = 0; k < up_.size(); ++k) {
            Tensor cat = nn::concat_channels(nn::upsample2(*u), a.enc[down_.size() - 1 - k].output);
            nn::conv_block_forward(up_[k], cat, a.dec[k]);
            u = &a.dec[k].output;
        }
        nn::conv_block_forward(head_, *u, a.head);

        DepthMap pred(img.h, img.w);
        for (size_t i = 0; i < pred.data.size(); ++i) {
            float z = a.head.output.data[i];
            pred.data[i] = spec_.max_depth / (1.f + std::exp(-z));
        }
        a.pred = pred;
        return pred;
    }

    DepthMap predict(const Image& img) const { return forward(img); }

    std::vector<DepthMap> predict(const std::vector<Image>& batch) const {
        std::vector<DepthMap> out(batch.size());
        for (size_t i = 0; i < batch.size(); ++i) out[i] = forward(batch[i]);
        return out;
    }

    /// Backpropagates a gradient w.r.t. the predicted depth map through the
    /// cached forward pass, accumulating parameter gradients.
    void backward(const Activations& a, const DepthMap& dpred, GradBuffer& grads) const {
        const size_t D = down_.size();
        // Sigmoid head: pred = max_depth * sigmoid(z)
        Tensor dz(1, spec_.h, spec_.w);
        for (size_t i = 0; i < dz.data.size(); ++i) {
            float s = a.pred.data[i] / spec_.max_depth;
            dz.data[i] = dpred.data[i] * spec_.max_depth * s * (1.f - s);
        }
        const size_t head_idx = 1 + 2 * D;
        Tensor du = nn::conv_block_backward(head_, a.head, std::move(dz), grads.blocks[head_idx].dw,
                                            grads.blocks[head_idx].db);

        std::vector<Tensor> denc(1 + D);  // gradients at encoder outputs
        // du enters at the shallowest decoder block (the head input) and
        // flows toward the deepest.
        for (size_t k = up_.size(); k-- > 0;) {
            const size_t gidx = 1 + D + k;
            Tensor dcat = nn::conv_block_backward(up_[k], a.dec[k], std::move(du), grads.blocks[gidx].dw,
                                                  grads.blocks[gidx].db);
            // Split concat: first part is the upsampled path, second the skip.
            const size_t skip_level = D - 1 - k;
            const Tensor& skip = a.enc[skip_level].output;
            int up_c = dcat.c - skip.c;
            Tensor dup(up_c, dcat.h, dcat.w), dskip(skip.c, dcat.h, dcat.w);
            std::copy(dcat.data.begin(), dcat.data.begin() + std::ptrdiff_t(dup.data.size()), dup.data.begin());
            std::copy(dcat.data.begin() + std::ptrdiff_t(dup.data.size()), dcat.data.end(), dskip.data.begin());
            if (denc[skip_level].size() == 0)
                denc[skip_level] = std::move(dskip);
            else
                for (size_t i = 0; i < dskip.data.size(); ++i) denc[skip_level].data[i] += dskip.data[i];
            du = nn::upsample2_backward(dup);
        }
        // du is now the gradient at the deepest encoder output.
        if (denc[D].size() == 0)
            denc[D] = std::move(du);
        else
            for (size_t i = 0; i < du.data.size(); ++i) denc[D].data[i] += du.data[i];

        for (size_t d = D; d >= 1; --d) {
            Tensor dx = nn::conv_block_backward(down_[d - 1], a.enc[d], std::move(denc[d]),
                                                grads.blocks[d].dw, grads.blocks[d].db);
            if (denc[d - 1].size() == 0)
                denc[d - 1] = std::move(dx);
            else
                for (size_t i = 0; i < dx.data.size(); ++i) denc[d - 1].data[i] += dx.data[i];
        }
        nn::conv_block_backward(stem_, a.enc[0], std::move(denc[0]), grads.blocks[0].dw, grads.blocks[0].db,
                                /*need_dx=*/false);
    }

    /// Mean |gradient| of each expansion-phase block's weights, in decoder
    /// order (deepest up conv first, head last).
    std::vector<double> decoder_gradient_magnitudes(const GradBuffer& grads) const {
        std::vector<double> out;
        for (size_t i : decoder_block_indices()) {
            const auto& blk = grads.blocks[i];
            double s = 0.0;
            for (float v : blk.dw) s += std::fabs(double(v));
            for (float v : blk.db) s += std::fabs(double(v));
            out.push_back(s / double(blk.dw.size() + blk.db.size()));
        }
        return out;
    }

  private:
    static float gauss_(Rng& rng) {
        float u1 = std::max(urand(rng), 1e-7f), u2 = urand(rng);
        return std::sqrt(-2.f * std::log(u1)) * std::cos(6.2831853f * u2);
    }

    ModelSpec spec_;
    nn::ConvBlock stem_;
    std::vector<nn::ConvBlock> down_;
    std::vector<nn::ConvBlock> up_;
    nn::ConvBlock head_;
};

inline DepthNet init_model(const ModelSpec& spec, uint32_t seed) { return DepthNet(spec, seed); }

}  // namespace depthadapt
