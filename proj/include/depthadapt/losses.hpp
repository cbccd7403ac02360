#pragma once

#include <functional>
#include <numeric>
#include <optional>

#include "depthadapt/augment.hpp"
#include "depthadapt/core.hpp"

namespace depthadapt {

struct NonFiniteLossError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Batch composition
// ---------------------------------------------------------------------------

/// Supervised/unsupervised ratio, e.g. 2/1 or 7/4.
struct Ratio {
    int num = 2, den = 1;

    double value() const { return double(num) / double(den); }

    static Ratio parse(const std::string& s) {
        Ratio r;
        auto slash = s.find('/');
        r.num = std::stoi(s.substr(0, slash));
        r.den = slash == std::string::npos ? 1 : std::stoi(s.substr(slash + 1));
        if (r.num <= 0 || r.den <= 0) throw ConfigError("ratio must be positive: " + s);
        return r;
    }
    std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
};

struct BatchPlan {
    int N = 0;
    Ratio r;
    int streams = 0;          // perturbation count per target sample, original included
    int sup_pairs = 0;        // = N
    int sup_images = 0;       // = 2N
    int unsup_originals = 0;  // = N / r
    int concat_total = 0;     // = streams * unsup_originals + sup_images
};

inline BatchPlan compose_batch(int n, Ratio r, int streams) {
    if (n < 1) throw ConfigError("compose_batch: N must be >= 1");
    if (streams < 2 || streams > 4) throw ConfigError("compose_batch: streams must be in {2,3,4}");
    if ((int64_t(n) * r.den) % r.num != 0)
        throw ConfigError("compose_batch: N=" + std::to_string(n) + " not divisible by r=" + r.str());
    BatchPlan p;
    p.N = n;
    p.r = r;
    p.streams = streams;
    p.sup_pairs = n;
    p.sup_images = 2 * n;
    p.unsup_originals = int(int64_t(n) * r.den / r.num);
    p.concat_total = streams * p.unsup_originals + p.sup_images;
    return p;
}

// ---------------------------------------------------------------------------
// Loss configuration
// ---------------------------------------------------------------------------

enum class SourceVariant { pairwise_sum, per_sample, pairwise_separate, none };
enum class Alignment { realign, naive };

inline SourceVariant parse_source_variant(const std::string& s) {
    if (s == "pairwise_sum") return SourceVariant::pairwise_sum;
    if (s == "per_sample") return SourceVariant::per_sample;
    if (s == "pairwise_separate") return SourceVariant::pairwise_separate;
    if (s == "none") return SourceVariant::none;
    throw ConfigError("unknown source loss variant: " + s);
}

struct LossConfig {
    SourceVariant source_variant = SourceVariant::pairwise_sum;
    int streams = 3;
    bool stop_gradient_on_reference = true;
    Alignment alignment = Alignment::realign;

    void validate() const {
        if (streams < 2 || streams > 4) throw ConfigError("loss.streams must be in {2,3,4}");
    }
};

// ---------------------------------------------------------------------------
// Masked L1 primitives
//
// Every loss reduces mean-over-valid-pixels, then mean-over-batch, so values
// are resolution- and batch-invariant.
// ---------------------------------------------------------------------------

namespace detail {

// Masked L1 against a constant label; optional gradient w.r.t. pred.
inline double masked_l1(const DepthMap& pred, const DepthMap& label, DepthMap* grad) {
    size_t n = 0;
    double sum = 0.0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        if (label.data[i] <= 0.f) continue;
        sum += std::fabs(double(pred.data[i]) - label.data[i]);
        ++n;
    }
    if (n == 0) throw ArgumentError("masked_l1: no valid pixels");
    if (grad) {
        *grad = DepthMap(pred.h, pred.w, 0.f);
        for (size_t i = 0; i < pred.data.size(); ++i) {
            if (label.data[i] <= 0.f) continue;
            float d = pred.data[i] - label.data[i];
            grad->data[i] = (d > 0.f ? 1.f : (d < 0.f ? -1.f : 0.f)) / float(n);
        }
    }
    return sum / double(n);
}

inline void scale_grad(DepthMap& g, float s) {
    for (auto& v : g.data) v *= s;
}

inline void add_scaled(DepthMap& dst, const DepthMap& src, float s) {
    if (dst.data.empty()) dst = DepthMap(src.h, src.w, 0.f);
    for (size_t i = 0; i < src.data.size(); ++i) dst.data[i] += s * src.data[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pretraining loss
// ---------------------------------------------------------------------------

/// Mean-over-valid-pixel L1 per sample, mean over the batch. Gradients, when
/// requested, are w.r.t. the predictions.
inline double pretrain_loss(const std::vector<DepthMap>& preds, const std::vector<DepthMap>& labels,
                            std::vector<DepthMap>* grads = nullptr) {
    if (preds.size() != labels.size() || preds.empty())
        throw ArgumentError("pretrain_loss: batch size mismatch or empty");
    double total = 0.0;
    if (grads) grads->assign(preds.size(), {});
    for (size_t i = 0; i < preds.size(); ++i) {
        DepthMap g;
        total += detail::masked_l1(preds[i], labels[i], grads ? &g : nullptr);
        if (grads) {
            detail::scale_grad(g, 1.f / float(preds.size()));
            (*grads)[i] = std::move(g);
        }
    }
    return total / double(preds.size());
}

// ---------------------------------------------------------------------------
// Source losses
// ---------------------------------------------------------------------------

struct SourcePair {
    DepthMap pred1, pred2, label1, label2;
};

/// L1 between the sum of predictions and the sum of labels, masked to pixels
/// where both labels are valid.
inline double pairwise_source_loss(const SourcePair& p, DepthMap* g1 = nullptr, DepthMap* g2 = nullptr) {
    size_t n = 0;
    double sum = 0.0;
    for (size_t i = 0; i < p.pred1.data.size(); ++i) {
        if (p.label1.data[i] <= 0.f || p.label2.data[i] <= 0.f) continue;
        sum += std::fabs(double(p.pred1.data[i]) + p.pred2.data[i] - p.label1.data[i] - p.label2.data[i]);
        ++n;
    }
    if (n == 0) throw ArgumentError("pairwise_source_loss: empty joint valid mask");
    if (g1) *g1 = DepthMap(p.pred1.h, p.pred1.w, 0.f);
    if (g2) *g2 = DepthMap(p.pred2.h, p.pred2.w, 0.f);
    if (g1 || g2)
        for (size_t i = 0; i < p.pred1.data.size(); ++i) {
            if (p.label1.data[i] <= 0.f || p.label2.data[i] <= 0.f) continue;
            float d = p.pred1.data[i] + p.pred2.data[i] - p.label1.data[i] - p.label2.data[i];
            float s = (d > 0.f ? 1.f : (d < 0.f ? -1.f : 0.f)) / float(n);
            if (g1) g1->data[i] = s;
            if (g2) g2->data[i] = s;
        }
    return sum / double(n);
}

/// Dispatches on LossConfig::source_variant; mean over pairs.
inline double source_loss(const LossConfig& cfg, const std::vector<SourcePair>& pairs,
                          std::vector<std::pair<DepthMap, DepthMap>>* grads = nullptr) {
    if (cfg.source_variant == SourceVariant::none) {
        if (grads) grads->clear();
        return 0.0;
    }
    if (pairs.empty()) throw ArgumentError("source_loss: no pairs");
    if (grads) grads->assign(pairs.size(), {});
    double total = 0.0;
    const float bscale = 1.f / float(pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        DepthMap g1, g2;
        double v = 0.0;
        switch (cfg.source_variant) {
            case SourceVariant::pairwise_sum:
                v = pairwise_source_loss(p, grads ? &g1 : nullptr, grads ? &g2 : nullptr);
                break;
            case SourceVariant::per_sample:
                v = 0.5 * (detail::masked_l1(p.pred1, p.label1, grads ? &g1 : nullptr) +
                           detail::masked_l1(p.pred2, p.label2, grads ? &g2 : nullptr));
                if (grads) {
                    detail::scale_grad(g1, 0.5f);
                    detail::scale_grad(g2, 0.5f);
                }
                break;
            case SourceVariant::pairwise_separate:
                v = detail::masked_l1(p.pred1, p.label1, grads ? &g1 : nullptr) +
                    detail::masked_l1(p.pred2, p.label2, grads ? &g2 : nullptr);
                break;
            case SourceVariant::none: break;
        }
        total += v;
        if (grads) {
            detail::scale_grad(g1, bscale);
            detail::scale_grad(g2, bscale);
            (*grads)[i] = {std::move(g1), std::move(g2)};
        }
    }
    return total / double(pairs.size());
}

// ---------------------------------------------------------------------------
// Multi-stream consistency loss
// ---------------------------------------------------------------------------

struct ConsistencyGrads {
    DepthMap ref;                    // zero when stop_gradient_on_reference
    std::vector<DepthMap> aug;       // one per augmented stream, in the augmented frame
    int empty_streams = 0;           // streams skipped for lack of valid pixels
};

/// Sum over streams of the masked mean |ref - realigned(aug)|. Under naive
/// alignment the maps are compared in place, full mask. The unperturbed
/// reference acts as a pseudo-label when stop_gradient_on_reference is set.
inline double consistency_loss(const DepthMap& ref_pred, const std::vector<DepthMap>& aug_preds,
                               const std::vector<GeometricRecord>& records, const LossConfig& cfg,
                               ConsistencyGrads* grads = nullptr) {
    if (aug_preds.size() != records.size() || int(aug_preds.size()) != cfg.streams - 1)
        throw ArgumentError("consistency_loss: expected streams-1 augmented predictions with records");
    if (grads) {
        grads->ref = DepthMap(ref_pred.h, ref_pred.w, 0.f);
        grads->aug.assign(aug_preds.size(), {});
        grads->empty_streams = 0;
    }
    double total = 0.0;
    for (size_t s = 0; s < aug_preds.size(); ++s) {
        DepthMap aligned;
        Mask mask;
        if (cfg.alignment == Alignment::realign) {
            auto [a, m] = realign_prediction(aug_preds[s], records[s]);
            aligned = std::move(a);
            mask = std::move(m);
        } else {
            aligned = aug_preds[s];
            mask = Mask(ref_pred.h, ref_pred.w, true);
        }
        size_t n = mask.count();
        if (n == 0) {
            if (grads) {
                grads->aug[s] = DepthMap(ref_pred.h, ref_pred.w, 0.f);
                ++grads->empty_streams;
            }
            continue;  // empty stream contributes 0
        }
        double sum = 0.0;
        DepthMap daligned(ref_pred.h, ref_pred.w, 0.f);
        for (size_t i = 0; i < ref_pred.data.size(); ++i) {
            if (!mask.data[i]) continue;
            float d = ref_pred.data[i] - aligned.data[i];
            sum += std::fabs(double(d));
            if (grads) {
                float sg = (d > 0.f ? 1.f : (d < 0.f ? -1.f : 0.f)) / float(n);
                daligned.data[i] = -sg;
                if (!cfg.stop_gradient_on_reference) grads->ref.data[i] += sg;
            }
        }
        total += sum / double(n);
        if (grads) {
            if (cfg.alignment == Alignment::realign)
                grads->aug[s] = realign_prediction_backward(daligned, mask, records[s]);
            else
                grads->aug[s] = std::move(daligned);
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// Total loss
// ---------------------------------------------------------------------------

inline double total_loss(double source_term, double consistency_term) {
    if (!std::isfinite(source_term) || !std::isfinite(consistency_term))
        throw NonFiniteLossError("total_loss: non-finite input (source=" + std::to_string(source_term) +
                                 ", consistency=" + std::to_string(consistency_term) + ")");
    return 0.5 * (source_term + consistency_term);
}

}  // namespace depthadapt
