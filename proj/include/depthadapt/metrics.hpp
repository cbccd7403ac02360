#pragma once

#include "depthadapt/core.hpp"

namespace depthadapt {

enum class CropMode { garg, none };
enum class AccuracyRule { ratio, abs_margin };       // abs_margin: I(|d^-d| < d*delta)
enum class SqRelRule { linear_denominator, squared_denominator };

struct EvalConfig {
    float cap = 80.f;
    CropMode crop = CropMode::garg;
    float min_depth = 1e-3f;
    AccuracyRule accuracy = AccuracyRule::ratio;
    SqRelRule sqrel = SqRelRule::linear_denominator;

    void validate() const {
        if (!(cap > min_depth) || !(min_depth > 0.f)) throw ConfigError("EvalConfig: need cap > min_depth > 0");
    }
};

struct MetricsReport {
    double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
    double a1 = 0, a2 = 0, a3 = 0;
    size_t valid_pixel_count = 0;
};

struct CropRect {
    int r0, r1, c0, c1;  // half-open
};

/// Standard Eigen-split evaluation crop.
inline CropRect garg_crop_rect(int h, int w) {
    if (h < 10 || w < 10) throw ArgumentError("garg_crop: map too small");
    CropRect r{int(std::floor(0.40810811 * h)), int(std::floor(0.99189189 * h)),
               int(std::floor(0.03594771 * w)), int(std::floor(0.96405229 * w))};
    if (r.r0 >= r.r1 || r.c0 >= r.c1) throw ArgumentError("garg_crop: degenerate crop");
    return r;
}

inline DepthMap garg_crop(const DepthMap& m) {
    auto r = garg_crop_rect(m.h, m.w);
    DepthMap out(r.r1 - r.r0, r.c1 - r.c0);
    for (int row = r.r0; row < r.r1; ++row)
        for (int col = r.c0; col < r.c1; ++col) out.at(row - r.r0, col - r.c0) = m.at(row, col);
    return out;
}

/// The seven standard depth metrics over pixels with gt > 0, after capping
/// both maps at cfg.cap and flooring both at cfg.min_depth.
inline MetricsReport compute_metrics(const DepthMap& pred_in, const DepthMap& gt_in, const EvalConfig& cfg) {
    cfg.validate();
    if (pred_in.h != gt_in.h || pred_in.w != gt_in.w) throw ArgumentError("compute_metrics: shape mismatch");
    DepthMap pred = pred_in, gt = gt_in;
    if (cfg.crop == CropMode::garg) {
        pred = garg_crop(pred);
        gt = garg_crop(gt);
    }
    MetricsReport rep;
    double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0, a1 = 0, a2 = 0, a3 = 0;
    size_t n = 0;
    for (size_t i = 0; i < gt.data.size(); ++i) {
        if (gt.data[i] <= 0.f) continue;
        double d = std::max(std::min(double(gt.data[i]), double(cfg.cap)), double(cfg.min_depth));
        double dh = std::max(std::min(double(pred.data[i]), double(cfg.cap)), double(cfg.min_depth));
        double err = dh - d;
        abs_rel += std::fabs(err) / d;
        sq_rel += err * err / (cfg.sqrel == SqRelRule::linear_denominator ? d : d * d);
        sq += err * err;
        double dl = std::log(dh) - std::log(d);
        sq_log += dl * dl;
        if (cfg.accuracy == AccuracyRule::ratio) {
            double ratio = std::max(dh / d, d / dh);
            a1 += ratio < 1.25;
            a2 += ratio < 1.25 * 1.25;
            a3 += ratio < 1.25 * 1.25 * 1.25;
        } else {
            double m = std::fabs(err);
            a1 += m < d * 1.25;
            a2 += m < d * 1.25 * 1.25;
            a3 += m < d * 1.25 * 1.25 * 1.25;
        }
        ++n;
    }
    if (n == 0) throw ArgumentError("compute_metrics: zero valid pixels");
    rep.abs_rel = abs_rel / double(n);
    rep.sq_rel = sq_rel / double(n);
    rep.rmse = std::sqrt(sq / double(n));
    rep.rmse_log = std::sqrt(sq_log / double(n));
    rep.a1 = a1 / double(n);
    rep.a2 = a2 / double(n);
    rep.a3 = a3 / double(n);
    rep.valid_pixel_count = n;
    return rep;
}

}  // namespace depthadapt
