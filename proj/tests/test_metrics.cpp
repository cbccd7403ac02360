#include <doctest.h>

#include "depthadapt/metrics.hpp"

using namespace depthadapt;

namespace {

DepthMap from_values(std::vector<float> v) {
    DepthMap m(1, int(v.size()));
    m.data = std::move(v);
    return m;
}

EvalConfig nocrop(float cap = 80.f) {
    EvalConfig cfg;
    cfg.cap = cap;
    cfg.crop = CropMode::none;
    return cfg;
}

// Independent straight-line reference implementation.
MetricsReport reference_metrics(const DepthMap& pred, const DepthMap& gt, const EvalConfig& cfg) {
    double ar = 0, sr = 0, s2 = 0, sl = 0, a1 = 0, a2 = 0, a3 = 0;
    size_t n = 0;
    for (int r = 0; r < gt.h; ++r)
        for (int c = 0; c < gt.w; ++c) {
            if (!(gt.at(r, c) > 0.f)) continue;
            auto clamp = [&](double x) {
                return std::min(std::max(x, double(cfg.min_depth)), double(cfg.cap));
            };
            double d = clamp(gt.at(r, c)), dh = clamp(pred.at(r, c));
            ar += std::fabs(dh - d) / d;
            sr += (dh - d) * (dh - d) / (cfg.sqrel == SqRelRule::squared_denominator ? d * d : d);
            s2 += (dh - d) * (dh - d);
            sl += std::pow(std::log(dh) - std::log(d), 2.0);
            double t1 = 1.25, t2 = 1.25 * 1.25, t3 = t2 * 1.25;
            if (cfg.accuracy == AccuracyRule::ratio) {
                double q = std::max(dh / d, d / dh);
                a1 += q < t1;
                a2 += q < t2;
                a3 += q < t3;
            } else {
                a1 += std::fabs(dh - d) < d * t1;
                a2 += std::fabs(dh - d) < d * t2;
                a3 += std::fabs(dh - d) < d * t3;
            }
            ++n;
        }
    MetricsReport rep;
    rep.abs_rel = ar / double(n);
    rep.sq_rel = sr / double(n);
    rep.rmse = std::sqrt(s2 / double(n));
    rep.rmse_log = std::sqrt(sl / double(n));
    rep.a1 = a1 / double(n);
    rep.a2 = a2 / double(n);
    rep.a3 = a3 / double(n);
    rep.valid_pixel_count = n;
    return rep;
}

}  // namespace

TEST_CASE("hand-computed three-pixel example") {
    auto gt = from_values({2.f, 4.f, 8.f});
    auto pred = from_values({2.f, 5.f, 6.f});
    auto rep = compute_metrics(pred, gt, nocrop());
    CHECK(rep.valid_pixel_count == 3);
    CHECK(rep.abs_rel == doctest::Approx(0.5 / 3.0));
    CHECK(rep.sq_rel == doctest::Approx(0.25));
    CHECK(rep.rmse == doctest::Approx(std::sqrt(5.0 / 3.0)));
    double sl = std::pow(std::log(1.25), 2) + std::pow(std::log(0.75), 2);
    CHECK(rep.rmse_log == doctest::Approx(std::sqrt(sl / 3.0)));
    CHECK(rep.a1 == doctest::Approx(1.0 / 3.0));
    CHECK(rep.a2 == doctest::Approx(1.0));
    CHECK(rep.a3 == doctest::Approx(1.0));

    auto cfg = nocrop();
    cfg.sqrel = SqRelRule::squared_denominator;
    CHECK(compute_metrics(pred, gt, cfg).sq_rel == doctest::Approx(0.125 / 3.0));

    cfg = nocrop();
    cfg.accuracy = AccuracyRule::abs_margin;
    CHECK(compute_metrics(pred, gt, cfg).a1 == doctest::Approx(1.0));
}

TEST_CASE("agrees with a straight-line reference on random maps") {
    Rng rng(31);
    for (int t = 0; t < 100; ++t) {
        DepthMap gt(8, 8), pred(8, 8);
        for (auto& v : gt.data) v = urand(rng) < 0.15f ? 0.f : urand(rng, 0.5f, 90.f);
        for (auto& v : pred.data) v = urand(rng, 0.f, 90.f);
        gt.data[0] = 5.f;  // keep at least one valid pixel
        EvalConfig cfg = nocrop(t % 2 ? 80.f : 30.f);
        cfg.sqrel = t % 3 ? SqRelRule::linear_denominator : SqRelRule::squared_denominator;
        cfg.accuracy = t % 5 ? AccuracyRule::ratio : AccuracyRule::abs_margin;
        auto a = compute_metrics(pred, gt, cfg);
        auto b = reference_metrics(pred, gt, cfg);
        CHECK(a.valid_pixel_count == b.valid_pixel_count);
        CHECK(a.abs_rel == doctest::Approx(b.abs_rel).epsilon(1e-12));
        CHECK(a.sq_rel == doctest::Approx(b.sq_rel).epsilon(1e-12));
        CHECK(a.rmse == doctest::Approx(b.rmse).epsilon(1e-12));
        CHECK(a.rmse_log == doctest::Approx(b.rmse_log).epsilon(1e-12));
        CHECK(a.a1 == b.a1);
        CHECK(a.a2 == b.a2);
        CHECK(a.a3 == b.a3);
    }
}

TEST_CASE("evaluation crop rectangle") {
    auto r = garg_crop_rect(375, 1242);
    CHECK(r.r0 == 153);
    CHECK(r.r1 == 371);
    CHECK(r.c0 == 44);
    CHECK(r.c1 == 1197);

    auto s = garg_crop_rect(100, 100);
    CHECK(s.r0 == 40);
    CHECK(s.r1 == 99);
    CHECK(s.c0 == 3);
    CHECK(s.c1 == 96);

    CHECK_THROWS_AS(garg_crop_rect(8, 100), ArgumentError);

    // Cropped evaluation only sees pixels inside the rectangle.
    DepthMap gt(100, 100, 0.f), pred(100, 100, 1.f);
    gt.at(50, 50) = 2.f;   // inside
    gt.at(10, 10) = 99.f;  // outside: row 10 < 40
    EvalConfig cfg;
    cfg.crop = CropMode::garg;
    auto rep = compute_metrics(pred, gt, cfg);
    CHECK(rep.valid_pixel_count == 1);
    CHECK(rep.abs_rel == doctest::Approx(0.5));
}

TEST_CASE("scale invariance and scaling laws") {
    Rng rng(77);
    DepthMap gt(6, 6), pred(6, 6);
    for (auto& v : gt.data) v = urand(rng, 1.f, 8.f);
    for (auto& v : pred.data) v = urand(rng, 1.f, 8.f);
    auto cfg = nocrop(1e6f);
    auto base = compute_metrics(pred, gt, cfg);
    const float s = 3.f;
    DepthMap gts = gt, preds = pred;
    for (auto& v : gts.data) v *= s;
    for (auto& v : preds.data) v *= s;
    auto scaled = compute_metrics(preds, gts, cfg);
    CHECK(scaled.abs_rel == doctest::Approx(base.abs_rel).epsilon(1e-6));
    CHECK(scaled.rmse_log == doctest::Approx(base.rmse_log).epsilon(1e-6));
    CHECK(scaled.a1 == base.a1);
    CHECK(scaled.a2 == base.a2);
    CHECK(scaled.a3 == base.a3);
    CHECK(scaled.rmse == doctest::Approx(base.rmse * s).epsilon(1e-6));
    CHECK(scaled.sq_rel == doctest::Approx(base.sq_rel * s).epsilon(1e-6));
}

TEST_CASE("accuracy thresholds are nested") {
    Rng rng(123);
    for (int t = 0; t < 50; ++t) {
        DepthMap gt(5, 5), pred(5, 5);
        for (auto& v : gt.data) v = urand(rng, 0.5f, 50.f);
        for (auto& v : pred.data) v = urand(rng, 0.5f, 50.f);
        auto rep = compute_metrics(pred, gt, nocrop());
        CHECK(rep.a1 <= rep.a2);
        CHECK(rep.a2 <= rep.a3);
        CHECK(rep.a3 <= 1.0);
    }
}

TEST_CASE("capping and flooring apply to both maps") {
    auto gt = from_values({100.f, 2.f});
    auto pred = from_values({90.f, 0.f});
    auto rep = compute_metrics(pred, gt, nocrop(80.f));
    // Both capped to 80 -> first pixel exact; second floored to min_depth.
    CHECK(rep.abs_rel == doctest::Approx(0.5 * (0.0 + (2.0 - 1e-3) / 2.0)));
}

TEST_CASE("input validation") {
    auto gt = from_values({1.f, 2.f});
    CHECK_THROWS_AS(compute_metrics(from_values({1.f}), gt, nocrop()), ArgumentError);
    CHECK_THROWS_AS(compute_metrics(gt, from_values({0.f, 0.f}), nocrop()), ArgumentError);
    EvalConfig bad = nocrop();
    bad.min_depth = -1.f;
    CHECK_THROWS_AS(compute_metrics(gt, gt, bad), ConfigError);
    bad = nocrop(1e-4f);  // cap below min_depth
    CHECK_THROWS_AS(compute_metrics(gt, gt, bad), ConfigError);
}
