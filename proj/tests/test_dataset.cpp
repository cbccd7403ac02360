#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "depthadapt/dataset.hpp"

using namespace depthadapt;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("depthadapt_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

double mean_sobel_magnitude(const DepthMap& d) {
    double acc = 0.0;
    size_t n = 0;
    for (int r = 1; r < d.h - 1; ++r)
        for (int c = 1; c < d.w - 1; ++c) {
            double gx = d.at(r - 1, c + 1) + 2 * d.at(r, c + 1) + d.at(r + 1, c + 1) -
                        d.at(r - 1, c - 1) - 2 * d.at(r, c - 1) - d.at(r + 1, c - 1);
            double gy = d.at(r + 1, c - 1) + 2 * d.at(r + 1, c) + d.at(r + 1, c + 1) -
                        d.at(r - 1, c - 1) - 2 * d.at(r - 1, c) - d.at(r - 1, c + 1);
            acc += std::sqrt(gx * gx + gy * gy);
            ++n;
        }
    return acc / double(n);
}

}  // namespace

TEST_CASE("cap_depth clips and keeps invalid zeros") {
    DepthMap d(1, 3);
    d.data = {10.f, 90.f, 0.f};
    auto out = cap_depth(d, 80.f);
    CHECK(out.data == std::vector<float>{10.f, 80.f, 0.f});

    DepthMap indoor(1, 2);
    indoor.data = {7.9f, 8.1f};
    auto capped = cap_depth(indoor, 8.f);
    CHECK(capped.data[0] == doctest::Approx(7.9f));
    CHECK(capped.data[1] == doctest::Approx(8.0f));

    CHECK_THROWS_AS(cap_depth(d, 0.f), ArgumentError);
    CHECK_THROWS_AS(cap_depth(d, -1.f), ArgumentError);
    CHECK_THROWS_AS(cap_depth(d, std::numeric_limits<float>::infinity()), ArgumentError);
}

TEST_CASE("cap_depth is idempotent") {
    Rng rng(11);
    DepthMap d(8, 8);
    for (auto& v : d.data) v = urand(rng, 0.f, 100.f);
    auto once = cap_depth(d, 42.f);
    auto twice = cap_depth(once, 42.f);
    CHECK(once.data == twice.data);
}

TEST_CASE("sample save/load round-trips bit-exactly") {
    auto dir = temp_dir("roundtrip");
    Rng rng(3);
    DepthSample s;
    s.id = "sample-0";
    s.image = Image(40, 48);
    for (auto& v : s.image.data) v = std::lround(urand(rng) * 255.f) / 255.f;  // 8-bit grid
    s.depth = DepthMap(40, 48);
    for (auto& v : s.depth.data) v = urand(rng, 0.f, 16.f);
    save_sample(dir, s, 16.f);

    DatasetManifest m;
    m.root = dir;
    m.domain = Domain::source;
    auto back = load_sample(m, "sample-0");
    CHECK(back.image.data == s.image.data);
    CHECK(back.depth.data == s.depth.data);
}

TEST_CASE("manifest round-trip") {
    auto dir = temp_dir("manifest");
    DatasetManifest m;
    m.root = dir;
    m.domain = Domain::target;
    m.cap = 16.f;
    m.h = 64;
    m.w = 96;
    m.seed = 7;
    m.ids = {"a", "b", "c"};
    save_manifest(m);
    auto back = load_manifest(dir);
    CHECK(back.domain == Domain::target);
    CHECK(back.cap == doctest::Approx(16.f));
    CHECK(back.h == 64);
    CHECK(back.w == 96);
    CHECK(back.seed == 7);
    CHECK(back.ids == m.ids);
}

TEST_CASE("toy generation is deterministic and seed-sensitive") {
    auto d1 = temp_dir("toy1"), d2 = temp_dir("toy2"), d3 = temp_dir("toy3");
    auto a = generate_toy_domain_pair(7, 4, 4, 64, 96, d1);
    auto b = generate_toy_domain_pair(7, 4, 4, 64, 96, d2);
    CHECK(a.source.ids.size() == 4);
    CHECK(a.target.ids.size() == 4);
    // Bit-identical files under the same seed.
    for (const auto& id : a.source.ids) {
        CHECK(slurp(d1 / "source" / id / "image.png") == slurp(d2 / "source" / id / "image.png"));
        CHECK(slurp(d1 / "source" / id / "depth.f32") == slurp(d2 / "source" / id / "depth.f32"));
    }
    CHECK(slurp(d1 / "target" / "manifest.txt") == slurp(d2 / "target" / "manifest.txt"));

    auto c = generate_toy_domain_pair(8, 4, 4, 64, 96, d3);
    bool any_diff = false;
    for (size_t i = 0; i < a.source.ids.size() && !any_diff; ++i) {
        auto s1 = load_sample(a.source, a.source.ids[i]);
        auto s2 = load_sample(c.source, c.source.ids[i]);
        any_diff = s1.image.data != s2.image.data;
    }
    CHECK(any_diff);
}

TEST_CASE("toy target depth edges are smoother than source") {
    auto dir = temp_dir("toyedges");
    auto toys = generate_toy_domain_pair(7, 8, 8, 64, 96, dir);
    double src = 0.0, tgt = 0.0;
    for (const auto& id : toys.source.ids) src += mean_sobel_magnitude(load_sample(toys.source, id).depth);
    for (const auto& id : toys.target_eval.ids)
        tgt += mean_sobel_magnitude(load_sample(toys.target_eval, id).depth);
    CHECK(tgt / 8.0 < src / 8.0);
}

TEST_CASE("toy generation invariants") {
    auto dir = temp_dir("toyinv");
    auto toys = generate_toy_domain_pair(5, 3, 3, 64, 64, dir);
    for (const auto& id : toys.source.ids) {
        auto s = load_sample(toys.source, id);
        size_t valid = 0;
        for (float v : s.depth.data) {
            CHECK(v >= 0.f);
            CHECK(v <= toys.source.cap);
            valid += v > 0.f;
        }
        CHECK(valid >= 1);
    }
    // Training target depth is withheld.
    for (const auto& id : toys.target.ids) {
        auto s = load_sample(toys.target, id);
        for (float v : s.depth.data) CHECK(v == 0.f);
    }
    CHECK_THROWS_AS(generate_toy_domain_pair(1, 0, 4, 64, 64, dir / "bad"), ArgumentError);
    CHECK_THROWS_AS(generate_toy_domain_pair(1, 4, 4, 16, 64, dir / "bad"), ArgumentError);
}

TEST_CASE("filter_by_depth_distribution matches a brute-force oracle") {
    auto dir = temp_dir("filter");
    // Ten samples with constant depth planes at distinct values.
    DatasetManifest m;
    m.root = dir;
    m.domain = Domain::source;
    m.cap = 16.f;
    m.h = 8;
    m.w = 8;
    std::vector<float> levels = {1.f, 2.5f, 4.f, 5.5f, 7.f, 8.5f, 10.f, 11.5f, 13.f, 14.5f};
    for (size_t i = 0; i < levels.size(); ++i) {
        DepthSample s;
        s.id = "p" + std::to_string(i);
        s.image = Image(8, 8, 0.5f);
        s.depth = DepthMap(8, 8, levels[i]);
        save_sample(dir, s, m.cap);
        m.ids.push_back(s.id);
    }
    // Reference concentrated around 5.5 m.
    DepthMap ref_map(8, 8, 5.5f);
    std::vector<DepthHistogram> refs = {depth_histogram(ref_map, m.cap)};

    auto filtered = filter_by_depth_distribution(m, refs, 3);
    CHECK(filtered.ids.size() == 3);

    // Brute force: chi-square of every sample against the reference.
    std::vector<std::pair<double, std::string>> brute;
    for (const auto& id : m.ids) {
        auto s = load_sample(m, id);
        brute.emplace_back(chi_square_distance(depth_histogram(s.depth, m.cap), refs[0]), id);
    }
    std::sort(brute.begin(), brute.end());
    for (size_t i = 0; i < 3; ++i) CHECK(filtered.ids[i] == brute[i].second);

    // Exact match wins with keep=1.
    auto one = filter_by_depth_distribution(m, refs, 1);
    CHECK(one.ids == std::vector<std::string>{"p3"});

    // keep = all retains everything (subset property).
    auto all = filter_by_depth_distribution(m, refs, m.ids.size());
    auto sorted_ids = m.ids;
    std::sort(sorted_ids.begin(), sorted_ids.end());
    auto got = all.ids;
    std::sort(got.begin(), got.end());
    CHECK(got == sorted_ids);

    CHECK_THROWS_AS(filter_by_depth_distribution(m, {}, 1), ArgumentError);
    CHECK_THROWS_AS(filter_by_depth_distribution(m, refs, 99), ArgumentError);
}
