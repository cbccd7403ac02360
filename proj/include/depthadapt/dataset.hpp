#pragma once

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "depthadapt/core.hpp"

namespace depthadapt {

struct DepthSample {
    Image image;
    DepthMap depth;
    Domain domain = Domain::source;
    std::string id;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<std::string> ids;
    Domain domain = Domain::source;
    float cap = 0.f;
    int h = 0, w = 0;
    uint32_t seed = 0;
};

namespace detail {

inline std::string format_meters(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", double(v));
    return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// On-disk format
//   <root>/<id>/image.png   8-bit RGB, lossless
//   <root>/<id>/depth.f32   "DPTH", uint32 H, uint32 W, float32 cap, H*W floats
//   <root>/manifest.txt     header line + one id per line
// ---------------------------------------------------------------------------

inline void save_depth_f32(const std::filesystem::path& path, const DepthMap& d, float cap) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f.write("DPTH", 4);
    uint32_t h = uint32_t(d.h), w = uint32_t(d.w);
    f.write(reinterpret_cast<const char*>(&h), 4);
    f.write(reinterpret_cast<const char*>(&w), 4);
    f.write(reinterpret_cast<const char*>(&cap), 4);
    f.write(reinterpret_cast<const char*>(d.data.data()), std::streamsize(d.data.size() * 4));
}

inline DepthMap load_depth_f32(const std::filesystem::path& path, float* cap_out = nullptr) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    char magic[4];
    f.read(magic, 4);
    if (std::memcmp(magic, "DPTH", 4) != 0) throw std::runtime_error("bad depth magic in " + path.string());
    uint32_t h = 0, w = 0;
    float cap = 0.f;
    f.read(reinterpret_cast<char*>(&h), 4);
    f.read(reinterpret_cast<char*>(&w), 4);
    f.read(reinterpret_cast<char*>(&cap), 4);
    DepthMap d{int(h), int(w)};
    f.read(reinterpret_cast<char*>(d.data.data()), std::streamsize(d.data.size() * 4));
    if (!f) throw std::runtime_error("truncated depth file " + path.string());
    if (cap_out) *cap_out = cap;
    return d;
}

inline void save_image_png(const std::filesystem::path& path, const Image& img) {
    cv::Mat m(img.h, img.w, CV_8UC3);
    for (int r = 0; r < img.h; ++r)
        for (int c = 0; c < img.w; ++c) {
            auto& px = m.at<cv::Vec3b>(r, c);  // BGR
            px[2] = uchar(std::lround(clamp01(img.at(0, r, c)) * 255.f));
            px[1] = uchar(std::lround(clamp01(img.at(1, r, c)) * 255.f));
            px[0] = uchar(std::lround(clamp01(img.at(2, r, c)) * 255.f));
        }
    if (!cv::imwrite(path.string(), m)) throw std::runtime_error("cannot write " + path.string());
}

inline Image load_image_png(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw std::runtime_error("cannot read " + path.string());
    Image img(m.rows, m.cols);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) {
            const auto& px = m.at<cv::Vec3b>(r, c);
            img.at(0, r, c) = px[2] / 255.f;
            img.at(1, r, c) = px[1] / 255.f;
            img.at(2, r, c) = px[0] / 255.f;
        }
    return img;
}

inline void save_sample(const std::filesystem::path& root, const DepthSample& s, float cap) {
    auto dir = root / s.id;
    std::filesystem::create_directories(dir);
    save_image_png(dir / "image.png", s.image);
    save_depth_f32(dir / "depth.f32", s.depth, cap);
}

inline DepthSample load_sample(const DatasetManifest& m, const std::string& id) {
    DepthSample s;
    s.id = id;
    s.domain = m.domain;
    s.image = load_image_png(m.root / id / "image.png");
    s.depth = load_depth_f32(m.root / id / "depth.f32");
    if (s.image.h != s.depth.h || s.image.w != s.depth.w)
        throw std::runtime_error("image/depth resolution mismatch for sample " + id);
    return s;
}

inline void save_manifest(const DatasetManifest& m) {
    std::filesystem::create_directories(m.root);
    std::ofstream f(m.root / "manifest.txt");
    f << "domain=" << domain_name(m.domain) << " cap=" << detail::format_meters(m.cap) << " h=" << m.h
      << " w=" << m.w << " seed=" << m.seed << "\n";
    for (const auto& id : m.ids) f << id << "\n";
}

inline DatasetManifest load_manifest(const std::filesystem::path& root) {
    std::ifstream f(root / "manifest.txt");
    if (!f) throw std::runtime_error("cannot read manifest at " + root.string());
    DatasetManifest m;
    m.root = root;
    std::string header;
    std::getline(f, header);
    std::istringstream hs(header);
    std::string tok;
    while (hs >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) throw std::runtime_error("malformed manifest header: " + header);
        std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "domain")
            m.domain = parse_domain(val);
        else if (key == "cap")
            m.cap = std::stof(val);
        else if (key == "h")
            m.h = std::stoi(val);
        else if (key == "w")
            m.w = std::stoi(val);
        else if (key == "seed")
            m.seed = uint32_t(std::stoul(val));
        else
            throw std::runtime_error("unknown manifest key: " + key);
    }
    std::string id;
    while (std::getline(f, id))
        if (!id.empty()) m.ids.push_back(id);
    return m;
}

// ---------------------------------------------------------------------------
// Depth capping
// ---------------------------------------------------------------------------

/// Clips depth values to `cap`; zeros stay zero (invalid).
inline DepthMap cap_depth(const DepthMap& depth, float cap) {
    if (!(cap > 0.f) || !std::isfinite(cap)) throw ArgumentError("cap_depth: cap must be finite and > 0");
    DepthMap out = depth;
    for (auto& v : out.data)
        if (v > cap) v = cap;
    return out;
}

// ---------------------------------------------------------------------------
// Procedural toy domain pair
//
// Source: crisp depth edges, warm palette, noise-free.
// Target: shifted palette, additive Gaussian noise, blurred depth edges.
// Depth is shading-correlated (nearer surfaces render brighter) so depth is
// recoverable from appearance.
// ---------------------------------------------------------------------------

namespace toy {

constexpr float kDepthCap = 16.f;
constexpr float kNoiseSigma = 0.055f;

struct Shape {
    bool ellipse;
    float cy, cx, ry, rx;  // in pixels
    float depth;
    float albedo[3];
    float stripe_freq, stripe_phase;
    bool stripe_vertical;
};

inline float gauss(Rng& rng) {
    float u1 = std::max(urand(rng), 1e-7f), u2 = urand(rng);
    return std::sqrt(-2.f * std::log(u1)) * std::cos(6.2831853f * u2);
}

inline void quantize8(Image& img) {
    for (auto& v : img.data) v = std::lround(clamp01(v) * 255.f) / 255.f;
}

// 1D separable Gaussian blur on depth, applied once per axis.
inline DepthMap blur_depth(const DepthMap& d, float sigma) {
    int radius = std::max(1, int(std::ceil(2.5f * sigma)));
    std::vector<float> k(size_t(2 * radius + 1));
    float sum = 0.f;
    for (int i = -radius; i <= radius; ++i) {
        k[size_t(i + radius)] = std::exp(-0.5f * float(i) * float(i) / (sigma * sigma));
        sum += k[size_t(i + radius)];
    }
    for (auto& v : k) v /= sum;
    DepthMap tmp(d.h, d.w), out(d.h, d.w);
    for (int r = 0; r < d.h; ++r)
        for (int c = 0; c < d.w; ++c) {
            float acc = 0.f;
            for (int i = -radius; i <= radius; ++i)
                acc += k[size_t(i + radius)] * d.at(r, std::clamp(c + i, 0, d.w - 1));
            tmp.at(r, c) = acc;
        }
    for (int r = 0; r < d.h; ++r)
        for (int c = 0; c < d.w; ++c) {
            float acc = 0.f;
            for (int i = -radius; i <= radius; ++i)
                acc += k[size_t(i + radius)] * tmp.at(std::clamp(r + i, 0, d.h - 1), c);
            out.at(r, c) = acc;
        }
    return out;
}

inline DepthSample render_scene(Rng& rng, int h, int w, Domain domain) {
    // Warm source palette; the target generator shifts it channel-wise.
    static constexpr float palette[6][3] = {
        {0.85f, 0.55f, 0.25f}, {0.80f, 0.30f, 0.25f}, {0.90f, 0.75f, 0.35f},
        {0.65f, 0.45f, 0.30f}, {0.75f, 0.60f, 0.50f}, {0.55f, 0.35f, 0.20f},
    };
    DepthSample s;
    s.domain = domain;
    s.image = Image(h, w);
    s.depth = DepthMap(h, w);

    const float near = 1.5f, far = kDepthCap * 0.85f;
    int n_shapes = irand(rng, 4, 8);
    std::vector<Shape> shapes;
    shapes.resize(size_t(n_shapes));
    for (auto& sh : shapes) {
        sh.ellipse = urand(rng) < 0.5f;
        sh.cy = urand(rng, 0.1f, 0.9f) * float(h);
        sh.cx = urand(rng, 0.1f, 0.9f) * float(w);
        sh.ry = urand(rng, 0.08f, 0.22f) * float(h);
        sh.rx = urand(rng, 0.08f, 0.22f) * float(w);
        sh.depth = urand(rng, near, far * 0.8f);
        int p = irand(rng, 0, 5);
        for (int c = 0; c < 3; ++c) sh.albedo[c] = palette[p][c];
        sh.stripe_freq = urand(rng, 0.15f, 0.6f);
        sh.stripe_phase = urand(rng, 0.f, 6.28f);
        sh.stripe_vertical = urand(rng) < 0.5f;
    }
    // Nearest shape wins at each pixel.
    std::sort(shapes.begin(), shapes.end(), [](const Shape& a, const Shape& b) { return a.depth > b.depth; });

    float ground_albedo[3] = {0.45f, 0.50f, 0.40f};
    for (int r = 0; r < h; ++r) {
        // Ground plane: near at the bottom row, far at the top.
        float t = float(h - 1 - r) / float(h - 1);
        float gd = near + (far - near) * t;
        for (int c = 0; c < w; ++c) {
            float d = gd;
            const float* albedo = ground_albedo;
            float texture = 0.04f * std::sin(0.35f * float(c)) * std::sin(0.23f * float(r));
            for (const auto& sh : shapes) {
                float dy = (float(r) - sh.cy) / sh.ry, dx = (float(c) - sh.cx) / sh.rx;
                bool inside = sh.ellipse ? (dy * dy + dx * dx <= 1.f)
                                         : (std::fabs(dy) <= 1.f && std::fabs(dx) <= 1.f);
                if (inside && sh.depth < d) {
                    d = sh.depth;
                    albedo = sh.albedo;
                    float u = sh.stripe_vertical ? float(c) : float(r);
                    texture = 0.06f * std::sin(sh.stripe_freq * u + sh.stripe_phase);
                }
            }
            s.depth.at(r, c) = d;
            // Shading: near surfaces bright, far surfaces dim.
            float shade = 0.25f + 0.75f * (1.f - d / kDepthCap);
            for (int ch = 0; ch < 3; ++ch) s.image.at(ch, r, c) = clamp01(albedo[ch] * shade + texture);
        }
    }
    return s;
}

inline void shift_to_target(DepthSample& s, Rng& rng) {
    // Palette shift: cool down red, boost blue; then sensor noise.
    static constexpr float gain[3] = {0.72f, 0.95f, 1.30f};
    static constexpr float bias[3] = {0.02f, 0.00f, 0.06f};
    for (int ch = 0; ch < 3; ++ch)
        for (int r = 0; r < s.image.h; ++r)
            for (int c = 0; c < s.image.w; ++c)
                s.image.at(ch, r, c) = clamp01(s.image.at(ch, r, c) * gain[ch] + bias[ch]);
    for (auto& v : s.image.data) v = clamp01(v + kNoiseSigma * gauss(rng));
    s.depth = blur_depth(s.depth, 1.6f);
    s.domain = Domain::target;
}

}  // namespace toy

struct ToyDomains {
    DatasetManifest source;
    DatasetManifest target;       // depth files zeroed (unlabelled)
    DatasetManifest target_eval;  // same images with ground truth, evaluation only
};

/// Generates the procedural source/target pair under `out_root` and writes
/// `source/`, `target/`, and `target-eval/` manifests. Pure function of
/// (seed, counts, resolution).
inline ToyDomains generate_toy_domain_pair(uint32_t seed, int n_source, int n_target, int h, int w,
                                           const std::filesystem::path& out_root) {
    if (n_source < 1 || n_target < 1) throw ArgumentError("generate_toy_domain_pair: counts must be >= 1");
    if (h < 32 || w < 32) throw ArgumentError("generate_toy_domain_pair: resolution must be >= 32x32");

    ToyDomains out;
    auto init = [&](DatasetManifest& m, const char* sub, Domain dom) {
        m.root = out_root / sub;
        m.domain = dom;
        m.cap = toy::kDepthCap;
        m.h = h;
        m.w = w;
        m.seed = seed;
    };
    init(out.source, "source", Domain::source);
    init(out.target, "target", Domain::target);
    init(out.target_eval, "target-eval", Domain::target);

    char idbuf[32];
    for (int i = 0; i < n_source; ++i) {
        // One rng per sample so counts do not perturb other samples.
        Rng rng(seed * 2654435761u + uint32_t(i));
        auto s = toy::render_scene(rng, h, w, Domain::source);
        std::snprintf(idbuf, sizeof(idbuf), "src-%04d", i);
        s.id = idbuf;
        toy::quantize8(s.image);
        save_sample(out.source.root, s, toy::kDepthCap);
        out.source.ids.push_back(s.id);
    }
    for (int i = 0; i < n_target; ++i) {
        Rng rng((seed ^ 0x9e3779b9u) * 2654435761u + uint32_t(i));
        auto s = toy::render_scene(rng, h, w, Domain::target);
        toy::shift_to_target(s, rng);
        std::snprintf(idbuf, sizeof(idbuf), "tgt-%04d", i);
        s.id = idbuf;
        toy::quantize8(s.image);
        save_sample(out.target_eval.root, s, toy::kDepthCap);
        out.target_eval.ids.push_back(s.id);
        // Training copy carries no labels.
        DepthSample blind = s;
        blind.depth = DepthMap(h, w, 0.f);
        save_sample(out.target.root, blind, toy::kDepthCap);
        out.target.ids.push_back(s.id);
    }
    save_manifest(out.source);
    save_manifest(out.target);
    save_manifest(out.target_eval);
    return out;
}

// ---------------------------------------------------------------------------
// Depth-distribution filtering
// ---------------------------------------------------------------------------

using DepthHistogram = std::vector<double>;  // normalized counts over uniform bins spanning (0, cap]

inline DepthHistogram depth_histogram(const DepthMap& d, float cap, int bins = 64) {
    DepthHistogram h(size_t(bins), 0.0);
    double total = 0.0;
    for (float v : d.data) {
        if (v <= 0.f) continue;  // invalid
        int b = std::min(bins - 1, int(double(v) / cap * bins));
        h[size_t(b)] += 1.0;
        total += 1.0;
    }
    if (total > 0.0)
        for (auto& v : h) v /= total;
    return h;
}

inline double chi_square_distance(const DepthHistogram& a, const DepthHistogram& b) {
    if (a.size() != b.size()) throw ArgumentError("chi_square_distance: bin count mismatch");
    double d = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double s = a[i] + b[i];
        if (s > 0.0) d += (a[i] - b[i]) * (a[i] - b[i]) / s;
    }
    return 0.5 * d;
}

/// Keeps the `keep` source samples whose depth histogram is closest (chi-square)
/// to the mean of the reference histograms. Deterministic id tie-break.
inline DatasetManifest filter_by_depth_distribution(const DatasetManifest& source,
                                                    const std::vector<DepthHistogram>& target_reference,
                                                    size_t keep) {
    if (target_reference.empty() || target_reference.front().empty())
        throw ArgumentError("filter_by_depth_distribution: empty reference histogram");
    if (keep > source.ids.size())
        throw ArgumentError("filter_by_depth_distribution: keep exceeds source size");

    DepthHistogram mean(target_reference.front().size(), 0.0);
    for (const auto& h : target_reference) {
        if (h.size() != mean.size())
            throw ArgumentError("filter_by_depth_distribution: histograms must share bin edges");
        for (size_t i = 0; i < mean.size(); ++i) mean[i] += h[i];
    }
    for (auto& v : mean) v /= double(target_reference.size());

    std::vector<std::pair<double, std::string>> scored;
    scored.reserve(source.ids.size());
    for (const auto& id : source.ids) {
        auto s = load_sample(source, id);
        auto h = depth_histogram(s.depth, source.cap, int(mean.size()));
        scored.emplace_back(chi_square_distance(h, mean), id);
    }
    std::sort(scored.begin(), scored.end());
    DatasetManifest out = source;
    out.ids.clear();
    for (size_t i = 0; i < keep; ++i) out.ids.push_back(scored[i].second);
    return out;
}

}  // namespace depthadapt
