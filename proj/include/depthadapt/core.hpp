#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace depthadapt {

struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Domain { source, target };

inline std::string domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

inline Domain parse_domain(const std::string& s) {
    if (s == "source") return Domain::source;
    if (s == "target") return Domain::target;
    throw ArgumentError("unknown domain: " + s);
}

/// Planar CHW image, 3 channels, values in [0,1].
struct Image {
    int h = 0, w = 0;
    std::vector<float> data;  // 3*h*w, channel-major

    Image() = default;
    Image(int h_, int w_, float fill = 0.f) : h(h_), w(w_), data(size_t(3) * h_ * w_, fill) {}

    float& at(int c, int r, int col) { return data[(size_t(c) * h + r) * w + col]; }
    float at(int c, int r, int col) const { return data[(size_t(c) * h + r) * w + col]; }
    size_t pixels() const { return size_t(h) * w; }
};

/// Single-channel depth map in meters; 0 marks invalid/missing.
struct DepthMap {
    int h = 0, w = 0;
    std::vector<float> data;  // h*w row-major

    DepthMap() = default;
    DepthMap(int h_, int w_, float fill = 0.f) : h(h_), w(w_), data(size_t(h_) * w_, fill) {}

    float& at(int r, int c) { return data[size_t(r) * w + c]; }
    float at(int r, int c) const { return data[size_t(r) * w + c]; }
    size_t pixels() const { return size_t(h) * w; }
};

struct Mask {
    int h = 0, w = 0;
    std::vector<uint8_t> data;

    Mask() = default;
    Mask(int h_, int w_, bool fill = true) : h(h_), w(w_), data(size_t(h_) * w_, fill ? 1 : 0) {}

    bool at(int r, int c) const { return data[size_t(r) * w + c] != 0; }
    void set(int r, int c, bool v) { data[size_t(r) * w + c] = v ? 1 : 0; }
    size_t count() const {
        size_t n = 0;
        for (auto v : data) n += v != 0;
        return n;
    }
};

using Rng = std::mt19937;

// Distribution helpers built directly on the engine so sequences are a pure
// function of the mt19937 state, independent of any stdlib distribution
// implementation.
inline float urand(Rng& rng) { return float(rng() >> 8) * (1.0f / 16777216.0f); }  // [0,1)

inline float urand(Rng& rng, float lo, float hi) { return lo + (hi - lo) * urand(rng); }

inline int irand(Rng& rng, int lo, int hi) {  // inclusive bounds
    return lo + int(uint64_t(rng()) * uint64_t(hi - lo + 1) >> 32);
}

inline float clamp01(float v) { return v < 0.f ? 0.f : (v > 1.f ? 1.f : v); }

/// FNV-1a, used for config hashes and parameter checksums.
inline uint64_t fnv1a(const void* bytes, size_t n, uint64_t seed = 1469598103934665603ull) {
    const auto* p = static_cast<const uint8_t*>(bytes);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace depthadapt
