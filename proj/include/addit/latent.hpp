#pragma once

#include <cstdint>
#include <vector>

#include "addit/core.hpp"
#include "addit/rng.hpp"

namespace addit {

// A 2D grid of d-dimensional image tokens at a given noise time.
// data is token-major: data[(r*width + c)*dim + ch].
struct Latent {
    int height = 0;
    int width = 0;
    int dim = 0;
    std::vector<double> data;
    int time_label = 0;  // t in [0,1000]; 0 means clean

    Latent() = default;
    Latent(int h, int w, int d, int t = 0)
        : height(h), width(w), dim(d), data(static_cast<std::size_t>(h) * w * d, 0.0), time_label(t) {}

    std::size_t size() const { return data.size(); }
    int tokens() const { return height * width; }

    double* token(int r, int c) { return data.data() + (static_cast<std::size_t>(r) * width + c) * dim; }
    const double* token(int r, int c) const {
        return data.data() + (static_cast<std::size_t>(r) * width + c) * dim;
    }

    bool same_shape(const Latent& o) const {
        return height == o.height && width == o.width && dim == o.dim;
    }
};

inline void require_same_shape(const Latent& a, const Latent& b, const char* what) {
    require(a.same_shape(b), std::string(what) + ": latent shape mismatch");
}

// i.i.d. standard normal tensor, bit-reproducible from (seed, shape).
struct NoiseSample {
    std::uint64_t seed = 0;
    Latent values;

    NoiseSample() = default;
    NoiseSample(std::uint64_t s, int h, int w, int d) : seed(s), values(h, w, d, 1000) {
        values.data = rng::normals(s, values.size());
    }
};

inline double l2_distance(const Latent& a, const Latent& b) {
    require_same_shape(a, b, "l2_distance");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace addit
