#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <vector>

#include "addit/attention.hpp"
#include "addit/core.hpp"
#include "addit/latent.hpp"

namespace addit {

struct GridPoint {
    int row = 0;
    int col = 0;
};

struct GridMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> cells;

    GridMask() = default;
    GridMask(int h, int w, bool v = false)
        : height(h), width(w), cells(static_cast<std::size_t>(h) * w, v ? 1 : 0) {}

    bool at(int r, int c) const { return cells[static_cast<std::size_t>(r) * width + c] != 0; }
    void set(int r, int c, bool v) { cells[static_cast<std::size_t>(r) * width + c] = v ? 1 : 0; }

    int count() const {
        int n = 0;
        for (auto v : cells) n += v != 0;
        return n;
    }

    bool same_shape(const GridMask& o) const { return height == o.height && width == o.width; }
};

inline GridMask mask_union(const GridMask& a, const GridMask& b) {
    require(a.same_shape(b), "mask_union: shape mismatch");
    GridMask m(a.height, a.width);
    for (std::size_t i = 0; i < m.cells.size(); ++i) m.cells[i] = (a.cells[i] | b.cells[i]);
    return m;
}

inline GridMask mask_intersect(const GridMask& a, const GridMask& b) {
    require(a.same_shape(b), "mask_intersect: shape mismatch");
    GridMask m(a.height, a.width);
    for (std::size_t i = 0; i < m.cells.size(); ++i) m.cells[i] = (a.cells[i] & b.cells[i]);
    return m;
}

// 4-connected dilation by `steps` cells.
inline GridMask dilate(const GridMask& m, int steps) {
    GridMask cur = m;
    for (int s = 0; s < steps; ++s) {
        GridMask next = cur;
        for (int r = 0; r < cur.height; ++r)
            for (int c = 0; c < cur.width; ++c) {
                if (!cur.at(r, c)) continue;
                if (r > 0) next.set(r - 1, c, true);
                if (r + 1 < cur.height) next.set(r + 1, c, true);
                if (c > 0) next.set(r, c - 1, true);
                if (c + 1 < cur.width) next.set(r, c + 1, true);
            }
        cur = next;
    }
    return cur;
}

// Label grid of 4-connected components; -1 outside the mask. Returns the
// number of components.
inline int connected_components(const GridMask& m, std::vector<int>& labels) {
    labels.assign(m.cells.size(), -1);
    int next = 0;
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c) {
            if (!m.at(r, c) || labels[static_cast<std::size_t>(r) * m.width + c] >= 0) continue;
            std::deque<GridPoint> q{{r, c}};
            labels[static_cast<std::size_t>(r) * m.width + c] = next;
            while (!q.empty()) {
                const GridPoint p = q.front();
                q.pop_front();
                const int dr[4] = {-1, 1, 0, 0};
                const int dc[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int nr = p.row + dr[k], nc = p.col + dc[k];
                    if (nr < 0 || nr >= m.height || nc < 0 || nc >= m.width) continue;
                    std::size_t idx = static_cast<std::size_t>(nr) * m.width + nc;
                    if (!m.at(nr, nc) || labels[idx] >= 0) continue;
                    labels[idx] = next;
                    q.push_back({nr, nc});
                }
            }
            ++next;
        }
    return next;
}

// The added-object token's saliency over the target grid: non-negative,
// max-normalized to 1 unless identically zero.
struct SubjectAttentionMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    SubjectAttentionMap() = default;
    SubjectAttentionMap(int h, int w)
        : height(h), width(w), values(static_cast<std::size_t>(h) * w, 0.0) {}

    double at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }

    void validate() const {
        require(height > 0 && width > 0, "SubjectAttentionMap: empty grid");
        require(values.size() == static_cast<std::size_t>(height) * width,
                "SubjectAttentionMap: value count");
        double mx = 0.0;
        for (double v : values) {
            require(v >= 0.0, "SubjectAttentionMap: negative saliency");
            mx = std::max(mx, v);
        }
        require(mx == 0.0 || std::abs(mx - 1.0) <= 1e-9,
                "SubjectAttentionMap: not max-normalized");
    }
};

// Raw per-state saliency grid: mean over heads of relu(Q_target . k_object),
// in logit scaling, before any normalization. Queries and keys carry their
// rotary phases, matching what the attention actually used.
inline std::vector<double> subject_attention_grid(const AttentionState& st, int subject_index) {
    st.validate();
    require(subject_index >= 0 && static_cast<std::size_t>(subject_index) < st.n_prompt(),
            "subject_attention_grid: subject index out of range");
    const std::size_t n = st.n_target();
    const std::size_t d = static_cast<std::size_t>(st.head_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(st.head_dim));
    std::vector<double> grid(n, 0.0);
    for (int hh = 0; hh < st.num_heads; ++hh) {
        const double* k_obj = st.K_p[static_cast<std::size_t>(hh)].row(
            static_cast<std::size_t>(subject_index));
        for (std::size_t i = 0; i < n; ++i) {
            const double v =
                dot(st.Q_target[static_cast<std::size_t>(hh)].row(i), k_obj, d) * scale;
            grid[i] += std::max(v, 0.0);
        }
    }
    for (double& v : grid) v /= static_cast<double>(st.num_heads);
    return grid;
}

// Elementwise mean of per-state grids, then one max-normalization.
inline SubjectAttentionMap aggregate_subject_attention(
    const std::vector<std::vector<double>>& grids, int height, int width) {
    require(!grids.empty(), "aggregate_subject_attention: no recorded states");
    const std::size_t n = static_cast<std::size_t>(height) * width;
    SubjectAttentionMap map(height, width);
    for (const auto& g : grids) {
        require(g.size() == n, "aggregate_subject_attention: grid size mismatch");
        for (std::size_t i = 0; i < n; ++i) map.values[i] += g[i];
    }
    for (double& v : map.values) v /= static_cast<double>(grids.size());
    double mx = 0.0;
    for (double v : map.values) mx = std::max(mx, v);
    if (mx > 0.0)
        for (double& v : map.values) v /= mx;
    map.validate();
    return map;
}

// Histogram Otsu: the bin boundary maximizing between-class variance
// w0*w1*(mu0-mu1)^2, first boundary on ties. Returns the boundary mapped
// back to value space; cells strictly above it form the rough mask.
inline double otsu_threshold(const SubjectAttentionMap& map, int num_bins = 64) {
    require(num_bins >= 2, "otsu_threshold: need at least 2 bins");
    require(!map.values.empty(), "otsu_threshold: empty map");
    const auto [mn_it, mx_it] = std::minmax_element(map.values.begin(), map.values.end());
    const double mn = *mn_it, mx = *mx_it;
    require(mx > mn, "otsu_threshold: constant map");

    std::vector<std::size_t> hist(static_cast<std::size_t>(num_bins), 0);
    const double width = (mx - mn) / num_bins;
    for (double v : map.values) {
        int b = static_cast<int>((v - mn) / width);
        if (b >= num_bins) b = num_bins - 1;
        if (b < 0) b = 0;
        ++hist[static_cast<std::size_t>(b)];
    }

    const double total = static_cast<double>(map.values.size());
    double sum_all = 0.0;
    for (int b = 0; b < num_bins; ++b) sum_all += b * static_cast<double>(hist[b]);

    int best_boundary = 0;
    double best_score = -1.0;
    double w0 = 0.0, sum0 = 0.0;
    for (int b = 0; b < num_bins - 1; ++b) {
        w0 += static_cast<double>(hist[b]);
        sum0 += b * static_cast<double>(hist[b]);
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (sum_all - sum0) / w1;
        const double score = (w0 / total) * (w1 / total) * (mu0 - mu1) * (mu0 - mu1);
        if (score > best_score) {
            best_score = score;
            best_boundary = b;
        }
    }
    require(best_score >= 0.0, "otsu_threshold: degenerate histogram");
    return mn + (best_boundary + 1) * width;
}

inline GridMask threshold_mask(const SubjectAttentionMap& map, double threshold) {
    GridMask m(map.height, map.width);
    for (std::size_t i = 0; i < map.values.size(); ++i) m.cells[i] = map.values[i] > threshold;
    return m;
}

inline int default_exclusion_radius(int height, int width) {
    return (std::max(height, width) + 7) / 8;
}

// Greedy localization points: take the global maximum (row-major first on
// ties), zero out the Euclidean disk around it, repeat; stop at max_points
// or when the running maximum falls below stop_ratio times the initial one.
inline std::vector<GridPoint> sample_points(const SubjectAttentionMap& map, int max_points = 4,
                                            double stop_ratio = 0.35, int exclusion_radius = 0) {
    require(max_points >= 1, "sample_points: max_points must be positive");
    require(stop_ratio > 0.0 && stop_ratio < 1.0, "sample_points: stop_ratio out of (0,1)");
    const auto [mn_it, mx_it] = std::minmax_element(map.values.begin(), map.values.end());
    require(*mx_it > *mn_it, "sample_points: constant map");
    if (exclusion_radius <= 0) exclusion_radius = default_exclusion_radius(map.height, map.width);

    std::vector<double> work = map.values;
    const double p_max = *mx_it;
    std::vector<GridPoint> points;
    while (static_cast<int>(points.size()) < max_points) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < work.size(); ++i)
            if (work[i] > work[best]) best = i;
        if (work[best] < stop_ratio * p_max) break;
        const int pr = static_cast<int>(best) / map.width;
        const int pc = static_cast<int>(best) % map.width;
        points.push_back({pr, pc});
        const int rad2 = exclusion_radius * exclusion_radius;
        for (int r = std::max(0, pr - exclusion_radius);
             r <= std::min(map.height - 1, pr + exclusion_radius); ++r)
            for (int c = std::max(0, pc - exclusion_radius);
                 c <= std::min(map.width - 1, pc + exclusion_radius); ++c)
                if ((r - pr) * (r - pr) + (c - pc) * (c - pc) <= rad2)
                    work[static_cast<std::size_t>(r) * map.width + c] = 0.0;
    }
    return points;
}

// Scalar intensity field behind the segmenter stand-in: per-token channel
// norm of the clean-image estimate.
inline std::vector<double> intensity_field(const Latent& x0) {
    std::vector<double> I(static_cast<std::size_t>(x0.tokens()));
    for (int r = 0; r < x0.height; ++r)
        for (int c = 0; c < x0.width; ++c) {
            const double* tok = x0.token(r, c);
            double s = 0.0;
            for (int ch = 0; ch < x0.dim; ++ch) s += tok[ch] * tok[ch];
            I[static_cast<std::size_t>(r) * x0.width + c] = std::sqrt(s);
        }
    return I;
}

// Deterministic stand-in for a promptable segmenter: 4-connected region
// growing from each point over the intensity field, keeping cells whose
// intensity stays within tolerance of the seed's; the rough mask contributes
// only cells adjacent to a grown region. Tolerance is
// tolerance_factor * std(intensity).
inline GridMask refine_mask(const Latent& x0_estimate, const GridMask& rough,
                            const std::vector<GridPoint>& points,
                            double tolerance_factor = 0.2) {
    require(!points.empty(), "refine_mask: no points");
    require(rough.height == x0_estimate.height && rough.width == x0_estimate.width,
            "refine_mask: rough mask grid mismatch");
    const int H = x0_estimate.height, W = x0_estimate.width;
    const std::vector<double> I = intensity_field(x0_estimate);

    double mean = 0.0;
    for (double v : I) mean += v;
    mean /= static_cast<double>(I.size());
    double var = 0.0;
    for (double v : I) var += (v - mean) * (v - mean);
    var /= static_cast<double>(I.size());
    const double tol = tolerance_factor * std::sqrt(var);

    GridMask grown(H, W);
    for (const GridPoint& p : points) {
        require(p.row >= 0 && p.row < H && p.col >= 0 && p.col < W,
                "refine_mask: point outside grid");
        const double seed = I[static_cast<std::size_t>(p.row) * W + p.col];
        std::deque<GridPoint> q{p};
        GridMask seen(H, W);
        seen.set(p.row, p.col, true);
        grown.set(p.row, p.col, true);
        while (!q.empty()) {
            const GridPoint cur = q.front();
            q.pop_front();
            const int dr[4] = {-1, 1, 0, 0};
            const int dc[4] = {0, 0, -1, 1};
            for (int k = 0; k < 4; ++k) {
                const int nr = cur.row + dr[k], nc = cur.col + dc[k];
                if (nr < 0 || nr >= H || nc < 0 || nc >= W || seen.at(nr, nc)) continue;
                seen.set(nr, nc, true);
                if (std::abs(I[static_cast<std::size_t>(nr) * W + nc] - seed) <= tol) {
                    grown.set(nr, nc, true);
                    q.push_back({nr, nc});
                }
            }
        }
    }
    return mask_union(grown, mask_intersect(rough, dilate(grown, 1)));
}

// The rough mask, its refinement, the localization points, and the
// threshold that produced the rough mask.
struct SubjectMask {
    GridMask rough;
    GridMask refined;
    std::vector<GridPoint> points;
    double otsu = 0.0;
};

struct MaskPolicy {
    int otsu_bins = 64;
    int max_points = 4;
    double stop_ratio = 0.35;
    int exclusion_radius = 0;  // 0 derives ceil(max(H,W)/8)
    double grow_tolerance_factor = 0.2;
};

inline SubjectMask build_subject_mask(const SubjectAttentionMap& map, const Latent& x0_estimate,
                                      const MaskPolicy& policy = {}) {
    SubjectMask sm;
    sm.otsu = otsu_threshold(map, policy.otsu_bins);
    sm.rough = threshold_mask(map, sm.otsu);
    sm.points = sample_points(map, policy.max_points, policy.stop_ratio, policy.exclusion_radius);
    sm.refined = refine_mask(x0_estimate, sm.rough, sm.points, policy.grow_tolerance_factor);
    return sm;
}

// In-mask cells from the target, out-of-mask cells from the source, as exact
// per-cell copies. When expected_label >= 0 both inputs must sit at that
// time label.
inline Latent blend_latents(const Latent& z_target, const Latent& z_source, const GridMask& mask,
                            int expected_label = -1) {
    require_same_shape(z_target, z_source, "blend_latents");
    require(z_target.time_label == z_source.time_label,
            "blend_latents: latents at different steps");
    require(mask.height == z_target.height && mask.width == z_target.width,
            "blend_latents: mask grid mismatch");
    if (expected_label >= 0)
        require(z_target.time_label == expected_label, "blend_latents: unexpected time label");
    Latent out = z_target;
    for (int r = 0; r < out.height; ++r)
        for (int c = 0; c < out.width; ++c) {
            if (mask.at(r, c)) continue;
            const double* src = z_source.token(r, c);
            double* dst = out.token(r, c);
            for (int ch = 0; ch < out.dim; ++ch) dst[ch] = src[ch];
        }
    return out;
}

}  // namespace addit
