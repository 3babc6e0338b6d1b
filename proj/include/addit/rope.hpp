#pragma once

#include <cmath>
#include <vector>

#include "addit/core.hpp"

namespace addit {

// 2D rotary phase configuration. head_dim is split half/half across the two
// grid axes; each half holds head_dim/4 adjacent (even, odd) rotation pairs
// with the geometric frequency ladder freq_j = theta^(-j / pairs_per_axis).
// At the default head_dim 16 and theta 10000 the per-axis frequencies are
// exactly {1, 0.1, 0.01, 0.001}.
struct RopeConfig {
    int head_dim = 16;
    int grid_h = 16;
    int grid_w = 16;
    double theta = 10000.0;

    void validate() const {
        require(head_dim > 0 && head_dim % 4 == 0, "RopeConfig: head_dim must be a positive multiple of 4");
        require(grid_h > 0 && grid_w > 0, "RopeConfig: grid dims must be positive");
        require(theta > 1.0, "RopeConfig: theta must exceed 1");
    }

    int pairs_per_axis() const { return head_dim / 4; }

    double freq(int j) const {
        return std::pow(theta, -static_cast<double>(j) / pairs_per_axis());
    }
};

// Per-token rotation phases. Image tokens take (row, col) grid coordinates,
// text tokens take their sequence index on both axes. The integer offset is
// added to image coordinates before phase computation, modulo the grid, so
// offsets compose additively and (a,b) followed by (-a,-b) is an exact
// identity. The modulo also makes the cyclic relabeling equivariance of
// attention logits exact rather than approximate at the grid edges.
struct PositionalEncoding {
    RopeConfig cfg;
    int drow = 0;
    int dcol = 0;

    explicit PositionalEncoding(RopeConfig c = {}) : cfg(c) { cfg.validate(); }

    PositionalEncoding shifted(int a, int b) const {
        PositionalEncoding p(*this);
        p.drow += a;
        p.dcol += b;
        return p;
    }

    // Phases for one token at integer axis coordinates (already wrapped).
    void token_phases(int pos_row, int pos_col, double* out) const {
        const int ppa = cfg.pairs_per_axis();
        for (int j = 0; j < ppa; ++j) {
            const double f = cfg.freq(j);
            out[j] = pos_row * f;
            out[ppa + j] = pos_col * f;
        }
    }

    // Grid tokens in row-major order; rows = grid_h*grid_w, cols = head_dim/2.
    Mat image_phases() const {
        Mat ph(static_cast<std::size_t>(cfg.grid_h) * cfg.grid_w, cfg.head_dim / 2);
        for (int r = 0; r < cfg.grid_h; ++r)
            for (int c = 0; c < cfg.grid_w; ++c) {
                const int pr = mod_wrap(r + drow, cfg.grid_h);
                const int pc = mod_wrap(c + dcol, cfg.grid_w);
                token_phases(pr, pc, ph.row(static_cast<std::size_t>(r) * cfg.grid_w + c));
            }
        return ph;
    }

    // Text tokens use their sequence index on both axes and ignore the offset.
    Mat text_phases(int n) const {
        require(n >= 0, "PositionalEncoding: negative text length");
        Mat ph(static_cast<std::size_t>(n), cfg.head_dim / 2);
        for (int i = 0; i < n; ++i) token_phases(i, i, ph.row(i));
        return ph;
    }
};

// In-place rotation of per-token head vectors: for pair p occupying dims
// (2p, 2p+1), (x, y) -> (x cos - y sin, x sin + y cos) at that row's phase.
inline void apply_rope(Mat& rows, const Mat& phases) {
    require(rows.rows == phases.rows, "apply_rope: token count mismatch");
    require(rows.cols == 2 * phases.cols, "apply_rope: head_dim vs phase width mismatch");
    for (std::size_t i = 0; i < rows.rows; ++i) {
        double* v = rows.row(i);
        const double* ph = phases.row(i);
        for (std::size_t p = 0; p < phases.cols; ++p) {
            const double c = std::cos(ph[p]);
            const double s = std::sin(ph[p]);
            const double x = v[2 * p];
            const double y = v[2 * p + 1];
            v[2 * p] = x * c - y * s;
            v[2 * p + 1] = x * s + y * c;
        }
    }
}

}  // namespace addit
