#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "addit/core.hpp"
#include "addit/latent.hpp"
#include "addit/masking.hpp"
#include "addit/pipeline.hpp"

namespace addit {

// Axis-aligned box in token-grid units: x is the column of the left edge,
// y the row of the top edge.
struct BBox {
    double x = 0.0, y = 0.0, w = 0.0, h = 0.0;

    double x2() const { return x + w; }
    double y2() const { return y + h; }
    double area() const { return w * h; }

    void validate() const { require(w > 0.0 && h > 0.0, "BBox: non-positive extent"); }

    BBox translated(double dx, double dy) const { return {x + dx, y + dy, w, h}; }
};

struct Detection {
    BBox box;
    double score = 0.0;
    std::string label;

    void validate() const {
        box.validate();
        require(score >= 0.0 && score <= 1.0, "Detection: score out of [0,1]");
    }
};

// One benchmark entry: prompts, the added-object token, and annotated
// plausible-placement boxes.
struct BenchmarkRecord {
    std::string src_prompt;
    std::string tgt_prompt;
    std::string subject_token;
    std::string instruction;
    std::string source_ref;  // path of a real source latent, or empty
    std::vector<BBox> gt_boxes;
};

inline double rect_intersection_area(const BBox& a, const BBox& b) {
    const double w = std::min(a.x2(), b.x2()) - std::max(a.x, b.x);
    const double h = std::min(a.y2(), b.y2()) - std::max(a.y, b.y);
    if (w <= 0.0 || h <= 0.0) return 0.0;
    return w * h;
}

// Area of det intersected with the union of gt boxes, by coordinate
// compression over the clipped rectangles. Exact rectangle arithmetic; no
// rasterization.
inline double union_intersection_area(const BBox& det, const std::vector<BBox>& gts) {
    std::vector<BBox> clipped;
    for (const BBox& g : gts) {
        const double x1 = std::max(det.x, g.x), y1 = std::max(det.y, g.y);
        const double x2 = std::min(det.x2(), g.x2()), y2 = std::min(det.y2(), g.y2());
        if (x2 > x1 && y2 > y1) clipped.push_back({x1, y1, x2 - x1, y2 - y1});
    }
    if (clipped.empty()) return 0.0;
    std::vector<double> xs, ys;
    for (const BBox& r : clipped) {
        xs.push_back(r.x);
        xs.push_back(r.x2());
        ys.push_back(r.y);
        ys.push_back(r.y2());
    }
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    std::sort(ys.begin(), ys.end());
    ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
    double area = 0.0;
    for (std::size_t i = 0; i + 1 < xs.size(); ++i)
        for (std::size_t j = 0; j + 1 < ys.size(); ++j) {
            bool covered = false;
            for (const BBox& r : clipped)
                if (r.x <= xs[i] && xs[i + 1] <= r.x2() && r.y <= ys[j] && ys[j + 1] <= r.y2()) {
                    covered = true;
                    break;
                }
            if (covered) area += (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j]);
        }
    return area;
}

struct AffordanceResult {
    double score = 0.0;
    bool undetected = false;
};

// Fraction of detections with at least half their own area inside the union
// of annotated boxes; the exact-half boundary counts as inside.
inline AffordanceResult affordance_score(const std::vector<Detection>& detections,
                                         const std::vector<BBox>& gt) {
    for (const BBox& g : gt) g.validate();
    if (detections.empty()) return {0.0, true};
    int inside = 0;
    for (const Detection& d : detections) {
        d.validate();
        const double inter = union_intersection_area(d.box, gt);
        if (inter >= 0.5 * d.box.area()) ++inside;
    }
    return {static_cast<double>(inside) / static_cast<double>(detections.size()), false};
}

// Fraction of images with at least one detection at or above the score
// threshold.
inline double inclusion_rate(const std::vector<std::vector<Detection>>& per_image,
                             double score_threshold = 0.5) {
    require(!per_image.empty(), "inclusion_rate: no images");
    int hit = 0;
    for (const auto& dets : per_image)
        for (const Detection& d : dets)
            if (d.score >= score_threshold) {
                ++hit;
                break;
            }
    return static_cast<double>(hit) / static_cast<double>(per_image.size());
}

struct DetectorPolicy {
    double k_sigma = 3.0;
    int min_component_size = 2;
    double score_threshold = 0.5;  // used by inclusion aggregation
};

// Change-blob detector: per-cell channel norm of (after - before),
// thresholded at k standard deviations of that difference field, split into
// 4-connected components; tiny components are dropped. Score is the mean of
// the max-normalized difference inside the component.
inline std::vector<Detection> toy_detector(const Latent& before, const Latent& after,
                                           const DetectorPolicy& policy = {}) {
    require_same_shape(before, after, "toy_detector");
    const int H = before.height, W = before.width;
    std::vector<double> D(static_cast<std::size_t>(H) * W, 0.0);
    double d_max = 0.0;
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            const double* a = after.token(r, c);
            const double* b = before.token(r, c);
            double s = 0.0;
            for (int ch = 0; ch < before.dim; ++ch) {
                const double d = a[ch] - b[ch];
                s += d * d;
            }
            const double v = std::sqrt(s);
            D[static_cast<std::size_t>(r) * W + c] = v;
            d_max = std::max(d_max, v);
        }

    double mean = 0.0;
    for (double v : D) mean += v;
    mean /= static_cast<double>(D.size());
    double var = 0.0;
    for (double v : D) var += (v - mean) * (v - mean);
    var /= static_cast<double>(D.size());
    const double threshold = policy.k_sigma * std::sqrt(var);

    GridMask m(H, W);
    for (std::size_t i = 0; i < D.size(); ++i) m.cells[i] = D[i] > threshold;

    std::vector<int> labels;
    const int n_comp = connected_components(m, labels);
    std::vector<Detection> out;
    for (int comp = 0; comp < n_comp; ++comp) {
        int r0 = H, r1 = -1, c0 = W, c1 = -1, size = 0;
        double score_sum = 0.0;
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c)
                if (labels[static_cast<std::size_t>(r) * W + c] == comp) {
                    r0 = std::min(r0, r);
                    r1 = std::max(r1, r);
                    c0 = std::min(c0, c);
                    c1 = std::max(c1, c);
                    ++size;
                    score_sum += D[static_cast<std::size_t>(r) * W + c] / d_max;
                }
        if (size < policy.min_component_size) continue;
        Detection d;
        d.box = {static_cast<double>(c0), static_cast<double>(r0),
                 static_cast<double>(c1 - c0 + 1), static_cast<double>(r1 - r0 + 1)};
        d.score = score_sum / static_cast<double>(size);
        d.label = "blob";
        out.push_back(d);
    }
    return out;
}

using Detector =
    std::function<std::vector<Detection>(const Latent& before, const Latent& after)>;

inline Detector make_toy_detector(const DetectorPolicy& policy = {}) {
    return [policy](const Latent& before, const Latent& after) {
        return toy_detector(before, after, policy);
    };
}

// One evaluation unit: an edit to run and the boxes to judge it against.
struct EvalCase {
    EditRequest request;
    std::vector<BBox> gt_boxes;
};

// Per-image affordance (undetected images contribute 0) averaged over
// cases, plus the inclusion rate.
struct EvalSummary {
    double affordance = 0.0;
    double inclusion = 0.0;
    int n = 0;
};

inline EvalSummary evaluate_cases(const std::vector<EvalCase>& cases,
                                  const PipelineBackend& backend, const Detector& detector,
                                  double score_threshold = 0.5) {
    require(!cases.empty(), "evaluate_cases: no cases");
    EvalSummary s;
    std::vector<std::vector<Detection>> per_image;
    double afford_sum = 0.0;
    for (const EvalCase& ec : cases) {
        const EditResult r = run_edit(ec.request, backend);
        std::vector<Detection> dets = detector(r.source_reconstructed, r.output);
        afford_sum += affordance_score(dets, ec.gt_boxes).score;
        per_image.push_back(std::move(dets));
    }
    s.n = static_cast<int>(cases.size());
    s.affordance = afford_sum / static_cast<double>(s.n);
    s.inclusion = inclusion_rate(per_image, score_threshold);
    return s;
}

enum class SweepParam { gamma, t_struct, t_blend };

inline const char* sweep_param_name(SweepParam p) {
    switch (p) {
        case SweepParam::gamma: return "gamma";
        case SweepParam::t_struct: return "t_struct";
        case SweepParam::t_blend: return "t_blend";
    }
    return "?";
}

struct SweepRow {
    double value = 0.0;
    double affordance = 0.0;
    double inclusion = 0.0;
    int n = 0;
};

// For each grid value, override the swept parameter in every case and
// re-evaluate the whole batch.
inline std::vector<SweepRow> sweep(SweepParam param, const std::vector<double>& grid,
                                   const std::vector<EvalCase>& cases,
                                   const PipelineBackend& backend, const Detector& detector,
                                   double score_threshold = 0.5) {
    require(!grid.empty(), "sweep: empty grid");
    std::vector<SweepRow> rows;
    for (double value : grid) {
        std::vector<EvalCase> adjusted = cases;
        for (EvalCase& ec : adjusted) {
            PipelineConfig& cfg = ec.request.config;
            switch (param) {
                case SweepParam::gamma:
                    cfg.weights = AttentionWeights::balanced(value);
                    break;
                case SweepParam::t_struct:
                    cfg.t_struct = static_cast<int>(std::llround(value));
                    break;
                case SweepParam::t_blend:
                    cfg.t_blend = static_cast<int>(std::llround(value));
                    break;
            }
        }
        const EvalSummary s = evaluate_cases(adjusted, backend, detector, score_threshold);
        rows.push_back({value, s.affordance, s.inclusion, s.n});
    }
    return rows;
}

inline std::string sweep_to_csv(SweepParam param, const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << sweep_param_name(param) << ",affordance,inclusion,n\n";
    os << std::setprecision(17);
    for (const auto& r : rows)
        os << r.value << ',' << r.affordance << ',' << r.inclusion << ',' << r.n << '\n';
    return os.str();
}

}  // namespace addit
