#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

#include "addit/evalkit.hpp"
#include "addit/rng.hpp"
#include "addit/tokens.hpp"

using namespace addit;

namespace {

// Boxes on quarter-cell coordinates rasterize exactly.
BBox quarter_box(std::uint64_t seed, std::uint64_t salt) {
    const auto q = [&](std::uint64_t i, int lo, int hi) {
        return lo + static_cast<int>(rng::key(seed ^ salt, i) % (hi - lo + 1));
    };
    return {q(0, 0, 32) / 4.0, q(1, 0, 32) / 4.0, q(2, 1, 32) / 4.0, q(3, 1, 32) / 4.0};
}

double rasterized_union_intersection(const BBox& det, const std::vector<BBox>& gts) {
    const double step = 0.25;
    double area = 0.0;
    const int nx = static_cast<int>(std::llround(det.w / step));
    const int ny = static_cast<int>(std::llround(det.h / step));
    for (int i = 0; i < nx; ++i)
        for (int j = 0; j < ny; ++j) {
            const double cx = det.x + (i + 0.5) * step;
            const double cy = det.y + (j + 0.5) * step;
            for (const BBox& g : gts)
                if (cx > g.x && cx < g.x2() && cy > g.y && cy < g.y2()) {
                    area += step * step;
                    break;
                }
        }
    return area;
}

Latent random_latent(std::uint64_t seed, int h, int w, int d) {
    Latent x(h, w, d, 0);
    x.data = rng::normals(seed, x.size());
    return x;
}

}  // namespace

TEST_CASE("a detection fully inside an annotated box scores one") {
    const std::vector<BBox> gt{{0, 0, 10, 10}};
    const std::vector<Detection> dets{{{2, 3, 4, 4}, 0.9, "blob"}};
    const AffordanceResult r = affordance_score(dets, gt);
    CHECK(r.score == 1.0);
    CHECK(!r.undetected);
}

TEST_CASE("an exact half overlap counts as inside") {
    const std::vector<BBox> gt{{2, 0, 4, 4}};
    const std::vector<Detection> dets{{{0, 0, 4, 4}, 1.0, "blob"}};
    CHECK(affordance_score(dets, gt).score == 1.0);

    // Just under half falls outside.
    const std::vector<BBox> shifted{{2.1, 0, 4, 4}};
    CHECK(affordance_score(dets, shifted).score == 0.0);
}

TEST_CASE("mixed overlaps score the inside fraction") {
    const std::vector<BBox> gt{{0, 0, 10, 10}};
    const std::vector<Detection> dets{
        {{1, 0, 10, 9}, 1.0, "a"},   // 81/90 = 0.9
        {{6, 0, 10, 10}, 1.0, "b"},  // 40/100 = 0.4
        {{4, 0, 10, 10}, 1.0, "c"},  // 60/100 = 0.6
    };
    CHECK(affordance_score(dets, gt).score == Catch::Approx(2.0 / 3.0).margin(1e-15));
}

TEST_CASE("rectangle arithmetic matches rasterization on random boxes") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const BBox det = quarter_box(seed, 0x11);
        std::vector<BBox> gts;
        const int n = 1 + static_cast<int>(seed % 3);
        for (int i = 0; i < n; ++i) gts.push_back(quarter_box(seed, 0x22 + i));
        const double got = union_intersection_area(det, gts);
        const double want = rasterized_union_intersection(det, gts);
        REQUIRE(got == Catch::Approx(want).margin(1e-9));
    }
}

TEST_CASE("affordance ignores box order and moves with translation") {
    std::vector<BBox> gt{{0, 0, 5, 5}, {8, 8, 4, 4}, {3, 2, 6, 6}};
    std::vector<Detection> dets{
        {{1, 1, 3, 3}, 1.0, "a"}, {{9, 9, 2, 2}, 1.0, "b"}, {{12, 0, 3, 3}, 1.0, "c"}};
    const double base = affordance_score(dets, gt).score;

    std::reverse(gt.begin(), gt.end());
    std::swap(dets[0], dets[2]);
    CHECK(affordance_score(dets, gt).score == base);

    for (BBox& g : gt) g = g.translated(3.5, -1.25);
    for (Detection& d : dets) d.box = d.box.translated(3.5, -1.25);
    CHECK(affordance_score(dets, gt).score == base);
}

TEST_CASE("a whole-image annotation accepts any detection") {
    const std::vector<BBox> gt{{0, 0, 16, 16}};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::vector<Detection> dets{{quarter_box(seed, 0x7), 1.0, "x"}};
        dets[0].box.w = std::min(dets[0].box.w, 16.0 - dets[0].box.x);
        dets[0].box.h = std::min(dets[0].box.h, 16.0 - dets[0].box.y);
        CHECK(affordance_score(dets, gt).score == 1.0);
    }
}

TEST_CASE("no detections flags the image undetected") {
    const AffordanceResult r = affordance_score({}, {{0, 0, 4, 4}});
    CHECK(r.score == 0.0);
    CHECK(r.undetected);
}

TEST_CASE("metric inputs are validated") {
    CHECK_THROWS_AS(affordance_score({}, {{0, 0, 0, 4}}), contract_error);
    const std::vector<Detection> bad{{{0, 0, 2, 2}, 1.5, "x"}};
    CHECK_THROWS_AS(affordance_score(bad, {{0, 0, 4, 4}}), contract_error);
    CHECK_THROWS_AS(inclusion_rate({}), contract_error);
}

TEST_CASE("inclusion counts images with a qualifying detection") {
    std::vector<std::vector<Detection>> per_image;
    for (int i = 0; i < 10; ++i) {
        std::vector<Detection> dets;
        if (i < 7) dets.push_back({{0, 0, 2, 2}, 0.8, "x"});
        per_image.push_back(dets);
    }
    CHECK(inclusion_rate(per_image) == Catch::Approx(0.7).margin(1e-15));

    // The threshold is inclusive and adjustable.
    std::vector<std::vector<Detection>> edge{{{{0, 0, 2, 2}, 0.5, "x"}}};
    CHECK(inclusion_rate(edge) == 1.0);
    CHECK(inclusion_rate(edge, 0.9) == 0.0);

    std::vector<std::vector<Detection>> all{{{{0, 0, 2, 2}, 1.0, "x"}},
                                            {{{1, 1, 2, 2}, 0.6, "y"}}};
    CHECK(inclusion_rate(all) == 1.0);
}

TEST_CASE("identical images yield no detections") {
    const Latent x = random_latent(3000, 8, 8, 4);
    CHECK(toy_detector(x, x).empty());
}

TEST_CASE("one injected rectangle is one detection with its exact box") {
    const Latent before = random_latent(3001, 16, 16, 4);
    Latent after = before;
    for (int r = 5; r <= 7; ++r)
        for (int c = 9; c <= 12; ++c) after.token(r, c)[0] += 10.0;

    const auto dets = toy_detector(before, after);
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].box.x == 9.0);
    CHECK(dets[0].box.y == 5.0);
    CHECK(dets[0].box.w == 4.0);
    CHECK(dets[0].box.h == 3.0);
    CHECK(dets[0].score > 0.0);
    CHECK(dets[0].score <= 1.0);
    CHECK(dets[0].label == "blob");
}

TEST_CASE("two disjoint blobs detect separately with ordered scores") {
    const Latent before = random_latent(3002, 16, 16, 4);
    Latent after = before;
    for (int r = 2; r <= 3; ++r)
        for (int c = 2; c <= 4; ++c) after.token(r, c)[0] += 10.0;
    for (int r = 10; r <= 12; ++r)
        for (int c = 9; c <= 10; ++c) after.token(r, c)[0] += 8.0;

    const auto dets = toy_detector(before, after);
    REQUIRE(dets.size() == 2);
    CHECK(dets[0].box.x == 2.0);
    CHECK(dets[0].box.y == 2.0);
    CHECK(dets[1].box.x == 9.0);
    CHECK(dets[1].box.y == 10.0);
    CHECK(dets[0].score > dets[1].score);
}

TEST_CASE("detector components match an independent flood fill") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Latent before = random_latent(seed + 3100, 16, 16, 4);
        Latent after = before;
        // Sparse strong perturbations, ~3% of cells, plus one guaranteed
        // two-cell blob so every seed keeps at least one component.
        for (std::size_t i = 0; i < 256; ++i)
            if (rng::key(seed + 3200, i) % 33 == 0)
                after.data[i * 4 + 1] += 20.0 + static_cast<double>(rng::key(seed, i) % 5);
        after.token(0, 0)[1] += 21.0;
        after.token(0, 1)[1] += 21.0;

        // Recompute the difference field and threshold independently.
        std::vector<double> D(256, 0.0);
        for (int r = 0; r < 16; ++r)
            for (int c = 0; c < 16; ++c) {
                double s = 0.0;
                for (int ch = 0; ch < 4; ++ch) {
                    const double d = after.token(r, c)[ch] - before.token(r, c)[ch];
                    s += d * d;
                }
                D[static_cast<std::size_t>(r) * 16 + c] = std::sqrt(s);
            }
        double mean = 0.0;
        for (double v : D) mean += v;
        mean /= 256.0;
        double var = 0.0;
        for (double v : D) var += (v - mean) * (v - mean);
        const double thr = 3.0 * std::sqrt(var / 256.0);

        GridMask m(16, 16);
        for (std::size_t i = 0; i < 256; ++i) m.cells[i] = D[i] > thr;
        std::vector<int> labels;
        const int n_comp = connected_components(m, labels);
        std::vector<BBox> want;
        for (int comp = 0; comp < n_comp; ++comp) {
            int r0 = 16, r1 = -1, c0 = 16, c1 = -1, size = 0;
            for (int r = 0; r < 16; ++r)
                for (int c = 0; c < 16; ++c)
                    if (labels[static_cast<std::size_t>(r) * 16 + c] == comp) {
                        r0 = std::min(r0, r);
                        r1 = std::max(r1, r);
                        c0 = std::min(c0, c);
                        c1 = std::max(c1, c);
                        ++size;
                    }
            if (size < 2) continue;
            want.push_back({static_cast<double>(c0), static_cast<double>(r0),
                            static_cast<double>(c1 - c0 + 1), static_cast<double>(r1 - r0 + 1)});
        }

        const auto dets = toy_detector(before, after);
        REQUIRE(dets.size() == want.size());
        for (std::size_t i = 0; i < dets.size(); ++i) {
            CHECK(dets[i].box.x == want[i].x);
            CHECK(dets[i].box.y == want[i].y);
            CHECK(dets[i].box.w == want[i].w);
            CHECK(dets[i].box.h == want[i].h);
        }
    }
}

TEST_CASE("case evaluation aggregates affordance and inclusion") {
    OraclePointSet ds;
    ds.points.push_back(random_latent(4000, 8, 8, 4));

    ModelConfig mc;
    mc.dim = 32;
    mc.head_dim = 8;
    mc.num_heads = 4;
    EvalCase a, b;
    a.request.source_prompt = embed_prompt({"p"}, mc);
    a.request.target_prompt = embed_prompt({"q"}, mc);
    a.request.config.extension_enabled = false;
    a.request.config.blending_enabled = false;
    a.request.config.source_seed = 1;
    a.request.config.target_seed = 2;
    a.gt_boxes = {{0, 0, 8, 8}};
    b = a;
    b.request.config.source_seed = 3;
    b.gt_boxes = {{0, 0, 1, 1}};

    int calls = 0;
    const Detector stub = [&calls](const Latent&, const Latent&) {
        ++calls;
        std::vector<Detection> out;
        if (calls == 1) out.push_back({{2, 2, 3, 3}, 0.9, "x"});  // inside the whole-image box
        return out;                                               // second case: undetected
    };

    const EvalSummary s = evaluate_cases({a, b}, {nullptr, &ds}, stub);
    CHECK(s.n == 2);
    CHECK(s.affordance == Catch::Approx(0.5).margin(1e-15));
    CHECK(s.inclusion == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("sweeps emit one row per grid value") {
    OraclePointSet ds;
    ds.points.push_back(random_latent(4100, 8, 8, 4));

    ModelConfig mc;
    mc.dim = 32;
    mc.head_dim = 8;
    mc.num_heads = 4;
    EvalCase c;
    c.request.source_prompt = embed_prompt({"p"}, mc);
    c.request.target_prompt = embed_prompt({"q"}, mc);
    c.request.config.extension_enabled = false;
    c.request.config.blending_enabled = false;
    c.gt_boxes = {{0, 0, 8, 8}};

    const Detector stub = [](const Latent&, const Latent&) {
        return std::vector<Detection>{{{1, 1, 2, 2}, 0.8, "x"}};
    };

    const std::vector<double> grid{600, 800, 933};
    const auto rows = sweep(SweepParam::t_struct, grid, {c}, {nullptr, &ds}, stub);
    REQUIRE(rows.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(rows[i].value == grid[i]);
        CHECK(rows[i].affordance == 1.0);
        CHECK(rows[i].inclusion == 1.0);
        CHECK(rows[i].n == 1);
    }

    const std::string csv = sweep_to_csv(SweepParam::t_struct, rows);
    CHECK(csv.rfind("t_struct,affordance,inclusion,n\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

    // A single-point grid reproduces a direct evaluation.
    const auto one = sweep(SweepParam::gamma, {1.05}, {c}, {nullptr, &ds}, stub);
    const EvalSummary direct = evaluate_cases({c}, {nullptr, &ds}, stub);
    CHECK(one[0].affordance == direct.affordance);
    CHECK(one[0].inclusion == direct.inclusion);
}
