#pragma once

#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "addit/config.hpp"
#include "addit/core.hpp"
#include "addit/latent.hpp"
#include "addit/rope.hpp"
#include "addit/tokens.hpp"

namespace addit {

enum class GammaMode { fixed, auto_balance };

// Per-partition key scales. The weighted form scales keys before the
// softmax, so a scale acts multiplicatively on logits and never touches
// values. auto_balance means: solve for a scalar g at the first extended
// step, then run with gamma_prompt = gamma_target = g and gamma_source = 1.
struct AttentionWeights {
    GammaMode mode = GammaMode::fixed;
    double gamma_source = 1.0;
    double gamma_prompt = 1.0;
    double gamma_target = 1.0;
    double auto_gamma = 0.0;  // solved scalar, once auto_balance has run

    static AttentionWeights fixed_scales(double gs, double gp, double gt) {
        AttentionWeights w;
        w.gamma_source = gs;
        w.gamma_prompt = gp;
        w.gamma_target = gt;
        return w;
    }

    static AttentionWeights balanced(double g) {
        AttentionWeights w = fixed_scales(1.0, g, g);
        w.auto_gamma = g;
        return w;
    }

    static AttentionWeights auto_mode() {
        AttentionWeights w;
        w.mode = GammaMode::auto_balance;
        return w;
    }

    void resolve(double g) {
        auto_gamma = g;
        gamma_source = 1.0;
        gamma_prompt = g;
        gamma_target = g;
    }

    void validate() const {
        require(gamma_source > 0.0 && gamma_prompt > 0.0 && gamma_target > 0.0,
                "AttentionWeights: scales must be strictly positive");
    }
};

// When the source key/value leak is active, by block family. Denoising time
// runs 1000 -> 0, so a block is extended while the current label is at or
// above its cutoff and reverts to baseline behaviour below it.
struct ExtensionSchedule {
    int multi_stream_until = 670;
    int single_stream_until = 340;

    void validate() const {
        require(multi_stream_until >= 0 && multi_stream_until <= 1000,
                "ExtensionSchedule: multi_stream_until out of [0,1000]");
        require(single_stream_until >= 0 && single_stream_until <= 1000,
                "ExtensionSchedule: single_stream_until out of [0,1000]");
        require(multi_stream_until >= single_stream_until,
                "ExtensionSchedule: multi-stream cutoff below single-stream cutoff");
    }

    bool active(bool multi_stream, int t_label) const {
        return t_label >= (multi_stream ? multi_stream_until : single_stream_until);
    }
};

// One block's attention inputs and outputs, per head, partitioned by origin.
// Query rows are [prompt, target]; key/value rows are [source, prompt,
// target] (source empty in the baseline case). A and h use those layouts.
struct AttentionState {
    int head_dim = 0;
    int num_heads = 0;
    int block_index = -1;
    bool multi_stream = false;

    std::vector<Mat> Q_p, Q_target;
    std::vector<Mat> K_p, K_target, V_p, V_target;
    std::vector<Mat> K_source, V_source;

    std::vector<Mat> A;  // per head, (n_prompt+n_target) x n_keys, row-stochastic
    std::vector<Mat> h;  // per head, (n_prompt+n_target) x head_dim

    std::size_t n_prompt() const { return Q_p.empty() ? 0 : Q_p[0].rows; }
    std::size_t n_target() const { return Q_target.empty() ? 0 : Q_target[0].rows; }
    std::size_t n_source() const { return K_source.empty() ? 0 : K_source[0].rows; }
    bool extended() const { return n_source() > 0; }

    void validate() const {
        require(head_dim > 0 && num_heads > 0, "AttentionState: missing dims");
        const std::size_t nh = static_cast<std::size_t>(num_heads);
        require(Q_p.size() == nh && Q_target.size() == nh, "AttentionState: query head count");
        require(K_p.size() == nh && K_target.size() == nh, "AttentionState: key head count");
        require(V_p.size() == nh && V_target.size() == nh, "AttentionState: value head count");
        require(K_source.size() == V_source.size() &&
                    (K_source.empty() || K_source.size() == nh),
                "AttentionState: source head count");
        const std::size_t d = static_cast<std::size_t>(head_dim);
        for (std::size_t hh = 0; hh < nh; ++hh) {
            require(Q_p[hh].cols == d && Q_target[hh].cols == d, "AttentionState: query width");
            require(K_p[hh].cols == d && K_target[hh].cols == d, "AttentionState: key width");
            require(V_p[hh].cols == d && V_target[hh].cols == d, "AttentionState: value width");
            require(K_p[hh].rows == V_p[hh].rows, "AttentionState: prompt K/V rows");
            require(K_target[hh].rows == V_target[hh].rows, "AttentionState: target K/V rows");
            // Joint self-attention: prompt and target keys come from the
            // same tokens as their queries; only the source partition may
            // add key rows without queries.
            require(K_p[hh].rows == Q_p[hh].rows, "AttentionState: prompt K rows vs Q rows");
            require(K_target[hh].rows == Q_target[hh].rows,
                    "AttentionState: target K rows vs Q rows");
            require(Q_p[hh].rows == Q_p[0].rows && Q_target[hh].rows == Q_target[0].rows,
                    "AttentionState: query rows differ across heads");
            if (!K_source.empty()) {
                require(K_source[hh].cols == d && V_source[hh].cols == d,
                        "AttentionState: source width");
                require(K_source[hh].rows == V_source[hh].rows, "AttentionState: source K/V rows");
                require(K_source[hh].rows == K_source[0].rows,
                        "AttentionState: source rows differ across heads");
            }
        }
    }
};

inline void softmax_rows(Mat& m) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        double* r = m.row(i);
        double mx = r[0];
        for (std::size_t j = 1; j < m.cols; ++j)
            if (r[j] > mx) mx = r[j];
        double z = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) {
            r[j] = std::exp(r[j] - mx);
            z += r[j];
        }
        const double inv = 1.0 / z;
        for (std::size_t j = 0; j < m.cols; ++j) r[j] *= inv;
    }
}

// Shared kernel for both the baseline and the extended path. Queries come
// from the prompt and target only; the source contributes keys/values and
// never queries. Key scales of exactly 1.0 leave key bits untouched, so a
// state with an empty source partition reproduces the two-partition form
// bit for bit.
inline void run_attention(AttentionState& st, double gs, double gp, double gt) {
    st.validate();
    require(gs > 0.0 && gp > 0.0 && gt > 0.0, "run_attention: non-positive key scale");
    const std::size_t d = static_cast<std::size_t>(st.head_dim);
    const std::size_t np = st.n_prompt(), nt = st.n_target(), ns = st.n_source();
    require(np + nt > 0, "run_attention: no query rows");
    const std::size_t nq = np + nt, nk = ns + np + nt;
    const double scale = 1.0 / std::sqrt(static_cast<double>(st.head_dim));

    st.A.assign(static_cast<std::size_t>(st.num_heads), Mat());
    st.h.assign(static_cast<std::size_t>(st.num_heads), Mat());

    for (int hh = 0; hh < st.num_heads; ++hh) {
        const Mat* qparts[2] = {&st.Q_p[hh], &st.Q_target[hh]};
        const Mat* kparts[3] = {ns ? &st.K_source[hh] : nullptr, &st.K_p[hh], &st.K_target[hh]};
        const Mat* vparts[3] = {ns ? &st.V_source[hh] : nullptr, &st.V_p[hh], &st.V_target[hh]};
        const double kscale[3] = {gs, gp, gt};

        for (const Mat* m : {qparts[0], qparts[1], kparts[1], kparts[2], vparts[1], vparts[2]})
            require(all_finite(m->a), "attention: non-finite input");
        if (ns) {
            require(all_finite(kparts[0]->a), "attention: non-finite input");
            require(all_finite(vparts[0]->a), "attention: non-finite input");
        }

        Mat K(nk, d), V(nk, d);
        std::size_t kr = 0;
        for (int part = 0; part < 3; ++part) {
            if (!kparts[part]) continue;
            for (std::size_t i = 0; i < kparts[part]->rows; ++i, ++kr) {
                const double* ks = kparts[part]->row(i);
                const double* vs = vparts[part]->row(i);
                double* kd = K.row(kr);
                double* vd = V.row(kr);
                for (std::size_t j = 0; j < d; ++j) {
                    kd[j] = kscale[part] * ks[j];
                    vd[j] = vs[j];
                }
            }
        }

        Mat L(nq, nk);
        for (std::size_t i = 0; i < nq; ++i) {
            const double* q = i < np ? qparts[0]->row(i) : qparts[1]->row(i - np);
            double* li = L.row(i);
            for (std::size_t j = 0; j < nk; ++j) li[j] = dot(q, K.row(j), d) * scale;
        }
        softmax_rows(L);
        st.h[hh] = matmul(L, V);
        st.A[hh] = std::move(L);
    }
}

// Joint self-attention over [prompt, image] tokens, rows of A normalized.
inline void baseline_attention(AttentionState& st) {
    require(st.n_source() == 0, "baseline_attention: source partition present");
    run_attention(st, 1.0, 1.0, 1.0);
}

// The tripartite form: target and prompt queries over scaled keys
// [gs*K_source, gp*K_p, gt*K_target], h = A*[V_source, V_p, V_target].
inline void extended_attention(AttentionState& st, const AttentionWeights& w) {
    require(st.n_source() > 0, "extended_attention: missing source partition");
    w.validate();
    run_attention(st, w.gamma_source, w.gamma_prompt, w.gamma_target);
}

// Where the prompt tokens' attention mass lands, by key partition, averaged
// over prompt query rows and heads. Rows of A are stochastic, so partition
// sums are already per-row fractions.
struct SpreadFractions {
    double source_frac = 0.0;
    double prompt_frac = 0.0;
    double target_frac = 0.0;
};

inline SpreadFractions attention_spread(const AttentionState& st) {
    require(!st.A.empty(), "attention_spread: attention not computed");
    const std::size_t np = st.n_prompt(), nt = st.n_target(), ns = st.n_source();
    require(np > 0, "attention_spread: no prompt rows");
    SpreadFractions out;
    std::size_t count = 0;
    for (const Mat& A : st.A) {
        require(A.cols == ns + np + nt, "attention_spread: key layout mismatch");
        for (std::size_t i = 0; i < np; ++i) {
            const double* r = A.row(i);
            double s = 0.0, p = 0.0, t = 0.0;
            std::size_t j = 0;
            for (; j < ns; ++j) s += r[j];
            for (; j < ns + np; ++j) p += r[j];
            for (; j < ns + np + nt; ++j) t += r[j];
            out.source_frac += s;
            out.prompt_frac += p;
            out.target_frac += t;
            ++count;
        }
    }
    out.source_frac /= static_cast<double>(count);
    out.prompt_frac /= static_cast<double>(count);
    out.target_frac /= static_cast<double>(count);
    return out;
}

struct AttentionSpreadEntry {
    int step = 0;
    int block = 0;
    double source_frac = 0.0;
    double prompt_frac = 0.0;
    double target_frac = 0.0;
};

// Per-step, per-block series of prompt-attention fractions.
struct AttentionSpread {
    std::vector<AttentionSpreadEntry> entries;

    void add(int step, int block, const SpreadFractions& f) {
        entries.push_back({step, block, f.source_frac, f.prompt_frac, f.target_frac});
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << "step,block,source_frac,prompt_frac,target_frac\n";
        os << std::setprecision(17);
        for (const auto& e : entries)
            os << e.step << ',' << e.block << ',' << e.source_frac << ',' << e.prompt_frac << ','
               << e.target_frac << '\n';
        return os.str();
    }
};

// Root bracketing failed: f has the same sign at both ends of [lo, hi].
struct bracket_error : error {
    double f_lo, f_hi;
    bracket_error(double lo, double hi, double flo, double fhi)
        : error("solve_gamma: no sign change on [" + std::to_string(lo) + ", " +
                std::to_string(hi) + "]: f(lo) = " + std::to_string(flo) +
                ", f(hi) = " + std::to_string(fhi)),
          f_lo(flo),
          f_hi(fhi) {}
};

// Precomputed unscaled logits of every prompt query row against the three
// key partitions, flattened over heads. f(g) is then cheap to evaluate for
// many g: balance scales act on logits directly.
struct GammaProbe {
    struct Row {
        std::vector<double> source, prompt, target;
    };
    std::vector<Row> rows;

    // Mean over rows of (mass on source - mass on target) with key scales
    // (1, g, g), each row normalized over all three partitions.
    double f(double g) const {
        require(g > 0.0, "GammaProbe: non-positive gamma");
        require(!rows.empty(), "GammaProbe: empty probe");
        double acc = 0.0;
        for (const Row& r : rows) {
            double mx = -std::numeric_limits<double>::infinity();
            for (double b : r.source) mx = std::max(mx, b);
            for (double b : r.prompt) mx = std::max(mx, g * b);
            for (double b : r.target) mx = std::max(mx, g * b);
            double zs = 0.0, zp = 0.0, zt = 0.0;
            for (double b : r.source) zs += std::exp(b - mx);
            for (double b : r.prompt) zp += std::exp(g * b - mx);
            for (double b : r.target) zt += std::exp(g * b - mx);
            acc += (zs - zt) / (zs + zp + zt);
        }
        return acc / static_cast<double>(rows.size());
    }
};

inline GammaProbe make_gamma_probe(const AttentionState& st) {
    st.validate();
    require(st.n_source() > 0, "make_gamma_probe: missing source partition");
    require(st.n_prompt() > 0, "make_gamma_probe: no prompt rows");
    const std::size_t d = static_cast<std::size_t>(st.head_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(st.head_dim));
    GammaProbe p;
    for (int hh = 0; hh < st.num_heads; ++hh) {
        for (std::size_t i = 0; i < st.n_prompt(); ++i) {
            const double* q = st.Q_p[hh].row(i);
            GammaProbe::Row row;
            for (std::size_t j = 0; j < st.n_source(); ++j)
                row.source.push_back(dot(q, st.K_source[hh].row(j), d) * scale);
            for (std::size_t j = 0; j < st.n_prompt(); ++j)
                row.prompt.push_back(dot(q, st.K_p[hh].row(j), d) * scale);
            for (std::size_t j = 0; j < st.n_target(); ++j)
                row.target.push_back(dot(q, st.K_target[hh].row(j), d) * scale);
            p.rows.push_back(std::move(row));
        }
    }
    return p;
}

// Bisection for the balance scale g with f(g) = 0 on [lo, hi]. f is scalar,
// cheap and empirically monotone over the bracket, so plain bisection down
// to near machine width is both simple and as accurate as the probe allows.
inline double solve_gamma(const AttentionState& probe_state, double tolerance = 1e-4,
                          double lo = 0.5, double hi = 2.0) {
    require(tolerance > 0.0, "solve_gamma: tolerance must be positive");
    require(lo > 0.0 && hi > lo, "solve_gamma: bad bracket");
    const GammaProbe p = make_gamma_probe(probe_state);
    double flo = p.f(lo), fhi = p.f(hi);
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    if ((flo > 0.0) == (fhi > 0.0)) throw bracket_error(lo, hi, flo, fhi);
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = p.f(mid);
        if (fm == 0.0) return mid;
        if ((fm > 0.0) == (flo > 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    const double g = 0.5 * (lo + hi);
    require(std::abs(p.f(g)) <= tolerance, "solve_gamma: residual above tolerance at bracket limit");
    return g;
}

// Before/after argmax report for shifting the source image's positional
// encodings. The probe isolates the positional mechanism: per-head slices of
// the raw embeddings stand in for projections, the target content is the
// subject embedding broadcast over the grid, and rotations carry all
// position dependence. s* is the subject query's strongest source key; t*
// is the target-grid cell whose query aligns best with that key, compared
// on pre-softmax logits (softmax rows are not comparable across queries).
struct ShiftProbeReport {
    int source_row_before = 0, source_col_before = 0;
    int source_row_after = 0, source_col_after = 0;
    int target_row_before = 0, target_col_before = 0;
    int target_row_after = 0, target_col_after = 0;
};

namespace shift_probe_detail {

struct Pick {
    int row = 0, col = 0;
};

// argmax over grid cells of summed per-head logits; row-major tie-break.
inline Pick argmax_cell(const std::vector<double>& score, int gw) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < score.size(); ++i)
        if (score[i] > score[best]) best = i;
    return {static_cast<int>(best) / gw, static_cast<int>(best) % gw};
}

}  // namespace shift_probe_detail

inline ShiftProbeReport positional_shift_probe(const Latent& source, const TokenSequence& prompt,
                                               int drow, int dcol, const ModelConfig& config) {
    config.validate();
    prompt.validate();
    require(prompt.has_subject(), "positional_shift_probe: prompt has no subject token");
    require(source.height == config.grid_h && source.width == config.grid_w &&
                source.dim == config.dim,
            "positional_shift_probe: source grid mismatch");
    require(std::abs(drow) < config.grid_h && std::abs(dcol) < config.grid_w,
            "positional_shift_probe: offset outside grid bounds");

    const RopeConfig rc{config.head_dim, config.grid_h, config.grid_w};
    const int n_cells = config.image_tokens();
    const int hd = config.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const double* subj = prompt.embeddings.row(static_cast<std::size_t>(prompt.subject_index));

    ShiftProbeReport rep;
    for (int pass = 0; pass < 2; ++pass) {
        const PositionalEncoding pe_src =
            pass == 0 ? PositionalEncoding(rc) : PositionalEncoding(rc).shifted(drow, dcol);
        const PositionalEncoding pe_tgt{rc};
        const Mat src_ph = pe_src.image_phases();
        const Mat tgt_ph = pe_tgt.image_phases();
        const Mat text_ph = pe_tgt.text_phases(prompt.size());

        std::vector<double> src_score(static_cast<std::size_t>(n_cells), 0.0);
        std::vector<Mat> k_src(static_cast<std::size_t>(config.num_heads));

        for (int hh = 0; hh < config.num_heads; ++hh) {
            Mat q_subj(1, static_cast<std::size_t>(hd));
            for (int j = 0; j < hd; ++j) q_subj(0, j) = subj[hh * hd + j];
            Mat subj_phase(1, text_ph.cols);
            for (std::size_t j = 0; j < text_ph.cols; ++j)
                subj_phase(0, j) = text_ph(static_cast<std::size_t>(prompt.subject_index), j);
            apply_rope(q_subj, subj_phase);

            Mat K(static_cast<std::size_t>(n_cells), static_cast<std::size_t>(hd));
            for (int cell = 0; cell < n_cells; ++cell) {
                const double* tok = source.data.data() + static_cast<std::size_t>(cell) * config.dim;
                double* kr = K.row(static_cast<std::size_t>(cell));
                for (int j = 0; j < hd; ++j) kr[j] = tok[hh * hd + j];
            }
            apply_rope(K, src_ph);

            for (int cell = 0; cell < n_cells; ++cell)
                src_score[static_cast<std::size_t>(cell)] +=
                    dot(q_subj.row(0), K.row(static_cast<std::size_t>(cell)),
                        static_cast<std::size_t>(hd)) *
                    scale;
            k_src[static_cast<std::size_t>(hh)] = std::move(K);
        }
        const auto s_star = shift_probe_detail::argmax_cell(src_score, config.grid_w);
        const std::size_t s_index =
            static_cast<std::size_t>(s_star.row) * config.grid_w + s_star.col;

        std::vector<double> tgt_score(static_cast<std::size_t>(n_cells), 0.0);
        for (int hh = 0; hh < config.num_heads; ++hh) {
            Mat Q(static_cast<std::size_t>(n_cells), static_cast<std::size_t>(hd));
            for (int cell = 0; cell < n_cells; ++cell) {
                double* qr = Q.row(static_cast<std::size_t>(cell));
                for (int j = 0; j < hd; ++j) qr[j] = subj[hh * hd + j];
            }
            apply_rope(Q, tgt_ph);
            const double* ks = k_src[static_cast<std::size_t>(hh)].row(s_index);
            for (int cell = 0; cell < n_cells; ++cell)
                tgt_score[static_cast<std::size_t>(cell)] +=
                    dot(Q.row(static_cast<std::size_t>(cell)), ks, static_cast<std::size_t>(hd)) *
                    scale;
        }
        const auto t_star = shift_probe_detail::argmax_cell(tgt_score, config.grid_w);

        if (pass == 0) {
            rep.source_row_before = s_star.row;
            rep.source_col_before = s_star.col;
            rep.target_row_before = t_star.row;
            rep.target_col_before = t_star.col;
        } else {
            rep.source_row_after = s_star.row;
            rep.source_col_after = s_star.col;
            rep.target_row_after = t_star.row;
            rep.target_col_after = t_star.col;
        }
    }
    return rep;
}

}  // namespace addit
