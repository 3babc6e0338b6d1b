#pragma once

#include <cstdint>
#include <deque>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "addit/attention.hpp"
#include "addit/config.hpp"
#include "addit/core.hpp"
#include "addit/latent.hpp"
#include "addit/masking.hpp"
#include "addit/model.hpp"
#include "addit/oracle.hpp"
#include "addit/schedule.hpp"
#include "addit/tokens.hpp"

namespace addit {

enum class EditMode { generated, real };

// Full run configuration. Defaults follow the generated-image operating
// point (t_struct 933); real_defaults() switches to 867. The three enable_*
// flags and the blend hooks exist for ablations: blend_every_step also
// applies the final blend at the terminal sigma=0 state, so an all-zero mask
// reproduces the source exactly.
struct PipelineConfig {
    EditMode mode = EditMode::generated;
    int num_steps = 30;
    int t_struct = 933;
    int t_blend = 500;
    ExtensionSchedule extension;
    AttentionWeights weights = AttentionWeights::balanced(1.05);
    std::uint64_t source_seed = 0;
    std::uint64_t target_seed = 1;
    bool extension_enabled = true;
    bool structure_transfer_enabled = true;
    bool blending_enabled = true;
    bool blend_every_step = false;
    bool force_empty_mask = false;
    MaskPolicy mask_policy;
    bool keep_trace = true;

    static PipelineConfig generated_defaults() { return {}; }

    static PipelineConfig real_defaults() {
        PipelineConfig c;
        c.mode = EditMode::real;
        c.t_struct = 867;
        return c;
    }

    void validate() const {
        require(num_steps >= 1, "PipelineConfig: num_steps must be positive");
        require(t_struct >= 0 && t_struct <= 1000, "PipelineConfig: t_struct out of [0,1000]");
        require(t_blend >= 0 && t_blend <= 1000, "PipelineConfig: t_blend out of [0,1000]");
        extension.validate();
        weights.validate();
    }
};

// One edit: where the source comes from, what each stream is told, and how
// to run. Generated mode synthesizes the source from source_seed with
// source_prompt; real mode consumes source_clean (and uses source_seed for
// the per-run noise sample).
struct EditRequest {
    std::optional<Latent> source_clean;
    TokenSequence source_prompt;
    TokenSequence target_prompt;
    PipelineConfig config;

    void validate() const {
        config.validate();
        source_prompt.validate();
        target_prompt.validate();
        if (config.mode == EditMode::real)
            require(source_clean.has_value(), "EditRequest: real mode needs a clean source latent");
    }
};

struct TraceRow {
    int step = 0;
    int label = 0;
    double sigma = 0.0;
    int extended_blocks = 0;
    bool blended = false;
    double target_norm = 0.0;
    double velocity_norm = 0.0;
};

inline std::string trace_to_csv(const std::vector<TraceRow>& trace) {
    std::ostringstream os;
    os << "step,label,sigma,extended_blocks,blended,target_norm,velocity_norm\n";
    os << std::setprecision(17);
    for (const auto& r : trace)
        os << r.step << ',' << r.label << ',' << r.sigma << ',' << r.extended_blocks << ','
           << (r.blended ? 1 : 0) << ',' << r.target_norm << ',' << r.velocity_norm << '\n';
    return os.str();
}

struct EditResult {
    Latent output;
    Latent source_reconstructed;
    SubjectMask mask;
    bool mask_built = false;
    SubjectAttentionMap subject_map;
    AttentionSpread spread;
    double solved_gamma = 0.0;  // nonzero only when auto balancing ran
    std::vector<TraceRow> trace;
    std::vector<std::string> warnings;
};

// Exactly one of the two velocity sources: the toy transformer, or the
// closed-form posterior velocity over a finite dataset. The oracle has no
// attention states, so extension and blending must be disabled with it.
struct PipelineBackend {
    const Model* model = nullptr;
    const OraclePointSet* dataset = nullptr;

    bool oracle() const { return dataset != nullptr; }

    void validate() const {
        require((model != nullptr) + (dataset != nullptr) == 1,
                "PipelineBackend: exactly one of model/dataset");
    }
};

// The source stream in real mode is re-synthesized from the clean image at
// every step with one fixed noise sample, never integrated.
inline Latent run_real_mode_step(const Latent& source_clean, const NoiseSample& eps,
                                 std::size_t step, const Schedule& sched) {
    return noise_to(source_clean, eps, step, sched);
}

namespace pipeline_detail {

struct StepGrids {
    int step = 0;
    // (block index, saliency grid over the target grid)
    std::vector<std::pair<int, std::vector<double>>> grids;
};

inline double vec_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace pipeline_detail

inline EditResult run_edit(const EditRequest& req, const PipelineBackend& backend) {
    req.validate();
    backend.validate();
    const PipelineConfig& cfg = req.config;
    if (backend.oracle())
        require(!cfg.extension_enabled && !cfg.blending_enabled,
                "run_edit: oracle backend has no attention; disable extension and blending");

    const Schedule sched = Schedule::linear(cfg.num_steps);
    const std::size_t n = static_cast<std::size_t>(cfg.num_steps);

    int grid_h, grid_w, dim;
    if (backend.model) {
        grid_h = backend.model->config.grid_h;
        grid_w = backend.model->config.grid_w;
        dim = backend.model->config.dim;
    } else {
        const Latent& p0 = backend.dataset->points.front();
        grid_h = p0.height;
        grid_w = p0.width;
        dim = p0.dim;
    }
    if (req.source_clean)
        require(req.source_clean->height == grid_h && req.source_clean->width == grid_w &&
                    req.source_clean->dim == dim,
                "run_edit: source latent shape mismatch");

    EditResult res;

    auto velocity = [&](const Latent& x, const TokenSequence& prompt, std::size_t step,
                        const AttentionHook& hook) {
        if (backend.oracle()) return oracle_velocity(x, step, sched, *backend.dataset);
        return backend.model->forward_velocity(x, prompt, sched.label(step), hook);
    };

    // Source stream: full trajectory up front. Generated mode integrates
    // from its own seed; real mode re-synthesizes by formula at every step.
    std::vector<Latent> source_states(n + 1);
    const NoiseSample eps_source(cfg.source_seed, grid_h, grid_w, dim);
    if (cfg.mode == EditMode::generated) {
        Latent xs = eps_source.values;
        source_states[0] = xs;
        for (std::size_t k = 0; k < n; ++k) {
            const Latent v = velocity(xs, req.source_prompt, k, {});
            xs = euler_step(xs, v, k, sched);
            source_states[k + 1] = xs;
        }
    } else {
        for (std::size_t k = 0; k <= n; ++k)
            source_states[k] = run_real_mode_step(*req.source_clean, eps_source, k, sched);
    }
    res.source_reconstructed = source_states[n];

    // Target stream initialization: structure transfer noises the source's
    // clean estimate to t_struct and starts denoising there.
    const NoiseSample eps_target(cfg.target_seed, grid_h, grid_w, dim);
    std::size_t k0 = 0;
    Latent xt;
    if (cfg.structure_transfer_enabled) {
        const Latent& clean = cfg.mode == EditMode::generated ? source_states[n] : *req.source_clean;
        k0 = sched.step_for(cfg.t_struct);
        xt = noise_to(clean, eps_target, k0, sched);
    } else {
        xt = eps_target.values;
    }

    AttentionWeights weights = cfg.weights;
    bool gamma_resolved = weights.mode != GammaMode::auto_balance;
    const std::size_t k_blend = sched.step_for(cfg.t_blend);
    const int subject = req.target_prompt.subject_index;

    std::deque<pipeline_detail::StepGrids> grid_window;
    SubjectMask last_mask;
    bool have_mask = false;
    bool warned_no_subject = false;

    const int n_blocks = backend.model ? backend.model->config.num_blocks() : 0;
    std::vector<std::vector<Mat>> cap_k(static_cast<std::size_t>(n_blocks));
    std::vector<std::vector<Mat>> cap_v(static_cast<std::size_t>(n_blocks));

    for (std::size_t k = k0; k < n; ++k) {
        const int label = sched.label(k);
        const bool ext_multi = cfg.extension_enabled && cfg.extension.active(true, label);
        const bool ext_single = cfg.extension_enabled && cfg.extension.active(false, label);
        const bool any_ext = !backend.oracle() && (ext_multi || ext_single);
        int extended_blocks = 0;

        if (any_ext) {
            // Re-run the source forward at this step purely to capture its
            // image keys/values; its attention output is discarded.
            const AttentionHook capture = [&](AttentionState& st) {
                cap_k[static_cast<std::size_t>(st.block_index)] = st.K_target;
                cap_v[static_cast<std::size_t>(st.block_index)] = st.V_target;
            };
            velocity(source_states[k], req.source_prompt, k, capture);
        }

        pipeline_detail::StepGrids step_grids;
        step_grids.step = static_cast<int>(k);

        const AttentionHook target_hook = [&](AttentionState& st) {
            const bool extend = st.multi_stream ? ext_multi : ext_single;
            if (extend) {
                st.K_source = cap_k[static_cast<std::size_t>(st.block_index)];
                st.V_source = cap_v[static_cast<std::size_t>(st.block_index)];
                if (!gamma_resolved) {
                    const double g = solve_gamma(st);
                    weights.resolve(g);
                    res.solved_gamma = g;
                    gamma_resolved = true;
                }
                extended_attention(st, weights);
                ++extended_blocks;
            } else {
                baseline_attention(st);
            }
            res.spread.add(static_cast<int>(k), st.block_index, attention_spread(st));
            if (cfg.blending_enabled && !cfg.force_empty_mask && subject >= 0) {
                const bool in_window = cfg.blend_every_step || (k + 2 >= k_blend && k <= k_blend);
                // Saliency comes from extended blocks; when no block is
                // extended at this step, every block contributes instead.
                if (in_window && (extend || !(ext_multi || ext_single)))
                    step_grids.grids.emplace_back(st.block_index,
                                                  subject_attention_grid(st, subject));
            }
        };

        const Latent v_t = backend.oracle()
                               ? velocity(xt, req.target_prompt, k, {})
                               : velocity(xt, req.target_prompt, k, target_hook);

        if (!step_grids.grids.empty()) {
            grid_window.push_back(std::move(step_grids));
            while (grid_window.size() > 3) grid_window.pop_front();
        }

        bool blended = false;
        if (cfg.blending_enabled && (k == k_blend || cfg.blend_every_step)) {
            GridMask m(grid_h, grid_w);
            if (cfg.force_empty_mask) {
                have_mask = true;
                last_mask = SubjectMask{};
                last_mask.rough = m;
                last_mask.refined = m;
            } else if (subject < 0) {
                if (!warned_no_subject) {
                    res.warnings.push_back(
                        "blending skipped: target prompt has no subject token");
                    warned_no_subject = true;
                }
            } else if (grid_window.empty()) {
                res.warnings.push_back("blending skipped: no recorded attention states");
            } else {
                std::vector<std::vector<double>> grids;
                for (const auto& sg : grid_window)
                    for (const auto& [block, g] : sg.grids) grids.push_back(g);
                res.subject_map = aggregate_subject_attention(grids, grid_h, grid_w);
                const Latent x0_est = estimate_x0_step(xt, v_t, k, sched);
                last_mask = build_subject_mask(res.subject_map, x0_est, cfg.mask_policy);
                have_mask = true;
                res.mask_built = true;
                m = last_mask.refined;
            }
            if (have_mask || cfg.force_empty_mask) {
                xt = blend_latents(xt, source_states[k], m);
                blended = true;
            }
        }

        xt = euler_step(xt, v_t, k, sched);

        if (cfg.keep_trace) {
            TraceRow row;
            row.step = static_cast<int>(k);
            row.label = label;
            row.sigma = sched.sigma(k);
            row.extended_blocks = extended_blocks;
            row.blended = blended;
            row.target_norm = pipeline_detail::vec_norm(xt.data);
            row.velocity_norm = pipeline_detail::vec_norm(v_t.data);
            res.trace.push_back(row);
        }
    }

    // The repeated-blend ablation carries the blend through the terminal
    // state, so a forced-empty mask reproduces the source outright.
    if (cfg.blending_enabled && cfg.blend_every_step && have_mask)
        xt = blend_latents(xt, source_states[n],
                           cfg.force_empty_mask ? GridMask(grid_h, grid_w) : last_mask.refined);

    if (res.mask_built) res.mask = last_mask;
    res.output = xt;
    return res;
}

// Step-by-step editing: each follow-up prompt consumes the previous output
// as a real-mode source. The first result is the initial edit itself. A
// follow-up keeps the initial config apart from the mode switch; a t_struct
// still at the generated-mode default moves to the real-mode default.
inline std::vector<EditResult> chain_edits(const EditRequest& initial,
                                           const std::vector<TokenSequence>& followups,
                                           const PipelineBackend& backend) {
    std::vector<EditResult> results;
    results.push_back(run_edit(initial, backend));
    TokenSequence prev_prompt = initial.target_prompt;
    for (const TokenSequence& next : followups) {
        EditRequest req;
        req.config = initial.config;
        req.config.mode = EditMode::real;
        if (initial.config.mode == EditMode::generated && initial.config.t_struct == 933)
            req.config.t_struct = 867;
        req.source_clean = results.back().output;
        req.source_prompt = prev_prompt;
        req.target_prompt = next;
        results.push_back(run_edit(req, backend));
        prev_prompt = next;
    }
    return results;
}

}  // namespace addit
