// Command-line frontend: sampling, editing, diagnostics, parameter sweeps,
// and benchmark evaluation on the toy transformer. Renders map channel norms
// to 8-bit grayscale; they are diagnostic, not photographic.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "addit/evalkit.hpp"
#include "addit/io.hpp"
#include "addit/tokens.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace addit;

namespace {

struct usage_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Collects artifacts under one output directory and hashes each file as it
// lands, so the manifest can list every output it produced.
struct ArtifactDir {
    fs::path dir;
    json outputs = json::array();

    explicit ArtifactDir(const std::string& out) : dir(out) { fs::create_directories(dir); }

    std::string path(const std::string& name) const { return (dir / name).string(); }

    void note(const std::string& name) {
        outputs.push_back(json{{"file", name}, {"hash", io::file_hash_hex(path(name))}});
    }

    void text(const std::string& name, const std::string& body) {
        io::write_text(path(name), body);
        note(name);
    }

    void latent(const std::string& stem, const Latent& lat) {
        io::save_latent(lat, path(stem + ".json"));
        note(stem + ".json");
        note(stem + ".bin");
    }

    void render(const std::string& stem, const std::vector<std::uint8_t>& gray, int h, int w) {
        io::write_pgm(path(stem + ".pgm"), gray, h, w);
        note(stem + ".pgm");
        io::write_png_gray8(path(stem + ".png"), gray, h, w);
        note(stem + ".png");
    }

    void manifest(json m) {
        m["outputs"] = outputs;
        io::write_text(path("manifest.json"), m.dump(2) + "\n");
    }
};

// Flag values shared by the run-producing subcommands. Sentinels (-1, empty
// string) mean "not supplied"; seed presence is tracked via option counts.
struct RunFlags {
    std::string config_path;
    std::string out_dir = "out";
    std::string mode;
    std::string gamma;
    int t_struct = -1;
    int t_blend = -1;
    int steps = -1;
    int ext_multi = -1;
    int ext_single = -1;
    std::uint64_t seed = 0;
    std::uint64_t source_seed = 0;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* source_seed_opt = nullptr;
};

void add_run_flags(CLI::App* sub, RunFlags& f) {
    sub->add_option("--config", f.config_path, "JSON config file (pipeline fields at top level, "
                                               "model overrides under \"model\")");
    sub->add_option("--out", f.out_dir, "output directory")->capture_default_str();
    sub->add_option("--mode", f.mode, "generated | real")
        ->check(CLI::IsMember({"generated", "real"}));
    sub->add_option("--t-struct", f.t_struct, "structure-transfer start label")
        ->check(CLI::Range(0, 1000));
    sub->add_option("--t-blend", f.t_blend, "blending step label")->check(CLI::Range(0, 1000));
    sub->add_option("--gamma", f.gamma, "key weight for prompt/target partitions, or \"auto\"");
    sub->add_option("--ext-multi-until", f.ext_multi, "extend multi-stream blocks while t >= this")
        ->check(CLI::Range(0, 1001));
    sub->add_option("--ext-single-until", f.ext_single,
                    "extend single-stream blocks while t >= this")
        ->check(CLI::Range(0, 1001));
    sub->add_option("--steps", f.steps, "denoising step count")->check(CLI::Range(1, 100000));
    f.seed_opt = sub->add_option("--seed", f.seed, "target-stream seed (ADDIT_SEED fallback)");
    f.source_seed_opt =
        sub->add_option("--source-seed", f.source_seed, "source-stream seed (ADDIT_SEED+1)");
}

json load_config_root(const std::string& path) {
    if (path.empty()) return json::object();
    const json root = io::load_json(path);
    if (!root.is_object()) throw schema_error("config: top level must be a JSON object");
    return root;
}

std::optional<std::uint64_t> env_seed() {
    const char* s = std::getenv("ADDIT_SEED");
    if (s == nullptr || *s == '\0') return std::nullopt;
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(s, &used);
        if (used != std::string(s).size()) throw std::invalid_argument(s);
        return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
        throw usage_error(std::string("ADDIT_SEED is not an unsigned integer: ") + s);
    }
}

// defaults (by mode) -> ADDIT_SEED -> config file -> explicit flags.
PipelineConfig resolve_pipeline_config(const RunFlags& f, const json& root) {
    std::string mode = "generated";
    if (root.contains("mode")) mode = root["mode"].get<std::string>();
    if (!f.mode.empty()) mode = f.mode;
    PipelineConfig cfg = mode == "real" ? PipelineConfig::real_defaults()
                                        : PipelineConfig::generated_defaults();

    if (const auto es = env_seed()) {
        cfg.target_seed = *es;
        cfg.source_seed = *es + 1;
    }

    cfg = io::pipeline_config_from_json(root, cfg);
    if (!f.mode.empty()) cfg.mode = f.mode == "real" ? EditMode::real : EditMode::generated;
    if (f.t_struct >= 0) cfg.t_struct = f.t_struct;
    if (f.t_blend >= 0) cfg.t_blend = f.t_blend;
    if (f.steps >= 0) cfg.num_steps = f.steps;
    if (f.ext_multi >= 0) cfg.extension.multi_stream_until = f.ext_multi;
    if (f.ext_single >= 0) cfg.extension.single_stream_until = f.ext_single;
    if (!f.gamma.empty()) {
        if (f.gamma == "auto") {
            cfg.weights = AttentionWeights::auto_mode();
        } else {
            try {
                std::size_t used = 0;
                const double g = std::stod(f.gamma, &used);
                if (used != f.gamma.size()) throw std::invalid_argument(f.gamma);
                cfg.weights = AttentionWeights::balanced(g);
            } catch (const std::exception&) {
                throw usage_error("--gamma expects a number or \"auto\", got '" + f.gamma + "'");
            }
        }
    }
    if (f.seed_opt != nullptr && f.seed_opt->count() > 0) cfg.target_seed = f.seed;
    if (f.source_seed_opt != nullptr && f.source_seed_opt->count() > 0)
        cfg.source_seed = f.source_seed;
    cfg.validate();
    return cfg;
}

ModelConfig resolve_model_config(const json& root) {
    ModelConfig mc;
    if (root.contains("model")) mc = io::model_config_from_json(root["model"], mc);
    mc.validate();
    return mc;
}

json seeds_json(const PipelineConfig& cfg) {
    return json{{"source", cfg.source_seed}, {"target", cfg.target_seed}};
}

json config_snapshot(const PipelineConfig& cfg, const ModelConfig& mc) {
    json j = io::pipeline_config_to_json(cfg);
    j["model"] = io::model_config_to_json(mc);
    return j;
}

long long elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                 t0)
        .count();
}

TokenSequence embed_or_usage(const std::string& prompt, const ModelConfig& mc,
                             const std::string& subject) {
    const std::vector<std::string> words = split_words(prompt);
    if (words.empty()) throw usage_error("prompt is empty");
    if (static_cast<int>(words.size()) > mc.max_prompt_len)
        throw usage_error("prompt exceeds max_prompt_len (" + std::to_string(mc.max_prompt_len) +
                          " words)");
    if (!subject.empty()) {
        bool found = false;
        for (const auto& w : words) found = found || w == subject;
        if (!found)
            throw usage_error("subject token '" + subject + "' not present in target prompt");
    }
    return embed_prompt(words, mc, subject);
}

// ---- generate ----

struct GenerateArgs {
    RunFlags run;
    std::string prompt;
};

int cmd_generate(const GenerateArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const json root = load_config_root(a.run.config_path);
    const PipelineConfig cfg = resolve_pipeline_config(a.run, root);
    const ModelConfig mc = resolve_model_config(root);
    const Model model(mc);
    const TokenSequence prompt = embed_or_usage(a.prompt, mc, "");

    const Schedule sched = Schedule::linear(cfg.num_steps);
    Latent x = NoiseSample(cfg.target_seed, mc.grid_h, mc.grid_w, mc.dim).values;
    for (std::size_t k = 0; k < static_cast<std::size_t>(cfg.num_steps); ++k) {
        const Latent v = model.forward_velocity(x, prompt, sched.label(k));
        x = euler_step(x, v, k, sched);
    }

    ArtifactDir out(a.run.out_dir);
    out.latent("sample", x);
    out.render("sample", io::to_gray8(io::latent_render(x)), x.height, x.width);
    out.manifest(json{{"command", "generate"},
                      {"prompt", a.prompt},
                      {"config", config_snapshot(cfg, mc)},
                      {"seeds", seeds_json(cfg)},
                      {"inputs", json{{"config", a.run.config_path}}},
                      {"warnings", json::array()},
                      {"wall_clock_ms", elapsed_ms(t0)}});
    return 0;
}

// ---- edit / analyze ----

struct EditArgs {
    RunFlags run;
    std::string prompt;
    std::string source_prompt;
    std::string subject;
    std::string source_path;
};

Latent load_source_latent(const std::string& path, const ModelConfig& mc) {
    Latent x = io::load_latent(path);
    const auto shape = [](int h, int w, int d) {
        return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(d);
    };
    if (x.height != mc.grid_h || x.width != mc.grid_w || x.dim != mc.dim)
        throw schema_error("source latent " + path + ": shape " +
                           shape(x.height, x.width, x.dim) + " does not match the model's " +
                           shape(mc.grid_h, mc.grid_w, mc.dim));
    return x;
}

EditRequest build_edit_request(const EditArgs& a, const PipelineConfig& cfg,
                               const ModelConfig& mc) {
    EditRequest req;
    req.config = cfg;
    const std::string src_prompt = a.source_prompt.empty() ? a.prompt : a.source_prompt;
    req.source_prompt = embed_or_usage(src_prompt, mc, "");
    req.target_prompt = embed_or_usage(a.prompt, mc, a.subject);
    if (cfg.mode == EditMode::real) {
        if (a.source_path.empty()) throw usage_error("--mode real requires --source <latent.json>");
        req.source_clean = load_source_latent(a.source_path, mc);
    }
    return req;
}

json run_manifest_base(const char* command, const EditArgs& a, const PipelineConfig& cfg,
                       const ModelConfig& mc, const EditResult& res) {
    json m{{"command", command},
           {"target_prompt", a.prompt},
           {"source_prompt", a.source_prompt.empty() ? a.prompt : a.source_prompt},
           {"subject", a.subject},
           {"config", config_snapshot(cfg, mc)},
           {"seeds", seeds_json(cfg)},
           {"inputs", json{{"config", a.run.config_path}, {"source_latent", a.source_path}}},
           {"warnings", res.warnings}};
    m["solved_gamma"] = res.solved_gamma != 0.0 ? json(res.solved_gamma) : json(nullptr);
    return m;
}

int cmd_edit(const EditArgs& a, bool analyze_only) {
    const auto t0 = std::chrono::steady_clock::now();
    const json root = load_config_root(a.run.config_path);
    const PipelineConfig cfg = resolve_pipeline_config(a.run, root);
    const ModelConfig mc = resolve_model_config(root);
    const Model model(mc);
    const EditRequest req = build_edit_request(a, cfg, mc);

    const EditResult res = run_edit(req, {&model, nullptr});
    for (const std::string& w : res.warnings) std::cerr << "warning: " << w << "\n";

    ArtifactDir out(a.run.out_dir);
    if (!analyze_only) {
        out.latent("output", res.output);
        out.render("output", io::to_gray8(io::latent_render(res.output)), res.output.height,
                   res.output.width);
        out.latent("source_reconstructed", res.source_reconstructed);
        if (res.mask_built) {
            out.text("mask_rough.json", io::mask_to_json(res.mask.rough).dump(2) + "\n");
            out.render("mask_rough", io::mask_to_gray8(res.mask.rough), res.mask.rough.height,
                       res.mask.rough.width);
            out.text("mask.json", io::mask_to_json(res.mask.refined).dump(2) + "\n");
            out.render("mask", io::mask_to_gray8(res.mask.refined), res.mask.refined.height,
                       res.mask.refined.width);
            out.text("points.json", io::points_to_json(res.mask.points).dump(2) + "\n");
        }
    } else {
        out.text("schedule.json",
                 io::schedule_to_json(Schedule::linear(cfg.num_steps)).dump(2) + "\n");
    }
    out.text("spread.csv", res.spread.to_csv());
    out.text("trace.csv", trace_to_csv(res.trace));

    json m = run_manifest_base(analyze_only ? "analyze" : "edit", a, cfg, mc, res);
    m["mask_built"] = res.mask_built;
    m["wall_clock_ms"] = elapsed_ms(t0);
    out.manifest(m);
    return 0;
}

// ---- eval / sweep ----

struct EvalArgs {
    RunFlags run;
    std::string benchmark_path;
    std::string param = "gamma";
    std::string grid = "1.05";
};

std::vector<EvalCase> build_cases(const EvalArgs& a, const PipelineConfig& base,
                                  const ModelConfig& mc) {
    const std::vector<BenchmarkRecord> records = io::load_benchmark(a.benchmark_path);
    const fs::path bench_dir = fs::path(a.benchmark_path).parent_path();
    std::vector<EvalCase> cases;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const BenchmarkRecord& rec = records[i];
        EvalCase ec;
        ec.request.config = base;
        ec.request.config.source_seed = base.source_seed + i;
        ec.request.config.target_seed = base.target_seed + i;
        ec.request.source_prompt = embed_or_usage(rec.src_prompt, mc, "");
        ec.request.target_prompt = embed_or_usage(rec.tgt_prompt, mc, rec.subject_token);
        if (!rec.source_ref.empty()) {
            ec.request.config.mode = EditMode::real;
            if (ec.request.config.t_struct == 933)
                ec.request.config.t_struct = PipelineConfig::real_defaults().t_struct;
            ec.request.source_clean = load_source_latent((bench_dir / rec.source_ref).string(), mc);
        } else {
            ec.request.config.mode = EditMode::generated;
        }
        ec.gt_boxes = rec.gt_boxes;
        cases.push_back(std::move(ec));
    }
    return cases;
}

std::vector<double> parse_grid(const std::string& spec) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : spec) {
        if (c == ':') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(cur);
    try {
        if (parts.size() == 1) return {std::stod(parts[0])};
        if (parts.size() == 3) {
            const double lo = std::stod(parts[0]), hi = std::stod(parts[1]),
                         step = std::stod(parts[2]);
            if (step <= 0.0 || hi < lo) throw std::invalid_argument(spec);
            std::vector<double> grid;
            const int n = static_cast<int>(std::floor((hi - lo) / step + 1e-9)) + 1;
            for (int i = 0; i < n; ++i) grid.push_back(lo + i * step);
            return grid;
        }
    } catch (const std::invalid_argument&) {
    } catch (const std::out_of_range&) {
    }
    throw usage_error("--grid expects <value> or <lo>:<hi>:<step>, got '" + spec + "'");
}

int cmd_eval(const EvalArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const json root = load_config_root(a.run.config_path);
    const PipelineConfig cfg = resolve_pipeline_config(a.run, root);
    const ModelConfig mc = resolve_model_config(root);
    const Model model(mc);
    const std::vector<EvalCase> cases = build_cases(a, cfg, mc);

    const EvalSummary s = evaluate_cases(cases, {&model, nullptr}, make_toy_detector());
    ArtifactDir out(a.run.out_dir);
    out.text("eval.json", io::summary_to_json(s).dump(2) + "\n");
    out.manifest(json{{"command", "eval"},
                      {"config", config_snapshot(cfg, mc)},
                      {"seeds", seeds_json(cfg)},
                      {"inputs",
                       json{{"config", a.run.config_path}, {"benchmark", a.benchmark_path}}},
                      {"warnings", json::array()},
                      {"n_cases", s.n},
                      {"wall_clock_ms", elapsed_ms(t0)}});
    std::cout << io::summary_to_json(s).dump() << "\n";
    return 0;
}

int cmd_sweep(const EvalArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const json root = load_config_root(a.run.config_path);
    const PipelineConfig cfg = resolve_pipeline_config(a.run, root);
    const ModelConfig mc = resolve_model_config(root);
    const Model model(mc);
    const std::vector<EvalCase> cases = build_cases(a, cfg, mc);

    SweepParam param;
    if (a.param == "gamma")
        param = SweepParam::gamma;
    else if (a.param == "t_struct")
        param = SweepParam::t_struct;
    else if (a.param == "t_blend")
        param = SweepParam::t_blend;
    else
        throw usage_error("--param expects gamma | t_struct | t_blend, got '" + a.param + "'");

    const std::vector<double> grid = parse_grid(a.grid);
    const auto rows = sweep(param, grid, cases, {&model, nullptr}, make_toy_detector());
    ArtifactDir out(a.run.out_dir);
    out.text("sweep.csv", sweep_to_csv(param, rows));
    out.manifest(json{{"command", "sweep"},
                      {"param", a.param},
                      {"grid", grid},
                      {"config", config_snapshot(cfg, mc)},
                      {"seeds", seeds_json(cfg)},
                      {"inputs",
                       json{{"config", a.run.config_path}, {"benchmark", a.benchmark_path}}},
                      {"warnings", json::array()},
                      {"wall_clock_ms", elapsed_ms(t0)}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Training-free object insertion on a toy rectified-flow transformer.\n"
        "Image renders map per-cell channel norms to 8-bit grayscale; they are\n"
        "diagnostic plots, not photographic output."};
    app.require_subcommand(1);

    GenerateArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("generate", "sample a latent from a prompt and seed");
    gen_cmd->add_option("--prompt", gen.prompt, "prompt text")->required();
    add_run_flags(gen_cmd, gen.run);

    EditArgs edit;
    CLI::App* edit_cmd = app.add_subcommand("edit", "add a subject to a source scene");
    edit_cmd->add_option("--prompt", edit.prompt, "target prompt text")->required();
    edit_cmd->add_option("--source-prompt", edit.source_prompt,
                         "source prompt (defaults to the target prompt)");
    edit_cmd->add_option("--subject", edit.subject,
                         "added-object token (omit to skip blending with a warning)");
    edit_cmd->add_option("--source", edit.source_path, "clean source latent (real mode)");
    add_run_flags(edit_cmd, edit.run);

    EditArgs analyze;
    CLI::App* analyze_cmd =
        app.add_subcommand("analyze", "run an edit and emit CSV diagnostics only");
    analyze_cmd->add_option("--prompt", analyze.prompt, "target prompt text")->required();
    analyze_cmd->add_option("--source-prompt", analyze.source_prompt,
                            "source prompt (defaults to the target prompt)");
    analyze_cmd->add_option("--subject", analyze.subject, "added-object token");
    analyze_cmd->add_option("--source", analyze.source_path, "clean source latent (real mode)");
    add_run_flags(analyze_cmd, analyze.run);

    EvalArgs eval_args;
    CLI::App* eval_cmd = app.add_subcommand("eval", "score a benchmark with the blob detector");
    eval_cmd->add_option("--benchmark", eval_args.benchmark_path, "benchmark JSON file")
        ->required();
    add_run_flags(eval_cmd, eval_args.run);

    EvalArgs sweep_args;
    CLI::App* sweep_cmd =
        app.add_subcommand("sweep", "evaluate a benchmark across a parameter grid");
    sweep_cmd->add_option("--benchmark", sweep_args.benchmark_path, "benchmark JSON file")
        ->required();
    sweep_cmd->add_option("--param", sweep_args.param, "gamma | t_struct | t_blend")
        ->capture_default_str();
    sweep_cmd->add_option("--grid", sweep_args.grid, "<value> or <lo>:<hi>:<step>")
        ->capture_default_str();
    add_run_flags(sweep_cmd, sweep_args.run);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen_cmd->parsed()) return cmd_generate(gen);
        if (edit_cmd->parsed()) return cmd_edit(edit, false);
        if (analyze_cmd->parsed()) return cmd_edit(analyze, true);
        if (eval_cmd->parsed()) return cmd_eval(eval_args);
        if (sweep_cmd->parsed()) return cmd_sweep(sweep_args);
    } catch (const usage_error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const schema_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const error& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
