#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "addit/config.hpp"
#include "addit/core.hpp"
#include "addit/evalkit.hpp"
#include "addit/latent.hpp"
#include "addit/masking.hpp"
#include "addit/model.hpp"
#include "addit/pipeline.hpp"
#include "addit/schedule.hpp"

namespace addit {
namespace io {

using nlohmann::json;

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw schema_error("cannot open file: " + path);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f),
                                     std::istreambuf_iterator<char>());
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw schema_error("cannot write file: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw schema_error("write failed: " + path);
}

inline std::string read_text(const std::string& path) {
    const auto b = read_bytes(path);
    return std::string(b.begin(), b.end());
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw schema_error("cannot write file: " + path);
    f << text;
    if (!f) throw schema_error("write failed: " + path);
}

// 64-bit FNV-1a over a byte stream, as a fixed-width hex string.
inline std::string bytes_hash_hex(const std::uint8_t* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

inline std::string file_hash_hex(const std::string& path) {
    const auto b = read_bytes(path);
    return bytes_hash_hex(b.data(), b.size());
}

inline json parse_json(const std::string& text, const std::string& what) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw schema_error("malformed JSON in " + what);
    return j;
}

inline json load_json(const std::string& path) { return parse_json(read_text(path), path); }

// ---- latent files: JSON header + raw little-endian doubles sidecar ----

inline void save_latent(const Latent& lat, const std::string& json_path) {
    std::filesystem::path jp(json_path);
    std::filesystem::path bp = jp;
    bp.replace_extension(".bin");
    json j;
    j["height"] = lat.height;
    j["width"] = lat.width;
    j["dim"] = lat.dim;
    j["time_label"] = lat.time_label;
    j["data"] = bp.filename().string();
    std::vector<std::uint8_t> bytes(lat.data.size() * sizeof(double));
    std::memcpy(bytes.data(), lat.data.data(), bytes.size());
    write_bytes(bp.string(), bytes);
    write_text(json_path, j.dump(2) + "\n");
}

inline Latent load_latent(const std::string& json_path) {
    const json j = load_json(json_path);
    for (const char* key : {"height", "width", "dim", "time_label", "data"})
        if (!j.contains(key))
            throw schema_error("latent file " + json_path + ": missing field '" + key + "'");
    Latent lat(j["height"].get<int>(), j["width"].get<int>(), j["dim"].get<int>(),
               j["time_label"].get<int>());
    require(lat.height > 0 && lat.width > 0 && lat.dim > 0, "load_latent: bad dims");
    const std::filesystem::path bp =
        std::filesystem::path(json_path).parent_path() / j["data"].get<std::string>();
    const auto bytes = read_bytes(bp.string());
    if (bytes.size() != lat.data.size() * sizeof(double))
        throw schema_error("latent data size mismatch in " + bp.string());
    std::memcpy(lat.data.data(), bytes.data(), bytes.size());
    return lat;
}

// ---- grayscale renders ----

// Min-max normalized 8-bit view of a scalar grid. Diagnostic only.
inline std::vector<std::uint8_t> to_gray8(const std::vector<double>& values) {
    require(!values.empty(), "to_gray8: empty grid");
    double mn = values[0], mx = values[0];
    for (double v : values) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    std::vector<std::uint8_t> out(values.size());
    const double span = mx > mn ? mx - mn : 1.0;
    for (std::size_t i = 0; i < values.size(); ++i)
        out[i] = static_cast<std::uint8_t>(std::llround(255.0 * (values[i] - mn) / span));
    return out;
}

inline std::vector<double> latent_render(const Latent& lat) {
    std::vector<double> v(static_cast<std::size_t>(lat.tokens()));
    for (int r = 0; r < lat.height; ++r)
        for (int c = 0; c < lat.width; ++c) {
            const double* tok = lat.token(r, c);
            double s = 0.0;
            for (int ch = 0; ch < lat.dim; ++ch) s += tok[ch] * tok[ch];
            v[static_cast<std::size_t>(r) * lat.width + c] = std::sqrt(s);
        }
    return v;
}

inline void write_pgm(const std::string& path, const std::vector<std::uint8_t>& gray, int height,
                      int width) {
    require(gray.size() == static_cast<std::size_t>(height) * width, "write_pgm: size mismatch");
    std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.insert(bytes.end(), gray.begin(), gray.end());
    write_bytes(path, bytes);
}

// ---- PNG (8-bit grayscale, stored-deflate, no external compressor) ----

namespace png_detail {

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t n, std::uint32_t crc = 0) {
    static std::uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        init = true;
    }
    crc ^= 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

inline std::uint32_t adler32(const std::uint8_t* data, std::size_t n) {
    std::uint32_t a = 1, b = 0;
    for (std::size_t i = 0; i < n; ++i) {
        a = (a + data[i]) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

inline void put_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(static_cast<std::uint8_t>(x >> 24));
    v.push_back(static_cast<std::uint8_t>(x >> 16));
    v.push_back(static_cast<std::uint8_t>(x >> 8));
    v.push_back(static_cast<std::uint8_t>(x));
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    std::vector<std::uint8_t> td(type, type + 4);
    td.insert(td.end(), data.begin(), data.end());
    out.insert(out.end(), td.begin(), td.end());
    put_be32(out, crc32(td.data(), td.size()));
}

}  // namespace png_detail

inline std::vector<std::uint8_t> encode_png_gray8(const std::vector<std::uint8_t>& gray,
                                                  int height, int width) {
    require(gray.size() == static_cast<std::size_t>(height) * width,
            "encode_png_gray8: size mismatch");
    using namespace png_detail;

    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(height) * (width + 1));
    for (int r = 0; r < height; ++r) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), gray.begin() + static_cast<std::size_t>(r) * width,
                   gray.begin() + static_cast<std::size_t>(r + 1) * width);
    }

    std::vector<std::uint8_t> z;
    z.push_back(0x78);
    z.push_back(0x01);
    std::size_t pos = 0;
    while (pos < raw.size()) {
        const std::size_t chunk = std::min<std::size_t>(65535, raw.size() - pos);
        const bool last = pos + chunk == raw.size();
        z.push_back(last ? 1 : 0);
        z.push_back(static_cast<std::uint8_t>(chunk & 0xFF));
        z.push_back(static_cast<std::uint8_t>(chunk >> 8));
        z.push_back(static_cast<std::uint8_t>(~chunk & 0xFF));
        z.push_back(static_cast<std::uint8_t>((~chunk >> 8) & 0xFF));
        z.insert(z.end(), raw.begin() + pos, raw.begin() + pos + chunk);
        pos += chunk;
    }
    put_be32(z, adler32(raw.data(), raw.size()));

    std::vector<std::uint8_t> out = {137, 80, 78, 71, 13, 10, 26, 10};
    std::vector<std::uint8_t> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(width));
    put_be32(ihdr, static_cast<std::uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // grayscale
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", z);
    put_chunk(out, "IEND", {});
    return out;
}

inline void write_png_gray8(const std::string& path, const std::vector<std::uint8_t>& gray,
                            int height, int width) {
    write_bytes(path, encode_png_gray8(gray, height, width));
}

// ---- masks, maps, points ----

inline json mask_to_json(const GridMask& m) {
    json rows = json::array();
    for (int r = 0; r < m.height; ++r) {
        json row = json::array();
        for (int c = 0; c < m.width; ++c) row.push_back(m.at(r, c));
        rows.push_back(row);
    }
    return json{{"height", m.height}, {"width", m.width}, {"cells", rows}};
}

inline json points_to_json(const std::vector<GridPoint>& pts) {
    json arr = json::array();
    for (const auto& p : pts) arr.push_back(json{{"row", p.row}, {"col", p.col}});
    return arr;
}

inline std::vector<std::uint8_t> mask_to_gray8(const GridMask& m) {
    std::vector<std::uint8_t> g(m.cells.size());
    for (std::size_t i = 0; i < m.cells.size(); ++i) g[i] = m.cells[i] ? 255 : 0;
    return g;
}

// ---- schedule ----

inline json schedule_to_json(const Schedule& s) {
    return json{{"num_steps", s.num_steps}, {"sigmas", s.sigmas}, {"timesteps", s.timesteps}};
}

// ---- configs ----

inline json model_config_to_json(const ModelConfig& c) {
    return json{{"dim", c.dim},
                {"head_dim", c.head_dim},
                {"num_heads", c.num_heads},
                {"num_multi_stream_blocks", c.num_multi_stream_blocks},
                {"num_single_stream_blocks", c.num_single_stream_blocks},
                {"grid_h", c.grid_h},
                {"grid_w", c.grid_w},
                {"max_prompt_len", c.max_prompt_len},
                {"weight_seed", c.weight_seed}};
}

inline ModelConfig model_config_from_json(const json& j, ModelConfig base = {}) {
    base.dim = j.value("dim", base.dim);
    base.head_dim = j.value("head_dim", base.head_dim);
    base.num_heads = j.value("num_heads", base.num_heads);
    base.num_multi_stream_blocks = j.value("num_multi_stream_blocks", base.num_multi_stream_blocks);
    base.num_single_stream_blocks =
        j.value("num_single_stream_blocks", base.num_single_stream_blocks);
    base.grid_h = j.value("grid_h", base.grid_h);
    base.grid_w = j.value("grid_w", base.grid_w);
    base.max_prompt_len = j.value("max_prompt_len", base.max_prompt_len);
    base.weight_seed = j.value("weight_seed", base.weight_seed);
    return base;
}

inline json pipeline_config_to_json(const PipelineConfig& c) {
    json j{{"mode", c.mode == EditMode::generated ? "generated" : "real"},
           {"num_steps", c.num_steps},
           {"t_struct", c.t_struct},
           {"t_blend", c.t_blend},
           {"ext_multi_until", c.extension.multi_stream_until},
           {"ext_single_until", c.extension.single_stream_until},
           {"source_seed", c.source_seed},
           {"target_seed", c.target_seed},
           {"extension_enabled", c.extension_enabled},
           {"structure_transfer_enabled", c.structure_transfer_enabled},
           {"blending_enabled", c.blending_enabled},
           {"blend_every_step", c.blend_every_step},
           {"force_empty_mask", c.force_empty_mask}};
    if (c.weights.mode == GammaMode::auto_balance)
        j["gamma"] = "auto";
    else
        j["gamma"] = c.weights.gamma_target;
    j["gamma_source"] = c.weights.gamma_source;
    j["mask"] = json{{"otsu_bins", c.mask_policy.otsu_bins},
                     {"max_points", c.mask_policy.max_points},
                     {"stop_ratio", c.mask_policy.stop_ratio},
                     {"exclusion_radius", c.mask_policy.exclusion_radius},
                     {"grow_tolerance_factor", c.mask_policy.grow_tolerance_factor}};
    return j;
}

inline PipelineConfig pipeline_config_from_json(const json& j, PipelineConfig base = {}) {
    if (j.contains("mode")) {
        const std::string m = j["mode"].get<std::string>();
        if (m == "generated")
            base.mode = EditMode::generated;
        else if (m == "real")
            base.mode = EditMode::real;
        else
            throw schema_error("config: unknown mode '" + m + "'");
    }
    base.num_steps = j.value("num_steps", base.num_steps);
    base.t_struct = j.value("t_struct", base.t_struct);
    base.t_blend = j.value("t_blend", base.t_blend);
    base.extension.multi_stream_until =
        j.value("ext_multi_until", base.extension.multi_stream_until);
    base.extension.single_stream_until =
        j.value("ext_single_until", base.extension.single_stream_until);
    base.source_seed = j.value("source_seed", base.source_seed);
    base.target_seed = j.value("target_seed", base.target_seed);
    base.extension_enabled = j.value("extension_enabled", base.extension_enabled);
    base.structure_transfer_enabled =
        j.value("structure_transfer_enabled", base.structure_transfer_enabled);
    base.blending_enabled = j.value("blending_enabled", base.blending_enabled);
    base.blend_every_step = j.value("blend_every_step", base.blend_every_step);
    base.force_empty_mask = j.value("force_empty_mask", base.force_empty_mask);
    if (j.contains("gamma")) {
        if (j["gamma"].is_string()) {
            if (j["gamma"].get<std::string>() != "auto")
                throw schema_error("config: gamma must be a number or \"auto\"");
            base.weights = AttentionWeights::auto_mode();
        } else {
            base.weights = AttentionWeights::balanced(j["gamma"].get<double>());
        }
    }
    if (j.contains("gamma_source") && base.weights.mode == GammaMode::fixed)
        base.weights.gamma_source = j["gamma_source"].get<double>();
    if (j.contains("mask")) {
        const json& m = j["mask"];
        base.mask_policy.otsu_bins = m.value("otsu_bins", base.mask_policy.otsu_bins);
        base.mask_policy.max_points = m.value("max_points", base.mask_policy.max_points);
        base.mask_policy.stop_ratio = m.value("stop_ratio", base.mask_policy.stop_ratio);
        base.mask_policy.exclusion_radius =
            m.value("exclusion_radius", base.mask_policy.exclusion_radius);
        base.mask_policy.grow_tolerance_factor =
            m.value("grow_tolerance_factor", base.mask_policy.grow_tolerance_factor);
    }
    return base;
}

// ---- benchmark records ----

inline std::vector<BenchmarkRecord> benchmark_from_json(const json& j) {
    if (!j.is_array()) throw schema_error("benchmark: top level must be a JSON array");
    std::vector<BenchmarkRecord> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const json& r = j[i];
        const std::string where = "benchmark record " + std::to_string(i);
        if (!r.is_object()) throw schema_error(where + ": not an object");
        for (const char* key : {"src_prompt", "tgt_prompt", "subject_token", "instruction"})
            if (!r.contains(key) || !r[key].is_string())
                throw schema_error(where + ": missing string field '" + key + "'");
        if (!r.contains("gt_boxes") || !r["gt_boxes"].is_array() || r["gt_boxes"].empty())
            throw schema_error(where + ": missing non-empty 'gt_boxes' array");
        BenchmarkRecord rec;
        rec.src_prompt = r["src_prompt"].get<std::string>();
        rec.tgt_prompt = r["tgt_prompt"].get<std::string>();
        rec.subject_token = r["subject_token"].get<std::string>();
        rec.instruction = r["instruction"].get<std::string>();
        rec.source_ref = r.value("source", "");
        bool subject_found = false;
        for (const std::string& w : split_words(rec.tgt_prompt))
            if (w == rec.subject_token) subject_found = true;
        if (!subject_found)
            throw schema_error(where + ": subject_token '" + rec.subject_token +
                               "' not present in tgt_prompt");
        for (std::size_t b = 0; b < r["gt_boxes"].size(); ++b) {
            const json& bj = r["gt_boxes"][b];
            for (const char* key : {"x", "y", "w", "h"})
                if (!bj.contains(key) || !bj[key].is_number())
                    throw schema_error(where + ": gt_boxes[" + std::to_string(b) +
                                       "] missing numeric field '" + key + "'");
            BBox box{bj["x"].get<double>(), bj["y"].get<double>(), bj["w"].get<double>(),
                     bj["h"].get<double>()};
            if (box.w <= 0.0 || box.h <= 0.0)
                throw schema_error(where + ": gt_boxes[" + std::to_string(b) +
                                   "] has non-positive extent");
            rec.gt_boxes.push_back(box);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

inline std::vector<BenchmarkRecord> load_benchmark(const std::string& path) {
    return benchmark_from_json(load_json(path));
}

// ---- model weight dump: flat binary + manifest ----

inline void dump_weights(const Model& model, const std::string& bin_path,
                         const std::string& manifest_path) {
    std::vector<std::uint8_t> bytes;
    json tensors = json::array();
    for (const auto& [name, mat] : model.named_tensors()) {
        json t{{"name", name},
               {"rows", mat->rows},
               {"cols", mat->cols},
               {"offset", bytes.size()}};
        tensors.push_back(t);
        const std::size_t n = mat->a.size() * sizeof(double);
        const std::size_t at = bytes.size();
        bytes.resize(at + n);
        std::memcpy(bytes.data() + at, mat->a.data(), n);
    }
    write_bytes(bin_path, bytes);
    json manifest{{"config", model_config_to_json(model.config)},
                  {"dtype", "float64"},
                  {"byte_order", "little"},
                  {"data", std::filesystem::path(bin_path).filename().string()},
                  {"tensors", tensors}};
    write_text(manifest_path, manifest.dump(2) + "\n");
}

// ---- eval summary ----

inline json summary_to_json(const EvalSummary& s) {
    return json{{"affordance", s.affordance}, {"inclusion", s.inclusion}, {"n", s.n}};
}

}  // namespace io
}  // namespace addit
