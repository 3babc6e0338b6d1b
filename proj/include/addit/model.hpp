#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "addit/attention.hpp"
#include "addit/config.hpp"
#include "addit/core.hpp"
#include "addit/latent.hpp"
#include "addit/rope.hpp"
#include "addit/tokens.hpp"

namespace addit {

// One projection family: attention in/out plus a pointwise MLP.
struct StreamWeights {
    Mat wq, wk, wv, wo;  // dim x dim
    Mat mlp1, mlp2;      // dim x 2*dim, 2*dim x dim
};

// Multi-stream blocks keep distinct text and image families; single-stream
// blocks hold one family and serve it to both token kinds.
struct BlockWeights {
    bool multi_stream = true;
    StreamWeights text;
    StreamWeights image;

    const StreamWeights& text_w() const { return text; }
    const StreamWeights& image_w() const { return multi_stream ? image : text; }
};

// Receives every block's AttentionState right after Q/K/V construction.
// The hook may capture parts of the state, attach a source partition, or run
// the attention itself (filling st.h); if it leaves st.h empty the model
// runs the baseline path.
using AttentionHook = std::function<void(AttentionState&)>;

namespace model_detail {

inline Mat seeded_mat(std::uint64_t weight_seed, const std::string& name, std::size_t r,
                      std::size_t c, double scale) {
    Mat m(r, c);
    const std::uint64_t sub = rng::key(weight_seed, rng::fnv1a(name));
    m.a = rng::normals(sub, r * c);
    for (double& x : m.a) x *= scale;
    return m;
}

inline StreamWeights seeded_stream(std::uint64_t seed, const std::string& prefix, int dim) {
    const double ps = 1.0 / std::sqrt(static_cast<double>(dim));
    const double hs = 1.0 / std::sqrt(2.0 * dim);
    StreamWeights w;
    const std::size_t d = static_cast<std::size_t>(dim);
    w.wq = seeded_mat(seed, prefix + ".wq", d, d, ps);
    w.wk = seeded_mat(seed, prefix + ".wk", d, d, ps);
    w.wv = seeded_mat(seed, prefix + ".wv", d, d, ps);
    w.wo = seeded_mat(seed, prefix + ".wo", d, d, ps);
    w.mlp1 = seeded_mat(seed, prefix + ".mlp1", d, 2 * d, ps);
    w.mlp2 = seeded_mat(seed, prefix + ".mlp2", 2 * d, d, hs);
    return w;
}

inline void add_inplace(Mat& a, const Mat& b) {
    require(a.rows == b.rows && a.cols == b.cols, "add_inplace: shape mismatch");
    for (std::size_t i = 0; i < a.a.size(); ++i) a.a[i] += b.a[i];
}

inline Mat mlp(const StreamWeights& w, const Mat& x) {
    Mat h = matmul(x, w.mlp1);
    for (double& v : h.a) v = gelu(v);
    return matmul(h, w.mlp2);
}

inline Mat head_slice(const Mat& full, int head, int head_dim) {
    Mat m(full.rows, static_cast<std::size_t>(head_dim));
    for (std::size_t i = 0; i < full.rows; ++i) {
        const double* src = full.row(i) + static_cast<std::size_t>(head) * head_dim;
        double* dst = m.row(i);
        for (int j = 0; j < head_dim; ++j) dst[j] = src[j];
    }
    return m;
}

}  // namespace model_detail

// The toy multi-modal DiT. Weights are a pure function of config.weight_seed
// and are never trained; everything here exists to make the attention
// machinery and its surgery points real. Immutable after construction;
// forward passes are pure.
struct Model {
    ModelConfig config;
    std::vector<BlockWeights> blocks;
    Mat w_out;  // velocity head, dim x dim

    explicit Model(const ModelConfig& cfg) : config(cfg) {
        config.validate();
        for (int b = 0; b < config.num_blocks(); ++b) {
            BlockWeights bw;
            bw.multi_stream = b < config.num_multi_stream_blocks;
            const std::string prefix = "block" + std::to_string(b);
            if (bw.multi_stream) {
                bw.text = model_detail::seeded_stream(config.weight_seed, prefix + ".text", config.dim);
                bw.image =
                    model_detail::seeded_stream(config.weight_seed, prefix + ".image", config.dim);
            } else {
                bw.text =
                    model_detail::seeded_stream(config.weight_seed, prefix + ".shared", config.dim);
            }
            blocks.push_back(std::move(bw));
        }
        w_out = model_detail::seeded_mat(config.weight_seed, "out.w",
                                         static_cast<std::size_t>(config.dim),
                                         static_cast<std::size_t>(config.dim),
                                         1.0 / std::sqrt(static_cast<double>(config.dim)));
    }

    // Sinusoidal embedding of the integer time label.
    std::vector<double> time_embedding(int t_label) const {
        require(t_label >= 0 && t_label <= 1000, "time_embedding: label out of [0,1000]");
        std::vector<double> e(static_cast<std::size_t>(config.dim));
        const int half = config.dim / 2;
        for (int j = 0; j < half; ++j) {
            const double w = std::pow(10000.0, -static_cast<double>(j) / half);
            e[2 * j] = std::sin(t_label * w);
            e[2 * j + 1] = std::cos(t_label * w);
        }
        return e;
    }

    Latent forward_velocity(const Latent& x_t, const TokenSequence& prompt, int t_label,
                            const AttentionHook& hook = {}) const {
        require(x_t.height == config.grid_h && x_t.width == config.grid_w && x_t.dim == config.dim,
                "forward_velocity: latent grid mismatch");
        prompt.validate();
        require(prompt.size() <= config.max_prompt_len, "forward_velocity: prompt too long");
        require(all_finite(x_t.data), "forward_velocity: non-finite latent");

        const std::size_t n_p = static_cast<std::size_t>(prompt.size());
        const std::size_t n_img = static_cast<std::size_t>(config.image_tokens());
        const std::size_t dim = static_cast<std::size_t>(config.dim);

        Mat text_h = prompt.embeddings;
        Mat img_h(n_img, dim);
        const std::vector<double> te = time_embedding(t_label);
        for (std::size_t i = 0; i < n_img; ++i) {
            double* r = img_h.row(i);
            for (std::size_t j = 0; j < dim; ++j) r[j] = x_t.data[i * dim + j] + te[j];
        }

        const PositionalEncoding pe{RopeConfig{config.head_dim, config.grid_h, config.grid_w}};
        const Mat img_ph = pe.image_phases();
        const Mat text_ph = pe.text_phases(prompt.size());

        for (int b = 0; b < config.num_blocks(); ++b) {
            const BlockWeights& bw = blocks[static_cast<std::size_t>(b)];
            const StreamWeights& tw = bw.text_w();
            const StreamWeights& iw = bw.image_w();

            const Mat tn = layer_norm(text_h);
            const Mat in = layer_norm(img_h);
            const Mat tq = matmul(tn, tw.wq), tk = matmul(tn, tw.wk), tv = matmul(tn, tw.wv);
            const Mat iq = matmul(in, iw.wq), ik = matmul(in, iw.wk), iv = matmul(in, iw.wv);

            AttentionState st;
            st.head_dim = config.head_dim;
            st.num_heads = config.num_heads;
            st.block_index = b;
            st.multi_stream = bw.multi_stream;
            for (int hh = 0; hh < config.num_heads; ++hh) {
                Mat qp = model_detail::head_slice(tq, hh, config.head_dim);
                Mat kp = model_detail::head_slice(tk, hh, config.head_dim);
                apply_rope(qp, text_ph);
                apply_rope(kp, text_ph);
                st.Q_p.push_back(std::move(qp));
                st.K_p.push_back(std::move(kp));
                st.V_p.push_back(model_detail::head_slice(tv, hh, config.head_dim));

                Mat qt = model_detail::head_slice(iq, hh, config.head_dim);
                Mat kt = model_detail::head_slice(ik, hh, config.head_dim);
                apply_rope(qt, img_ph);
                apply_rope(kt, img_ph);
                st.Q_target.push_back(std::move(qt));
                st.K_target.push_back(std::move(kt));
                st.V_target.push_back(model_detail::head_slice(iv, hh, config.head_dim));
            }

            if (hook) hook(st);
            if (st.h.empty()) baseline_attention(st);

            Mat ho_text(n_p, dim), ho_img(n_img, dim);
            for (int hh = 0; hh < config.num_heads; ++hh) {
                const Mat& hout = st.h[static_cast<std::size_t>(hh)];
                require(hout.rows == n_p + n_img, "forward_velocity: hook returned wrong row count");
                require(hout.cols == static_cast<std::size_t>(config.head_dim),
                        "forward_velocity: hook returned wrong head width");
                for (std::size_t i = 0; i < n_p; ++i) {
                    const double* src = hout.row(i);
                    double* dst = ho_text.row(i) + static_cast<std::size_t>(hh) * config.head_dim;
                    for (int j = 0; j < config.head_dim; ++j) dst[j] = src[j];
                }
                for (std::size_t i = 0; i < n_img; ++i) {
                    const double* src = hout.row(n_p + i);
                    double* dst = ho_img.row(i) + static_cast<std::size_t>(hh) * config.head_dim;
                    for (int j = 0; j < config.head_dim; ++j) dst[j] = src[j];
                }
            }
            model_detail::add_inplace(text_h, matmul(ho_text, tw.wo));
            model_detail::add_inplace(img_h, matmul(ho_img, iw.wo));

            model_detail::add_inplace(text_h, model_detail::mlp(tw, layer_norm(text_h)));
            model_detail::add_inplace(img_h, model_detail::mlp(iw, layer_norm(img_h)));
        }

        const Mat v = matmul(layer_norm(img_h), w_out);
        Latent out(config.grid_h, config.grid_w, config.dim, t_label);
        out.data = v.a;
        require(all_finite(out.data), "forward_velocity: non-finite velocity");
        return out;
    }

    // Stable enumeration for the weight dump: (name, tensor) pairs.
    std::vector<std::pair<std::string, const Mat*>> named_tensors() const {
        std::vector<std::pair<std::string, const Mat*>> out;
        auto add_stream = [&out](const std::string& prefix, const StreamWeights& w) {
            out.emplace_back(prefix + ".wq", &w.wq);
            out.emplace_back(prefix + ".wk", &w.wk);
            out.emplace_back(prefix + ".wv", &w.wv);
            out.emplace_back(prefix + ".wo", &w.wo);
            out.emplace_back(prefix + ".mlp1", &w.mlp1);
            out.emplace_back(prefix + ".mlp2", &w.mlp2);
        };
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const std::string prefix = "block" + std::to_string(b);
            if (blocks[b].multi_stream) {
                add_stream(prefix + ".text", blocks[b].text);
                add_stream(prefix + ".image", blocks[b].image);
            } else {
                add_stream(prefix + ".shared", blocks[b].text);
            }
        }
        out.emplace_back("out.w", &w_out);
        return out;
    }
};

}  // namespace addit
