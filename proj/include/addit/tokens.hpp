#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "addit/config.hpp"
#include "addit/core.hpp"
#include "addit/rng.hpp"

namespace addit {

// A prompt as the model sees it: hashed token ids, seeded unit-norm
// embeddings, and (optionally) which token names the object being added.
struct TokenSequence {
    std::vector<std::string> words;
    std::vector<std::uint64_t> tokens;
    Mat embeddings;               // len x dim
    int subject_index = -1;       // -1 when absent
    std::vector<int> positions;   // sequence indices

    int size() const { return static_cast<int>(tokens.size()); }
    bool has_subject() const { return subject_index >= 0; }

    void validate() const {
        require(!tokens.empty(), "TokenSequence: empty");
        require(embeddings.rows == tokens.size(), "TokenSequence: embedding row count");
        require(positions.size() == tokens.size(), "TokenSequence: positions size");
        require(subject_index < size(), "TokenSequence: subject_index out of bounds");
    }
};

// Embedding of a single token id: seeded Gaussian mapped to unit norm.
// Depends only on (id, weight_seed).
inline std::vector<double> token_embedding(std::uint64_t id, std::uint64_t weight_seed, int dim) {
    const std::uint64_t sub = rng::key(weight_seed ^ rng::fnv1a("token_embed"), id);
    std::vector<double> e = rng::normals(sub, static_cast<std::size_t>(dim));
    double n2 = 0.0;
    for (double x : e) n2 += x * x;
    const double inv = 1.0 / std::sqrt(n2);
    for (double& x : e) x *= inv;
    return e;
}

// Stand-in for the text encoder: words hash to ids, ids to embeddings.
// subject_word, when given, must appear in the prompt; the first occurrence
// is recorded as subject_index.
inline TokenSequence embed_prompt(const std::vector<std::string>& words, const ModelConfig& config,
                                  const std::string& subject_word = {}) {
    config.validate();
    require(!words.empty(), "embed_prompt: empty prompt");
    require(static_cast<int>(words.size()) <= config.max_prompt_len,
            "embed_prompt: prompt exceeds max_prompt_len");
    TokenSequence seq;
    seq.words = words;
    seq.embeddings = Mat(words.size(), static_cast<std::size_t>(config.dim));
    for (std::size_t i = 0; i < words.size(); ++i) {
        require(!words[i].empty(), "embed_prompt: empty word");
        const std::uint64_t id = rng::fnv1a(words[i]);
        seq.tokens.push_back(id);
        seq.positions.push_back(static_cast<int>(i));
        const std::vector<double> e = token_embedding(id, config.weight_seed, config.dim);
        double* row = seq.embeddings.row(i);
        for (int ch = 0; ch < config.dim; ++ch) row[ch] = e[ch];
        if (seq.subject_index < 0 && !subject_word.empty() && words[i] == subject_word)
            seq.subject_index = static_cast<int>(i);
    }
    require(subject_word.empty() || seq.subject_index >= 0,
            "embed_prompt: subject word not present in prompt");
    seq.validate();
    return seq;
}

// Whitespace split; used by the CLI and benchmark loader.
inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace addit
