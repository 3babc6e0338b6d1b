#pragma once

#include <cstdint>

#include "addit/core.hpp"

namespace addit {

// Architecture knobs of the toy multi-modal DiT. Weights derive entirely
// from weight_seed, so this struct fully identifies a model.
struct ModelConfig {
    int dim = 64;
    int head_dim = 16;
    int num_heads = 4;
    int num_multi_stream_blocks = 2;
    int num_single_stream_blocks = 2;
    int grid_h = 16;
    int grid_w = 16;
    int max_prompt_len = 16;
    std::uint64_t weight_seed = 1;

    void validate() const {
        require(dim > 0 && head_dim > 0 && num_heads > 0, "ModelConfig: nonpositive dimension");
        require(dim == num_heads * head_dim, "ModelConfig: dim must equal num_heads*head_dim");
        require(head_dim % 4 == 0, "ModelConfig: head_dim must be a multiple of 4");
        require(num_multi_stream_blocks >= 1, "ModelConfig: need at least one multi-stream block");
        require(num_single_stream_blocks >= 0, "ModelConfig: negative single-stream count");
        require(grid_h > 0 && grid_w > 0, "ModelConfig: grid dims must be positive");
        require(max_prompt_len > 0, "ModelConfig: max_prompt_len must be positive");
    }

    int num_blocks() const { return num_multi_stream_blocks + num_single_stream_blocks; }
    int image_tokens() const { return grid_h * grid_w; }
};

}  // namespace addit
