#pragma once

#include <cstdint>
#include <string>

#include "clv/graph.hpp"
#include "clv/params.hpp"
#include "clv/rng.hpp"

namespace clv {

struct ModelConfig {
    int64_t image_size = 64;
    int64_t patch = 8;
    int64_t width = 64; // D
    int64_t heads = 4;
    int64_t enc_blocks = 2;
    int64_t dec_layers = 3;
    int64_t ffn_mult = 4;
    int64_t max_caption = 96;
    int64_t lora_rank = 4;
    double lora_alpha = 8.0;
    int64_t mask_dim = 16;      // pixel feature channels
    int64_t mask_attn_dim = 32; // mask head attention width
    int64_t mask_heads = 4;
    int64_t vocab_size = 0;
    int64_t max_regions = 24; // capacity of the prompt positional table
    double tau_adj = -1.0;    // <= 0 selects the scale-aware default 1.5/N
    bool csc_include_positive = false;

    int64_t patches_per_side() const { return image_size / patch; }
    int64_t num_patches() const { return patches_per_side() * patches_per_side(); }
    int64_t num_pixels() const { return image_size * image_size; }
    void validate() const;
};

// ---- parameter registration helpers ----
void add_linear(ParamStore& ps, Rng& rng, const std::string& prefix, int64_t in, int64_t out, bool bias = true);
void add_mlp2(ParamStore& ps, Rng& rng, const std::string& prefix, int64_t in, int64_t hidden, int64_t out);
void add_layernorm(ParamStore& ps, const std::string& prefix, int64_t dim);

// ---- forward helpers ----
Var linear(Graph& g, const ParamStore& ps, const std::string& prefix, Var x, bool bias = true);
Var mlp2(Graph& g, const ParamStore& ps, const std::string& prefix, Var x); // linear, gelu, linear
Var layernorm(Graph& g, const ParamStore& ps, const std::string& prefix, Var x);

// Scaled-dot multi-head attention over rank-2 operands. q is [Sq, Dq],
// k and v are [Sk, Dq]; heads must divide the width. additive_mask, when
// present, is a [Sq, Sk] constant added to the scores before softmax.
Var multihead_attention(Graph& g, Var q, Var k, Var v, int64_t heads, const Tensor* additive_mask);

// [S, S] mask where the first prefix_len rows see the whole prefix and
// caption rows see the prefix plus themselves and earlier caption rows.
Tensor prefix_lm_mask(int64_t prefix_len, int64_t total_len);

} // namespace clv
