#pragma once

#include <cstdint>
#include <vector>

#include "clv/nn.hpp"
#include "clv/scene.hpp"

namespace clv {

// Parameter names used by the encoder stack; registered by register_encoder_params.
void register_encoder_params(ParamStore& ps, Rng& rng, const ModelConfig& cfg);

struct VisualFeatures {
    Var f_x;        // [T_v, D], after the shared vision-to-language projection
    Var tokens_pre; // [T_v, D], before the projection; region pooling reads these
    int64_t t_v = 0;
};

// Flattens 8-bit RGB pixels into patch rows scaled to [0,1].
Tensor patchify(const std::vector<uint8_t>& rgb, int64_t image_size, int64_t patch);

VisualFeatures encode_image(Graph& g, const ParamStore& ps, const ModelConfig& cfg,
                            const std::vector<uint8_t>& rgb, int64_t image_size);

// Shared two-layer vision-to-language projection; both the global and the
// region path go through this one parameter set.
Var shared_projection(Graph& g, const ParamStore& ps, Var x);

// Mean-pools pre-projection patch tokens over each box, appends the
// normalized box coordinates, applies the region MLP and the shared
// projection. K = boxes.size(); K = 0 yields an empty [0, D] tensor.
Var extract_region_feats(Graph& g, const ParamStore& ps, const ModelConfig& cfg,
                         Var tokens_pre, const std::vector<Box>& boxes, int64_t image_size);

struct TextEmbedding {
    std::vector<int64_t> ids;
    Var token_rows; // [L, D] pre-positional embedding-table rows
    Var f_t;        // [L, D] with positional term added
};

TextEmbedding embed_text(Graph& g, const ParamStore& ps, const ModelConfig& cfg,
                         const std::vector<int64_t>& ids);

struct PromptEmbedding {
    Var f_p;      // [N_p, D]
    int64_t box_position = -1;
    int64_t n_p = 0;
};

// Replaces the single <BOX> row of the text embedding with the K region
// rows; positional embeddings of the tail are recomputed for the shifted
// indices. Exactly one <BOX> token must be present.
PromptEmbedding fuse_prompt(Graph& g, const ParamStore& ps, const ModelConfig& cfg,
                            const TextEmbedding& f_t, Var f_r, int64_t box_token_id);

// The fixed instruction tokens fed to the caption decoder: "describe <BOX> ."
std::vector<int64_t> make_query_ids(const Vocabulary& vocab);

} // namespace clv
