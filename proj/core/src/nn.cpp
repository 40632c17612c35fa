#include "clv/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace clv {

void ModelConfig::validate() const {
    if (width <= 0 || width % heads != 0)
        throw std::invalid_argument("model config: width must be a positive multiple of heads");
    if (image_size <= 0 || image_size % patch != 0)
        throw std::invalid_argument("model config: image_size must be divisible by patch size");
    if (mask_attn_dim % mask_heads != 0)
        throw std::invalid_argument("model config: mask_attn_dim must be a multiple of mask_heads");
    if (vocab_size <= 0) throw std::invalid_argument("model config: vocab_size must be set");
    if (lora_rank <= 0) throw std::invalid_argument("model config: lora_rank must be positive");
    if (max_caption <= 2) throw std::invalid_argument("model config: max_caption too small");
}

void add_linear(ParamStore& ps, Rng& rng, const std::string& prefix, int64_t in, int64_t out, bool bias) {
    ps.add_randn(prefix + ".w", {in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    if (bias) ps.add_zeros(prefix + ".b", {1, out});
}

void add_mlp2(ParamStore& ps, Rng& rng, const std::string& prefix, int64_t in, int64_t hidden, int64_t out) {
    add_linear(ps, rng, prefix + ".l1", in, hidden);
    add_linear(ps, rng, prefix + ".l2", hidden, out);
}

void add_layernorm(ParamStore& ps, const std::string& prefix, int64_t dim) {
    ps.add(prefix + ".g", Tensor::full({1, dim}, 1.0));
    ps.add_zeros(prefix + ".b", {1, dim});
}

Var linear(Graph& g, const ParamStore& ps, const std::string& prefix, Var x, bool bias) {
    Var y = g.matmul(x, g.param(ps, prefix + ".w"));
    if (bias) y = g.add_rowvec(y, g.param(ps, prefix + ".b"));
    return y;
}

Var mlp2(Graph& g, const ParamStore& ps, const std::string& prefix, Var x) {
    return linear(g, ps, prefix + ".l2", g.gelu(linear(g, ps, prefix + ".l1", x)));
}

Var layernorm(Graph& g, const ParamStore& ps, const std::string& prefix, Var x) {
    return g.layernorm_rows(x, g.param(ps, prefix + ".g"), g.param(ps, prefix + ".b"));
}

Var multihead_attention(Graph& g, Var q, Var k, Var v, int64_t heads, const Tensor* additive_mask) {
    const int64_t dq = g.value(q).cols();
    if (dq % heads != 0) throw std::invalid_argument("attention: width not divisible by head count");
    if (g.value(k).cols() != dq || g.value(v).cols() != dq)
        throw std::invalid_argument("attention: key/value width mismatch");
    if (g.value(k).rows() != g.value(v).rows())
        throw std::invalid_argument("attention: key/value row mismatch");
    if (g.value(k).rows() == 0) throw std::invalid_argument("attention: no keys");
    const int64_t dh = dq / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Var mask_var{};
    if (additive_mask) mask_var = g.constant(*additive_mask);

    std::vector<Var> ctx;
    ctx.reserve(static_cast<size_t>(heads));
    for (int64_t h = 0; h < heads; ++h) {
        Var qh = g.slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = g.slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = g.slice_cols(v, h * dh, (h + 1) * dh);
        Var scores = g.affine(g.matmul_nt(qh, kh), scale, 0.0);
        if (additive_mask) scores = g.add(scores, mask_var);
        Var attn = g.softmax_rows(scores);
        ctx.push_back(g.matmul(attn, vh));
    }
    return g.concat_cols(ctx);
}

Tensor prefix_lm_mask(int64_t prefix_len, int64_t total_len) {
    Tensor m = Tensor::zeros({total_len, total_len});
    constexpr double kBlock = -1e30;
    for (int64_t i = 0; i < total_len; ++i)
        for (int64_t j = 0; j < total_len; ++j) {
            const bool ok = i < prefix_len ? (j < prefix_len) : (j < prefix_len || j <= i);
            if (!ok) m.data[static_cast<size_t>(i * total_len + j)] = kBlock;
        }
    return m;
}

} // namespace clv
