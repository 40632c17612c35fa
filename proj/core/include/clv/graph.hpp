#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "clv/params.hpp"
#include "clv/tensor.hpp"

namespace clv {

// Reverse-mode tape. Ops append nodes in topological order (inputs always
// precede their consumers); backward() walks the tape once in reverse.
// A graph is single-threaded; parameters read through param() are copied in,
// so concurrent graphs over the same ParamStore are safe as long as nobody
// mutates the store.
class Graph {
public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    Graph();

    // ---- leaves ----
    Var constant(Tensor t);
    Var scalar(double v) { return constant(Tensor::scalar(v)); }
    // One node per parameter per graph; repeated calls return the same node.
    Var param(const ParamStore& store, int param_idx);
    Var param(const ParamStore& store, const std::string& name);

    // ---- core ops ----
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b); // a * b^T without materializing the transpose
    Var transpose(Var a);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var affine(Var a, double k, double c); // k*a + c elementwise
    Var add_rowvec(Var a, Var row);        // broadcast a [M,N] + row [1,N]
    Var mul_scalar_var(Var a, Var s);      // a * s, s a 1-element tensor
    Var exp(Var a);
    Var log(Var a);
    Var clamp_min(Var a, double floor); // subgradient passes where a > floor
    Var div_colvec(Var a, Var col);     // [M,N] / [M,1] broadcast over columns
    Var sigmoid(Var a);
    Var gelu(Var a); // tanh approximation
    Var softmax_rows(Var a);
    // log(sum_j in mask exp(a_ij)) per row; mask entries are 0/1 constants.
    // Every row must keep at least one included entry.
    Var lse_rows_masked(Var a, const Tensor& include_mask);
    Var layernorm_rows(Var a, Var gain, Var bias);
    Var l2_normalize_rows(Var a);
    Var slice_rows(Var a, int64_t r0, int64_t r1);
    Var slice_cols(Var a, int64_t c0, int64_t c1);
    Var concat_rows(const std::vector<Var>& parts);
    Var concat_cols(const std::vector<Var>& parts);
    Var gather_rows(Var a, std::vector<int64_t> idx);
    // Rearranges [Hp*Wp, P*P*C] patch features into an [Hp*P*Wp*P, C] pixel
    // grid (row-major pixels). Pure permutation.
    Var patch_expand(Var a, int64_t hp, int64_t wp, int64_t p, int64_t c);
    Var row_sums(Var a);  // [M,N] -> [M,1]
    Var sum_all(Var a);   // -> [1]
    Var mean_all(Var a);  // -> [1]
    // Mean negative log-softmax probability of target over unmasked rows.
    Var cross_entropy_masked(Var logits, const std::vector<int64_t>& targets,
                             const std::vector<uint8_t>& mask);
    // Mean elementwise binary cross-entropy of sigmoid(logits) against
    // constant targets, computed in the numerically safe softplus form.
    Var bce_with_logits_mean(Var logits, const Tensor& targets);

    // ---- access ----
    const Tensor& value(Var v) const { return nodes_[check(v)].val; }
    const Tensor& grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }
    size_t node_count() const { return nodes_.size(); }

    // ---- backward ----
    void backward(Var loss);
    bool backward_ran() const { return backward_ran_; }
    GradMap collect_param_grads(const ParamStore& store) const;

    // Verify every forward value is finite (Tensor invariant); enabled in
    // tests, off in the training hot path where the loss check guards.
    void set_check_finite(bool on) { check_finite_ = on; }

private:
    struct Node {
        Tensor val;
        Tensor grad; // allocated at backward time for grad-requiring nodes
        bool requires_grad = false;
        int param_idx = -1;
        const void* param_store = nullptr;
        std::function<void(Graph&, int)> back; // (graph, own node id)
    };

    int check(Var v) const;
    Var push(Tensor val, bool requires_grad, std::function<void(Graph&, int)> back);
    void maybe_check_finite(const Tensor& t, const char* op) const;
    Tensor& grad_buf(int id) { return nodes_[static_cast<size_t>(id)].grad; }
    const Tensor& val_of(int id) const { return nodes_[static_cast<size_t>(id)].val; }

    std::vector<Node> nodes_;
    std::unordered_map<int64_t, int> param_nodes_;
    bool check_finite_ = false;
    bool backward_ran_ = false;
};

using Var = Graph::Var;

} // namespace clv
