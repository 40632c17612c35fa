#include "clv/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace clv {
namespace {

// C[M,N] (+)= op(A) * op(B); transA/transB read the operands as transposed
// without materializing them.
void gemm(const double* A, const double* B, double* C, int64_t M, int64_t K, int64_t N,
          bool transA, bool transB, bool accumulate) {
    if (!accumulate) std::fill(C, C + M * N, 0.0);
    if (M == 0 || N == 0 || K == 0) return;
    if (!transA && !transB) {
        for (int64_t m = 0; m < M; ++m) {
            const double* a_row = A + m * K;
            double* c_row = C + m * N;
            for (int64_t k = 0; k < K; ++k) {
                const double a = a_row[k];
                if (a == 0.0) continue;
                const double* b_row = B + k * N;
                for (int64_t n = 0; n < N; ++n) c_row[n] += a * b_row[n];
            }
        }
    } else if (transA && !transB) {
        // A is [K,M]
        for (int64_t k = 0; k < K; ++k) {
            const double* a_row = A + k * M;
            const double* b_row = B + k * N;
            for (int64_t m = 0; m < M; ++m) {
                const double a = a_row[m];
                if (a == 0.0) continue;
                double* c_row = C + m * N;
                for (int64_t n = 0; n < N; ++n) c_row[n] += a * b_row[n];
            }
        }
    } else if (!transA && transB) {
        // B is [N,K]
        for (int64_t m = 0; m < M; ++m) {
            const double* a_row = A + m * K;
            double* c_row = C + m * N;
            for (int64_t n = 0; n < N; ++n) {
                const double* b_row = B + n * K;
                double acc = 0.0;
                for (int64_t k = 0; k < K; ++k) acc += a_row[k] * b_row[k];
                c_row[n] += acc;
            }
        }
    } else {
        // rare; fall back to explicit index arithmetic
        for (int64_t m = 0; m < M; ++m)
            for (int64_t n = 0; n < N; ++n) {
                double acc = 0.0;
                for (int64_t k = 0; k < K; ++k) acc += A[k * M + m] * B[n * K + k];
                C[m * N + n] += acc;
            }
    }
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() > 2) throw std::invalid_argument(std::string(op) + ": rank-" + std::to_string(t.rank()) + " tensor not supported");
}

double gelu_fwd(double x) {
    const double c = 0.7978845608028654; // sqrt(2/pi)
    const double u = c * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_bwd(double x) {
    const double c = 0.7978845608028654;
    const double u = c * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

} // namespace

Graph::Graph() { nodes_.reserve(256); }

int Graph::check(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
        throw std::logic_error("graph: variable does not belong to this tape");
    return v.id;
}

void Graph::maybe_check_finite(const Tensor& t, const char* op) const {
    if (check_finite_ && !t.all_finite())
        throw std::runtime_error(std::string(op) + ": non-finite value in forward output");
}

Var Graph::push(Tensor val, bool requires_grad, std::function<void(Graph&, int)> back) {
    Node n;
    n.val = std::move(val);
    n.requires_grad = requires_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::constant(Tensor t) {
    maybe_check_finite(t, "constant");
    return push(std::move(t), false, nullptr);
}

Var Graph::param(const ParamStore& store, int param_idx) {
    const int64_t key = (reinterpret_cast<int64_t>(&store) << 16) ^ param_idx;
    auto it = param_nodes_.find(key);
    if (it != param_nodes_.end()) return Var{it->second};
    const auto& e = store.entry(param_idx);
    Var v = push(e.value, e.trainable, nullptr);
    nodes_[static_cast<size_t>(v.id)].param_idx = param_idx;
    nodes_[static_cast<size_t>(v.id)].param_store = &store;
    param_nodes_[key] = v.id;
    return v;
}

Var Graph::param(const ParamStore& store, const std::string& name) {
    return param(store, store.index_of(name));
}

const Tensor& Graph::grad(Var v) const {
    const Node& n = nodes_[static_cast<size_t>(check(v))];
    if (!backward_ran_) throw std::logic_error("graph: backward() has not run");
    if (n.grad.data.empty() && n.val.size() != 0)
        throw std::logic_error("graph: no gradient tracked for this variable");
    return n.grad;
}

void Graph::backward(Var loss) {
    const int lid = check(loss);
    if (nodes_[static_cast<size_t>(lid)].val.size() != 1)
        throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                    shape_str(nodes_[static_cast<size_t>(lid)].val.shape));
    for (auto& n : nodes_) {
        if (n.requires_grad) n.grad = Tensor::zeros(n.val.shape);
    }
    if (!nodes_[static_cast<size_t>(lid)].requires_grad)
        nodes_[static_cast<size_t>(lid)].grad = Tensor::zeros(nodes_[static_cast<size_t>(lid)].val.shape);
    nodes_[static_cast<size_t>(lid)].grad.data[0] = 1.0;
    backward_ran_ = true;
    for (int id = lid; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.requires_grad && n.back) n.back(*this, id);
    }
}

GradMap Graph::collect_param_grads(const ParamStore& store) const {
    GradMap gm(store);
    if (!backward_ran_) throw std::logic_error("collect_param_grads: backward() has not run");
    for (const auto& n : nodes_) {
        if (n.param_idx >= 0 && n.param_store == &store && n.requires_grad && !n.grad.data.empty()) {
            auto& dst = gm.grads[static_cast<size_t>(n.param_idx)].data;
            for (size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad.data[k];
        }
    }
    return gm;
}

// ---------------------------------------------------------------- ops

Var Graph::matmul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_matrix(ta, "matmul");
    require_matrix(tb, "matmul");
    if (ta.cols() != tb.rows())
        throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    const int64_t M = ta.rows(), K = ta.cols(), N = tb.cols();
    Tensor out = Tensor::zeros({M, N});
    gemm(ta.data.data(), tb.data.data(), out.data.data(), M, K, N, false, false, false);
    maybe_check_finite(out, "matmul");
    const int ia = a.id, ib = b.id;
    const bool rg = requires_grad(a) || requires_grad(b);
    return push(std::move(out), rg, [ia, ib, M, K, N](Graph& g, int self) {
        const Tensor& go = g.grad_buf(self);
        if (g.nodes_[static_cast<size_t>(ia)].requires_grad)
            gemm(go.data.data(), g.val_of(ib).data.data(), g.grad_buf(ia).data.data(), M, N, K, false, true, true);
        if (g.nodes_[static_cast<size_t>(ib)].requires_grad)
            gemm(g.val_of(ia).data.data(), go.data.data(), g.grad_buf(ib).data.data(), K, M, N, true, false, true);
    });
}

Var Graph::matmul_nt(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_matrix(ta, "matmul_nt");
    require_matrix(tb, "matmul_nt");
    if (ta.cols() != tb.cols())
        throw std::invalid_argument("matmul_nt: inner dimensions differ, " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    const int64_t M = ta.rows(), K = ta.cols(), N = tb.rows();
    Tensor out = Tensor::zeros({M, N});
    gemm(ta.data.data(), tb.data.data(), out.data.data(), M, K, N, false, true, false);
    maybe_check_finite(out, "matmul_nt");
    const int ia = a.id, ib = b.id;
    const bool rg = requires_grad(a) || requires_grad(b);
    return push(std::move(out), rg, [ia, ib, M, K, N](Graph& g, int self) {
        const Tensor& go = g.grad_buf(self); // [M,N]
        if (g.nodes_[static_cast<size_t>(ia)].requires_grad)
            gemm(go.data.data(), g.val_of(ib).data.data(), g.grad_buf(ia).data.data(), M, N, K, false, false, true);
        if (g.nodes_[static_cast<size_t>(ib)].requires_grad)
            gemm(go.data.data(), g.val_of(ia).data.data(), g.grad_buf(ib).data.data(), N, M, K, true, false, true);
    });
}

Var Graph::transpose(Var a) {
    const Tensor& ta = value(a);
    require_matrix(ta, "transpose");
    const int64_t M = ta.rows(), N = ta.cols();
    Tensor out = Tensor::zeros({N, M});
    for (int64_t r = 0; r < M; ++r)
        for (int64_t c = 0; c < N; ++c) out.data[static_cast<size_t>(c * M + r)] = ta.data[static_cast<size_t>(r * N + c)];
    const int ia = a.id;
    return push(std::move(out), requires_grad(a), [ia, M, N](Graph& g, int self) {
        if (!g.nodes_[static_cast<size_t>(ia)].requires_grad) return;
        const Tensor& go = g.grad_buf(self);
        Tensor& ga = g.grad_buf(ia);
        for (int64_t r = 0; r < M; ++r)
            for (int64_t c = 0; c < N; ++c) ga.data[static_cast<size_t>(r * N + c)] += go.data[static_cast<size_t>(c * M + r)];
    });
}

Var Graph::add(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb))
        throw std::invalid_argument("add: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
    const int ia = a.id, ib = b.id;
    return push(std::move(out), requires_grad(a) || requires_grad(b), [ia, ib](Graph& g, int self) {
        const Tensor& go = g.grad_buf(self);
        for (int i : {ia, ib}) {
            if (!g.nodes_[static_cast<size_t>(i)].requires_grad) continue;
            auto& gd = g.grad_buf(i).data;
            for (size_t k = 0; k < gd.size(); ++k) gd[k] += go.data[k];
        }
    });
}

Var Graph::sub(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb))
        throw std::invalid_argument("sub: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= tb.data[i];
    const int ia = a.id, ib = b.id;
    return push(std::move(out), requires_grad(a) || requires_grad(b), [ia, ib](Graph& g, int self) {
        const Tensor& go = g.grad_buf(self);
        if (g.nodes_[static_cast<size_t>(ia)].requires_grad) {
            auto& gd = g.grad_buf(ia).data;
            for (size_t k = 0; k < gd.size(); ++k) gd[k] += go.data[k];
        }
        if (g.nodes_[static_cast<size_t>(ib)].requires_grad) {
            auto& gd = g.grad_buf(ib).data;
            for (size_t k = 0; k < gd.size(); ++k) gd[k] -= go.data[k];
        }
    });
}

Var Graph::mul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb))
        throw std::invalid_argument("mul: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
    const int ia = a.id, ib = b.id;
    return push(std::move(out), requires_grad(a) || requires_grad(b), [ia, ib](Graph& g, int self) {
        const Tensor& go = g.grad_buf(self);
        if (g.nodes_[static_cast<size_t>(ia)].requires_grad) {
            auto& gd = g.grad_buf(ia).data;
            const auto& vb = g.val_of(ib).data;
            for (size_t k = 0; k < gd.size(); ++k) gd[k] += go.data[k] * vb[k];
        }
        if (g.nodes_[static_cast<size_t>(ib)].requires_grad) {
            auto& gd = g.grad_buf(ib).data;
            const auto& va = g.val_of(ia).data;
            for (size_t k = 0; k < gd.size(); ++k) gd[k] += go.data[k] * va[k];
        }
    });
}

Var Graph::div(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb))
        throw std::invalid_argument("div: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] /= tb.data[i];
    maybe_check_finite(out, "div");
    const int ia = a.id, ib = b.id;
    return push(std::move(out), requires_grad(a) || requires_grad(b), [ia, ib](Graph& g, int self) {
        const Tensor& go = g.grad_buf(self);
        const auto& va = g.val_of(ia).data;
        const auto& vb = g.val_of(ib).data;
        if (g.nodes_[static_cast<size_t>(ia)].requires_grad) {
            auto& gd = g.grad_buf(ia).data;
            for (size_t k = 0; k < gd.size(); ++k) gd[k] += go.data[k] / vb[k];
        }
        if (g.nodes_[static_cast<size_t>(ib)].requires_grad) {
            auto& gd = g.grad_buf(ib).data;
            for (size_t k = 0; k < gd.size(); ++k) gd[k] -= go.data[k] * va[k] / (vb[k] * vb[k]);
        }
    });
}

Var Graph::affine(Var a, double k, double c) {
    Tensor out = value(a);
    for (double& v : out.data) v = k * v + c;
    const int ia = a.id;
    return push(std::move(out), requires_grad(a), [ia, k](Graph& g, int self) {
        if (!g.nodes_[static_cast<size_t>(ia)].requires_grad) return;
        const Tensor& go = g.grad_buf(self);
        auto& gd = g.grad_buf(ia).data;
        for (size_t i = 0; i < gd.size(); ++i) gd[i] += k * go.data[i];
    });
}

Var Graph::add_rowvec(Var a, Var row) {
    const Tensor& ta = value(a);
    const Tensor& tr = value(row);
    require_matrix(ta, "add_rowvec");
    if (tr.rows() != 1 || tr.cols() != ta.cols())
        throw std::invalid_argument("add_rowvec: vector shape " + shape_str(tr.shape) + " incompatible with " + shape_str(ta.shape));
    const int64_t M = ta.rows(), N = ta.cols();
    Tensor out = ta;
    for (int64_t r = 0; r < M; ++r)
        for (int64_t c = 0; c < N; ++c) out.data[static_cast<size_t>(r * N + c)] += tr.data[static_cast<size_t>(c)];
    const int ia = a.id, ir = row.id;
    return push(std::move(out), requires_grad(a) || requires_grad(row), [ia, ir, M, N](Graph& g, int self) {
        const Tensor& go = g.grad_buf(self);
        if (g.nodes_[static_cast<size_t>(ia)].requires_grad) {
            auto& gd = g.grad_buf(ia).data;
            for (size_t k = 0; k < gd.size(); ++k) gd[k] += go.data[k];
        }
        if (g.nodes_[static_cast<size_t>(ir)].requires_grad) {
            auto& gd = g.grad_buf(ir).data;
            for (int64_t r = 0; r < M; ++r)
                for (int64_t c = 0; c < N; ++c) gd[static_cast<size_t>(c)] += go.data[static_cast<size_t>(r * N + c)];
        }
    });
}

Var Graph::mul_scalar_var(Var a, Var s) {
    const Tensor& ta = value(a);
    const Tensor& ts = value(s);
    if (ts.size() != 1) throw std::invalid_argument("mul_scalar_var: scalar operand has shape " + shape_str(ts.shape));
    const double sv = ts.data[0];
    Tensor out = ta;
    for (double& v : out.data) v *= sv;
    const int ia = a.id, is = s.id;
    return push(std::move(out), requires_grad(a) || requires_grad(s), [ia, is](Graph& g, int self) {
        const Tensor& go = g.grad_buf(self);
        const double sv2 = g.val_of(is).data[0];
        const auto& va = g.val_of(ia).data;
        if (g.nodes_[static_cast<size_t>(ia)].requires_grad) {
            auto& gd = g.grad_buf(ia).data;
            for (size_t k = 0; k < gd.size(); ++k) gd[k] += go.data[k] * sv2;
        }
        if (g.nodes_[static_cast<size_t>(is)].requires_grad) {
            double acc = 0.0;
            for (size_t k = 0; k < va.size(); ++k) acc += go.data[k] * va[k];
            g.grad_buf(is).data[0] += acc;
        }
    });
}

Var Graph::clamp_min(Var a, double floor) {
    Tensor out = value(a);
    for (double& v : out.data) v = std::max(v, floor);
    const int ia = a.id;
    return push(std::move(out), requires_grad(a), [ia, floor](Graph& g, int self) {
        if (!g.nodes_[static_cast<size_t>(ia)].requires_grad) return;
        const Tensor& go = g.grad_buf(self);
        const auto& x = g.val_of(ia).data;
        auto& gd = g.grad_buf(ia).data;
        for (size_t k = 0; k < gd.size(); ++k)
            if (x[k] > floor) gd[k] += go.data[k];
    });
}

Var Graph::div_colvec(Var a, Var col) {
    const Tensor& ta = value(a);
    const Tensor& tc = value(col);
    require_matrix(ta, "div_colvec");
    if (tc.rows() != ta.rows() || tc.cols() != 1)
        throw std::invalid_argument("div_colvec: column shape " + shape_str(tc.shape) + " incompatible with " + shape_str(ta.shape));
    const int64_t M = ta.rows(), N = ta.cols();
    Tensor out = ta;
    for (int64_t r = 0; r < M; ++r) {
        const double d = tc.data[static_cast<size_t>(r)];
        for (int64_t c = 0; c < N; ++c) out.data[static_cast<size_t>(r * N + c)] /= d;
    }
    maybe_check_finite(out, "div_colvec");
    const int ia = a.id, ic = col.id;
    return push(std::move(out), requires_grad(a) || requires_grad(col), [ia, ic, M, N](Graph& g, int self) {
        const Tensor& go = g.grad_buf(self);
        const auto& va = g.val_of(ia).data;
        const auto& vc = g.val_of(ic).data;
        if (g.nodes_[static_cast<size_t>(ia)].requires_grad) {
            auto& gd = g.grad_buf(ia).data;
            for (int64_t r = 0; r < M; ++r) {
                const double d = vc[static_cast<size_t>(r)];
                for (int64_t c = 0; c < N; ++c) gd[static_cast<size_t>(r * N + c)] += go.data[static_cast<size_t>(r * N + c)] / d;
            }
        }
        if (g.nodes_[static_cast<size_t>(ic)].requires_grad) {
            auto& gd = g.grad_buf(ic).data;
            for (int64_t r = 0; r < M; ++r) {
                const double d = vc[static_cast<size_t>(r)];
                double acc = 0.0;
                for (int64_t c = 0; c < N; ++c) acc += go.data[static_cast<size_t>(r * N + c)] * va[static_cast<size_t>(r * N + c)];
                gd[static_cast<size_t>(r)] -= acc / (d * d);
            }
        }
    });
}

Var Graph::exp(Var a) {
    Tensor out = value(a);
    for (double& v : out.data) v = std::exp(v);
    maybe_check_finite(out, "exp");
    const int ia = a.id;
    return push(std::move(out), requires_grad(a), [ia](Graph& g, int self) {
        if (!g.nodes_[static_cast<size_t>(ia)].requires_grad) return;
        const Tensor& go = g.grad_buf(self);
        const auto& y = g.val_of(self).data;
        auto& gd = g.grad_buf(ia).data;
        for (size_t k = 0; k < gd.size(); ++k) gd[k] += go.data[k] * y[k];
    });
}

Var Graph::log(Var a) {
    Tensor out = value(a);
    for (double& v : out.data) v = std::log(v);
    maybe_check_finite(out, "log");
    const int ia = a.id;
    return push(std::move(out), requires_grad(a), [ia](Graph& g, int self) {
        if (!g.nodes_[static_cast<size_t>(ia)].requires_grad) return;
        const Tensor& go = g.grad_buf(self);
        const auto& x = g.val_of(ia).data;
        auto& gd = g.grad_buf(ia).data;
        for (size_t k = 0; k < gd.size(); ++k) gd[k] += go.data[k] / x[k];
    });
}

Var Graph::sigmoid(Var a) {
    Tensor out = value(a);
    for (double& v : out.data) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    const int ia = a.id;
    return push(std::move(out), requires_grad(a), [ia](Graph& g, int self) {
        if (!g.nodes_[static_cast<size_t>(ia)].requires_grad) return;
        const Tensor& go = g.grad_buf(self);
        const auto& y = g.val_of(self).data;
        auto& gd = g.grad_buf(ia).data;
        for (size_t k = 0; k < gd.size(); ++k) gd[k] += go.data[k] * y[k] * (1.0 - y[k]);
    });
}

Var Graph::gelu(Var a) {
    Tensor out = value(a);
    for (double& v : out.data) v = gelu_fwd(v);
    const int ia = a.id;
    return push(std::move(out), requires_grad(a), [ia](Graph& g, int self) {
        if (!g.nodes_[static_cast<size_t>(ia)].requires_grad) return;
        const Tensor& go = g.grad_buf(self);
        const auto& x = g.val_of(ia).data;
        auto& gd = g.grad_buf(ia).data;
        for (size_t k = 0; k < gd.size(); ++k) gd[k] += go.data[k] * gelu_bwd(x[k]);
    });
}

Var Graph::softmax_rows(Var a) {
    const Tensor& ta = value(a);
    require_matrix(ta, "softmax_rows");
    const int64_t M = ta.rows(), N = ta.cols();
    Tensor out = ta;
    for (int64_t r = 0; r < M; ++r) {
        double* row = out.data.data() + r * N;
        double mx = -1e300;
        for (int64_t c = 0; c < N; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int64_t c = 0; c < N; ++c) {
            row[c] = std::exp(row[c] - mx);
            sum += row[c];
        }
        for (int64_t c = 0; c < N; ++c) row[c] /= sum;
    }
    const int ia = a.id;
    return push(std::move(out), requires_grad(a), [ia, M, N](Graph& g, int self) {
        if (!g.nodes_[static_cast<size_t>(ia)].requires_grad) return;
        const Tensor& go = g.grad_buf(self);
        const auto& y = g.val_of(self).data;
        auto& gd = g.grad_buf(ia).data;
        for (int64_t r = 0; r < M; ++r) {
            const double* yr = y.data() + r * N;
            const double* gr = go.data.data() + r * N;
            double dot = 0.0;
            for (int64_t c = 0; c < N; ++c) dot += yr[c] * gr[c];
            double* dst = gd.data() + r * N;
            for (int64_t c = 0; c < N; ++c) dst[c] += yr[c] * (gr[c] - dot);
        }
    });
}

Var Graph::lse_rows_masked(Var a, const Tensor& include_mask) {
    const Tensor& ta = value(a);
    require_matrix(ta, "lse_rows_masked");
    if (!ta.same_shape(include_mask))
        throw std::invalid_argument("lse_rows_masked: mask shape " + shape_str(include_mask.shape) + " vs " + shape_str(ta.shape));
    const int64_t M = ta.rows(), N = ta.cols();
    Tensor out = Tensor::zeros({M, 1});
    for (int64_t r = 0; r < M; ++r) {
        const double* row = ta.data.data() + r * N;
        const double* mk = include_mask.data.data() + r * N;
        double mx = -1e300;
        int64_t cnt = 0;
        for (int64_t c = 0; c < N; ++c)
            if (mk[c] != 0.0) {
                mx = std::max(mx, row[c]);
                ++cnt;
            }
        if (cnt == 0) throw std::invalid_argument("lse_rows_masked: row " + std::to_string(r) + " has no included entries");
        double sum = 0.0;
        for (int64_t c = 0; c < N; ++c)
            if (mk[c] != 0.0) sum += std::exp(row[c] - mx);
        out.data[static_cast<size_t>(r)] = mx + std::log(sum);
    }
    const int ia = a.id;
    Tensor mask_copy = include_mask;
    return push(std::move(out), requires_grad(a), [ia, M, N, mask = std::move(mask_copy)](Graph& g, int self) {
        if (!g.nodes_[static_cast<size_t>(ia)].requires_grad) return;
        const Tensor& go = g.grad_buf(self);
        const Tensor& lse = g.val_of(self);
        const auto& x = g.val_of(ia).data;
        auto& gd = g.grad_buf(ia).data;
        for (int64_t r = 0; r < M; ++r) {
            const double gr = go.data[static_cast<size_t>(r)];
            if (gr == 0.0) continue;
            const double l = lse.data[static_cast<size_t>(r)];
            for (int64_t c = 0; c < N; ++c) {
                if (mask.data[static_cast<size_t>(r * N + c)] == 0.0) continue;
                gd[static_cast<size_t>(r * N + c)] += gr * std::exp(x[static_cast<size_t>(r * N + c)] - l);
            }
        }
    });
}

Var Graph::layernorm_rows(Var a, Var gain, Var bias) {
    const Tensor& ta = value(a);
    const Tensor& tg = value(gain);
    const Tensor& tb = value(bias);
    require_matrix(ta, "layernorm_rows");
    const int64_t M = ta.rows(), N = ta.cols();
    if (tg.size() != N || tb.size() != N)
        throw std::invalid_argument("layernorm_rows: gain/bias size must equal row width " + std::to_string(N));
    constexpr double eps = 1e-5;
    Tensor out = Tensor::zeros({M, N});
    for (int64_t r = 0; r < M; ++r) {
        const double* x = ta.data.data() + r * N;
        double mean = 0.0;
        for (int64_t c = 0; c < N; ++c) mean += x[c];
        mean /= static_cast<double>(N);
        double var = 0.0;
        for (int64_t c = 0; c < N; ++c) var += (x[c] - mean) * (x[c] - mean);
        var /= static_cast<double>(N);
        const double inv = 1.0 / std::sqrt(var + eps);
        double* o = out.data.data() + r * N;
        for (int64_t c = 0; c < N; ++c) o[c] = tg.data[static_cast<size_t>(c)] * (x[c] - mean) * inv + tb.data[static_cast<size_t>(c)];
    }
    const int ia = a.id, ig = gain.id, ib = bias.id;
    const bool rg = requires_grad(a) || requires_grad(gain) || requires_grad(bias);
    return push(std::move(out), rg, [ia, ig, ib, M, N](Graph& g, int self) {
        constexpr double eps = 1e-5;
        const Tensor& go = g.grad_buf(self);
        const auto& x = g.val_of(ia).data;
        const auto& gn = g.val_of(ig).data;
        const bool need_a = g.nodes_[static_cast<size_t>(ia)].requires_grad;
        const bool need_g = g.nodes_[static_cast<size_t>(ig)].requires_grad;
        const bool need_b = g.nodes_[static_cast<size_t>(ib)].requires_grad;
        for (int64_t r = 0; r < M; ++r) {
            const double* xr = x.data() + r * N;
            const double* gr = go.data.data() + r * N;
            double mean = 0.0;
            for (int64_t c = 0; c < N; ++c) mean += xr[c];
            mean /= static_cast<double>(N);
            double var = 0.0;
            for (int64_t c = 0; c < N; ++c) var += (xr[c] - mean) * (xr[c] - mean);
            var /= static_cast<double>(N);
            const double inv = 1.0 / std::sqrt(var + eps);
            // xhat_c = (x_c - mean) * inv
            if (need_g || need_b) {
                auto* gg = need_g ? g.grad_buf(ig).data.data() : nullptr;
                auto* gb = need_b ? g.grad_buf(ib).data.data() : nullptr;
                for (int64_t c = 0; c < N; ++c) {
                    const double xhat = (xr[c] - mean) * inv;
                    if (gg) gg[c] += gr[c] * xhat;
                    if (gb) gb[c] += gr[c];
                }
            }
            if (need_a) {
                double sum_gy = 0.0, sum_gyx = 0.0;
                for (int64_t c = 0; c < N; ++c) {
                    const double gy = gr[c] * gn[static_cast<size_t>(c)];
                    const double xhat = (xr[c] - mean) * inv;
                    sum_gy += gy;
                    sum_gyx += gy * xhat;
                }
                double* gd = g.grad_buf(ia).data.data() + r * N;
                const double invN = 1.0 / static_cast<double>(N);
                for (int64_t c = 0; c < N; ++c) {
                    const double gy = gr[c] * gn[static_cast<size_t>(c)];
                    const double xhat = (xr[c] - mean) * inv;
                    gd[c] += inv * (gy - invN * sum_gy - xhat * invN * sum_gyx);
                }
            }
        }
    });
}

Var Graph::l2_normalize_rows(Var a) {
    const Tensor& ta = value(a);
    require_matrix(ta, "l2_normalize_rows");
    const int64_t M = ta.rows(), N = ta.cols();
    constexpr double eps = 1e-12;
    Tensor out = Tensor::zeros({M, N});
    for (int64_t r = 0; r < M; ++r) {
        const double* x = ta.data.data() + r * N;
        double ss = eps;
        for (int64_t c = 0; c < N; ++c) ss += x[c] * x[c];
        const double inv = 1.0 / std::sqrt(ss);
        double* o = out.data.data() + r * N;
        for (int64_t c = 0; c < N; ++c) o[c] = x[c] * inv;
    }
    const int ia = a.id;
    return push(std::move(out), requires_grad(a), [ia, M, N](Graph& g, int self) {
        if (!g.nodes_[static_cast<size_t>(ia)].requires_grad) return;
        constexpr double eps = 1e-12;
        const Tensor& go = g.grad_buf(self);
        const auto& x = g.val_of(ia).data;
        auto& gd = g.grad_buf(ia).data;
        for (int64_t r = 0; r < M; ++r) {
            const double* xr = x.data() + r * N;
            const double* gr = go.data.data() + r * N;
            double ss = eps;
            for (int64_t c = 0; c < N; ++c) ss += xr[c] * xr[c];
            const double n1 = std::sqrt(ss);
            double dot = 0.0;
            for (int64_t c = 0; c < N; ++c) dot += gr[c] * xr[c];
            double* dst = gd.data() + r * N;
            for (int64_t c = 0; c < N; ++c) dst[c] += gr[c] / n1 - xr[c] * dot / (n1 * n1 * n1);
        }
    });
}

Var Graph::slice_rows(Var a, int64_t r0, int64_t r1) {
    const Tensor& ta = value(a);
    require_matrix(ta, "slice_rows");
    const int64_t M = ta.rows(), N = ta.cols();
    if (r0 < 0 || r1 < r0 || r1 > M)
        throw std::invalid_argument("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) + ") out of " + std::to_string(M));
    Tensor out = Tensor::zeros({r1 - r0, N});
    std::copy(ta.data.begin() + r0 * N, ta.data.begin() + r1 * N, out.data.begin());
    const int ia = a.id;
    return push(std::move(out), requires_grad(a), [ia, r0, N](Graph& g, int self) {
        if (!g.nodes_[static_cast<size_t>(ia)].requires_grad) return;
        const Tensor& go = g.grad_buf(self);
        auto& gd = g.grad_buf(ia).data;
        for (size_t k = 0; k < go.data.size(); ++k) gd[static_cast<size_t>(r0 * N) + k] += go.data[k];
    });
}

Var Graph::slice_cols(Var a, int64_t c0, int64_t c1) {
    const Tensor& ta = value(a);
    require_matrix(ta, "slice_cols");
    const int64_t M = ta.rows(), N = ta.cols();
    if (c0 < 0 || c1 < c0 || c1 > N)
        throw std::invalid_argument("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) + ") out of " + std::to_string(N));
    const int64_t W = c1 - c0;
    Tensor out = Tensor::zeros({M, W});
    for (int64_t r = 0; r < M; ++r)
        std::copy(ta.data.begin() + r * N + c0, ta.data.begin() + r * N + c1, out.data.begin() + r * W);
    const int ia = a.id;
    return push(std::move(out), requires_grad(a), [ia, c0, M, N, W](Graph& g, int self) {
        if (!g.nodes_[static_cast<size_t>(ia)].requires_grad) return;
        const Tensor& go = g.grad_buf(self);
        auto& gd = g.grad_buf(ia).data;
        for (int64_t r = 0; r < M; ++r)
            for (int64_t c = 0; c < W; ++c) gd[static_cast<size_t>(r * N + c0 + c)] += go.data[static_cast<size_t>(r * W + c)];
    });
}

Var Graph::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    int64_t N = -1, M = 0;
    bool rg = false;
    for (Var p : parts) {
        const Tensor& t = value(p);
        require_matrix(t, "concat_rows");
        if (N < 0)
            N = t.cols();
        else if (t.rows() > 0 && t.cols() != N)
            throw std::invalid_argument("concat_rows: width mismatch " + std::to_string(t.cols()) + " vs " + std::to_string(N));
        M += t.rows();
        rg = rg || requires_grad(p);
    }
    Tensor out = Tensor::zeros({M, N});
    int64_t r = 0;
    for (Var p : parts) {
        const Tensor& t = value(p);
        std::copy(t.data.begin(), t.data.end(), out.data.begin() + r * N);
        r += t.rows();
    }
    std::vector<int> ids;
    ids.reserve(parts.size());
    for (Var p : parts) ids.push_back(p.id);
    return push(std::move(out), rg, [ids, N](Graph& g, int self) {
        const Tensor& go = g.grad_buf(self);
        int64_t row = 0;
        for (int id : ids) {
            const int64_t pr = g.val_of(id).rows();
            if (g.nodes_[static_cast<size_t>(id)].requires_grad) {
                auto& gd = g.grad_buf(id).data;
                for (size_t k = 0; k < gd.size(); ++k) gd[k] += go.data[static_cast<size_t>(row * N) + k];
            }
            row += pr;
        }
    });
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const int64_t M = value(parts[0]).rows();
    int64_t N = 0;
    bool rg = false;
    for (Var p : parts) {
        const Tensor& t = value(p);
        require_matrix(t, "concat_cols");
        if (t.rows() != M) throw std::invalid_argument("concat_cols: row mismatch");
        N += t.cols();
        rg = rg || requires_grad(p);
    }
    Tensor out = Tensor::zeros({M, N});
    int64_t c0 = 0;
    for (Var p : parts) {
        const Tensor& t = value(p);
        const int64_t W = t.cols();
        for (int64_t r = 0; r < M; ++r)
            std::copy(t.data.begin() + r * W, t.data.begin() + (r + 1) * W, out.data.begin() + r * N + c0);
        c0 += W;
    }
    std::vector<int> ids;
    ids.reserve(parts.size());
    for (Var p : parts) ids.push_back(p.id);
    return push(std::move(out), rg, [ids, M, N](Graph& g, int self) {
        const Tensor& go = g.grad_buf(self);
        int64_t c0 = 0;
        for (int id : ids) {
            const int64_t W = g.val_of(id).cols();
            if (g.nodes_[static_cast<size_t>(id)].requires_grad) {
                auto& gd = g.grad_buf(id).data;
                for (int64_t r = 0; r < M; ++r)
                    for (int64_t c = 0; c < W; ++c) gd[static_cast<size_t>(r * W + c)] += go.data[static_cast<size_t>(r * N + c0 + c)];
            }
            c0 += W;
        }
    });
}

Var Graph::gather_rows(Var a, std::vector<int64_t> idx) {
    const Tensor& ta = value(a);
    require_matrix(ta, "gather_rows");
    const int64_t M = ta.rows(), N = ta.cols();
    for (int64_t i : idx)
        if (i < 0 || i >= M) throw std::out_of_range("gather_rows: index " + std::to_string(i) + " out of " + std::to_string(M) + " rows");
    Tensor out = Tensor::zeros({static_cast<int64_t>(idx.size()), N});
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy(ta.data.begin() + idx[r] * N, ta.data.begin() + (idx[r] + 1) * N, out.data.begin() + static_cast<int64_t>(r) * N);
    const int ia = a.id;
    return push(std::move(out), requires_grad(a), [ia, N, idx = std::move(idx)](Graph& g, int self) {
        if (!g.nodes_[static_cast<size_t>(ia)].requires_grad) return;
        const Tensor& go = g.grad_buf(self);
        auto& gd = g.grad_buf(ia).data;
        for (size_t r = 0; r < idx.size(); ++r)
            for (int64_t c = 0; c < N; ++c)
                gd[static_cast<size_t>(idx[r] * N + c)] += go.data[static_cast<size_t>(static_cast<int64_t>(r) * N + c)];
    });
}

Var Graph::patch_expand(Var a, int64_t hp, int64_t wp, int64_t p, int64_t c) {
    const Tensor& ta = value(a);
    require_matrix(ta, "patch_expand");
    if (ta.rows() != hp * wp || ta.cols() != p * p * c)
        throw std::invalid_argument("patch_expand: input " + shape_str(ta.shape) + " incompatible with grid " +
                                    std::to_string(hp) + "x" + std::to_string(wp) + " patch " + std::to_string(p) + " chan " + std::to_string(c));
    const int64_t H = hp * p, W = wp * p;
    Tensor out = Tensor::zeros({H * W, c});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            const int64_t tok = (y / p) * wp + (x / p);
            const int64_t off = ((y % p) * p + (x % p)) * c;
            const double* src = ta.data.data() + tok * (p * p * c) + off;
            double* dst = out.data.data() + (y * W + x) * c;
            std::copy(src, src + c, dst);
        }
    const int ia = a.id;
    return push(std::move(out), requires_grad(a), [ia, hp, wp, p, c](Graph& g, int self) {
        if (!g.nodes_[static_cast<size_t>(ia)].requires_grad) return;
        const Tensor& go = g.grad_buf(self);
        auto& gd = g.grad_buf(ia).data;
        const int64_t H = hp * p, W = wp * p;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                const int64_t tok = (y / p) * wp + (x / p);
                const int64_t off = ((y % p) * p + (x % p)) * c;
                const double* src = go.data.data() + (y * W + x) * c;
                double* dst = gd.data() + tok * (p * p * c) + off;
                for (int64_t k = 0; k < c; ++k) dst[k] += src[k];
            }
    });
}

Var Graph::row_sums(Var a) {
    const Tensor& ta = value(a);
    require_matrix(ta, "row_sums");
    const int64_t M = ta.rows(), N = ta.cols();
    Tensor out = Tensor::zeros({M, 1});
    for (int64_t r = 0; r < M; ++r) {
        double acc = 0.0;
        for (int64_t c = 0; c < N; ++c) acc += ta.data[static_cast<size_t>(r * N + c)];
        out.data[static_cast<size_t>(r)] = acc;
    }
    const int ia = a.id;
    return push(std::move(out), requires_grad(a), [ia, M, N](Graph& g, int self) {
        if (!g.nodes_[static_cast<size_t>(ia)].requires_grad) return;
        const Tensor& go = g.grad_buf(self);
        auto& gd = g.grad_buf(ia).data;
        for (int64_t r = 0; r < M; ++r)
            for (int64_t c = 0; c < N; ++c) gd[static_cast<size_t>(r * N + c)] += go.data[static_cast<size_t>(r)];
    });
}

Var Graph::sum_all(Var a) {
    const Tensor& ta = value(a);
    double acc = 0.0;
    for (double v : ta.data) acc += v;
    const int ia = a.id;
    return push(Tensor::scalar(acc), requires_grad(a), [ia](Graph& g, int self) {
        if (!g.nodes_[static_cast<size_t>(ia)].requires_grad) return;
        const double go = g.grad_buf(self).data[0];
        auto& gd = g.grad_buf(ia).data;
        for (double& v : gd) v += go;
    });
}

Var Graph::mean_all(Var a) {
    const Tensor& ta = value(a);
    if (ta.size() == 0) throw std::invalid_argument("mean_all: empty tensor");
    const double inv = 1.0 / static_cast<double>(ta.size());
    double acc = 0.0;
    for (double v : ta.data) acc += v;
    const int ia = a.id;
    return push(Tensor::scalar(acc * inv), requires_grad(a), [ia, inv](Graph& g, int self) {
        if (!g.nodes_[static_cast<size_t>(ia)].requires_grad) return;
        const double go = g.grad_buf(self).data[0] * inv;
        auto& gd = g.grad_buf(ia).data;
        for (double& v : gd) v += go;
    });
}

Var Graph::cross_entropy_masked(Var logits, const std::vector<int64_t>& targets, const std::vector<uint8_t>& mask) {
    const Tensor& tl = value(logits);
    require_matrix(tl, "cross_entropy_masked");
    const int64_t T = tl.rows(), V = tl.cols();
    if (static_cast<int64_t>(targets.size()) != T || static_cast<int64_t>(mask.size()) != T)
        throw std::invalid_argument("cross_entropy_masked: targets/mask length must equal logit rows " + std::to_string(T));
    int64_t n_active = 0;
    for (int64_t t = 0; t < T; ++t) {
        if (!mask[static_cast<size_t>(t)]) continue;
        ++n_active;
        if (targets[static_cast<size_t>(t)] < 0 || targets[static_cast<size_t>(t)] >= V)
            throw std::out_of_range("cross_entropy_masked: target " + std::to_string(targets[static_cast<size_t>(t)]) +
                                    " outside vocabulary of size " + std::to_string(V));
    }
    if (n_active == 0) throw std::invalid_argument("cross_entropy_masked: degenerate batch, every position masked");
    double loss = 0.0;
    for (int64_t t = 0; t < T; ++t) {
        if (!mask[static_cast<size_t>(t)]) continue;
        const double* row = tl.data.data() + t * V;
        double mx = row[0];
        for (int64_t v = 1; v < V; ++v) mx = std::max(mx, row[v]);
        double sum = 0.0;
        for (int64_t v = 0; v < V; ++v) sum += std::exp(row[v] - mx);
        loss += (mx + std::log(sum)) - row[targets[static_cast<size_t>(t)]];
    }
    loss /= static_cast<double>(n_active);
    const int il = logits.id;
    return push(Tensor::scalar(loss), requires_grad(logits),
                [il, T, V, n_active, targets, mask](Graph& g, int self) {
                    if (!g.nodes_[static_cast<size_t>(il)].requires_grad) return;
                    const double go = g.grad_buf(self).data[0] / static_cast<double>(n_active);
                    const auto& x = g.val_of(il).data;
                    auto& gd = g.grad_buf(il).data;
                    for (int64_t t = 0; t < T; ++t) {
                        if (!mask[static_cast<size_t>(t)]) continue;
                        const double* row = x.data() + t * V;
                        double mx = row[0];
                        for (int64_t v = 1; v < V; ++v) mx = std::max(mx, row[v]);
                        double sum = 0.0;
                        for (int64_t v = 0; v < V; ++v) sum += std::exp(row[v] - mx);
                        double* dst = gd.data() + t * V;
                        for (int64_t v = 0; v < V; ++v) dst[v] += go * std::exp(row[v] - mx) / sum;
                        dst[targets[static_cast<size_t>(t)]] -= go;
                    }
                });
}

Var Graph::bce_with_logits_mean(Var logits, const Tensor& targets) {
    const Tensor& tl = value(logits);
    if (!tl.same_shape(targets))
        throw std::invalid_argument("bce_with_logits_mean: target shape " + shape_str(targets.shape) + " vs " + shape_str(tl.shape));
    if (tl.size() == 0) throw std::invalid_argument("bce_with_logits_mean: empty input");
    double loss = 0.0;
    for (size_t i = 0; i < tl.data.size(); ++i) {
        const double z = tl.data[i];
        const double t = targets.data[i];
        // max(z,0) - z*t + log(1 + exp(-|z|))
        loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    }
    const double inv = 1.0 / static_cast<double>(tl.size());
    loss *= inv;
    const int il = logits.id;
    Tensor tcopy = targets;
    return push(Tensor::scalar(loss), requires_grad(logits), [il, inv, tgt = std::move(tcopy)](Graph& g, int self) {
        if (!g.nodes_[static_cast<size_t>(il)].requires_grad) return;
        const double go = g.grad_buf(self).data[0] * inv;
        const auto& x = g.val_of(il).data;
        auto& gd = g.grad_buf(il).data;
        for (size_t i = 0; i < gd.size(); ++i) {
            const double z = x[i];
            const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            gd[i] += go * (s - tgt.data[i]);
        }
    });
}

} // namespace clv
