#include "pixelshield/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "pixelshield/gemm.hpp"

namespace pxs {

const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Param: return "param";
        case Op::Constant: return "const";
        case Op::Conv2d: return "conv2d";
        case Op::MatMul: return "matmul";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::BiasAdd: return "bias_add";
        case Op::Silu: return "silu";
        case Op::Clamp01: return "clamp01";
        case Op::GroupNorm: return "group_norm";
        case Op::Sum: return "sum";
        case Op::SumSq: return "sum_sq";
        case Op::ConcatC: return "concat_c";
        case Op::Down2x: return "down2x";
        case Op::Up2x: return "up2x";
    }
    return "?";
}

namespace {
[[noreturn]] void graph_fail(int id, Op op, const std::string& msg) {
    throw GraphError("node " + std::to_string(id) + " (" + op_name(op) + "): " + msg);
}
}  // namespace

int Graph::push(Node n) {
    int id = size();
    for (int a : n.args)
        if (a < 0 || a >= id) graph_fail(id, n.op, "bad argument node id " + std::to_string(a));
    nodes_.push_back(std::move(n));
    return id;
}

const std::vector<int>& Graph::shape_of(int id) const { return nodes_[static_cast<std::size_t>(id)].shape; }

int Graph::input(const std::string& name, const std::vector<int>& shape) {
    auto it = input_ids_.find(name);
    if (it != input_ids_.end()) {
        if (shape_of(it->second) != shape)
            graph_fail(it->second, Op::Input, "input '" + name + "' redeclared with different shape");
        return it->second;
    }
    Node n;
    n.op = Op::Input;
    n.name = name;
    n.shape = shape;
    numel_of(shape);
    int id = push(std::move(n));
    input_ids_[name] = id;
    return id;
}

int Graph::param(const std::string& name, const std::vector<int>& shape) {
    auto it = param_ids_.find(name);
    if (it != param_ids_.end()) {
        if (shape_of(it->second) != shape)
            graph_fail(it->second, Op::Param, "param '" + name + "' redeclared with different shape");
        return it->second;
    }
    Node n;
    n.op = Op::Param;
    n.name = name;
    n.shape = shape;
    numel_of(shape);
    int id = push(std::move(n));
    param_ids_[name] = id;
    return id;
}

int Graph::constant(Tensor value) {
    Node n;
    n.op = Op::Constant;
    n.shape = value.shape;
    n.constant = std::move(value);
    return push(std::move(n));
}

int Graph::conv2d(int x, int w, int b, int kernel) {
    const auto& xs = shape_of(x);
    const auto& ws = shape_of(w);
    const auto& bs = shape_of(b);
    int id = size();
    if (kernel != 1 && kernel != 3) graph_fail(id, Op::Conv2d, "kernel must be 1 or 3");
    if (xs.size() != 3) graph_fail(id, Op::Conv2d, "x must be [C,H,W], got " + shape_str(xs));
    if (ws.size() != 4 || ws[1] != xs[0] || ws[2] != kernel || ws[3] != kernel)
        graph_fail(id, Op::Conv2d,
                   "weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
    if (bs.size() != 1 || bs[0] != ws[0])
        graph_fail(id, Op::Conv2d, "bias " + shape_str(bs) + " must be [" + std::to_string(ws[0]) + "]");
    Node n;
    n.op = Op::Conv2d;
    n.args = {x, w, b};
    n.kernel = kernel;
    n.shape = {ws[0], xs[1], xs[2]};
    return push(std::move(n));
}

int Graph::matmul(int w, int x) {
    const auto& ws = shape_of(w);
    const auto& xs = shape_of(x);
    int id = size();
    if (ws.size() != 2 || xs.size() != 1 || ws[1] != xs[0])
        graph_fail(id, Op::MatMul, shape_str(ws) + " * " + shape_str(xs));
    Node n;
    n.op = Op::MatMul;
    n.args = {w, x};
    n.shape = {ws[0]};
    return push(std::move(n));
}

int Graph::add(int a, int b) {
    if (shape_of(a) != shape_of(b))
        graph_fail(size(), Op::Add, shape_str(shape_of(a)) + " vs " + shape_str(shape_of(b)));
    Node n;
    n.op = Op::Add;
    n.args = {a, b};
    n.shape = shape_of(a);
    return push(std::move(n));
}

int Graph::sub(int a, int b) {
    if (shape_of(a) != shape_of(b))
        graph_fail(size(), Op::Sub, shape_str(shape_of(a)) + " vs " + shape_str(shape_of(b)));
    Node n;
    n.op = Op::Sub;
    n.args = {a, b};
    n.shape = shape_of(a);
    return push(std::move(n));
}

int Graph::mul(int a, int b) {
    if (shape_of(a) != shape_of(b))
        graph_fail(size(), Op::Mul, shape_str(shape_of(a)) + " vs " + shape_str(shape_of(b)));
    Node n;
    n.op = Op::Mul;
    n.args = {a, b};
    n.shape = shape_of(a);
    return push(std::move(n));
}

int Graph::scale(int x, float c) {
    Node n;
    n.op = Op::Scale;
    n.args = {x};
    n.scalar = c;
    n.shape = shape_of(x);
    return push(std::move(n));
}

int Graph::bias_add(int x, int b) {
    const auto& xs = shape_of(x);
    const auto& bs = shape_of(b);
    if (xs.size() != 3 || bs.size() != 1 || bs[0] != xs[0])
        graph_fail(size(), Op::BiasAdd, shape_str(xs) + " + " + shape_str(bs));
    Node n;
    n.op = Op::BiasAdd;
    n.args = {x, b};
    n.shape = xs;
    return push(std::move(n));
}

int Graph::silu(int x) {
    Node n;
    n.op = Op::Silu;
    n.args = {x};
    n.shape = shape_of(x);
    return push(std::move(n));
}

int Graph::clamp01(int x) {
    Node n;
    n.op = Op::Clamp01;
    n.args = {x};
    n.shape = shape_of(x);
    return push(std::move(n));
}

int Graph::group_norm(int x, int gamma, int beta, int groups, float eps) {
    const auto& xs = shape_of(x);
    if (xs.size() != 3) graph_fail(size(), Op::GroupNorm, "x must be [C,H,W]");
    if (groups < 1 || xs[0] % groups != 0)
        graph_fail(size(), Op::GroupNorm, "groups " + std::to_string(groups) + " must divide C");
    const auto& gs = shape_of(gamma);
    const auto& bs = shape_of(beta);
    if (gs != std::vector<int>{xs[0]} || bs != std::vector<int>{xs[0]})
        graph_fail(size(), Op::GroupNorm, "gamma/beta must be [C]");
    Node n;
    n.op = Op::GroupNorm;
    n.args = {x, gamma, beta};
    n.groups = groups;
    n.eps = eps;
    n.shape = xs;
    return push(std::move(n));
}

int Graph::sum(int x) {
    Node n;
    n.op = Op::Sum;
    n.args = {x};
    n.shape = {};
    return push(std::move(n));
}

int Graph::sum_sq(int x) {
    Node n;
    n.op = Op::SumSq;
    n.args = {x};
    n.shape = {};
    return push(std::move(n));
}

int Graph::concat_c(const std::vector<int>& xs) {
    if (xs.empty()) graph_fail(size(), Op::ConcatC, "no inputs");
    int c = 0;
    const auto& s0 = shape_of(xs[0]);
    if (s0.size() != 3) graph_fail(size(), Op::ConcatC, "inputs must be [C,H,W]");
    for (int x : xs) {
        const auto& s = shape_of(x);
        if (s.size() != 3 || s[1] != s0[1] || s[2] != s0[2])
            graph_fail(size(), Op::ConcatC, "spatial mismatch " + shape_str(s));
        c += s[0];
    }
    Node n;
    n.op = Op::ConcatC;
    n.args = xs;
    n.shape = {c, s0[1], s0[2]};
    return push(std::move(n));
}

int Graph::down2x(int x) {
    const auto& xs = shape_of(x);
    if (xs.size() != 3 || xs[1] % 2 != 0 || xs[2] % 2 != 0)
        graph_fail(size(), Op::Down2x, "needs even [C,H,W], got " + shape_str(xs));
    Node n;
    n.op = Op::Down2x;
    n.args = {x};
    n.shape = {xs[0], xs[1] / 2, xs[2] / 2};
    return push(std::move(n));
}

int Graph::up2x(int x) {
    const auto& xs = shape_of(x);
    if (xs.size() != 3) graph_fail(size(), Op::Up2x, "needs [C,H,W]");
    Node n;
    n.op = Op::Up2x;
    n.args = {x};
    n.shape = {xs[0], xs[1] * 2, xs[2] * 2};
    return push(std::move(n));
}

int Graph::inline_graph(const Graph& other, int other_output,
                        const std::map<std::string, int>& bindings) {
    if (other_output < 0 || other_output >= other.size())
        throw GraphError("inline_graph: output id out of range");
    std::vector<int> remap(static_cast<std::size_t>(other.size()), -1);
    for (int i = 0; i < other.size(); ++i) {
        const Node& n = other.nodes()[static_cast<std::size_t>(i)];
        switch (n.op) {
            case Op::Input: {
                auto it = bindings.find(n.name);
                if (it == bindings.end())
                    throw GraphError("inline_graph: unbound input '" + n.name + "'");
                if (shape_of(it->second) != n.shape)
                    throw GraphError("inline_graph: binding for '" + n.name + "' has shape " +
                                     shape_str(shape_of(it->second)) + ", expected " +
                                     shape_str(n.shape));
                remap[static_cast<std::size_t>(i)] = it->second;
                break;
            }
            case Op::Param:
                remap[static_cast<std::size_t>(i)] = param(n.name, n.shape);
                break;
            case Op::Constant:
                remap[static_cast<std::size_t>(i)] = constant(n.constant);
                break;
            default: {
                Node copy = n;
                for (int& a : copy.args) a = remap[static_cast<std::size_t>(a)];
                remap[static_cast<std::size_t>(i)] = push(std::move(copy));
            }
        }
    }
    return remap[static_cast<std::size_t>(other_output)];
}

std::vector<std::pair<std::string, std::vector<int>>> Graph::param_leaves() const {
    std::vector<std::pair<std::string, std::vector<int>>> out;
    for (const Node& n : nodes_)
        if (n.op == Op::Param) out.emplace_back(n.name, n.shape);
    return out;
}

// ---------------------------------------------------------------------------
// Execution

Executor::Executor(const Graph& g) : g_(&g) {
    vals_.resize(static_cast<std::size_t>(g.size()));
    grads_.resize(static_cast<std::size_t>(g.size()));
    has_grad_.assign(static_cast<std::size_t>(g.size()), 0);
    f64_.assign(static_cast<std::size_t>(g.size()), 0.0);
}

double Executor::value_f64(int id) const {
    const Node& n = g_->node(id);
    if (n.op == Op::Sum || n.op == Op::SumSq) return f64_[static_cast<std::size_t>(id)];
    return static_cast<double>(vals_[static_cast<std::size_t>(id)].data[0]);
}

namespace {

void im2col3(const float* x, int C, int H, int W, float* cols) {
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                float* dst = cols + ((static_cast<std::int64_t>(c) * 9) + ky * 3 + kx) * hw;
                const int dy = ky - 1, dx = kx - 1;
                for (int y = 0; y < H; ++y) {
                    float* row = dst + static_cast<std::int64_t>(y) * W;
                    const int sy = y + dy;
                    if (sy < 0 || sy >= H) {
                        std::memset(row, 0, sizeof(float) * static_cast<std::size_t>(W));
                        continue;
                    }
                    const float* src = x + (static_cast<std::int64_t>(c) * H + sy) * W;
                    int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                    if (x0 > 0) std::memset(row, 0, sizeof(float) * static_cast<std::size_t>(x0));
                    std::memcpy(row + x0, src + x0 + dx, sizeof(float) * static_cast<std::size_t>(x1 - x0));
                    if (x1 < W)
                        std::memset(row + x1, 0, sizeof(float) * static_cast<std::size_t>(W - x1));
                }
            }
        }
    }
}

void col2im3_accum(const float* cols, int C, int H, int W, float* dx) {
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const float* src = cols + ((static_cast<std::int64_t>(c) * 9) + ky * 3 + kx) * hw;
                const int dy = ky - 1, dx_ = kx - 1;
                for (int y = 0; y < H; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= H) continue;
                    const float* row = src + static_cast<std::int64_t>(y) * W;
                    float* out = dx + (static_cast<std::int64_t>(c) * H + sy) * W;
                    int x0 = std::max(0, -dx_), x1 = std::min(W, W - dx_);
                    for (int xx = x0; xx < x1; ++xx) out[xx + dx_] += row[xx];
                }
            }
        }
    }
}

inline float sigmoidf(float v) { return 1.0f / (1.0f + std::exp(-v)); }

void transpose(const float* a, std::int64_t rows, std::int64_t cols, float* at) {
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j) at[j * rows + i] = a[i * cols + j];
}

// Resize without zero-fill; callers overwrite every element.
void ensure(Tensor& t, const std::vector<int>& shape) {
    const std::size_t n = static_cast<std::size_t>(numel_of(shape));
    if (t.shape != shape || t.data.size() != n) {
        t.shape = shape;
        t.data.resize(n);
    }
}

}  // namespace

void Executor::eval_node(int id, const ParamStore& params, const InputMap& inputs) {
    const Node& n = g_->node(id);
    Tensor& out = vals_[static_cast<std::size_t>(id)];
    auto arg = [&](int i) -> const Tensor& { return vals_[static_cast<std::size_t>(n.args[static_cast<std::size_t>(i)])]; };
    switch (n.op) {
        case Op::Input: {
            auto it = inputs.find(n.name);
            if (it == inputs.end() || it->second == nullptr)
                throw UsageError("forward: input '" + n.name + "' not bound");
            if (it->second->shape != n.shape)
                throw UsageError("forward: input '" + n.name + "' has shape " +
                                 shape_str(it->second->shape) + ", expected " + shape_str(n.shape));
            out = *it->second;
            return;  // caller-provided, finiteness checked below like any node
        }
        case Op::Param: {
            auto it = params.find(n.name);
            if (it == params.end()) throw UsageError("forward: param '" + n.name + "' missing");
            if (it->second.shape != n.shape)
                throw UsageError("forward: param '" + n.name + "' has shape " +
                                 shape_str(it->second.shape) + ", expected " + shape_str(n.shape));
            out = it->second;
            return;
        }
        case Op::Constant:
            out = n.constant;
            return;
        case Op::Conv2d: {
            const Tensor& x = arg(0);
            const Tensor& w = arg(1);
            const Tensor& b = arg(2);
            const int Cin = x.shape[0], H = x.shape[1], W = x.shape[2];
            const int Cout = w.shape[0];
            const std::int64_t hw = static_cast<std::int64_t>(H) * W;
            ensure(out, n.shape);
            if (n.kernel == 1) {
                sgemm_nn(Cout, hw, Cin, w.data.data(), Cin, x.data.data(), hw, out.data.data(), hw,
                         false);
            } else {
                const std::int64_t kk = static_cast<std::int64_t>(Cin) * 9;
                cols_.resize(static_cast<std::size_t>(kk * hw));
                im2col3(x.data.data(), Cin, H, W, cols_.data());
                sgemm_nn(Cout, hw, kk, w.data.data(), kk, cols_.data(), hw, out.data.data(), hw,
                         false);
            }
            for (int c = 0; c < Cout; ++c) {
                float bc = b.data[static_cast<std::size_t>(c)];
                float* row = out.data.data() + static_cast<std::int64_t>(c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) row[i] += bc;
            }
            break;
        }
        case Op::MatMul: {
            const Tensor& w = arg(0);
            const Tensor& x = arg(1);
            const int m = w.shape[0], k = w.shape[1];
            ensure(out, n.shape);
            for (int i = 0; i < m; ++i) {
                float s = 0.0f;
                const float* wr = w.data.data() + static_cast<std::int64_t>(i) * k;
                for (int j = 0; j < k; ++j) s += wr[j] * x.data[static_cast<std::size_t>(j)];
                out.data[static_cast<std::size_t>(i)] = s;
            }
            break;
        }
        case Op::Add: {
            out = arg(0);
            const Tensor& b = arg(1);
            for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
            break;
        }
        case Op::Sub: {
            out = arg(0);
            const Tensor& b = arg(1);
            for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
            break;
        }
        case Op::Mul: {
            out = arg(0);
            const Tensor& b = arg(1);
            for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
            break;
        }
        case Op::Scale: {
            out = arg(0);
            for (float& v : out.data) v *= n.scalar;
            break;
        }
        case Op::BiasAdd: {
            out = arg(0);
            const Tensor& b = arg(1);
            const int C = out.shape[0];
            const std::int64_t hw = static_cast<std::int64_t>(out.shape[1]) * out.shape[2];
            for (int c = 0; c < C; ++c) {
                float bc = b.data[static_cast<std::size_t>(c)];
                float* row = out.data.data() + c * hw;
                for (std::int64_t i = 0; i < hw; ++i) row[i] += bc;
            }
            break;
        }
        case Op::Silu: {
            out = arg(0);
            for (float& v : out.data) v = v * sigmoidf(v);
            break;
        }
        case Op::Clamp01: {
            out = arg(0);
            for (float& v : out.data) v = std::min(1.0f, std::max(0.0f, v));
            break;
        }
        case Op::GroupNorm: {
            const Tensor& x = arg(0);
            const Tensor& gamma = arg(1);
            const Tensor& beta = arg(2);
            ensure(out, n.shape);
            const int C = x.shape[0];
            const std::int64_t hw = static_cast<std::int64_t>(x.shape[1]) * x.shape[2];
            const int cg = C / n.groups;
            const std::int64_t gn = cg * hw;
            for (int g = 0; g < n.groups; ++g) {
                const float* xg = x.data.data() + static_cast<std::int64_t>(g) * gn;
                double s = 0.0, s2 = 0.0;
                for (std::int64_t i = 0; i < gn; ++i) {
                    s += xg[i];
                    s2 += static_cast<double>(xg[i]) * xg[i];
                }
                const float mu = static_cast<float>(s / static_cast<double>(gn));
                const float var = static_cast<float>(s2 / static_cast<double>(gn)) - mu * mu;
                const float inv = 1.0f / std::sqrt(std::max(var, 0.0f) + n.eps);
                for (int cc = 0; cc < cg; ++cc) {
                    const int c = g * cg + cc;
                    const float gm = gamma.data[static_cast<std::size_t>(c)];
                    const float bt = beta.data[static_cast<std::size_t>(c)];
                    const float* xr = x.data.data() + static_cast<std::int64_t>(c) * hw;
                    float* yr = out.data.data() + static_cast<std::int64_t>(c) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) yr[i] = gm * (xr[i] - mu) * inv + bt;
                }
            }
            break;
        }
        case Op::Sum: {
            const Tensor& x = arg(0);
            ensure(out, n.shape);
            f64_[static_cast<std::size_t>(id)] = x.sum();
            out.data[0] = static_cast<float>(f64_[static_cast<std::size_t>(id)]);
            break;
        }
        case Op::SumSq: {
            const Tensor& x = arg(0);
            ensure(out, n.shape);
            f64_[static_cast<std::size_t>(id)] = x.sum_sq();
            out.data[0] = static_cast<float>(f64_[static_cast<std::size_t>(id)]);
            break;
        }
        case Op::ConcatC: {
            ensure(out, n.shape);
            std::int64_t off = 0;
            for (std::size_t a = 0; a < n.args.size(); ++a) {
                const Tensor& x = vals_[static_cast<std::size_t>(n.args[a])];
                std::memcpy(out.data.data() + off, x.data.data(), x.data.size() * sizeof(float));
                off += x.numel();
            }
            break;
        }
        case Op::Down2x: {
            const Tensor& x = arg(0);
            ensure(out, n.shape);
            const int C = n.shape[0], Ho = n.shape[1], Wo = n.shape[2];
            const int Hi = x.shape[1], Wi = x.shape[2];
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < Ho; ++y)
                    for (int xx = 0; xx < Wo; ++xx)
                        out.data[static_cast<std::size_t>((static_cast<std::int64_t>(c) * Ho + y) * Wo + xx)] =
                            x.data[static_cast<std::size_t>((static_cast<std::int64_t>(c) * Hi + 2 * y) * Wi + 2 * xx)];
            break;
        }
        case Op::Up2x: {
            const Tensor& x = arg(0);
            ensure(out, n.shape);
            const int C = n.shape[0], Ho = n.shape[1], Wo = n.shape[2];
            const int Hi = x.shape[1], Wi = x.shape[2];
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < Ho; ++y)
                    for (int xx = 0; xx < Wo; ++xx)
                        out.data[static_cast<std::size_t>((static_cast<std::int64_t>(c) * Ho + y) * Wo + xx)] =
                            x.data[static_cast<std::size_t>((static_cast<std::int64_t>(c) * Hi + y / 2) * Wi + xx / 2)];
            break;
        }
    }
    if (!all_finite(out.data.data(), out.numel()))
        throw NumericError("node " + std::to_string(id) + " (" + op_name(n.op) +
                           "): non-finite output");
}

const Tensor& Executor::forward(const ParamStore& params, const InputMap& inputs, int out) {
    if (out < 0 || out >= g_->size()) throw UsageError("forward: output node out of range");
    for (int id = 0; id < g_->size(); ++id) eval_node(id, params, inputs);
    return vals_[static_cast<std::size_t>(out)];
}

std::map<std::string, Tensor> Executor::backward(const ParamStore& params, const InputMap& inputs,
                                                 int out, const std::set<std::string>& wrt) {
    if (out < 0 || out >= g_->size()) throw UsageError("backward: output node out of range");
    if (!g_->node(out).shape.empty())
        throw UsageError("backward: output node must be scalar, has shape " +
                         shape_str(g_->node(out).shape));
    forward(params, inputs, out);

    // A node needs a gradient iff some wrt leaf can reach it.
    const int nn = g_->size();
    std::vector<char> needs(static_cast<std::size_t>(nn), 0);
    for (int id = 0; id < nn; ++id) {
        const Node& n = g_->node(id);
        if ((n.op == Op::Input || n.op == Op::Param) && wrt.count(n.name)) {
            needs[static_cast<std::size_t>(id)] = 1;
            continue;
        }
        for (int a : n.args)
            if (needs[static_cast<std::size_t>(a)]) {
                needs[static_cast<std::size_t>(id)] = 1;
                break;
            }
    }

    std::fill(has_grad_.begin(), has_grad_.end(), 0);
    auto grad_of = [&](int id) -> Tensor& {
        Tensor& t = grads_[static_cast<std::size_t>(id)];
        if (!has_grad_[static_cast<std::size_t>(id)]) {
            ensure(t, g_->node(id).shape);
            std::fill(t.data.begin(), t.data.end(), 0.0f);
            has_grad_[static_cast<std::size_t>(id)] = 1;
        }
        return t;
    };
    if (needs[static_cast<std::size_t>(out)]) grad_of(out).data[0] = 1.0f;

    for (int id = nn - 1; id >= 0; --id) {
        if (!has_grad_[static_cast<std::size_t>(id)] || !needs[static_cast<std::size_t>(id)]) continue;
        const Node& n = g_->node(id);
        const Tensor& gy = grads_[static_cast<std::size_t>(id)];
        auto want = [&](int i) { return needs[static_cast<std::size_t>(n.args[static_cast<std::size_t>(i)])] != 0; };
        auto arg_val = [&](int i) -> const Tensor& { return vals_[static_cast<std::size_t>(n.args[static_cast<std::size_t>(i)])]; };
        auto arg_grad = [&](int i) -> Tensor& { return grad_of(n.args[static_cast<std::size_t>(i)]); };
        switch (n.op) {
            case Op::Input:
            case Op::Param:
            case Op::Constant:
                break;
            case Op::Conv2d: {
                const Tensor& x = arg_val(0);
                const Tensor& w = arg_val(1);
                const int Cin = x.shape[0], H = x.shape[1], W = x.shape[2];
                const int Cout = w.shape[0];
                const std::int64_t hw = static_cast<std::int64_t>(H) * W;
                if (want(2)) {
                    Tensor& db = arg_grad(2);
                    for (int c = 0; c < Cout; ++c) {
                        const float* row = gy.data.data() + static_cast<std::int64_t>(c) * hw;
                        double s = 0.0;
                        for (std::int64_t i = 0; i < hw; ++i) s += row[i];
                        db.data[static_cast<std::size_t>(c)] += static_cast<float>(s);
                    }
                }
                if (n.kernel == 1) {
                    if (want(1))
                        sgemm_nt(Cout, Cin, hw, gy.data.data(), hw, x.data.data(), hw,
                                 arg_grad(1).data.data(), Cin, true);
                    if (want(0)) {
                        wt_.resize(static_cast<std::size_t>(Cin) * Cout);
                        transpose(w.data.data(), Cout, Cin, wt_.data());
                        sgemm_nn(Cin, hw, Cout, wt_.data(), Cout, gy.data.data(), hw,
                                 arg_grad(0).data.data(), hw, true);
                    }
                } else {
                    const std::int64_t kk = static_cast<std::int64_t>(Cin) * 9;
                    cols_.resize(static_cast<std::size_t>(kk * hw));
                    im2col3(x.data.data(), Cin, H, W, cols_.data());
                    if (want(1))
                        sgemm_nt(Cout, kk, hw, gy.data.data(), hw, cols_.data(), hw,
                                 arg_grad(1).data.data(), kk, true);
                    if (want(0)) {
                        wt_.resize(static_cast<std::size_t>(kk) * Cout);
                        transpose(w.data.data(), Cout, kk, wt_.data());
                        cols_grad_.resize(static_cast<std::size_t>(kk * hw));
                        sgemm_nn(kk, hw, Cout, wt_.data(), Cout, gy.data.data(), hw,
                                 cols_grad_.data(), hw, false);
                        col2im3_accum(cols_grad_.data(), Cin, H, W, arg_grad(0).data.data());
                    }
                }
                break;
            }
            case Op::MatMul: {
                const Tensor& w = arg_val(0);
                const Tensor& x = arg_val(1);
                const int m = w.shape[0], k = w.shape[1];
                if (want(0)) {
                    Tensor& dw = arg_grad(0);
                    for (int i = 0; i < m; ++i) {
                        const float g = gy.data[static_cast<std::size_t>(i)];
                        float* row = dw.data.data() + static_cast<std::int64_t>(i) * k;
                        for (int j = 0; j < k; ++j) row[j] += g * x.data[static_cast<std::size_t>(j)];
                    }
                }
                if (want(1)) {
                    Tensor& dx = arg_grad(1);
                    for (int i = 0; i < m; ++i) {
                        const float g = gy.data[static_cast<std::size_t>(i)];
                        const float* row = w.data.data() + static_cast<std::int64_t>(i) * k;
                        for (int j = 0; j < k; ++j) dx.data[static_cast<std::size_t>(j)] += g * row[j];
                    }
                }
                break;
            }
            case Op::Add: {
                for (int a = 0; a < 2; ++a)
                    if (want(a)) {
                        Tensor& d = arg_grad(a);
                        for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += gy.data[i];
                    }
                break;
            }
            case Op::Sub: {
                if (want(0)) {
                    Tensor& d = arg_grad(0);
                    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += gy.data[i];
                }
                if (want(1)) {
                    Tensor& d = arg_grad(1);
                    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] -= gy.data[i];
                }
                break;
            }
            case Op::Mul: {
                if (want(0)) {
                    Tensor& d = arg_grad(0);
                    const Tensor& b = arg_val(1);
                    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += gy.data[i] * b.data[i];
                }
                if (want(1)) {
                    Tensor& d = arg_grad(1);
                    const Tensor& a = arg_val(0);
                    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += gy.data[i] * a.data[i];
                }
                break;
            }
            case Op::Scale: {
                if (want(0)) {
                    Tensor& d = arg_grad(0);
                    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += n.scalar * gy.data[i];
                }
                break;
            }
            case Op::BiasAdd: {
                const int C = n.shape[0];
                const std::int64_t hw = static_cast<std::int64_t>(n.shape[1]) * n.shape[2];
                if (want(0)) {
                    Tensor& d = arg_grad(0);
                    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += gy.data[i];
                }
                if (want(1)) {
                    Tensor& db = arg_grad(1);
                    for (int c = 0; c < C; ++c) {
                        const float* row = gy.data.data() + c * hw;
                        double s = 0.0;
                        for (std::int64_t i = 0; i < hw; ++i) s += row[i];
                        db.data[static_cast<std::size_t>(c)] += static_cast<float>(s);
                    }
                }
                break;
            }
            case Op::Silu: {
                if (want(0)) {
                    Tensor& d = arg_grad(0);
                    const Tensor& x = arg_val(0);
                    for (std::size_t i = 0; i < d.data.size(); ++i) {
                        const float s = sigmoidf(x.data[i]);
                        d.data[i] += gy.data[i] * s * (1.0f + x.data[i] * (1.0f - s));
                    }
                }
                break;
            }
            case Op::Clamp01: {
                if (want(0)) {
                    Tensor& d = arg_grad(0);
                    const Tensor& x = arg_val(0);
                    for (std::size_t i = 0; i < d.data.size(); ++i)
                        if (x.data[i] > 0.0f && x.data[i] < 1.0f) d.data[i] += gy.data[i];
                }
                break;
            }
            case Op::GroupNorm: {
                const Tensor& x = arg_val(0);
                const Tensor& gamma = arg_val(1);
                const int C = x.shape[0];
                const std::int64_t hw = static_cast<std::int64_t>(x.shape[1]) * x.shape[2];
                const int cg = C / n.groups;
                const std::int64_t gn = cg * hw;
                for (int g = 0; g < n.groups; ++g) {
                    const float* xg = x.data.data() + static_cast<std::int64_t>(g) * gn;
                    double s = 0.0, s2 = 0.0;
                    for (std::int64_t i = 0; i < gn; ++i) {
                        s += xg[i];
                        s2 += static_cast<double>(xg[i]) * xg[i];
                    }
                    const float mu = static_cast<float>(s / static_cast<double>(gn));
                    const float var = static_cast<float>(s2 / static_cast<double>(gn)) - mu * mu;
                    const float inv = 1.0f / std::sqrt(std::max(var, 0.0f) + n.eps);
                    // dgamma/dbeta
                    for (int cc = 0; cc < cg; ++cc) {
                        const int c = g * cg + cc;
                        const float* xr = x.data.data() + static_cast<std::int64_t>(c) * hw;
                        const float* gr = gy.data.data() + static_cast<std::int64_t>(c) * hw;
                        if (want(1)) {
                            double dg = 0.0;
                            for (std::int64_t i = 0; i < hw; ++i)
                                dg += static_cast<double>(gr[i]) * (xr[i] - mu) * inv;
                            arg_grad(1).data[static_cast<std::size_t>(c)] += static_cast<float>(dg);
                        }
                        if (want(2)) {
                            double db = 0.0;
                            for (std::int64_t i = 0; i < hw; ++i) db += gr[i];
                            arg_grad(2).data[static_cast<std::size_t>(c)] += static_cast<float>(db);
                        }
                    }
                    if (want(0)) {
                        double m1 = 0.0, m2 = 0.0;
                        for (int cc = 0; cc < cg; ++cc) {
                            const int c = g * cg + cc;
                            const float gm = gamma.data[static_cast<std::size_t>(c)];
                            const float* xr = x.data.data() + static_cast<std::int64_t>(c) * hw;
                            const float* gr = gy.data.data() + static_cast<std::int64_t>(c) * hw;
                            for (std::int64_t i = 0; i < hw; ++i) {
                                const float dxh = gr[i] * gm;
                                m1 += dxh;
                                m2 += static_cast<double>(dxh) * (xr[i] - mu) * inv;
                            }
                        }
                        m1 /= static_cast<double>(gn);
                        m2 /= static_cast<double>(gn);
                        Tensor& dx = arg_grad(0);
                        for (int cc = 0; cc < cg; ++cc) {
                            const int c = g * cg + cc;
                            const float gm = gamma.data[static_cast<std::size_t>(c)];
                            const float* xr = x.data.data() + static_cast<std::int64_t>(c) * hw;
                            const float* gr = gy.data.data() + static_cast<std::int64_t>(c) * hw;
                            float* dr = dx.data.data() + static_cast<std::int64_t>(c) * hw;
                            for (std::int64_t i = 0; i < hw; ++i) {
                                const float xh = (xr[i] - mu) * inv;
                                const float dxh = gr[i] * gm;
                                dr[i] += (dxh - static_cast<float>(m1) - xh * static_cast<float>(m2)) * inv;
                            }
                        }
                    }
                }
                break;
            }
            case Op::Sum: {
                if (want(0)) {
                    Tensor& d = arg_grad(0);
                    const float g = gy.data[0];
                    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += g;
                }
                break;
            }
            case Op::SumSq: {
                if (want(0)) {
                    Tensor& d = arg_grad(0);
                    const Tensor& x = arg_val(0);
                    const float g = gy.data[0];
                    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += 2.0f * g * x.data[i];
                }
                break;
            }
            case Op::ConcatC: {
                std::int64_t off = 0;
                for (std::size_t a = 0; a < n.args.size(); ++a) {
                    const Tensor& xa = vals_[static_cast<std::size_t>(n.args[a])];
                    if (needs[static_cast<std::size_t>(n.args[a])]) {
                        Tensor& d = grad_of(n.args[a]);
                        for (std::int64_t i = 0; i < xa.numel(); ++i)
                            d.data[static_cast<std::size_t>(i)] += gy.data[static_cast<std::size_t>(off + i)];
                    }
                    off += xa.numel();
                }
                break;
            }
            case Op::Down2x: {
                if (want(0)) {
                    Tensor& d = arg_grad(0);
                    const int C = n.shape[0], Ho = n.shape[1], Wo = n.shape[2];
                    const int Hi = d.shape[1], Wi = d.shape[2];
                    for (int c = 0; c < C; ++c)
                        for (int y = 0; y < Ho; ++y)
                            for (int xx = 0; xx < Wo; ++xx)
                                d.data[static_cast<std::size_t>((static_cast<std::int64_t>(c) * Hi + 2 * y) * Wi + 2 * xx)] +=
                                    gy.data[static_cast<std::size_t>((static_cast<std::int64_t>(c) * Ho + y) * Wo + xx)];
                }
                break;
            }
            case Op::Up2x: {
                if (want(0)) {
                    Tensor& d = arg_grad(0);
                    const int C = n.shape[0], Ho = n.shape[1], Wo = n.shape[2];
                    const int Hi = d.shape[1], Wi = d.shape[2];
                    for (int c = 0; c < C; ++c)
                        for (int y = 0; y < Ho; ++y)
                            for (int xx = 0; xx < Wo; ++xx)
                                d.data[static_cast<std::size_t>((static_cast<std::int64_t>(c) * Hi + y / 2) * Wi + xx / 2)] +=
                                    gy.data[static_cast<std::size_t>((static_cast<std::int64_t>(c) * Ho + y) * Wo + xx)];
                }
                break;
            }
        }
    }

    std::map<std::string, Tensor> out_grads;
    for (int id = 0; id < nn; ++id) {
        const Node& n = g_->node(id);
        if ((n.op == Op::Input || n.op == Op::Param) && wrt.count(n.name)) {
            Tensor g = has_grad_[static_cast<std::size_t>(id)] ? grads_[static_cast<std::size_t>(id)]
                                                               : Tensor::zeros(n.shape);
            g.check_finite("gradient of '" + n.name + "'");
            out_grads[n.name] = std::move(g);
        }
    }
    for (const std::string& w : wrt)
        if (!out_grads.count(w)) throw UsageError("backward: unknown leaf '" + w + "'");
    return out_grads;
}

double forward_f64(const Graph& g, const ParamStore& params, const NamedTensors& inputs,
                   int out) {
    if (out < 0 || out >= g.size()) throw UsageError("forward_f64: output node out of range");
    std::vector<std::vector<double>> vals(static_cast<std::size_t>(g.size()));
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    for (int id = 0; id <= out; ++id) {
        const Node& n = g.node(id);
        std::vector<double>& o = vals[static_cast<std::size_t>(id)];
        auto arg = [&](int i) -> const std::vector<double>& {
            return vals[static_cast<std::size_t>(n.args[static_cast<std::size_t>(i)])];
        };
        auto shp = [&](int i) -> const std::vector<int>& {
            return g.node(n.args[static_cast<std::size_t>(i)]).shape;
        };
        switch (n.op) {
            case Op::Input: {
                auto it = inputs.values.find(n.name);
                if (it == inputs.values.end())
                    throw UsageError("forward_f64: input '" + n.name + "' not bound");
                o.assign(it->second.data.begin(), it->second.data.end());
                break;
            }
            case Op::Param: {
                const Tensor& t = params.at(n.name);
                o.assign(t.data.begin(), t.data.end());
                break;
            }
            case Op::Constant:
                o.assign(n.constant.data.begin(), n.constant.data.end());
                break;
            case Op::Conv2d: {
                const auto& x = arg(0);
                const auto& w = arg(1);
                const auto& b = arg(2);
                const int Cin = shp(0)[0], H = shp(0)[1], W = shp(0)[2];
                const int Cout = n.shape[0];
                const int k = n.kernel, pad = k / 2;
                o.assign(static_cast<std::size_t>(Cout) * H * W, 0.0);
                for (int co = 0; co < Cout; ++co)
                    for (int y = 0; y < H; ++y)
                        for (int x2 = 0; x2 < W; ++x2) {
                            double s = b[static_cast<std::size_t>(co)];
                            for (int ci = 0; ci < Cin; ++ci)
                                for (int ky = 0; ky < k; ++ky)
                                    for (int kx = 0; kx < k; ++kx) {
                                        const int sy = y + ky - pad, sx = x2 + kx - pad;
                                        if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                                        s += w[static_cast<std::size_t>(((co * Cin + ci) * k + ky) * k + kx)] *
                                             x[static_cast<std::size_t>((ci * H + sy) * W + sx)];
                                    }
                            o[static_cast<std::size_t>((co * H + y) * W + x2)] = s;
                        }
                break;
            }
            case Op::MatMul: {
                const auto& w = arg(0);
                const auto& x = arg(1);
                const int m = n.shape[0], k = shp(1)[0];
                o.assign(static_cast<std::size_t>(m), 0.0);
                for (int i = 0; i < m; ++i) {
                    double s = 0.0;
                    for (int j = 0; j < k; ++j)
                        s += w[static_cast<std::size_t>(i * k + j)] * x[static_cast<std::size_t>(j)];
                    o[static_cast<std::size_t>(i)] = s;
                }
                break;
            }
            case Op::Add: {
                o = arg(0);
                const auto& b = arg(1);
                for (std::size_t i = 0; i < o.size(); ++i) o[i] += b[i];
                break;
            }
            case Op::Sub: {
                o = arg(0);
                const auto& b = arg(1);
                for (std::size_t i = 0; i < o.size(); ++i) o[i] -= b[i];
                break;
            }
            case Op::Mul: {
                o = arg(0);
                const auto& b = arg(1);
                for (std::size_t i = 0; i < o.size(); ++i) o[i] *= b[i];
                break;
            }
            case Op::Scale: {
                o = arg(0);
                for (double& v : o) v *= n.scalar;
                break;
            }
            case Op::BiasAdd: {
                o = arg(0);
                const auto& b = arg(1);
                const int C = n.shape[0];
                const std::int64_t hw = static_cast<std::int64_t>(n.shape[1]) * n.shape[2];
                for (int c = 0; c < C; ++c)
                    for (std::int64_t i = 0; i < hw; ++i)
                        o[static_cast<std::size_t>(c * hw + i)] += b[static_cast<std::size_t>(c)];
                break;
            }
            case Op::Silu: {
                o = arg(0);
                for (double& v : o) v = v * sig(v);
                break;
            }
            case Op::Clamp01: {
                o = arg(0);
                for (double& v : o) v = std::min(1.0, std::max(0.0, v));
                break;
            }
            case Op::GroupNorm: {
                const auto& x = arg(0);
                const auto& gamma = arg(1);
                const auto& beta = arg(2);
                const int C = n.shape[0];
                const std::int64_t hw = static_cast<std::int64_t>(n.shape[1]) * n.shape[2];
                const int cg = C / n.groups;
                const std::int64_t gn = cg * hw;
                o.assign(x.size(), 0.0);
                for (int grp = 0; grp < n.groups; ++grp) {
                    double s = 0.0, s2 = 0.0;
                    for (std::int64_t i = 0; i < gn; ++i) {
                        const double v = x[static_cast<std::size_t>(grp * gn + i)];
                        s += v;
                        s2 += v * v;
                    }
                    const double mu = s / static_cast<double>(gn);
                    const double var = s2 / static_cast<double>(gn) - mu * mu;
                    const double inv = 1.0 / std::sqrt(std::max(var, 0.0) + n.eps);
                    for (int cc = 0; cc < cg; ++cc) {
                        const int c = grp * cg + cc;
                        for (std::int64_t i = 0; i < hw; ++i)
                            o[static_cast<std::size_t>(c * hw + i)] =
                                gamma[static_cast<std::size_t>(c)] *
                                    (x[static_cast<std::size_t>(c * hw + i)] - mu) * inv +
                                beta[static_cast<std::size_t>(c)];
                    }
                }
                break;
            }
            case Op::Sum: {
                const auto& x = arg(0);
                double s = 0.0;
                for (double v : x) s += v;
                o.assign(1, s);
                break;
            }
            case Op::SumSq: {
                const auto& x = arg(0);
                double s = 0.0;
                for (double v : x) s += v * v;
                o.assign(1, s);
                break;
            }
            case Op::ConcatC: {
                o.clear();
                for (std::size_t a = 0; a < n.args.size(); ++a) {
                    const auto& x = vals[static_cast<std::size_t>(n.args[a])];
                    o.insert(o.end(), x.begin(), x.end());
                }
                break;
            }
            case Op::Down2x: {
                const auto& x = arg(0);
                const int C = n.shape[0], Ho = n.shape[1], Wo = n.shape[2];
                const int Hi = shp(0)[1], Wi = shp(0)[2];
                o.assign(static_cast<std::size_t>(C) * Ho * Wo, 0.0);
                for (int c = 0; c < C; ++c)
                    for (int y = 0; y < Ho; ++y)
                        for (int x2 = 0; x2 < Wo; ++x2)
                            o[static_cast<std::size_t>((c * Ho + y) * Wo + x2)] =
                                x[static_cast<std::size_t>((c * Hi + 2 * y) * Wi + 2 * x2)];
                break;
            }
            case Op::Up2x: {
                const auto& x = arg(0);
                const int C = n.shape[0], Ho = n.shape[1], Wo = n.shape[2];
                const int Hi = shp(0)[1], Wi = shp(0)[2];
                o.assign(static_cast<std::size_t>(C) * Ho * Wo, 0.0);
                for (int c = 0; c < C; ++c)
                    for (int y = 0; y < Ho; ++y)
                        for (int x2 = 0; x2 < Wo; ++x2)
                            o[static_cast<std::size_t>((c * Ho + y) * Wo + x2)] =
                                x[static_cast<std::size_t>((c * Hi + y / 2) * Wi + x2 / 2)];
                break;
            }
        }
    }
    if (!g.node(out).shape.empty()) throw UsageError("forward_f64: output must be scalar");
    return vals[static_cast<std::size_t>(out)][0];
}

std::map<std::string, Tensor> finite_diff_grad(const Graph& g, const ParamStore& params,
                                               const NamedTensors& inputs, int out,
                                               const std::set<std::string>& wrt, float h) {
    if (h <= 0.0f) throw UsageError("finite_diff_grad: h must be > 0");
    if (!g.node(out).shape.empty()) throw UsageError("finite_diff_grad: output must be scalar");
    ParamStore p = params;
    NamedTensors in = inputs;
    auto eval = [&]() { return forward_f64(g, p, in, out); };
    std::map<std::string, Tensor> grads;
    for (const std::string& name : wrt) {
        Tensor* leaf = nullptr;
        if (auto it = p.find(name); it != p.end()) leaf = &it->second;
        if (auto it = in.values.find(name); it != in.values.end()) leaf = &it->second;
        if (!leaf) throw UsageError("finite_diff_grad: unknown leaf '" + name + "'");
        Tensor grad = Tensor::zeros(leaf->shape);
        for (std::size_t i = 0; i < leaf->data.size(); ++i) {
            const float saved = leaf->data[i];
            leaf->data[i] = saved + h;
            const double fp = eval();
            leaf->data[i] = saved - h;
            const double fm = eval();
            leaf->data[i] = saved;
            grad.data[i] = static_cast<float>((fp - fm) / (2.0 * h));
        }
        grads[name] = std::move(grad);
    }
    return grads;
}

}  // namespace pxs
