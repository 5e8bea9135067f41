#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "pixelshield/tensor.hpp"

namespace pxs {

// Primitive set is fixed to what the denoiser and the attack losses need.
enum class Op {
    Input,      // external input leaf, bound at execution time
    Param,      // trainable parameter leaf, read from a ParamStore
    Constant,   // tensor baked into the graph
    Conv2d,     // args: x [Cin,H,W], w [Cout,Cin,k,k], b [Cout]; k in {1,3}, stride 1, pad k/2
    MatMul,     // args: w [m,n], x [n] -> [m]
    Add,        // elementwise, same shape
    Sub,        //
    Mul,        //
    Scale,      // x * scalar
    BiasAdd,    // x [C,H,W] + b [C] broadcast over H,W
    Silu,       // x * sigmoid(x)
    Clamp01,    // clamp to [0,1]; pass-through subgradient inside
    GroupNorm,  // args: x [C,H,W], gamma [C], beta [C]; normalize per group
    Sum,        // sum of all elements -> scalar []
    SumSq,      // sum of squares -> scalar []
    ConcatC,    // concat along channel axis
    Down2x,     // nearest-neighbor downsample by 2
    Up2x,       // nearest-neighbor upsample by 2
};

const char* op_name(Op op);

struct Node {
    Op op;
    std::vector<int> args;
    std::vector<int> shape;
    std::string name;     // Input/Param leaf name
    float scalar = 0.0f;  // Scale
    int kernel = 0;       // Conv2d
    int groups = 0;       // GroupNorm
    float eps = 0.0f;     // GroupNorm
    Tensor constant;      // Constant
};

using ParamStore = std::map<std::string, Tensor>;

// Acyclic by construction: node arguments must already exist, so the node
// vector is stored in topological order.
class Graph {
public:
    int input(const std::string& name, const std::vector<int>& shape);
    int param(const std::string& name, const std::vector<int>& shape);
    int constant(Tensor value);
    int conv2d(int x, int w, int b, int kernel);
    int matmul(int w, int x);
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int scale(int x, float c);
    int bias_add(int x, int b);
    int silu(int x);
    int clamp01(int x);
    int group_norm(int x, int gamma, int beta, int groups, float eps = 1e-5f);
    int sum(int x);
    int sum_sq(int x);
    int concat_c(const std::vector<int>& xs);
    int down2x(int x);
    int up2x(int x);

    // Appends a copy of `other`; Input leaves are replaced per `bindings`
    // (name -> node id in this graph), Param leaves are shared by name.
    // Returns the id that `other_output` maps to.
    int inline_graph(const Graph& other, int other_output,
                     const std::map<std::string, int>& bindings);

    const std::vector<Node>& nodes() const { return nodes_; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    int size() const { return static_cast<int>(nodes_.size()); }

    // Declared parameter leaves in declaration order: (name, shape).
    std::vector<std::pair<std::string, std::vector<int>>> param_leaves() const;

private:
    int push(Node n);
    const std::vector<int>& shape_of(int id) const;
    std::vector<Node> nodes_;
    std::map<std::string, int> param_ids_;
    std::map<std::string, int> input_ids_;
};

struct NamedTensors {
    std::map<std::string, Tensor> values;
};

using InputMap = std::map<std::string, const Tensor*>;

// Executes a graph. Holds per-node value/gradient buffers so repeated calls
// on the same graph reuse memory. One executor per thread.
class Executor {
public:
    explicit Executor(const Graph& g);

    // Evaluates every node; returns the value of `out`. Deterministic for
    // identical inputs. Throws NumericError (with node id) on non-finite
    // intermediates, UsageError on unbound inputs.
    const Tensor& forward(const ParamStore& params, const InputMap& inputs, int out);

    // Reverse-mode gradients of scalar node `out` w.r.t. the named leaves.
    std::map<std::string, Tensor> backward(const ParamStore& params, const InputMap& inputs,
                                           int out, const std::set<std::string>& wrt);

    const Tensor& value(int id) const { return vals_[static_cast<std::size_t>(id)]; }

    // Full-precision readout for scalar reductions (Sum/SumSq accumulate in
    // double); falls back to the f32 value for other nodes.
    double value_f64(int id) const;

private:
    void eval_node(int id, const ParamStore& params, const InputMap& inputs);
    const Graph* g_;
    std::vector<Tensor> vals_;
    std::vector<Tensor> grads_;
    std::vector<char> has_grad_;
    std::vector<float> cols_;      // im2col scratch
    std::vector<float> cols_grad_;
    std::vector<float> wt_;        // weight transpose scratch
    std::vector<double> f64_;      // double readouts for scalar reductions
};

// Double-precision reference evaluation of a scalar graph output. Slow,
// used only by the finite-difference oracle so its probes are not limited by
// f32 forward rounding.
double forward_f64(const Graph& g, const ParamStore& params, const NamedTensors& inputs, int out);

// Central-difference gradient oracle: (f(x+h) - f(x-h)) / (2h) per
// coordinate of every leaf in `wrt`, with f evaluated in double precision.
std::map<std::string, Tensor> finite_diff_grad(const Graph& g, const ParamStore& params,
                                               const NamedTensors& inputs, int out,
                                               const std::set<std::string>& wrt, float h);

}  // namespace pxs
