#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "pixelshield/checkpoint.hpp"
#include "pixelshield/graph.hpp"
#include "pixelshield/optimizer.hpp"
#include "pixelshield/rng.hpp"

using namespace pxs;

namespace {

// Relative-error gradient comparison with an absolute floor for near-zero
// entries (f32 precision budget).
void check_grads_close(const Tensor& got, const Tensor& want, double rel_tol,
                       double abs_floor = 1e-4) {
    REQUIRE(got.shape == want.shape);
    for (std::size_t i = 0; i < got.data.size(); ++i) {
        const double g = got.data[i], w = want.data[i];
        const double err = std::fabs(g - w);
        const double scale = std::max({std::fabs(g), std::fabs(w), abs_floor / rel_tol});
        CHECK(err <= rel_tol * scale);
    }
}

}  // namespace

TEST_CASE("forward: elementwise add") {
    Graph g;
    int a = g.input("a", {2});
    int b = g.input("b", {2});
    int out = g.add(a, b);
    Tensor ta({2}, {1, 2}), tb({2}, {3, 4});
    Executor ex(g);
    const Tensor& r = ex.forward({}, {{"a", &ta}, {"b", &tb}}, out);
    CHECK(r.data[0] == 4.0f);
    CHECK(r.data[1] == 6.0f);
}

TEST_CASE("forward: sum of squares") {
    Graph g;
    int x = g.input("x", {2});
    int out = g.sum_sq(x);
    Tensor tx({2}, {3, 4});
    Executor ex(g);
    CHECK(ex.forward({}, {{"x", &tx}}, out).data[0] == 25.0f);
}

TEST_CASE("forward: 1x1 conv, weight 2 bias 0, constant 0.5 image") {
    Graph g;
    int x = g.input("x", {1, 4, 4});
    int w = g.param("w", {1, 1, 1, 1});
    int b = g.param("b", {1});
    int out = g.conv2d(x, w, b, 1);
    ParamStore p;
    p["w"] = Tensor({1, 1, 1, 1}, {2.0f});
    p["b"] = Tensor({1}, {0.0f});
    Tensor tx = Tensor::full({1, 4, 4}, 0.5f);
    Executor ex(g);
    const Tensor& r = ex.forward(p, {{"x", &tx}}, out);
    for (float v : r.data) CHECK(v == 1.0f);
}

TEST_CASE("forward: deterministic bit-identical repeats") {
    Graph g;
    int x = g.input("x", {1, 8, 8});
    int w = g.param("w", {4, 1, 3, 3});
    int b = g.param("b", {4});
    int gamma = g.param("g", {4});
    int beta = g.param("bt", {4});
    int out = g.sum_sq(g.silu(g.group_norm(g.conv2d(x, w, b, 3), gamma, beta, 2)));
    ParamStore p;
    Rng rng(11);
    p["w"] = rng.normal_tensor({4, 1, 3, 3});
    p["b"] = rng.normal_tensor({4});
    p["g"] = Tensor::full({4}, 1.0f);
    p["bt"] = Tensor::zeros({4});
    Tensor tx = rng.normal_tensor({1, 8, 8});
    Executor ex1(g), ex2(g);
    const Tensor r1 = ex1.forward(p, {{"x", &tx}}, out);
    const Tensor r2 = ex2.forward(p, {{"x", &tx}}, out);
    CHECK(r1.data == r2.data);
}

TEST_CASE("errors: shape mismatch at construction names the node") {
    Graph g;
    int a = g.input("a", {2});
    int b = g.input("b", {3});
    CHECK_THROWS_AS(g.add(a, b), GraphError);
    try {
        g.add(a, b);
    } catch (const GraphError& e) {
        CHECK(std::string(e.what()).find("node") != std::string::npos);
    }
}

TEST_CASE("errors: non-finite intermediate raises NumericError with node id") {
    Graph g;
    int x = g.input("x", {2});
    int big = g.scale(x, 3e38f);
    int out = g.sum_sq(g.mul(big, big));
    (void)out;
    Tensor tx({2}, {1.0f, 1.0f});
    Executor ex(g);
    CHECK_THROWS_AS(ex.forward({}, {{"x", &tx}}, out), NumericError);
}

TEST_CASE("backward: sum(x^2) gives 2x") {
    Graph g;
    int x = g.input("x", {3});
    int out = g.sum_sq(x);
    Tensor tx({3}, {1, 2, 3});
    Executor ex(g);
    auto grads = ex.backward({}, {{"x", &tx}}, out, {"x"});
    CHECK(grads.at("x").data == std::vector<float>{2, 4, 6});
}

TEST_CASE("backward: sum(x) gives ones") {
    Graph g;
    int x = g.input("x", {5});
    int out = g.sum(x);
    Rng rng(3);
    Tensor tx = rng.normal_tensor({5});
    Executor ex(g);
    auto grads = ex.backward({}, {{"x", &tx}}, out, {"x"});
    for (float v : grads.at("x").data) CHECK(v == 1.0f);
}

TEST_CASE("backward: non-scalar output is a usage error") {
    Graph g;
    int x = g.input("x", {3});
    int y = g.scale(x, 2.0f);
    Tensor tx({3}, {1, 2, 3});
    Executor ex(g);
    CHECK_THROWS_AS(ex.backward({}, {{"x", &tx}}, y, {"x"}), UsageError);
}

TEST_CASE("backward linearity: grad of summed losses equals sum of grads") {
    Graph g;
    int x = g.input("x", {4});
    int l1 = g.sum_sq(x);
    int l2 = g.sum(g.mul(x, x == x ? g.scale(x, 0.5f) : x));
    int both = g.add(l1, l2);
    Rng rng(5);
    Tensor tx = rng.normal_tensor({4});
    Executor ex(g);
    auto g1 = ex.backward({}, {{"x", &tx}}, l1, {"x"});
    auto g2 = ex.backward({}, {{"x", &tx}}, l2, {"x"});
    auto gb = ex.backward({}, {{"x", &tx}}, both, {"x"});
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(gb.at("x").data[i] ==
              doctest::Approx(g1.at("x").data[i] + g2.at("x").data[i]).epsilon(1e-5));
}

TEST_CASE("finite differences: quadratic is exact, cubic close, constant zero") {
    {
        Graph g;
        int x = g.input("x", {1});
        int out = g.sum_sq(x);
        NamedTensors in;
        in.values["x"] = Tensor({1}, {1.0f});
        auto fd = finite_diff_grad(g, {}, in, out, {"x"}, 1e-3f);
        // Central differences are exact on quadratics; the residual is f32
        // rounding of the two evaluations (well under the 1e-4 grad floor).
        CHECK(std::fabs(fd.at("x").data[0] - 2.0) < 1e-4);
    }
    {
        Graph g;
        int x = g.input("x", {1});
        int out = g.sum(g.mul(g.mul(x, x), x));
        NamedTensors in;
        in.values["x"] = Tensor({1}, {2.0f});
        auto fd = finite_diff_grad(g, {}, in, out, {"x"}, 1e-3f);
        CHECK(std::fabs(fd.at("x").data[0] - 12.0) < 1e-3);
    }
    {
        Graph g;
        int x = g.input("x", {3});
        int c = g.constant(Tensor({2}, {1.0f, 2.0f}));
        int out = g.sum(c);
        (void)x;
        NamedTensors in;
        in.values["x"] = Tensor({3}, {1, 2, 3});
        auto fd = finite_diff_grad(g, {}, in, out, {"x"}, 1e-3f);
        for (float v : fd.at("x").data) CHECK(v == 0.0f);
    }
}

TEST_CASE("gradcheck: every primitive matches central differences") {
    // Random inputs in [-1,1], rel err < 1e-2 with absolute floor 1e-4.
    Rng rng(99);
    auto check_graph = [&](Graph& g, int out, ParamStore p, NamedTensors in,
                           const std::set<std::string>& wrt) {
        Executor ex(g);
        InputMap im;
        for (auto& kv : in.values) im[kv.first] = &kv.second;
        auto an = ex.backward(p, im, out, wrt);
        auto fd = finite_diff_grad(g, p, in, out, wrt, 1e-3f);
        for (const auto& name : wrt) check_grads_close(an.at(name), fd.at(name), 1e-2);
    };

    {  // conv3x3 + bias (x, w, b); small extents keep the fd oracle's own
       // f32 noise under the comparison floor
        Graph g;
        int x = g.input("x", {1, 4, 4});
        int w = g.param("w", {2, 1, 3, 3});
        int b = g.param("b", {2});
        int out = g.sum_sq(g.conv2d(x, w, b, 3));
        ParamStore p;
        p["w"] = rng.uniform_tensor({2, 1, 3, 3}, -0.5f, 0.5f);
        p["b"] = rng.uniform_tensor({2}, -0.5f, 0.5f);
        NamedTensors in;
        in.values["x"] = rng.uniform_tensor({1, 4, 4}, -1, 1);
        check_graph(g, out, p, in, {"x", "w", "b"});
    }
    {  // conv1x1
        Graph g;
        int x = g.input("x", {2, 3, 3});
        int w = g.param("w", {2, 2, 1, 1});
        int b = g.param("b", {2});
        int out = g.sum_sq(g.conv2d(x, w, b, 1));
        ParamStore p;
        p["w"] = rng.uniform_tensor({2, 2, 1, 1}, -1, 1);
        p["b"] = rng.uniform_tensor({2}, -1, 1);
        NamedTensors in;
        in.values["x"] = rng.uniform_tensor({2, 3, 3}, -1, 1);
        check_graph(g, out, p, in, {"x", "w", "b"});
    }
    {  // matmul
        Graph g;
        int w = g.param("w", {3, 4});
        int x = g.input("x", {4});
        int out = g.sum_sq(g.matmul(w, x));
        ParamStore p;
        p["w"] = rng.uniform_tensor({3, 4}, -1, 1);
        NamedTensors in;
        in.values["x"] = rng.uniform_tensor({4}, -1, 1);
        check_graph(g, out, p, in, {"w", "x"});
    }
    {  // add/sub/mul/scale
        Graph g;
        int a = g.input("a", {5});
        int b = g.input("b", {5});
        int out = g.sum_sq(g.scale(g.mul(g.add(a, b), g.sub(a, b)), 0.7f));
        NamedTensors in;
        in.values["a"] = rng.uniform_tensor({5}, -1, 1);
        in.values["b"] = rng.uniform_tensor({5}, -1, 1);
        check_graph(g, out, {}, in, {"a", "b"});
    }
    {  // bias_add + silu
        Graph g;
        int x = g.input("x", {2, 3, 3});
        int b = g.param("b", {2});
        int out = g.sum_sq(g.silu(g.bias_add(x, b)));
        ParamStore p;
        p["b"] = rng.uniform_tensor({2}, -1, 1);
        NamedTensors in;
        in.values["x"] = rng.uniform_tensor({2, 3, 3}, -1, 1);
        check_graph(g, out, p, in, {"x", "b"});
    }
    {  // group norm
        Graph g;
        int x = g.input("x", {4, 2, 2});
        int gamma = g.param("g", {4});
        int beta = g.param("bt", {4});
        int out = g.sum_sq(g.group_norm(x, gamma, beta, 2));
        ParamStore p;
        p["g"] = rng.uniform_tensor({4}, 0.5f, 1.5f);
        p["bt"] = rng.uniform_tensor({4}, -0.5f, 0.5f);
        NamedTensors in;
        in.values["x"] = rng.uniform_tensor({4, 2, 2}, -1, 1);
        check_graph(g, out, p, in, {"x", "g", "bt"});
    }
    {  // concat + down + up + sum
        Graph g;
        int a = g.input("a", {1, 4, 4});
        int b = g.input("b", {2, 4, 4});
        int cat = g.concat_c({a, b});
        int out = g.sum(g.mul(g.up2x(g.down2x(cat)), cat));
        NamedTensors in;
        in.values["a"] = rng.uniform_tensor({1, 4, 4}, -1, 1);
        in.values["b"] = rng.uniform_tensor({2, 4, 4}, -1, 1);
        check_graph(g, out, {}, in, {"a", "b"});
    }
}

TEST_CASE("gradcheck: small two-layer conv net vs finite differences") {
    Rng rng(123);
    Graph g;
    int x = g.input("x", {1, 5, 5});
    int w1 = g.param("w1", {3, 1, 3, 3});
    int b1 = g.param("b1", {3});
    int w2 = g.param("w2", {1, 3, 3, 3});
    int b2 = g.param("b2", {1});
    int h = g.silu(g.conv2d(x, w1, b1, 3));
    int out = g.sum_sq(g.conv2d(h, w2, b2, 3));
    ParamStore p;
    p["w1"] = rng.uniform_tensor({3, 1, 3, 3}, -0.5f, 0.5f);
    p["b1"] = rng.uniform_tensor({3}, -0.2f, 0.2f);
    p["w2"] = rng.uniform_tensor({1, 3, 3, 3}, -0.5f, 0.5f);
    p["b2"] = rng.uniform_tensor({1}, -0.2f, 0.2f);
    NamedTensors in;
    in.values["x"] = rng.uniform_tensor({1, 5, 5}, -1, 1);
    Executor ex(g);
    InputMap im{{"x", &in.values.at("x")}};
    auto an = ex.backward(p, im, out, {"w1", "b1", "w2", "b2", "x"});
    auto fd = finite_diff_grad(g, p, in, out, {"w1", "b1", "w2", "b2", "x"}, 1e-3f);
    for (const auto& [name, grad] : an) check_grads_close(grad, fd.at(name), 1e-2);
}

TEST_CASE("optimizer: zero gradient leaves params unchanged") {
    ParamStore p;
    p["w"] = Tensor({3}, {1.0f, -2.0f, 0.5f});
    std::map<std::string, Tensor> g;
    g["w"] = Tensor::zeros({3});
    OptimizerState st;
    const Tensor before = p["w"];
    optimizer_step(p, g, st);
    optimizer_step(p, g, st);
    CHECK(p["w"].data == before.data);
    CHECK(st.step_count == 2);
}

TEST_CASE("optimizer: first step moves by about lr") {
    // Bias-corrected first step: m_hat = g, v_hat = g^2,
    // delta = lr * g / (|g| + eps) ~= lr * sign(g).
    ParamStore p;
    p["w"] = Tensor({2}, {0.0f, 0.0f});
    std::map<std::string, Tensor> g;
    g["w"] = Tensor({2}, {0.3f, -4.0f});
    OptimizerState st;
    st.lr = 0.1f;
    optimizer_step(p, g, st);
    CHECK(p["w"].data[0] == doctest::Approx(-0.1).epsilon(1e-4));
    CHECK(p["w"].data[1] == doctest::Approx(0.1).epsilon(1e-4));
}

TEST_CASE("optimizer: constant gradient moves monotonically against it") {
    ParamStore p;
    p["w"] = Tensor({1}, {1.0f});
    std::map<std::string, Tensor> g;
    g["w"] = Tensor({1}, {2.5f});
    OptimizerState st;
    float prev = 1.0f;
    for (int i = 0; i < 5; ++i) {
        optimizer_step(p, g, st);
        CHECK(p["w"].data[0] < prev);
        prev = p["w"].data[0];
    }
}

TEST_CASE("optimizer: shape mismatch is a usage error") {
    ParamStore p;
    p["w"] = Tensor({2}, {0.0f, 0.0f});
    std::map<std::string, Tensor> g;
    g["w"] = Tensor({3}, {1.0f, 1.0f, 1.0f});
    OptimizerState st;
    CHECK_THROWS_AS(optimizer_step(p, g, st), UsageError);
}

TEST_CASE("checkpoint: bit-exact round trip") {
    Rng rng(2024);
    ParamStore p;
    p["alpha"] = rng.normal_tensor({3, 5});
    p["beta/long.name-with_chars"] = rng.normal_tensor({2, 2, 2, 2});
    p["scalar"] = Tensor({1}, {-0.0f});
    const std::string path1 = "ckpt_roundtrip_a.bin";
    const std::string path2 = "ckpt_roundtrip_b.bin";
    save_ckpt(path1, p);
    ParamStore q = load_ckpt(path1);
    save_ckpt(path2, q);
    std::ifstream f1(path1, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), {});
    std::string s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
    CHECK(s1.substr(0, 8) == std::string("DGCKPT1\0", 8));
    REQUIRE(q.count("alpha"));
    CHECK(q["alpha"].shape == std::vector<int>{3, 5});
    CHECK(q["alpha"].data == p["alpha"].data);
    std::remove(path1.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("graph: inline composition shares params and binds inputs") {
    Graph inner;
    int x = inner.input("x", {2});
    int w = inner.param("w", {2});
    int y = inner.mul(x, w);

    Graph outer;
    int a = outer.input("a", {2});
    int two_a = outer.scale(a, 2.0f);
    int mapped = outer.inline_graph(inner, y, {{"x", two_a}});
    int out = outer.sum(mapped);
    ParamStore p;
    p["w"] = Tensor({2}, {3.0f, 4.0f});
    Tensor ta({2}, {1.0f, 1.0f});
    Executor ex(outer);
    CHECK(ex.forward(p, {{"a", &ta}}, out).data[0] == doctest::Approx(14.0));
    CHECK_THROWS_AS(outer.inline_graph(inner, y, {}), GraphError);
}
