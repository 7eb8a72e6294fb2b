// SPDX-License-Identifier: Apache-2.0
//
// csifb: scene-aware CSI feedback testbed
// Copyright (C) 2026 The csifb authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------
#include "csifb/autodiff.hpp"
#include "oracles/gradcheck.hpp"
#include "oracles/layers.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

using namespace csifb;
using Catch::Approx;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v)
        x = u(rng);
    return v;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b)
{
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace

TEST_CASE("dense matches naive loops")
{
    std::mt19937_64 rng(11);
    for (int c = 0; c < 20; ++c) {
        const int B = 1 + c % 4, In = 1 + (c * 7) % 9, Out = 1 + (c * 5) % 6;
        Tensor x({B, In}, random_vec(B * In, rng));
        Parameter w{"w", Tensor({In, Out}, random_vec(In * Out, rng))};
        Parameter b{"b", Tensor({Out}, random_vec(Out, rng))};
        Graph g;
        const auto y = g.dense(g.input(x), g.param(w), g.param(b));
        CHECK(max_abs_diff(g.value(y).data, oracle::dense(x.data, w.value.data, b.value.data, B, In, Out)) < 1e-12);
    }
}

TEST_CASE("conv2d matches naive loops, including 1-pixel images")
{
    std::mt19937_64 rng(12);
    for (int c = 0; c < 20; ++c) {
        const int B = 1 + c % 3, C = 1 + c % 4, H = 1 + (c * 3) % 7, W = 1 + (c * 5) % 6, Co = 1 + (c * 7) % 5;
        Tensor x({B, C, H, W}, random_vec(static_cast<std::size_t>(B * C * H * W), rng));
        Parameter w{"w", Tensor({Co, C, 3, 3}, random_vec(static_cast<std::size_t>(Co * C * 9), rng))};
        Parameter b{"b", Tensor({Co}, random_vec(Co, rng))};
        Graph g;
        const auto y = g.conv2d(g.input(x), g.param(w), g.param(b));
        REQUIRE(g.value(y).shape == Shape{B, Co, H, W});
        CHECK(max_abs_diff(g.value(y).data, oracle::conv3x3(x.data, w.value.data, b.value.data, B, C, H, W, Co)) <
              1e-12);
    }
}

TEST_CASE("reverse mode agrees with central differences on random graphs")
{
    for (std::uint64_t s = 0; s < 30; ++s) {
        const auto r = oracle::check_gradients(500 + s);
        INFO("seed " << 500 + s);
        CHECK(r.max_rel_error <= 1e-4);
    }
}

TEST_CASE("mse loss is the batch mean of squared norms")
{
    Graph g;
    const auto pred = g.input(Tensor({2, 2}, {1, 2, 3, 4}));
    const auto target = g.input(Tensor({2, 2}, {1, 0, 3, 6}));
    CHECK(g.value(g.mse_loss(pred, target)).data[0] == 4.0);
}

TEST_CASE("tanh values and saturation")
{
    Graph g;
    const std::vector<double> xs{-800.0, -3.0, -1e-9, 0.0, 0.5, 20.0, 800.0};
    const auto y = g.tanh(g.input(Tensor({7}, xs)));
    for (std::size_t i = 0; i < xs.size(); ++i)
        CHECK(g.value(y).data[i] == Approx(std::tanh(xs[i])).epsilon(1e-14).margin(1e-300));
}

TEST_CASE("broadcast add accumulates the bias gradient over the batch")
{
    Parameter b{"b", Tensor({2}, {0.5, -0.5})};
    Graph g;
    const auto x = g.input(Tensor({3, 2}, 0.0));
    const auto loss = g.mse_loss(g.add(x, g.param(b)), g.input(Tensor({3, 2}, 0.0)));
    b.zero_grad();
    g.backward(loss);
    // d/db (1/3) sum_i ||b||^2 = 2 b
    CHECK(b.grad.data[0] == Approx(1.0));
    CHECK(b.grad.data[1] == Approx(-1.0));
}

TEST_CASE("non-finite values raise DivergenceError")
{
    Graph g;
    const double inf = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(g.input(Tensor({2}, {1.0, inf})), DivergenceError);

    Parameter w{"w", Tensor({1, 1}, {1e300})};
    Parameter b{"b", Tensor({1}, {0.0})};
    Graph g2;
    CHECK_THROWS_AS(g2.dense(g2.input(Tensor({1, 1}, {1e300})), g2.param(w), g2.param(b)), DivergenceError);
    Graph g3;
    CHECK_THROWS_AS(g3.scale(g3.input(Tensor({1}, {1e300})), 1e300), DivergenceError);
}

TEST_CASE("shape errors are DimensionError")
{
    Graph g;
    const auto x = g.input(Tensor({2, 3}));
    Parameter w{"w", Tensor({4, 2})};
    Parameter b{"b", Tensor({2})};
    CHECK_THROWS_AS(g.dense(x, g.param(w), g.param(b)), DimensionError);
    CHECK_THROWS_AS(g.reshape(x, {5}), DimensionError);
    CHECK_THROWS_AS(g.add(x, g.input(Tensor({2}))), DimensionError);
}

TEST_CASE("backward requires a scalar loss attached to a trainable parameter")
{
    Graph g;
    const auto x = g.input(Tensor({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(g.backward(x), Error);
    Parameter w{"w", Tensor({1}, {1.0})};
    w.trainable = false;
    Graph g2;
    const auto l = g2.mse_loss(g2.reshape(g2.param(w), {1, 1}), g2.input(Tensor({1, 1})));
    CHECK_THROWS_AS(g2.backward(l), Error);
}

TEST_CASE("frozen parameters receive no gradient")
{
    Parameter a{"a", Tensor({1, 1}, {2.0})};
    Parameter b{"b", Tensor({1}, {0.0})};
    a.trainable = false;
    a.zero_grad();
    b.zero_grad();
    Graph g;
    const auto y = g.dense(g.input(Tensor({1, 1}, {1.0})), g.param(a), g.param(b));
    g.backward(g.mse_loss(y, g.input(Tensor({1, 1}, {0.0}))));
    CHECK(b.grad.data[0] == Approx(4.0));
    for (double v : a.grad.data)
        CHECK(v == 0.0);
}

TEST_CASE("one Adam step by hand")
{
    // m = 0.1 g, v = 0.001 g^2; bias-corrected step = lr * g / (|g| + eps)
    Parameter w{"w", Tensor({1}, {1.0})};
    w.grad = Tensor({1}, {2.0});
    std::vector<Parameter*> ps{&w};
    auto st = AdamState::for_params(ps, 0.1);
    adam_step(ps, st);
    CHECK(w.value.data[0] == Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-15));
    CHECK(st.step_count == 1);
    CHECK(st.first_moment[0].data[0] == Approx(0.2));
    CHECK(st.second_moment[0].data[0] == Approx(0.004));
}

TEST_CASE("Adam leaves frozen parameters untouched")
{
    Parameter w{"w", Tensor({2}, {1.0, 2.0})};
    w.trainable = false;
    w.grad = Tensor({2}, {5.0, 5.0});
    std::vector<Parameter*> ps{&w};
    auto st = AdamState::for_params(ps, 0.1);
    adam_step(ps, st);
    CHECK(w.value.data == TensorData{1.0, 2.0});
}

TEST_CASE("Glorot uniform is bounded and deterministic")
{
    const auto a = glorot_uniform({30, 20}, 30, 20, 5);
    const auto b = glorot_uniform({30, 20}, 30, 20, 5);
    const auto c = glorot_uniform({30, 20}, 30, 20, 6);
    CHECK(a.data == b.data);
    CHECK(a.data != c.data);
    const double bound = std::sqrt(6.0 / 50.0);
    for (double v : a.data)
        CHECK(std::abs(v) <= bound);
    const auto conv = make_conv3x3("c", 2, 8, 1);
    CHECK(conv.weight.value.shape == Shape{8, 2, 3, 3});
    for (double v : conv.weight.value.data)
        CHECK(std::abs(v) <= std::sqrt(6.0 / (18 + 72)));
}

TEST_CASE("checkpoint round trip with optimizer state")
{
    const auto path = std::filesystem::temp_directory_path() / "csifb_test_ck.ck";
    Checkpoint ck;
    ck.header = R"({"kind":"test"})";
    ck.params.push_back({"a", Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), true});
    ck.params.push_back({"b", Tensor({1}, {-0.125}), false});
    AdamState st;
    st.step_count = 7;
    st.lr = 5e-4;
    st.first_moment = {Tensor({2, 3}, 0.5), Tensor({1}, 0.25)};
    st.second_moment = {Tensor({2, 3}, 0.75), Tensor({1}, 1.5)};
    ck.optimizer = st;
    write_checkpoint(path.string(), ck);
    const auto back = read_checkpoint(path.string());
    CHECK(back.header == ck.header);
    REQUIRE(back.params.size() == 2);
    CHECK(back.params[0].name == "a");
    CHECK(back.params[0].value.shape == Shape{2, 3});
    CHECK(back.params[0].value.data == ck.params[0].value.data);
    CHECK_FALSE(back.params[1].trainable);
    REQUIRE(back.optimizer);
    CHECK(back.optimizer->step_count == 7);
    CHECK(back.optimizer->lr == 5e-4);
    CHECK(back.optimizer->second_moment[1].data[0] == 1.5);
    std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoint is a DataError")
{
    const auto path = std::filesystem::temp_directory_path() / "csifb_test_bad.ck";
    {
        std::ofstream f(path, std::ios::binary);
        f << "NOTACHECKPOINT";
    }
    CHECK_THROWS_AS(read_checkpoint(path.string()), DataError);
    std::filesystem::remove(path);
}
