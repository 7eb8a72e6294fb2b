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
#pragma once

// Random micro-graphs for gradient checking against central differences.
// At most 4 operations deep and no tensor axis longer than 8.

#include "csifb/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <random>
#include <string>

namespace oracle {

// Rebuilds the same random graph on every call: the structure comes from a
// generator reset to `seed`, leaves are created on the first call and reused.
class MicroGraph {
public:
    explicit MicroGraph(std::uint64_t seed) : seed_(seed) {}

    csifb::Graph::Var build(csifb::Graph& g)
    {
        rng_.seed(seed_);
        next_param_ = 0;
        next_input_ = 0;
        const int B = pick(1, 3);
        const int steps = pick(1, 4);
        csifb::Graph::Var x;
        bool image = pick(0, 1) == 1;
        int F = 0, C = 0, H = 0, W = 0;
        if (image) {
            C = pick(1, 3), H = pick(1, 5), W = pick(1, 5);
            x = g.input(input({B, C, H, W}));
        } else {
            F = pick(1, 6);
            x = g.input(input({B, F}));
        }
        for (int s = 0; s < steps; ++s) {
            if (image) {
                switch (pick(0, 4)) {
                case 0: {
                    const int co = pick(1, 4);
                    x = g.conv2d(x, g.param(param({co, C, 3, 3}, C * 9)), g.param(param({co})));
                    C = co;
                    break;
                }
                case 1:
                    x = g.tanh(x);
                    break;
                case 2:
                    x = g.add(x, g.conv2d(x, g.param(param({C, C, 3, 3}, C * 9)), g.param(param({C}))));
                    break;
                case 3:
                    x = g.add(x, g.param(param({C, H, W})));
                    break;
                default:
                    if (C * H * W > 8) {
                        x = g.tanh(x);
                        break;
                    }
                    F = C * H * W;
                    x = g.reshape(x, {B, F});
                    image = false;
                }
            } else {
                switch (pick(0, 6)) {
                case 0: {
                    const int fo = pick(1, 6);
                    x = g.dense(x, g.param(param({F, fo}, F)), g.param(param({fo})));
                    F = fo;
                    break;
                }
                case 1:
                    x = g.tanh(x);
                    break;
                case 2:
                    x = g.scale(x, uniform(-2.0, 2.0));
                    break;
                case 3:
                    x = g.add(x, g.param(param({F})));
                    break;
                case 4:
                    x = g.add(x, g.param(param({B, F})));
                    break;
                case 5: {
                    const int fo = pick(1, 5), R = pick(1, 3);
                    std::vector<int> rows(static_cast<std::size_t>(B));
                    for (auto& r : rows)
                        r = pick(0, R - 1);
                    x = g.generated_affine(x, g.param(param({R, fo * (F + 1)}, F + 1)), rows, fo);
                    F = fo;
                    break;
                }
                default: {
                    C = pick(1, 2), H = pick(1, 2), W = pick(1, 4);
                    x = g.dense(x, g.param(param({F, C * H * W}, F)), g.param(param({C * H * W})));
                    x = g.reshape(x, {B, C, H, W});
                    image = true;
                }
                }
            }
        }
        if (image)
            x = g.reshape(x, {B, C * H * W});
        if (next_param_ == 0)
            x = g.add(x, g.param(param({g.value(x).shape[1]})));
        const auto& shape = g.value(x).shape;
        return g.mse_loss(x, g.input(input(shape)));
    }

    std::deque<csifb::Parameter>& params() { return params_; }

private:
    int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

    csifb::Tensor fill(const csifb::Shape& shape, int fan_in = 1)
    {
        csifb::Tensor t(shape);
        const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-a, a);
        for (auto& v : t.data)
            v = u(values_);
        return t;
    }

    // weights are scaled by 1/sqrt(fan_in); biases and inputs stay in [-1, 1]
    csifb::Parameter& param(const csifb::Shape& shape, int fan_in = 1)
    {
        if (next_param_ == params_.size()) {
            csifb::Parameter p;
            p.name = "p" + std::to_string(next_param_);
            p.value = fill(shape, fan_in);
            params_.push_back(std::move(p));
        }
        return params_[next_param_++];
    }

    csifb::Tensor input(const csifb::Shape& shape)
    {
        if (next_input_ == inputs_.size())
            inputs_.push_back(fill(shape));
        return inputs_[next_input_++];
    }

    std::uint64_t seed_;
    std::mt19937_64 rng_;
    std::mt19937_64 values_{0x9e3779b97f4a7c15ULL};
    std::deque<csifb::Parameter> params_;
    std::deque<csifb::Tensor> inputs_;
    std::size_t next_param_ = 0;
    std::size_t next_input_ = 0;
};

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t entries = 0;
};

// Reverse-mode gradients of every parameter entry against central
// differences. Relative error uses max(|a|, |n|, floor) as denominator.
inline GradCheck check_gradients(std::uint64_t seed, double step = 1e-4, double floor = 1e-6)
{
    MicroGraph mg(seed);
    {
        csifb::Graph g;
        const auto loss = mg.build(g);
        for (auto& p : mg.params())
            p.zero_grad();
        g.backward(loss);
    }
    auto eval = [&] {
        csifb::Graph g;
        return g.value(mg.build(g)).data[0];
    };
    GradCheck out;
    for (auto& p : mg.params())
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double orig = p.value.data[i];
            p.value.data[i] = orig + step;
            const double up = eval();
            p.value.data[i] = orig - step;
            const double down = eval();
            p.value.data[i] = orig;
            const double numeric = (up - down) / (2 * step);
            const double analytic = p.grad.data[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
            out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic - numeric) / denom);
            ++out.entries;
        }
    return out;
}

} // namespace oracle
