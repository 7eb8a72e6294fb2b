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

#include "csifb/common.hpp"

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <new>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace csifb {

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

/// Cache-line aligned storage. Vectorized reductions peel a scalar head
/// that depends on the address, so a fixed alignment keeps results
/// independent of where the allocator puts a buffer.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept
    {
    }
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept
    {
        return true;
    }
};

using TensorData = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major f64 array.
struct Tensor {
    Shape shape;
    TensorData data;
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0);
    Tensor(Shape s, std::span<const double> values);
    Tensor(Shape s, std::initializer_list<double> values);

    std::size_t size() const { return data.size(); }
    int dim(std::size_t i) const { return shape.at(i); }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }
    bool all_finite() const;
};

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    void zero_grad();
};

enum class LayerKind { dense, conv2d };

/// Dense weights are [in, out] (y = x W + b); conv weights are
/// [out_channels, in_channels, 3, 3] with stride 1 and same padding.
struct LayerParams {
    LayerKind kind = LayerKind::dense;
    Parameter weight;
    Parameter bias;
    int in_features = 0;
    int out_features = 0;
    int kernel = 3;
    int stride = 1;
    int padding = 1;
};

/// Glorot/Xavier uniform in +-sqrt(6 / (fan_in + fan_out)), deterministic in seed.
Tensor glorot_uniform(const Shape& shape, int fan_in, int fan_out, std::uint64_t seed);

LayerParams make_dense(const std::string& name, int in, int out, std::uint64_t seed);
LayerParams make_conv3x3(const std::string& name, int in_channels, int out_channels, std::uint64_t seed);

/// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
/// creation order is a valid topological order for backward().
class Graph {
public:
    struct Var {
        int id = -1;
    };

    Var input(Tensor t);
    /// Leaf bound to a parameter; its gradient is accumulated into p.grad by
    /// backward() when p.trainable.
    Var param(Parameter& p);
    /// Read-only leaf (no gradient).
    Var param(const Parameter& p);

    Var dense(Var x, Var w, Var b);
    Var dense(Var x, LayerParams& layer);
    Var dense(Var x, const LayerParams& layer);
    Var conv2d(Var x, Var w, Var b);
    Var conv2d(Var x, LayerParams& layer);
    Var conv2d(Var x, const LayerParams& layer);
    Var tanh(Var x);
    /// Elementwise sum; b may omit a's leading batch dimension (broadcast).
    Var add(Var a, Var b);
    Var scale(Var x, double factor);
    Var reshape(Var x, Shape shape);
    /// Per-sample affine map with generated parameters: for sample i,
    /// y_i = W_r s_i + b_r where r = rows[i] selects a row of theta and
    /// theta row = [W_r (N x M, row-major), b_r (N)].
    Var generated_affine(Var s, Var theta, std::vector<int> rows, int n_out);
    /// (1/B) * sum_i ||pred_i - target_i||^2 over the leading batch dimension.
    Var mse_loss(Var pred, Var target);

    void backward(Var loss);

    const Tensor& value(Var v) const;
    const Tensor& grad(Var v) const;
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor owned;
        const Tensor* external = nullptr;
        Tensor grad;
        bool needs_grad = false;
        Parameter* target = nullptr;
        const char* op = "";
        std::vector<int> parents;
        std::function<void(Graph&, int)> backward;
        std::vector<double> saved;
        std::vector<int> saved_index;

        const Tensor& val() const { return external ? *external : owned; }
    };

    Var push(Node n);
    Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
    const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }
    Tensor& grad_of(int id);
    void check_finite(const Tensor& t, const char* op, const char* phase) const;

    std::vector<Node> nodes_;
};

struct AdamState {
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    std::int64_t step_count = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState for_params(std::span<Parameter* const> params, double lr);
};

/// One bias-corrected Adam update of every trainable parameter from its grad.
void adam_step(std::span<Parameter* const> params, AdamState& state);

struct NamedTensor {
    std::string name;
    Tensor value;
    bool trainable = true;
};

/// "ACNCK" u16 version, header string, u32 count, per parameter (name,
/// u32 rank, u32 dims, u8 trainable, f64 data), u8 has_optimizer, then
/// i64 step, f64 lr/beta1/beta2/eps and per-parameter moments.
struct Checkpoint {
    std::string header; // JSON model metadata
    std::vector<NamedTensor> params;
    std::optional<AdamState> optimizer;
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

} // namespace csifb
