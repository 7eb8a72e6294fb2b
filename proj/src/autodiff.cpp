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

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace csifb {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::RowVectorXd>;
using CMapVec = Eigen::Map<const Eigen::RowVectorXd>;

} // namespace

std::size_t shape_size(const Shape& s)
{
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

std::string shape_str(const Shape& s)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i)
        os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s))
{
    for (int d : shape)
        if (d <= 0)
            throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    data.assign(shape_size(shape), fill);
}

Tensor::Tensor(Shape s, std::span<const double> values)
    : shape(std::move(s)), data(values.begin(), values.end())
{
    if (data.size() != shape_size(shape))
        throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_str(shape));
}

Tensor::Tensor(Shape s, std::initializer_list<double> values)
    : Tensor(std::move(s), std::span<const double>(values.begin(), values.size()))
{
}

bool Tensor::all_finite() const
{
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

void Parameter::zero_grad()
{
    if (grad.shape != value.shape)
        grad = Tensor(value.shape, 0.0);
    else
        std::fill(grad.data.begin(), grad.data.end(), 0.0);
}

Tensor glorot_uniform(const Shape& shape, int fan_in, int fan_out, std::uint64_t seed)
{
    Tensor t(shape, 0.0);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : t.data)
        v = dist(rng);
    return t;
}

LayerParams make_dense(const std::string& name, int in, int out, std::uint64_t seed)
{
    LayerParams p;
    p.kind = LayerKind::dense;
    p.in_features = in;
    p.out_features = out;
    p.kernel = 0;
    p.padding = 0;
    p.weight = {name + ".weight", glorot_uniform({in, out}, in, out, seed), {}, true};
    p.bias = {name + ".bias", Tensor({out}, 0.0), {}, true};
    return p;
}

LayerParams make_conv3x3(const std::string& name, int in_channels, int out_channels, std::uint64_t seed)
{
    LayerParams p;
    p.kind = LayerKind::conv2d;
    p.in_features = in_channels;
    p.out_features = out_channels;
    p.weight = {name + ".weight",
                glorot_uniform({out_channels, in_channels, 3, 3}, in_channels * 9, out_channels * 9, seed),
                {},
                true};
    p.bias = {name + ".bias", Tensor({out_channels}, 0.0), {}, true};
    return p;
}

// ---------------------------------------------------------------------------
// Graph

Graph::Var Graph::push(Node n)
{
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::grad_of(int id)
{
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.data.empty())
        n.grad = Tensor(n.val().shape, 0.0);
    return n.grad;
}

void Graph::check_finite(const Tensor& t, const char* op, const char* phase) const
{
    if (!t.all_finite())
        throw DivergenceError(std::string("non-finite value in ") + op + " " + phase);
}

const Tensor& Graph::value(Var v) const
{
    return node(v).val();
}

const Tensor& Graph::grad(Var v) const
{
    return node(v).grad;
}

Graph::Var Graph::input(Tensor t)
{
    Node n;
    n.op = "input";
    n.owned = std::move(t);
    check_finite(n.owned, "input", "forward");
    return push(std::move(n));
}

Graph::Var Graph::param(Parameter& p)
{
    Node n;
    n.op = "param";
    n.external = &p.value;
    n.needs_grad = p.trainable;
    n.target = p.trainable ? &p : nullptr;
    return push(std::move(n));
}

Graph::Var Graph::param(const Parameter& p)
{
    Node n;
    n.op = "param";
    n.external = &p.value;
    return push(std::move(n));
}

Graph::Var Graph::dense(Var x, LayerParams& layer)
{
    return dense(x, param(layer.weight), param(layer.bias));
}

Graph::Var Graph::dense(Var x, const LayerParams& layer)
{
    return dense(x, param(layer.weight), param(layer.bias));
}

Graph::Var Graph::conv2d(Var x, LayerParams& layer)
{
    return conv2d(x, param(layer.weight), param(layer.bias));
}

Graph::Var Graph::conv2d(Var x, const LayerParams& layer)
{
    return conv2d(x, param(layer.weight), param(layer.bias));
}

Graph::Var Graph::dense(Var x, Var w, Var b)
{
    const Tensor& X = value(x);
    const Tensor& W = value(w);
    const Tensor& Bv = value(b);
    if (X.shape.size() != 2 || W.shape.size() != 2 || Bv.shape.size() != 1 || X.shape[1] != W.shape[0] ||
        W.shape[1] != Bv.shape[0])
        throw DimensionError("dense: incompatible shapes x" + shape_str(X.shape) + " w" + shape_str(W.shape) +
                             " b" + shape_str(Bv.shape));
    const int B = X.shape[0], In = X.shape[1], Out = W.shape[1];

    Node n;
    n.op = "dense";
    n.parents = {x.id, w.id, b.id};
    n.needs_grad = node(x).needs_grad || node(w).needs_grad || node(b).needs_grad;
    n.owned = Tensor({B, Out}, 0.0);
    MapMat Y(n.owned.data.data(), B, Out);
    Y.noalias() = CMapMat(X.data.data(), B, In) * CMapMat(W.data.data(), In, Out);
    Y.rowwise() += CMapVec(Bv.data.data(), Out);
    check_finite(n.owned, "dense", "forward");

    n.backward = [](Graph& g, int id) {
        const Node& self = g.nodes_[static_cast<std::size_t>(id)];
        const int xi = self.parents[0], wi = self.parents[1], bi = self.parents[2];
        const Tensor& X = g.nodes_[static_cast<std::size_t>(xi)].val();
        const Tensor& W = g.nodes_[static_cast<std::size_t>(wi)].val();
        const int B = X.shape[0], In = X.shape[1], Out = W.shape[1];
        CMapMat dY(self.grad.data.data(), B, Out);
        if (g.nodes_[static_cast<std::size_t>(xi)].needs_grad)
            MapMat(g.grad_of(xi).data.data(), B, In).noalias() += dY * CMapMat(W.data.data(), In, Out).transpose();
        if (g.nodes_[static_cast<std::size_t>(wi)].needs_grad)
            MapMat(g.grad_of(wi).data.data(), In, Out).noalias() += CMapMat(X.data.data(), B, In).transpose() * dY;
        if (g.nodes_[static_cast<std::size_t>(bi)].needs_grad)
            MapVec(g.grad_of(bi).data.data(), Out) += dY.colwise().sum();
    };
    return push(std::move(n));
}

namespace {

// Zero-padded, batch-concatenated layout used by conv2d. Image b, channel c,
// pixel (y, x) lives at column margin + b*P + (y+1)*Wp + (x+1) of row c, so a
// 3x3 tap is a constant column offset and the convolution is nine GEMMs.
struct PadLayout {
    int B, C, H, W;
    Eigen::Index Wp, P, L, margin;
    PadLayout(int b, int c, int h, int w) : B(b), C(c), H(h), W(w)
    {
        Wp = w + 2;
        P = static_cast<Eigen::Index>(h + 2) * Wp;
        L = static_cast<Eigen::Index>(b) * P;
        margin = Wp + 1;
    }
    Eigen::Index cols() const { return L + 2 * margin; }
    Eigen::Index offset(int tap) const { return margin + (tap / 3 - 1) * Wp + (tap % 3 - 1); }
    Eigen::Index at(int b, int y, int x) const { return margin + b * P + (y + 1) * Wp + (x + 1); }
};

// dense [B, C, H, W] -> padded rows (pad must be zeroed)
void pad_in(const PadLayout& s, const double* in, double* pad)
{
    const Eigen::Index ld = s.cols();
    for (int b = 0; b < s.B; ++b)
        for (int c = 0; c < s.C; ++c)
            for (int y = 0; y < s.H; ++y) {
                const double* src = in + ((static_cast<std::size_t>(b) * s.C + c) * s.H + y) * s.W;
                std::copy(src, src + s.W, pad + c * ld + s.at(b, y, 0));
            }
}

// padded rows -> dense [B, C, H, W], accumulating
void unpad_add(const PadLayout& s, const double* pad, double* out)
{
    const Eigen::Index ld = s.cols();
    for (int b = 0; b < s.B; ++b)
        for (int c = 0; c < s.C; ++c)
            for (int y = 0; y < s.H; ++y) {
                const double* src = pad + c * ld + s.at(b, y, 0);
                double* dst = out + ((static_cast<std::size_t>(b) * s.C + c) * s.H + y) * s.W;
                for (int x = 0; x < s.W; ++x)
                    dst[x] += src[x];
            }
}

RowMat tap_weights(const double* w, int Co, int C, int tap)
{
    RowMat t(Co, C);
    for (int co = 0; co < Co; ++co)
        for (int ci = 0; ci < C; ++ci)
            t(co, ci) = w[(static_cast<std::size_t>(co) * C + ci) * 9 + tap];
    return t;
}

} // namespace

Graph::Var Graph::conv2d(Var x, Var w, Var b)
{
    const Tensor& X = value(x);
    const Tensor& Wt = value(w);
    const Tensor& Bv = value(b);
    if (X.shape.size() != 4 || Wt.shape.size() != 4 || Bv.shape.size() != 1 || Wt.shape[1] != X.shape[1] ||
        Wt.shape[2] != 3 || Wt.shape[3] != 3 || Bv.shape[0] != Wt.shape[0])
        throw DimensionError("conv2d: incompatible shapes x" + shape_str(X.shape) + " w" + shape_str(Wt.shape) +
                             " b" + shape_str(Bv.shape));
    const PadLayout s(X.shape[0], X.shape[1], X.shape[2], X.shape[3]);
    const int Co = Wt.shape[0];

    Node n;
    n.op = "conv2d";
    n.parents = {x.id, w.id, b.id};
    n.needs_grad = node(x).needs_grad || node(w).needs_grad || node(b).needs_grad;

    std::vector<double> pad(static_cast<std::size_t>(s.C) * static_cast<std::size_t>(s.cols()), 0.0);
    pad_in(s, X.data.data(), pad.data());
    const CMapMat Xp(pad.data(), s.C, s.cols());
    RowMat out = RowMat::Zero(Co, s.L);
    for (int tap = 0; tap < 9; ++tap)
        out.noalias() += tap_weights(Wt.data.data(), Co, s.C, tap) * Xp.middleCols(s.offset(tap), s.L);

    n.owned = Tensor({s.B, Co, s.H, s.W}, 0.0);
    for (int bb = 0; bb < s.B; ++bb)
        for (int co = 0; co < Co; ++co) {
            const double bias = Bv.data[static_cast<std::size_t>(co)];
            for (int y = 0; y < s.H; ++y) {
                const double* src = out.data() + co * s.L + s.at(bb, y, 0) - s.margin;
                double* dst = n.owned.data.data() + ((static_cast<std::size_t>(bb) * Co + co) * s.H + y) * s.W;
                for (int xx = 0; xx < s.W; ++xx)
                    dst[xx] = src[xx] + bias;
            }
        }
    check_finite(n.owned, "conv2d", "forward");
    if (node(w).needs_grad)
        n.saved = std::move(pad);

    n.backward = [](Graph& g, int id) {
        const Node& self = g.nodes_[static_cast<std::size_t>(id)];
        const int xi = self.parents[0], wi = self.parents[1], bi = self.parents[2];
        const Tensor& X = g.nodes_[static_cast<std::size_t>(xi)].val();
        const Tensor& Wt = g.nodes_[static_cast<std::size_t>(wi)].val();
        const PadLayout s(X.shape[0], X.shape[1], X.shape[2], X.shape[3]);
        const int Co = Wt.shape[0];

        // dOut in padded layout without margins; pad positions stay zero
        RowMat dOut = RowMat::Zero(Co, s.L);
        for (int bb = 0; bb < s.B; ++bb)
            for (int co = 0; co < Co; ++co)
                for (int y = 0; y < s.H; ++y) {
                    const double* src =
                        self.grad.data.data() + ((static_cast<std::size_t>(bb) * Co + co) * s.H + y) * s.W;
                    std::copy(src, src + s.W, dOut.data() + co * s.L + s.at(bb, y, 0) - s.margin);
                }
        if (g.nodes_[static_cast<std::size_t>(bi)].needs_grad)
            Eigen::Map<Eigen::VectorXd>(g.grad_of(bi).data.data(), Co) += dOut.rowwise().sum();
        if (g.nodes_[static_cast<std::size_t>(wi)].needs_grad) {
            const CMapMat Xp(self.saved.data(), s.C, s.cols());
            double* dw = g.grad_of(wi).data.data();
            for (int tap = 0; tap < 9; ++tap) {
                const RowMat t = dOut * Xp.middleCols(s.offset(tap), s.L).transpose();
                for (int co = 0; co < Co; ++co)
                    for (int ci = 0; ci < s.C; ++ci)
                        dw[(static_cast<std::size_t>(co) * s.C + ci) * 9 + tap] += t(co, ci);
            }
        }
        if (g.nodes_[static_cast<std::size_t>(xi)].needs_grad) {
            RowMat dXp = RowMat::Zero(s.C, s.cols());
            for (int tap = 0; tap < 9; ++tap)
                dXp.middleCols(s.offset(tap), s.L).noalias() +=
                    tap_weights(Wt.data.data(), Co, s.C, tap).transpose() * dOut;
            unpad_add(s, dXp.data(), g.grad_of(xi).data.data());
        }
    };
    return push(std::move(n));
}

Graph::Var Graph::tanh(Var x)
{
    Node n;
    n.op = "tanh";
    n.parents = {x.id};
    n.needs_grad = node(x).needs_grad;
    const Tensor& X = value(x);
    n.owned = Tensor(X.shape, 0.0);
    const auto sz = static_cast<Eigen::Index>(X.data.size());
    const Eigen::Map<const Eigen::ArrayXd> xa(X.data.data(), sz);
    // tanh(x) = sign(x) (1 - e^{-2|x|}) / (1 + e^{-2|x|}); exp vectorizes, tanh does not
    const Eigen::ArrayXd t = (-2.0 * xa.abs()).exp();
    Eigen::Map<Eigen::ArrayXd>(n.owned.data.data(), sz) = xa.sign() * (1.0 - t) / (1.0 + t);
    // 1 - t cancels near zero
    for (std::size_t i = 0; i < X.data.size(); ++i)
        if (std::abs(X.data[i]) < 0.01)
            n.owned.data[i] = std::tanh(X.data[i]);
    check_finite(n.owned, "tanh", "forward");
    n.backward = [](Graph& g, int id) {
        const Node& self = g.nodes_[static_cast<std::size_t>(id)];
        Tensor& dx = g.grad_of(self.parents[0]);
        const auto sz = static_cast<Eigen::Index>(self.owned.data.size());
        const Eigen::Map<const Eigen::ArrayXd> y(self.owned.data.data(), sz);
        const Eigen::Map<const Eigen::ArrayXd> gy(self.grad.data.data(), sz);
        Eigen::Map<Eigen::ArrayXd>(dx.data.data(), sz) += gy * (1.0 - y.square());
    };
    return push(std::move(n));
}

Graph::Var Graph::add(Var a, Var b)
{
    const Tensor& A = value(a);
    const Tensor& Bt = value(b);
    const bool same = A.shape == Bt.shape;
    const bool broadcast = !same && A.shape.size() == Bt.shape.size() + 1 &&
                           std::equal(Bt.shape.begin(), Bt.shape.end(), A.shape.begin() + 1);
    if (!same && !broadcast)
        throw DimensionError("add: incompatible shapes " + shape_str(A.shape) + " and " + shape_str(Bt.shape));

    Node n;
    n.op = "add";
    n.parents = {a.id, b.id};
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.owned = A;
    n.owned.requires_grad = false;
    const std::size_t inner = Bt.size();
    for (std::size_t i = 0; i < n.owned.size(); ++i)
        n.owned.data[i] += Bt.data[i % inner];
    check_finite(n.owned, "add", "forward");
    n.backward = [](Graph& g, int id) {
        const Node& self = g.nodes_[static_cast<std::size_t>(id)];
        const int ai = self.parents[0], bi = self.parents[1];
        if (g.nodes_[static_cast<std::size_t>(ai)].needs_grad) {
            Tensor& da = g.grad_of(ai);
            for (std::size_t i = 0; i < da.size(); ++i)
                da.data[i] += self.grad.data[i];
        }
        if (g.nodes_[static_cast<std::size_t>(bi)].needs_grad) {
            Tensor& db = g.grad_of(bi);
            const std::size_t inner = db.size();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                db.data[i % inner] += self.grad.data[i];
        }
    };
    return push(std::move(n));
}

Graph::Var Graph::scale(Var x, double factor)
{
    Node n;
    n.op = "scale";
    n.parents = {x.id};
    n.needs_grad = node(x).needs_grad;
    n.owned = Tensor(value(x).shape, 0.0);
    const auto& src = value(x).data;
    for (std::size_t i = 0; i < src.size(); ++i)
        n.owned.data[i] = factor * src[i];
    check_finite(n.owned, "scale", "forward");
    n.saved = {factor};
    n.backward = [](Graph& g, int id) {
        const Node& self = g.nodes_[static_cast<std::size_t>(id)];
        Tensor& dx = g.grad_of(self.parents[0]);
        const double f = self.saved[0];
        for (std::size_t i = 0; i < dx.size(); ++i)
            dx.data[i] += f * self.grad.data[i];
    };
    return push(std::move(n));
}

Graph::Var Graph::reshape(Var x, Shape shape)
{
    if (shape_size(shape) != value(x).size())
        throw DimensionError("reshape: cannot view " + shape_str(value(x).shape) + " as " + shape_str(shape));
    Node n;
    n.op = "reshape";
    n.parents = {x.id};
    n.needs_grad = node(x).needs_grad;
    n.owned = Tensor(std::move(shape), value(x).data);
    n.backward = [](Graph& g, int id) {
        const Node& self = g.nodes_[static_cast<std::size_t>(id)];
        Tensor& dx = g.grad_of(self.parents[0]);
        for (std::size_t i = 0; i < dx.size(); ++i)
            dx.data[i] += self.grad.data[i];
    };
    return push(std::move(n));
}

Graph::Var Graph::generated_affine(Var s, Var theta, std::vector<int> rows, int n_out)
{
    const Tensor& S = value(s);
    const Tensor& T = value(theta);
    if (S.shape.size() != 2 || T.shape.size() != 2)
        throw DimensionError("generated_affine: expected rank-2 codeword and parameter tensors");
    const int B = S.shape[0], M = S.shape[1];
    if (static_cast<int>(rows.size()) != B || T.shape[1] != n_out * (M + 1))
        throw DimensionError("generated_affine: parameter row length " + std::to_string(T.shape[1]) +
                             " does not match N*(M+1) = " + std::to_string(n_out * (M + 1)));
    for (int r : rows)
        if (r < 0 || r >= T.shape[0])
            throw DimensionError("generated_affine: parameter row index out of range");

    Node n;
    n.op = "generated_affine";
    n.parents = {s.id, theta.id};
    n.needs_grad = node(s).needs_grad || node(theta).needs_grad;
    n.owned = Tensor({B, n_out}, 0.0);
    const std::size_t row_len = static_cast<std::size_t>(T.shape[1]);
    for (int i = 0; i < B; ++i) {
        const double* th = T.data.data() + static_cast<std::size_t>(rows[static_cast<std::size_t>(i)]) * row_len;
        const double* bias = th + static_cast<std::size_t>(n_out) * M;
        const double* si = S.data.data() + static_cast<std::size_t>(i) * M;
        double* yi = n.owned.data.data() + static_cast<std::size_t>(i) * n_out;
        for (int o = 0; o < n_out; ++o) {
            const double* wrow = th + static_cast<std::size_t>(o) * M;
            double acc = bias[o];
            for (int k = 0; k < M; ++k)
                acc += wrow[k] * si[k];
            yi[o] = acc;
        }
    }
    check_finite(n.owned, "generated_affine", "forward");
    n.saved_index = std::move(rows);
    n.backward = [n_out](Graph& g, int id) {
        const Node& self = g.nodes_[static_cast<std::size_t>(id)];
        const int si_id = self.parents[0], ti = self.parents[1];
        const Tensor& S = g.nodes_[static_cast<std::size_t>(si_id)].val();
        const Tensor& T = g.nodes_[static_cast<std::size_t>(ti)].val();
        const int B = S.shape[0], M = S.shape[1];
        const std::size_t row_len = static_cast<std::size_t>(T.shape[1]);
        const bool need_s = g.nodes_[static_cast<std::size_t>(si_id)].needs_grad;
        const bool need_t = g.nodes_[static_cast<std::size_t>(ti)].needs_grad;
        double* dS = need_s ? g.grad_of(si_id).data.data() : nullptr;
        double* dT = need_t ? g.grad_of(ti).data.data() : nullptr;
        for (int i = 0; i < B; ++i) {
            const std::size_t r = static_cast<std::size_t>(self.saved_index[static_cast<std::size_t>(i)]);
            const double* th = T.data.data() + r * row_len;
            const double* s = S.data.data() + static_cast<std::size_t>(i) * M;
            const double* dy = self.grad.data.data() + static_cast<std::size_t>(i) * n_out;
            for (int o = 0; o < n_out; ++o) {
                const double go = dy[o];
                if (go == 0.0)
                    continue;
                if (dT) {
                    double* dw = dT + r * row_len + static_cast<std::size_t>(o) * M;
                    for (int k = 0; k < M; ++k)
                        dw[k] += go * s[k];
                    dT[r * row_len + static_cast<std::size_t>(n_out) * M + o] += go;
                }
                if (dS) {
                    const double* w = th + static_cast<std::size_t>(o) * M;
                    double* ds = dS + static_cast<std::size_t>(i) * M;
                    for (int k = 0; k < M; ++k)
                        ds[k] += go * w[k];
                }
            }
        }
    };
    return push(std::move(n));
}

Graph::Var Graph::mse_loss(Var pred, Var target)
{
    const Tensor& P = value(pred);
    const Tensor& T = value(target);
    if (P.shape != T.shape || P.shape.empty())
        throw DimensionError("mse_loss: shapes " + shape_str(P.shape) + " and " + shape_str(T.shape) + " differ");
    const double batch = P.shape[0];
    double acc = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
        const double d = P.data[i] - T.data[i];
        acc += d * d;
    }
    Node n;
    n.op = "mse_loss";
    n.parents = {pred.id, target.id};
    n.needs_grad = node(pred).needs_grad || node(target).needs_grad;
    n.owned = Tensor({1}, acc / batch);
    check_finite(n.owned, "mse_loss", "forward");
    n.backward = [](Graph& g, int id) {
        const Node& self = g.nodes_[static_cast<std::size_t>(id)];
        const int pi = self.parents[0], ti = self.parents[1];
        const Tensor& P = g.nodes_[static_cast<std::size_t>(pi)].val();
        const Tensor& T = g.nodes_[static_cast<std::size_t>(ti)].val();
        const double k = 2.0 * self.grad.data[0] / P.shape[0];
        if (g.nodes_[static_cast<std::size_t>(pi)].needs_grad) {
            Tensor& dp = g.grad_of(pi);
            for (std::size_t i = 0; i < P.size(); ++i)
                dp.data[i] += k * (P.data[i] - T.data[i]);
        }
        if (g.nodes_[static_cast<std::size_t>(ti)].needs_grad) {
            Tensor& dt = g.grad_of(ti);
            for (std::size_t i = 0; i < P.size(); ++i)
                dt.data[i] -= k * (P.data[i] - T.data[i]);
        }
    };
    return push(std::move(n));
}

void Graph::backward(Var loss)
{
    Node& root = node(loss);
    if (root.val().size() != 1)
        throw DimensionError("backward: loss must be a scalar, got " + shape_str(root.val().shape));
    if (!root.needs_grad)
        throw Error("backward: loss is detached from every trainable parameter");
    grad_of(loss.id).data[0] = 1.0;

    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad || n.grad.data.empty())
            continue;
        if (n.backward) {
            n.backward(*this, id);
            for (int p : n.parents) {
                const Node& pn = nodes_[static_cast<std::size_t>(p)];
                if (pn.needs_grad && !pn.grad.data.empty())
                    check_finite(pn.grad, n.op, "backward");
            }
        }
        if (n.target) {
            Parameter& p = *n.target;
            if (p.grad.shape != p.value.shape)
                p.grad = Tensor(p.value.shape, 0.0);
            for (std::size_t i = 0; i < p.grad.size(); ++i)
                p.grad.data[i] += n.grad.data[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Adam

AdamState AdamState::for_params(std::span<Parameter* const> params, double lr)
{
    AdamState s;
    s.lr = lr;
    for (const Parameter* p : params) {
        s.first_moment.emplace_back(p->value.shape, 0.0);
        s.second_moment.emplace_back(p->value.shape, 0.0);
    }
    return s;
}

void adam_step(std::span<Parameter* const> params, AdamState& st)
{
    if (st.first_moment.size() != params.size() || st.second_moment.size() != params.size())
        throw DimensionError("adam_step: optimizer state does not match parameter list");
    ++st.step_count;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter& p = *params[k];
        if (!p.trainable)
            continue;
        if (p.grad.shape != p.value.shape)
            throw DimensionError("adam_step: parameter '" + p.name + "' has no gradient");
        auto& m = st.first_moment[k].data;
        auto& v = st.second_moment[k].data;
        if (m.size() != p.value.size())
            throw DimensionError("adam_step: moment shape mismatch for '" + p.name + "'");
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double g = p.grad.data[i];
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g;
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g * g;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p.value.data[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
        if (!p.value.all_finite())
            throw DivergenceError("non-finite value in adam_step for '" + p.name + "'");
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr std::string_view kCheckpointMagic = "ACNCK";
constexpr std::uint16_t kCheckpointVersion = 1;

void put_tensor_data(BinaryWriter& w, const Tensor& t)
{
    w.put_array(t.data.data(), t.data.size());
}
} // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ck)
{
    BinaryWriter w(path);
    w.put_magic(kCheckpointMagic);
    w.put<std::uint16_t>(kCheckpointVersion);
    w.put_string(ck.header);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.params.size()));
    for (const auto& p : ck.params) {
        w.put_string(p.name);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(p.value.shape.size()));
        for (int d : p.value.shape)
            w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
        w.put<std::uint8_t>(p.trainable ? 1 : 0);
        put_tensor_data(w, p.value);
    }
    w.put<std::uint8_t>(ck.optimizer ? 1 : 0);
    if (ck.optimizer) {
        const AdamState& st = *ck.optimizer;
        if (st.first_moment.size() != ck.params.size() || st.second_moment.size() != ck.params.size())
            throw DimensionError("write_checkpoint: optimizer state does not match parameters");
        w.put<std::int64_t>(st.step_count);
        w.put<double>(st.lr);
        w.put<double>(st.beta1);
        w.put<double>(st.beta2);
        w.put<double>(st.eps);
        for (std::size_t k = 0; k < ck.params.size(); ++k) {
            put_tensor_data(w, st.first_moment[k]);
            put_tensor_data(w, st.second_moment[k]);
        }
    }
    w.finish();
}

Checkpoint read_checkpoint(const std::string& path)
{
    BinaryReader r(path);
    r.expect_magic(kCheckpointMagic);
    if (const auto v = r.get<std::uint16_t>(); v != kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(v) + " in " + path);
    Checkpoint ck;
    ck.header = r.get_string();
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < count; ++k) {
        NamedTensor nt;
        nt.name = r.get_string();
        const auto rank = r.get<std::uint32_t>();
        if (rank > 8)
            throw DataError("corrupt tensor rank in " + path);
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d)
            shape.push_back(static_cast<int>(r.get<std::uint32_t>()));
        nt.trainable = r.get<std::uint8_t>() != 0;
        nt.value = Tensor(shape, 0.0);
        r.get_array(nt.value.data.data(), nt.value.size());
        ck.params.push_back(std::move(nt));
    }
    if (r.get<std::uint8_t>() != 0) {
        AdamState st;
        st.step_count = r.get<std::int64_t>();
        st.lr = r.get<double>();
        st.beta1 = r.get<double>();
        st.beta2 = r.get<double>();
        st.eps = r.get<double>();
        for (const auto& p : ck.params) {
            Tensor m(p.value.shape, 0.0), v(p.value.shape, 0.0);
            r.get_array(m.data.data(), m.size());
            r.get_array(v.data.data(), v.size());
            st.first_moment.push_back(std::move(m));
            st.second_moment.push_back(std::move(v));
        }
        ck.optimizer = std::move(st);
    }
    return ck;
}

} // namespace csifb
