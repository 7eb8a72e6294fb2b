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
#include "csifb/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace csifb {

using Var = Graph::Var;

namespace {

void validate_dims(const ModelDims& d)
{
    if (d.nc < 1 || d.nt < 1 || d.m < 1)
        throw ValidationError("model dims must be positive (nc, nt, m)");
    if (d.m >= d.n())
        throw ValidationError("codeword length m must be smaller than N = 2*nc*nt");
}

} // namespace

ReconNet ReconNet::create(const ModelDims& dims, double alpha, std::uint64_t seed)
{
    validate_dims(dims);
    if (!(alpha >= 0.0 && alpha < 1.0))
        throw ValidationError("alpha must lie in [0, 1)");
    ReconNet net;
    net.dims = dims;
    net.alpha = alpha;
    net.dense_init = make_dense("recon.dense_init", dims.m, dims.n(), derive_seed(seed, 1));
    net.conv_block[0] = make_conv3x3("recon.conv1", 2, 8, derive_seed(seed, 2));
    net.conv_block[1] = make_conv3x3("recon.conv2", 8, 16, derive_seed(seed, 3));
    net.conv_block[2] = make_conv3x3("recon.conv3", 16, 2, derive_seed(seed, 4));
    net.output_conv = make_conv3x3("recon.output", 2, 2, derive_seed(seed, 5));
    return net;
}

std::vector<Parameter*> ReconNet::parameters()
{
    std::vector<Parameter*> out{&dense_init.weight, &dense_init.bias};
    for (auto& c : conv_block) {
        out.push_back(&c.weight);
        out.push_back(&c.bias);
    }
    out.push_back(&output_conv.weight);
    out.push_back(&output_conv.bias);
    return out;
}

std::vector<const Parameter*> ReconNet::parameters() const
{
    auto ps = const_cast<ReconNet*>(this)->parameters();
    return {ps.begin(), ps.end()};
}

void ReconNet::set_trainable(bool on)
{
    for (Parameter* p : parameters())
        p->trainable = on;
}

HyperNet HyperNet::create(const ModelDims& dims, std::uint64_t seed)
{
    validate_dims(dims);
    if (dims.g < 8 || dims.g % 4 != 0)
        throw ValidationError("grid size g must be a multiple of 4 and at least 8");
    HyperNet hn;
    hn.dims = dims;
    const int side = dims.g / 4;
    const int area = side * side;
    hn.input_dense = make_dense("hyper.input_dense", dims.g * dims.g, kChannels[0] * area, derive_seed(seed, 11));
    for (std::size_t i = 0; i < hn.conv_stack.size(); ++i)
        hn.conv_stack[i] = make_conv3x3("hyper.conv" + std::to_string(i + 1), kChannels[i], kChannels[i + 1],
                                        derive_seed(seed, 12 + i));
    hn.output_dense = make_dense("hyper.output_dense", kChannels.back() * area, hn.output_size(), 0);
    std::fill(hn.output_dense.weight.value.data.begin(), hn.output_dense.weight.value.data.end(), 0.0);
    return hn;
}

std::vector<Parameter*> HyperNet::parameters()
{
    std::vector<Parameter*> out{&input_dense.weight, &input_dense.bias};
    for (auto& c : conv_stack) {
        out.push_back(&c.weight);
        out.push_back(&c.bias);
    }
    out.push_back(&output_dense.weight);
    out.push_back(&output_dense.bias);
    return out;
}

std::vector<const Parameter*> HyperNet::parameters() const
{
    auto ps = const_cast<HyperNet*>(this)->parameters();
    return {ps.begin(), ps.end()};
}

std::vector<double> GeneratedParams::flatten() const
{
    std::vector<double> out(w_h);
    out.insert(out.end(), b_h.begin(), b_h.end());
    return out;
}

GeneratedParams GeneratedParams::split(std::span<const double> theta, int n, int m)
{
    const std::size_t nm = static_cast<std::size_t>(n) * m;
    if (theta.size() != nm + static_cast<std::size_t>(n))
        throw DimensionError("generated parameter vector has length " + std::to_string(theta.size()) +
                             ", expected N*(M+1) = " + std::to_string(nm + n));
    GeneratedParams p;
    p.n = n;
    p.m = m;
    p.w_h.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(nm));
    p.b_h.assign(theta.begin() + static_cast<std::ptrdiff_t>(nm), theta.end());
    return p;
}

// ---------------------------------------------------------------------------
// Graph builders

namespace {

void check_codeword(const Graph& g, Var s, const ModelDims& d)
{
    const Tensor& t = g.value(s);
    if (t.shape.size() != 2 || t.shape[1] != d.m)
        throw DimensionError("codeword batch " + shape_str(t.shape) + " does not match model M = " +
                             std::to_string(d.m));
}

template <class Net>
Var recon_tail(Graph& g, Net& net, Var h_input)
{
    const int b = g.value(h_input).dim(0);
    Var x = g.reshape(h_input, {b, 2, net.dims.nc, net.dims.nt});
    Var c1 = g.tanh(g.conv2d(x, net.conv_block[0]));
    Var c2 = g.tanh(g.conv2d(c1, net.conv_block[1]));
    Var c3 = g.conv2d(c2, net.conv_block[2]);
    return g.conv2d(g.add(x, c3), net.output_conv);
}

template <class Net>
Var baseline_impl(Graph& g, Net& net, Var s)
{
    check_codeword(g, s, net.dims);
    return recon_tail(g, net, g.dense(s, net.dense_init));
}

template <class Hn>
Var hypernet_impl(Graph& g, Hn& hn, Var grids)
{
    const Tensor& t = g.value(grids);
    if (t.shape.size() != 2 || t.shape[1] != hn.dims.g * hn.dims.g)
        throw DimensionError("scene-graph batch " + shape_str(t.shape) + " does not match G = " +
                             std::to_string(hn.dims.g));
    const int u = t.shape[0];
    const int side = hn.feature_side();
    Var x = g.tanh(g.dense(grids, hn.input_dense));
    x = g.reshape(x, {u, HyperNet::kChannels[0], side, side});
    for (auto& c : hn.conv_stack)
        x = g.tanh(g.conv2d(x, c));
    x = g.reshape(x, {u, HyperNet::kChannels.back() * side * side});
    return g.dense(x, hn.output_dense);
}

template <class Net>
Var adaptive_tail(Graph& g, Net& net, Var s, Var theta, std::vector<int> rows)
{
    check_codeword(g, s, net.dims);
    Var h1 = g.dense(s, net.dense_init);
    Var h2 = g.tanh(g.generated_affine(s, theta, std::move(rows), net.dims.n()));
    return recon_tail(g, net, g.add(h1, g.scale(h2, net.alpha)));
}

} // namespace

Var build_baseline(Graph& g, ReconNet& net, Var s) { return baseline_impl(g, net, s); }
Var build_baseline(Graph& g, const ReconNet& net, Var s) { return baseline_impl(g, net, s); }
Var build_hypernet(Graph& g, HyperNet& hn, Var grids) { return hypernet_impl(g, hn, grids); }
Var build_hypernet(Graph& g, const HyperNet& hn, Var grids) { return hypernet_impl(g, hn, grids); }

Var build_adaptive(Graph& g, ReconNet& net, HyperNet& hn, Var s, Var grids, std::vector<int> rows)
{
    return adaptive_tail(g, net, s, hypernet_impl(g, hn, grids), std::move(rows));
}

Var build_adaptive(Graph& g, const ReconNet& net, const HyperNet& hn, Var s, Var grids, std::vector<int> rows)
{
    return adaptive_tail(g, net, s, hypernet_impl(g, hn, grids), std::move(rows));
}

Var build_adaptive_with(Graph& g, const ReconNet& net, Var s, Var theta, std::vector<int> rows)
{
    return adaptive_tail(g, net, s, theta, std::move(rows));
}

std::vector<double> forward_baseline(std::span<const double> s, const ReconNet& net)
{
    Graph g;
    Var sv = g.input(Tensor({1, static_cast<int>(s.size())}, s));
    const auto& out = g.value(build_baseline(g, net, sv)).data;
    return {out.begin(), out.end()};
}

GeneratedParams generate_params(std::span<const double> grid, const HyperNet& hn)
{
    Graph g;
    Var gv = g.input(Tensor({1, static_cast<int>(grid.size())}, grid));
    return GeneratedParams::split(std::span<const double>(g.value(build_hypernet(g, hn, gv)).data), hn.dims.n(), hn.dims.m);
}

std::vector<double> forward_adaptive(std::span<const double> s, std::span<const double> grid, const ReconNet& net,
                                     const HyperNet& hn)
{
    Graph g;
    Var sv = g.input(Tensor({1, static_cast<int>(s.size())}, s));
    Var gv = g.input(Tensor({1, static_cast<int>(grid.size())}, grid));
    const auto& out = g.value(build_adaptive(g, net, hn, sv, gv, {0})).data;
    return {out.begin(), out.end()};
}

std::vector<double> forward_adaptive(std::span<const double> s, const GeneratedParams& p, const ReconNet& net)
{
    Graph g;
    Var sv = g.input(Tensor({1, static_cast<int>(s.size())}, s));
    const auto flat = p.flatten();
    Var th = g.input(Tensor({1, static_cast<int>(flat.size())}, flat));
    const auto& out = g.value(build_adaptive_with(g, net, sv, th, {0})).data;
    return {out.begin(), out.end()};
}

// ---------------------------------------------------------------------------
// Data plumbing

SceneInputs SceneInputs::from(const SceneSet& set)
{
    SceneInputs in;
    in.g = set.grid_size;
    for (const auto& graph : set.graphs)
        in.grids[graph.scene_id] = scene_graph_to_model_input(graph);
    return in;
}

const std::vector<double>& SceneInputs::at(std::uint32_t scene_id) const
{
    const auto it = grids.find(scene_id);
    if (it == grids.end())
        throw DataError("no scene graph for scene " + std::to_string(scene_id));
    return it->second;
}

SplitGuard::SplitGuard(std::set<std::uint32_t> forbidden, std::string exception_tag,
                       std::optional<std::uint32_t> exception_scene)
    : forbidden_(std::move(forbidden)), exception_tag_(std::move(exception_tag)), exception_scene_(exception_scene)
{
}

void SplitGuard::check(std::string_view method, std::string_view data_tag, std::uint32_t scene_id) const
{
    if (!forbidden_.contains(scene_id))
        return;
    if (exception_scene_ && *exception_scene_ == scene_id && !exception_tag_.empty() && data_tag == exception_tag_)
        return;
    throw Error("split violation: method '" + std::string(method) + "' tried to train on test scene " +
                std::to_string(scene_id) + " (data '" + std::string(data_tag) + "')");
}

void GradientAudit::record(std::string_view method, std::string_view data_tag,
                           std::span<const std::uint32_t> scene_ids, std::span<const std::size_t> indices)
{
    auto& e = entries[std::string(method) + "/" + std::string(data_tag)];
    e.method = method;
    e.data_tag = data_tag;
    e.scene_ids.insert(scene_ids.begin(), scene_ids.end());
    e.record_indices.insert(indices.begin(), indices.end());
    ++e.gradient_steps;
}

DataView view_of_scenes(const PreprocessedDataset& ds, const std::set<std::uint32_t>& scenes, std::string tag)
{
    DataView v;
    v.data = &ds;
    v.tag = std::move(tag);
    for (std::size_t i = 0; i < ds.records.size(); ++i)
        if (scenes.contains(ds.records[i].scene_id))
            v.indices.push_back(i);
    return v;
}

Batch make_batch(const DataView& view, std::span<const std::size_t> positions, const SceneInputs* scenes)
{
    const PreprocessedDataset& ds = *view.data;
    const int b = static_cast<int>(positions.size());
    const int n = ds.n();
    Batch out;
    out.s = Tensor({b, ds.m}, 0.0);
    out.h = Tensor({b, 2, ds.nc, ds.nt}, 0.0);
    std::vector<std::uint32_t> unique;
    for (int i = 0; i < b; ++i) {
        const std::size_t idx = view.indices.at(positions[static_cast<std::size_t>(i)]);
        const PreprocessedRecord& r = ds.records.at(idx);
        std::copy(r.s.begin(), r.s.end(), out.s.data.begin() + static_cast<std::ptrdiff_t>(i) * ds.m);
        std::copy(r.h.begin(), r.h.end(), out.h.data.begin() + static_cast<std::ptrdiff_t>(i) * n);
        out.record_indices.push_back(idx);
        out.scene_ids.push_back(r.scene_id);
        if (scenes) {
            auto it = std::find(unique.begin(), unique.end(), r.scene_id);
            if (it == unique.end()) {
                unique.push_back(r.scene_id);
                it = unique.end() - 1;
            }
            out.rows.push_back(static_cast<int>(it - unique.begin()));
        }
    }
    if (scenes) {
        const int gg = scenes->g * scenes->g;
        out.grids = Tensor({static_cast<int>(unique.size()), gg}, 0.0);
        for (std::size_t u = 0; u < unique.size(); ++u) {
            const auto& grid = scenes->at(unique[u]);
            if (static_cast<int>(grid.size()) != gg)
                throw DimensionError("scene graph size does not match G");
            std::copy(grid.begin(), grid.end(), out.grids.data.begin() + static_cast<std::ptrdiff_t>(u) * gg);
        }
    }
    return out;
}

BatchLoader::BatchLoader(const DataView& view, int batch_size, std::uint64_t seed, const SplitGuard& guard,
                         GradientAudit* audit, std::string method)
    : view_(view), batch_size_(batch_size), seed_(seed), guard_(guard), audit_(audit), method_(std::move(method))
{
    if (batch_size < 1)
        throw ValidationError("batch size must be >= 1");
    if (view.size() == 0)
        throw DataError("training split is empty");
}

std::vector<std::vector<std::size_t>> BatchLoader::epoch_batches(int epoch) const
{
    std::vector<std::size_t> order(view_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(seed_, static_cast<std::uint64_t>(epoch), 0x5eed));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size_))
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(
                                             std::min(order.size(), i + static_cast<std::size_t>(batch_size_))));
    return out;
}

Batch BatchLoader::load(std::span<const std::size_t> positions, const SceneInputs* scenes) const
{
    Batch b = make_batch(view_, positions, scenes);
    for (std::uint32_t id : b.scene_ids)
        guard_.check(method_, view_.tag, id);
    if (audit_)
        audit_->record(method_, view_.tag, b.scene_ids, b.record_indices);
    return b;
}

double PlateauScheduler::step(double val_loss)
{
    if (val_loss < best_) {
        best_ = val_loss;
        bad_ = 0;
        return 1.0;
    }
    if (++bad_ >= patience_) {
        bad_ = 0;
        return factor_;
    }
    return 1.0;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

template <class Fn>
void for_each_chunk(const DataView& view, int batch_size, Fn&& fn)
{
    std::vector<std::size_t> pos;
    for (std::size_t start = 0; start < view.size(); start += static_cast<std::size_t>(batch_size)) {
        pos.clear();
        for (std::size_t i = start; i < std::min(view.size(), start + static_cast<std::size_t>(batch_size)); ++i)
            pos.push_back(i);
        fn(pos);
    }
}

// Adds each sample's squared error to total in order, so the sum does not
// depend on how the split was chunked into batches.
void add_sq_errors(double& total, const Tensor& pred, const Tensor& truth)
{
    const std::size_t b = static_cast<std::size_t>(pred.dim(0));
    const std::size_t len = pred.size() / b;
    for (std::size_t i = 0; i < b; ++i) {
        double acc = 0.0;
        for (std::size_t j = i * len; j < (i + 1) * len; ++j) {
            const double d = pred.data[j] - truth.data[j];
            acc += d * d;
        }
        total += acc;
    }
}

void append_rows(std::vector<std::vector<double>>& out, const Tensor& t)
{
    const std::size_t b = static_cast<std::size_t>(t.dim(0));
    const std::size_t len = t.size() / b;
    for (std::size_t i = 0; i < b; ++i)
        out.emplace_back(t.data.begin() + static_cast<std::ptrdiff_t>(i * len),
                         t.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * len));
}

} // namespace

double eval_loss(const ReconNet& net, const DataView& view, int batch_size)
{
    if (view.size() == 0)
        throw DataError("evaluation split is empty");
    double total = 0.0;
    for_each_chunk(view, batch_size, [&](std::span<const std::size_t> pos) {
        const Batch b = make_batch(view, pos, nullptr);
        Graph g;
        Var y = build_baseline(g, net, g.input(b.s));
        add_sq_errors(total, g.value(y), b.h);
    });
    return total / static_cast<double>(view.size());
}

double eval_loss(const ReconNet& net, const HyperNet& hn, const DataView& view, const SceneInputs& scenes,
                 int batch_size)
{
    if (view.size() == 0)
        throw DataError("evaluation split is empty");
    double total = 0.0;
    for_each_chunk(view, batch_size, [&](std::span<const std::size_t> pos) {
        const Batch b = make_batch(view, pos, &scenes);
        Graph g;
        Var y = build_adaptive(g, net, hn, g.input(b.s), g.input(b.grids), b.rows);
        add_sq_errors(total, g.value(y), b.h);
    });
    return total / static_cast<double>(view.size());
}

std::vector<std::vector<double>> predict(const ReconNet& net, const DataView& view, int batch_size)
{
    std::vector<std::vector<double>> out;
    for_each_chunk(view, batch_size, [&](std::span<const std::size_t> pos) {
        const Batch b = make_batch(view, pos, nullptr);
        Graph g;
        append_rows(out, g.value(build_baseline(g, net, g.input(b.s))));
    });
    return out;
}

std::vector<std::vector<double>> predict(const ReconNet& net, const HyperNet& hn, const DataView& view,
                                         const SceneInputs& scenes, int batch_size)
{
    std::vector<std::vector<double>> out;
    for_each_chunk(view, batch_size, [&](std::span<const std::size_t> pos) {
        const Batch b = make_batch(view, pos, &scenes);
        Graph g;
        append_rows(out, g.value(build_adaptive(g, net, hn, g.input(b.s), g.input(b.grids), b.rows)));
    });
    return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::vector<Tensor> snapshot(const std::vector<Parameter*>& ps)
{
    std::vector<Tensor> out;
    out.reserve(ps.size());
    for (const Parameter* p : ps)
        out.push_back(p->value);
    return out;
}

void restore(const std::vector<Parameter*>& ps, const std::vector<Tensor>& values)
{
    for (std::size_t i = 0; i < ps.size(); ++i)
        ps[i]->value = values[i];
}

// Shared epoch loop. `step` runs one gradient step on a batch and returns its
// summed squared error; `validate` returns the current validation loss.
template <class Step, class Validate>
TrainResult run_training(const std::vector<Parameter*>& params, const DataView& train, const TrainConfig& cfg,
                         const TrainContext& ctx, const SceneInputs* scenes, Step&& step, Validate&& validate)
{
    const auto t0 = std::chrono::steady_clock::now();
    BatchLoader loader(train, cfg.batch_size, cfg.seed, ctx.guard, ctx.audit, ctx.method);
    AdamState opt = AdamState::for_params(params, cfg.lr);
    PlateauScheduler sched(cfg.plateau_patience);

    TrainResult res;
    res.best_val_loss = validate();
    res.history.push_back({0, std::numeric_limits<double>::quiet_NaN(), res.best_val_loss, opt.lr});
    sched.step(res.best_val_loss);
    std::vector<Tensor> best = snapshot(params);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double total = 0.0;
        for (const auto& positions : loader.epoch_batches(epoch)) {
            const Batch b = loader.load(positions, scenes);
            for (Parameter* p : params)
                p->zero_grad();
            total += step(b);
            adam_step(params, opt);
        }
        const double train_loss = total / static_cast<double>(train.size());
        const double val = validate();
        res.history.push_back({epoch, train_loss, val, opt.lr});
        if (cfg.on_epoch)
            cfg.on_epoch(epoch, train_loss, val, opt.lr);
        if (val < res.best_val_loss) {
            res.best_val_loss = val;
            res.best_epoch = epoch;
            best = snapshot(params);
        }
        opt.lr *= sched.step(val);
        if (cfg.early_stop_patience > 0 && epoch - res.best_epoch >= cfg.early_stop_patience)
            break;
    }
    restore(params, best);
    res.train_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

double batch_loss_value(const Graph& g, Var loss, const Batch& b)
{
    return g.value(loss).data[0] * b.s.dim(0);
}

} // namespace

TrainResult train_step1(ReconNet& net, const DataView& train, const DataView& val, const TrainConfig& cfg,
                        const TrainContext& ctx)
{
    net.set_trainable(true);
    const auto params = net.parameters();
    return run_training(
        params, train, cfg, ctx, nullptr,
        [&](const Batch& b) {
            Graph g;
            Var y = build_baseline(g, net, g.input(b.s));
            Var loss = g.mse_loss(y, g.input(b.h));
            g.backward(loss);
            return batch_loss_value(g, loss, b);
        },
        [&] { return eval_loss(std::as_const(net), val, cfg.batch_size); });
}

TrainResult train_step2(const ReconNet& net, HyperNet& hn, const DataView& train, const DataView& val,
                        const SceneInputs& scenes, const TrainConfig& cfg, const TrainContext& ctx)
{
    if (!(hn.dims == net.dims))
        throw DimensionError("hypernetwork dims do not match the reconstruction network");
    for (Parameter* p : hn.parameters())
        p->trainable = true;
    const auto params = hn.parameters();
    return run_training(
        params, train, cfg, ctx, &scenes,
        [&](const Batch& b) {
            Graph g;
            Var theta = build_hypernet(g, hn, g.input(b.grids));
            Var y = build_adaptive_with(g, net, g.input(b.s), theta, b.rows);
            Var loss = g.mse_loss(y, g.input(b.h));
            g.backward(loss);
            return batch_loss_value(g, loss, b);
        },
        [&] { return eval_loss(net, std::as_const(hn), val, scenes, cfg.batch_size); });
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string meta_to_json(const ModelMeta& m)
{
    nlohmann::json j;
    j["kind"] = m.kind;
    j["method"] = m.method;
    j["nc"] = m.dims.nc;
    j["nt"] = m.dims.nt;
    j["m"] = m.dims.m;
    j["g"] = m.dims.g;
    j["alpha"] = m.alpha;
    j["cr"] = m.cr.str();
    j["init_seed"] = m.init_seed;
    j["projection_seed"] = m.projection_seed;
    return j.dump();
}

ModelMeta meta_from_json(const std::string& text)
{
    try {
        const auto j = nlohmann::json::parse(text);
        ModelMeta m;
        m.kind = j.at("kind").get<std::string>();
        m.method = j.value("method", std::string{});
        m.dims.nc = j.at("nc").get<int>();
        m.dims.nt = j.at("nt").get<int>();
        m.dims.m = j.at("m").get<int>();
        m.dims.g = j.at("g").get<int>();
        m.alpha = j.at("alpha").get<double>();
        m.cr = CompressionRatio::parse(j.at("cr").get<std::string>());
        m.init_seed = j.at("init_seed").get<std::uint64_t>();
        m.projection_seed = j.at("projection_seed").get<std::uint64_t>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint header: ") + e.what());
    }
}

namespace {

Checkpoint to_checkpoint(const std::vector<const Parameter*>& ps, const ModelMeta& meta)
{
    Checkpoint ck;
    ck.header = meta_to_json(meta);
    for (const Parameter* p : ps)
        ck.params.push_back({p->name, p->value, p->trainable});
    return ck;
}

void fill_from(const Checkpoint& ck, const std::vector<Parameter*>& ps, const std::string& path)
{
    if (ck.params.size() != ps.size())
        throw DimensionError("checkpoint " + path + " holds " + std::to_string(ck.params.size()) +
                             " tensors, model expects " + std::to_string(ps.size()));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const NamedTensor& t = ck.params[i];
        if (t.name != ps[i]->name || t.value.shape != ps[i]->value.shape)
            throw DimensionError("checkpoint " + path + ": tensor '" + t.name + "' " + shape_str(t.value.shape) +
                                 " does not match '" + ps[i]->name + "' " + shape_str(ps[i]->value.shape));
        ps[i]->value = t.value;
        ps[i]->trainable = t.trainable;
    }
}

} // namespace

void save_reconnet(const std::string& path, const ReconNet& net, const ModelMeta& meta)
{
    ModelMeta m = meta;
    m.kind = "reconnet";
    m.dims = net.dims;
    m.alpha = net.alpha;
    write_checkpoint(path, to_checkpoint(net.parameters(), m));
}

ReconNet load_reconnet(const std::string& path, ModelMeta* meta)
{
    const Checkpoint ck = read_checkpoint(path);
    const ModelMeta m = meta_from_json(ck.header);
    if (m.kind != "reconnet")
        throw DataError(path + " is a " + m.kind + " checkpoint, expected reconnet");
    ReconNet net = ReconNet::create(m.dims, m.alpha, m.init_seed);
    fill_from(ck, net.parameters(), path);
    if (meta)
        *meta = m;
    return net;
}

void save_hypernet(const std::string& path, const HyperNet& hn, const ModelMeta& meta)
{
    ModelMeta m = meta;
    m.kind = "hypernet";
    m.dims = hn.dims;
    write_checkpoint(path, to_checkpoint(hn.parameters(), m));
}

HyperNet load_hypernet(const std::string& path, ModelMeta* meta)
{
    const Checkpoint ck = read_checkpoint(path);
    const ModelMeta m = meta_from_json(ck.header);
    if (m.kind != "hypernet")
        throw DataError(path + " is a " + m.kind + " checkpoint, expected hypernet");
    HyperNet hn = HyperNet::create(m.dims, m.init_seed);
    fill_from(ck, hn.parameters(), path);
    if (meta)
        *meta = m;
    return hn;
}

void check_compatible(const ModelMeta& meta, const PreprocessedDataset& ds, std::optional<int> grid_size)
{
    std::ostringstream diff;
    auto cmp = [&](const char* key, auto a, auto b) {
        if (a != b)
            diff << ' ' << key << " (checkpoint " << a << ", data " << b << ')';
    };
    cmp("nc", meta.dims.nc, ds.nc);
    cmp("nt", meta.dims.nt, ds.nt);
    cmp("m", meta.dims.m, ds.m);
    cmp("cr", meta.cr.str(), ds.cr.str());
    cmp("projection_seed", meta.projection_seed, ds.projection_seed);
    if (grid_size)
        cmp("g", meta.dims.g, *grid_size);
    if (!diff.str().empty())
        throw DimensionError("checkpoint does not match dataset:" + diff.str());
}

} // namespace csifb
