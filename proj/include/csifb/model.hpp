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

#include "csifb/autodiff.hpp"
#include "csifb/preprocess.hpp"
#include "csifb/scene.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace csifb {

struct ModelDims {
    int nc = 16;
    int nt = 8;
    int m = 16;
    int g = 32;

    int n() const { return 2 * nc * nt; }
    friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Baseline reconstruction network: linear dense M -> N, a residual block of
/// three 3x3 convs (2->8->16->2, tanh on the two hidden layers) and a linear
/// 2->2 output conv.
struct ReconNet {
    ModelDims dims;
    double alpha = 0.6;
    LayerParams dense_init;
    std::array<LayerParams, 3> conv_block;
    LayerParams output_conv;

    static ReconNet create(const ModelDims& dims, double alpha, std::uint64_t seed);
    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    void set_trainable(bool on);
};

/// Scene-graph conditioned generator of (W_H, b_H).
struct HyperNet {
    ModelDims dims;
    LayerParams input_dense;
    std::array<LayerParams, 5> conv_stack;
    LayerParams output_dense; // zero-initialized

    static constexpr std::array<int, 6> kChannels{16, 16, 16, 8, 8, 4};

    static HyperNet create(const ModelDims& dims, std::uint64_t seed);
    int feature_side() const { return dims.g / 4; }
    int output_size() const { return dims.n() * (dims.m + 1); }
    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
};

/// Layout of the hypernetwork output: first N*M entries are W_H (row-major
/// N x M), the last N are b_H.
struct GeneratedParams {
    int n = 0;
    int m = 0;
    std::vector<double> w_h;
    std::vector<double> b_h;

    std::vector<double> flatten() const;
    static GeneratedParams split(std::span<const double> theta, int n, int m);
};

// Graph builders. They accept const networks for inference (no gradient
// leaves) and mutable ones for training.
Graph::Var build_baseline(Graph& g, ReconNet& net, Graph::Var s);
Graph::Var build_baseline(Graph& g, const ReconNet& net, Graph::Var s);
Graph::Var build_hypernet(Graph& g, HyperNet& hn, Graph::Var grids);
Graph::Var build_hypernet(Graph& g, const HyperNet& hn, Graph::Var grids);
/// rows[i] selects which scene (row of the hypernetwork output) sample i uses.
Graph::Var build_adaptive(Graph& g, ReconNet& net, HyperNet& hn, Graph::Var s, Graph::Var grids,
                          std::vector<int> rows);
Graph::Var build_adaptive(Graph& g, const ReconNet& net, const HyperNet& hn, Graph::Var s, Graph::Var grids,
                          std::vector<int> rows);
/// Adaptive forward with externally supplied generated parameters.
Graph::Var build_adaptive_with(Graph& g, const ReconNet& net, Graph::Var s, Graph::Var theta, std::vector<int> rows);

/// Single-sample conveniences; results are 2*Nc*Nt vectors.
std::vector<double> forward_baseline(std::span<const double> s, const ReconNet& net);
GeneratedParams generate_params(std::span<const double> grid, const HyperNet& hn);
std::vector<double> forward_adaptive(std::span<const double> s, std::span<const double> grid, const ReconNet& net,
                                     const HyperNet& hn);
std::vector<double> forward_adaptive(std::span<const double> s, const GeneratedParams& p, const ReconNet& net);

// ---------------------------------------------------------------------------
// Data plumbing

/// Model input grids keyed by scene_id (G*G values each).
struct SceneInputs {
    int g = 0;
    std::map<std::uint32_t, std::vector<double>> grids;

    static SceneInputs from(const SceneSet& set);
    const std::vector<double>& at(std::uint32_t scene_id) const;
};

/// Refuses batches that contain forbidden scenes. Records with scene_id
/// equal to exception_scene are allowed only when the data tag equals
/// exception_tag.
class SplitGuard {
public:
    SplitGuard() = default;
    SplitGuard(std::set<std::uint32_t> forbidden, std::string exception_tag = {},
               std::optional<std::uint32_t> exception_scene = std::nullopt);

    void check(std::string_view method, std::string_view data_tag, std::uint32_t scene_id) const;
    const std::set<std::uint32_t>& forbidden() const { return forbidden_; }

private:
    std::set<std::uint32_t> forbidden_;
    std::string exception_tag_;
    std::optional<std::uint32_t> exception_scene_;
};

/// Log of every (method, data tag, scene, record) that reached a gradient step.
struct GradientAudit {
    struct Entry {
        std::string method;
        std::string data_tag;
        std::set<std::uint32_t> scene_ids;
        std::set<std::size_t> record_indices;
        std::uint64_t gradient_steps = 0;
    };
    std::map<std::string, Entry> entries; // keyed by method + "/" + data tag

    void record(std::string_view method, std::string_view data_tag, std::span<const std::uint32_t> scene_ids,
                std::span<const std::size_t> indices);
};

/// A subset of a preprocessed dataset used as one training or evaluation split.
struct DataView {
    const PreprocessedDataset* data = nullptr;
    std::vector<std::size_t> indices;
    std::string tag = "main";

    std::size_t size() const { return indices.size(); }
};

DataView view_of_scenes(const PreprocessedDataset& ds, const std::set<std::uint32_t>& scenes,
                        std::string tag = "main");

struct Batch {
    Tensor s;       // [B, M]
    Tensor h;       // [B, 2, Nc, Nt]
    Tensor grids;   // [U, G*G] (adaptive only)
    std::vector<int> rows;
    std::vector<std::size_t> record_indices;
    std::vector<std::uint32_t> scene_ids;
};

Batch make_batch(const DataView& view, std::span<const std::size_t> positions, const SceneInputs* scenes);

/// Shuffled mini-batches; every batch passes the split guard and is logged
/// to the audit when it is handed out for a gradient step.
class BatchLoader {
public:
    BatchLoader(const DataView& view, int batch_size, std::uint64_t seed, const SplitGuard& guard,
                GradientAudit* audit, std::string method);

    std::vector<std::vector<std::size_t>> epoch_batches(int epoch) const;
    Batch load(std::span<const std::size_t> positions, const SceneInputs* scenes) const;

private:
    const DataView& view_;
    int batch_size_;
    std::uint64_t seed_;
    const SplitGuard& guard_;
    GradientAudit* audit_;
    std::string method_;
};

/// Halves the learning rate after `patience` consecutive non-improving epochs.
class PlateauScheduler {
public:
    PlateauScheduler(int patience, double factor = 0.5) : patience_(patience), factor_(factor) {}

    /// Returns the multiplier to apply to the learning rate (1 or factor).
    double step(double val_loss);
    int bad_epochs() const { return bad_; }

private:
    int patience_;
    double factor_;
    double best_ = std::numeric_limits<double>::infinity();
    int bad_ = 0;
};

struct TrainConfig {
    int epochs = 100;
    int batch_size = 200;
    double lr = 1e-3;
    int plateau_patience = 30;
    int early_stop_patience = 0; // 0 disables early stopping
    std::uint64_t seed = 1;
    std::function<void(int epoch, double train_loss, double val_loss, double lr)> on_epoch;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> history; // epoch 0 is the untrained model's validation loss
    int best_epoch = 0;
    double best_val_loss = 0.0;
    double train_time_s = 0.0;
};

struct TrainContext {
    SplitGuard guard;
    GradientAudit* audit = nullptr;
    std::string method = "general";
};

/// Mean per-sample squared error on the normalized CSI.
double eval_loss(const ReconNet& net, const DataView& view, int batch_size = 200);
double eval_loss(const ReconNet& net, const HyperNet& hn, const DataView& view, const SceneInputs& scenes,
                 int batch_size = 200);

/// Normalized predictions, one vector per view entry.
std::vector<std::vector<double>> predict(const ReconNet& net, const DataView& view, int batch_size = 200);
std::vector<std::vector<double>> predict(const ReconNet& net, const HyperNet& hn, const DataView& view,
                                         const SceneInputs& scenes, int batch_size = 200);

/// Step 1: trains every ReconNet parameter; net ends at the best-validation state.
TrainResult train_step1(ReconNet& net, const DataView& train, const DataView& val, const TrainConfig& cfg,
                        const TrainContext& ctx);
/// Step 2: ReconNet frozen, only the hypernetwork learns.
TrainResult train_step2(const ReconNet& net, HyperNet& hn, const DataView& train, const DataView& val,
                        const SceneInputs& scenes, const TrainConfig& cfg, const TrainContext& ctx);

// ---------------------------------------------------------------------------
// Checkpoints

struct ModelMeta {
    ModelDims dims;
    double alpha = 0.6;
    CompressionRatio cr;
    std::uint64_t init_seed = 0;
    std::uint64_t projection_seed = 0;
    std::string kind = "reconnet"; // reconnet | hypernet
    std::string method;
};

std::string meta_to_json(const ModelMeta& meta);
ModelMeta meta_from_json(const std::string& text);

void save_reconnet(const std::string& path, const ReconNet& net, const ModelMeta& meta);
ReconNet load_reconnet(const std::string& path, ModelMeta* meta = nullptr);
void save_hypernet(const std::string& path, const HyperNet& hn, const ModelMeta& meta);
HyperNet load_hypernet(const std::string& path, ModelMeta* meta = nullptr);

/// Throws DimensionError naming every field that differs.
void check_compatible(const ModelMeta& meta, const PreprocessedDataset& ds, std::optional<int> grid_size = {});

} // namespace csifb
