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

#include "csifb/config.hpp"
#include "csifb/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace csifb {

struct Nmse {
    double linear = 0.0;
    double db = 0.0;
};

/// 10*log10(linear); an exact reconstruction (0) maps to -infinity.
double to_db(double linear);

/// Mean over samples of ||recon - truth||^2 / ||truth||^2. Throws DataError
/// on a zero-norm truth sample and DimensionError on shape mismatch.
Nmse nmse(const std::vector<std::vector<double>>& recon, const std::vector<std::vector<double>>& truth);

struct MetricsRecord {
    std::string method; // adapcsinet | general | online(k) | switch-los
    CompressionRatio cr;
    double cr_effective = 0.0;
    std::uint64_t seed = 0;
    std::string split; // val | test | test-online | test-los
    double nmse_linear = 0.0;
    double nmse_db = 0.0;
    double train_time_s = 0.0;
};

void write_results_csv(const std::string& path, const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_results_csv(const std::string& path);

/// Median of nmse_db over seeds for records matching method, cr and split.
double median_db(const std::vector<MetricsRecord>& records, const std::string& method, const CompressionRatio& cr,
                 const std::string& split);
double median(std::vector<double> v);

/// True when the UE at the record's position sees the BS directly.
bool is_los_sample(const Scene& scene, const PreprocessedRecord& r);

/// Problems found in a gradient audit: any test scene outside the online
/// exception, online data from anywhere but the designated scene, or one of
/// the held-out online records (the first split.online_holdout).
std::vector<std::string> audit_violations(const GradientAudit& audit, const SplitSpec& split);

/// Artifact layout and stage runners for one configured experiment. Each
/// stage reads its inputs from disk, refusing to run when an upstream
/// artifact is missing, and writes a manifest under manifests/.
class Pipeline {
public:
    explicit Pipeline(ExperimentConfig cfg);

    const ExperimentConfig& config() const { return cfg_; }
    std::filesystem::path root() const { return root_; }

    std::filesystem::path scenes_dir() const;
    std::filesystem::path main_csi() const;
    std::filesystem::path online_csi() const;
    std::filesystem::path preprocessed(const std::string& tag, const CompressionRatio& cr) const;
    std::filesystem::path checkpoint(const std::string& name) const;
    std::filesystem::path results_csv() const;
    std::filesystem::path audit_json() const;

    static std::string general_name(const CompressionRatio& cr, std::uint64_t seed);
    static std::string hyper_name(const CompressionRatio& cr, std::uint64_t seed);
    static std::string online_name(int budget, const CompressionRatio& cr, std::uint64_t seed);
    static std::string switch_name(const CompressionRatio& cr, std::uint64_t seed);

    /// Optional cell filters for the training stages (empty = all).
    std::vector<CompressionRatio> only_crs;
    std::vector<std::uint64_t> only_seeds;
    std::function<void(const std::string&)> log;

    void gen_scenes();
    void gen_csi();
    void preprocess();
    void train_step1();
    void train_step2();
    void train_online();
    void train_switch();
    std::vector<MetricsRecord> eval();
    void report();

    std::vector<MetricsRecord> run_cr_sweep();
    std::vector<MetricsRecord> run_online_sweep();
    std::vector<MetricsRecord> run_switch_comparison();
    /// All stages in order.
    std::vector<MetricsRecord> run_all();

private:
    struct CellResult {
        double train_time_s = 0.0;
    };

    void require(const std::filesystem::path& p, const std::string& stage) const;
    void write_manifest(const std::string& stage, const std::vector<std::filesystem::path>& inputs,
                        const std::vector<std::filesystem::path>& outputs) const;
    bool cell_up_to_date(const std::string& name, const std::vector<std::filesystem::path>& inputs) const;
    void write_cell_log(const std::string& name, const std::vector<std::filesystem::path>& inputs,
                        const TrainResult& res, const GradientAudit& audit) const;
    double cell_train_time(const std::string& name) const;
    std::vector<CompressionRatio> selected(const std::vector<CompressionRatio>& crs) const;
    std::vector<std::uint64_t> selected_seeds() const;
    TrainConfig train_config(int epochs, std::uint64_t seed, std::uint64_t salt) const;
    void say(const std::string& msg) const;

    std::vector<MetricsRecord> eval_cr_sweep();
    std::vector<MetricsRecord> eval_online();
    std::vector<MetricsRecord> eval_switch();

    ExperimentConfig cfg_;
    std::filesystem::path root_;
};

/// SHA-256 of every file under root, keyed by relative path, with
/// wall-clock fields masked: "wall_clock" and "train_time_s" keys in JSON
/// files and the train_time_s column of CSV files. Hashes of CSV and JSON
/// files recorded inside manifests are replaced by their masked hashes.
std::map<std::string, std::string> masked_output_hashes(const std::filesystem::path& root);

} // namespace csifb
