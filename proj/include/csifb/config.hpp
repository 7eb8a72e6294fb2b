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

#include "csifb/channel.hpp"
#include "csifb/model.hpp"
#include "csifb/preprocess.hpp"
#include "csifb/scene.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace csifb {

struct SplitSpec {
    int train_envs = 160;
    int val_envs = 20;
    int test_envs = 20;
    int samples_per_env = 50;
    std::uint64_t seed = 2026;
    int online_env = 0;        // index into the test environments
    int online_holdout = 100;  // early-stopping samples drawn from the online pool
    int online_pool = 900;     // samples available for fine-tuning budgets
    std::vector<int> budgets{50, 100, 200, 400, 800};
    int los_min_samples = 50;

    int total_envs() const { return train_envs + val_envs + test_envs; }
    std::vector<std::uint32_t> train_ids() const;
    std::vector<std::uint32_t> val_ids() const;
    std::vector<std::uint32_t> test_ids() const;
    std::uint32_t online_scene() const;
};

struct TrainingParams {
    int batch_size = 200;
    int epochs_step1 = 300;
    int epochs_step2 = 100;
    double lr = 1e-3;
    int plateau_patience = 30;
    double online_lr = 1e-4;
    int online_epochs = 200;
    int online_batch_size = 32;
    int online_patience = 20;
};

struct ExperimentConfig {
    std::string profile = "desk";
    SceneParams scene;
    double min_reachable = 0.8; // redraw scenes whose UE region is mostly unreachable
    TraceConfig trace;
    ArrayConfig array;
    OfdmConfig ofdm;
    int threads = 1;
    int nc = 16;
    std::vector<CompressionRatio> crs{{1, 8}, {1, 16}, {1, 24}, {1, 32}};
    std::uint64_t projection_seed = 7;
    double alpha = 0.6;
    int grid_size = 32;
    TrainingParams training;
    SplitSpec split;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    CompressionRatio online_cr{1, 16};
    std::vector<CompressionRatio> switch_crs{{1, 16}};
    std::string output_dir = "run";

    static ExperimentConfig desk();
    static ExperimentConfig paper();
    static ExperimentConfig for_profile(const std::string& name);

    int n() const { return 2 * nc * array.antennas; }
    ModelDims dims(const CompressionRatio& cr) const;
    DatasetConfig dataset_config() const;

    /// Sets one key ("section.key") from text. Throws ValidationError naming
    /// the key on unknown keys or type mismatches.
    void set(const std::string& path, const std::string& value);
    std::string get(const std::string& path) const;
    static const std::vector<std::string>& keys();

    /// Cross-field checks; throws ValidationError naming the keys involved.
    void validate() const;

    /// Canonical text form; parse(serialize()) reproduces the config.
    std::string serialize() const;
    std::string hash() const;
};

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

/// Applies "[section]" / "key = value" text on top of cfg. '#' and ';' start
/// comments.
void apply_config_text(ExperimentConfig& cfg, const std::string& text, const std::string& origin = "<text>");
void apply_config_file(ExperimentConfig& cfg, const std::string& path);

/// Every known key may be overridden by PREFIX_SECTION_KEY, e.g.
/// CSIFB_TRAINING_EPOCHS_STEP1=20.
inline constexpr const char* kEnvPrefix = "CSIFB_";
void apply_env_overrides(ExperimentConfig& cfg, const std::map<std::string, std::string>& env);
std::map<std::string, std::string> current_environment();

struct ConfigSources {
    std::string profile;                                     // empty: desk, or CSIFB_PROFILE
    std::string file;                                        // optional config file
    std::map<std::string, std::string> env;                  // environment snapshot
    std::vector<std::pair<std::string, std::string>> flags;  // key path -> value, applied last
};

/// profile -> file -> environment -> flags, then validate().
ExperimentConfig resolve_config(const ConfigSources& src);

} // namespace csifb
