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
#include "csifb/config.hpp"
#include "csifb/harness.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace csifb;

namespace {

struct Common {
    std::string config_file;
    std::string profile;
    std::vector<std::string> sets;
    std::string out;
    std::optional<int> nc;
    std::optional<int> subcarriers;
    std::optional<int> threads;
    std::vector<std::string> crs;
    std::vector<std::uint64_t> seeds;
    bool quiet = false;
};

void add_common(CLI::App* app, Common& c)
{
    app->add_option("-c,--config", c.config_file, "Configuration file");
    app->add_option("--profile", c.profile, "Built-in profile: desk (default) or paper");
    app->add_option("--set", c.sets, "Override a key, e.g. --set training.epochs_step1=20");
    app->add_option("-o,--out-dir", c.out, "Run directory (output.dir)");
    app->add_option("--nc", c.nc, "Retained delay taps (preprocess.nc)");
    app->add_option("--subcarriers", c.subcarriers, "Subcarriers (channel.subcarriers)");
    app->add_option("--threads", c.threads, "Dataset generation threads (channel.threads)");
    app->add_option("--only-cr", c.crs, "Restrict training stages to these compression ratios");
    app->add_option("--only-seed", c.seeds, "Restrict training stages to these seeds");
    app->add_flag("-q,--quiet", c.quiet, "Suppress progress output");
}

ExperimentConfig resolve(const Common& c)
{
    ConfigSources src;
    src.profile = c.profile;
    src.file = c.config_file;
    src.env = current_environment();
    for (const auto& s : c.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ValidationError("--set expects key=value, got '" + s + "'");
        src.flags.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    if (!c.out.empty())
        src.flags.emplace_back("output.dir", c.out);
    if (c.nc)
        src.flags.emplace_back("preprocess.nc", std::to_string(*c.nc));
    if (c.subcarriers)
        src.flags.emplace_back("channel.subcarriers", std::to_string(*c.subcarriers));
    if (c.threads)
        src.flags.emplace_back("channel.threads", std::to_string(*c.threads));
    return resolve_config(src);
}

Pipeline make_pipeline(const Common& c)
{
    Pipeline p(resolve(c));
    for (const auto& cr : c.crs)
        p.only_crs.push_back(CompressionRatio::parse(cr));
    p.only_seeds = c.seeds;
    if (!c.quiet)
        p.log = [](const std::string& m) { std::cerr << m << '\n'; };
    return p;
}

int run(int argc, char** argv)
{
    CLI::App app{"csifb: scene-aware CSI feedback testbed"};
    app.require_subcommand(1);
    Common common;

    auto* gen_scenes = app.add_subcommand("gen-scenes", "Generate random indoor scenes and scene graphs");
    add_common(gen_scenes, common);

    auto* gen_csi = app.add_subcommand("gen-csi", "Ray-trace CSI datasets for the generated scenes");
    add_common(gen_csi, common);
    std::string csi_scenes, csi_out;
    std::optional<int> csi_samples;
    std::optional<std::uint64_t> csi_seed;
    bool csi_diffraction = false;
    gen_csi->add_option("--scenes", csi_scenes, "Standalone mode: scene-set directory");
    gen_csi->add_option("--out", csi_out, "Standalone mode: dataset file");
    gen_csi->add_option("--samples", csi_samples, "Standalone mode: samples per scene");
    gen_csi->add_option("--seed", csi_seed, "Standalone mode: dataset seed");
    gen_csi->add_flag("--diffraction", csi_diffraction, "Enable knife-edge diffraction");

    auto* pre = app.add_subcommand("preprocess", "Angular-delay transform, normalization and projection");
    add_common(pre, common);
    std::string pre_in, pre_out, pre_cr, pre_fit;
    std::optional<std::uint64_t> pre_seed;
    pre->add_option("--in", pre_in, "Standalone mode: raw dataset file");
    pre->add_option("--out", pre_out, "Standalone mode: preprocessed file");
    pre->add_option("--cr", pre_cr, "Standalone mode: compression ratio, e.g. 1/16");
    pre->add_option("--seed", pre_seed, "Standalone mode: projection seed");
    pre->add_option("--norm-from", pre_fit, "Standalone mode: reuse normalization of this preprocessed file");

    auto* step1 = app.add_subcommand("train-step1", "Train the general reconstruction network");
    add_common(step1, common);
    auto* step2 = app.add_subcommand("train-step2", "Train the hypernetwork on the frozen base");
    add_common(step2, common);
    auto* online = app.add_subcommand("train-online", "Fine-tune copies of the general network online");
    add_common(online, common);
    auto* sw = app.add_subcommand("train-switch", "Train the LOS-specific switch network");
    add_common(sw, common);
    auto* ev = app.add_subcommand("eval", "Evaluate every checkpoint and write results.csv");
    add_common(ev, common);
    auto* rep = app.add_subcommand("report", "Write figure CSVs and the split audit");
    add_common(rep, common);
    auto* all = app.add_subcommand("run-all", "Run every stage in order");
    add_common(all, common);
    auto* show = app.add_subcommand("show-config", "Print the resolved configuration");
    add_common(show, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (show->parsed()) {
        std::cout << resolve(common).serialize();
        return 0;
    }

    if (gen_csi->parsed() && !csi_out.empty()) {
        if (csi_scenes.empty())
            throw ValidationError("gen-csi: --out requires --scenes");
        ExperimentConfig cfg = resolve(common);
        DatasetConfig dc = cfg.dataset_config();
        if (csi_samples)
            dc.samples_per_scene = *csi_samples;
        if (csi_seed)
            dc.seed = *csi_seed;
        dc.trace.diffraction = dc.trace.diffraction || csi_diffraction;
        if (!fs::exists(fs::path(csi_scenes) / "manifest.json"))
            throw DataError("missing scene set " + csi_scenes + " (run 'gen-scenes' first)");
        const SceneSet set = read_scene_set(csi_scenes);
        write_dataset(csi_out, generate_dataset(set.scenes, dc));
        return 0;
    }

    if (pre->parsed() && !pre_out.empty()) {
        if (pre_in.empty())
            throw ValidationError("preprocess: --out requires --in");
        ExperimentConfig cfg = resolve(common);
        if (!fs::exists(pre_in))
            throw DataError("missing dataset " + pre_in + " (run 'gen-csi' first)");
        PreprocessOptions opt;
        opt.nc = cfg.nc;
        opt.cr = pre_cr.empty() ? cfg.crs.front() : CompressionRatio::parse(pre_cr);
        opt.projection_seed = pre_seed.value_or(cfg.projection_seed);
        if (!pre_fit.empty())
            opt.fixed_norm = read_preprocessed(pre_fit).norm;
        write_preprocessed(pre_out, preprocess(read_dataset(pre_in), opt));
        return 0;
    }

    Pipeline p = make_pipeline(common);
    if (gen_scenes->parsed())
        p.gen_scenes();
    else if (gen_csi->parsed())
        p.gen_csi();
    else if (pre->parsed())
        p.preprocess();
    else if (step1->parsed())
        p.train_step1();
    else if (step2->parsed())
        p.train_step2();
    else if (online->parsed())
        p.train_online();
    else if (sw->parsed())
        p.train_switch();
    else if (ev->parsed())
        p.eval();
    else if (rep->parsed())
        p.report();
    else if (all->parsed())
        p.run_all();
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    try {
        return run(argc, argv);
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return 2;
    } catch (const DivergenceError& e) {
        std::cerr << "training diverged: " << e.what() << '\n';
        return 4;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
