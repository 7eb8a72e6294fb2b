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
#include "csifb/harness.hpp"

#include "csifb/channel.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

namespace csifb {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Metrics

double to_db(double linear)
{
    if (linear == 0.0)
        return -std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(linear);
}

Nmse nmse(const std::vector<std::vector<double>>& recon, const std::vector<std::vector<double>>& truth)
{
    if (recon.size() != truth.size() || truth.empty())
        throw DimensionError("nmse: batch sizes differ or are empty (" + std::to_string(recon.size()) + " vs " +
                             std::to_string(truth.size()) + ")");
    double acc = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (recon[i].size() != truth[i].size())
            throw DimensionError("nmse: sample " + std::to_string(i) + " has mismatched length");
        double err = 0.0, ref = 0.0;
        for (std::size_t k = 0; k < truth[i].size(); ++k) {
            const double d = recon[i][k] - truth[i][k];
            err += d * d;
            ref += truth[i][k] * truth[i][k];
        }
        if (ref == 0.0)
            throw DataError("nmse: sample " + std::to_string(i) + " has zero-norm ground truth");
        acc += err / ref;
    }
    Nmse out;
    out.linear = acc / static_cast<double>(truth.size());
    out.db = to_db(out.linear);
    return out;
}

namespace {

std::string fmt(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
        out.push_back(cell);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

constexpr const char* kResultsHeader = "method,cr_nominal,cr_effective,seed,split,nmse_linear,nmse_db,train_time_s";

} // namespace

void write_results_csv(const std::string& path, const std::vector<MetricsRecord>& records)
{
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write " + path);
    out << kResultsHeader << '\n';
    for (const auto& r : records)
        out << r.method << ',' << r.cr.str() << ',' << fmt(r.cr_effective) << ',' << r.seed << ',' << r.split << ','
            << fmt(r.nmse_linear) << ',' << fmt(r.nmse_db) << ',' << fmt(r.train_time_s) << '\n';
    if (!out)
        throw DataError("cannot write " + path);
}

std::vector<MetricsRecord> read_results_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("results file not found: " + path + " (run eval first)");
    std::string line;
    std::getline(in, line);
    if (line != kResultsHeader)
        throw DataError("unexpected header in " + path);
    std::vector<MetricsRecord> out;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        const auto c = split_csv_line(line);
        if (c.size() != 8)
            throw DataError("malformed row in " + path + ": " + line);
        MetricsRecord r;
        r.method = c[0];
        r.cr = CompressionRatio::parse(c[1]);
        r.cr_effective = std::strtod(c[2].c_str(), nullptr);
        r.seed = std::stoull(c[3]);
        r.split = c[4];
        r.nmse_linear = std::strtod(c[5].c_str(), nullptr);
        r.nmse_db = std::strtod(c[6].c_str(), nullptr);
        r.train_time_s = std::strtod(c[7].c_str(), nullptr);
        out.push_back(r);
    }
    return out;
}

double median(std::vector<double> v)
{
    if (v.empty())
        throw DataError("median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

double median_db(const std::vector<MetricsRecord>& records, const std::string& method, const CompressionRatio& cr,
                 const std::string& split)
{
    std::vector<double> v;
    for (const auto& r : records)
        if (r.method == method && r.cr == cr && r.split == split)
            v.push_back(r.nmse_db);
    if (v.empty())
        throw DataError("no results for " + method + " at CR " + cr.str() + " on split " + split);
    return median(std::move(v));
}

bool is_los_sample(const Scene& scene, const PreprocessedRecord& r)
{
    return has_line_of_sight(scene, r.ue_position);
}

std::vector<std::string> audit_violations(const GradientAudit& audit, const SplitSpec& split)
{
    const auto test = split.test_ids();
    const std::set<std::uint32_t> test_set(test.begin(), test.end());
    std::vector<std::string> out;
    for (const auto& [key, e] : audit.entries) {
        const bool online = e.data_tag == "online";
        if (online)
            for (std::size_t idx : e.record_indices)
                if (idx < static_cast<std::size_t>(split.online_holdout)) {
                    out.push_back(key + ": held-out online record " + std::to_string(idx) +
                                  " reached a gradient step");
                    break;
                }
        for (std::uint32_t id : e.scene_ids) {
            if (online) {
                if (id != split.online_scene() || !e.method.starts_with("online"))
                    out.push_back(key + ": online data from scene " + std::to_string(id) + " used by " + e.method);
            } else if (test_set.contains(id)) {
                out.push_back(key + ": test scene " + std::to_string(id) + " reached a gradient step");
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Hashing helpers

namespace {

void mask_json(json& j)
{
    if (j.is_object()) {
        for (const char* k : {"wall_clock", "train_time_s"})
            if (j.contains(k))
                j[k] = nullptr;
        for (auto& [k, v] : j.items())
            mask_json(v);
    } else if (j.is_array()) {
        for (auto& v : j)
            mask_json(v);
    }
}

std::string read_text(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string masked_csv(const std::string& text)
{
    std::istringstream in(text);
    std::string line, out;
    std::optional<std::size_t> col;
    bool header = true;
    while (std::getline(in, line)) {
        auto cells = split_csv_line(line);
        if (header) {
            const auto it = std::find(cells.begin(), cells.end(), "train_time_s");
            if (it != cells.end())
                col = static_cast<std::size_t>(it - cells.begin());
            header = false;
        } else if (col && *col < cells.size()) {
            cells[*col] = "*";
        }
        for (std::size_t i = 0; i < cells.size(); ++i)
            out += (i ? "," : "") + cells[i];
        out += '\n';
    }
    return out;
}

} // namespace

namespace {

std::string masked_hash(const fs::path& root, const fs::path& p)
{
    if (p.extension() == ".json") {
        json j = json::parse(read_text(p), nullptr, false);
        if (!j.is_discarded()) {
            mask_json(j);
            // manifests and cell logs hash files that carry wall-clock fields themselves
            for (const char* k : {"inputs", "outputs"}) {
                if (!j.contains(k) || !j[k].is_object())
                    continue;
                for (auto& [rel, h] : j[k].items()) {
                    const fs::path f = root / rel;
                    const auto ext = f.extension();
                    if ((ext == ".json" || ext == ".csv") && fs::is_regular_file(f) && f != p)
                        h = masked_hash(root, f);
                }
            }
            return sha256_bytes(j.dump());
        }
    }
    if (p.extension() == ".csv")
        return sha256_bytes(masked_csv(read_text(p)));
    return sha256_file(p.string());
}

} // namespace

std::map<std::string, std::string> masked_output_hashes(const fs::path& root)
{
    std::map<std::string, std::string> out;
    if (!fs::exists(root))
        return out;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file())
            continue;
        out[fs::relative(entry.path(), root).generic_string()] = masked_hash(root, entry.path());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

std::string config_digest(const ExperimentConfig& cfg, std::initializer_list<std::string_view> prefixes)
{
    std::string text;
    for (const auto& key : ExperimentConfig::keys())
        for (auto p : prefixes)
            if (key.starts_with(p)) {
                text += key + "=" + cfg.get(key) + "\n";
                break;
            }
    return sha256_bytes(text);
}

// Location does not change content, so the run directory is left out.
std::string content_hash(const ExperimentConfig& cfg)
{
    ExperimentConfig c = cfg;
    c.output_dir = "-";
    return c.hash();
}

const std::initializer_list<std::string_view> kTrainingKeys{"training.", "model.", "split.", "preprocess.",
                                                             "experiment."};

std::string now_iso()
{
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

json hashes_of(const fs::path& root, const std::vector<fs::path>& files)
{
    json j = json::object();
    for (const auto& f : files)
        j[fs::relative(f, root).generic_string()] = fs::exists(f) ? sha256_file(f.string()) : std::string("missing");
    return j;
}

std::vector<fs::path> files_in(const fs::path& dir)
{
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file())
            out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

json audit_to_json(const GradientAudit& audit)
{
    json arr = json::array();
    for (const auto& [key, e] : audit.entries) {
        json scenes = json::array();
        for (auto id : e.scene_ids)
            scenes.push_back(id);
        arr.push_back({{"method", e.method},
                       {"data_tag", e.data_tag},
                       {"scene_ids", scenes},
                       {"record_indices", e.record_indices},
                       {"gradient_steps", e.gradient_steps}});
    }
    return arr;
}

void audit_from_json(const json& arr, GradientAudit& audit)
{
    for (const auto& e : arr) {
        const std::string key = e.at("method").get<std::string>() + "/" + e.at("data_tag").get<std::string>();
        auto& entry = audit.entries[key];
        entry.method = e.at("method").get<std::string>();
        entry.data_tag = e.at("data_tag").get<std::string>();
        for (const auto& id : e.at("scene_ids"))
            entry.scene_ids.insert(id.get<std::uint32_t>());
        for (const auto& idx : e.at("record_indices"))
            entry.record_indices.insert(idx.get<std::size_t>());
        entry.gradient_steps += e.at("gradient_steps").get<std::uint64_t>();
    }
}

json read_json(const fs::path& p)
{
    try {
        return json::parse(read_text(p));
    } catch (const json::exception& e) {
        throw DataError("malformed JSON in " + p.string() + ": " + e.what());
    }
}

void write_json(const fs::path& p, const json& j)
{
    std::ofstream out(p);
    out << j.dump(2) << '\n';
    if (!out)
        throw DataError("cannot write " + p.string());
}

std::set<std::uint32_t> to_set(const std::vector<std::uint32_t>& v)
{
    return {v.begin(), v.end()};
}

} // namespace

Pipeline::Pipeline(ExperimentConfig cfg) : cfg_(std::move(cfg)), root_(cfg_.output_dir)
{
    cfg_.validate();
}

fs::path Pipeline::scenes_dir() const { return root_ / "scenes"; }
fs::path Pipeline::main_csi() const { return root_ / "csi" / "main.ds"; }
fs::path Pipeline::online_csi() const { return root_ / "csi" / "online.ds"; }
fs::path Pipeline::preprocessed(const std::string& tag, const CompressionRatio& cr) const
{
    return root_ / "pp" / (tag + "_cr" + cr.tag() + ".pp");
}
fs::path Pipeline::checkpoint(const std::string& name) const { return root_ / "ck" / (name + ".ck"); }
fs::path Pipeline::results_csv() const { return root_ / "results" / "results.csv"; }
fs::path Pipeline::audit_json() const { return root_ / "results" / "audit.json"; }

std::string Pipeline::general_name(const CompressionRatio& cr, std::uint64_t seed)
{
    return "general_cr" + cr.tag() + "_s" + std::to_string(seed);
}
std::string Pipeline::hyper_name(const CompressionRatio& cr, std::uint64_t seed)
{
    return "hyper_cr" + cr.tag() + "_s" + std::to_string(seed);
}
std::string Pipeline::online_name(int budget, const CompressionRatio& cr, std::uint64_t seed)
{
    return "online_k" + std::to_string(budget) + "_cr" + cr.tag() + "_s" + std::to_string(seed);
}
std::string Pipeline::switch_name(const CompressionRatio& cr, std::uint64_t seed)
{
    return "switch-los_cr" + cr.tag() + "_s" + std::to_string(seed);
}

void Pipeline::say(const std::string& msg) const
{
    if (log)
        log(msg);
}

void Pipeline::require(const fs::path& p, const std::string& stage) const
{
    if (!fs::exists(p))
        throw DataError("missing artifact " + p.string() + " (run '" + stage + "' first)");
}

void Pipeline::write_manifest(const std::string& stage, const std::vector<fs::path>& inputs,
                              const std::vector<fs::path>& outputs) const
{
    fs::create_directories(root_ / "manifests");
    json seeds = json::array();
    for (auto s : cfg_.seeds)
        seeds.push_back(s);
    const json m = {{"stage", stage},
                    {"profile", cfg_.profile},
                    {"config_hash", content_hash(cfg_)},
                    {"code_version", CSIFB_VERSION},
                    {"split_seed", cfg_.split.seed},
                    {"seeds", seeds},
                    {"inputs", hashes_of(root_, inputs)},
                    {"outputs", hashes_of(root_, outputs)},
                    {"wall_clock", now_iso()}};
    write_json(root_ / "manifests" / (stage + ".json"), m);
    std::ofstream(root_ / "manifests" / "config.ini") << cfg_.serialize();
}

bool Pipeline::cell_up_to_date(const std::string& name, const std::vector<fs::path>& inputs) const
{
    const fs::path log_path = root_ / "ck" / (name + ".log.json");
    const fs::path ck = checkpoint(name);
    if (!fs::exists(log_path) || !fs::exists(ck))
        return false;
    const json j = json::parse(read_text(log_path), nullptr, false);
    if (j.is_discarded())
        return false;
    return j.value("digest", std::string{}) == config_digest(cfg_, kTrainingKeys) &&
           j.value("inputs", json{}) == hashes_of(root_, inputs) &&
           j.value("checkpoint_sha256", std::string{}) == sha256_file(ck.string());
}

void Pipeline::write_cell_log(const std::string& name, const std::vector<fs::path>& inputs, const TrainResult& res,
                              const GradientAudit& audit) const
{
    json hist = json::array();
    for (const auto& e : res.history)
        hist.push_back({{"epoch", e.epoch},
                        {"train_loss", std::isfinite(e.train_loss) ? json(e.train_loss) : json(nullptr)},
                        {"val_loss", e.val_loss},
                        {"lr", e.lr}});
    const json j = {{"cell", name},
                    {"digest", config_digest(cfg_, kTrainingKeys)},
                    {"inputs", hashes_of(root_, inputs)},
                    {"checkpoint_sha256", sha256_file(checkpoint(name).string())},
                    {"best_epoch", res.best_epoch},
                    {"best_val_loss", res.best_val_loss},
                    {"history", hist},
                    {"audit", audit_to_json(audit)},
                    {"train_time_s", res.train_time_s}};
    write_json(root_ / "ck" / (name + ".log.json"), j);
}

double Pipeline::cell_train_time(const std::string& name) const
{
    const fs::path p = root_ / "ck" / (name + ".log.json");
    if (!fs::exists(p))
        return 0.0;
    return read_json(p).value("train_time_s", 0.0);
}

std::vector<CompressionRatio> Pipeline::selected(const std::vector<CompressionRatio>& crs) const
{
    if (only_crs.empty())
        return crs;
    std::vector<CompressionRatio> out;
    for (const auto& c : crs)
        if (std::find(only_crs.begin(), only_crs.end(), c) != only_crs.end())
            out.push_back(c);
    return out;
}

std::vector<std::uint64_t> Pipeline::selected_seeds() const
{
    if (only_seeds.empty())
        return cfg_.seeds;
    std::vector<std::uint64_t> out;
    for (auto s : cfg_.seeds)
        if (std::find(only_seeds.begin(), only_seeds.end(), s) != only_seeds.end())
            out.push_back(s);
    return out;
}

TrainConfig Pipeline::train_config(int epochs, std::uint64_t seed, std::uint64_t salt) const
{
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = cfg_.training.batch_size;
    tc.lr = cfg_.training.lr;
    tc.plateau_patience = cfg_.training.plateau_patience;
    tc.seed = derive_seed(seed, salt);
    if (log)
        tc.on_epoch = [this](int epoch, double train_loss, double val_loss, double lr) {
            if (epoch % 10 == 0) {
                char buf[128];
                std::snprintf(buf, sizeof buf, "  epoch %d: train %.6g, val %.6g, lr %.3g", epoch, train_loss,
                              val_loss, lr);
                say(buf);
            }
        };
    return tc;
}

// --- data stages ------------------------------------------------------------

void Pipeline::gen_scenes()
{
    const TraceConfig trace = cfg_.trace;
    const double need = cfg_.min_reachable;
    const SceneSet set =
        generate_scene_set(cfg_.split.total_envs(), derive_seed(cfg_.split.seed, 0x5C), cfg_.scene, cfg_.grid_size,
                           [&](const Scene& s) { return need <= 0 || reachable_fraction(s, trace) >= need; });
    write_scene_set(scenes_dir().string(), set);
    say("gen-scenes: " + std::to_string(set.scenes.size()) + " scenes -> " + scenes_dir().string());
    write_manifest("gen-scenes", {}, files_in(scenes_dir()));
}

void Pipeline::gen_csi()
{
    require(scenes_dir() / "manifest.json", "gen-scenes");
    const SceneSet set = read_scene_set(scenes_dir().string());
    if (static_cast<int>(set.scenes.size()) != cfg_.split.total_envs())
        throw DataError("scene set holds " + std::to_string(set.scenes.size()) + " scenes, config expects " +
                        std::to_string(cfg_.split.total_envs()) + " (rerun 'gen-scenes')");
    fs::create_directories(main_csi().parent_path());

    const DatasetConfig dc = cfg_.dataset_config();
    const ChannelDataset main = generate_dataset(set.scenes, dc);
    write_dataset(main_csi().string(), main);

    DatasetConfig oc = dc;
    oc.samples_per_scene = cfg_.split.online_holdout + cfg_.split.online_pool;
    oc.sample_index_offset = static_cast<std::uint64_t>(cfg_.split.samples_per_env);
    const std::vector<Scene> online_scene{set.scenes.at(cfg_.split.online_scene())};
    write_dataset(online_csi().string(), generate_dataset(online_scene, oc));

    say("gen-csi: " + std::to_string(main.records.size()) + " main samples, " +
        std::to_string(oc.samples_per_scene) + " online samples");
    write_manifest("gen-csi", files_in(scenes_dir()), {main_csi(), online_csi()});
}

void Pipeline::preprocess()
{
    require(main_csi(), "gen-csi");
    require(online_csi(), "gen-csi");
    const ChannelDataset main = read_dataset(main_csi().string());
    const ChannelDataset online = read_dataset(online_csi().string());
    fs::create_directories(root_ / "pp");
    std::vector<fs::path> outputs;
    const auto train = cfg_.split.train_ids();
    for (const auto& cr : cfg_.crs) {
        PreprocessOptions opt;
        opt.nc = cfg_.nc;
        opt.cr = cr;
        opt.projection_seed = cfg_.projection_seed;
        opt.fit_scene_ids = to_set(train);
        const PreprocessedDataset pm = csifb::preprocess(main, opt);
        write_preprocessed(preprocessed("main", cr).string(), pm);
        opt.fixed_norm = pm.norm;
        write_preprocessed(preprocessed("online", cr).string(), csifb::preprocess(online, opt));
        outputs.push_back(preprocessed("main", cr));
        outputs.push_back(preprocessed("online", cr));
        say("preprocess: CR " + cr.str() + " (M = " + std::to_string(pm.m) + ")");
    }
    write_manifest("preprocess", {main_csi(), online_csi()}, outputs);
}

// --- training stages --------------------------------------------------------

void Pipeline::train_step1()
{
    const auto test = to_set(cfg_.split.test_ids());
    std::vector<fs::path> inputs, outputs;
    for (const auto& cr : selected(cfg_.crs)) {
        const fs::path pp = preprocessed("main", cr);
        require(pp, "preprocess");
        inputs.push_back(pp);
        std::optional<PreprocessedDataset> ds;
        for (auto seed : selected_seeds()) {
            const std::string name = general_name(cr, seed);
            outputs.push_back(checkpoint(name));
            if (cell_up_to_date(name, {pp})) {
                say("train-step1: " + name + " up to date");
                continue;
            }
            if (!ds)
                ds = read_preprocessed(pp.string());
            const DataView tr = view_of_scenes(*ds, to_set(cfg_.split.train_ids()));
            const DataView va = view_of_scenes(*ds, to_set(cfg_.split.val_ids()));
            GradientAudit audit;
            const TrainContext ctx{SplitGuard(test), &audit, "general"};
            const std::uint64_t init = derive_seed(seed, 0x51);
            ReconNet net = ReconNet::create(cfg_.dims(cr), cfg_.alpha, init);
            const TrainResult res = csifb::train_step1(net, tr, va, train_config(cfg_.training.epochs_step1, seed, 0x61), ctx);
            fs::create_directories(root_ / "ck");
            save_reconnet(checkpoint(name).string(), net,
                          {net.dims, cfg_.alpha, cr, init, cfg_.projection_seed, "reconnet", "general"});
            write_cell_log(name, {pp}, res, audit);
            say("train-step1: " + name + " best val " + fmt(res.best_val_loss) + " at epoch " +
                std::to_string(res.best_epoch) + " (" + fmt(res.train_time_s) + " s)");
        }
    }
    write_manifest("train-step1", inputs, outputs);
}

void Pipeline::train_step2()
{
    require(scenes_dir() / "manifest.json", "gen-scenes");
    const auto test = to_set(cfg_.split.test_ids());
    std::optional<SceneInputs> scenes;
    std::vector<fs::path> inputs{scenes_dir() / "manifest.json"}, outputs;
    for (const auto& cr : selected(cfg_.crs)) {
        const fs::path pp = preprocessed("main", cr);
        require(pp, "preprocess");
        inputs.push_back(pp);
        std::optional<PreprocessedDataset> ds;
        for (auto seed : selected_seeds()) {
            const fs::path base = checkpoint(general_name(cr, seed));
            require(base, "train-step1");
            inputs.push_back(base);
            const std::string name = hyper_name(cr, seed);
            outputs.push_back(checkpoint(name));
            const std::vector<fs::path> cell_inputs{pp, base, scenes_dir() / "manifest.json"};
            if (cell_up_to_date(name, cell_inputs)) {
                say("train-step2: " + name + " up to date");
                continue;
            }
            if (!ds)
                ds = read_preprocessed(pp.string());
            if (!scenes)
                scenes = SceneInputs::from(read_scene_set(scenes_dir().string()));
            ModelMeta meta;
            const ReconNet net = load_reconnet(base.string(), &meta);
            check_compatible(meta, *ds, scenes->g);
            const DataView tr = view_of_scenes(*ds, to_set(cfg_.split.train_ids()));
            const DataView va = view_of_scenes(*ds, to_set(cfg_.split.val_ids()));
            GradientAudit audit;
            const TrainContext ctx{SplitGuard(test), &audit, "adapcsinet"};
            const std::uint64_t init = derive_seed(seed, 0x52);
            HyperNet hn = HyperNet::create(net.dims, init);
            const TrainResult res =
                csifb::train_step2(net, hn, tr, va, *scenes, train_config(cfg_.training.epochs_step2, seed, 0x62), ctx);
            save_hypernet(checkpoint(name).string(), hn,
                          {hn.dims, net.alpha, cr, init, cfg_.projection_seed, "hypernet", "adapcsinet"});
            write_cell_log(name, cell_inputs, res, audit);
            say("train-step2: " + name + " val " + fmt(res.history.front().val_loss) + " -> " +
                fmt(res.best_val_loss) + " at epoch " + std::to_string(res.best_epoch) + " (" +
                fmt(res.train_time_s) + " s)");
        }
    }
    write_manifest("train-step2", inputs, outputs);
}

void Pipeline::train_online()
{
    const CompressionRatio cr = cfg_.online_cr;
    const fs::path pp = preprocessed("online", cr);
    require(pp, "preprocess");
    const auto test = to_set(cfg_.split.test_ids());
    std::optional<PreprocessedDataset> ds;
    std::vector<fs::path> inputs{pp}, outputs;
    for (auto seed : selected_seeds()) {
        const fs::path base = checkpoint(general_name(cr, seed));
        require(base, "train-step1");
        inputs.push_back(base);
        for (int k : cfg_.split.budgets) {
            const std::string name = online_name(k, cr, seed);
            outputs.push_back(checkpoint(name));
            if (cell_up_to_date(name, {pp, base})) {
                say("train-online: " + name + " up to date");
                continue;
            }
            if (!ds)
                ds = read_preprocessed(pp.string());
            const std::size_t holdout = static_cast<std::size_t>(cfg_.split.online_holdout);
            if (ds->records.size() < holdout + static_cast<std::size_t>(k))
                throw DataError("online budget " + std::to_string(k) + " exceeds the " +
                                std::to_string(ds->records.size() - std::min(ds->records.size(), holdout)) +
                                " available fine-tuning samples");
            DataView va{&*ds, {}, "online"};
            DataView tr{&*ds, {}, "online"};
            for (std::size_t i = 0; i < holdout; ++i)
                va.indices.push_back(i);
            for (std::size_t i = holdout; i < holdout + static_cast<std::size_t>(k); ++i)
                tr.indices.push_back(i);

            ModelMeta meta;
            ReconNet net = load_reconnet(base.string(), &meta);
            check_compatible(meta, *ds);
            GradientAudit audit;
            const TrainContext ctx{SplitGuard(test, "online", cfg_.split.online_scene()), &audit,
                                   "online(" + std::to_string(k) + ")"};
            TrainConfig tc = train_config(cfg_.training.online_epochs, seed, 0x63 + static_cast<std::uint64_t>(k));
            tc.lr = cfg_.training.online_lr;
            tc.batch_size = cfg_.training.online_batch_size;
            tc.early_stop_patience = cfg_.training.online_patience;
            const TrainResult res = csifb::train_step1(net, tr, va, tc, ctx);
            meta.method = "online";
            save_reconnet(checkpoint(name).string(), net, meta);
            write_cell_log(name, {pp, base}, res, audit);
            say("train-online: " + name + " holdout loss " + fmt(res.history.front().val_loss) + " -> " +
                fmt(res.best_val_loss) + " at epoch " + std::to_string(res.best_epoch));
        }
    }
    write_manifest("train-online", inputs, outputs);
}

void Pipeline::train_switch()
{
    require(scenes_dir() / "manifest.json", "gen-scenes");
    const auto test = to_set(cfg_.split.test_ids());
    std::optional<SceneSet> set;
    std::vector<fs::path> inputs{scenes_dir() / "manifest.json"}, outputs;
    for (const auto& cr : selected(cfg_.switch_crs)) {
        const fs::path pp = preprocessed("main", cr);
        require(pp, "preprocess");
        inputs.push_back(pp);
        std::optional<PreprocessedDataset> ds;
        for (auto seed : selected_seeds()) {
            const std::string name = switch_name(cr, seed);
            outputs.push_back(checkpoint(name));
            const std::vector<fs::path> cell_inputs{pp, scenes_dir() / "manifest.json"};
            if (cell_up_to_date(name, cell_inputs)) {
                say("train-switch: " + name + " up to date");
                continue;
            }
            if (!ds)
                ds = read_preprocessed(pp.string());
            if (!set)
                set = read_scene_set(scenes_dir().string());
            auto los_view = [&](const std::vector<std::uint32_t>& ids) {
                DataView v = view_of_scenes(*ds, to_set(ids));
                std::erase_if(v.indices, [&](std::size_t i) {
                    const auto& r = ds->records[i];
                    return !is_los_sample(set->scenes.at(r.scene_id), r);
                });
                return v;
            };
            const DataView tr = los_view(cfg_.split.train_ids());
            const DataView va = los_view(cfg_.split.val_ids());
            if (static_cast<int>(tr.size()) < cfg_.split.los_min_samples || va.size() == 0)
                throw DataError("too few LOS samples for the switch model: " + std::to_string(tr.size()) +
                                " training / " + std::to_string(va.size()) + " validation (minimum " +
                                std::to_string(cfg_.split.los_min_samples) + ")");
            GradientAudit audit;
            const TrainContext ctx{SplitGuard(test), &audit, "switch-los"};
            const std::uint64_t init = derive_seed(seed, 0x53);
            ReconNet net = ReconNet::create(cfg_.dims(cr), cfg_.alpha, init);
            const TrainResult res =
                csifb::train_step1(net, tr, va, train_config(cfg_.training.epochs_step1, seed, 0x64), ctx);
            fs::create_directories(root_ / "ck");
            save_reconnet(checkpoint(name).string(), net,
                          {net.dims, cfg_.alpha, cr, init, cfg_.projection_seed, "reconnet", "switch-los"});
            write_cell_log(name, cell_inputs, res, audit);
            say("train-switch: " + name + " on " + std::to_string(tr.size()) + " LOS samples, best val " +
                fmt(res.best_val_loss));
        }
    }
    write_manifest("train-switch", inputs, outputs);
}

// --- evaluation -------------------------------------------------------------

namespace {

Nmse view_nmse(const std::vector<std::vector<double>>& pred, const DataView& view)
{
    std::vector<std::vector<double>> recon, truth;
    recon.reserve(view.size());
    truth.reserve(view.size());
    for (std::size_t i = 0; i < view.size(); ++i) {
        const std::size_t idx = view.indices[i];
        recon.push_back(view.data->denormalized(pred[i], idx));
        truth.push_back(view.data->denormalized(view.data->records[idx].h, idx));
    }
    return nmse(recon, truth);
}

MetricsRecord make_record(std::string method, const CompressionRatio& cr, const PreprocessedDataset& ds,
                          std::uint64_t seed, std::string split, const Nmse& e, double t)
{
    return {std::move(method), cr, ds.m / static_cast<double>(ds.n()), seed, std::move(split), e.linear, e.db, t};
}

} // namespace

std::vector<MetricsRecord> Pipeline::eval_cr_sweep()
{
    require(scenes_dir() / "manifest.json", "gen-scenes");
    const SceneInputs scenes = SceneInputs::from(read_scene_set(scenes_dir().string()));
    std::vector<MetricsRecord> out;
    for (const auto& cr : selected(cfg_.crs)) {
        require(preprocessed("main", cr), "preprocess");
        const PreprocessedDataset ds = read_preprocessed(preprocessed("main", cr).string());
        const DataView te = view_of_scenes(ds, to_set(cfg_.split.test_ids()));
        for (auto seed : selected_seeds()) {
            const auto gname = general_name(cr, seed), hname = hyper_name(cr, seed);
            require(checkpoint(gname), "train-step1");
            require(checkpoint(hname), "train-step2");
            ModelMeta gm, hm;
            const ReconNet net = load_reconnet(checkpoint(gname).string(), &gm);
            const HyperNet hn = load_hypernet(checkpoint(hname).string(), &hm);
            check_compatible(gm, ds);
            check_compatible(hm, ds, scenes.g);
            const double tg = cell_train_time(gname);
            out.push_back(make_record("general", cr, ds, seed, "test", view_nmse(predict(net, te), te), tg));
            out.push_back(make_record("adapcsinet", cr, ds, seed, "test",
                                      view_nmse(predict(net, hn, te, scenes), te), tg + cell_train_time(hname)));
        }
    }
    return out;
}

std::vector<MetricsRecord> Pipeline::eval_online()
{
    const CompressionRatio cr = cfg_.online_cr;
    if (selected({cr}).empty())
        return {};
    require(preprocessed("main", cr), "preprocess");
    const SceneInputs scenes = SceneInputs::from(read_scene_set(scenes_dir().string()));
    const PreprocessedDataset ds = read_preprocessed(preprocessed("main", cr).string());
    const DataView te = view_of_scenes(ds, {cfg_.split.online_scene()});
    std::vector<MetricsRecord> out;
    for (auto seed : selected_seeds()) {
        const auto gname = general_name(cr, seed), hname = hyper_name(cr, seed);
        require(checkpoint(gname), "train-step1");
        require(checkpoint(hname), "train-step2");
        const ReconNet net = load_reconnet(checkpoint(gname).string());
        const HyperNet hn = load_hypernet(checkpoint(hname).string());
        const double tg = cell_train_time(gname);
        const Nmse general = view_nmse(predict(net, te), te);
        out.push_back(make_record("general", cr, ds, seed, "test-online", general, tg));
        out.push_back(make_record("adapcsinet", cr, ds, seed, "test-online",
                                  view_nmse(predict(net, hn, te, scenes), te), tg + cell_train_time(hname)));
        out.push_back(make_record("online(0)", cr, ds, seed, "test-online", general, 0.0));
        for (int k : cfg_.split.budgets) {
            const auto name = online_name(k, cr, seed);
            require(checkpoint(name), "train-online");
            ModelMeta meta;
            const ReconNet tuned = load_reconnet(checkpoint(name).string(), &meta);
            check_compatible(meta, ds);
            out.push_back(make_record("online(" + std::to_string(k) + ")", cr, ds, seed, "test-online",
                                      view_nmse(predict(tuned, te), te), cell_train_time(name)));
        }
    }
    return out;
}

std::vector<MetricsRecord> Pipeline::eval_switch()
{
    const SceneSet set = read_scene_set(scenes_dir().string());
    const SceneInputs scenes = SceneInputs::from(set);
    std::vector<MetricsRecord> out;
    for (const auto& cr : selected(cfg_.switch_crs)) {
        require(preprocessed("main", cr), "preprocess");
        const PreprocessedDataset ds = read_preprocessed(preprocessed("main", cr).string());
        DataView te = view_of_scenes(ds, to_set(cfg_.split.test_ids()));
        std::erase_if(te.indices, [&](std::size_t i) {
            return !is_los_sample(set.scenes.at(ds.records[i].scene_id), ds.records[i]);
        });
        if (te.size() == 0)
            throw DataError("no LOS samples in the test environments");
        for (auto seed : selected_seeds()) {
            const auto sname = switch_name(cr, seed), gname = general_name(cr, seed), hname = hyper_name(cr, seed);
            require(checkpoint(sname), "train-switch");
            require(checkpoint(hname), "train-step2");
            ModelMeta sm;
            const ReconNet sw = load_reconnet(checkpoint(sname).string(), &sm);
            check_compatible(sm, ds);
            const ReconNet net = load_reconnet(checkpoint(gname).string());
            const HyperNet hn = load_hypernet(checkpoint(hname).string());
            out.push_back(make_record("switch-los", cr, ds, seed, "test-los", view_nmse(predict(sw, te), te),
                                      cell_train_time(sname)));
            out.push_back(make_record("adapcsinet", cr, ds, seed, "test-los",
                                      view_nmse(predict(net, hn, te, scenes), te),
                                      cell_train_time(gname) + cell_train_time(hname)));
        }
    }
    return out;
}

std::vector<MetricsRecord> Pipeline::eval()
{
    std::vector<MetricsRecord> out = eval_cr_sweep();
    for (auto&& r : eval_online())
        out.push_back(std::move(r));
    for (auto&& r : eval_switch())
        out.push_back(std::move(r));
    fs::create_directories(results_csv().parent_path());
    write_results_csv(results_csv().string(), out);

    std::vector<fs::path> inputs;
    for (const auto& f : files_in(root_ / "ck"))
        if (f.extension() == ".ck")
            inputs.push_back(f);
    write_manifest("eval", inputs, {results_csv()});
    say("eval: " + std::to_string(out.size()) + " records -> " + results_csv().string());
    return out;
}

void Pipeline::report()
{
    require(results_csv(), "eval");
    const auto records = read_results_csv(results_csv().string());
    const fs::path dir = results_csv().parent_path();
    // cells excluded by --only-cr / --only-seed leave no rows
    auto have = [&](const std::string& method, const CompressionRatio& cr, const std::string& split) {
        return std::any_of(records.begin(), records.end(), [&](const MetricsRecord& r) {
            return r.method == method && r.cr == cr && r.split == split;
        });
    };

    {
        std::ofstream f(dir / "fig5.csv");
        f << "cr_nominal,cr_effective,general_db,adapcsinet_db,gain_db\n";
        for (const auto& cr : cfg_.crs) {
            if (!have("general", cr, "test") || !have("adapcsinet", cr, "test"))
                continue;
            const double g = median_db(records, "general", cr, "test");
            const double a = median_db(records, "adapcsinet", cr, "test");
            const double eff = static_cast<double>(cr.codeword_length(cfg_.n())) / cfg_.n();
            f << cr.str() << ',' << fmt(eff) << ',' << fmt(g) << ',' << fmt(a) << ',' << fmt(g - a) << '\n';
            say("fig5: CR " + cr.str() + " general " + fmt(g) + " dB, adapcsinet " + fmt(a) + " dB");
        }
    }
    {
        const auto& cr = cfg_.online_cr;
        std::ofstream f(dir / "fig6.csv");
        f << "budget,online_db,general_db,adapcsinet_db\n";
        std::vector<int> budgets{0};
        budgets.insert(budgets.end(), cfg_.split.budgets.begin(), cfg_.split.budgets.end());
        const bool refs = have("general", cr, "test-online") && have("adapcsinet", cr, "test-online");
        const double g = refs ? median_db(records, "general", cr, "test-online") : 0.0;
        const double a = refs ? median_db(records, "adapcsinet", cr, "test-online") : 0.0;
        for (int k : budgets) {
            if (!refs || !have("online(" + std::to_string(k) + ")", cr, "test-online"))
                continue;
            const double o = median_db(records, "online(" + std::to_string(k) + ")", cr, "test-online");
            f << k << ',' << fmt(o) << ',' << fmt(g) << ',' << fmt(a) << '\n';
            say("fig6: k " + std::to_string(k) + " online " + fmt(o) + " dB (adapcsinet " + fmt(a) + " dB)");
        }
    }
    {
        std::ofstream f(dir / "fig7.csv");
        f << "cr_nominal,switch_los_db,adapcsinet_db\n";
        for (const auto& cr : cfg_.switch_crs) {
            if (!have("switch-los", cr, "test-los") || !have("adapcsinet", cr, "test-los"))
                continue;
            const double s = median_db(records, "switch-los", cr, "test-los");
            const double a = median_db(records, "adapcsinet", cr, "test-los");
            f << cr.str() << ',' << fmt(s) << ',' << fmt(a) << '\n';
            say("fig7: CR " + cr.str() + " switch-los " + fmt(s) + " dB, adapcsinet " + fmt(a) + " dB");
        }
    }

    GradientAudit audit;
    json cells = json::array();
    for (const auto& f : files_in(root_ / "ck")) {
        const std::string fname = f.filename().string();
        if (!fname.ends_with(".log.json"))
            continue;
        const json j = read_json(f);
        audit_from_json(j.at("audit"), audit);
        cells.push_back(j.at("cell"));
    }
    const auto violations = audit_violations(audit, cfg_.split);
    json entries = audit_to_json(audit);
    for (auto& e : entries) {
        e["records"] = e.at("record_indices").size();
        e.erase("record_indices");
    }
    json test_ids = json::array();
    for (auto id : cfg_.split.test_ids())
        test_ids.push_back(id);
    write_json(audit_json(), {{"test_scene_ids", test_ids},
                              {"online_scene", cfg_.split.online_scene()},
                              {"cells", cells},
                              {"entries", entries},
                              {"violations", violations},
                              {"passed", violations.empty()}});
    say(std::string("audit: ") + (violations.empty() ? "no split violations" : "SPLIT VIOLATIONS FOUND"));
    write_manifest("report", {results_csv()},
                   {dir / "fig5.csv", dir / "fig6.csv", dir / "fig7.csv", audit_json()});
    if (!violations.empty())
        throw DataError("split audit failed: " + violations.front());
}

std::vector<MetricsRecord> Pipeline::run_cr_sweep()
{
    gen_scenes();
    gen_csi();
    preprocess();
    train_step1();
    train_step2();
    return eval_cr_sweep();
}

std::vector<MetricsRecord> Pipeline::run_online_sweep()
{
    train_online();
    return eval_online();
}

std::vector<MetricsRecord> Pipeline::run_switch_comparison()
{
    train_switch();
    return eval_switch();
}

std::vector<MetricsRecord> Pipeline::run_all()
{
    gen_scenes();
    gen_csi();
    preprocess();
    train_step1();
    train_step2();
    train_online();
    train_switch();
    auto records = eval();
    report();
    return records;
}

} // namespace csifb
