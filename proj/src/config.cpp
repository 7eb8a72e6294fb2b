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

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

extern char** environ;

namespace csifb {

// ---------------------------------------------------------------------------
// SplitSpec

namespace {
std::vector<std::uint32_t> id_range(int begin, int count)
{
    std::vector<std::uint32_t> out;
    for (int i = 0; i < count; ++i)
        out.push_back(static_cast<std::uint32_t>(begin + i));
    return out;
}
} // namespace

std::vector<std::uint32_t> SplitSpec::train_ids() const { return id_range(0, train_envs); }
std::vector<std::uint32_t> SplitSpec::val_ids() const { return id_range(train_envs, val_envs); }
std::vector<std::uint32_t> SplitSpec::test_ids() const { return id_range(train_envs + val_envs, test_envs); }
std::uint32_t SplitSpec::online_scene() const { return static_cast<std::uint32_t>(train_envs + val_envs + online_env); }

// ---------------------------------------------------------------------------
// Profiles

ExperimentConfig ExperimentConfig::desk()
{
    return ExperimentConfig{};
}

ExperimentConfig ExperimentConfig::paper()
{
    ExperimentConfig c;
    c.profile = "paper";
    c.ofdm.subcarriers = 256;
    c.nc = 32;
    c.trace.max_reflections = 2;
    c.trace.diffraction = true;
    c.grid_size = 100;
    c.crs = {{1, 8}, {1, 16}, {1, 24}, {1, 32}};
    c.training.epochs_step1 = 1000;
    c.training.epochs_step2 = 1000;
    c.split.train_envs = 160;
    c.split.val_envs = 20;
    c.split.test_envs = 20;
    c.split.samples_per_env = 1000;
    c.split.online_holdout = 500;
    c.split.online_pool = 5000;
    c.split.budgets = {500, 1000, 2000, 3000, 4000, 5000};
    c.online_cr = {1, 24};
    c.switch_crs = {{1, 8}, {1, 16}, {1, 24}, {1, 32}};
    return c;
}

ExperimentConfig ExperimentConfig::for_profile(const std::string& name)
{
    if (name.empty() || name == "desk")
        return desk();
    if (name == "paper")
        return paper();
    throw ValidationError("profile: unknown profile '" + name + "' (expected desk or paper)");
}

ModelDims ExperimentConfig::dims(const CompressionRatio& cr) const
{
    return {nc, array.antennas, cr.codeword_length(n()), grid_size};
}

DatasetConfig ExperimentConfig::dataset_config() const
{
    DatasetConfig d;
    d.trace = trace;
    d.array = array;
    d.ofdm = ofdm;
    d.samples_per_scene = split.samples_per_env;
    d.seed = derive_seed(split.seed, 0xC5);
    d.threads = threads;
    return d;
}

// ---------------------------------------------------------------------------
// Key schema

namespace {

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void type_error(const std::string& path, const char* expected, const std::string& value)
{
    throw ValidationError(path + ": expected " + expected + ", got '" + value + "'");
}

std::vector<std::string> split_list(const std::string& v)
{
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        if (auto t = trim(item); !t.empty())
            out.push_back(t);
    return out;
}

template <class T>
struct Codec;

template <>
struct Codec<int> {
    static int parse(const std::string& v, const std::string& path)
    {
        int out = 0;
        const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || p != v.data() + v.size())
            type_error(path, "an integer", v);
        return out;
    }
    static std::string format(int v) { return std::to_string(v); }
};

template <>
struct Codec<std::uint64_t> {
    static std::uint64_t parse(const std::string& v, const std::string& path)
    {
        std::uint64_t out = 0;
        const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || p != v.data() + v.size())
            type_error(path, "a non-negative integer", v);
        return out;
    }
    static std::string format(std::uint64_t v) { return std::to_string(v); }
};

template <>
struct Codec<double> {
    static double parse(const std::string& v, const std::string& path)
    {
        char* end = nullptr;
        const double out = std::strtod(v.c_str(), &end);
        if (v.empty() || end != v.c_str() + v.size())
            type_error(path, "a number", v);
        return out;
    }
    static std::string format(double v)
    {
        char buf[64];
        const auto res = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, res.ptr);
    }
};

template <>
struct Codec<bool> {
    static bool parse(const std::string& v, const std::string& path)
    {
        std::string l(v);
        std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
        if (l == "true" || l == "1" || l == "yes" || l == "on")
            return true;
        if (l == "false" || l == "0" || l == "no" || l == "off")
            return false;
        type_error(path, "a boolean", v);
    }
    static std::string format(bool v) { return v ? "true" : "false"; }
};

template <>
struct Codec<std::string> {
    static std::string parse(const std::string& v, const std::string&) { return v; }
    static std::string format(const std::string& v) { return v; }
};

template <>
struct Codec<CompressionRatio> {
    static CompressionRatio parse(const std::string& v, const std::string& path)
    {
        try {
            return CompressionRatio::parse(v);
        } catch (const ValidationError&) {
            type_error(path, "a compression ratio such as 1/16", v);
        }
    }
    static std::string format(const CompressionRatio& v) { return v.str(); }
};

template <class T>
struct Codec<std::vector<T>> {
    static std::vector<T> parse(const std::string& v, const std::string& path)
    {
        std::vector<T> out;
        for (const auto& item : split_list(v))
            out.push_back(Codec<T>::parse(item, path));
        return out;
    }
    static std::string format(const std::vector<T>& v)
    {
        std::string out;
        for (std::size_t i = 0; i < v.size(); ++i)
            out += (i ? "," : "") + Codec<T>::format(v[i]);
        return out;
    }
};

struct Entry {
    std::string path;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

template <class F>
Entry field(std::string path, F ref)
{
    using T = std::remove_cvref_t<decltype(ref(std::declval<ExperimentConfig&>()))>;
    Entry e;
    e.path = path;
    e.set = [ref, path](ExperimentConfig& c, const std::string& v) { ref(c) = Codec<T>::parse(v, path); };
    e.get = [ref](const ExperimentConfig& c) { return Codec<T>::format(ref(const_cast<ExperimentConfig&>(c))); };
    return e;
}

#define CSIFB_FIELD(path, member) field(path, [](ExperimentConfig& c) -> auto& { return c.member; })

const std::vector<Entry>& schema()
{
    static const std::vector<Entry> entries = [] {
        std::vector<Entry> v{
            CSIFB_FIELD("scene.width", scene.width),
            CSIFB_FIELD("scene.depth", scene.depth),
            CSIFB_FIELD("scene.height", scene.height),
            CSIFB_FIELD("scene.bs_x", scene.bs_position.x),
            CSIFB_FIELD("scene.bs_y", scene.bs_position.y),
            CSIFB_FIELD("scene.bs_z", scene.bs_position.z),
            CSIFB_FIELD("scene.ue_height", scene.ue_height),
            CSIFB_FIELD("scene.min_walls", scene.min_walls),
            CSIFB_FIELD("scene.max_walls", scene.max_walls),
            CSIFB_FIELD("scene.min_wall_length", scene.min_wall_length),
            CSIFB_FIELD("scene.max_wall_length", scene.max_wall_length),
            CSIFB_FIELD("scene.lattice", scene.lattice),
            CSIFB_FIELD("scene.min_ue_area", scene.min_ue_area),
            CSIFB_FIELD("scene.bs_clearance", scene.bs_clearance),
            CSIFB_FIELD("scene.max_attempts", scene.max_attempts),
            CSIFB_FIELD("scene.material", scene.material),
            CSIFB_FIELD("scene.rel_permittivity", scene.rel_permittivity),
            CSIFB_FIELD("scene.conductivity", scene.conductivity),
            CSIFB_FIELD("scene.min_reachable", min_reachable),
            CSIFB_FIELD("channel.antennas", array.antennas),
            CSIFB_FIELD("channel.spacing", array.spacing_wavelengths),
            CSIFB_FIELD("channel.subcarriers", ofdm.subcarriers),
            CSIFB_FIELD("channel.bandwidth", ofdm.bandwidth),
            CSIFB_FIELD("channel.max_reflections", trace.max_reflections),
            CSIFB_FIELD("channel.diffraction", trace.diffraction),
            CSIFB_FIELD("channel.min_gain_db", trace.min_gain_db),
            CSIFB_FIELD("channel.threads", threads),
            CSIFB_FIELD("preprocess.nc", nc),
            CSIFB_FIELD("preprocess.crs", crs),
            CSIFB_FIELD("preprocess.projection_seed", projection_seed),
            CSIFB_FIELD("model.alpha", alpha),
            CSIFB_FIELD("model.grid_size", grid_size),
            CSIFB_FIELD("training.batch_size", training.batch_size),
            CSIFB_FIELD("training.epochs_step1", training.epochs_step1),
            CSIFB_FIELD("training.epochs_step2", training.epochs_step2),
            CSIFB_FIELD("training.lr", training.lr),
            CSIFB_FIELD("training.plateau_patience", training.plateau_patience),
            CSIFB_FIELD("training.online_lr", training.online_lr),
            CSIFB_FIELD("training.online_epochs", training.online_epochs),
            CSIFB_FIELD("training.online_batch_size", training.online_batch_size),
            CSIFB_FIELD("training.online_patience", training.online_patience),
            CSIFB_FIELD("split.train_envs", split.train_envs),
            CSIFB_FIELD("split.val_envs", split.val_envs),
            CSIFB_FIELD("split.test_envs", split.test_envs),
            CSIFB_FIELD("split.samples_per_env", split.samples_per_env),
            CSIFB_FIELD("split.seed", split.seed),
            CSIFB_FIELD("split.online_env", split.online_env),
            CSIFB_FIELD("split.online_holdout", split.online_holdout),
            CSIFB_FIELD("split.online_pool", split.online_pool),
            CSIFB_FIELD("split.budgets", split.budgets),
            CSIFB_FIELD("split.los_min_samples", split.los_min_samples),
            CSIFB_FIELD("experiment.seeds", seeds),
            CSIFB_FIELD("experiment.online_cr", online_cr),
            CSIFB_FIELD("experiment.switch_crs", switch_crs),
            CSIFB_FIELD("output.dir", output_dir),
        };
        // One carrier frequency drives both the tracer and the OFDM grid.
        Entry fc;
        fc.path = "channel.center_freq";
        fc.set = [](ExperimentConfig& c, const std::string& v) {
            c.ofdm.center_freq = Codec<double>::parse(v, "channel.center_freq");
            c.trace.center_freq = c.ofdm.center_freq;
        };
        fc.get = [](const ExperimentConfig& c) { return Codec<double>::format(c.ofdm.center_freq); };
        v.insert(v.begin() + 22, fc);
        return v;
    }();
    return entries;
}

#undef CSIFB_FIELD

const Entry& lookup(const std::string& path)
{
    for (const auto& e : schema())
        if (e.path == path)
            return e;
    throw ValidationError(path + ": unknown configuration key");
}

} // namespace

void ExperimentConfig::set(const std::string& path, const std::string& value)
{
    if (path == "profile")
        throw ValidationError("profile: select a profile with --profile or CSIFB_PROFILE before other keys");
    lookup(path).set(*this, trim(value));
}

std::string ExperimentConfig::get(const std::string& path) const
{
    return lookup(path).get(*this);
}

const std::vector<std::string>& ExperimentConfig::keys()
{
    static const std::vector<std::string> k = [] {
        std::vector<std::string> out;
        for (const auto& e : schema())
            out.push_back(e.path);
        return out;
    }();
    return k;
}

std::string ExperimentConfig::serialize() const
{
    std::ostringstream os;
    os << "# profile: " << profile << '\n';
    std::string section;
    for (const auto& e : schema()) {
        const auto dot = e.path.find('.');
        const std::string sec = e.path.substr(0, dot);
        if (sec != section) {
            os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
            section = sec;
        }
        os << e.path.substr(dot + 1) << " = " << e.get(*this) << '\n';
    }
    return os.str();
}

std::string ExperimentConfig::hash() const
{
    return sha256_bytes(serialize());
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b)
{
    return a.profile == b.profile && a.serialize() == b.serialize();
}

// ---------------------------------------------------------------------------
// Validation

void ExperimentConfig::validate() const
{
    auto fail = [](const std::string& msg) { throw ValidationError(msg); };
    auto positive = [&](const char* key, double v) {
        if (!(v > 0))
            fail(std::string(key) + ": must be positive");
    };

    positive("scene.width", scene.width);
    positive("scene.depth", scene.depth);
    positive("scene.height", scene.height);
    positive("scene.lattice", scene.lattice);
    if (scene.bs_position.x < 0 || scene.bs_position.x > scene.width || scene.bs_position.y < 0 ||
        scene.bs_position.y > scene.depth)
        fail("scene.bs_x/scene.bs_y: base station lies outside scene.width x scene.depth");
    if (scene.bs_position.z <= 0 || scene.bs_position.z > scene.height)
        fail("scene.bs_z: must lie in (0, scene.height]");
    if (scene.ue_height <= 0 || scene.ue_height > scene.height)
        fail("scene.ue_height: must lie in (0, scene.height]");
    if (scene.min_walls < 0 || scene.max_walls < scene.min_walls || scene.max_walls > 3)
        fail("scene.min_walls/scene.max_walls: need 0 <= min_walls <= max_walls <= 3");
    if (scene.min_wall_length <= 0 || scene.max_wall_length < scene.min_wall_length)
        fail("scene.min_wall_length/scene.max_wall_length: need 0 < min <= max");
    if (scene.rel_permittivity < 1.0)
        fail("scene.rel_permittivity: must be >= 1");
    if (scene.conductivity < 0)
        fail("scene.conductivity: must be >= 0");
    if (!(min_reachable >= 0 && min_reachable <= 1))
        fail("scene.min_reachable: must lie in [0, 1]");
    if (scene.max_attempts < 1)
        fail("scene.max_attempts: must be >= 1");

    if (array.antennas < 1)
        fail("channel.antennas: must be >= 1");
    positive("channel.spacing", array.spacing_wavelengths);
    if (ofdm.subcarriers < 1)
        fail("channel.subcarriers: must be >= 1");
    positive("channel.center_freq", ofdm.center_freq);
    positive("channel.bandwidth", ofdm.bandwidth);
    if (trace.max_reflections < 0 || trace.max_reflections > 2)
        fail("channel.max_reflections: supported range is 0..2");
    if (threads < 1)
        fail("channel.threads: must be >= 1");

    if (nc < 1)
        fail("preprocess.nc: must be >= 1");
    if (nc > ofdm.subcarriers)
        fail("preprocess.nc (" + std::to_string(nc) + ") exceeds channel.subcarriers (" +
             std::to_string(ofdm.subcarriers) + ")");
    if (crs.empty())
        fail("preprocess.crs: at least one compression ratio is required");
    for (const auto& cr : crs) {
        const int m = cr.codeword_length(n());
        if (m >= n())
            fail("preprocess.crs: " + cr.str() + " leaves no compression at N = " + std::to_string(n()));
    }
    auto in_crs = [&](const CompressionRatio& cr) { return std::find(crs.begin(), crs.end(), cr) != crs.end(); };
    if (!in_crs(online_cr))
        fail("experiment.online_cr (" + online_cr.str() + ") is not listed in preprocess.crs");
    for (const auto& cr : switch_crs)
        if (!in_crs(cr))
            fail("experiment.switch_crs (" + cr.str() + ") is not listed in preprocess.crs");

    if (!(alpha >= 0 && alpha < 1))
        fail("model.alpha: must lie in [0, 1)");
    if (grid_size < 8 || grid_size % 4 != 0)
        fail("model.grid_size: must be a multiple of 4 and at least 8");

    if (training.batch_size < 1 || training.online_batch_size < 1)
        fail("training.batch_size/training.online_batch_size: must be >= 1");
    if (training.epochs_step1 < 0 || training.epochs_step2 < 0 || training.online_epochs < 0)
        fail("training.epochs_*: must be >= 0");
    positive("training.lr", training.lr);
    positive("training.online_lr", training.online_lr);
    if (training.plateau_patience < 1 || training.online_patience < 0)
        fail("training.plateau_patience/training.online_patience: invalid patience");

    if (split.train_envs < 2)
        fail("split.train_envs: at least two training environments are required");
    if (split.val_envs < 1 || split.test_envs < 1)
        fail("split.val_envs/split.test_envs: must be >= 1");
    if (split.samples_per_env < 1)
        fail("split.samples_per_env: must be >= 1");
    if (split.online_env < 0 || split.online_env >= split.test_envs)
        fail("split.online_env: must index one of split.test_envs");
    if (split.online_holdout < 1 || split.online_pool < 1)
        fail("split.online_holdout/split.online_pool: must be >= 1");
    for (std::size_t i = 0; i < split.budgets.size(); ++i) {
        if (split.budgets[i] < 1)
            fail("split.budgets: budgets must be positive");
        if (split.budgets[i] > split.online_pool)
            fail("split.budgets (" + std::to_string(split.budgets[i]) + ") exceeds split.online_pool (" +
                 std::to_string(split.online_pool) + ")");
        if (i && split.budgets[i] <= split.budgets[i - 1])
            fail("split.budgets: must be strictly increasing");
    }
    if (split.los_min_samples < 1)
        fail("split.los_min_samples: must be >= 1");
    if (seeds.empty())
        fail("experiment.seeds: at least one seed is required");
    if (output_dir.empty())
        fail("output.dir: must not be empty");
}

// ---------------------------------------------------------------------------
// Sources

void apply_config_text(ExperimentConfig& cfg, const std::string& text, const std::string& origin)
{
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        const std::string t = trim(std::string_view(line).substr(0, hash));
        if (t.empty())
            continue;
        const std::string where = origin + ":" + std::to_string(lineno);
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ValidationError(where + ": malformed section header '" + t + "'");
            section = trim(std::string_view(t).substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ValidationError(where + ": expected 'key = value', got '" + t + "'");
        const std::string key = trim(std::string_view(t).substr(0, eq));
        const std::string value = trim(std::string_view(t).substr(eq + 1));
        const std::string path = section.empty() ? key : section + "." + key;
        try {
            cfg.set(path, value);
        } catch (const ValidationError& e) {
            throw ValidationError(where + ": " + e.what());
        }
    }
}

void apply_config_file(ExperimentConfig& cfg, const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ValidationError("config file not found: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(cfg, ss.str(), path);
}

namespace {
std::string env_name(const std::string& path)
{
    std::string out = kEnvPrefix;
    for (char c : path)
        out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}
} // namespace

void apply_env_overrides(ExperimentConfig& cfg, const std::map<std::string, std::string>& env)
{
    std::set<std::string> known{std::string(kEnvPrefix) + "PROFILE"};
    for (const auto& key : ExperimentConfig::keys())
        known.insert(env_name(key));
    for (const auto& [name, value] : env)
        if (name.starts_with(kEnvPrefix) && !known.contains(name))
            throw ValidationError(name + ": no configuration key corresponds to this variable");
    for (const auto& key : ExperimentConfig::keys()) {
        const auto it = env.find(env_name(key));
        if (it == env.end())
            continue;
        try {
            cfg.set(key, it->second);
        } catch (const ValidationError& e) {
            throw ValidationError(it->first + ": " + e.what());
        }
    }
}

std::map<std::string, std::string> current_environment()
{
    std::map<std::string, std::string> out;
    for (char** e = environ; e && *e; ++e) {
        const std::string_view kv(*e);
        const auto eq = kv.find('=');
        if (eq != std::string_view::npos && kv.starts_with(kEnvPrefix))
            out.emplace(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return out;
}

ExperimentConfig resolve_config(const ConfigSources& src)
{
    std::string profile = src.profile;
    if (profile.empty())
        if (const auto it = src.env.find(std::string(kEnvPrefix) + "PROFILE"); it != src.env.end())
            profile = it->second;
    ExperimentConfig cfg = ExperimentConfig::for_profile(profile);
    if (!src.file.empty())
        apply_config_file(cfg, src.file);
    apply_env_overrides(cfg, src.env);
    for (const auto& [key, value] : src.flags)
        cfg.set(key, value);
    cfg.validate();
    return cfg;
}

} // namespace csifb
