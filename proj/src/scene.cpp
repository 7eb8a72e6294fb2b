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
#include "csifb/scene.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

namespace csifb {

namespace fs = std::filesystem;
using nlohmann::json;

double WallSegment::length() const
{
    return std::hypot(b.x - a.x, b.y - a.y);
}

double polygon_area(const std::vector<Vec2>& poly)
{
    double acc = 0.0;
    for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
        const Vec2& p = poly[i];
        const Vec2& q = poly[(i + 1) % n];
        acc += p.x * q.y - q.x * p.y;
    }
    return 0.5 * std::abs(acc);
}

namespace {

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b)
{
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

double cross(Vec2 o, Vec2 a, Vec2 b)
{
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2)
{
    const double d1 = cross(q1, q2, p1), d2 = cross(q1, q2, p2);
    const double d3 = cross(p1, p2, q1), d4 = cross(p1, p2, q2);
    if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
        return true;
    auto on_seg = [](Vec2 a, Vec2 b, Vec2 c) {
        return std::min(a.x, b.x) <= c.x && c.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= c.y &&
               c.y <= std::max(a.y, b.y);
    };
    return (d1 == 0 && on_seg(q1, q2, p1)) || (d2 == 0 && on_seg(q1, q2, p2)) || (d3 == 0 && on_seg(p1, p2, q1)) ||
           (d4 == 0 && on_seg(p1, p2, q2));
}

double segment_distance(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2)
{
    if (segments_intersect(p1, p2, q1, q2))
        return 0.0;
    return std::min({point_segment_distance(p1, q1, q2), point_segment_distance(p2, q1, q2),
                     point_segment_distance(q1, p1, p2), point_segment_distance(q2, p1, p2)});
}

struct Rect {
    double x0, y0, x1, y1;

    std::vector<Vec2> polygon() const { return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}; }
    double area() const { return (x1 - x0) * (y1 - y0); }
    bool contains_strict(Vec2 p) const { return p.x > x0 && p.x < x1 && p.y > y0 && p.y < y1; }
};

// Closed axis-aligned segment vs closed rectangle.
bool segment_touches_rect(Vec2 a, Vec2 b, const Rect& r)
{
    const double sx0 = std::min(a.x, b.x), sx1 = std::max(a.x, b.x);
    const double sy0 = std::min(a.y, b.y), sy1 = std::max(a.y, b.y);
    return sx1 >= r.x0 && sx0 <= r.x1 && sy1 >= r.y0 && sy0 <= r.y1;
}

class LatticeSampler {
public:
    LatticeSampler(std::mt19937_64& rng, double lattice) : rng_(rng), lattice_(lattice) {}

    // Uniform lattice point in [lo, hi]; lo is returned when the range holds no lattice point.
    double point(double lo, double hi)
    {
        const auto k0 = static_cast<long>(std::ceil(lo / lattice_ - 1e-9));
        const auto k1 = static_cast<long>(std::floor(hi / lattice_ + 1e-9));
        if (k1 < k0)
            return lo;
        std::uniform_int_distribution<long> d(k0, k1);
        return static_cast<double>(d(rng_)) * lattice_;
    }

    // Uniform length in [lo, hi] snapped to the lattice.
    double length(double lo, double hi)
    {
        std::uniform_real_distribution<double> d(lo, hi);
        const double snapped = std::round(d(rng_) / lattice_) * lattice_;
        return std::clamp(snapped, lo, hi);
    }

    bool coin() { return std::uniform_int_distribution<int>(0, 1)(rng_) == 1; }

private:
    std::mt19937_64& rng_;
    double lattice_;
};

WallSegment make_wall(Vec2 a, Vec2 b, const SceneParams& p)
{
    WallSegment w;
    w.a = a;
    w.b = b;
    w.material = p.material;
    w.rel_permittivity = p.rel_permittivity;
    w.conductivity = p.conductivity;
    return w;
}

struct Partition {
    WallSegment wall;
    Rect region;
};

Partition sample_partition(LatticeSampler& s, const SceneParams& p)
{
    const bool vertical = s.coin();
    const bool low_anchor = s.coin();
    const double span = vertical ? p.depth : p.width;
    const double across = vertical ? p.width : p.depth;
    const double len = s.length(p.min_wall_length, std::min(p.max_wall_length, span - p.lattice));
    const double pos = s.point(0.4 * across, 0.8 * across);
    const double bs_across = vertical ? p.bs_position.x : p.bs_position.y;

    const double lo = low_anchor ? 0.0 : span - len;
    const double hi = low_anchor ? len : span;
    // Region on the side of the partition away from the BS.
    const double r0 = bs_across < pos ? pos : 0.0;
    const double r1 = bs_across < pos ? across : pos;

    Partition out;
    if (vertical) {
        out.wall = make_wall({pos, lo}, {pos, hi}, p);
        out.region = {r0, lo, r1, hi};
    } else {
        out.wall = make_wall({lo, pos}, {hi, pos}, p);
        out.region = {lo, r0, hi, r1};
    }
    return out;
}

} // namespace

bool point_in_polygon(const std::vector<Vec2>& poly, Vec2 p)
{
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i)
        if (point_segment_distance(p, poly[i], poly[(i + 1) % n]) <= 1e-12)
            return true;
    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[j];
        if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x)
            inside = !inside;
    }
    return inside;
}

Scene generate_scene(std::uint64_t seed, const SceneParams& params, int scene_id)
{
    if (params.width <= 0 || params.depth <= 0 || params.height <= 0)
        throw ValidationError("scene dimensions must be positive");
    if (params.min_walls < 0 || params.max_walls < params.min_walls)
        throw ValidationError("invalid wall-count range");
    if (params.min_wall_length <= 0 || params.max_wall_length < params.min_wall_length)
        throw ValidationError("invalid wall-length range");

    std::mt19937_64 rng(derive_seed(seed, 0x5ce7e));
    LatticeSampler sampler(rng, params.lattice);
    const Vec2 bs{params.bs_position.x, params.bs_position.y};

    Scene scene;
    scene.width = params.width;
    scene.depth = params.depth;
    scene.height = params.height;
    scene.bs_position = params.bs_position;
    scene.ue_height = params.ue_height;
    scene.scene_id = scene_id;
    scene.rng_seed = seed;

    const int n_walls = std::uniform_int_distribution<int>(params.min_walls, params.max_walls)(rng);
    if (n_walls == 0) {
        scene.ue_region = Rect{0.0, 0.0, params.width, params.depth}.polygon();
        return scene;
    }

    for (int attempt = 1; attempt <= params.max_attempts; ++attempt) {
        const Partition part = sample_partition(sampler, params);
        if (part.region.area() < params.min_ue_area || part.region.contains_strict(bs))
            continue;
        if (point_segment_distance(bs, part.wall.a, part.wall.b) < params.bs_clearance)
            continue;

        std::vector<WallSegment> walls{part.wall};
        const Rect keep_out{part.region.x0 - 0.25, part.region.y0 - 0.25, part.region.x1 + 0.25,
                            part.region.y1 + 0.25};
        bool ok = true;
        for (int w = 1; w < n_walls && ok; ++w) {
            ok = false;
            for (int tries = 0; tries < 50 && !ok; ++tries) {
                const bool vertical = sampler.coin();
                const double span = vertical ? params.depth : params.width;
                const double across = vertical ? params.width : params.depth;
                const double len = sampler.length(params.min_wall_length,
                                                  std::min(params.max_wall_length, span - 2 * params.lattice));
                const double start = sampler.point(params.lattice, span - params.lattice - len);
                const double pos = sampler.point(params.lattice, across - params.lattice);
                const Vec2 a = vertical ? Vec2{pos, start} : Vec2{start, pos};
                const Vec2 b = vertical ? Vec2{pos, start + len} : Vec2{start + len, pos};
                if (start + len > span - params.lattice + 1e-9)
                    continue;
                if (segment_touches_rect(a, b, keep_out))
                    continue;
                if (point_segment_distance(bs, a, b) < params.bs_clearance)
                    continue;
                const bool clear = std::all_of(walls.begin(), walls.end(), [&](const WallSegment& o) {
                    return segment_distance(a, b, o.a, o.b) >= 0.25;
                });
                if (!clear)
                    continue;
                walls.push_back(make_wall(a, b, params));
                ok = true;
            }
        }
        if (!ok)
            continue;

        scene.walls = std::move(walls);
        scene.ue_region = part.region.polygon();
        return scene;
    }
    throw GenerationError("scene generation failed after " + std::to_string(params.max_attempts) +
                              " attempts (seed " + std::to_string(seed) + "); parameters look infeasible",
                          params.max_attempts);
}

std::vector<std::string> scene_violations(const Scene& s)
{
    std::vector<std::string> out;
    constexpr double tol = 1e-9;
    auto inside = [&](Vec2 p) { return p.x >= -tol && p.x <= s.width + tol && p.y >= -tol && p.y <= s.depth + tol; };

    for (std::size_t i = 0; i < s.walls.size(); ++i) {
        const auto& w = s.walls[i];
        const std::string tag = "wall " + std::to_string(i);
        if (!inside(w.a) || !inside(w.b))
            out.push_back(tag + " leaves the outer rectangle");
        if (w.a == w.b)
            out.push_back(tag + " has coincident endpoints");
        if (!(w.rel_permittivity >= 1.0))
            out.push_back(tag + " has rel_permittivity < 1");
        if (!(w.conductivity >= 0.0))
            out.push_back(tag + " has negative conductivity");
    }
    const Vec2 bs{s.bs_position.x, s.bs_position.y};
    if (!inside(bs))
        out.push_back("BS outside the outer rectangle");
    if (s.ue_region.size() < 3 || !(polygon_area(s.ue_region) > 0.0))
        out.push_back("UE region has no area");
    for (const auto& v : s.ue_region)
        if (!inside(v))
            out.push_back("UE region vertex outside the outer rectangle");
    // With internal walls the BS must sit outside the enclosed UE region.
    if (!s.walls.empty() && s.ue_region.size() >= 3 && point_in_polygon(s.ue_region, bs)) {
        bool on_boundary = false;
        for (std::size_t i = 0, n = s.ue_region.size(); i < n; ++i)
            on_boundary |= point_segment_distance(bs, s.ue_region[i], s.ue_region[(i + 1) % n]) <= tol;
        if (!on_boundary)
            out.push_back("BS inside the UE region");
    }
    return out;
}

namespace {

void mark_segment(SceneGraph& m, Vec2 a, Vec2 b, std::uint8_t code)
{
    const int g = m.size;
    const double cs = m.cell_size;
    auto lower = [&](double v) { return std::clamp(static_cast<int>(std::floor(v / cs + 1e-9)), 0, g - 1); };
    auto upper = [&](double v) { return std::clamp(static_cast<int>(std::ceil(v / cs - 1e-9)) - 1, 0, g - 1); };

    if (a.x == b.x) {
        const int col = lower(a.x);
        const int r0 = lower(std::min(a.y, b.y));
        const int r1 = std::max(r0, upper(std::max(a.y, b.y)));
        for (int r = r0; r <= r1; ++r)
            m.grid[static_cast<std::size_t>(r) * g + col] = code;
    } else if (a.y == b.y) {
        const int row = lower(a.y);
        const int c0 = lower(std::min(a.x, b.x));
        const int c1 = std::max(c0, upper(std::max(a.x, b.x)));
        for (int c = c0; c <= c1; ++c)
            m.grid[static_cast<std::size_t>(row) * g + c] = code;
    } else {
        throw ValidationError("rasterize: only axis-aligned segments are supported");
    }
}

} // namespace

SceneGraph rasterize(const Scene& scene, int g)
{
    if (g < 8)
        throw ValidationError("rasterize: grid size must be >= 8, got " + std::to_string(g));
    SceneGraph m;
    m.size = g;
    m.cell_size = std::max(scene.width, scene.depth) / g;
    m.scene_id = scene.scene_id;
    m.grid.assign(static_cast<std::size_t>(g) * g, kCodeFree);

    const auto& poly = scene.ue_region;
    for (std::size_t i = 0, n = poly.size(); i < n; ++i)
        mark_segment(m, poly[i], poly[(i + 1) % n], kCodeBoundary);
    for (const auto& w : scene.walls)
        mark_segment(m, w.a, w.b, kCodeWall);
    return m;
}

std::vector<double> scene_graph_to_model_input(const SceneGraph& m)
{
    std::vector<double> out(m.grid.size());
    std::transform(m.grid.begin(), m.grid.end(), out.begin(), [](std::uint8_t c) { return c / 2.0; });
    return out;
}

namespace {
constexpr std::string_view kSceneGraphMagic = "ACNSG";
constexpr std::uint16_t kSceneGraphVersion = 1;
} // namespace

void write_scene_graph(const std::string& path, const SceneGraph& m)
{
    BinaryWriter w(path);
    w.put_magic(kSceneGraphMagic);
    w.put<std::uint16_t>(kSceneGraphVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.size));
    w.put<double>(m.cell_size);
    w.put_array(m.grid.data(), m.grid.size());
    w.finish();
}

SceneGraph read_scene_graph(const std::string& path, int scene_id)
{
    BinaryReader r(path);
    r.expect_magic(kSceneGraphMagic);
    if (const auto v = r.get<std::uint16_t>(); v != kSceneGraphVersion)
        throw DataError("unsupported scene-graph version " + std::to_string(v) + " in " + path);
    SceneGraph m;
    m.size = static_cast<int>(r.get<std::uint32_t>());
    if (m.size < 1 || m.size > 4096)
        throw DataError("corrupt grid size in " + path);
    m.cell_size = r.get<double>();
    m.scene_id = scene_id;
    m.grid.resize(static_cast<std::size_t>(m.size) * m.size);
    r.get_array(m.grid.data(), m.grid.size());
    for (auto c : m.grid)
        if (c > kCodeBoundary)
            throw DataError("scene-graph code out of range in " + path);
    return m;
}

namespace {

json to_json(Vec2 p)
{
    return json::array({p.x, p.y});
}

Vec2 vec2_from(const json& j)
{
    return {j.at(0).get<double>(), j.at(1).get<double>()};
}

json params_to_json(const SceneParams& p)
{
    return {{"width", p.width},
            {"depth", p.depth},
            {"height", p.height},
            {"min_walls", p.min_walls},
            {"max_walls", p.max_walls},
            {"min_wall_length", p.min_wall_length},
            {"max_wall_length", p.max_wall_length},
            {"lattice", p.lattice},
            {"min_ue_area", p.min_ue_area},
            {"bs_position", {p.bs_position.x, p.bs_position.y, p.bs_position.z}},
            {"ue_height", p.ue_height},
            {"bs_clearance", p.bs_clearance},
            {"max_attempts", p.max_attempts},
            {"material", p.material},
            {"rel_permittivity", p.rel_permittivity},
            {"conductivity", p.conductivity}};
}

SceneParams params_from_json(const json& j)
{
    SceneParams p;
    p.width = j.at("width");
    p.depth = j.at("depth");
    p.height = j.at("height");
    p.min_walls = j.at("min_walls");
    p.max_walls = j.at("max_walls");
    p.min_wall_length = j.at("min_wall_length");
    p.max_wall_length = j.at("max_wall_length");
    p.lattice = j.at("lattice");
    p.min_ue_area = j.at("min_ue_area");
    const auto& bs = j.at("bs_position");
    p.bs_position = {bs.at(0), bs.at(1), bs.at(2)};
    p.ue_height = j.at("ue_height");
    p.bs_clearance = j.at("bs_clearance");
    p.max_attempts = j.at("max_attempts");
    p.material = j.at("material");
    p.rel_permittivity = j.at("rel_permittivity");
    p.conductivity = j.at("conductivity");
    return p;
}

std::string graph_file_name(int scene_id)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04d.sg", scene_id);
    return buf;
}

} // namespace

void write_scene_set(const std::string& dir, const SceneSet& set)
{
    fs::create_directories(dir);
    json scenes = json::array();
    for (std::size_t i = 0; i < set.scenes.size(); ++i) {
        const Scene& s = set.scenes[i];
        json walls = json::array();
        for (const auto& w : s.walls)
            walls.push_back({{"a", to_json(w.a)},
                             {"b", to_json(w.b)},
                             {"material", w.material},
                             {"rel_permittivity", w.rel_permittivity},
                             {"conductivity", w.conductivity}});
        json region = json::array();
        for (const auto& v : s.ue_region)
            region.push_back(to_json(v));
        const std::string file = graph_file_name(s.scene_id);
        write_scene_graph((fs::path(dir) / file).string(), set.graphs.at(i));
        scenes.push_back({{"scene_id", s.scene_id},
                          {"seed", s.rng_seed},
                          {"bs_position", {s.bs_position.x, s.bs_position.y, s.bs_position.z}},
                          {"ue_region", region},
                          {"ue_height", s.ue_height},
                          {"outer", {s.width, s.depth, s.height}},
                          {"walls", walls},
                          {"graph_file", file}});
    }
    const json manifest = {{"format", "csifb-scene-set"},
                           {"version", 1},
                           {"grid_size", set.grid_size},
                           {"params", params_to_json(set.params)},
                           {"scenes", scenes}};
    std::ofstream out(fs::path(dir) / "manifest.json");
    out << manifest.dump(2) << '\n';
    if (!out)
        throw DataError("cannot write scene manifest in " + dir);
}

SceneSet read_scene_set(const std::string& dir)
{
    const fs::path manifest_path = fs::path(dir) / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in)
        throw DataError("no scene set at '" + dir + "' (run gen-scenes first)");
    json j;
    try {
        in >> j;
        SceneSet set;
        set.grid_size = j.at("grid_size");
        set.params = params_from_json(j.at("params"));
        for (const auto& e : j.at("scenes")) {
            Scene s;
            s.scene_id = e.at("scene_id");
            s.rng_seed = e.at("seed");
            const auto& bs = e.at("bs_position");
            s.bs_position = {bs.at(0), bs.at(1), bs.at(2)};
            for (const auto& v : e.at("ue_region"))
                s.ue_region.push_back(vec2_from(v));
            s.ue_height = e.at("ue_height");
            const auto& outer = e.at("outer");
            s.width = outer.at(0);
            s.depth = outer.at(1);
            s.height = outer.at(2);
            for (const auto& w : e.at("walls")) {
                WallSegment seg;
                seg.a = vec2_from(w.at("a"));
                seg.b = vec2_from(w.at("b"));
                seg.material = w.at("material");
                seg.rel_permittivity = w.at("rel_permittivity");
                seg.conductivity = w.at("conductivity");
                s.walls.push_back(seg);
            }
            set.graphs.push_back(
                read_scene_graph((fs::path(dir) / e.at("graph_file").get<std::string>()).string(), s.scene_id));
            set.scenes.push_back(std::move(s));
        }
        return set;
    } catch (const json::exception& e) {
        throw DataError("malformed scene manifest " + manifest_path.string() + ": " + e.what());
    }
}

SceneSet generate_scene_set(int count, std::uint64_t base_seed, const SceneParams& params, int grid_size,
                            const std::function<bool(const Scene&)>& accept)
{
    SceneSet set;
    set.params = params;
    set.grid_size = grid_size;
    for (int i = 0; i < count; ++i) {
        const auto idx = static_cast<std::uint64_t>(i);
        Scene scene = generate_scene(derive_seed(base_seed, idx), params, i);
        for (int redraw = 1; accept && !accept(scene); ++redraw) {
            if (redraw > params.max_attempts)
                throw GenerationError("scene " + std::to_string(i) + " rejected by the acceptance check", redraw);
            scene = generate_scene(derive_seed(base_seed, idx, static_cast<std::uint64_t>(redraw)), params, i);
        }
        set.scenes.push_back(std::move(scene));
        set.graphs.push_back(rasterize(set.scenes.back(), grid_size));
    }
    return set;
}

} // namespace csifb
