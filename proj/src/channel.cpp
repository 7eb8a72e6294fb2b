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
#include "csifb/channel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <thread>

namespace csifb {

namespace {

constexpr double kVacuumPermittivity = 8.8541878128e-12;
constexpr double kGeomTol = 1e-9;

struct Mirror {
    Vec2 a, b;
    double rel_permittivity;
    double conductivity;
    bool internal;
};

std::vector<Mirror> collect_mirrors(const Scene& scene, bool outer)
{
    std::vector<Mirror> m;
    for (const auto& w : scene.walls)
        m.push_back({w.a, w.b, w.rel_permittivity, w.conductivity, true});
    if (outer) {
        // Outer walls share the internal wall material.
        const double eps = scene.walls.empty() ? 1.99 : scene.walls.front().rel_permittivity;
        const double sig = scene.walls.empty() ? 0.012 : scene.walls.front().conductivity;
        const double W = scene.width, D = scene.depth;
        m.push_back({{0, 0}, {W, 0}, eps, sig, false});
        m.push_back({{W, 0}, {W, D}, eps, sig, false});
        m.push_back({{W, D}, {0, D}, eps, sig, false});
        m.push_back({{0, D}, {0, 0}, eps, sig, false});
    }
    return m;
}

Vec2 sub(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
double crossz(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
double norm(Vec2 a) { return std::hypot(a.x, a.y); }

Vec2 reflect(Vec2 p, const Mirror& m)
{
    const Vec2 d = sub(m.b, m.a);
    const double t = dot(sub(p, m.a), d) / dot(d, d);
    const Vec2 foot{m.a.x + t * d.x, m.a.y + t * d.y};
    return {2 * foot.x - p.x, 2 * foot.y - p.y};
}

double side(Vec2 p, const Mirror& m)
{
    return crossz(sub(m.b, m.a), sub(p, m.a));
}

// Intersection of segment p->q with mirror segment. Returns the point when the
// crossing lies strictly inside p->q and within the mirror's closed extent.
bool hit_mirror(Vec2 p, Vec2 q, const Mirror& m, Vec2& out)
{
    const Vec2 r = sub(q, p), s = sub(m.b, m.a);
    const double denom = crossz(r, s);
    if (std::abs(denom) < 1e-15)
        return false;
    const Vec2 ap = sub(m.a, p);
    const double t = crossz(ap, s) / denom;
    const double u = crossz(ap, r) / denom;
    if (t <= kGeomTol || t >= 1 - kGeomTol || u < -kGeomTol || u > 1 + kGeomTol)
        return false;
    out = {p.x + t * r.x, p.y + t * r.y};
    return true;
}

// True when segment p->q crosses any mirror other than the excluded ones.
// Only internal walls can block; the outer walls bound the room.
bool blocked(Vec2 p, Vec2 q, const std::vector<Mirror>& mirrors, int skip_a, int skip_b)
{
    for (int i = 0; i < static_cast<int>(mirrors.size()); ++i) {
        if (i == skip_a || i == skip_b || !mirrors[i].internal)
            continue;
        Vec2 x;
        if (hit_mirror(p, q, mirrors[i], x))
            return true;
    }
    return false;
}

struct Leg {
    Vec2 from, to;
};

PathComponent finish_path(const std::vector<Leg>& legs, const std::vector<const Mirror*>& bounces, double dh,
                          double freq, std::complex<double> extra_coeff, int n_diff)
{
    double d2 = 0.0;
    for (const auto& l : legs)
        d2 += norm(sub(l.to, l.from));
    const double d = std::sqrt(d2 * d2 + dh * dh);
    const double lambda = kSpeedOfLight / freq;

    std::complex<double> coeff = extra_coeff;
    for (std::size_t k = 0; k < bounces.size(); ++k) {
        const Mirror& m = *bounces[k];
        const Vec2 dir = sub(legs[k].to, legs[k].from);
        const Vec2 t = sub(m.b, m.a);
        const Vec2 n{-t.y / norm(t), t.x / norm(t)};
        const double cos_plan = std::abs(dot(dir, n)) / norm(dir);
        coeff *= fresnel_te(cos_plan * d2 / d, m.rel_permittivity, m.conductivity, freq);
    }

    PathComponent p;
    p.delay = d / kSpeedOfLight;
    p.gain = lambda / (4 * kPi * d) * coeff * std::polar(1.0, -2 * kPi * d / lambda);
    const Vec2 first = sub(legs.front().to, legs.front().from);
    p.aod_azimuth = std::atan2(first.x, first.y);
    p.n_reflections = static_cast<int>(bounces.size());
    p.n_diffractions = n_diff;
    p.is_los = bounces.empty() && n_diff == 0;
    for (const auto& l : legs)
        p.polyline.push_back(l.from);
    p.polyline.push_back(legs.back().to);
    return p;
}

} // namespace

std::complex<double> fresnel_te(double cos_incidence, double rel_permittivity, double conductivity, double frequency)
{
    const std::complex<double> eps(rel_permittivity, -conductivity / (2 * kPi * frequency * kVacuumPermittivity));
    const double c = std::clamp(cos_incidence, 0.0, 1.0);
    const std::complex<double> root = std::sqrt(eps - (1.0 - c * c));
    return (c - root) / (c + root);
}

double knife_edge_loss_db(double nu)
{
    if (nu <= -0.78)
        return 0.0;
    return 6.9 + 20.0 * std::log10(std::sqrt((nu - 0.1) * (nu - 0.1) + 1.0) + nu - 0.1);
}

std::vector<PathComponent> trace_between(const Scene& scene, Vec3 tx3, Vec3 rx3, const TraceConfig& cfg)
{
    const auto mirrors = collect_mirrors(scene, cfg.outer_walls);
    const Vec2 tx{tx3.x, tx3.y}, rx{rx3.x, rx3.y};
    const double dh = tx3.z - rx3.z;
    const int nm = static_cast<int>(mirrors.size());
    std::vector<PathComponent> paths;

    if (!blocked(tx, rx, mirrors, -1, -1))
        paths.push_back(finish_path({{tx, rx}}, {}, dh, cfg.center_freq, 1.0, 0));

    if (cfg.max_reflections >= 1) {
        for (int i = 0; i < nm; ++i) {
            const Mirror& m = mirrors[i];
            const double st = side(tx, m), sr = side(rx, m);
            if (st * sr <= 0)
                continue;
            const Vec2 img = reflect(tx, m);
            Vec2 p;
            if (!hit_mirror(img, rx, m, p))
                continue;
            if (blocked(tx, p, mirrors, i, -1) || blocked(p, rx, mirrors, i, -1))
                continue;
            paths.push_back(finish_path({{tx, p}, {p, rx}}, {&m}, dh, cfg.center_freq, 1.0, 0));
        }
    }

    if (cfg.max_reflections >= 2) {
        for (int i = 0; i < nm; ++i) {
            const Mirror& mi = mirrors[i];
            if (side(tx, mi) == 0)
                continue;
            const Vec2 img1 = reflect(tx, mi);
            for (int j = 0; j < nm; ++j) {
                if (j == i)
                    continue;
                const Mirror& mj = mirrors[j];
                if (std::abs(side(mj.a, mi)) < kGeomTol && std::abs(side(mj.b, mi)) < kGeomTol)
                    continue; // collinear mirrors
                const Vec2 img2 = reflect(img1, mj);
                Vec2 p2, p1;
                if (!hit_mirror(img2, rx, mj, p2))
                    continue;
                if (!hit_mirror(img1, p2, mi, p1))
                    continue;
                // Specular validity: each bounce has its neighbours on the same side.
                if (side(tx, mi) * side(p2, mi) <= 0 || side(p1, mj) * side(rx, mj) <= 0)
                    continue;
                if (blocked(tx, p1, mirrors, i, -1) || blocked(p1, p2, mirrors, i, j) || blocked(p2, rx, mirrors, j, -1))
                    continue;
                paths.push_back(
                    finish_path({{tx, p1}, {p1, p2}, {p2, rx}}, {&mi, &mj}, dh, cfg.center_freq, 1.0, 0));
            }
        }
    }

    if (cfg.diffraction && blocked(tx, rx, mirrors, -1, -1)) {
        const double lambda = kSpeedOfLight / cfg.center_freq;
        for (int i = 0; i < nm; ++i) {
            if (!mirrors[i].internal)
                continue;
            for (const Vec2 edge : {mirrors[i].a, mirrors[i].b}) {
                const double d1 = norm(sub(edge, tx)), d2 = norm(sub(rx, edge));
                if (d1 < kGeomTol || d2 < kGeomTol)
                    continue;
                if (blocked(tx, edge, mirrors, i, -1) || blocked(edge, rx, mirrors, i, -1))
                    continue;
                const Vec2 dir = sub(rx, tx);
                const double h = std::abs(crossz(dir, sub(edge, tx))) / norm(dir);
                const double nu = h * std::sqrt(2 * (d1 + d2) / (lambda * d1 * d2));
                const double coeff = std::pow(10.0, -knife_edge_loss_db(nu) / 20.0);
                paths.push_back(finish_path({{tx, edge}, {edge, rx}}, {}, dh, cfg.center_freq, coeff, 1));
            }
        }
    }

    if (cfg.min_gain_db > 0 && !paths.empty()) {
        double peak = 0.0;
        for (const auto& p : paths)
            peak = std::max(peak, std::abs(p.gain));
        const double floor = peak * std::pow(10.0, -cfg.min_gain_db / 20.0);
        std::erase_if(paths, [&](const PathComponent& p) { return std::abs(p.gain) < floor; });
    }
    std::stable_sort(paths.begin(), paths.end(),
                     [](const PathComponent& a, const PathComponent& b) { return a.delay < b.delay; });
    return paths;
}

std::vector<PathComponent> trace_paths(const Scene& scene, Vec3 ue, const TraceConfig& cfg)
{
    if (!point_in_polygon(scene.ue_region, {ue.x, ue.y}))
        throw ValidationError("trace_paths: UE position outside the UE region");
    if (std::abs(ue.z - scene.ue_height) > 1e-9)
        throw ValidationError("trace_paths: UE must be at the scene's UE height");
    return trace_between(scene, scene.bs_position, ue, cfg);
}

bool has_line_of_sight(const Scene& scene, Vec3 ue)
{
    const auto mirrors = collect_mirrors(scene, false);
    return !blocked({scene.bs_position.x, scene.bs_position.y}, {ue.x, ue.y}, mirrors, -1, -1);
}

ChannelMatrix assemble_channel(const std::vector<PathComponent>& paths, const ArrayConfig& array,
                               const OfdmConfig& ofdm)
{
    if (paths.empty())
        throw DataError("assemble_channel: no propagation paths");
    if (array.antennas < 1 || ofdm.subcarriers < 1)
        throw ValidationError("assemble_channel: empty array or OFDM grid");

    ChannelMatrix ch;
    ch.subcarriers = ofdm.subcarriers;
    ch.antennas = array.antennas;
    ch.center_freq = ofdm.center_freq;
    ch.bandwidth = ofdm.bandwidth;
    ch.h.assign(static_cast<std::size_t>(ofdm.subcarriers) * array.antennas, {0.0, 0.0});

    for (const auto& p : paths) {
        const double spatial = -2 * kPi * array.spacing_wavelengths * std::sin(p.aod_azimuth);
        for (int n = 0; n < ofdm.subcarriers; ++n) {
            // Reduce the phase modulo one cycle before polar() to keep precision at GHz * ns.
            const double cycles = ofdm.subcarrier_frequency(n) * p.delay;
            const double freq_phase = -2 * kPi * (cycles - std::floor(cycles));
            for (int t = 0; t < array.antennas; ++t) {
                const std::complex<double> h = p.gain * std::polar(1.0, freq_phase + spatial * t);
                ch.at(n, t) += std::conj(h);
            }
        }
    }
    return ch;
}

ChannelMatrix ChannelDataset::matrix(std::size_t i) const
{
    const auto& r = records.at(i);
    ChannelMatrix ch;
    ch.subcarriers = subcarriers;
    ch.antennas = antennas;
    ch.center_freq = center_freq;
    ch.bandwidth = bandwidth;
    ch.ue_position = r.ue_position;
    ch.scene_id = static_cast<int>(r.scene_id);
    ch.h.resize(r.h.size());
    std::transform(r.h.begin(), r.h.end(), ch.h.begin(),
                   [](std::complex<float> v) { return std::complex<double>(v.real(), v.imag()); });
    return ch;
}

namespace {

double distance_to_boundary(const Scene& scene, Vec2 p)
{
    double best = std::numeric_limits<double>::infinity();
    auto seg = [&](Vec2 a, Vec2 b) {
        const Vec2 d = sub(b, a);
        double t = std::clamp(dot(sub(p, a), d) / dot(d, d), 0.0, 1.0);
        best = std::min(best, norm(sub(p, {a.x + t * d.x, a.y + t * d.y})));
    };
    const auto& poly = scene.ue_region;
    for (std::size_t i = 0, n = poly.size(); i < n; ++i)
        seg(poly[i], poly[(i + 1) % n]);
    for (const auto& w : scene.walls)
        seg(w.a, w.b);
    return best;
}

} // namespace

double reachable_fraction(const Scene& scene, const TraceConfig& cfg, int probes_per_axis, double margin)
{
    double x0 = scene.ue_region.front().x, x1 = x0, y0 = scene.ue_region.front().y, y1 = y0;
    for (const auto& v : scene.ue_region) {
        x0 = std::min(x0, v.x);
        x1 = std::max(x1, v.x);
        y0 = std::min(y0, v.y);
        y1 = std::max(y1, v.y);
    }
    int probes = 0, reached = 0;
    for (int i = 0; i < probes_per_axis; ++i)
        for (int j = 0; j < probes_per_axis; ++j) {
            const Vec2 p{x0 + (x1 - x0) * (i + 0.5) / probes_per_axis, y0 + (y1 - y0) * (j + 0.5) / probes_per_axis};
            if (!point_in_polygon(scene.ue_region, p) || distance_to_boundary(scene, p) < margin)
                continue;
            ++probes;
            if (!trace_paths(scene, {p.x, p.y, scene.ue_height}, cfg).empty())
                ++reached;
        }
    return probes ? static_cast<double>(reached) / probes : 0.0;
}

namespace {

ChannelRecord generate_record(const Scene& scene, std::uint64_t sample_index, const DatasetConfig& cfg)
{
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(scene.scene_id), sample_index));
    double x0 = scene.ue_region.front().x, x1 = x0, y0 = scene.ue_region.front().y, y1 = y0;
    for (const auto& v : scene.ue_region) {
        x0 = std::min(x0, v.x);
        x1 = std::max(x1, v.x);
        y0 = std::min(y0, v.y);
        y1 = std::max(y1, v.y);
    }
    std::uniform_real_distribution<double> ux(x0, x1), uy(y0, y1);

    for (int draw = 0; draw < cfg.max_oversampling; ++draw) {
        const Vec2 p{ux(rng), uy(rng)};
        if (!point_in_polygon(scene.ue_region, p) || distance_to_boundary(scene, p) < cfg.ue_margin)
            continue;
        const Vec3 ue{p.x, p.y, scene.ue_height};
        const auto paths = trace_paths(scene, ue, cfg.trace);
        if (paths.empty())
            continue;
        const ChannelMatrix ch = assemble_channel(paths, cfg.array, cfg.ofdm);
        ChannelRecord rec;
        rec.scene_id = static_cast<std::uint32_t>(scene.scene_id);
        rec.ue_position = ue;
        rec.h.resize(ch.h.size());
        std::transform(ch.h.begin(), ch.h.end(), rec.h.begin(), [](std::complex<double> v) {
            return std::complex<float>(static_cast<float>(v.real()), static_cast<float>(v.imag()));
        });
        return rec;
    }
    throw DataError("dataset generation: scene " + std::to_string(scene.scene_id) + " exhausted " +
                    std::to_string(cfg.max_oversampling) + "x oversampling without a traceable UE position");
}

} // namespace

ChannelDataset generate_dataset(const std::vector<Scene>& scenes, const DatasetConfig& cfg)
{
    if (cfg.samples_per_scene < 1)
        throw ValidationError("samples_per_scene must be >= 1");
    if (cfg.ofdm.center_freq != cfg.trace.center_freq)
        throw ValidationError("trace and OFDM center frequencies differ");

    ChannelDataset ds;
    ds.subcarriers = cfg.ofdm.subcarriers;
    ds.antennas = cfg.array.antennas;
    ds.center_freq = cfg.ofdm.center_freq;
    ds.bandwidth = cfg.ofdm.bandwidth;
    const std::size_t per = static_cast<std::size_t>(cfg.samples_per_scene);
    const std::size_t total = scenes.size() * per;
    ds.records.resize(total);

    const int workers = std::max(1, std::min<int>(cfg.threads, static_cast<int>(total)));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    auto work = [&](int w) {
        try {
            for (std::size_t k = static_cast<std::size_t>(w); k < total; k += static_cast<std::size_t>(workers))
                ds.records[k] = generate_record(scenes[k / per], cfg.sample_index_offset + k % per, cfg);
        } catch (...) {
            errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back(work, w);
    }
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);
    return ds;
}

namespace {
constexpr std::string_view kDatasetMagic = "ACNDS";
constexpr std::uint16_t kDatasetVersion = 1;
} // namespace

void write_dataset(const std::string& path, const ChannelDataset& ds)
{
    BinaryWriter w(path);
    w.put_magic(kDatasetMagic);
    w.put<std::uint16_t>(kDatasetVersion);
    w.put<std::uint64_t>(ds.records.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.subcarriers));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.antennas));
    w.put<double>(ds.center_freq);
    w.put<double>(ds.bandwidth);
    const std::size_t cells = static_cast<std::size_t>(ds.subcarriers) * ds.antennas;
    for (const auto& r : ds.records) {
        if (r.h.size() != cells)
            throw DimensionError("write_dataset: record size does not match header");
        w.put<std::uint32_t>(r.scene_id);
        w.put<double>(r.ue_position.x);
        w.put<double>(r.ue_position.y);
        w.put<double>(r.ue_position.z);
        w.put_array(reinterpret_cast<const float*>(r.h.data()), 2 * cells);
    }
    w.finish();
}

ChannelDataset read_dataset(const std::string& path)
{
    BinaryReader r(path);
    r.expect_magic(kDatasetMagic);
    if (const auto v = r.get<std::uint16_t>(); v != kDatasetVersion)
        throw DataError("unsupported dataset version " + std::to_string(v) + " in " + path);
    ChannelDataset ds;
    const auto count = r.get<std::uint64_t>();
    ds.subcarriers = static_cast<int>(r.get<std::uint32_t>());
    ds.antennas = static_cast<int>(r.get<std::uint32_t>());
    ds.center_freq = r.get<double>();
    ds.bandwidth = r.get<double>();
    if (ds.subcarriers < 1 || ds.antennas < 1 || count > (1ull << 32))
        throw DataError("corrupt dataset header in " + path);
    const std::size_t cells = static_cast<std::size_t>(ds.subcarriers) * ds.antennas;
    ds.records.resize(count);
    for (auto& rec : ds.records) {
        rec.scene_id = r.get<std::uint32_t>();
        rec.ue_position.x = r.get<double>();
        rec.ue_position.y = r.get<double>();
        rec.ue_position.z = r.get<double>();
        rec.h.resize(cells);
        r.get_array(reinterpret_cast<float*>(rec.h.data()), 2 * cells);
    }
    return ds;
}

} // namespace csifb
