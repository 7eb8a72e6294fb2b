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

#include "csifb/common.hpp"
#include "csifb/scene.hpp"

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace csifb {

struct PathComponent {
    double delay = 0.0;              // seconds
    std::complex<double> gain{};     // linear complex amplitude
    double aod_azimuth = 0.0;        // radians from array broadside (+y), array axis along +x
    int n_reflections = 0;
    int n_diffractions = 0;
    bool is_los = false;
    std::vector<Vec2> polyline; // plan-view vertices, BS first, UE last
};

struct TraceConfig {
    int max_reflections = 2;
    bool diffraction = false;     // single knife-edge at internal wall endpoints
    double min_gain_db = 60.0;    // drop paths this far below the strongest; <= 0 keeps all
    double center_freq = 5.8e9;
    bool outer_walls = true;      // false: free space apart from internal walls
};

/// Traces BS -> UE paths for a UE that must lie in the scene's UE region at
/// UE height. Throws ValidationError otherwise. Sorted by delay.
std::vector<PathComponent> trace_paths(const Scene& scene, Vec3 ue, const TraceConfig& cfg);

/// Same tracer between arbitrary points; no region precondition.
std::vector<PathComponent> trace_between(const Scene& scene, Vec3 tx, Vec3 rx, const TraceConfig& cfg);

/// True when the straight plan-view BS-UE segment crosses no internal wall.
bool has_line_of_sight(const Scene& scene, Vec3 ue);

/// Fraction of a regular probe grid over the UE region (points at least
/// `margin` from walls and region edges) that receives at least one path.
double reachable_fraction(const Scene& scene, const TraceConfig& cfg, int probes_per_axis = 6, double margin = 0.1);

/// Fresnel TE reflection coefficient for a lossy dielectric half-space.
std::complex<double> fresnel_te(double cos_incidence, double rel_permittivity, double conductivity,
                                double frequency);

/// Knife-edge diffraction loss in dB for Fresnel-Kirchhoff parameter nu.
double knife_edge_loss_db(double nu);

struct ArrayConfig {
    int antennas = 8;
    double spacing_wavelengths = 0.5;
};

struct OfdmConfig {
    int subcarriers = 64;
    double center_freq = 5.8e9;
    double bandwidth = 20e6;

    double subcarrier_frequency(int n) const { return center_freq - bandwidth / 2 + n * bandwidth / subcarriers; }
};

/// Spatial-frequency CSI. Row n holds h_n^H, so h(n, t) = conj(h_n[t]).
struct ChannelMatrix {
    int subcarriers = 0;
    int antennas = 0;
    double center_freq = 0.0;
    double bandwidth = 0.0;
    Vec3 ue_position{};
    int scene_id = 0;
    std::vector<std::complex<double>> h; // row-major subcarriers x antennas

    std::complex<double>& at(int n, int t) { return h[static_cast<std::size_t>(n) * antennas + t]; }
    const std::complex<double>& at(int n, int t) const { return h[static_cast<std::size_t>(n) * antennas + t]; }
};

ChannelMatrix assemble_channel(const std::vector<PathComponent>& paths, const ArrayConfig& array,
                               const OfdmConfig& ofdm);

struct DatasetConfig {
    TraceConfig trace;
    ArrayConfig array;
    OfdmConfig ofdm;
    int samples_per_scene = 200;
    std::uint64_t seed = 0;
    int threads = 1;
    int max_oversampling = 100;
    std::uint64_t sample_index_offset = 0; // lets extra draws for a scene avoid reusing positions
    double ue_margin = 0.1;                // keep UEs this far from walls and region edges
};

struct ChannelRecord {
    std::uint32_t scene_id = 0;
    Vec3 ue_position{};
    std::vector<std::complex<float>> h; // subcarriers x antennas, as stored on disk
};

struct ChannelDataset {
    int subcarriers = 0;
    int antennas = 0;
    double center_freq = 0.0;
    double bandwidth = 0.0;
    std::vector<ChannelRecord> records;

    ChannelMatrix matrix(std::size_t i) const;
};

/// Deterministic in cfg.seed regardless of cfg.threads. Every record is
/// derived from hash(seed, scene_id, sample_index).
ChannelDataset generate_dataset(const std::vector<Scene>& scenes, const DatasetConfig& cfg);

// "ACNDS" u16 version, u64 count, u32 N'c, u32 Nt, f64 freq, f64 bandwidth;
// records: u32 scene_id, 3 x f64 position, N'c*Nt interleaved f32 (re, im).
void write_dataset(const std::string& path, const ChannelDataset& ds);
ChannelDataset read_dataset(const std::string& path);

} // namespace csifb
