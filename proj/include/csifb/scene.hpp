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

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace csifb {

struct WallSegment {
    Vec2 a;
    Vec2 b;
    std::string material = "wood";
    double rel_permittivity = 1.99;
    double conductivity = 0.012; // S/m

    double length() const;
    bool vertical() const { return a.x == b.x; }
    bool horizontal() const { return a.y == b.y; }
    friend bool operator==(const WallSegment&, const WallSegment&) = default;
};

struct Scene {
    double width = 10.0;
    double depth = 10.0;
    double height = 3.0;
    std::vector<WallSegment> walls;
    Vec3 bs_position{1.0, 1.0, 2.9};
    std::vector<Vec2> ue_region; // counter-clockwise polygon
    double ue_height = 0.8;
    int scene_id = 0;
    std::uint64_t rng_seed = 0;

    friend bool operator==(const Scene&, const Scene&) = default;
};

/// Knobs for the randomized indoor layout generator.
///
/// One "partition" wall is anchored on an outer wall and leaves a doorway at
/// its free end; the UE region is the rectangle enclosed by the partition, the
/// outer walls and the doorway line, on the side away from the BS. Additional
/// walls are free-standing obstacles outside the UE region.
struct SceneParams {
    double width = 10.0;
    double depth = 10.0;
    double height = 3.0;
    int min_walls = 1;
    int max_walls = 3;
    double min_wall_length = 3.0;
    double max_wall_length = 8.0;
    double lattice = 0.5;
    double min_ue_area = 4.0;
    Vec3 bs_position{1.0, 1.0, 2.9};
    double ue_height = 0.8;
    double bs_clearance = 0.5;
    int max_attempts = 1000;
    std::string material = "wood";
    double rel_permittivity = 1.99;
    double conductivity = 0.012;
};

class GenerationError : public DataError {
public:
    GenerationError(const std::string& what, int attempts) : DataError(what), attempts_(attempts) {}
    int attempts() const { return attempts_; }

private:
    int attempts_;
};

Scene generate_scene(std::uint64_t seed, const SceneParams& params, int scene_id = 0);

/// Empty when every Scene invariant holds; otherwise one message per violation.
std::vector<std::string> scene_violations(const Scene& scene);

// Polygon helpers (plan view).
double polygon_area(const std::vector<Vec2>& poly);
bool point_in_polygon(const std::vector<Vec2>& poly, Vec2 p); // boundary counts as inside

struct SceneGraph {
    int size = 0;           // G
    double cell_size = 0.0; // meters per cell
    int scene_id = 0;
    std::vector<std::uint8_t> grid; // row-major, row index follows y, column follows x

    std::uint8_t at(int row, int col) const { return grid[static_cast<std::size_t>(row) * size + col]; }
    friend bool operator==(const SceneGraph&, const SceneGraph&) = default;
};

inline constexpr std::uint8_t kCodeFree = 0;
inline constexpr std::uint8_t kCodeWall = 1;
inline constexpr std::uint8_t kCodeBoundary = 2;

/// Rasterizes internal walls (code 1) and the UE-region perimeter (code 2).
/// Walls overwrite boundary cells. Requires g >= 8 and axis-aligned walls.
SceneGraph rasterize(const Scene& scene, int g);

/// Maps codes {0,1,2} to {0.0,0.5,1.0}.
std::vector<double> scene_graph_to_model_input(const SceneGraph& m);

// Scene-graph binary file: "ACNSG", u16 version, u32 G, f64 cell_size, G*G bytes.
void write_scene_graph(const std::string& path, const SceneGraph& m);
SceneGraph read_scene_graph(const std::string& path, int scene_id = 0);

struct SceneSet {
    SceneParams params;
    int grid_size = 32;
    std::vector<Scene> scenes;
    std::vector<SceneGraph> graphs;
};

/// Writes one scene_NNNN.sg per scene plus manifest.json into `dir`.
void write_scene_set(const std::string& dir, const SceneSet& set);
SceneSet read_scene_set(const std::string& dir);

/// Generates `count` scenes with seeds derived from `base_seed`, ids 0..count-1.
/// A scene failing `accept` is redrawn from derive_seed(base_seed, id, redraw).
SceneSet generate_scene_set(int count, std::uint64_t base_seed, const SceneParams& params, int grid_size,
                            const std::function<bool(const Scene&)>& accept = {});

} // namespace csifb
