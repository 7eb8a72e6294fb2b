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
#include "csifb/common.hpp"

#include <complex>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace csifb {

struct ComplexMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<std::complex<double>> v; // row-major

    ComplexMatrix() = default;
    ComplexMatrix(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c) {}

    std::complex<double>& operator()(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    const std::complex<double>& operator()(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
    double frobenius_norm() const;
};

/// Unitary DFT matrix F[k][n] = exp(-j 2 pi k n / size) / sqrt(size).
ComplexMatrix dft_matrix(int size);

/// Precomputed delay/angle DFT pair for one (N'c, Nt) shape.
class AngularDelayTransform {
public:
    AngularDelayTransform(int subcarriers, int antennas);

    /// F_d * H~ * F_a^H (full, untruncated).
    ComplexMatrix forward(const ComplexMatrix& h_tilde) const;
    /// F_d^H * H * F_a.
    ComplexMatrix inverse(const ComplexMatrix& h) const;

    int subcarriers() const { return fd_.rows; }
    int antennas() const { return fa_.rows; }

private:
    ComplexMatrix fd_;
    ComplexMatrix fa_;
};

/// Truncated angular-delay CSI as a real 2 x Nc x Nt array, plane 0 real and
/// plane 1 imaginary. vec() order is plane, then delay row, then antenna.
struct AngularDelayCsi {
    int nc = 0;
    int nt = 0;
    std::vector<double> h;
    double norm_scale = 1.0;

    int size() const { return 2 * nc * nt; }
    double& at(int plane, int row, int col) { return h[(static_cast<std::size_t>(plane) * nc + row) * nt + col]; }
    double at(int plane, int row, int col) const { return h[(static_cast<std::size_t>(plane) * nc + row) * nt + col]; }
};

AngularDelayCsi to_angular_delay(const ChannelMatrix& ch, int nc);
AngularDelayCsi to_angular_delay(const ChannelMatrix& ch, int nc, const AngularDelayTransform& tf);

/// Divides by the Frobenius norm and records it in norm_scale.
void normalize_power(AngularDelayCsi& csi);

struct MinMaxParams {
    double min = 0.0;
    double max = 1.0;
};

/// Global min/max over the batch; throws ValidationError on an empty or constant batch.
MinMaxParams fit_minmax(std::span<const AngularDelayCsi> batch);
void apply_minmax(AngularDelayCsi& csi, const MinMaxParams& p);
void invert_minmax(AngularDelayCsi& csi, const MinMaxParams& p);
double invert_minmax(double v, const MinMaxParams& p);

/// Fits on the whole batch and returns the normalized copy.
std::pair<std::vector<AngularDelayCsi>, MinMaxParams> normalize(std::span<const AngularDelayCsi> batch);
std::vector<AngularDelayCsi> denormalize(std::span<const AngularDelayCsi> batch, const MinMaxParams& p);

struct CompressionRatio {
    int num = 1;
    int den = 16;

    static CompressionRatio parse(const std::string& text); // "1/16"
    double value() const { return static_cast<double>(num) / den; }
    /// M = round(N * gamma), at least 1.
    int codeword_length(int n) const;
    std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
    std::string tag() const { return std::to_string(num) + "-" + std::to_string(den); }
    friend bool operator==(const CompressionRatio&, const CompressionRatio&) = default;
};

struct ProjectionMatrix {
    int m = 0;
    int n = 0;
    std::uint64_t seed = 0;
    std::vector<double> a; // row-major m x n

    /// Entries i.i.d. N(0, 1/m), fully determined by (m, n, seed).
    static ProjectionMatrix gaussian(int m, int n, std::uint64_t seed);
    static ProjectionMatrix identity(int n);
    double effective_cr() const { return static_cast<double>(m) / n; }
};

struct Codeword {
    std::vector<double> s;
    CompressionRatio cr;
    std::uint32_t scene_id = 0;
};

Codeword compress(const AngularDelayCsi& h, const ProjectionMatrix& a);
/// Raw form used by the dataset pipeline: s = A * x.
std::vector<double> project(std::span<const double> x, const ProjectionMatrix& a);

struct PreprocessedRecord {
    std::uint32_t scene_id = 0;
    Vec3 ue_position{};
    double norm_scale = 1.0;
    std::vector<double> h; // normalized, length N
    std::vector<double> s; // codeword, length M
};

struct PreprocessedDataset {
    int nc = 0;
    int nt = 0;
    int m = 0;
    CompressionRatio cr;
    std::uint64_t projection_seed = 0;
    MinMaxParams norm;
    std::vector<PreprocessedRecord> records;

    int n() const { return 2 * nc * nt; }
    /// Denormalized angular-delay CSI for a normalized vector belonging to record i.
    std::vector<double> denormalized(std::span<const double> h_norm, std::size_t i) const;
};

struct PreprocessOptions {
    int nc = 16;
    CompressionRatio cr;
    std::uint64_t projection_seed = 0;
    std::optional<MinMaxParams> fixed_norm;   // reuse instead of fitting
    std::set<std::uint32_t> fit_scene_ids;    // training split used for fitting; empty = all records
};

/// Angular-delay transform, truncation, per-sample power scaling, global
/// min-max normalization and random projection for every record.
PreprocessedDataset preprocess(const ChannelDataset& raw, const PreprocessOptions& opt);

// "ACNPP" u16 version, u64 count, u32 Nc, u32 Nt, u32 M, i32 cr num, i32 cr den,
// u64 projection seed, f64 norm min, f64 norm max; records: u32 scene_id,
// 3 x f64 position, f64 norm_scale, N x f64 h, M x f64 s.
void write_preprocessed(const std::string& path, const PreprocessedDataset& ds);
PreprocessedDataset read_preprocessed(const std::string& path);

} // namespace csifb
