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
#include "csifb/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace csifb {

double ComplexMatrix::frobenius_norm() const
{
    double acc = 0.0;
    for (const auto& z : v)
        acc += std::norm(z);
    return std::sqrt(acc);
}

ComplexMatrix dft_matrix(int size)
{
    ComplexMatrix f(size, size);
    const double scale = 1.0 / std::sqrt(static_cast<double>(size));
    for (int k = 0; k < size; ++k)
        for (int n = 0; n < size; ++n) {
            const long idx = (static_cast<long>(k) * n) % size;
            f(k, n) = std::polar(scale, -2 * kPi * static_cast<double>(idx) / size);
        }
    return f;
}

AngularDelayTransform::AngularDelayTransform(int subcarriers, int antennas)
    : fd_(dft_matrix(subcarriers)), fa_(dft_matrix(antennas))
{
}

ComplexMatrix AngularDelayTransform::forward(const ComplexMatrix& h) const
{
    if (h.rows != fd_.rows || h.cols != fa_.rows)
        throw DimensionError("angular-delay transform: matrix shape does not match transform");
    const int R = h.rows, C = h.cols;
    // tmp = H * F_a^H ; out = F_d * tmp
    ComplexMatrix tmp(R, C), out(R, C);
    for (int r = 0; r < R; ++r)
        for (int a = 0; a < C; ++a) {
            std::complex<double> acc{};
            for (int t = 0; t < C; ++t)
                acc += h(r, t) * std::conj(fa_(a, t));
            tmp(r, a) = acc;
        }
    for (int k = 0; k < R; ++k)
        for (int n = 0; n < R; ++n) {
            const auto f = fd_(k, n);
            for (int a = 0; a < C; ++a)
                out(k, a) += f * tmp(n, a);
        }
    return out;
}

ComplexMatrix AngularDelayTransform::inverse(const ComplexMatrix& h) const
{
    if (h.rows != fd_.rows || h.cols != fa_.rows)
        throw DimensionError("angular-delay transform: matrix shape does not match transform");
    const int R = h.rows, C = h.cols;
    ComplexMatrix tmp(R, C), out(R, C);
    for (int r = 0; r < R; ++r)
        for (int t = 0; t < C; ++t) {
            std::complex<double> acc{};
            for (int a = 0; a < C; ++a)
                acc += h(r, a) * fa_(a, t);
            tmp(r, t) = acc;
        }
    for (int n = 0; n < R; ++n)
        for (int k = 0; k < R; ++k) {
            const auto f = std::conj(fd_(k, n));
            for (int t = 0; t < C; ++t)
                out(n, t) += f * tmp(k, t);
        }
    return out;
}

AngularDelayCsi to_angular_delay(const ChannelMatrix& ch, int nc, const AngularDelayTransform& tf)
{
    if (nc < 1 || nc > ch.subcarriers)
        throw ValidationError("to_angular_delay: Nc must lie in [1, N'c]");
    ComplexMatrix h(ch.subcarriers, ch.antennas);
    h.v = ch.h;
    const ComplexMatrix full = tf.forward(h);
    AngularDelayCsi out;
    out.nc = nc;
    out.nt = ch.antennas;
    out.h.resize(static_cast<std::size_t>(out.size()));
    for (int r = 0; r < nc; ++r)
        for (int c = 0; c < ch.antennas; ++c) {
            out.at(0, r, c) = full(r, c).real();
            out.at(1, r, c) = full(r, c).imag();
        }
    return out;
}

AngularDelayCsi to_angular_delay(const ChannelMatrix& ch, int nc)
{
    return to_angular_delay(ch, nc, AngularDelayTransform(ch.subcarriers, ch.antennas));
}

void normalize_power(AngularDelayCsi& csi)
{
    double e = 0.0;
    for (double v : csi.h)
        e += v * v;
    const double norm = std::sqrt(e);
    if (!(norm > 0.0) || !std::isfinite(norm))
        throw DataError("normalize_power: CSI sample has zero or non-finite energy");
    for (double& v : csi.h)
        v /= norm;
    csi.norm_scale *= norm;
}

MinMaxParams fit_minmax(std::span<const AngularDelayCsi> batch)
{
    if (batch.empty())
        throw ValidationError("normalize: empty batch");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& c : batch)
        for (double v : c.h) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (!(hi > lo))
        throw ValidationError("normalize: degenerate batch (max == min)");
    return {lo, hi};
}

void apply_minmax(AngularDelayCsi& csi, const MinMaxParams& p)
{
    const double span = p.max - p.min;
    for (double& v : csi.h)
        v = (v - p.min) / span;
}

double invert_minmax(double v, const MinMaxParams& p)
{
    return v * (p.max - p.min) + p.min;
}

void invert_minmax(AngularDelayCsi& csi, const MinMaxParams& p)
{
    for (double& v : csi.h)
        v = invert_minmax(v, p);
}

std::pair<std::vector<AngularDelayCsi>, MinMaxParams> normalize(std::span<const AngularDelayCsi> batch)
{
    const MinMaxParams p = fit_minmax(batch);
    std::vector<AngularDelayCsi> out(batch.begin(), batch.end());
    for (auto& c : out)
        apply_minmax(c, p);
    return {std::move(out), p};
}

std::vector<AngularDelayCsi> denormalize(std::span<const AngularDelayCsi> batch, const MinMaxParams& p)
{
    std::vector<AngularDelayCsi> out(batch.begin(), batch.end());
    for (auto& c : out)
        invert_minmax(c, p);
    return out;
}

CompressionRatio CompressionRatio::parse(const std::string& text)
{
    const auto slash = text.find('/');
    try {
        CompressionRatio cr;
        if (slash == std::string::npos) {
            cr.num = 1;
            cr.den = std::stoi(text);
        } else {
            std::size_t used = 0;
            cr.num = std::stoi(text.substr(0, slash), &used);
            if (used != slash)
                throw std::invalid_argument("num");
            const std::string den = text.substr(slash + 1);
            cr.den = std::stoi(den, &used);
            if (used != den.size())
                throw std::invalid_argument("den");
        }
        if (cr.num < 1 || cr.den < 1 || cr.num >= cr.den)
            throw std::invalid_argument("range");
        return cr;
    } catch (const std::logic_error&) {
        throw ValidationError("invalid compression ratio '" + text + "' (expected e.g. 1/16)");
    }
}

int CompressionRatio::codeword_length(int n) const
{
    const long m = std::lround(static_cast<double>(n) * num / den);
    return static_cast<int>(std::max(1L, m));
}

ProjectionMatrix ProjectionMatrix::gaussian(int m, int n, std::uint64_t seed)
{
    if (m < 1 || n < 1)
        throw ValidationError("projection matrix dimensions must be positive");
    ProjectionMatrix p;
    p.m = m;
    p.n = n;
    p.seed = seed;
    p.a.resize(static_cast<std::size_t>(m) * n);
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(n)));
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(m)));
    for (double& v : p.a)
        v = dist(rng);
    return p;
}

ProjectionMatrix ProjectionMatrix::identity(int n)
{
    ProjectionMatrix p;
    p.m = n;
    p.n = n;
    p.a.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        p.a[static_cast<std::size_t>(i) * n + i] = 1.0;
    return p;
}

std::vector<double> project(std::span<const double> x, const ProjectionMatrix& a)
{
    if (static_cast<int>(x.size()) != a.n)
        throw DimensionError("compress: CSI length " + std::to_string(x.size()) + " does not match projection width " +
                             std::to_string(a.n));
    std::vector<double> s(static_cast<std::size_t>(a.m), 0.0);
    for (int i = 0; i < a.m; ++i) {
        const double* row = a.a.data() + static_cast<std::size_t>(i) * a.n;
        double acc = 0.0;
        for (int j = 0; j < a.n; ++j)
            acc += row[j] * x[static_cast<std::size_t>(j)];
        s[static_cast<std::size_t>(i)] = acc;
    }
    return s;
}

Codeword compress(const AngularDelayCsi& h, const ProjectionMatrix& a)
{
    Codeword c;
    c.s = project(h.h, a);
    c.cr = {a.m, a.n};
    return c;
}

std::vector<double> PreprocessedDataset::denormalized(std::span<const double> h_norm, std::size_t i) const
{
    std::vector<double> out(h_norm.size());
    const double scale = records.at(i).norm_scale;
    for (std::size_t k = 0; k < h_norm.size(); ++k)
        out[k] = invert_minmax(h_norm[k], norm) * scale;
    return out;
}

PreprocessedDataset preprocess(const ChannelDataset& raw, const PreprocessOptions& opt)
{
    if (opt.nc > raw.subcarriers)
        throw ValidationError("preprocess: nc (" + std::to_string(opt.nc) + ") exceeds subcarriers (" +
                              std::to_string(raw.subcarriers) + ")");
    if (raw.records.empty())
        throw DataError("preprocess: empty dataset");

    const AngularDelayTransform tf(raw.subcarriers, raw.antennas);
    std::vector<AngularDelayCsi> csi;
    csi.reserve(raw.records.size());
    for (std::size_t i = 0; i < raw.records.size(); ++i) {
        csi.push_back(to_angular_delay(raw.matrix(i), opt.nc, tf));
        normalize_power(csi.back());
    }

    MinMaxParams norm;
    if (opt.fixed_norm) {
        norm = *opt.fixed_norm;
    } else {
        std::vector<AngularDelayCsi> fit;
        for (std::size_t i = 0; i < csi.size(); ++i)
            if (opt.fit_scene_ids.empty() || opt.fit_scene_ids.contains(raw.records[i].scene_id))
                fit.push_back(csi[i]);
        if (fit.empty())
            throw DataError("preprocess: no records from the normalization-fit scenes");
        norm = fit_minmax(fit);
    }

    PreprocessedDataset out;
    out.nc = opt.nc;
    out.nt = raw.antennas;
    out.cr = opt.cr;
    out.m = opt.cr.codeword_length(out.n());
    if (out.m >= out.n())
        throw ValidationError("preprocess: codeword length must be smaller than N");
    out.projection_seed = opt.projection_seed;
    out.norm = norm;
    const ProjectionMatrix a = ProjectionMatrix::gaussian(out.m, out.n(), opt.projection_seed);
    out.records.reserve(csi.size());
    for (std::size_t i = 0; i < csi.size(); ++i) {
        apply_minmax(csi[i], norm);
        PreprocessedRecord r;
        r.scene_id = raw.records[i].scene_id;
        r.ue_position = raw.records[i].ue_position;
        r.norm_scale = csi[i].norm_scale;
        r.s = project(csi[i].h, a);
        r.h = std::move(csi[i].h);
        out.records.push_back(std::move(r));
    }
    return out;
}

namespace {
constexpr std::string_view kPreprocessedMagic = "ACNPP";
constexpr std::uint16_t kPreprocessedVersion = 1;
} // namespace

void write_preprocessed(const std::string& path, const PreprocessedDataset& ds)
{
    BinaryWriter w(path);
    w.put_magic(kPreprocessedMagic);
    w.put<std::uint16_t>(kPreprocessedVersion);
    w.put<std::uint64_t>(ds.records.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.nc));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.nt));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.m));
    w.put<std::int32_t>(ds.cr.num);
    w.put<std::int32_t>(ds.cr.den);
    w.put<std::uint64_t>(ds.projection_seed);
    w.put<double>(ds.norm.min);
    w.put<double>(ds.norm.max);
    for (const auto& r : ds.records) {
        if (static_cast<int>(r.h.size()) != ds.n() || static_cast<int>(r.s.size()) != ds.m)
            throw DimensionError("write_preprocessed: record size does not match header");
        w.put<std::uint32_t>(r.scene_id);
        w.put<double>(r.ue_position.x);
        w.put<double>(r.ue_position.y);
        w.put<double>(r.ue_position.z);
        w.put<double>(r.norm_scale);
        w.put_array(r.h.data(), r.h.size());
        w.put_array(r.s.data(), r.s.size());
    }
    w.finish();
}

PreprocessedDataset read_preprocessed(const std::string& path)
{
    BinaryReader r(path);
    r.expect_magic(kPreprocessedMagic);
    if (const auto v = r.get<std::uint16_t>(); v != kPreprocessedVersion)
        throw DataError("unsupported preprocessed-dataset version " + std::to_string(v) + " in " + path);
    PreprocessedDataset ds;
    const auto count = r.get<std::uint64_t>();
    ds.nc = static_cast<int>(r.get<std::uint32_t>());
    ds.nt = static_cast<int>(r.get<std::uint32_t>());
    ds.m = static_cast<int>(r.get<std::uint32_t>());
    ds.cr.num = r.get<std::int32_t>();
    ds.cr.den = r.get<std::int32_t>();
    ds.projection_seed = r.get<std::uint64_t>();
    ds.norm.min = r.get<double>();
    ds.norm.max = r.get<double>();
    if (ds.nc < 1 || ds.nt < 1 || ds.m < 1 || ds.cr.den < 1 || count > (1ull << 32))
        throw DataError("corrupt preprocessed-dataset header in " + path);
    ds.records.resize(count);
    for (auto& rec : ds.records) {
        rec.scene_id = r.get<std::uint32_t>();
        rec.ue_position.x = r.get<double>();
        rec.ue_position.y = r.get<double>();
        rec.ue_position.z = r.get<double>();
        rec.norm_scale = r.get<double>();
        rec.h.resize(static_cast<std::size_t>(ds.n()));
        rec.s.resize(static_cast<std::size_t>(ds.m));
        r.get_array(rec.h.data(), rec.h.size());
        r.get_array(rec.s.data(), rec.s.size());
    }
    return ds;
}

} // namespace csifb
