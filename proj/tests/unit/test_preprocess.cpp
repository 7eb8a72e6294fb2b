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
#include "oracles/dft.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>

using namespace csifb;
using Catch::Approx;

namespace {

ChannelMatrix random_channel(int rows, int cols, std::mt19937_64& rng)
{
    std::normal_distribution<double> n;
    ChannelMatrix ch;
    ch.subcarriers = rows;
    ch.antennas = cols;
    ch.h.resize(static_cast<std::size_t>(rows) * cols);
    for (auto& v : ch.h)
        v = {n(rng), n(rng)};
    return ch;
}

ChannelMatrix single_path(double delay, int subcarriers = 64)
{
    PathComponent p;
    p.gain = {1.0, 0.0};
    p.delay = delay;
    OfdmConfig o;
    o.subcarriers = subcarriers;
    return assemble_channel({p}, ArrayConfig{}, o);
}

AngularDelayCsi csi_from(std::vector<double> v, int nc, int nt)
{
    AngularDelayCsi c;
    c.nc = nc;
    c.nt = nt;
    c.h = std::move(v);
    return c;
}

} // namespace

TEST_CASE("transform matches the naive two-dimensional DFT")
{
    std::mt19937_64 rng(1);
    for (auto [r, c] : {std::pair{8, 4}, std::pair{16, 8}, std::pair{5, 3}}) {
        const auto ch = random_channel(r, c, rng);
        ComplexMatrix h(r, c);
        h.v = ch.h;
        const auto got = AngularDelayTransform(r, c).forward(h);
        const auto want = oracle::dft2_rows_fwd_cols_inv(ch.h, r, c);
        for (std::size_t i = 0; i < want.size(); ++i)
            CHECK(std::abs(got.v[i] - want[i]) < 1e-12);
    }
}

TEST_CASE("transform is unitary and invertible")
{
    std::mt19937_64 rng(2);
    const AngularDelayTransform tf(64, 8);
    for (int k = 0; k < 200; ++k) {
        const auto ch = random_channel(64, 8, rng);
        ComplexMatrix h(64, 8);
        h.v = ch.h;
        const auto f = tf.forward(h);
        CHECK(f.frobenius_norm() == Approx(h.frobenius_norm()).epsilon(1e-12));
        const auto back = tf.inverse(f);
        double err = 0;
        for (std::size_t i = 0; i < h.v.size(); ++i)
            err += std::norm(back.v[i] - h.v[i]);
        CHECK(std::sqrt(err) <= 1e-12 * h.frobenius_norm());
    }
}

TEST_CASE("constant channel concentrates in one bin")
{
    ChannelMatrix ch;
    ch.subcarriers = 64;
    ch.antennas = 8;
    ch.h.assign(64 * 8, {1.0, 0.0});
    const auto a = to_angular_delay(ch, 16);
    CHECK(a.at(0, 0, 0) == Approx(std::sqrt(64.0 * 8.0)));
    for (int p = 0; p < 2; ++p)
        for (int r = 0; r < 16; ++r)
            for (int c = 0; c < 8; ++c)
                if (p != 0 || r != 0 || c != 0)
                    CHECK(std::abs(a.at(p, r, c)) < 1e-9);
}

TEST_CASE("a path delayed by k/BW puts its energy in delay row k")
{
    const OfdmConfig o;
    for (int k : {1, 3, 7}) {
        const auto ch = single_path(k / o.bandwidth);
        const auto a = to_angular_delay(ch, 16);
        double row = 0, total = 0;
        for (int p = 0; p < 2; ++p)
            for (int r = 0; r < 16; ++r)
                for (int c = 0; c < 8; ++c) {
                    const double e = a.at(p, r, c) * a.at(p, r, c);
                    total += e;
                    if (r == k)
                        row += e;
                }
        CHECK(row >= 0.95 * total);
    }
}

TEST_CASE("truncation beyond the subcarrier count is rejected")
{
    CHECK_THROWS_AS(to_angular_delay(single_path(0.0, 16), 32), ValidationError);
}

TEST_CASE("min-max normalization")
{
    std::vector<AngularDelayCsi> unit{csi_from({0.0, 0.25, 0.5, 1.0}, 1, 1)};
    auto [same, p] = normalize(unit);
    CHECK(same[0].h == unit[0].h);
    CHECK(p.min == 0.0);
    CHECK(p.max == 1.0);

    std::vector<AngularDelayCsi> flat{csi_from({0.3, 0.3}, 1, 1)};
    CHECK_THROWS_AS(normalize(flat), ValidationError);
    CHECK_THROWS_AS(fit_minmax(std::span<const AngularDelayCsi>{}), ValidationError);

    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 5.0);
    std::vector<AngularDelayCsi> batch;
    for (int i = 0; i < 10; ++i) {
        std::vector<double> v(8);
        for (auto& x : v)
            x = n(rng);
        batch.push_back(csi_from(v, 2, 2));
    }
    auto [norm, q] = normalize(batch);
    for (const auto& c : norm)
        for (double v : c.h) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    const auto back = denormalize(norm, q);
    for (std::size_t i = 0; i < batch.size(); ++i)
        for (std::size_t j = 0; j < 8; ++j)
            CHECK(back[i].h[j] == Approx(batch[i].h[j]).epsilon(1e-12));
}

TEST_CASE("power normalization records the scale")
{
    auto c = csi_from({3.0, 4.0}, 1, 1);
    normalize_power(c);
    CHECK(c.h[0] == Approx(0.6));
    CHECK(c.norm_scale == Approx(5.0));
    auto z = csi_from({0.0, 0.0}, 1, 1);
    CHECK_THROWS_AS(normalize_power(z), DataError);
}

TEST_CASE("compression ratios")
{
    const auto cr = CompressionRatio::parse("1/16");
    CHECK(cr.num == 1);
    CHECK(cr.den == 16);
    CHECK(cr.codeword_length(256) == 16);
    CHECK(CompressionRatio::parse("1/24").codeword_length(256) == 11);
    CHECK(cr.tag() == "1-16");
    CHECK_THROWS_AS(CompressionRatio::parse("abc"), ValidationError);
    CHECK_THROWS_AS(CompressionRatio::parse("3/2"), ValidationError);
    CHECK_THROWS_AS(CompressionRatio::parse("1/0"), ValidationError);
}

TEST_CASE("projection matches a naive product and is linear")
{
    const auto a = ProjectionMatrix::gaussian(16, 256, 7);
    const auto a2 = ProjectionMatrix::gaussian(16, 256, 7);
    CHECK(a.a == a2.a);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u;
    std::vector<double> x(256), y(256);
    for (auto& v : x)
        v = u(rng);
    for (auto& v : y)
        v = u(rng);
    const auto s = project(x, a);
    for (int i = 0; i < 16; ++i) {
        double acc = 0;
        for (int j = 0; j < 256; ++j)
            acc += a.a[static_cast<std::size_t>(i) * 256 + j] * x[static_cast<std::size_t>(j)];
        CHECK(s[static_cast<std::size_t>(i)] == Approx(acc).epsilon(1e-12));
    }
    std::vector<double> mix(256);
    for (int j = 0; j < 256; ++j)
        mix[j] = 2.0 * x[j] - 0.5 * y[j];
    const auto sm = project(mix, a);
    const auto sy = project(y, a);
    for (int i = 0; i < 16; ++i)
        CHECK(sm[i] == Approx(2.0 * s[i] - 0.5 * sy[i]).margin(1e-12));
    CHECK(project(std::vector<double>(256, 0.0), a) == std::vector<double>(16, 0.0));
    CHECK_THROWS_AS(project(std::vector<double>(100, 0.0), a), DimensionError);
}

TEST_CASE("identity projection passes vec(h) through")
{
    const auto c = csi_from({1, 2, 3, 4, 5, 6, 7, 8}, 2, 2);
    const auto w = compress(c, ProjectionMatrix::identity(8));
    CHECK(w.s == c.h);
}

TEST_CASE("projection entries have variance 1/M")
{
    const auto a = ProjectionMatrix::gaussian(64, 1024, 11);
    double mean = 0, sq = 0;
    for (double v : a.a) {
        mean += v;
        sq += v * v;
    }
    mean /= a.a.size();
    sq /= a.a.size();
    CHECK(std::abs(mean) < 0.005);
    CHECK(sq == Approx(1.0 / 64).epsilon(0.03));
}

TEST_CASE("preprocess pipeline and file round trip")
{
    ChannelDataset raw;
    raw.subcarriers = 32;
    raw.antennas = 8;
    raw.center_freq = 5.8e9;
    raw.bandwidth = 20e6;
    std::mt19937_64 rng(6);
    for (int i = 0; i < 12; ++i) {
        const auto ch = random_channel(32, 8, rng);
        ChannelRecord r;
        r.scene_id = static_cast<std::uint32_t>(i / 4);
        for (const auto& v : ch.h)
            r.h.emplace_back(static_cast<float>(v.real()), static_cast<float>(v.imag()));
        raw.records.push_back(r);
    }
    PreprocessOptions opt;
    opt.nc = 8;
    opt.cr = CompressionRatio::parse("1/8");
    opt.projection_seed = 3;
    opt.fit_scene_ids = {0, 1};
    const auto pp = preprocess(raw, opt);
    CHECK(pp.n() == 128);
    CHECK(pp.m == 16);
    REQUIRE(pp.records.size() == 12);
    // training records lie in [0, 1]; the rest may fall slightly outside
    for (int i = 0; i < 8; ++i)
        for (double v : pp.records[i].h) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    // denormalized record recovers the truncated angular-delay CSI
    const ChannelMatrix ch0 = raw.matrix(0);
    const auto ad = to_angular_delay(ch0, 8);
    const auto den = pp.denormalized(pp.records[0].h, 0);
    for (std::size_t j = 0; j < den.size(); ++j)
        CHECK(den[j] == Approx(ad.h[j]).margin(1e-9));

    const auto path = (std::filesystem::temp_directory_path() / "csifb_test.pp").string();
    write_preprocessed(path, pp);
    const auto back = read_preprocessed(path);
    CHECK(back.m == pp.m);
    CHECK(back.cr == pp.cr);
    CHECK(back.norm.min == pp.norm.min);
    CHECK(back.records[7].h == pp.records[7].h);
    CHECK(back.records[7].s == pp.records[7].s);

    PreprocessOptions again = opt;
    again.fixed_norm = pp.norm;
    again.fit_scene_ids.clear();
    const auto reused = preprocess(raw, again);
    CHECK(reused.records[11].h == pp.records[11].h);
    std::filesystem::remove(path);
}
