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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

using namespace csifb;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

TEST_CASE("NMSE of exact and zero reconstructions")
{
    const std::vector<std::vector<double>> truth{{1.0, -2.0, 0.5}, {0.0, 3.0, 4.0}};
    const auto exact = nmse(truth, truth);
    CHECK(exact.linear == 0.0);
    CHECK(exact.db == -std::numeric_limits<double>::infinity());
    const std::vector<std::vector<double>> zero{{0, 0, 0}, {0, 0, 0}};
    const auto z = nmse(zero, truth);
    CHECK(z.linear == 1.0);
    CHECK(z.db == 0.0);
}

TEST_CASE("NMSE averages per-sample ratios")
{
    const std::vector<std::vector<double>> truth{{1.0, 0.0}, {0.0, 10.0}};
    const std::vector<std::vector<double>> rec{{0.9, 0.0}, {0.0, 5.0}};
    // (0.01 / 1 + 25 / 100) / 2
    CHECK(nmse(rec, truth).linear == Approx(0.13));
    CHECK(nmse(rec, truth).db == Approx(10 * std::log10(0.13)));
    CHECK(to_db(0.1) == Approx(-10.0));
    CHECK_THROWS_AS(nmse({{1.0}}, {{0.0}}), DataError);
    CHECK_THROWS_AS(nmse({{1.0, 2.0}}, {{1.0}}), DimensionError);
    CHECK_THROWS_AS(nmse({}, {}), DataError);
}

TEST_CASE("results CSV round trip")
{
    const auto path = (fs::temp_directory_path() / "csifb_test_results.csv").string();
    std::vector<MetricsRecord> rs{
        {"general", {1, 16}, 16.0 / 256, 1, "test", 0.125, to_db(0.125), 12.5},
        {"online(50)", {1, 24}, 11.0 / 256, 3, "test-online", 0.3, to_db(0.3), 0.75},
    };
    write_results_csv(path, rs);
    {
        std::ifstream f(path);
        std::string header;
        std::getline(f, header);
        CHECK(header == "method,cr_nominal,cr_effective,seed,split,nmse_linear,nmse_db,train_time_s");
    }
    const auto back = read_results_csv(path);
    REQUIRE(back.size() == 2);
    CHECK(back[1].method == "online(50)");
    CHECK(back[1].cr == CompressionRatio{1, 24});
    CHECK(back[1].cr_effective == rs[1].cr_effective);
    CHECK(back[1].nmse_db == rs[1].nmse_db);
    CHECK(back[0].train_time_s == 12.5);
    fs::remove(path);
}

TEST_CASE("median over seeds")
{
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0}) == 2.5);
    CHECK_THROWS_AS(median({}), DataError);
    std::vector<MetricsRecord> rs;
    for (int s = 1; s <= 3; ++s)
        rs.push_back({"general", {1, 16}, 0.0625, static_cast<std::uint64_t>(s), "test", 0.0, -1.0 * s, 0.0});
    rs.push_back({"general", {1, 16}, 0.0625, 9, "val", 0.0, -50.0, 0.0});
    CHECK(median_db(rs, "general", {1, 16}, "test") == -2.0);
    CHECK_THROWS_AS(median_db(rs, "adapcsinet", {1, 16}, "test"), DataError);
}

TEST_CASE("audit flags test scenes and misuse of online data")
{
    SplitSpec split;
    split.train_envs = 40;
    split.val_envs = 8;
    split.test_envs = 8; // test scenes 48..55, online scene 48
    GradientAudit ok;
    const std::vector<std::uint32_t> train_ids{0, 5, 39};
    const std::vector<std::size_t> idx{1, 2, 3};
    ok.record("general", "main", train_ids, idx);
    const std::vector<std::uint32_t> online_scene{48};
    const std::vector<std::size_t> pool{100, 150};
    ok.record("online(50)", "online", online_scene, pool);
    CHECK(audit_violations(ok, split).empty());

    GradientAudit leak = ok;
    const std::vector<std::uint32_t> test_scene{50};
    leak.record("adapcsinet", "main", test_scene, idx);
    const auto v = audit_violations(leak, split);
    REQUIRE(v.size() == 1);
    CHECK_THAT(v[0], ContainsSubstring("test scene 50"));

    GradientAudit wrong_method;
    wrong_method.record("general", "online", online_scene, pool);
    CHECK(audit_violations(wrong_method, split).size() == 1);

    GradientAudit holdout;
    const std::vector<std::size_t> held{5, 120};
    holdout.record("online(50)", "online", online_scene, held);
    CHECK_THAT(audit_violations(holdout, split).at(0), ContainsSubstring("held-out"));
}

TEST_CASE("masked hashes ignore timing fields only")
{
    const auto root = fs::temp_directory_path() / "csifb_test_mask";
    fs::remove_all(root);
    fs::create_directories(root / "sub");
    auto write = [](const fs::path& p, const std::string& text) { std::ofstream(p) << text; };
    write(root / "a.json", R"({"x": 1, "wall_clock": "2026-01-01", "nested": {"train_time_s": 3.5}})");
    write(root / "sub" / "r.csv", "method,train_time_s,nmse_db\ngeneral,1.5,-3\n");
    write(root / "b.bin", "abc");
    const auto h1 = masked_output_hashes(root);
    CHECK(h1.size() == 3);
    CHECK(h1.contains("sub/r.csv"));
    write(root / "a.json", R"({"x": 1, "wall_clock": "2026-02-02", "nested": {"train_time_s": 9.0}})");
    write(root / "sub" / "r.csv", "method,train_time_s,nmse_db\ngeneral,7.25,-3\n");
    CHECK(masked_output_hashes(root) == h1);
    write(root / "sub" / "r.csv", "method,train_time_s,nmse_db\ngeneral,7.25,-4\n");
    CHECK(masked_output_hashes(root) != h1);
    fs::remove_all(root);
}

TEST_CASE("manifest hashes of masked files are masked too")
{
    const fs::path root = fs::temp_directory_path() / "csifb_test_mask_manifest";
    fs::remove_all(root);
    auto write = [](const fs::path& p, const std::string& text) {
        fs::create_directories(p.parent_path());
        std::ofstream(p) << text;
    };
    auto manifest = [&](const std::string& csv_hash, const std::string& bin_hash) {
        write(root / "manifests" / "eval.json",
              R"({"outputs": {"results/r.csv": ")" + csv_hash + R"(", "ck/m.ck": ")" + bin_hash + R"("}})");
    };
    write(root / "results" / "r.csv", "method,train_time_s\ngeneral,1.5\n");
    write(root / "ck" / "m.ck", "abc");
    manifest("raw1", "bin");
    const auto h1 = masked_output_hashes(root);
    write(root / "results" / "r.csv", "method,train_time_s\ngeneral,2.5\n");
    manifest("raw2", "bin");
    CHECK(masked_output_hashes(root) == h1);
    // binary artifacts keep their recorded hash
    manifest("raw2", "bin2");
    CHECK(masked_output_hashes(root) != h1);
    fs::remove_all(root);
}

TEST_CASE("artifact names")
{
    CHECK(Pipeline::general_name({1, 16}, 1) == "general_cr1-16_s1");
    CHECK(Pipeline::hyper_name({1, 8}, 2) == "hyper_cr1-8_s2");
    CHECK(Pipeline::online_name(50, {1, 16}, 3) == "online_k50_cr1-16_s3");
    CHECK(Pipeline::switch_name({1, 32}, 1) == "switch-los_cr1-32_s1");
}

TEST_CASE("stages refuse to run without their inputs")
{
    ExperimentConfig cfg;
    cfg.output_dir = (fs::temp_directory_path() / "csifb_test_empty_run").string();
    fs::remove_all(cfg.output_dir);
    Pipeline p(cfg);
    CHECK_THROWS_WITH(p.gen_csi(), ContainsSubstring("gen-scenes"));
    CHECK_THROWS_WITH(p.preprocess(), ContainsSubstring("gen-csi"));
    CHECK_THROWS_WITH(p.train_step1(), ContainsSubstring("preprocess"));
    CHECK_THROWS_WITH(p.train_step2(), ContainsSubstring("first"));
    CHECK_THROWS_WITH(p.eval(), ContainsSubstring("first"));
    CHECK_THROWS_WITH(p.report(), ContainsSubstring("eval"));
    CHECK_THROWS_AS(p.train_online(), DataError);
    fs::remove_all(cfg.output_dir);
}
