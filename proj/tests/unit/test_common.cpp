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
#include "csifb/common.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

using namespace csifb;

TEST_CASE("derived seeds are distinct and stable")
{
    std::set<std::uint64_t> seen;
    for (std::uint64_t a = 0; a < 20; ++a)
        for (std::uint64_t b = 0; b < 20; ++b)
            seen.insert(derive_seed(a, b));
    CHECK(seen.size() == 400);
    CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
    CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
}

TEST_CASE("sha256 of known strings")
{
    CHECK(sha256_bytes("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_bytes("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("binary writer and reader round trip")
{
    const auto path = std::filesystem::temp_directory_path() / "csifb_test_bin.bin";
    {
        BinaryWriter w(path.string());
        w.put_magic("ABCDE");
        w.put<std::uint32_t>(42);
        w.put<double>(-1.5);
        w.put_string("hello");
        const double arr[3] = {1, 2, 3};
        w.put_array(arr, 3);
        w.finish();
    }
    BinaryReader r(path.string());
    r.expect_magic("ABCDE");
    CHECK(r.get<std::uint32_t>() == 42);
    CHECK(r.get<double>() == -1.5);
    CHECK(r.get_string() == "hello");
    double arr[3];
    r.get_array(arr, 3);
    CHECK(arr[2] == 3.0);
    CHECK(r.at_end());
    CHECK_THROWS_AS(r.get<double>(), DataError);
    CHECK(sha256_file(path.string()).size() == 64);
    std::filesystem::remove(path);
}

TEST_CASE("wrong magic and missing files are data errors")
{
    const auto path = std::filesystem::temp_directory_path() / "csifb_test_magic.bin";
    {
        BinaryWriter w(path.string());
        w.put_magic("XXXXX");
        w.finish();
    }
    BinaryReader r(path.string());
    CHECK_THROWS_AS(r.expect_magic("ACNDS"), DataError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(BinaryReader("/nonexistent/csifb/file"), DataError);
}

TEST_CASE("dimension errors are data errors")
{
    CHECK_THROWS_AS(throw DimensionError("x"), DataError);
}
