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

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace csifb {

inline constexpr double kSpeedOfLight = 299792458.0;
inline constexpr double kPi = 3.14159265358979323846;

// Exception hierarchy. The CLI maps each category onto a process exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed configuration or inconsistent parameters (exit code 2).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Missing, corrupt or insufficient data (exit code 3).
class DataError : public Error {
public:
    using Error::Error;
};

/// Non-finite values during training or inference (exit code 4).
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// Shape or dimension mismatch between tensors, files or checkpoints.
class DimensionError : public DataError {
public:
    using DataError::DataError;
};

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Vec2&, const Vec2&) = default;
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    friend bool operator==(const Vec3&, const Vec3&) = default;
};

// splitmix64 finalizer; used to derive independent per-item seeds.
inline std::uint64_t mix_seed(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0)
{
    return mix_seed(mix_seed(mix_seed(a) ^ b) ^ c);
}

// Little binary stream helpers shared by the on-disk formats. All formats are
// written in host byte order (little-endian on every supported target).
class BinaryWriter {
public:
    explicit BinaryWriter(const std::string& path);

    template <typename T>
    void put(const T& v)
    {
        static_assert(std::is_trivially_copyable_v<T>);
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }

    template <typename T>
    void put_array(const T* data, std::size_t count)
    {
        out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(sizeof(T) * count));
    }

    void put_magic(std::string_view magic) { out_.write(magic.data(), static_cast<std::streamsize>(magic.size())); }
    void put_string(const std::string& s);
    void finish();

private:
    std::string path_;
    std::ofstream out_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::string& path);

    template <typename T>
    T get()
    {
        static_assert(std::is_trivially_copyable_v<T>);
        T v{};
        read_raw(&v, sizeof(T));
        return v;
    }

    template <typename T>
    void get_array(T* data, std::size_t count)
    {
        read_raw(data, sizeof(T) * count);
    }

    /// Throws DataError unless the next bytes equal `magic`.
    void expect_magic(std::string_view magic);
    std::string get_string();
    bool at_end();
    const std::string& path() const { return path_; }

private:
    void read_raw(void* dst, std::size_t bytes);

    std::string path_;
    std::ifstream in_;
};

/// Hex SHA-256 of a file's contents.
std::string sha256_file(const std::string& path);
std::string sha256_bytes(std::string_view bytes);

} // namespace csifb
