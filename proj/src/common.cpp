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

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <iterator>
#include <memory>

namespace csifb {

BinaryWriter::BinaryWriter(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc)
{
    if (!out_)
        throw DataError("cannot open '" + path + "' for writing");
}

void BinaryWriter::put_string(const std::string& s)
{
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void BinaryWriter::finish()
{
    out_.flush();
    if (!out_)
        throw DataError("write to '" + path_ + "' failed");
    out_.close();
}

BinaryReader::BinaryReader(const std::string& path) : path_(path), in_(path, std::ios::binary)
{
    if (!in_)
        throw DataError("cannot open '" + path + "' for reading");
}

void BinaryReader::read_raw(void* dst, std::size_t bytes)
{
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    if (static_cast<std::size_t>(in_.gcount()) != bytes)
        throw DataError("unexpected end of file in '" + path_ + "'");
}

void BinaryReader::expect_magic(std::string_view magic)
{
    std::string got(magic.size(), '\0');
    read_raw(got.data(), got.size());
    if (got != magic)
        throw DataError("'" + path_ + "' is not a " + std::string(magic) + " file");
}

std::string BinaryReader::get_string()
{
    const auto n = get<std::uint32_t>();
    if (n > (1u << 28))
        throw DataError("corrupt string length in '" + path_ + "'");
    std::string s(n, '\0');
    read_raw(s.data(), n);
    return s;
}

bool BinaryReader::at_end()
{
    return in_.peek() == std::char_traits<char>::eof();
}

namespace {

std::string to_hex(const unsigned char* d, unsigned len)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    s.reserve(2 * len);
    for (unsigned i = 0; i < len; ++i) {
        s.push_back(digits[d[i] >> 4]);
        s.push_back(digits[d[i] & 0xf]);
    }
    return s;
}

struct MdCtxDeleter {
    void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
};

} // namespace

std::string sha256_bytes(std::string_view bytes)
{
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned len = 0;
    EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr);
    return to_hex(md.data(), len);
}

std::string sha256_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot hash '" + path + "': not readable");
    std::unique_ptr<EVP_MD_CTX, MdCtxDeleter> ctx(EVP_MD_CTX_new());
    EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0)
            EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned len = 0;
    EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
    return to_hex(md.data(), len);
}

} // namespace csifb
