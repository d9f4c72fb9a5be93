// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#include "knnmt/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace knnmt {

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed: " + path.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void ByteWriter::save(const std::filesystem::path& path) const { write_file(path, buf_); }

void ByteReader::expect_magic(std::string_view magic, std::string_view what) {
  const auto at = offset();
  if (remaining() < magic.size() || bytes(magic.size()) != magic)
    throw FormatError("not a " + std::string(what) + " file (bad magic)", at);
}

}  // namespace knnmt
