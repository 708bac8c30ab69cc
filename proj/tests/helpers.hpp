#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "doctest.h"
#include "kdiff/error.hpp"
#include "kdiff/rng.hpp"
#include "kdiff/tensor.hpp"

namespace kdiff::test {

// Runs `fn` and checks that it throws kdiff::Error of the given kind.
template <class Fn>
void expect_error(ErrorKind kind, Fn&& fn) {
  bool thrown = false;
  try {
    fn();
  } catch (const Error& e) {
    thrown = true;
    CHECK_MESSAGE(e.kind() == kind, "got " << to_string(e.kind()) << ": " << e.what());
  }
  CHECK_MESSAGE(thrown, "expected " << to_string(kind));
}

inline Tensor random_tensor(const Shape& shape, Rng& rng, double stddev = 1.0) {
  return rng.normal_tensor(shape, stddev);
}

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Fresh scratch directory under the build tree's temp area.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("kdiff-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace kdiff::test
