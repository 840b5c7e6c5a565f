#include "aenc/tensor_file.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cstring>
#include <fstream>

using namespace aenc;
using testutil::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spew(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("tensor file golden bytes") {
  // [2 x 3] f32 tensor, values 1..6 row-major
  Mat m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  TempDir dir("tensor_golden");
  const auto path = dir.path() / "t.aenc";
  write_tensor(path, m);

  // layout: AENC | version 1 | dtype 1 | ndim 2 | u64 rows | u64 cols | payload
  const unsigned char expected[] = {
      'A', 'E', 'N', 'C', 1, 1, 2,
      2, 0, 0, 0, 0, 0, 0, 0,
      3, 0, 0, 0, 0, 0, 0, 0,
      0x00, 0x00, 0x80, 0x3f,   // 1.0f
      0x00, 0x00, 0x00, 0x40,   // 2.0f
      0x00, 0x00, 0x40, 0x40,   // 3.0f
      0x00, 0x00, 0x80, 0x40,   // 4.0f
      0x00, 0x00, 0xa0, 0x40,   // 5.0f
      0x00, 0x00, 0xc0, 0x40};  // 6.0f
  const std::string bytes = slurp(path);
  REQUIRE(bytes.size() == sizeof(expected));
  CHECK(std::memcmp(bytes.data(), expected, sizeof(expected)) == 0);

  const Mat back = read_tensor(path);
  CHECK(testutil::mats_equal(back, m));
}

TEST_CASE("tensor round trip is exact for f32-representable values") {
  Mat m = f32_round(testutil::random_mat(13, 7, 42));
  TempDir dir("tensor_rt");
  const auto path = dir.path() / "t.aenc";
  write_tensor(path, m);
  CHECK(testutil::mats_equal(read_tensor(path), m));
}

TEST_CASE("tensor reader rejects malformed files") {
  TempDir dir("tensor_bad");
  Mat m = Mat::Ones(10, 8);
  const auto good_path = dir.path() / "good.aenc";
  write_tensor(good_path, m);
  std::string good = slurp(good_path);

  SUBCASE("bad magic") {
    std::string bad = good;
    bad[0] = 'X';
    spew(dir.path() / "bad.aenc", bad);
    CHECK_THROWS_AS(read_tensor(dir.path() / "bad.aenc"), ValidationError);
  }
  SUBCASE("header says 10x8 but payload holds 70 floats") {
    std::string bad = good.substr(0, good.size() - 10 * sizeof(float));
    spew(dir.path() / "short.aenc", bad);
    CHECK_THROWS_AS(read_tensor(dir.path() / "short.aenc"), ValidationError);
  }
  SUBCASE("payload longer than header shape") {
    std::string bad = good + std::string(4, '\0');
    spew(dir.path() / "long.aenc", bad);
    CHECK_THROWS_AS(read_tensor(dir.path() / "long.aenc"), ValidationError);
  }
  SUBCASE("unsupported version") {
    std::string bad = good;
    bad[4] = 9;
    spew(dir.path() / "ver.aenc", bad);
    CHECK_THROWS_AS(read_tensor(dir.path() / "ver.aenc"), ValidationError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_tensor(dir.path() / "nope.aenc"), ValidationError);
  }
}

TEST_CASE("tensor reader accepts 1-D shapes as a row") {
  TempDir dir("tensor_1d");
  const unsigned char raw[] = {'A', 'E', 'N', 'C', 1, 1, 1,
                               2,   0,   0,   0,   0, 0, 0, 0,
                               0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x40};
  spew(dir.path() / "v.aenc",
       std::string(reinterpret_cast<const char*>(raw), sizeof(raw)));
  const Mat v = read_tensor(dir.path() / "v.aenc");
  CHECK(v.rows() == 1);
  CHECK(v.cols() == 2);
  CHECK(v(0, 0) == 1.0);
  CHECK(v(0, 1) == 2.0);
}

TEST_CASE("bundle round trip preserves header and tensors") {
  TensorBundle bundle;
  bundle.header = {{"kind", "test"}, {"note", 42}};
  bundle.add("alpha", f32_round(testutil::random_mat(3, 4, 1)));
  bundle.add("beta", f32_round(testutil::random_mat(1, 5, 2)));
  TempDir dir("bundle_rt");
  const auto path = dir.path() / "b.aenc";
  write_bundle(path, bundle);
  const TensorBundle back = read_bundle(path);
  CHECK(back.header == bundle.header);
  REQUIRE(back.tensors.size() == 2);
  CHECK(back.tensors[0].first == "alpha");
  CHECK(testutil::mats_equal(back.at("alpha"), bundle.at("alpha")));
  CHECK(testutil::mats_equal(back.at("beta"), bundle.at("beta")));
  CHECK(back.has("alpha"));
  CHECK(!back.has("gamma"));
  CHECK_THROWS_AS(back.at("gamma"), ValidationError);
}

TEST_CASE("bundle writes are byte-stable") {
  TensorBundle bundle;
  bundle.header = {{"b", 1}, {"a", 2}};
  bundle.add("t", Mat::Ones(2, 2));
  TempDir dir("bundle_det");
  write_bundle(dir.path() / "one.aenc", bundle);
  write_bundle(dir.path() / "two.aenc", bundle);
  CHECK(slurp(dir.path() / "one.aenc") == slurp(dir.path() / "two.aenc"));
}
