#include <string>

#include <doctest.h>

#include "nnkg/error.hpp"
#include "nnkg/util.hpp"
#include "support/tmpdir.hpp"

using namespace nnkg;

TEST_CASE("fnv1a matches the reference vectors") {
  CHECK(fnv1a(std::string("")) == 0xcbf29ce484222325ull);
  CHECK(fnv1a(std::string("a")) == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a(std::string("foobar")) == 0x85944171f73967e8ull);
}

TEST_CASE("split keeps empty fields") {
  CHECK(split("a,b,c", ',') == std::vector<std::string>{"a", "b", "c"});
  CHECK(split("", ',') == std::vector<std::string>{""});
  CHECK(split("a,,b", ',') == std::vector<std::string>{"a", "", "b"});
  CHECK(split("a,", ',') == std::vector<std::string>{"a", ""});
}

TEST_CASE("strip trims surrounding whitespace only") {
  CHECK(strip("  x y\t\r\n") == "x y");
  CHECK(strip("") == "");
  CHECK(strip(" \t ") == "");
}

TEST_CASE("format_float is fixed-width decimal") {
  CHECK(format_float(0.5, 4) == "0.5000");
  CHECK(format_float(-1.25, 2) == "-1.25");
  CHECK(format_float(2.0 / 3.0, 6) == "0.666667");
}

TEST_CASE("file round-trip preserves bytes") {
  test::TmpDir dir;
  const std::string payload("bin\0ary\n\r data", 14);
  write_file(dir / "f.bin", payload);
  CHECK(read_file(dir / "f.bin") == payload);
  CHECK_THROWS_AS(read_file(dir / "missing.bin"), DataError);
}

TEST_CASE("little-endian packing round-trips through ByteReader") {
  std::string buf;
  put_u32(buf, 0x11223344u);
  put_u64(buf, 0xdeadbeefcafef00dull);
  CHECK(buf.size() == 12);
  CHECK(static_cast<unsigned char>(buf[0]) == 0x44);  // low byte first

  ByteReader in(buf, "test buffer");
  CHECK(in.u32() == 0x11223344u);
  CHECK_FALSE(in.done());
  CHECK(in.u64() == 0xdeadbeefcafef00dull);
  CHECK(in.done());
}

TEST_CASE("ByteReader reports truncation with context") {
  std::string buf;
  put_u32(buf, 5);
  ByteReader in(buf, "tiny file");
  in.u32();
  CHECK_THROWS_WITH_AS(in.u32(), "truncated tiny file", DataError);
  CHECK_THROWS_AS(ByteReader(buf, "x").bytes(5), DataError);
}
