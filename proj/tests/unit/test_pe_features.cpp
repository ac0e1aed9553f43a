#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "oracles.hpp"
#include "rsmooth/error.hpp"
#include "rsmooth/pe_features.hpp"
#include "rsmooth/rng.hpp"

using namespace rsmooth;

namespace {

bool has_warning(const PEMetadata& m, std::string_view w) {
  return std::find(m.parse_warnings.begin(), m.parse_warnings.end(), w) != m.parse_warnings.end();
}

double sum(const auto& a) { return std::accumulate(a.begin(), a.end(), 0.0); }

}  // namespace

TEST_CASE("parse_pe on empty input") {
  const auto m = parse_pe(std::span<const std::uint8_t>{});
  CHECK_FALSE(m.is_pe);
  REQUIRE(m.parse_warnings.size() == 1);
  CHECK(m.parse_warnings[0] == "no MZ magic");
}

TEST_CASE("parse_pe reads the minimal fixture") {
  const auto f = oracle::minimal_pe();
  const auto m = parse_pe(f.bytes);
  CHECK(m.is_pe);
  CHECK(m.parse_warnings.empty());
  CHECK(m.machine == 0x14c);
  CHECK(m.timestamp == 0x5f000000u);
  CHECK(m.num_sections == 1);
  REQUIRE(m.sections.size() == 1);
  CHECK(m.sections[0].name == ".text");
  CHECK(m.sections[0].raw_size == 0x200);
  CHECK(m.entry_point_rva == 0x1000);
  CHECK(m.image_base == 0x400000);
  CHECK(m.subsystem == 2);
  CHECK(m.dll_characteristics == 0x8140);
  CHECK(m.sections[0].entropy ==
        doctest::Approx(oracle::brute_entropy(f.bytes.data() + 0x200, 0x200)).epsilon(1e-12));
}

TEST_CASE("parse_pe reads imports by name and ordinal") {
  const auto f = oracle::minimal_pe(true);
  const auto m = parse_pe(f.bytes);
  CHECK(m.parse_warnings.empty());
  REQUIRE(m.imports.size() == 2);
  CHECK(m.imports[0].dll_name == "KERNEL32.dll");
  CHECK(m.imports[0].function_name == "CreateFileA");
  CHECK(m.imports[1].function_name == "#7");
}

TEST_CASE("parse_pe degradations are warnings") {
  auto f = oracle::minimal_pe();
  SUBCASE("e_lfanew past end") {
    oracle::put32(f.bytes, 0x3c, 0x10000);
    const auto m = parse_pe(f.bytes);
    CHECK_FALSE(m.is_pe);
    CHECK(has_warning(m, "e_lfanew out of bounds"));
  }
  SUBCASE("bad signature") {
    f.bytes[0x40] = 'X';
    const auto m = parse_pe(f.bytes);
    CHECK_FALSE(m.is_pe);
    CHECK(has_warning(m, "no PE signature"));
  }
  SUBCASE("truncated DOS header") {
    f.bytes.resize(0x20);
    CHECK(has_warning(parse_pe(f.bytes), "truncated DOS header"));
  }
  SUBCASE("truncated section data") {
    f.bytes.resize(0x300);
    const auto m = parse_pe(f.bytes);
    CHECK(m.is_pe);
    CHECK(m.num_sections == 1);
    CHECK(has_warning(m, "truncated section data: .text"));
  }
  SUBCASE("truncated section table") {
    f.bytes.resize(0x44 + 20 + 224 + 10);
    const auto m = parse_pe(f.bytes);
    CHECK(m.is_pe);
    CHECK(m.num_sections == 0);
    CHECK(has_warning(m, "truncated section table"));
  }
}

TEST_CASE("parse_pe survives random and mutated inputs") {
  Stream s(5);
  const auto base = oracle::minimal_pe(true).bytes;
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<std::uint8_t> b;
    if (trial % 2 == 0) {
      b = base;
      const auto flips = 1 + s.below(16);
      for (std::uint64_t k = 0; k < flips; ++k) b[s.below(b.size())] = static_cast<std::uint8_t>(s.below(256));
      b.resize(s.below(b.size() + 1));
    } else {
      b.resize(s.below(4096));
      for (auto& v : b) v = static_cast<std::uint8_t>(s.below(256));
      if (b.size() > 2) b[0] = 'M', b[1] = 'Z';
    }
    const auto m = parse_pe(b);
    for (const auto& sec : m.sections) CHECK((sec.entropy >= 0.0 && sec.entropy <= 8.0));
    if (!m.is_pe) CHECK(m.sections.empty());
    const auto fv = extract(RawBinary{b, "fuzz"});
    REQUIRE(fv.values.size() == kDefaultDim);
    CHECK(std::all_of(fv.values.begin(), fv.values.end(), [](double v) { return std::isfinite(v); }));
  }
}

TEST_CASE("byte_histogram") {
  std::vector<std::uint8_t> all(256);
  std::iota(all.begin(), all.end(), 0);
  const auto h = byte_histogram(all);
  CHECK(std::all_of(h.begin(), h.end(), [](double v) { return v == 1.0 / 256; }));
  const std::vector<std::uint8_t> few{0, 0, 0, 1};
  const auto g = byte_histogram(few);
  CHECK(g[0] == 0.75);
  CHECK(g[1] == 0.25);
  CHECK(sum(g) == 1.0);
  CHECK(sum(byte_histogram({})) == 0.0);
}

TEST_CASE("byte_entropy_histogram") {
  SUBCASE("zero bytes") {
    const std::vector<std::uint8_t> z(4096, 0);
    const auto h = byte_entropy_histogram(z);
    CHECK(h[0] == 1.0);
    CHECK(sum(h) == 1.0);
  }
  SUBCASE("empty") { CHECK(sum(byte_entropy_histogram({})) == 0.0); }
  SUBCASE("cycling values against brute-force windows") {
    std::vector<std::uint8_t> c(4096);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = static_cast<std::uint8_t>(i & 0xff);
    std::array<double, 256> expect{};
    double total = 0.0;
    for (std::size_t start = 0; start + 2048 <= c.size(); start += 1024) {
      const double h = oracle::brute_entropy(c.data() + start, 2048);
      const auto row = std::min<std::size_t>(15, static_cast<std::size_t>(h * 2.0));
      for (std::size_t i = start; i < start + 2048; ++i) expect[row * 16 + (c[i] >> 4)] += 1.0;
      total += 2048;
    }
    const auto h = byte_entropy_histogram(c);
    for (std::size_t i = 0; i < 256; ++i) CHECK(h[i] == doctest::Approx(expect[i] / total));
    for (std::size_t v = 0; v < 16; ++v) CHECK(h[15 * 16 + v] == doctest::Approx(1.0 / 16));
  }
  SUBCASE("short input is one window") {
    const std::vector<std::uint8_t> s{1, 2, 3, 250};
    const auto h = byte_entropy_histogram(s);
    CHECK(h[4 * 16 + 0] == 0.75);
    CHECK(h[4 * 16 + 15] == 0.25);
  }
  CHECK_THROWS_AS(byte_entropy_histogram(std::vector<std::uint8_t>{1}, 0, 1), ConfigError);
}

TEST_CASE("string_features") {
  const std::string text = "MZ\x01hello\x02http://x.org\x03" "abc";
  const std::vector<std::uint8_t> b(text.begin(), text.end());
  const auto s = string_features(b);
  const double n = static_cast<double>(b.size());
  CHECK(s[0] == doctest::Approx(2.0 / n));
  CHECK(s[1] == doctest::Approx((5.0 + 12.0) / 2.0));
  CHECK(s[2] == doctest::Approx(1.0 / n));
  CHECK(s[3] == doctest::Approx(1.0 / n));
  std::vector<std::uint8_t> printable;
  for (char c : std::string("hellohttp://x.org")) printable.push_back(static_cast<std::uint8_t>(c));
  CHECK(s[4] == doctest::Approx(oracle::brute_entropy(printable.data(), printable.size())));
}

TEST_CASE("extract on the fixture matches independently computed segments") {
  const auto f = oracle::minimal_pe(true);
  const auto fv = extract(RawBinary{f.bytes, "fixture"});
  REQUIRE(fv.values.size() == 629);
  CHECK(fv.layout_id == "pe629");
  const auto& L = default_layout();
  const auto* hdr = L.find("header");
  const auto* sec = L.find("sections");
  const auto* imp = L.find("imports");
  REQUIRE(hdr);
  REQUIRE(sec);
  REQUIRE(imp);
  CHECK(fv.values[hdr->offset + 0] == doctest::Approx(std::log2(1.0 + f.bytes.size())));
  CHECK(fv.values[hdr->offset + 3] == 2.0 / 64);
  CHECK(fv.values[hdr->offset + 12] == 1.0);
  const double text_h = oracle::brute_entropy(f.bytes.data() + 0x200, 0x200);
  const double idata_h = oracle::brute_entropy(f.bytes.data() + 0x400, 0x200);
  std::array<double, 32> sec_expect{};
  sec_expect[oracle::fnv1a64_ref(".text") % 32] += text_h / 8;
  sec_expect[oracle::fnv1a64_ref(".idata") % 32] += idata_h / 8;
  for (std::size_t i = 0; i < 32; ++i) {
    CHECK(fv.values[sec->offset + i] == doctest::Approx(sec_expect[i]));
  }
  std::array<double, 64> imp_expect{};
  imp_expect[oracle::fnv1a64_ref("kernel32.dll:createfilea") % 64] += 1.0 / 3;
  imp_expect[oracle::fnv1a64_ref("kernel32.dll:#7") % 64] += 1.0 / 3;
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(fv.values[imp->offset + i] == doctest::Approx(imp_expect[i]));
  }
  CHECK(extract(RawBinary{f.bytes, "again"}).values == fv.values);
}

TEST_CASE("extract on empty and non-PE input") {
  const auto e = extract(RawBinary{{}, "empty"});
  CHECK(std::all_of(e.values.begin(), e.values.end(), [](double v) { return v == 0.0; }));
  const std::vector<std::uint8_t> junk(100, 'A');
  const auto j = extract(RawBinary{junk, "junk"});
  const auto* hdr = default_layout().find("header");
  for (std::size_t i = hdr->offset; i < 629; ++i) CHECK(j.values[i] == 0.0);
  CHECK(j.values[65] == 1.0);
}

TEST_CASE("section order does not change structural features") {
  auto f = oracle::minimal_pe(true);
  auto g = f;
  const std::size_t table = 0x44 + 20 + 224;
  std::swap_ranges(g.bytes.begin() + table, g.bytes.begin() + table + 40,
                   g.bytes.begin() + table + 40);
  const auto a = extract(RawBinary{f.bytes, "a"}).values;
  const auto b = extract(RawBinary{g.bytes, "b"}).values;
  const auto& L = default_layout();
  for (const char* seg : {"byte_histogram", "header", "sections", "imports"}) {
    const auto* s = L.find(seg);
    for (std::size_t i = s->offset; i < s->offset + s->length; ++i) CHECK(a[i] == b[i]);
  }
}

TEST_CASE("layout registry") {
  LayoutRegistry reg;
  CHECK(reg.contains("pe629"));
  CHECK(reg.get("pe629").total_dim == 629);
  FeatureLayout small{"tiny", {{"header", 0, 16}, {"imports", 16, 64}}, 80};
  reg.add(small);
  const auto back = LayoutRegistry::from_json(reg.to_json());
  CHECK(back.get("tiny").total_dim == 80);
  const auto fv = extract(RawBinary{oracle::minimal_pe().bytes, "x"}, back.get("tiny"));
  CHECK(fv.values.size() == 80);
  CHECK(fv.values[12] == 1.0);
  CHECK_THROWS_AS(reg.add(FeatureLayout{"bad", {{"header", 0, 15}}, 15}), ConfigError);
  CHECK_THROWS_AS(reg.add(FeatureLayout{"gap", {{"header", 1, 16}}, 17}), ConfigError);
  CHECK_THROWS_AS(reg.get("nope"), ConfigError);
}
