#pragma once

// Lenient static PE parsing and fixed-layout feature extraction.
//
// The default layout ("pe629") is the concatenation of
//   byte_histogram          256  normalized byte value counts
//   byte_entropy_histogram  256  16x16 (window entropy bin, value nibble) grid
//   strings                   5  printable-run statistics
//   header                   16  scaled COFF/optional header fields
//   sections                 32  fnv1a64(name) % 32 buckets of entropy / 8
//   imports                  64  fnv1a64("dll:function") % 64 buckets
// for a total of 629 values.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rsmooth {

struct RawBinary {
  std::vector<std::uint8_t> bytes;
  std::string source_id;
};

RawBinary read_binary_file(const std::string& path);

struct SectionInfo {
  std::string name;  // at most 8 characters
  std::uint32_t virtual_size = 0;
  std::uint32_t virtual_address = 0;
  std::uint32_t raw_size = 0;
  std::uint32_t raw_offset = 0;
  std::uint32_t characteristics = 0;
  double entropy = 0.0;  // bits, in [0, 8]
};

struct ImportEntry {
  std::string dll_name;
  std::string function_name;  // "#<ordinal>" for ordinal imports
};

struct PEMetadata {
  bool is_pe = false;
  std::uint16_t machine = 0;
  std::uint32_t timestamp = 0;
  std::size_t num_sections = 0;
  std::uint32_t entry_point_rva = 0;
  std::uint64_t image_base = 0;
  std::uint16_t subsystem = 0;
  std::uint16_t dll_characteristics = 0;
  std::uint32_t size_of_code = 0;
  std::uint32_t size_of_headers = 0;
  std::vector<SectionInfo> sections;
  std::vector<ImportEntry> imports;
  std::size_t exports_count = 0;
  std::vector<std::string> parse_warnings;
};

// Never throws on malformed content; degradations land in parse_warnings.
PEMetadata parse_pe(std::span<const std::uint8_t> bytes);
inline PEMetadata parse_pe(const RawBinary& bin) { return parse_pe(bin.bytes); }

double shannon_entropy(std::span<const std::uint8_t> bytes);

std::array<double, 256> byte_histogram(std::span<const std::uint8_t> bytes);

// Windows of `window` bytes every `step` bytes; an input shorter than one
// window is treated as a single window. Trailing bytes past the last full
// window are not counted.
std::array<double, 256> byte_entropy_histogram(std::span<const std::uint8_t> bytes,
                                               std::size_t window = 2048,
                                               std::size_t step = 1024);

std::array<double, 5> string_features(std::span<const std::uint8_t> bytes);
std::array<double, 16> header_features(const PEMetadata& meta, std::size_t file_size);
std::array<double, 32> section_features(const PEMetadata& meta);
std::array<double, 64> import_features(const PEMetadata& meta);

struct LayoutSegment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
};

struct FeatureLayout {
  std::string layout_id;
  std::vector<LayoutSegment> segments;
  std::size_t total_dim = 0;

  // Throws ConfigError unless segments are contiguous from 0 and sum to total_dim.
  void validate() const;
  const LayoutSegment* find(std::string_view name) const;
};

inline constexpr std::string_view kDefaultLayoutId = "pe629";
inline constexpr std::size_t kDefaultDim = 629;

const FeatureLayout& default_layout();

// Layouts keyed by layout_id. A custom layout reorders or subsets the built-in
// segment families; each segment name must be a known family with its native
// length.
class LayoutRegistry {
 public:
  LayoutRegistry();

  void add(FeatureLayout layout);
  const FeatureLayout& get(std::string_view layout_id) const;
  bool contains(std::string_view layout_id) const;

  std::string to_json() const;
  static LayoutRegistry from_json(std::string_view text);

 private:
  std::map<std::string, FeatureLayout, std::less<>> layouts_;
};

struct FeatureVector {
  std::vector<double> values;
  std::string layout_id;
  std::string source_id;
};

FeatureVector extract(const RawBinary& bin, const FeatureLayout& layout = default_layout());

}  // namespace rsmooth
