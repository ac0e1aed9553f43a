#include "rsmooth/pe_features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <optional>

#include <json.hpp>

#include "rsmooth/error.hpp"
#include "rsmooth/rng.hpp"

namespace rsmooth {

namespace {

constexpr std::uint16_t kOptionalMagicPe32 = 0x10b;
constexpr std::uint16_t kOptionalMagicPe32Plus = 0x20b;
constexpr std::size_t kCoffHeaderSize = 20;
constexpr std::size_t kSectionHeaderSize = 40;
constexpr std::size_t kImportDescriptorSize = 20;
constexpr std::size_t kMaxNameLength = 256;

// Bounds-checked little-endian reads over the raw file.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t size() const { return data_.size(); }

  bool has(std::size_t offset, std::size_t len) const {
    return offset <= data_.size() && len <= data_.size() - offset;
  }

  template <typename T>
  std::optional<T> read(std::size_t offset) const {
    if (!has(offset, sizeof(T))) {
      return std::nullopt;
    }
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<T>(data_[offset + i]) << (8 * i));
    }
    return v;
  }

  std::optional<std::string> c_string(std::size_t offset, std::size_t max_len) const {
    if (offset >= data_.size()) {
      return std::nullopt;
    }
    std::string out;
    for (std::size_t i = offset; i < data_.size() && out.size() < max_len; ++i) {
      if (data_[i] == 0) {
        return out;
      }
      out.push_back(static_cast<char>(data_[i]));
    }
    return out.size() == max_len ? std::optional<std::string>(out) : std::nullopt;
  }

  std::span<const std::uint8_t> slice(std::size_t offset, std::size_t len) const {
    if (offset >= data_.size()) {
      return {};
    }
    return data_.subspan(offset, std::min(len, data_.size() - offset));
  }

 private:
  std::span<const std::uint8_t> data_;
};

std::optional<std::size_t> rva_to_offset(const PEMetadata& meta, std::uint64_t rva) {
  for (const auto& s : meta.sections) {
    const std::uint64_t span = std::max(s.virtual_size, s.raw_size);
    if (rva >= s.virtual_address && rva < std::uint64_t{s.virtual_address} + span) {
      const std::uint64_t delta = rva - s.virtual_address;
      if (delta >= s.raw_size) {
        return std::nullopt;  // lives in zero-fill tail
      }
      return static_cast<std::size_t>(s.raw_offset + delta);
    }
  }
  if (rva < meta.size_of_headers) {
    return static_cast<std::size_t>(rva);
  }
  return std::nullopt;
}

void parse_imports(const ByteReader& r, PEMetadata& meta, std::uint32_t dir_rva,
                   bool pe32_plus) {
  auto desc_off = rva_to_offset(meta, dir_rva);
  if (!desc_off) {
    meta.parse_warnings.emplace_back("import directory not mapped");
    return;
  }
  // Work budget proportional to the file size keeps parsing linear even when
  // descriptors alias the same thunk arrays.
  std::size_t budget = r.size() / 4 + 64;
  const std::size_t thunk_size = pe32_plus ? 8 : 4;
  for (std::size_t off = *desc_off;; off += kImportDescriptorSize) {
    if (budget == 0) {
      meta.parse_warnings.emplace_back("import table budget exhausted");
      return;
    }
    --budget;
    if (!r.has(off, kImportDescriptorSize)) {
      meta.parse_warnings.emplace_back("truncated import directory");
      return;
    }
    const auto original_thunk = *r.read<std::uint32_t>(off);
    const auto name_rva = *r.read<std::uint32_t>(off + 12);
    const auto first_thunk = *r.read<std::uint32_t>(off + 16);
    if (original_thunk == 0 && name_rva == 0 && first_thunk == 0) {
      return;
    }
    std::string dll;
    if (auto name_off = rva_to_offset(meta, name_rva)) {
      if (auto s = r.c_string(*name_off, kMaxNameLength)) {
        dll = *s;
      }
    }
    if (dll.empty()) {
      meta.parse_warnings.emplace_back("unreadable import dll name");
    }
    const std::uint32_t thunk_rva = original_thunk != 0 ? original_thunk : first_thunk;
    auto thunk_off = rva_to_offset(meta, thunk_rva);
    if (!thunk_off) {
      meta.parse_warnings.emplace_back("import thunks not mapped");
      continue;
    }
    for (std::size_t t = *thunk_off;; t += thunk_size) {
      if (budget == 0) {
        meta.parse_warnings.emplace_back("import table budget exhausted");
        return;
      }
      --budget;
      std::uint64_t thunk = 0;
      bool ordinal = false;
      if (pe32_plus) {
        auto v = r.read<std::uint64_t>(t);
        if (!v) {
          meta.parse_warnings.emplace_back("truncated import thunks");
          break;
        }
        thunk = *v;
        ordinal = (thunk >> 63) != 0;
      } else {
        auto v = r.read<std::uint32_t>(t);
        if (!v) {
          meta.parse_warnings.emplace_back("truncated import thunks");
          break;
        }
        thunk = *v;
        ordinal = (thunk >> 31) != 0;
      }
      if (thunk == 0) {
        break;
      }
      ImportEntry entry{dll, {}};
      if (ordinal) {
        entry.function_name = "#" + std::to_string(thunk & 0xffff);
      } else {
        auto hint_off = rva_to_offset(meta, thunk & 0x7fffffffULL);
        std::optional<std::string> fn;
        if (hint_off) {
          fn = r.c_string(*hint_off + 2, kMaxNameLength);
        }
        if (!fn) {
          meta.parse_warnings.emplace_back("unreadable import name");
          continue;
        }
        entry.function_name = *fn;
      }
      meta.imports.push_back(std::move(entry));
    }
  }
}

void parse_exports(const ByteReader& r, PEMetadata& meta, std::uint32_t dir_rva) {
  auto off = rva_to_offset(meta, dir_rva);
  if (!off) {
    meta.parse_warnings.emplace_back("export directory not mapped");
    return;
  }
  auto names = r.read<std::uint32_t>(*off + 24);
  if (!names) {
    meta.parse_warnings.emplace_back("truncated export directory");
    return;
  }
  meta.exports_count = *names;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool printable(std::uint8_t b) { return b >= 0x20 && b <= 0x7e; }

std::size_t count_occurrences(std::span<const std::uint8_t> bytes, std::string_view needle) {
  if (bytes.size() < needle.size()) {
    return 0;
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i + needle.size() <= bytes.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), bytes.begin() + static_cast<std::ptrdiff_t>(i),
                   [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
      ++n;
    }
  }
  return n;
}

// Native length of each segment family.
std::size_t family_length(std::string_view name) {
  if (name == "byte_histogram" || name == "byte_entropy_histogram") return 256;
  if (name == "strings") return 5;
  if (name == "header") return 16;
  if (name == "sections") return 32;
  if (name == "imports") return 64;
  return 0;
}

}  // namespace

RawBinary read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open binary: " + path);
  }
  RawBinary bin;
  bin.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  bin.source_id = path;
  return bin;
}

PEMetadata parse_pe(std::span<const std::uint8_t> bytes) {
  PEMetadata meta;
  const ByteReader r(bytes);

  if (r.size() < 2 || bytes[0] != 'M' || bytes[1] != 'Z') {
    meta.parse_warnings.emplace_back("no MZ magic");
    return meta;
  }
  const auto e_lfanew = r.read<std::uint32_t>(0x3c);
  if (!e_lfanew) {
    meta.parse_warnings.emplace_back("truncated DOS header");
    return meta;
  }
  if (!r.has(*e_lfanew, 4)) {
    meta.parse_warnings.emplace_back("e_lfanew out of bounds");
    return meta;
  }
  const std::size_t pe_off = *e_lfanew;
  if (bytes[pe_off] != 'P' || bytes[pe_off + 1] != 'E' || bytes[pe_off + 2] != 0 ||
      bytes[pe_off + 3] != 0) {
    meta.parse_warnings.emplace_back("no PE signature");
    return meta;
  }
  meta.is_pe = true;

  const std::size_t coff = pe_off + 4;
  if (!r.has(coff, kCoffHeaderSize)) {
    meta.parse_warnings.emplace_back("truncated COFF header");
    return meta;
  }
  meta.machine = *r.read<std::uint16_t>(coff);
  const std::uint16_t declared_sections = *r.read<std::uint16_t>(coff + 2);
  meta.timestamp = *r.read<std::uint32_t>(coff + 4);
  const std::uint16_t optional_size = *r.read<std::uint16_t>(coff + 16);

  const std::size_t opt = coff + kCoffHeaderSize;
  bool pe32_plus = false;
  std::uint32_t export_rva = 0;
  std::uint32_t import_rva = 0;
  // Reads inside the optional header honour both the file end and the
  // declared optional header size.
  auto opt_read32 = [&](std::size_t rel) -> std::optional<std::uint32_t> {
    if (rel + 4 > optional_size) return std::nullopt;
    return r.read<std::uint32_t>(opt + rel);
  };
  auto opt_read16 = [&](std::size_t rel) -> std::optional<std::uint16_t> {
    if (rel + 2 > optional_size) return std::nullopt;
    return r.read<std::uint16_t>(opt + rel);
  };
  auto opt_read64 = [&](std::size_t rel) -> std::optional<std::uint64_t> {
    if (rel + 8 > optional_size) return std::nullopt;
    return r.read<std::uint64_t>(opt + rel);
  };

  if (optional_size > 0) {
    const auto magic = opt_read16(0);
    if (!magic) {
      meta.parse_warnings.emplace_back("truncated optional header");
    } else if (*magic != kOptionalMagicPe32 && *magic != kOptionalMagicPe32Plus) {
      meta.parse_warnings.emplace_back("unknown optional header magic");
    } else {
      pe32_plus = *magic == kOptionalMagicPe32Plus;
      bool truncated = false;
      auto take32 = [&](std::size_t rel, std::uint32_t& dst) {
        if (auto v = opt_read32(rel)) dst = *v; else truncated = true;
      };
      auto take16 = [&](std::size_t rel, std::uint16_t& dst) {
        if (auto v = opt_read16(rel)) dst = *v; else truncated = true;
      };
      take32(4, meta.size_of_code);
      take32(16, meta.entry_point_rva);
      if (pe32_plus) {
        if (auto v = opt_read64(24)) meta.image_base = *v; else truncated = true;
      } else {
        std::uint32_t base = 0;
        take32(28, base);
        meta.image_base = base;
      }
      take32(60, meta.size_of_headers);
      take16(68, meta.subsystem);
      take16(70, meta.dll_characteristics);
      const std::size_t dir_count_rel = pe32_plus ? 108 : 92;
      std::uint32_t dir_count = 0;
      take32(dir_count_rel, dir_count);
      const std::size_t dirs = dir_count_rel + 4;
      if (dir_count >= 1) take32(dirs, export_rva);
      if (dir_count >= 2) take32(dirs + 8, import_rva);
      if (truncated) {
        meta.parse_warnings.emplace_back("truncated optional header");
      }
    }
  }

  const std::size_t table = opt + optional_size;
  for (std::size_t i = 0; i < declared_sections; ++i) {
    const std::size_t off = table + i * kSectionHeaderSize;
    if (!r.has(off, kSectionHeaderSize)) {
      meta.parse_warnings.emplace_back("truncated section table");
      break;
    }
    SectionInfo s;
    for (std::size_t c = 0; c < 8 && bytes[off + c] != 0; ++c) {
      s.name.push_back(static_cast<char>(bytes[off + c]));
    }
    s.virtual_size = *r.read<std::uint32_t>(off + 8);
    s.virtual_address = *r.read<std::uint32_t>(off + 12);
    s.raw_size = *r.read<std::uint32_t>(off + 16);
    s.raw_offset = *r.read<std::uint32_t>(off + 20);
    s.characteristics = *r.read<std::uint32_t>(off + 36);
    const auto body = r.slice(s.raw_offset, s.raw_size);
    if (body.size() < s.raw_size) {
      meta.parse_warnings.emplace_back("truncated section data: " + s.name);
    }
    s.entropy = shannon_entropy(body);
    meta.sections.push_back(std::move(s));
  }
  meta.num_sections = meta.sections.size();

  if (import_rva != 0) {
    parse_imports(r, meta, import_rva, pe32_plus);
  }
  if (export_rva != 0) {
    parse_exports(r, meta, export_rva);
  }
  return meta;
}

double shannon_entropy(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) {
    return 0.0;
  }
  std::array<std::size_t, 256> counts{};
  for (auto b : bytes) {
    ++counts[b];
  }
  const double n = static_cast<double>(bytes.size());
  double h = 0.0;
  for (auto c : counts) {
    if (c != 0) {
      const double p = static_cast<double>(c) / n;
      h -= p * std::log2(p);
    }
  }
  return std::clamp(h, 0.0, 8.0);
}

std::array<double, 256> byte_histogram(std::span<const std::uint8_t> bytes) {
  std::array<double, 256> out{};
  if (bytes.empty()) {
    return out;
  }
  std::array<std::size_t, 256> counts{};
  for (auto b : bytes) {
    ++counts[b];
  }
  const double n = static_cast<double>(bytes.size());
  for (std::size_t i = 0; i < 256; ++i) {
    out[i] = static_cast<double>(counts[i]) / n;
  }
  return out;
}

std::array<double, 256> byte_entropy_histogram(std::span<const std::uint8_t> bytes,
                                               std::size_t window, std::size_t step) {
  if (window == 0 || step == 0) {
    throw ConfigError("byte_entropy_histogram: window and step must be positive");
  }
  std::array<double, 256> out{};
  if (bytes.empty()) {
    return out;
  }
  std::array<std::size_t, 256> grid{};
  auto accumulate = [&](std::span<const std::uint8_t> w) {
    const double h = shannon_entropy(w);
    const auto row = std::min<std::size_t>(15, static_cast<std::size_t>(h * 2.0));
    for (auto b : w) {
      ++grid[row * 16 + (b >> 4)];
    }
  };
  if (bytes.size() < window) {
    accumulate(bytes);
  } else {
    for (std::size_t start = 0; start + window <= bytes.size(); start += step) {
      accumulate(bytes.subspan(start, window));
    }
  }
  std::size_t total = 0;
  for (auto c : grid) total += c;
  for (std::size_t i = 0; i < 256; ++i) {
    out[i] = static_cast<double>(grid[i]) / static_cast<double>(total);
  }
  return out;
}

std::array<double, 5> string_features(std::span<const std::uint8_t> bytes) {
  std::array<double, 5> out{};
  if (bytes.empty()) {
    return out;
  }
  constexpr std::size_t kMinRun = 5;
  std::size_t runs = 0;
  std::size_t run_chars = 0;
  std::array<std::size_t, 96> char_counts{};
  std::size_t run_start = 0;
  auto close_run = [&](std::size_t end) {
    const std::size_t len = end - run_start;
    if (len >= kMinRun) {
      ++runs;
      run_chars += len;
      for (std::size_t i = run_start; i < end; ++i) {
        ++char_counts[bytes[i] - 0x20];
      }
    }
  };
  bool in_run = false;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (printable(bytes[i])) {
      if (!in_run) {
        in_run = true;
        run_start = i;
      }
    } else if (in_run) {
      close_run(i);
      in_run = false;
    }
  }
  if (in_run) {
    close_run(bytes.size());
  }
  const double size = static_cast<double>(bytes.size());
  out[0] = static_cast<double>(runs) / size;
  out[1] = runs == 0 ? 0.0 : static_cast<double>(run_chars) / static_cast<double>(runs);
  out[2] = static_cast<double>(count_occurrences(bytes, "http")) / size;
  out[3] = static_cast<double>(count_occurrences(bytes, "MZ")) / size;
  if (run_chars > 0) {
    double h = 0.0;
    for (auto c : char_counts) {
      if (c != 0) {
        const double p = static_cast<double>(c) / static_cast<double>(run_chars);
        h -= p * std::log2(p);
      }
    }
    out[4] = h;
  }
  return out;
}

std::array<double, 16> header_features(const PEMetadata& meta, std::size_t file_size) {
  std::array<double, 16> out{};
  if (!meta.is_pe) {
    return out;
  }
  constexpr double k2_16 = 65536.0;
  constexpr double k2_32 = 4294967296.0;
  out[0] = std::log2(1.0 + static_cast<double>(file_size));
  out[1] = static_cast<double>(meta.timestamp) / k2_32;
  out[2] = static_cast<double>(meta.machine) / k2_16;
  out[3] = static_cast<double>(meta.num_sections) / 64.0;
  out[4] = std::log2(1.0 + static_cast<double>(meta.size_of_code));
  out[5] = std::log2(1.0 + static_cast<double>(meta.size_of_headers));
  out[6] = static_cast<double>(meta.subsystem) / k2_16;
  out[7] = static_cast<double>(meta.dll_characteristics) / k2_16;
  out[8] = static_cast<double>(meta.entry_point_rva) / k2_32;
  out[9] = std::log2(1.0 + static_cast<double>(meta.image_base));
  out[10] = static_cast<double>(meta.exports_count) / 256.0;
  out[11] = static_cast<double>(meta.imports.size()) / 1024.0;
  out[12] = 1.0;
  out[13] = static_cast<double>(meta.parse_warnings.size()) / 16.0;
  return out;
}

std::array<double, 32> section_features(const PEMetadata& meta) {
  std::array<double, 32> out{};
  if (!meta.is_pe) {
    return out;
  }
  for (const auto& s : meta.sections) {
    out[fnv1a64(s.name) % 32] += s.entropy / 8.0;
  }
  return out;
}

std::array<double, 64> import_features(const PEMetadata& meta) {
  std::array<double, 64> out{};
  if (!meta.is_pe || meta.imports.empty()) {
    return out;
  }
  for (const auto& imp : meta.imports) {
    out[fnv1a64(lower(imp.dll_name + ":" + imp.function_name)) % 64] += 1.0;
  }
  const double denom = 1.0 + static_cast<double>(meta.imports.size());
  for (auto& v : out) {
    v /= denom;
  }
  return out;
}

void FeatureLayout::validate() const {
  std::size_t expected = 0;
  for (const auto& seg : segments) {
    if (seg.offset != expected) {
      throw ConfigError("layout " + layout_id + ": segment '" + seg.name +
                        "' is not contiguous");
    }
    expected += seg.length;
  }
  if (expected != total_dim) {
    throw ConfigError("layout " + layout_id + ": segment lengths sum to " +
                      std::to_string(expected) + ", total_dim is " + std::to_string(total_dim));
  }
}

const LayoutSegment* FeatureLayout::find(std::string_view name) const {
  for (const auto& seg : segments) {
    if (seg.name == name) return &seg;
  }
  return nullptr;
}

const FeatureLayout& default_layout() {
  static const FeatureLayout layout = [] {
    FeatureLayout l;
    l.layout_id = std::string(kDefaultLayoutId);
    std::size_t offset = 0;
    for (const char* name : {"byte_histogram", "byte_entropy_histogram", "strings", "header",
                             "sections", "imports"}) {
      const std::size_t len = family_length(name);
      l.segments.push_back({name, offset, len});
      offset += len;
    }
    l.total_dim = offset;
    return l;
  }();
  return layout;
}

LayoutRegistry::LayoutRegistry() { layouts_.emplace(default_layout().layout_id, default_layout()); }

void LayoutRegistry::add(FeatureLayout layout) {
  if (layout.layout_id.empty()) {
    throw ConfigError("layout_id must be non-empty");
  }
  layout.validate();
  for (const auto& seg : layout.segments) {
    const std::size_t native = family_length(seg.name);
    if (native == 0) {
      throw ConfigError("layout " + layout.layout_id + ": unknown segment '" + seg.name + "'");
    }
    if (native != seg.length) {
      throw ConfigError("layout " + layout.layout_id + ": segment '" + seg.name +
                        "' must have length " + std::to_string(native));
    }
  }
  layouts_.insert_or_assign(layout.layout_id, std::move(layout));
}

const FeatureLayout& LayoutRegistry::get(std::string_view layout_id) const {
  auto it = layouts_.find(layout_id);
  if (it == layouts_.end()) {
    throw ConfigError("unknown layout: " + std::string(layout_id));
  }
  return it->second;
}

bool LayoutRegistry::contains(std::string_view layout_id) const {
  return layouts_.find(layout_id) != layouts_.end();
}

std::string LayoutRegistry::to_json() const {
  nlohmann::json doc;
  doc["layouts"] = nlohmann::json::object();
  for (const auto& [id, layout] : layouts_) {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& s : layout.segments) {
      segs.push_back({{"name", s.name}, {"offset", s.offset}, {"length", s.length}});
    }
    doc["layouts"][id] = {{"total_dim", layout.total_dim}, {"segments", segs}};
  }
  return doc.dump(2);
}

LayoutRegistry LayoutRegistry::from_json(std::string_view text) {
  LayoutRegistry reg;
  try {
    const auto doc = nlohmann::json::parse(text);
    for (const auto& [id, body] : doc.at("layouts").items()) {
      FeatureLayout l;
      l.layout_id = id;
      l.total_dim = body.at("total_dim").get<std::size_t>();
      for (const auto& s : body.at("segments")) {
        l.segments.push_back({s.at("name").get<std::string>(), s.at("offset").get<std::size_t>(),
                              s.at("length").get<std::size_t>()});
      }
      reg.add(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("layout registry: ") + e.what());
  }
  return reg;
}

FeatureVector extract(const RawBinary& bin, const FeatureLayout& layout) {
  if (layout.layout_id != kDefaultLayoutId) {
    // Custom layouts are checked the same way the registry checks them.
    LayoutRegistry probe;
    probe.add(layout);
  } else if (layout.total_dim != kDefaultDim) {
    throw ConfigError("default layout has been altered");
  }

  const std::span<const std::uint8_t> bytes(bin.bytes);
  const PEMetadata meta = parse_pe(bytes);

  FeatureVector fv;
  fv.layout_id = layout.layout_id;
  fv.source_id = bin.source_id;
  fv.values.assign(layout.total_dim, 0.0);
  auto put = [&](const LayoutSegment& seg, std::span<const double> src) {
    std::copy(src.begin(), src.end(), fv.values.begin() + static_cast<std::ptrdiff_t>(seg.offset));
  };
  for (const auto& seg : layout.segments) {
    if (seg.name == "byte_histogram") {
      put(seg, byte_histogram(bytes));
    } else if (seg.name == "byte_entropy_histogram") {
      put(seg, byte_entropy_histogram(bytes));
    } else if (seg.name == "strings") {
      put(seg, string_features(bytes));
    } else if (seg.name == "header") {
      put(seg, header_features(meta, bytes.size()));
    } else if (seg.name == "sections") {
      put(seg, section_features(meta));
    } else if (seg.name == "imports") {
      put(seg, import_features(meta));
    }
  }
  return fv;
}

}  // namespace rsmooth
