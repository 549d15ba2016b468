#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pointbrush/error.hpp"
#include "pointbrush/geometry.hpp"

namespace pointbrush {

namespace fs = std::filesystem;

using LabelId = std::uint16_t;
using Bytes = std::vector<std::uint8_t>;

/// Per-point label ids, index-aligned with one frame's cloud. 0 = unlabeled.
struct LabelMask {
  std::vector<LabelId> labels;

  LabelMask() = default;
  explicit LabelMask(std::size_t n) : labels(n, 0) {}
  explicit LabelMask(std::vector<LabelId> l) : labels(std::move(l)) {}

  std::size_t size() const noexcept { return labels.size(); }
  LabelId operator[](std::size_t i) const { return labels[i]; }
  LabelId& operator[](std::size_t i) { return labels[i]; }

  bool any() const {
    return std::any_of(labels.begin(), labels.end(), [](LabelId l) { return l != 0; });
  }

  std::vector<std::size_t> indices_of(LabelId label) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == label) out.push_back(i);
    }
    return out;
  }

  /// Distinct nonzero labels, ascending.
  std::vector<LabelId> distinct_labels() const {
    std::vector<bool> seen(65536, false);
    for (const LabelId l : labels) seen[l] = true;
    std::vector<LabelId> out;
    for (std::size_t l = 1; l < seen.size(); ++l) {
      if (seen[l]) out.push_back(static_cast<LabelId>(l));
    }
    return out;
  }

  friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

// ---------------------------------------------------------------------------
// Binary layout, little-endian throughout.
//
//   header (24 bytes): magic[4] | version u32 | point_count u64 | timestamp_us u64
//   frame record (16 bytes): x f32 | y f32 | z f32 | r u8 | g u8 | b u8 | pad u8 = 0
//   mask record (2 bytes): label u16
//
// Masks reuse the header with magic "PCLB" and the timestamp field reserved = 0.
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> kFrameMagic{'P', 'C', 'F', 'B'};
inline constexpr std::array<char, 4> kMaskMagic{'P', 'C', 'L', 'B'};
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderSize = 24;
inline constexpr std::size_t kFrameRecordSize = 16;
inline constexpr std::size_t kMaskRecordSize = 2;

struct FrameHeader {
  std::array<char, 4> magic{};
  std::uint32_t version = kFormatVersion;
  std::uint64_t point_count = 0;
  std::uint64_t timestamp_us = 0;
};

namespace detail {

template <typename T>
void put_le(Bytes& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(u & 0xFF));
    u = static_cast<U>(u >> 8);
  }
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = sizeof(T); i-- > 0;) u = static_cast<decltype(u)>((u << 8) | p[i]);
  return static_cast<T>(u);
}

inline void put_header(Bytes& out, const std::array<char, 4>& magic, std::uint64_t count, std::uint64_t timestamp) {
  out.insert(out.end(), magic.begin(), magic.end());
  put_le<std::uint32_t>(out, kFormatVersion);
  put_le<std::uint64_t>(out, count);
  put_le<std::uint64_t>(out, timestamp);
}

inline FrameHeader parse_header(std::span<const std::uint8_t> bytes, const std::array<char, 4>& magic,
                                std::string_view what, std::size_t record_size) {
  if (bytes.size() < kHeaderSize) {
    if (bytes.size() >= 4 && !std::equal(magic.begin(), magic.end(), bytes.begin())) {
      throw FormatError(std::string("not a ") + std::string(what) + " file");
    }
    throw FormatError("unexpected end of file, expected " + std::to_string(kHeaderSize) + " bytes");
  }
  FrameHeader h;
  std::memcpy(h.magic.data(), bytes.data(), 4);
  if (h.magic != magic) throw FormatError(std::string("not a ") + std::string(what) + " file");
  h.version = get_le<std::uint32_t>(bytes.data() + 4);
  if (h.version != kFormatVersion) throw FormatError("unsupported version " + std::to_string(h.version));
  h.point_count = get_le<std::uint64_t>(bytes.data() + 8);
  h.timestamp_us = get_le<std::uint64_t>(bytes.data() + 16);

  const std::uint64_t max_count = (std::numeric_limits<std::uint64_t>::max() - kHeaderSize) / record_size;
  if (h.point_count > max_count) throw FormatError("implausible point count " + std::to_string(h.point_count));
  const std::uint64_t expected = kHeaderSize + h.point_count * record_size;
  if (bytes.size() < expected) {
    throw FormatError("unexpected end of file, expected " + std::to_string(expected) + " bytes");
  }
  if (bytes.size() > expected) {
    throw FormatError("trailing data, expected " + std::to_string(expected) + " bytes");
  }
  return h;
}

}  // namespace detail

inline std::uint64_t frame_file_size(std::uint64_t n) { return kHeaderSize + kFrameRecordSize * n; }
inline std::uint64_t mask_file_size(std::uint64_t n) { return kHeaderSize + kMaskRecordSize * n; }

inline Bytes write_frame(const PointCloud& cloud, std::uint64_t timestamp_us) {
  Bytes out;
  out.reserve(frame_file_size(cloud.size()));
  detail::put_header(out, kFrameMagic, cloud.size(), timestamp_us);
  for (const Point& p : cloud) {
    for (int axis = 0; axis < 3; ++axis) {
      detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(p.position[axis])));
    }
    out.push_back(p.color.r);
    out.push_back(p.color.g);
    out.push_back(p.color.b);
    out.push_back(0);
  }
  return out;
}

struct Frame {
  PointCloud cloud;
  std::uint64_t timestamp_us = 0;
};

inline Frame read_frame(std::span<const std::uint8_t> bytes) {
  const FrameHeader h = detail::parse_header(bytes, kFrameMagic, "frame", kFrameRecordSize);
  std::vector<Point> points(h.point_count);
  const std::uint8_t* rec = bytes.data() + kHeaderSize;
  for (auto& p : points) {
    for (int axis = 0; axis < 3; ++axis) {
      p.position[axis] = std::bit_cast<float>(detail::get_le<std::uint32_t>(rec + 4 * axis));
    }
    p.color = Rgb{rec[12], rec[13], rec[14]};
    rec += kFrameRecordSize;
  }
  return {PointCloud(std::move(points)), h.timestamp_us};
}

inline Bytes write_mask(const LabelMask& mask) {
  Bytes out;
  out.reserve(mask_file_size(mask.size()));
  detail::put_header(out, kMaskMagic, mask.size(), 0);
  for (const LabelId l : mask.labels) detail::put_le<std::uint16_t>(out, l);
  return out;
}

inline LabelMask read_mask(std::span<const std::uint8_t> bytes) {
  const FrameHeader h = detail::parse_header(bytes, kMaskMagic, "mask", kMaskRecordSize);
  std::vector<LabelId> labels(h.point_count);
  const std::uint8_t* rec = bytes.data() + kHeaderSize;
  for (auto& l : labels) {
    l = detail::get_le<std::uint16_t>(rec);
    rec += kMaskRecordSize;
  }
  return LabelMask(std::move(labels));
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
inline void write_file(const fs::path& path, std::span<const std::uint8_t> data) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error("cannot write " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error("cannot write " + path.string() + ": " + ec.message());
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

/// Header of a frame file, read without loading the body.
inline FrameHeader read_frame_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::array<std::uint8_t, kHeaderSize> buf{};
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  const auto got = static_cast<std::size_t>(in.gcount());
  FrameHeader h;
  try {
    if (got < kHeaderSize) detail::parse_header(std::span(buf.data(), got), kFrameMagic, "frame", kFrameRecordSize);
    std::memcpy(h.magic.data(), buf.data(), 4);
    if (h.magic != kFrameMagic) throw FormatError("not a frame file");
    h.version = detail::get_le<std::uint32_t>(buf.data() + 4);
    if (h.version != kFormatVersion) throw FormatError("unsupported version " + std::to_string(h.version));
    h.point_count = detail::get_le<std::uint64_t>(buf.data() + 8);
    h.timestamp_us = detail::get_le<std::uint64_t>(buf.data() + 16);
  } catch (const FormatError& e) {
    throw FormatError(path.filename().string() + ": " + e.what());
  }
  return h;
}

inline Frame read_frame_file(const fs::path& path) {
  try {
    return read_frame(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.filename().string() + ": " + e.what());
  }
}

inline LabelMask read_mask_file(const fs::path& path) {
  try {
    return read_mask(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.filename().string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Sequences
// ---------------------------------------------------------------------------

inline constexpr double kDefaultFps = 30.0;
inline constexpr const char* kManifestName = "sequence.json";

struct FrameRef {
  std::string name;  // file name relative to the sequence directory
  std::uint64_t timestamp_us = 0;
  std::uint64_t point_count = 0;
};

struct FrameSequence {
  fs::path directory;
  std::vector<FrameRef> frames;
  double nominal_fps = kDefaultFps;

  std::size_t size() const noexcept { return frames.size(); }
  fs::path frame_path(std::size_t i) const { return directory / frames.at(i).name; }

  /// Sidecar mask path: frame_000001.pcb -> frame_000001.lbl
  fs::path mask_path(std::size_t i) const {
    fs::path p = frame_path(i);
    p.replace_extension(".lbl");
    return p;
  }
};

inline std::uint64_t synthesized_timestamp(std::size_t i, double fps) {
  return static_cast<std::uint64_t>(std::llround(static_cast<double>(i) * 1e6 / fps));
}

/// Frames in manifest order when sequence.json exists, else every frame_*.pcb
/// in lexicographic order. Timestamps come from the frame headers; if every
/// header carries 0 they are synthesized from the nominal rate.
inline FrameSequence load_sequence(const fs::path& directory) {
  if (!fs::is_directory(directory)) throw Error("not a directory: " + directory.string());
  FrameSequence seq;
  seq.directory = directory;

  std::vector<std::string> names;
  const fs::path manifest = directory / kManifestName;
  if (fs::exists(manifest)) {
    nlohmann::json j;
    try {
      const Bytes raw = read_file(manifest);
      j = nlohmann::json::parse(raw.begin(), raw.end());
      seq.nominal_fps = j.value("fps", kDefaultFps);
      names = j.at("frames").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(manifest.string() + ": " + e.what());
    }
    if (!(seq.nominal_fps > 0.0)) throw Error(manifest.string() + ": fps must be > 0");
    for (const auto& n : names) {
      if (!fs::is_regular_file(directory / n)) throw Error("missing frame " + n);
    }
  } else {
    for (const auto& entry : fs::directory_iterator(directory)) {
      const std::string n = entry.path().filename().string();
      if (entry.is_regular_file() && n.starts_with("frame_") && entry.path().extension() == ".pcb") {
        names.push_back(n);
      }
    }
    std::sort(names.begin(), names.end());
  }
  if (names.empty()) throw Error("empty sequence");

  bool all_zero = true;
  for (const auto& n : names) {
    const FrameHeader h = read_frame_header(directory / n);
    seq.frames.push_back({n, h.timestamp_us, h.point_count});
    all_zero = all_zero && h.timestamp_us == 0;
  }
  if (all_zero) {
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
      seq.frames[i].timestamp_us = synthesized_timestamp(i, seq.nominal_fps);
    }
  }
  for (std::size_t i = 1; i < seq.frames.size(); ++i) {
    if (seq.frames[i].timestamp_us <= seq.frames[i - 1].timestamp_us) {
      throw Error("timestamps not strictly increasing at " + seq.frames[i].name);
    }
  }
  return seq;
}

inline std::string frame_file_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06zu.pcb", i);
  return buf;
}

inline void write_manifest(const fs::path& directory, double fps, const std::vector<std::string>& names) {
  nlohmann::ordered_json j;
  j["fps"] = fps;
  j["frames"] = names;
  write_text_file(directory / kManifestName, j.dump(2) + "\n");
}

/// Writes clouds as frame_NNNNNN.pcb plus a manifest and returns the loaded sequence.
inline FrameSequence write_sequence(const fs::path& directory, std::span<const PointCloud> clouds,
                                    std::span<const std::uint64_t> timestamps, double fps) {
  if (clouds.size() != timestamps.size()) throw Error("timestamp count mismatch");
  fs::create_directories(directory);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    names.push_back(frame_file_name(i));
    write_file(directory / names.back(), write_frame(clouds[i], timestamps[i]));
  }
  write_manifest(directory, fps, names);
  return load_sequence(directory);
}

}  // namespace pointbrush
