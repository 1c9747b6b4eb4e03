#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "qdlink/coincidence.hpp"

/// Persisted detection events. Both formats carry a header with schema
/// version, seed and config hash and end with a footer holding the event
/// count, so a truncated file is detected before any event is used.
///
/// CSV:    "# qdlink-events v1 seed=<n> config_hash=<hex>", a column line
///         "detector_id,timestamp_ps,basis", rows, "# end count=<n>".
/// Binary: "QDLKEVT1", u32 version, u64 seed, u64 hash; 10-byte records
///         (u8 id, u64 timestamp_ps, u8 basis); "QDLKEND1", u64 count.
///         All integers little-endian.
namespace qdlink::evlog {

inline constexpr std::uint32_t kSchemaVersion = 1;

enum class Format { Csv, Binary };

struct Header {
  std::uint32_t version = kSchemaVersion;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Binary if the file starts with the binary magic, CSV otherwise.
Format detect_format(const std::filesystem::path& path);

class Writer {
 public:
  /// Throws IoError naming the path.
  Writer(const std::filesystem::path& path, Format format, const Header& header);
  ~Writer();
  Writer(const Writer&) = delete;
  Writer& operator=(const Writer&) = delete;

  /// Events must arrive in event_less order across calls.
  void write(std::span<const coinc::DetectionEvent> events);
  /// Writes the footer and flushes; further writes throw.
  void close();
  std::uint64_t count() const { return count_; }

 private:
  std::filesystem::path path_;
  Format format_;
  std::ofstream out_;
  std::uint64_t count_ = 0;
  bool closed_ = false;
  bool have_last_ = false;
  coinc::DetectionEvent last_{};
};

/// Streaming reader. The constructor checks header, footer and length;
/// next() additionally checks row syntax and ordering.
class Reader {
 public:
  Reader(const std::filesystem::path& path);

  const Header& header() const { return header_; }
  Format format() const { return format_; }
  std::uint64_t declared_count() const { return declared_; }
  bool next(coinc::DetectionEvent& e);

 private:
  std::filesystem::path path_;
  Format format_;
  std::ifstream in_;
  Header header_;
  std::uint64_t declared_ = 0;
  std::uint64_t read_ = 0;
  std::uint64_t line_ = 0;
  bool have_last_ = false;
  coinc::DetectionEvent last_{};
};

std::vector<coinc::DetectionEvent> read_all(const std::filesystem::path& path, Header* header = nullptr);

}  // namespace qdlink::evlog
