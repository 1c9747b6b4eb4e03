#include "qdlink/event_log.hpp"

#include <array>
#include <charconv>
#include <cstring>
#include <sstream>

namespace qdlink::evlog {

namespace {

constexpr char kMagic[8] = {'Q', 'D', 'L', 'K', 'E', 'V', 'T', '1'};
constexpr char kEndMagic[8] = {'Q', 'D', 'L', 'K', 'E', 'N', 'D', '1'};
constexpr std::size_t kBinHeader = 8 + 4 + 8 + 8;
constexpr std::size_t kBinRecord = 10;
constexpr std::size_t kBinFooter = 8 + 8;

template <typename T>
void put_le(std::ostream& o, T v) {
  std::array<char, sizeof(T)> b{};
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  o.write(b.data(), b.size());
}

template <typename T>
T get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << v;
  return s.str();
}

template <typename T>
bool parse_uint(std::string_view s, T& out, int base = 10) {
  auto r = std::from_chars(s.data(), s.data() + s.size(), out, base);
  return r.ec == std::errc{} && r.ptr == s.data() + s.size();
}

std::string_view after(std::string_view s, std::string_view key) {
  const auto p = s.find(key);
  if (p == std::string_view::npos) return {};
  auto rest = s.substr(p + key.size());
  return rest.substr(0, rest.find(' '));
}

}  // namespace

Format detect_format(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open event log " + path.string());
  char m[8] = {};
  in.read(m, 8);
  return (in.gcount() == 8 && std::memcmp(m, kMagic, 8) == 0) ? Format::Binary : Format::Csv;
}

// ---------------------------------------------------------------------------

Writer::Writer(const std::filesystem::path& path, Format format, const Header& header)
    : path_(path), format_(format) {
  out_.open(path, format == Format::Binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out_) throw IoError("cannot write event log " + path.string());
  if (format_ == Format::Binary) {
    out_.write(kMagic, 8);
    put_le<std::uint32_t>(out_, header.version);
    put_le<std::uint64_t>(out_, header.seed);
    put_le<std::uint64_t>(out_, header.config_hash);
  } else {
    out_ << "# qdlink-events v" << header.version << " seed=" << header.seed << " config_hash=" << hex(header.config_hash)
         << "\n";
    out_ << "detector_id,timestamp_ps,basis\n";
  }
}

Writer::~Writer() {
  if (!closed_) {
    try {
      close();
    } catch (...) {
    }
  }
}

void Writer::write(std::span<const coinc::DetectionEvent> events) {
  if (closed_) throw std::logic_error("event log already closed");
  for (const auto& e : events) {
    if (have_last_ && coinc::event_less(e, last_)) throw std::logic_error("event log rows must be sorted");
    last_ = e;
    have_last_ = true;
    if (format_ == Format::Binary) {
      put_le<std::uint8_t>(out_, e.detector_id);
      put_le<std::uint64_t>(out_, e.timestamp_ps);
      put_le<std::uint8_t>(out_, static_cast<std::uint8_t>(e.basis));
    } else {
      out_ << static_cast<int>(e.detector_id) << ',' << e.timestamp_ps << ',' << pol::to_string(e.basis) << '\n';
    }
  }
  count_ += events.size();
  if (!out_) throw IoError("write failed for event log " + path_.string());
}

void Writer::close() {
  if (closed_) return;
  closed_ = true;
  if (format_ == Format::Binary) {
    out_.write(kEndMagic, 8);
    put_le<std::uint64_t>(out_, count_);
  } else {
    out_ << "# end count=" << count_ << "\n";
  }
  out_.flush();
  if (!out_) throw IoError("write failed for event log " + path_.string());
  out_.close();
}

// ---------------------------------------------------------------------------

Reader::Reader(const std::filesystem::path& path) : path_(path), format_(detect_format(path)) {
  const std::string where = " in " + path.string();
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat event log " + path.string());
  in_.open(path, std::ios::binary);
  if (!in_) throw IoError("cannot open event log " + path.string());

  if (format_ == Format::Binary) {
    if (size < kBinHeader + kBinFooter) throw SchemaError("truncated binary event log" + where);
    std::array<unsigned char, kBinHeader> h{};
    in_.read(reinterpret_cast<char*>(h.data()), h.size());
    header_.version = get_le<std::uint32_t>(h.data() + 8);
    header_.seed = get_le<std::uint64_t>(h.data() + 12);
    header_.config_hash = get_le<std::uint64_t>(h.data() + 20);
    if (header_.version != kSchemaVersion)
      throw SchemaError("event log schema v" + std::to_string(header_.version) + " not supported (expected v" +
                        std::to_string(kSchemaVersion) + ")" + where);
    std::array<unsigned char, kBinFooter> f{};
    in_.seekg(static_cast<std::streamoff>(size - kBinFooter));
    in_.read(reinterpret_cast<char*>(f.data()), f.size());
    if (std::memcmp(f.data(), kEndMagic, 8) != 0) throw SchemaError("missing end marker, log truncated" + where);
    declared_ = get_le<std::uint64_t>(f.data() + 8);
    if (size != kBinHeader + kBinFooter + declared_ * kBinRecord)
      throw SchemaError("event count does not match file length" + where);
    in_.seekg(static_cast<std::streamoff>(kBinHeader));
    return;
  }

  std::string line;
  if (!std::getline(in_, line) || line.rfind("# qdlink-events v", 0) != 0)
    throw SchemaError("missing event log header" + where);
  std::uint32_t v = 0;
  if (!parse_uint(after(line, "# qdlink-events v"), v))
    throw SchemaError("bad schema version" + where);
  header_.version = v;
  if (v != kSchemaVersion)
    throw SchemaError("event log schema v" + std::to_string(v) + " not supported (expected v" +
                      std::to_string(kSchemaVersion) + ")" + where);
  if (!parse_uint(after(line, "seed="), header_.seed) || !parse_uint(after(line, "config_hash="), header_.config_hash, 16))
    throw SchemaError("bad event log header" + where);
  if (!std::getline(in_, line) || line != "detector_id,timestamp_ps,basis")
    throw SchemaError("missing column line" + where);
  line_ = 2;
  const auto body = in_.tellg();

  // Footer: last line of the file.
  const std::uint64_t tail = std::min<std::uint64_t>(size, 128);
  in_.seekg(static_cast<std::streamoff>(size - tail));
  std::string end(tail, '\0');
  in_.read(end.data(), static_cast<std::streamsize>(tail));
  if (end.empty() || end.back() != '\n') throw SchemaError("missing end marker, log truncated" + where);
  end.pop_back();
  const auto nl = end.rfind('\n');
  const std::string last = nl == std::string::npos ? end : end.substr(nl + 1);
  if (last.rfind("# end count=", 0) != 0 || !parse_uint(std::string_view(last).substr(12), declared_))
    throw SchemaError("missing end marker, log truncated" + where);
  in_.clear();
  in_.seekg(body);
}

bool Reader::next(coinc::DetectionEvent& e) {
  if (read_ == declared_) {
    if (format_ == Format::Csv) {
      std::string line;
      if (!std::getline(in_, line) || line.rfind("# end count=", 0) != 0)
        throw SchemaError(std::string("row count does not match end marker") + " in " + path_.string());
    }
    return false;
  }
  if (format_ == Format::Binary) {
    std::array<unsigned char, kBinRecord> r{};
    in_.read(reinterpret_cast<char*>(r.data()), r.size());
    if (in_.gcount() != static_cast<std::streamsize>(r.size())) throw SchemaError(std::string("short read") + " in " + path_.string());
    if (r[0] > 3 || r[9] > 2) throw SchemaError("invalid record " + std::to_string(read_) + " in " + path_.string());
    e.detector_id = r[0];
    e.timestamp_ps = get_le<std::uint64_t>(r.data() + 1);
    e.basis = static_cast<pol::Basis>(r[9]);
  } else {
    std::string line;
    if (!std::getline(in_, line)) throw SchemaError(std::string("unexpected end of rows") + " in " + path_.string());
    ++line_;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    unsigned id = 0;
    std::uint64_t ts = 0;
    if (c1 == std::string::npos || c2 == std::string::npos ||
        !parse_uint(std::string_view(line).substr(0, c1), id) ||
        !parse_uint(std::string_view(line).substr(c1 + 1, c2 - c1 - 1), ts) || id > 3)
      throw SchemaError("malformed row at line " + std::to_string(line_) + " in " + path_.string());
    try {
      e.basis = pol::parse_basis(std::string_view(line).substr(c2 + 1));
    } catch (const std::invalid_argument&) {
      throw SchemaError("unknown basis at line " + std::to_string(line_) + " in " + path_.string());
    }
    e.detector_id = static_cast<std::uint8_t>(id);
    e.timestamp_ps = ts;
  }
  if (have_last_ && coinc::event_less(e, last_)) throw SchemaError(std::string("rows out of order") + " in " + path_.string());
  last_ = e;
  have_last_ = true;
  ++read_;
  return true;
}

std::vector<coinc::DetectionEvent> read_all(const std::filesystem::path& path, Header* header) {
  Reader r(path);
  if (header) *header = r.header();
  std::vector<coinc::DetectionEvent> out;
  out.reserve(r.declared_count());
  coinc::DetectionEvent e;
  while (r.next(e)) out.push_back(e);
  return out;
}

}  // namespace qdlink::evlog
