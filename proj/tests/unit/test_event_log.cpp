#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "qdlink/event_log.hpp"

using namespace qdlink;
namespace fs = std::filesystem;

namespace {

std::vector<coinc::DetectionEvent> sample_events(std::size_t n) {
  std::mt19937_64 rng(5);
  std::vector<coinc::DetectionEvent> v;
  std::uint64_t t = 1000;
  for (std::size_t i = 0; i < n; ++i) {
    t += rng() % 100000;
    v.push_back({t, static_cast<std::uint8_t>(rng() % 4), static_cast<pol::Basis>(rng() % 3)});
  }
  return v;
}

fs::path tmp(const std::string& name) { return fs::temp_directory_path() / ("qdlink_evlog_" + name); }

void write(const fs::path& p, evlog::Format f, const std::vector<coinc::DetectionEvent>& ev) {
  evlog::Writer w(p, f, {evlog::kSchemaVersion, 9, 0xabcdef});
  w.write(ev);
  w.close();
}

}  // namespace

TEST_CASE("round trip in both formats") {
  const auto ev = sample_events(1000);
  for (auto f : {evlog::Format::Csv, evlog::Format::Binary}) {
    const auto p = tmp(f == evlog::Format::Csv ? "rt.csv" : "rt.bin");
    write(p, f, ev);
    CHECK(evlog::detect_format(p) == f);
    evlog::Header h;
    const auto back = evlog::read_all(p, &h);
    CHECK(back == ev);
    CHECK(h.seed == 9);
    CHECK(h.config_hash == 0xabcdef);
    fs::remove(p);
  }
}

TEST_CASE("empty log is valid") {
  const auto p = tmp("empty.bin");
  write(p, evlog::Format::Binary, {});
  CHECK(evlog::read_all(p).empty());
  fs::remove(p);
}

TEST_CASE("out-of-order writes are rejected") {
  auto ev = sample_events(3);
  std::swap(ev[0], ev[2]);
  const auto p = tmp("order.csv");
  evlog::Writer w(p, evlog::Format::Csv, {});
  CHECK_THROWS_AS(w.write(ev), std::logic_error);
  fs::remove(p);
}

TEST_CASE("truncation is detected before any event is used") {
  const auto ev = sample_events(200);
  for (auto f : {evlog::Format::Csv, evlog::Format::Binary}) {
    const auto p = tmp(f == evlog::Format::Csv ? "trunc.csv" : "trunc.bin");
    write(p, f, ev);
    fs::resize_file(p, fs::file_size(p) - 25);
    CHECK_THROWS_AS(evlog::Reader{p}, evlog::SchemaError);
    fs::remove(p);
  }
}

TEST_CASE("schema version mismatch") {
  const auto p = tmp("ver.csv");
  write(p, evlog::Format::Csv, sample_events(5));
  std::string text;
  {
    std::ifstream in(p);
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  text.replace(text.find("v1"), 2, "v2");
  {
    std::ofstream out(p, std::ios::trunc);
    out << text;
  }
  CHECK_THROWS_AS(evlog::Reader{p}, evlog::SchemaError);
  fs::remove(p);
}

TEST_CASE("malformed row names the line") {
  const auto p = tmp("bad.csv");
  write(p, evlog::Format::Csv, sample_events(5));
  std::string text;
  {
    std::ifstream in(p);
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  const auto row = text.find('\n', text.find("detector_id")) + 1;
  text[row] = 'x';
  {
    std::ofstream out(p, std::ios::trunc);
    out << text;
  }
  try {
    evlog::read_all(p);
    FAIL("expected SchemaError");
  } catch (const evlog::SchemaError& e) {
    CHECK(std::string(e.what()).find("line") != std::string::npos);
  }
  fs::remove(p);
}

TEST_CASE("missing file") { CHECK_THROWS_AS(evlog::Reader{tmp("nope.bin")}, evlog::IoError); }
