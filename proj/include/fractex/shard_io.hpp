#pragma once

// Shard sinks (where expansion output goes) and the matching readers.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include <zlib.h>

#include "fractex/error.hpp"
#include "fractex/sparse.hpp"

namespace fractex {

/// FNV-1a, 64-bit. Used as a content fingerprint for shards.
class Fnv1a64 {
 public:
  void update(std::string_view bytes) noexcept {
    for (unsigned char c : bytes) {
      hash_ ^= c;
      hash_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t value() const noexcept { return hash_; }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_));
    return buf;
  }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

class ShardWriter {
 public:
  virtual ~ShardWriter() = default;
  virtual void write(std::string_view bytes) = 0;
  virtual void close() = 0;
};

/// Destination for one expanded matrix: a set of named shards plus a
/// manifest. Distinct shards may be opened and written concurrently.
class ShardSink {
 public:
  virtual ~ShardSink() = default;
  virtual std::unique_ptr<ShardWriter> open(const std::string& name) = 0;
  virtual void write_manifest(const std::string& json) = 0;
  /// Suffix appended to shard names (".gz" for compressed sinks).
  virtual std::string suffix() const { return {}; }
};

class DirectorySink final : public ShardSink {
 public:
  explicit DirectorySink(std::filesystem::path dir, bool gzip = false)
      : dir_(std::move(dir)), gzip_(gzip) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) fail(ErrorKind::io, "cannot create output directory " + dir_.string());
  }

  std::unique_ptr<ShardWriter> open(const std::string& name) override {
    const auto path = dir_ / name;
    if (gzip_) return std::make_unique<GzipWriter>(path);
    return std::make_unique<FileWriter>(path);
  }

  void write_manifest(const std::string& json) override {
    std::ofstream f(dir_ / "manifest.json", std::ios::binary);
    f << json;
    if (!f) fail(ErrorKind::io, "cannot write manifest in " + dir_.string());
  }

  std::string suffix() const override { return gzip_ ? ".gz" : ""; }

  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  class FileWriter final : public ShardWriter {
   public:
    explicit FileWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
      if (!out_) fail(ErrorKind::io, "cannot open shard " + path.string());
    }
    void write(std::string_view bytes) override {
      out_.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!out_) fail(ErrorKind::io, "write failed on shard " + path_.string());
    }
    void close() override {
      out_.close();
      if (!out_) fail(ErrorKind::io, "close failed on shard " + path_.string());
    }

   private:
    std::filesystem::path path_;
    std::ofstream out_;
  };

  // gzopen writes a zero mtime into the header, so output stays reproducible.
  class GzipWriter final : public ShardWriter {
   public:
    explicit GzipWriter(const std::filesystem::path& path) : path_(path) {
      file_ = gzopen(path.c_str(), "wb6");
      if (!file_) fail(ErrorKind::io, "cannot open shard " + path.string());
    }
    ~GzipWriter() override {
      if (file_) gzclose(file_);
    }
    void write(std::string_view bytes) override {
      if (bytes.empty()) return;
      if (gzwrite(file_, bytes.data(), static_cast<unsigned>(bytes.size())) == 0)
        fail(ErrorKind::io, "write failed on shard " + path_.string());
    }
    void close() override {
      const int rc = gzclose(file_);
      file_ = nullptr;
      if (rc != Z_OK) fail(ErrorKind::io, "close failed on shard " + path_.string());
    }

   private:
    std::filesystem::path path_;
    gzFile file_ = nullptr;
  };

  std::filesystem::path dir_;
  bool gzip_;
};

/// Collects shards in memory. `fail_on` makes opening that shard throw,
/// which is how partial-output handling is exercised.
class MemorySink final : public ShardSink {
 public:
  std::unique_ptr<ShardWriter> open(const std::string& name) override {
    std::lock_guard lock(mutex_);
    if (fail_on && *fail_on == name) fail(ErrorKind::io, "injected failure opening " + name);
    shards_[name].clear();
    return std::make_unique<Writer>(*this, name);
  }

  void write_manifest(const std::string& json) override {
    std::lock_guard lock(mutex_);
    manifest_ = json;
  }

  const std::map<std::string, std::string>& shards() const noexcept { return shards_; }
  const std::string& manifest() const noexcept { return manifest_; }

  std::optional<std::string> fail_on;

 private:
  class Writer final : public ShardWriter {
   public:
    Writer(MemorySink& sink, std::string name) : sink_(sink), name_(std::move(name)) {}
    void write(std::string_view bytes) override { buffer_.append(bytes); }
    void close() override {
      std::lock_guard lock(sink_.mutex_);
      sink_.shards_[name_] = std::move(buffer_);
    }

   private:
    MemorySink& sink_;
    std::string name_;
    std::string buffer_;
  };

  std::mutex mutex_;
  std::map<std::string, std::string> shards_;
  std::string manifest_;
};

/// Reads a whole shard file, transparently inflating `.gz` files.
inline std::string read_shard_file(const std::filesystem::path& path) {
  if (path.extension() == ".gz") {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) fail(ErrorKind::io, "cannot open shard " + path.string());
    std::string out;
    char buf[1 << 16];
    int got = 0;
    while ((got = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(got));
    gzclose(f);
    if (got < 0) fail(ErrorKind::io, "corrupt gzip shard " + path.string());
    return out;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open shard " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct ShardEntry {
  Index row;
  Index col;
  double value;  // 1 for binary shards
};

/// Parses `row<TAB>col[<TAB>value]` lines.
template <typename Visitor>
void for_each_shard_line(std::string_view content, const std::string& label, Visitor&& visit) {
  std::size_t line_no = 0;
  while (!content.empty()) {
    const auto eol = content.find('\n');
    std::string_view line = content.substr(0, eol);
    content.remove_prefix(eol == std::string_view::npos ? content.size() : eol + 1);
    ++line_no;
    if (line.empty()) continue;
    ShardEntry e{0, 0, 1.0};
    const char* p = line.data();
    const char* end = line.data() + line.size();
    auto bad = [&] {
      fail(ErrorKind::data, "malformed line " + std::to_string(line_no) + " in " + label);
    };
    auto r1 = std::from_chars(p, end, e.row);
    if (r1.ec != std::errc{} || r1.ptr == end || *r1.ptr != '\t') bad();
    auto r2 = std::from_chars(r1.ptr + 1, end, e.col);
    if (r2.ec != std::errc{}) bad();
    if (r2.ptr != end) {
      if (*r2.ptr != '\t') bad();
      auto r3 = std::from_chars(r2.ptr + 1, end, e.value);
      if (r3.ec != std::errc{} || r3.ptr != end) bad();
    }
    visit(e);
  }
}

}  // namespace fractex
