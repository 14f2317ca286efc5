#pragma once

// Ratings ingestion: parse, binarize, drop low-activity users, and split each
// user's latest interaction into a held-out test matrix.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fractex/error.hpp"
#include "fractex/sparse.hpp"

namespace fractex::ingest {

struct RatingEvent {
  std::string user_id;
  std::string item_id;
  double rating = 0.0;
  std::int64_t timestamp = 0;
  friend bool operator==(const RatingEvent&, const RatingEvent&) = default;
};

enum class RatingFormat {
  csv_header,  // `userId,movieId,rating,timestamp` with a header row
  tsv,         // headerless, tab separated (MovieLens-100K u.data)
};

/// Maps opaque ids to contiguous indices in order of first appearance.
class IdIndex {
 public:
  Index intern(const std::string& id) {
    auto [it, inserted] = lookup_.try_emplace(id, ids_.size());
    if (inserted) ids_.push_back(id);
    return it->second;
  }

  const std::string& id(Index index) const { return ids_.at(index); }
  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  bool find(const std::string& id, Index& out) const {
    auto it = lookup_.find(id);
    if (it == lookup_.end()) return false;
    out = it->second;
    return true;
  }

  friend bool operator==(const IdIndex& a, const IdIndex& b) { return a.ids_ == b.ids_; }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, Index> lookup_;
};

struct SplitDataset {
  SparseBinaryMatrix train;
  SparseBinaryMatrix test;
  IdIndex user_index;
  IdIndex item_index;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  text = trim(text);
  if (text.empty()) return false;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

}  // namespace detail

inline std::vector<RatingEvent> parse_ratings(std::istream& in, RatingFormat format) {
  const char sep = format == RatingFormat::csv_header ? ',' : '\t';
  std::vector<RatingEvent> events;
  std::string line;
  std::size_t line_no = 0;
  bool header_pending = format == RatingFormat::csv_header;
  bool saw_content = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    saw_content = true;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    const auto fields = detail::split_fields(body, sep);
    auto bad = [&](const std::string& why) {
      fail(ErrorKind::data, "line " + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() != 4)
      bad("expected 4 fields (user, item, rating, timestamp), found " +
          std::to_string(fields.size()));
    RatingEvent e;
    e.user_id = std::string(detail::trim(fields[0]));
    e.item_id = std::string(detail::trim(fields[1]));
    if (e.user_id.empty() || e.item_id.empty()) bad("empty user or item id");
    if (!detail::parse_number(fields[2], e.rating) || !std::isfinite(e.rating))
      bad("rating is not a finite number");
    if (!detail::parse_number(fields[3], e.timestamp) || e.timestamp < 0)
      bad("timestamp is not a non-negative integer");
    events.push_back(std::move(e));
  }
  if (!saw_content) fail(ErrorKind::data, "ratings input is empty");
  return events;
}

inline std::vector<RatingEvent> read_ratings_file(const std::filesystem::path& path,
                                                  RatingFormat format) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open ratings file " + path.string());
  return parse_ratings(in, format);
}

inline std::vector<RatingEvent> binarize(std::vector<RatingEvent> events) {
  for (auto& e : events) e.rating = 1.0;
  return events;
}

/// Collapses repeated (user, item) pairs to their first occurrence in stream
/// order, carrying the latest timestamp seen for the pair.
inline std::vector<RatingEvent> collapse_duplicates(const std::vector<RatingEvent>& events) {
  std::vector<RatingEvent> out;
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& e : events) {
    std::string key = e.user_id;
    key.push_back('\x1f');
    key += e.item_id;
    auto [it, inserted] = seen.try_emplace(std::move(key), out.size());
    if (inserted) {
      out.push_back(e);
    } else {
      auto& kept = out[it->second];
      kept.timestamp = std::max(kept.timestamp, e.timestamp);
    }
  }
  return out;
}

/// Removes every event of users with fewer than `min_distinct` distinct
/// timestamps. Surviving events keep their order.
inline std::vector<RatingEvent> filter_min_distinct_timestamps(
    const std::vector<RatingEvent>& events, std::size_t min_distinct = 2) {
  std::unordered_map<std::string, std::unordered_set<std::int64_t>> stamps;
  for (const auto& e : events) stamps[e.user_id].insert(e.timestamp);
  std::vector<RatingEvent> out;
  for (const auto& e : events)
    if (stamps[e.user_id].size() >= min_distinct) out.push_back(e);
  return out;
}

/// Holds out each user's latest interaction. Ties on the latest timestamp are
/// broken towards the larger item index. Repeated (user, item) pairs collapse
/// to one interaction stamped with their latest timestamp.
inline SplitDataset leave_last_out_split(const std::vector<RatingEvent>& events) {
  SplitDataset out;
  struct Interaction {
    Index user;
    Index item;
    std::int64_t timestamp;
  };
  std::vector<Interaction> interactions;
  for (const auto& e : collapse_duplicates(events))
    interactions.push_back(
        {out.user_index.intern(e.user_id), out.item_index.intern(e.item_id), e.timestamp});

  const Index n_users = out.user_index.size();
  const Index n_items = out.item_index.size();
  constexpr Index none = ~Index{0};
  std::vector<Index> held_out(n_users, none);
  std::vector<std::int64_t> first_stamp(n_users, -1);
  std::vector<bool> has_two_stamps(n_users, false);
  for (std::size_t p = 0; p < interactions.size(); ++p) {
    const auto& x = interactions[p];
    if (first_stamp[x.user] < 0)
      first_stamp[x.user] = x.timestamp;
    else if (first_stamp[x.user] != x.timestamp)
      has_two_stamps[x.user] = true;
    const Index cur = held_out[x.user];
    if (cur == none || x.timestamp > interactions[cur].timestamp ||
        (x.timestamp == interactions[cur].timestamp && x.item > interactions[cur].item))
      held_out[x.user] = p;
  }
  for (Index u = 0; u < n_users; ++u)
    if (!has_two_stamps[u])
      fail(ErrorKind::data, "user " + out.user_index.id(u) +
                                " has fewer than 2 interactions with distinct timestamps");

  std::vector<Triplet> train, test;
  train.reserve(interactions.size() - n_users);
  test.reserve(n_users);
  for (std::size_t p = 0; p < interactions.size(); ++p) {
    const auto& x = interactions[p];
    (held_out[x.user] == p ? test : train).push_back({x.user, x.item});
  }
  out.train = from_triplets(train, n_users, n_items);
  out.test = from_triplets(test, n_users, n_items);
  return out;
}

/// The full pre-processing chain applied by the `split` command.
inline SplitDataset preprocess(const std::vector<RatingEvent>& events,
                               std::size_t min_distinct = 2) {
  return leave_last_out_split(
      filter_min_distinct_timestamps(collapse_duplicates(binarize(events)), min_distinct));
}

inline void write_index_map(std::ostream& out, const SplitDataset& ds) {
  for (Index i = 0; i < ds.user_index.size(); ++i)
    out << "user\t" << ds.user_index.id(i) << '\t' << i << '\n';
  for (Index i = 0; i < ds.item_index.size(); ++i)
    out << "item\t" << ds.item_index.id(i) << '\t' << i << '\n';
}

/// Writes train.tsv, test.tsv and index_map.tsv into `dir`.
inline void write_split(const std::filesystem::path& dir, const SplitDataset& ds) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) fail(ErrorKind::io, "cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("train.tsv");
    write_triplets(f, ds.train);
  }
  {
    auto f = open("test.tsv");
    write_triplets(f, ds.test);
  }
  {
    auto f = open("index_map.tsv");
    write_index_map(f, ds);
  }
}

}  // namespace fractex::ingest
