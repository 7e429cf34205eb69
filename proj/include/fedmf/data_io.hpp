/*
 * Copyright 2026 The FedMF Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Rating data: MovieLens ratings.csv parsing, most-rated item subsets and
// synthetic generators.

#ifndef FEDMF_DATA_IO_HPP_
#define FEDMF_DATA_IO_HPP_

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedmf/mf_core.hpp"

namespace fedmf {

struct DatasetStats {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t n_ratings = 0;
  double density = 0.0;
};

inline DatasetStats stats(const RatingTable& t) {
  DatasetStats s{t.n_users(), t.n_items(), t.size(), 0.0};
  if (s.n_users > 0 && s.n_items > 0) {
    s.density = static_cast<double>(s.n_ratings) /
                (static_cast<double>(s.n_users) * static_cast<double>(s.n_items));
  }
  return s;
}

// A rating table plus the original ids behind each contiguous index.
struct Dataset {
  RatingTable ratings;
  std::vector<std::int64_t> user_ids;
  std::vector<std::int64_t> item_ids;
};

namespace internal {

template <typename T>
T parse_field(std::string_view s, std::size_t line, const char* what) {
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw FormatError("line " + std::to_string(line) + ": bad " + what + " '" +
                      std::string(s) + "'");
  }
  return value;
}

inline std::vector<std::size_t> index_of(std::vector<std::int64_t>& ids,
                                         const std::vector<std::int64_t>& raw) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::vector<std::size_t> out(raw.size());
  for (std::size_t n = 0; n < raw.size(); ++n) {
    out[n] = static_cast<std::size_t>(
        std::lower_bound(ids.begin(), ids.end(), raw[n]) - ids.begin());
  }
  return out;
}

}  // namespace internal

// Parses "userId,movieId,rating,timestamp" CSV. Users and items are
// re-indexed contiguously in ascending original-id order.
inline Dataset parse_ratings(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "userId,movieId,rating,timestamp") {
    throw FormatError("line 1: expected header userId,movieId,rating,timestamp");
  }
  std::vector<std::int64_t> users, items;
  std::vector<double> values;
  std::set<std::pair<std::int64_t, std::int64_t>> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<std::string_view, 4> f;
    std::string_view rest(line);
    for (std::size_t n = 0; n < 4; ++n) {
      const auto comma = rest.find(',');
      if ((comma == std::string_view::npos) != (n == 3)) {
        throw FormatError("line " + std::to_string(line_no) +
                          ": expected 4 comma-separated fields");
      }
      f[n] = rest.substr(0, comma);
      if (comma != std::string_view::npos) rest.remove_prefix(comma + 1);
    }
    const auto user = internal::parse_field<std::int64_t>(f[0], line_no, "userId");
    const auto item = internal::parse_field<std::int64_t>(f[1], line_no, "movieId");
    const auto rating = internal::parse_field<double>(f[2], line_no, "rating");
    internal::parse_field<std::int64_t>(f[3], line_no, "timestamp");
    if (!std::isfinite(rating)) {
      throw FormatError("line " + std::to_string(line_no) + ": non-finite rating");
    }
    if (!seen.insert({user, item}).second) {
      throw FormatError("line " + std::to_string(line_no) + ": duplicate rating for user " +
                        std::to_string(user) + ", movie " + std::to_string(item));
    }
    users.push_back(user);
    items.push_back(item);
    values.push_back(rating);
  }
  Dataset d;
  d.user_ids = users;
  d.item_ids = items;
  const auto ui = internal::index_of(d.user_ids, users);
  const auto ii = internal::index_of(d.item_ids, items);
  std::vector<Rating> rs(values.size());
  for (std::size_t n = 0; n < values.size(); ++n) rs[n] = {ui[n], ii[n], values[n]};
  d.ratings = RatingTable(d.user_ids.size(), d.item_ids.size(), std::move(rs));
  return d;
}

inline Dataset parse_ratings_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open '" + path + "'");
  return parse_ratings(f);
}

inline void write_ratings_csv(std::ostream& out, const Dataset& d) {
  out << "userId,movieId,rating,timestamp\n";
  for (const Rating& r : d.ratings.entries()) {
    out << d.user_ids[r.user] << ',' << d.item_ids[r.item] << ','
        << format_double(r.value) << ",0\n";
  }
}

// Keeps the k most-rated items (ties go to the smaller original id), in
// ascending original-id order. Users left without ratings stay in the index
// unless drop_empty_users is set.
inline Dataset select_top_items(const Dataset& d, std::size_t k,
                                bool drop_empty_users = false) {
  const std::size_t m = d.ratings.n_items();
  if (k < 1 || k > m) {
    throw InvalidArgument("k = " + std::to_string(k) + " outside [1, " +
                          std::to_string(m) + "]");
  }
  std::vector<std::size_t> count(m, 0);
  for (const Rating& r : d.ratings.entries()) ++count[r.item];
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (count[a] != count[b]) return count[a] > count[b];
    return d.item_ids[a] < d.item_ids[b];
  });
  order.resize(k);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return d.item_ids[a] < d.item_ids[b]; });
  std::vector<std::size_t> new_item(m, m);
  Dataset out;
  for (std::size_t n = 0; n < k; ++n) {
    new_item[order[n]] = n;
    out.item_ids.push_back(d.item_ids[order[n]]);
  }

  std::vector<std::size_t> new_user(d.ratings.n_users());
  std::vector<bool> keep_user(d.ratings.n_users(), !drop_empty_users);
  for (const Rating& r : d.ratings.entries()) {
    if (new_item[r.item] < m) keep_user[r.user] = true;
  }
  for (std::size_t u = 0; u < new_user.size(); ++u) {
    if (!keep_user[u]) continue;
    new_user[u] = out.user_ids.size();
    out.user_ids.push_back(d.user_ids[u]);
  }
  std::vector<Rating> rs;
  for (const Rating& r : d.ratings.entries()) {
    if (new_item[r.item] < m) rs.push_back({new_user[r.user], new_item[r.item], r.value});
  }
  out.ratings = RatingTable(out.user_ids.size(), k, std::move(rs));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data.

struct LowRankInstance {
  RatingTable ratings;
  ProfileMatrix users;
  ProfileMatrix items;
};

// Ratings <u_i, v_j> + N(0, noise^2) on a Bernoulli(density) mask. Profile
// entries are uniform in [sqrt(1/d), sqrt(5/d)], so noiseless ratings fall
// in [1, 5].
inline LowRankInstance synth_lowrank(std::size_t n, std::size_t m,
                                     std::size_t d_true, double noise,
                                     double density, std::uint64_t seed) {
  if (n == 0 || m == 0 || d_true == 0) {
    throw InvalidArgument("synthetic sizes must be positive");
  }
  if (!(noise >= 0.0)) throw InvalidArgument("noise must be >= 0");
  if (!(density > 0.0 && density <= 1.0)) {
    throw InvalidArgument("density must be in (0, 1]");
  }
  SplitMix64 rng(derive_seed(seed, 0x5eed));
  const double lo = std::sqrt(1.0 / static_cast<double>(d_true));
  const double hi = std::sqrt(5.0 / static_cast<double>(d_true));
  LowRankInstance out{RatingTable(), ProfileMatrix(n, d_true), ProfileMatrix(m, d_true)};
  for (double& x : out.users.values()) x = lo + (hi - lo) * rng.uniform();
  for (double& x : out.items.values()) x = lo + (hi - lo) * rng.uniform();
  std::vector<Rating> rs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (density < 1.0 && !(rng.uniform() < density)) continue;
      double r = predict(out.users.row(i), out.items.row(j));
      if (noise > 0.0) r += noise * rng.normal();
      rs.push_back({i, j, r});
    }
  }
  out.ratings = RatingTable(n, m, std::move(rs));
  return out;
}

// Stand-in for ml-latest-small when the file is not available: 610 users,
// 9724 items, half-star ratings in [0.5, 5]. Item popularity follows a
// cumulative curve interpolated (log-log) through these (top-k items,
// ratings) anchors, so most-rated subsets have realistic sizes. The anchors
// up to 2560 are the subset sizes published with the FedMF timing table;
// the last one is the full dataset size.
inline Dataset synth_movielens_like(std::uint64_t seed) {
  constexpr std::size_t kUsers = 610;
  constexpr std::size_t kItems = 9724;
  static constexpr std::array<std::pair<double, double>, 8> kAnchors{{
      {40, 8307}, {80, 13817}, {160, 22282}, {320, 34172},
      {640, 49706}, {1280, 67558}, {2560, 83616}, {9724, 100836}}};
  auto cumulative = [](double k) {
    const auto& a = kAnchors;
    std::size_t seg = 0;
    while (seg + 2 < a.size() && k > a[seg + 1].first) ++seg;
    const double slope = std::log(a[seg + 1].second / a[seg].second) /
                         std::log(a[seg + 1].first / a[seg].first);
    return a[seg].second * std::pow(k / a[seg].first, slope);
  };

  SplitMix64 rng(derive_seed(seed, 0x4d4c));
  std::vector<double> activity(kUsers);
  for (double& w : activity) w = std::exp(1.2 * rng.normal());
  std::vector<double> user_bias(kUsers);
  for (double& b : user_bias) b = 0.5 * rng.normal();

  // Popularity rank r gets round(C(r)) - round(C(r-1)) ratings, at least 1.
  std::vector<Rating> rs;
  std::vector<std::pair<double, std::size_t>> keys(kUsers);
  double prev = 0.0;
  for (std::size_t rank = 1; rank <= kItems; ++rank) {
    const double c = std::round(cumulative(static_cast<double>(rank)));
    std::size_t count = static_cast<std::size_t>(std::max(1.0, c - prev));
    count = std::min(count, kUsers);
    prev = std::max(prev + 1.0, c);
    // Weighted sampling without replacement: largest u^(1/w).
    for (std::size_t u = 0; u < kUsers; ++u) {
      keys[u] = {std::log(rng.uniform() + 1e-300) / activity[u], u};
    }
    std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(count),
                      keys.end(), std::greater<>());
    const double item_bias = 0.4 * rng.normal();
    const std::size_t item = rank - 1;
    for (std::size_t n = 0; n < count; ++n) {
      const std::size_t u = keys[n].second;
      double r = 3.5 + user_bias[u] + item_bias + 0.8 * rng.normal();
      r = std::clamp(std::round(2.0 * r) / 2.0, 0.5, 5.0);
      rs.push_back({u, item, r});
    }
  }
  Dataset d;
  d.ratings = RatingTable(kUsers, kItems, std::move(rs));
  d.user_ids.resize(kUsers);
  std::iota(d.user_ids.begin(), d.user_ids.end(), 1);
  // Spread item ids so popularity is not visible in the id order.
  std::vector<std::int64_t> ids(kItems);
  std::iota(ids.begin(), ids.end(), 1);
  for (std::size_t i = kItems - 1; i > 0; --i) {
    std::swap(ids[i], ids[rng.below(i + 1)]);
  }
  // Index order must follow ascending original id.
  std::vector<std::size_t> new_index(kItems);
  std::vector<std::size_t> by_id(kItems);
  std::iota(by_id.begin(), by_id.end(), 0);
  std::sort(by_id.begin(), by_id.end(),
            [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  for (std::size_t n = 0; n < kItems; ++n) new_index[by_id[n]] = n;
  std::vector<Rating> remapped;
  remapped.reserve(d.ratings.size());
  for (const Rating& r : d.ratings.entries()) {
    remapped.push_back({r.user, new_index[r.item], r.value});
  }
  d.ratings = RatingTable(kUsers, kItems, std::move(remapped));
  d.item_ids.resize(kItems);
  for (std::size_t n = 0; n < kItems; ++n) d.item_ids[n] = ids[by_id[n]];
  return d;
}

// Parses "NxMxD" (users x items x latent dim) as used by --synthetic.
inline std::array<std::size_t, 3> parse_synthetic_spec(std::string_view s) {
  std::array<std::size_t, 3> out{};
  for (std::size_t n = 0; n < 3; ++n) {
    const auto x = s.find('x');
    if ((x == std::string_view::npos) != (n == 2)) {
      throw InvalidArgument("synthetic spec must look like 20x30x5");
    }
    const std::string_view part = s.substr(0, x);
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), out[n]);
    if (ec != std::errc() || ptr != part.data() + part.size() || part.empty() ||
        out[n] == 0) {
      throw InvalidArgument("synthetic spec must look like 20x30x5");
    }
    if (x != std::string_view::npos) s.remove_prefix(x + 1);
  }
  return out;
}

}  // namespace fedmf

#endif  // FEDMF_DATA_IO_HPP_
