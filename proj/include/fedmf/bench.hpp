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

// Per-iteration timing of encrypted federated training over most-rated item
// subsets, with the client/server split and bytes on the wire.

#ifndef FEDMF_BENCH_HPP_
#define FEDMF_BENCH_HPP_

#include <chrono>
#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fedmf/data_io.hpp"
#include "fedmf/protocol.hpp"
#include "fedmf/wire.hpp"

namespace fedmf {

struct PublishedTiming {
  std::size_t ratings;
  double parttext_seconds;
  double fulltext_seconds;
};

// Timing table published with FedMF (1024-bit keys, d = 100, Python + gmpy).
// Kept for side-by-side inspection only; the hardware and parameters differ.
inline const std::map<std::size_t, PublishedTiming>& published_timings() {
  static const std::map<std::size_t, PublishedTiming> table{
      {40, {8307, 34.39, 90.94}},      {50, {9807, 44.05, 113.34}},
      {60, {11214, 46.34, 141.52}},    {80, {13817, 52.91, 182.27}},
      {160, {22282, 92.81, 374.85}},   {320, {34172, 140.51, 725.72}},
      {640, {49706, 178.24, 1479.40}}, {1280, {67558, 264.10, 2919.91}},
      {2560, {83616, 334.79, 5786.01}}};
  return table;
}

struct BenchConfig {
  std::vector<std::size_t> items{40, 80, 160, 320};
  std::vector<PayloadMode> payloads{PayloadMode::kPartText, PayloadMode::kFullText};
  std::size_t key_bits = 256;
  std::size_t dim = 10;
  std::uint64_t seed = 0;
  std::optional<double> max_seconds;
  std::optional<std::string> data_path;
  // Untimed iterations run once before the sweep, on its first configuration.
  std::size_t warmup_iterations = 1;
  double link_bits_per_second = 1e9;
};

struct BenchRow {
  PayloadMode payload = PayloadMode::kFullText;
  std::size_t n_items = 0;
  std::size_t n_users = 0;
  std::size_t n_ratings = 0;
  double seconds_per_iteration = 0.0;  // wall clock
  double client_seconds = 0.0;
  double server_seconds = 0.0;
  double transfer_seconds = 0.0;
  std::uint64_t bytes_per_iteration = 0;
  double modeled_transfer_seconds = 0.0;
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

inline LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw InvalidArgument("need at least two points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw InvalidArgument("x values are all equal");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return f;
}

struct BenchReport {
  BenchConfig config;
  std::string data_source;
  std::vector<BenchRow> rows;

  const BenchRow* find(PayloadMode p, std::size_t items) const {
    for (const auto& r : rows) {
      if (r.payload == p && r.n_items == items) return &r;
    }
    return nullptr;
  }

  std::optional<LinearFit> fit(PayloadMode p) const {
    std::vector<double> x, y;
    for (const auto& r : rows) {
      if (r.payload != p) continue;
      x.push_back(static_cast<double>(r.n_items));
      y.push_back(r.seconds_per_iteration);
    }
    if (x.size() < 2) return std::nullopt;
    return fit_line(x, y);
  }
};

class BudgetExceeded : public Error {
 public:
  using Error::Error;
};

inline Dataset bench_dataset(const BenchConfig& cfg, std::string& source) {
  if (cfg.data_path) {
    source = *cfg.data_path;
    return parse_ratings_file(*cfg.data_path);
  }
  source = "synthetic MovieLens-shaped (610 users, 9724 items)";
  return synth_movielens_like(cfg.seed);
}

namespace internal {

inline FederationConfig bench_federation(const BenchConfig& cfg, PayloadMode payload,
                                         std::size_t iterations) {
  FederationConfig fc;
  fc.mode = Mode::kEncrypted;
  fc.key_bits = cfg.key_bits;
  fc.crypto_seed = cfg.seed;
  fc.train.dim = cfg.dim;
  fc.train.seed = cfg.seed;
  fc.train.max_iters = iterations;
  fc.train.stop_threshold = 0.0;
  fc.train.payload_mode = payload;
  return fc;
}

}  // namespace internal

// Warm-up iterations on the first configuration, then one timed encrypted
// iteration per (payload, item count).
inline BenchReport run_bench(const BenchConfig& cfg, std::ostream& log) {
  BenchReport report;
  report.config = cfg;
  const Dataset full = bench_dataset(cfg, report.data_source);
  log << "bench: data " << report.data_source << ", " << full.ratings.size()
      << " ratings\n";

  if (cfg.items.empty() || cfg.payloads.empty()) {
    throw InvalidArgument("bench needs at least one item count and payload mode");
  }
  if (cfg.warmup_iterations > 0) {
    InMemoryTransport transport;
    run_federation(select_top_items(full, cfg.items.front()).ratings,
                   internal::bench_federation(cfg, cfg.payloads.front(),
                                              cfg.warmup_iterations),
                   transport);
  }

  const auto start = std::chrono::steady_clock::now();
  double per_item_estimate = 0.0;  // seconds per item per run, from earlier runs
  for (PayloadMode payload : cfg.payloads) {
    for (std::size_t k : cfg.items) {
      const Dataset d = select_top_items(full, k);
      const double spent =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (cfg.max_seconds) {
        const double projected = per_item_estimate * static_cast<double>(k);
        if (spent + projected > *cfg.max_seconds) {
          throw BudgetExceeded("configuration " + std::string(to_string(payload)) +
                               "/" + std::to_string(k) + " items would exceed --max-seconds " +
                               format_double(*cfg.max_seconds) + " (spent " +
                               format_double(spent) + " s, projected " +
                               format_double(projected) + " s)");
        }
      }

      const FederationConfig fc = internal::bench_federation(cfg, payload, 1);
      InMemoryTransport transport;
      const auto run_start = std::chrono::steady_clock::now();
      const FederationResult res = run_federation(d.ratings, fc, transport);
      const double run_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();
      per_item_estimate = std::max(per_item_estimate, run_seconds / static_cast<double>(k));

      const RoundMetrics& m = res.rounds.back();
      BenchRow row;
      row.payload = payload;
      row.n_items = k;
      row.n_users = d.ratings.n_users();
      row.n_ratings = d.ratings.size();
      row.client_seconds = m.client_seconds;
      row.server_seconds = m.server_seconds;
      row.transfer_seconds = m.transfer_seconds;
      row.seconds_per_iteration = m.wall_seconds;
      row.bytes_per_iteration = m.bytes_up + m.bytes_down;
      row.modeled_transfer_seconds =
          8.0 * static_cast<double>(row.bytes_per_iteration) / cfg.link_bits_per_second;
      report.rows.push_back(row);
      log << "bench: " << to_string(payload) << " items=" << k
          << " ratings=" << row.n_ratings << " iter=" << row.seconds_per_iteration
          << "s client=" << row.client_seconds << "s server=" << row.server_seconds
          << "s transfer=" << row.transfer_seconds << "s bytes=" << row.bytes_per_iteration
          << "\n";
    }
  }
  return report;
}

inline Json bench_to_json(const BenchReport& r) {
  Json rows = Json::array();
  for (const BenchRow& row : r.rows) {
    Json j{{"mode", "encrypted"},
           {"payload", to_string(row.payload)},
           {"n_items", row.n_items},
           {"n_users", row.n_users},
           {"n_ratings", row.n_ratings},
           {"seconds_per_iteration", row.seconds_per_iteration},
           {"client_seconds", row.client_seconds},
           {"server_seconds", row.server_seconds},
           {"transfer_seconds", row.transfer_seconds},
           {"server_share", row.seconds_per_iteration > 0
                                ? row.server_seconds / row.seconds_per_iteration
                                : 0.0},
           {"bytes_per_iteration", row.bytes_per_iteration},
           {"modeled_transfer_seconds_1gbps", row.modeled_transfer_seconds}};
    const auto it = published_timings().find(row.n_items);
    if (it != published_timings().end()) {
      j["published_ratings"] = it->second.ratings;
      j["published_seconds"] = row.payload == PayloadMode::kFullText
                                   ? it->second.fulltext_seconds
                                   : it->second.parttext_seconds;
    }
    rows.push_back(std::move(j));
  }
  Json out{{"environment",
            {{"key_bits", r.config.key_bits},
             {"dim", r.config.dim},
             {"seed", r.config.seed},
             {"warmup_iterations", r.config.warmup_iterations},
             {"data", r.data_source},
             {"published_parameters", "key_bits 1024, dim 100, Python + gmpy"}}},
           {"rows", std::move(rows)}};
  for (PayloadMode p : {PayloadMode::kFullText, PayloadMode::kPartText}) {
    if (const auto f = r.fit(p)) {
      out["fits"][to_string(p)] = {
          {"slope", f->slope}, {"intercept", f->intercept}, {"r_squared", f->r_squared}};
    }
  }
  return out;
}

// One line per item count, Table 1 layout first, then the split columns.
inline std::string bench_to_csv(const BenchReport& r) {
  std::ostringstream out;
  out << "items,ratings,parttext_seconds,fulltext_seconds,"
         "parttext_client_seconds,parttext_server_seconds,"
         "fulltext_client_seconds,fulltext_server_seconds,"
         "parttext_bytes,fulltext_bytes,fulltext_modeled_transfer_1gbps,"
         "published_ratings,published_parttext_seconds,published_fulltext_seconds\n";
  std::vector<std::size_t> items;
  for (const auto& row : r.rows) {
    if (std::find(items.begin(), items.end(), row.n_items) == items.end()) {
      items.push_back(row.n_items);
    }
  }
  std::sort(items.begin(), items.end());
  auto cell = [&](const BenchRow* row, auto member) -> std::string {
    if (row == nullptr) return "";
    std::ostringstream s;
    s << row->*member;
    return s.str();
  };
  for (std::size_t k : items) {
    const BenchRow* part = r.find(PayloadMode::kPartText, k);
    const BenchRow* full = r.find(PayloadMode::kFullText, k);
    const BenchRow* any = part != nullptr ? part : full;
    out << k << ',' << any->n_ratings << ','
        << cell(part, &BenchRow::seconds_per_iteration) << ','
        << cell(full, &BenchRow::seconds_per_iteration) << ','
        << cell(part, &BenchRow::client_seconds) << ','
        << cell(part, &BenchRow::server_seconds) << ','
        << cell(full, &BenchRow::client_seconds) << ','
        << cell(full, &BenchRow::server_seconds) << ','
        << cell(part, &BenchRow::bytes_per_iteration) << ','
        << cell(full, &BenchRow::bytes_per_iteration) << ','
        << cell(full, &BenchRow::modeled_transfer_seconds) << ',';
    const auto it = published_timings().find(k);
    if (it != published_timings().end()) {
      out << it->second.ratings << ',' << it->second.parttext_seconds << ','
          << it->second.fulltext_seconds;
    } else {
      out << ",,";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace fedmf

#endif  // FEDMF_BENCH_HPP_
