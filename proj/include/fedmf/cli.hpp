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

// The fedmf command line: train, attack, bench.

#ifndef FEDMF_CLI_HPP_
#define FEDMF_CLI_HPP_

#include <cstdlib>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedmf/attack.hpp"
#include "fedmf/bench.hpp"
#include "fedmf/data_io.hpp"
#include "fedmf/mf_core.hpp"
#include "fedmf/protocol.hpp"
#include "fedmf/transcript.hpp"

namespace fedmf {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

class UsageError : public Error {
 public:
  using Error::Error;
};

// FEDMF_SEED, when set, replaces the default seed of every subcommand.
inline std::uint64_t default_seed() {
  const char* env = std::getenv("FEDMF_SEED");
  if (env == nullptr || *env == '\0') return 0;
  std::uint64_t seed = 0;
  const std::string_view s(env);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), seed);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw UsageError("FEDMF_SEED must be an unsigned integer, got '" + std::string(s) + "'");
  }
  return seed;
}

struct TrainOptions {
  std::string mode = "plaintext";
  std::string payload = "part";
  std::optional<std::string> data;
  std::optional<std::string> synthetic;
  std::optional<std::size_t> items;
  double density = 1.0;
  double noise = 0.0;
  std::size_t dim = 10;
  std::size_t iters = 20;
  double lr = 0.01;
  double lambda = 1e-4;
  double mu = 1e-4;
  double stop_threshold = 1e-4;
  std::size_t key_bits = 256;
  int exponent = kDefaultExponent;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> crypto_seed;
  std::string transport = "memory";
  std::optional<std::string> record_transcript;
  bool embed_ground_truth = false;
  std::optional<std::string> out;
  std::optional<std::string> metrics;
};

struct AttackOptions {
  std::string transcript;
  std::size_t user = 0;
  std::size_t round = 0;
  std::string rating_range = "1,5";
  std::optional<std::string> out;
};

struct BenchOptions {
  std::vector<std::size_t> items{40, 80, 160, 320};
  std::size_t key_bits = 256;
  std::size_t dim = 10;
  std::string payload = "both";
  std::optional<double> max_seconds;
  std::optional<std::string> data;
  std::uint64_t seed = 0;
  std::size_t warmup = 1;
  std::string out = "bench";
};

namespace internal {

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw Error("write to '" + path + "' failed");
}

inline Json matrix_json(const ProfileMatrix& m) {
  return {{"rows", m.rows()}, {"dim", m.dim()}, {"values", wire::reals(m.values())}};
}

inline RatingRange parse_range(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw UsageError("--rating-range must be LO,HI");
  try {
    return {parse_double(s.substr(0, comma)), parse_double(s.substr(comma + 1))};
  } catch (const Error&) {
    throw UsageError("--rating-range must be LO,HI");
  }
}

}  // namespace internal

inline int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  if (o.data.has_value() == o.synthetic.has_value()) {
    throw UsageError("give exactly one of --data or --synthetic");
  }
  if (o.mode != "centralized" && o.mode != "plaintext" && o.mode != "encrypted") {
    throw UsageError("--mode must be centralized, plaintext or encrypted");
  }
  if (o.transport != "memory" && o.transport != "tcp") {
    throw UsageError("--transport must be memory or tcp");
  }

  RatingTable ratings;
  if (o.data) {
    Dataset d = parse_ratings_file(*o.data);
    if (o.items) d = select_top_items(d, *o.items);
    ratings = std::move(d.ratings);
  } else {
    if (o.items) throw UsageError("--items applies to --data only");
    const auto spec = parse_synthetic_spec(*o.synthetic);
    ratings = synth_lowrank(spec[0], spec[1], spec[2], o.noise, o.density, o.seed).ratings;
  }

  TrainConfig cfg;
  cfg.dim = o.dim;
  cfg.learning_rate = o.lr;
  cfg.lambda_u = o.lambda;
  cfg.mu_v = o.mu;
  cfg.max_iters = o.iters;
  cfg.stop_threshold = o.stop_threshold;
  cfg.seed = o.seed;
  cfg.payload_mode = parse_payload_mode(o.payload);
  cfg.validate();

  Json result{{"mode", o.mode}, {"config", config_to_json(cfg)},
              {"n_users", ratings.n_users()}, {"n_items", ratings.n_items()}};
  Json metrics = Json::array();
  ProfileMatrix users, items;
  std::vector<double> loss_history;
  std::size_t iterations = 0;

  if (o.mode == "centralized") {
    if (o.record_transcript) {
      throw UsageError("--record-transcript needs --mode plaintext or encrypted");
    }
    TrainResult r = train_centralized(ratings, cfg);
    users = std::move(r.users);
    items = std::move(r.items);
    loss_history = std::move(r.loss_history);
    iterations = r.iterations;
  } else {
    FederationConfig fc;
    fc.train = cfg;
    fc.mode = o.mode == "plaintext" ? Mode::kPlaintext : Mode::kEncrypted;
    fc.key_bits = o.key_bits;
    fc.exponent = o.exponent;
    fc.crypto_seed = o.crypto_seed;
    fc.record_transcript = o.record_transcript.has_value();
    std::unique_ptr<Transport> transport;
    if (o.transport == "tcp") {
      transport = std::make_unique<TcpTransport>();
    } else {
      transport = std::make_unique<InMemoryTransport>();
    }
    FederationResult r = run_federation(ratings, fc, *transport);
    for (const RoundMetrics& m : r.rounds) {
      metrics.push_back({{"round", m.round},
                         {"wall_seconds", m.wall_seconds},
                         {"client_seconds", m.client_seconds},
                         {"server_seconds", m.server_seconds},
                         {"transfer_seconds", m.transfer_seconds},
                         {"bytes_up", m.bytes_up},
                         {"bytes_down", m.bytes_down}});
    }
    if (o.record_transcript) {
      Bytes file;
      if (fc.mode == Mode::kPlaintext) {
        Transcript t = std::move(*r.transcript);
        if (o.embed_ground_truth) t.ground_truth = ratings;
        file = encode_transcript(t);
      } else {
        Transcript info;
        info.config = cfg;
        info.n_users = ratings.n_users();
        info.n_items = ratings.n_items();
        if (o.embed_ground_truth) info.ground_truth = ratings;
        file = encode_encrypted_transcript(info, *r.public_key, r.cipher_log);
      }
      write_file(*o.record_transcript, file);
    }
    users = std::move(r.users);
    items = std::move(r.items);
    loss_history = std::move(r.loss_history);
    iterations = r.iterations;
  }

  result["iterations"] = iterations;
  result["loss_history"] = wire::reals(loss_history);
  result["users"] = internal::matrix_json(users);
  result["items"] = internal::matrix_json(items);
  if (o.out) internal::write_text(*o.out, result.dump(1) + "\n");
  if (o.metrics) internal::write_text(*o.metrics, metrics.dump(1) + "\n");
  out << "mode=" << o.mode << " users=" << ratings.n_users()
      << " items=" << ratings.n_items() << " ratings=" << ratings.size()
      << " iterations=" << iterations << " loss " << format_double(loss_history.front())
      << " -> " << format_double(loss_history.back()) << "\n";
  (void)err;
  return kExitOk;
}

inline int cmd_attack(const AttackOptions& o, std::ostream& out, std::ostream& err) {
  const RatingRange range = internal::parse_range(o.rating_range);
  const TranscriptFile file = read_transcript(o.transcript);
  const AttackReport rep = attack(file, o.user, o.round, range);
  const std::string text = report_to_json(rep).dump(1) + "\n";
  if (o.out) {
    internal::write_text(*o.out, text);
  } else {
    out << text;
  }
  if (!rep.success) err << "attack: " << rep.diagnostics << "\n";
  return kExitOk;
}

inline int cmd_bench(const BenchOptions& o, std::ostream& out, std::ostream& err) {
  BenchConfig cfg;
  cfg.items = o.items;
  cfg.key_bits = o.key_bits;
  cfg.dim = o.dim;
  cfg.seed = o.seed;
  cfg.max_seconds = o.max_seconds;
  cfg.data_path = o.data;
  cfg.warmup_iterations = o.warmup;
  if (o.payload == "both") {
    cfg.payloads = {PayloadMode::kPartText, PayloadMode::kFullText};
  } else {
    cfg.payloads = {parse_payload_mode(o.payload)};
  }
  const BenchReport report = run_bench(cfg, err);
  internal::write_text(o.out + ".json", bench_to_json(report).dump(1) + "\n");
  internal::write_text(o.out + ".csv", bench_to_csv(report));
  out << bench_to_csv(report);
  return kExitOk;
}

// Parses argv and dispatches. Returns the process exit status.
inline int run_cli(int argc, const char* const* argv, std::ostream& out,
                   std::ostream& err) {
  CLI::App app{"Federated matrix factorization with Paillier-encrypted gradients"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  try {
    seed = default_seed();
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  TrainOptions train;
  train.seed = seed;
  auto* t = app.add_subcommand("train", "train profiles centrally or over the protocol");
  t->add_option("--mode", train.mode, "centralized | plaintext | encrypted")
      ->check(CLI::IsMember({"centralized", "plaintext", "encrypted"}));
  t->add_option("--payload", train.payload, "full | part")
      ->check(CLI::IsMember({"full", "part"}));
  t->add_option("--data", train.data, "MovieLens ratings.csv");
  t->add_option("--synthetic", train.synthetic, "USERSxITEMSxDIM low-rank instance");
  t->add_option("--items", train.items, "keep the K most-rated items of --data");
  t->add_option("--density", train.density, "synthetic mask density");
  t->add_option("--noise", train.noise, "synthetic rating noise (std dev)");
  t->add_option("--dim", train.dim, "latent dimension");
  t->add_option("--iters", train.iters, "maximum iterations");
  t->add_option("--lr", train.lr, "learning rate");
  t->add_option("--lambda", train.lambda, "user regularization");
  t->add_option("--mu", train.mu, "item regularization");
  t->add_option("--stop", train.stop_threshold, "stop when every payload entry is below this");
  t->add_option("--key-bits", train.key_bits, "Paillier modulus size");
  t->add_option("--exponent", train.exponent, "fixed-point exponent (base 2)");
  t->add_option("--seed", train.seed, "initialization seed (default $FEDMF_SEED or 0)");
  t->add_option("--crypto-seed", train.crypto_seed,
                "fix keys and nonces for reproducible runs (not secure)");
  t->add_option("--transport", train.transport, "memory | tcp")
      ->check(CLI::IsMember({"memory", "tcp"}));
  t->add_option("--record-transcript", train.record_transcript, "write the server transcript");
  t->add_flag("--embed-ground-truth", train.embed_ground_truth,
              "include the private ratings in the transcript (evaluation only)");
  t->add_option("--out", train.out, "write profiles and loss history as JSON");
  t->add_option("--metrics", train.metrics, "write per-round timings as JSON");

  AttackOptions atk;
  auto* a = app.add_subcommand("attack", "recover a user's ratings from a plaintext transcript");
  a->add_option("--transcript", atk.transcript, "transcript file")->required();
  a->add_option("--user", atk.user, "target user index")->required();
  a->add_option("--round", atk.round, "first of the two rounds used")->required();
  a->add_option("--rating-range", atk.rating_range, "plausible ratings LO,HI");
  a->add_option("--out", atk.out, "write the JSON report here instead of stdout");

  BenchOptions bench;
  bench.seed = seed;
  auto* b = app.add_subcommand("bench", "time encrypted iterations over item subsets");
  b->add_option("--items", bench.items, "item counts, comma separated")->delimiter(',');
  b->add_option("--key-bits", bench.key_bits, "Paillier modulus size");
  b->add_option("--dim", bench.dim, "latent dimension");
  b->add_option("--payload", bench.payload, "both | full | part")
      ->check(CLI::IsMember({"both", "full", "part"}));
  b->add_option("--max-seconds", bench.max_seconds, "refuse configurations past this budget");
  b->add_option("--data", bench.data, "MovieLens ratings.csv (synthetic stand-in if absent)");
  b->add_option("--seed", bench.seed, "seed (default $FEDMF_SEED or 0)");
  b->add_option("--warmup", bench.warmup, "untimed iterations before the sweep");
  b->add_option("--out", bench.out, "output prefix for .json and .csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*t) return cmd_train(train, out, err);
    if (*a) return cmd_attack(atk, out, err);
    return cmd_bench(bench, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace fedmf

#endif  // FEDMF_CLI_HPP_
