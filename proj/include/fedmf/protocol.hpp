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

// Federated matrix-factorization protocol between one server and n clients.
//
// Setup (encrypted mode): client 0 generates the Paillier keypair, sends the
// public key to the server and both keys to every other client over
// client-to-client links. The server never receives the secret key.
//
// Each round, clients go in ascending user id order:
//
//   client -> server  PROFILES  {"request": "all" | [item ids]}
//   server -> client  PROFILES  requested item rows (plain or encrypted)
//   client -> server  GRADIENT  lr * item gradients (plain or encrypted)
//
// and the server applies each GRADIENT before answering the next client:
// v_j <- v_j - g_j in plaintext, C_vj <- C_vj * C_gj^(n-1) when encrypted.
// FullText clients download and upload every item row; PartText clients
// only touch the items they rated.
//
// After the last client the server applies the mu term to every row. With
// encrypted profiles this needs a plaintext multiply, so client 0 downloads
// all rows and uploads the encrypted delta lr * 2 mu v_j instead
// ("kind": "regularizer").
//
// Stopping: in plaintext mode the server stops once the largest payload
// entry of a round is below the threshold, same as the reference trainer.
// In encrypted mode the server cannot read payloads, so it runs to max_iters
// unless client voting is enabled (each upload then carries "vote": true
// when the client's own payload is below the threshold).

#ifndef FEDMF_PROTOCOL_HPP_
#define FEDMF_PROTOCOL_HPP_

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedmf/encoding.hpp"
#include "fedmf/mf_core.hpp"
#include "fedmf/paillier.hpp"
#include "fedmf/transport.hpp"
#include "fedmf/wire.hpp"

namespace fedmf {

enum class Mode { kPlaintext, kEncrypted };

inline const char* to_string(Mode mode) {
  return mode == Mode::kPlaintext ? "plaintext" : "encrypted";
}

struct FederationConfig {
  TrainConfig train;
  Mode mode = Mode::kPlaintext;
  std::size_t key_bits = 256;
  int exponent = kDefaultExponent;
  unsigned headroom_bits = kDefaultHeadroomBits;
  bool client_vote = false;
  bool record_transcript = false;
  bool capture_server_stream = false;
  // Fixes key generation and encryption nonces; from OS entropy when unset.
  std::optional<std::uint64_t> crypto_seed;
};

struct EncryptedItemProfiles {
  std::size_t rows = 0;
  std::size_t dim = 0;
  int exponent = kDefaultExponent;
  std::vector<BigInt> cells;  // row-major

  BigInt& cell(std::size_t i, std::size_t k) { return cells[i * dim + k]; }
  const BigInt& cell(std::size_t i, std::size_t k) const {
    return cells[i * dim + k];
  }
};

struct ServerState {
  Mode mode = Mode::kPlaintext;
  TrainConfig config;
  std::optional<ProfileMatrix> items;                     // plaintext mode
  std::optional<EncryptedItemProfiles> encrypted_items;   // encrypted mode
  std::optional<PaillierPublicKey> public_key;
  std::uint64_t round = 0;
  double compute_seconds = 0.0;
};

struct ClientState {
  std::size_t user_id = 0;
  std::vector<double> profile;
  std::vector<Rating> ratings;
  std::size_t n_items = 0;
  Mode mode = Mode::kPlaintext;
  TrainConfig config;
  int exponent = kDefaultExponent;
  unsigned headroom_bits = kDefaultHeadroomBits;
  bool vote = false;
  std::optional<PaillierPublicKey> public_key;
  std::optional<PaillierSecretKey> secret_key;
  std::unique_ptr<RandomSource> rng;
  double compute_seconds = 0.0;
};

namespace internal {

class Stopwatch {
 public:
  explicit Stopwatch(double& sink)
      : sink_(sink), start_(std::chrono::steady_clock::now()) {}
  ~Stopwatch() {
    sink_ += std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                           start_)
                 .count();
  }

 private:
  double& sink_;
  std::chrono::steady_clock::time_point start_;
};

inline std::vector<std::size_t> parse_item_ids(const Json& arr,
                                               std::size_t n_items) {
  if (!arr.is_array()) throw FormatError("items must be an array");
  std::vector<std::size_t> out;
  out.reserve(arr.size());
  for (const Json& v : arr) {
    if (!is_count(v)) throw FormatError("item ids are unsigned");
    const auto id = v.get<std::uint64_t>();
    if (id >= n_items) throw ProtocolError("item id out of range");
    out.push_back(static_cast<std::size_t>(id));
  }
  return out;
}

}  // namespace internal

// ---------------------------------------------------------------------------
// Key messages.

inline Message make_pubkey_message(const PaillierPublicKey& pk,
                                   std::int64_t sender) {
  return {MessageType::kPubKey, 0, sender,
          Json{{"n", to_hex(pk.n)}, {"key_bits", pk.key_bits}}};
}

inline PaillierPublicKey parse_pubkey_message(const Message& m) {
  if (m.type != MessageType::kPubKey) throw ProtocolError("expected PUBKEY");
  return PaillierPublicKey::from_modulus(
      from_hex(wire::get_string(m.body, "n")));
}

inline Message make_seckey_message(const PaillierSecretKey& sk,
                                   std::int64_t sender) {
  return {MessageType::kSecKey, 0, sender,
          Json{{"p", to_hex(sk.p)}, {"q", to_hex(sk.q)}}};
}

inline PaillierKeypair parse_seckey_message(const Message& m) {
  if (m.type != MessageType::kSecKey) throw ProtocolError("expected SECKEY");
  return keypair_from_primes(from_hex(wire::get_string(m.body, "p")),
                             from_hex(wire::get_string(m.body, "q")));
}

// ---------------------------------------------------------------------------
// Parties.

inline ClientState make_client(std::size_t user_id, const RatingTable& ratings,
                               const FederationConfig& config) {
  ClientState c;
  c.user_id = user_id;
  c.profile = init_user_profile(user_id, config.train);
  const auto own = ratings.user_ratings(user_id);
  c.ratings.assign(own.begin(), own.end());
  c.n_items = ratings.n_items();
  c.mode = config.mode;
  c.config = config.train;
  c.exponent = config.exponent;
  c.headroom_bits = config.headroom_bits;
  c.vote = config.client_vote;
  c.rng = std::make_unique<RandomSource>(
      config.crypto_seed ? RandomSource(derive_seed(*config.crypto_seed,
                                                    1000 + user_id))
                         : RandomSource::from_entropy());
  return c;
}

// Client 0 generates the keypair. The server link of client 0 carries only
// the public key; secret keys travel on separate client-to-client links.
inline void distribute_keys(std::vector<ClientState>& clients,
                            ServerState& server, std::size_t key_bits,
                            Endpoint& key_holder_to_server,
                            Endpoint& server_from_key_holder,
                            Transport& transport) {
  if (clients.empty()) throw InvalidArgument("need at least one client");
  ClientState& holder = clients.front();
  PaillierKeypair kp = keygen(key_bits, *holder.rng);
  holder.public_key = kp.public_key;
  holder.secret_key = kp.secret_key;

  key_holder_to_server.send(make_pubkey_message(kp.public_key, 0));
  server.public_key = parse_pubkey_message(server_from_key_holder.receive());

  for (std::size_t i = 1; i < clients.size(); ++i) {
    Link link = transport.connect();
    Endpoint from(std::move(link.first)), to(std::move(link.second));
    from.send(make_pubkey_message(kp.public_key, 0));
    from.send(make_seckey_message(kp.secret_key, 0));
    clients[i].public_key = parse_pubkey_message(to.receive());
    PaillierKeypair received = parse_seckey_message(to.receive());
    if (!(received.public_key == *clients[i].public_key)) {
      throw ProtocolError("secret key does not match public key");
    }
    clients[i].secret_key = received.secret_key;
  }
}

// Initial item profiles; encrypted cell by cell when a public key is given.
inline ServerState server_init(std::size_t n_items, const TrainConfig& config,
                               Mode mode,
                               const std::optional<PaillierPublicKey>& pk,
                               int exponent, unsigned headroom_bits,
                               RandomSource& rng) {
  ServerState s;
  s.mode = mode;
  s.config = config;
  ProfileMatrix v = init_item_profiles(n_items, config);
  if (mode == Mode::kPlaintext) {
    s.items = std::move(v);
    return s;
  }
  if (!pk) throw InvalidArgument("encrypted mode needs a public key");
  s.public_key = pk;
  EncryptedItemProfiles enc{n_items, config.dim, exponent, {}};
  enc.cells.reserve(v.values().size());
  for (double x : v.values()) {
    enc.cells.push_back(
        encrypt_encoded(*pk, encode(x, exponent, *pk, headroom_bits), rng)
            .value);
  }
  s.encrypted_items = std::move(enc);
  return s;
}

inline std::vector<std::size_t> rated_items(const ClientState& c) {
  std::vector<std::size_t> ids;
  ids.reserve(c.ratings.size());
  for (const Rating& r : c.ratings) ids.push_back(r.item);
  return ids;
}

inline Message client_request(const ClientState& c, std::uint64_t round,
                              bool all_rows) {
  Json body;
  if (all_rows || c.config.payload_mode == PayloadMode::kFullText) {
    body["request"] = "all";
  } else {
    body["request"] = rated_items(c);
  }
  return {MessageType::kProfiles, round, static_cast<std::int64_t>(c.user_id),
          body};
}

inline Message server_profiles(ServerState& s, const Message& request) {
  if (request.type != MessageType::kProfiles) {
    throw ProtocolError("expected a PROFILES request");
  }
  if (request.round != s.round) {
    throw ProtocolError("request for round " + std::to_string(request.round) +
                        " during round " + std::to_string(s.round));
  }
  internal::Stopwatch timer(s.compute_seconds);
  const std::size_t m = s.mode == Mode::kPlaintext ? s.items->rows()
                                                   : s.encrypted_items->rows;
  const std::size_t d = s.config.dim;
  const Json& req = wire::field(request.body, "request");
  std::vector<std::size_t> ids;
  if (req.is_string() && req.get<std::string>() == "all") {
    ids.resize(m);
    for (std::size_t j = 0; j < m; ++j) ids[j] = j;
  } else {
    ids = internal::parse_item_ids(req, m);
  }

  Json body{{"dim", d}, {"items", ids}};
  if (s.mode == Mode::kPlaintext) {
    body["encoding"] = "plain";
    Json values = Json::array();
    for (std::size_t j : ids) {
      for (double x : s.items->row(j)) values.push_back(format_double(x));
    }
    body["values"] = std::move(values);
  } else {
    body["encoding"] = "paillier";
    body["exponent"] = s.encrypted_items->exponent;
    Json cells = Json::array();
    for (std::size_t j : ids) {
      for (std::size_t k = 0; k < d; ++k) {
        cells.push_back(to_hex(s.encrypted_items->cell(j, k)));
      }
    }
    body["cells"] = std::move(cells);
  }
  return {MessageType::kProfiles, s.round, kServerId, std::move(body)};
}

namespace internal {

// Item rows a client needs from a PROFILES reply, decrypted when necessary.
// Rows the client does not use stay zero.
inline ProfileMatrix client_view(ClientState& c, const Message& reply,
                                 bool need_all) {
  const Json& body = reply.body;
  const std::size_t d = wire::get_uint(body, "dim");
  if (d != c.config.dim) throw ProtocolError("profile dim mismatch");
  const auto ids = parse_item_ids(wire::get_array(body, "items"), c.n_items);
  ProfileMatrix view(c.n_items, d);

  std::vector<bool> wanted(c.n_items, need_all);
  for (const Rating& r : c.ratings) wanted[r.item] = true;

  const std::string encoding = wire::get_string(body, "encoding");
  if (encoding == "plain") {
    if (c.mode != Mode::kPlaintext) throw ProtocolError("unexpected plaintext");
    const auto values = wire::parse_reals(wire::get_array(body, "values"));
    if (values.size() != ids.size() * d) throw FormatError("value count");
    for (std::size_t n = 0; n < ids.size(); ++n) {
      std::copy(values.begin() + n * d, values.begin() + (n + 1) * d,
                view.row(ids[n]).begin());
    }
  } else if (encoding == "paillier") {
    if (c.mode != Mode::kEncrypted || !c.secret_key) {
      throw ProtocolError("encrypted profiles but no secret key");
    }
    const int exponent = static_cast<int>(wire::get_int(body, "exponent"));
    const Json& cells = wire::get_array(body, "cells");
    if (cells.size() != ids.size() * d) throw FormatError("cell count");
    for (std::size_t n = 0; n < ids.size(); ++n) {
      if (!wanted[ids[n]]) continue;
      auto row = view.row(ids[n]);
      for (std::size_t k = 0; k < d; ++k) {
        const Json& cell = cells[n * d + k];
        if (!cell.is_string()) throw FormatError("cells are hex strings");
        const Ciphertext ct{from_hex(cell.get_ref<const std::string&>()),
                            exponent};
        row[k] = decode(decrypt_encoded(*c.secret_key, ct), *c.public_key);
      }
    }
  } else {
    throw FormatError("unknown encoding '" + encoding + "'");
  }
  for (const Rating& r : c.ratings) {
    if (std::find(ids.begin(), ids.end(), r.item) == ids.end()) {
      throw ProtocolError("reply is missing a rated item row");
    }
  }
  return view;
}

inline Json gradient_body(ClientState& c, const std::vector<ItemGradient>& rows,
                          PayloadMode mode, const char* kind) {
  const std::size_t d = c.config.dim;
  Json body{{"payload", to_string(mode)}, {"kind", kind}, {"dim", d}};
  Json ids = Json::array();
  for (const auto& g : rows) ids.push_back(g.item);
  body["items"] = std::move(ids);
  if (c.mode == Mode::kPlaintext) {
    body["encoding"] = "plain";
    Json values = Json::array();
    for (const auto& g : rows) {
      for (double x : g.values) values.push_back(format_double(x));
    }
    body["values"] = std::move(values);
  } else {
    body["encoding"] = "paillier";
    body["exponent"] = c.exponent;
    Stopwatch timer(c.compute_seconds);
    Json cells = Json::array();
    cells.get_ref<Json::array_t&>().reserve(rows.size() * d);
    for (const auto& g : rows) {
      for (double x : g.values) {
        cells.push_back(to_hex(
            encrypt_encoded(*c.public_key, *c.secret_key,
                            encode(x, c.exponent, *c.public_key, c.headroom_bits),
                            *c.rng)
                .value));
      }
    }
    body["cells"] = std::move(cells);
  }
  return body;
}

}  // namespace internal

// One client step: read V from the reply, run the local update, upload the
// (encrypted) payload.
inline Message client_round(ClientState& c, const Message& reply) {
  if (reply.type != MessageType::kProfiles) {
    throw ProtocolError("expected PROFILES, got " +
                        std::string(to_string(reply.type)));
  }
  LocalUpdate step;
  {
    internal::Stopwatch timer(c.compute_seconds);
    ProfileMatrix view = internal::client_view(c, reply, false);
    step = local_update(c.user_id, c.profile, view, c.ratings, c.config);
    for (double x : step.user_vector) {
      if (!std::isfinite(x)) {
        throw DivergenceError(reply.round, "user " + std::to_string(c.user_id));
      }
    }
    c.profile = step.user_vector;
  }
  Json body = internal::gradient_body(c, step.payload.entries,
                                      c.config.payload_mode, "update");
  if (c.vote) body["vote"] = step.payload.max_abs() < c.config.stop_threshold;
  return {MessageType::kGradient, reply.round,
          static_cast<std::int64_t>(c.user_id), std::move(body)};
}

// Encrypted-mode mu term: from a full download, upload lr * 2 mu v_j for
// every item.
inline Message client_regularizer(ClientState& c, const Message& reply) {
  std::vector<ItemGradient> rows;
  {
    internal::Stopwatch timer(c.compute_seconds);
    const ProfileMatrix view = internal::client_view(c, reply, true);
    rows.reserve(view.rows());
    for (std::size_t j = 0; j < view.rows(); ++j) {
      ItemGradient g{j, std::vector<double>(view.dim())};
      for (std::size_t k = 0; k < view.dim(); ++k) {
        g.values[k] = c.config.learning_rate * (2.0 * c.config.mu_v * view(j, k));
      }
      rows.push_back(std::move(g));
    }
  }
  return {MessageType::kGradient, reply.round,
          static_cast<std::int64_t>(c.user_id),
          internal::gradient_body(c, rows, PayloadMode::kFullText,
                                  "regularizer")};
}

// Parses a plaintext GRADIENT body back into an mf-core payload.
inline GradientPayload parse_plain_gradient(const Message& m,
                                            std::size_t n_items,
                                            std::size_t dim) {
  const Json& body = m.body;
  if (wire::get_string(body, "encoding") != "plain") {
    throw ProtocolError("expected a plaintext gradient");
  }
  if (wire::get_uint(body, "dim") != dim) throw ProtocolError("dim mismatch");
  if (m.sender < 0) throw ProtocolError("gradient from the server");
  GradientPayload p;
  p.user = static_cast<std::size_t>(m.sender);
  p.mode = parse_payload_mode(wire::get_string(body, "payload"));
  const auto ids = internal::parse_item_ids(wire::get_array(body, "items"),
                                            n_items);
  const auto values = wire::parse_reals(wire::get_array(body, "values"));
  if (values.size() != ids.size() * dim) throw FormatError("value count");
  p.entries.reserve(ids.size());
  for (std::size_t n = 0; n < ids.size(); ++n) {
    p.entries.push_back(
        {ids[n], std::vector<double>(values.begin() + n * dim,
                                     values.begin() + (n + 1) * dim)});
  }
  return p;
}

// C_V <- C_V - C_G on every cell the upload lists.
inline void server_apply_encrypted(ServerState& s, const Message& m) {
  if (s.mode != Mode::kEncrypted) throw ProtocolError("server not encrypted");
  internal::Stopwatch timer(s.compute_seconds);
  const Json& body = m.body;
  if (wire::get_string(body, "encoding") != "paillier") {
    throw ProtocolError("expected an encrypted gradient");
  }
  EncryptedItemProfiles& v = *s.encrypted_items;
  const int exponent = static_cast<int>(wire::get_int(body, "exponent"));
  if (exponent != v.exponent) throw ExponentMismatch(v.exponent, exponent);
  if (wire::get_uint(body, "dim") != v.dim) throw ProtocolError("dim mismatch");
  const auto ids =
      internal::parse_item_ids(wire::get_array(body, "items"), v.rows);
  const Json& cells = wire::get_array(body, "cells");
  if (cells.size() != ids.size() * v.dim) throw FormatError("cell count");
  const PaillierPublicKey& pk = *s.public_key;
  for (std::size_t n = 0; n < ids.size(); ++n) {
    for (std::size_t k = 0; k < v.dim; ++k) {
      const Json& cell = cells[n * v.dim + k];
      if (!cell.is_string()) throw FormatError("cells are hex strings");
      const Ciphertext g{from_hex(cell.get_ref<const std::string&>()),
                         exponent};
      BigInt& target = v.cell(ids[n], k);
      target = add_cipher(pk, {target, exponent}, negate(pk, g)).value;
    }
  }
}

// Applies one GRADIENT in either mode. Returns the plaintext payload when the
// server can read it.
inline std::optional<GradientPayload> server_apply_gradient(ServerState& s,
                                                            const Message& m) {
  if (m.type != MessageType::kGradient) throw ProtocolError("expected GRADIENT");
  if (m.round != s.round) throw ProtocolError("gradient for the wrong round");
  if (s.mode == Mode::kEncrypted) {
    server_apply_encrypted(s, m);
    return std::nullopt;
  }
  internal::Stopwatch timer(s.compute_seconds);
  GradientPayload p = parse_plain_gradient(m, s.items->rows(), s.config.dim);
  server_apply(*s.items, p);
  return p;
}

// Decrypts the server's item profiles with a client's keys. Evaluation only.
inline ProfileMatrix decrypt_items(const EncryptedItemProfiles& v,
                                   const PaillierPublicKey& pk,
                                   const PaillierSecretKey& sk) {
  ProfileMatrix out(v.rows, v.dim);
  for (std::size_t n = 0; n < v.cells.size(); ++n) {
    out.values()[n] =
        decode(decrypt_encoded(sk, {v.cells[n], v.exponent}), pk);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Driver.

struct RoundMetrics {
  std::uint64_t round = 0;
  double client_seconds = 0.0;
  double server_seconds = 0.0;
  double transfer_seconds = 0.0;
  std::uint64_t bytes_up = 0;    // client -> server
  std::uint64_t bytes_down = 0;  // server -> client
  double wall_seconds = 0.0;     // whole round, excluding loss evaluation

  // Sum of the measured phases; wall_seconds minus this is driver overhead.
  double phase_seconds() const {
    return client_seconds + server_seconds + transfer_seconds;
  }
};

struct FederationResult {
  ProfileMatrix items;  // decrypted for evaluation in encrypted mode
  ProfileMatrix users;
  std::vector<double> loss_history;
  std::size_t iterations = 0;
  std::vector<RoundMetrics> rounds;
  std::optional<Transcript> transcript;     // plaintext mode
  std::vector<std::vector<Message>> cipher_log;  // encrypted mode uploads
  std::optional<PaillierPublicKey> public_key;
  Bytes server_stream;  // every frame on the server's links, when captured
};

class FederationError : public Error {
 public:
  FederationError(std::uint64_t round, const std::string& what)
      : Error("round " + std::to_string(round) + ": " + what), round_(round) {}
  std::uint64_t round() const { return round_; }

 private:
  std::uint64_t round_;
};

namespace internal {

inline double loss_of(const std::vector<ClientState>& clients,
                      const ProfileMatrix& items, const RatingTable& ratings,
                      const TrainConfig& cfg, ProfileMatrix* users_out) {
  ProfileMatrix users(clients.size(), cfg.dim);
  for (const auto& c : clients) {
    std::copy(c.profile.begin(), c.profile.end(),
              users.row(c.user_id).begin());
  }
  const double l = loss(users, items, ratings, cfg.lambda_u, cfg.mu_v);
  if (users_out != nullptr) *users_out = std::move(users);
  return l;
}

}  // namespace internal

inline FederationResult run_federation(const RatingTable& ratings,
                                       const FederationConfig& config,
                                       Transport& transport) {
  config.train.validate();
  const std::size_t n = ratings.n_users();
  const std::size_t m = ratings.n_items();
  if (n == 0) throw InvalidArgument("federation needs at least one client");
  if (ratings.empty()) throw InvalidArgument("empty rating table");
  const bool encrypted = config.mode == Mode::kEncrypted;
  if (encrypted &&
      static_cast<double>(config.train.max_iters) * static_cast<double>(n + 1) >
          std::ldexp(1.0, static_cast<int>(config.headroom_bits))) {
    throw InvalidArgument(
        "iterations x users exceeds the encoding's accumulation headroom");
  }

  FederationResult result;
  std::vector<Endpoint> client_ends, server_ends;
  client_ends.reserve(n);
  server_ends.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Link link = transport.connect();
    client_ends.emplace_back(std::move(link.first));
    server_ends.emplace_back(std::move(link.second));
    if (config.capture_server_stream) {
      server_ends.back().set_capture(&result.server_stream);
    }
  }

  std::vector<ClientState> clients;
  clients.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    clients.push_back(make_client(i, ratings, config));
  }

  RandomSource server_rng =
      config.crypto_seed ? RandomSource(derive_seed(*config.crypto_seed, 999))
                         : RandomSource::from_entropy();
  ServerState server;
  std::optional<PaillierPublicKey> pk;
  if (encrypted) {
    ServerState keys_only;
    distribute_keys(clients, keys_only, config.key_bits, client_ends[0],
                    server_ends[0], transport);
    pk = keys_only.public_key;
    result.public_key = pk;
  }
  server = server_init(m, config.train, config.mode, pk, config.exponent,
                       config.headroom_bits, server_rng);

  auto current_items = [&]() -> ProfileMatrix {
    if (!encrypted) return *server.items;
    return decrypt_items(*server.encrypted_items, *clients[0].public_key,
                         *clients[0].secret_key);
  };

  if (config.record_transcript && !encrypted) {
    result.transcript.emplace();
    result.transcript->config = config.train;
    result.transcript->n_users = n;
    result.transcript->n_items = m;
  }

  auto totals = [&](double& client_s, double& server_s, double& transfer_s,
                    std::uint64_t& up, std::uint64_t& down) {
    client_s = 0;
    transfer_s = 0;
    up = 0;
    down = 0;
    for (std::size_t i = 0; i < n; ++i) {
      client_s += clients[i].compute_seconds;
      transfer_s += client_ends[i].seconds() + server_ends[i].seconds();
      up += server_ends[i].bytes_received();
      down += server_ends[i].bytes_sent();
    }
    server_s = server.compute_seconds;
  };

  result.loss_history.push_back(
      internal::loss_of(clients, current_items(), ratings, config.train,
                        nullptr));

  for (std::size_t iter = 0; iter < config.train.max_iters && m > 0; ++iter) {
    server.round = iter;
    const auto round_start = std::chrono::steady_clock::now();
    RoundMetrics before;
    totals(before.client_seconds, before.server_seconds,
           before.transfer_seconds, before.bytes_up, before.bytes_down);

    TranscriptRound* log = nullptr;
    if (result.transcript) {
      result.transcript->rounds.push_back({iter, *server.items, {}});
      log = &result.transcript->rounds.back();
    }
    if (encrypted) result.cipher_log.emplace_back();

    double max_step = 0.0;
    bool all_voted = true;
    try {
      for (std::size_t i = 0; i < n; ++i) {
        client_ends[i].send(client_request(clients[i], iter, false));
        const Message request = server_ends[i].receive();
        server_ends[i].send(server_profiles(server, request));
        const Message gradient = client_round(clients[i], client_ends[i].receive());
        client_ends[i].send(gradient);
        const Message received = server_ends[i].receive();
        if (received.sender != static_cast<std::int64_t>(i)) {
          throw ProtocolError("gradient from an unexpected sender");
        }
        auto plain = server_apply_gradient(server, received);
        if (plain) {
          max_step = std::max(max_step, plain->max_abs());
          if (log != nullptr) log->payloads.push_back(std::move(*plain));
        } else {
          result.cipher_log.back().push_back(received);
          const Json& vote = received.body.contains("vote")
                                 ? received.body["vote"]
                                 : Json(false);
          all_voted = all_voted && vote.is_boolean() && vote.get<bool>();
        }
      }

      if (!encrypted) {
        internal::Stopwatch timer(server.compute_seconds);
        regularize_items(*server.items, config.train);
        if (!server.items->all_finite()) {
          throw DivergenceError(iter, "item profiles");
        }
      } else if (config.train.mu_v != 0.0) {
        client_ends[0].send(client_request(clients[0], iter, true));
        server_ends[0].send(server_profiles(server, server_ends[0].receive()));
        client_ends[0].send(
            client_regularizer(clients[0], client_ends[0].receive()));
        const Message reg = server_ends[0].receive();
        if (wire::get_string(reg.body, "kind") != "regularizer") {
          throw ProtocolError("expected the regularizer upload");
        }
        server_apply_gradient(server, reg);
      }
    } catch (const DivergenceError&) {
      throw;
    } catch (const Error& e) {
      throw FederationError(iter, e.what());
    }

    RoundMetrics after;
    totals(after.client_seconds, after.server_seconds, after.transfer_seconds,
           after.bytes_up, after.bytes_down);
    result.rounds.push_back({iter, after.client_seconds - before.client_seconds,
                             after.server_seconds - before.server_seconds,
                             after.transfer_seconds - before.transfer_seconds,
                             after.bytes_up - before.bytes_up,
                             after.bytes_down - before.bytes_down,
                             std::chrono::duration<double>(
                                 std::chrono::steady_clock::now() - round_start)
                                 .count()});

    result.loss_history.push_back(internal::loss_of(
        clients, current_items(), ratings, config.train, nullptr));
    ++result.iterations;
    const bool stop = encrypted ? (config.client_vote && all_voted)
                                : max_step < config.train.stop_threshold;
    if (stop) break;
  }

  for (std::size_t i = 0; i < n; ++i) {
    server_ends[i].send(
        {MessageType::kDone, result.iterations, kServerId, Json::object()});
    if (client_ends[i].receive().type != MessageType::kDone) {
      throw ProtocolError("expected DONE");
    }
  }

  result.items = current_items();
  internal::loss_of(clients, result.items, ratings, config.train,
                    &result.users);
  if (result.transcript) result.transcript->items_final = result.items;
  return result;
}

}  // namespace fedmf

#endif  // FEDMF_PROTOCOL_HPP_
