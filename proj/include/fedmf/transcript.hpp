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

// Transcript files: the server-visible log of a training run.
//
// A file is a sequence of frames (same length-prefixed JSON framing as the
// wire format), each a record object:
//
//   {"record": "header", "version": 1, "mode": "plaintext" | "encrypted",
//    "convention": "algorithm1" | "attack", "config": {...},
//    "n_users", "n_items", "public_key"?, "ground_truth"?}
//   {"record": "round", "round": t, "items_before": [reals],
//    "payloads": [{"user", "payload", "items", "values"}]}      plaintext
//   {"record": "round", "round": t,
//    "uploads": [{"user", "payload", "items", "exponent", "cells"}]}  encrypted
//   {"record": "final", "items": [reals]}                        plaintext only
//
// Reals are shortest round-trip decimal strings, so a plaintext transcript
// reloads bit-identically. "algorithm1" payloads are lr * gradient as sent
// by the trainer; "attack" payloads are the raw residual-weighted gradients
// u (r - <u, v>) of a unit-step run. ground_truth is the private rating table
// and only appears when an evaluation harness asks for it.

#ifndef FEDMF_TRANSCRIPT_HPP_
#define FEDMF_TRANSCRIPT_HPP_

#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedmf/mf_core.hpp"
#include "fedmf/protocol.hpp"
#include "fedmf/wire.hpp"

namespace fedmf {

enum class GradientConvention { kAlgorithm1, kAttack };

inline const char* to_string(GradientConvention c) {
  return c == GradientConvention::kAlgorithm1 ? "algorithm1" : "attack";
}

inline GradientConvention parse_convention(std::string_view s) {
  if (s == "algorithm1") return GradientConvention::kAlgorithm1;
  if (s == "attack") return GradientConvention::kAttack;
  throw FormatError("unknown gradient convention '" + std::string(s) + "'");
}

struct EncryptedUpload {
  std::size_t user = 0;
  PayloadMode mode = PayloadMode::kPartText;
  std::vector<std::size_t> items;
  int exponent = kDefaultExponent;
  std::vector<std::string> cells;  // hex
};

struct TranscriptFile {
  Mode mode = Mode::kPlaintext;
  GradientConvention convention = GradientConvention::kAlgorithm1;
  // Plaintext runs: full transcript. Encrypted runs: config, sizes and
  // ground truth only; the uploads are in encrypted_rounds.
  Transcript transcript;
  std::optional<std::string> public_key_hex;
  std::vector<std::vector<EncryptedUpload>> encrypted_rounds;
};

// ---------------------------------------------------------------------------
// JSON pieces, also used by the CLI output files.

inline Json config_to_json(const TrainConfig& c) {
  return {{"dim", c.dim},
          {"lr", format_double(c.learning_rate)},
          {"lambda", format_double(c.lambda_u)},
          {"mu", format_double(c.mu_v)},
          {"max_iters", c.max_iters},
          {"stop_threshold", format_double(c.stop_threshold)},
          {"seed", c.seed},
          {"init_scale", format_double(c.init_scale)},
          {"payload", to_string(c.payload_mode)}};
}

inline TrainConfig config_from_json(const Json& j) {
  TrainConfig c;
  c.dim = wire::get_uint(j, "dim");
  c.learning_rate = parse_double(wire::get_string(j, "lr"));
  c.lambda_u = parse_double(wire::get_string(j, "lambda"));
  c.mu_v = parse_double(wire::get_string(j, "mu"));
  c.max_iters = wire::get_uint(j, "max_iters");
  c.stop_threshold = parse_double(wire::get_string(j, "stop_threshold"));
  c.seed = wire::get_uint(j, "seed");
  c.init_scale = parse_double(wire::get_string(j, "init_scale"));
  c.payload_mode = parse_payload_mode(wire::get_string(j, "payload"));
  return c;
}

inline Json ratings_to_json(const RatingTable& t) {
  Json entries = Json::array();
  for (const Rating& r : t.entries()) {
    entries.push_back(Json::array({r.user, r.item, format_double(r.value)}));
  }
  return {{"n_users", t.n_users()}, {"n_items", t.n_items()},
          {"entries", std::move(entries)}};
}

inline RatingTable ratings_from_json(const Json& j) {
  std::vector<Rating> rs;
  for (const Json& e : wire::get_array(j, "entries")) {
    if (!e.is_array() || e.size() != 3 || !is_count(e[0]) || !is_count(e[1]) ||
        !e[2].is_string()) {
      throw FormatError("rating entries are [user, item, \"value\"]");
    }
    rs.push_back({e[0].get<std::size_t>(), e[1].get<std::size_t>(),
                  parse_double(e[2].get_ref<const std::string&>())});
  }
  try {
    return RatingTable(wire::get_uint(j, "n_users"), wire::get_uint(j, "n_items"),
                       std::move(rs));
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("bad rating table: ") + e.what());
  }
}

inline ProfileMatrix matrix_from_json(const Json& arr, std::size_t rows,
                                      std::size_t dim) {
  std::vector<double> values = wire::parse_reals(arr);
  if (values.size() != rows * dim) throw FormatError("matrix size mismatch");
  return ProfileMatrix(rows, dim, std::move(values));
}

// ---------------------------------------------------------------------------
// Writing.

namespace internal {

inline Json header_record(Mode mode, GradientConvention convention,
                          const Transcript& t) {
  Json h{{"record", "header"},
         {"version", 1},
         {"mode", to_string(mode)},
         {"convention", to_string(convention)},
         {"config", config_to_json(t.config)},
         {"n_users", t.n_users},
         {"n_items", t.n_items}};
  if (t.ground_truth) h["ground_truth"] = ratings_to_json(*t.ground_truth);
  return h;
}

inline void append_record(Bytes& out, const Json& record) {
  const Bytes f = frame(record.dump());
  out.insert(out.end(), f.begin(), f.end());
}

}  // namespace internal

inline Bytes encode_transcript(const Transcript& t,
                               GradientConvention convention =
                                   GradientConvention::kAlgorithm1) {
  Bytes out;
  internal::append_record(out,
                          internal::header_record(Mode::kPlaintext, convention, t));
  for (const TranscriptRound& r : t.rounds) {
    Json payloads = Json::array();
    for (const GradientPayload& p : r.payloads) {
      Json items = Json::array();
      Json values = Json::array();
      for (const ItemGradient& g : p.entries) {
        items.push_back(g.item);
        for (double x : g.values) values.push_back(format_double(x));
      }
      payloads.push_back({{"user", p.user},
                          {"payload", to_string(p.mode)},
                          {"items", std::move(items)},
                          {"values", std::move(values)}});
    }
    internal::append_record(out, {{"record", "round"},
                                  {"round", r.round},
                                  {"items_before", wire::reals(r.items_before.values())},
                                  {"payloads", std::move(payloads)}});
  }
  internal::append_record(
      out, {{"record", "final"}, {"items", wire::reals(t.items_final.values())}});
  return out;
}

// Encrypted runs: what the server saw is the public key and ciphertext
// uploads. `info` supplies config, sizes and optional ground truth.
inline Bytes encode_encrypted_transcript(
    const Transcript& info, const PaillierPublicKey& pk,
    const std::vector<std::vector<Message>>& uploads) {
  Json header = internal::header_record(Mode::kEncrypted,
                                        GradientConvention::kAlgorithm1, info);
  header["public_key"] = to_hex(pk.n);
  Bytes out;
  internal::append_record(out, header);
  for (std::size_t t = 0; t < uploads.size(); ++t) {
    Json list = Json::array();
    for (const Message& m : uploads[t]) {
      list.push_back({{"user", m.sender},
                      {"payload", m.body.at("payload")},
                      {"items", m.body.at("items")},
                      {"exponent", m.body.at("exponent")},
                      {"cells", m.body.at("cells")}});
    }
    internal::append_record(
        out, {{"record", "round"}, {"round", t}, {"uploads", std::move(list)}});
  }
  return out;
}

inline void write_file(const std::string& path, const Bytes& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write to '" + path + "' failed");
}

inline Bytes read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  return Bytes(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// Reading.

namespace internal {

inline Json parse_record(const Bytes& f) {
  try {
    Json j = Json::parse(f.begin() + 4, f.end());
    if (!j.is_object()) throw FormatError("transcript record is not an object");
    return j;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed transcript record: ") + e.what());
  }
}

}  // namespace internal

inline TranscriptFile decode_transcript(std::span<const std::uint8_t> bytes) {
  const std::vector<Bytes> frames = split_frames(bytes);
  if (frames.empty()) throw FormatError("empty transcript");
  TranscriptFile out;
  const Json header = internal::parse_record(frames.front());
  if (wire::get_string(header, "record") != "header") {
    throw FormatError("transcript must start with a header record");
  }
  if (wire::get_uint(header, "version") != 1) {
    throw FormatError("unsupported transcript version");
  }
  const std::string mode = wire::get_string(header, "mode");
  if (mode == "plaintext") {
    out.mode = Mode::kPlaintext;
  } else if (mode == "encrypted") {
    out.mode = Mode::kEncrypted;
  } else {
    throw FormatError("unknown transcript mode '" + mode + "'");
  }
  out.convention = parse_convention(wire::get_string(header, "convention"));
  Transcript& t = out.transcript;
  t.config = config_from_json(wire::field(header, "config"));
  t.n_users = wire::get_uint(header, "n_users");
  t.n_items = wire::get_uint(header, "n_items");
  const std::size_t d = t.config.dim;
  if (header.contains("ground_truth")) {
    t.ground_truth = ratings_from_json(header["ground_truth"]);
  }
  if (header.contains("public_key")) {
    out.public_key_hex = wire::get_string(header, "public_key");
  }

  bool saw_final = false;
  for (std::size_t n = 1; n < frames.size(); ++n) {
    const Json rec = internal::parse_record(frames[n]);
    const std::string kind = wire::get_string(rec, "record");
    if (saw_final) throw FormatError("records after the final snapshot");
    if (kind == "round") {
      const std::size_t round = wire::get_uint(rec, "round");
      if (out.mode == Mode::kEncrypted) {
        if (round != out.encrypted_rounds.size()) {
          throw FormatError("rounds out of order");
        }
        auto& list = out.encrypted_rounds.emplace_back();
        for (const Json& u : wire::get_array(rec, "uploads")) {
          EncryptedUpload up;
          up.user = wire::get_uint(u, "user");
          up.mode = parse_payload_mode(wire::get_string(u, "payload"));
          up.items = internal::parse_item_ids(wire::get_array(u, "items"),
                                              t.n_items);
          up.exponent = static_cast<int>(wire::get_int(u, "exponent"));
          for (const Json& c : wire::get_array(u, "cells")) {
            if (!c.is_string()) throw FormatError("cells are hex strings");
            up.cells.push_back(c.get<std::string>());
          }
          list.push_back(std::move(up));
        }
        continue;
      }
      if (round != t.rounds.size()) throw FormatError("rounds out of order");
      TranscriptRound r;
      r.round = round;
      r.items_before = matrix_from_json(wire::get_array(rec, "items_before"),
                                        t.n_items, d);
      for (const Json& p : wire::get_array(rec, "payloads")) {
        GradientPayload g;
        g.user = wire::get_uint(p, "user");
        if (g.user >= t.n_users) throw FormatError("payload user out of range");
        g.mode = parse_payload_mode(wire::get_string(p, "payload"));
        const auto ids =
            internal::parse_item_ids(wire::get_array(p, "items"), t.n_items);
        const auto values = wire::parse_reals(wire::get_array(p, "values"));
        if (values.size() != ids.size() * d) {
          throw FormatError("payload value count");
        }
        for (std::size_t e = 0; e < ids.size(); ++e) {
          g.entries.push_back({ids[e], std::vector<double>(
                                           values.begin() + e * d,
                                           values.begin() + (e + 1) * d)});
        }
        r.payloads.push_back(std::move(g));
      }
      t.rounds.push_back(std::move(r));
    } else if (kind == "final") {
      if (out.mode == Mode::kEncrypted) {
        throw FormatError("encrypted transcripts carry no plaintext snapshot");
      }
      t.items_final = matrix_from_json(wire::get_array(rec, "items"), t.n_items, d);
      saw_final = true;
    } else {
      throw FormatError("unknown transcript record '" + kind + "'");
    }
  }
  if (out.mode == Mode::kPlaintext && !saw_final) {
    throw FormatError("plaintext transcript is missing its final snapshot");
  }
  return out;
}

inline TranscriptFile read_transcript(const std::string& path) {
  const Bytes bytes = read_file(path);
  return decode_transcript(bytes);
}

}  // namespace fedmf

#endif  // FEDMF_TRANSCRIPT_HPP_
