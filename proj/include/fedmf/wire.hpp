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

// Framed message format shared by the protocol transports and the transcript
// file:
//
//   frame   := length:u32 big-endian || payload
//   payload := UTF-8 JSON object {"type", "round", "sender", "body"}
//
// `type` is one of PUBKEY, SECKEY, PROFILES, GRADIENT, DONE. Big integers are
// lowercase hex strings, exponents plain integers, and reals shortest
// round-trip decimal strings.

#ifndef FEDMF_WIRE_HPP_
#define FEDMF_WIRE_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedmf/common.hpp"
#include "json.hpp"

namespace fedmf {

using Json = nlohmann::json;
using Bytes = std::vector<std::uint8_t>;

inline constexpr std::int64_t kServerId = -1;
inline constexpr std::size_t kMaxFrameBytes = std::size_t{1} << 31;

enum class MessageType { kPubKey, kSecKey, kProfiles, kGradient, kDone };

inline const char* to_string(MessageType t) {
  switch (t) {
    case MessageType::kPubKey:
      return "PUBKEY";
    case MessageType::kSecKey:
      return "SECKEY";
    case MessageType::kProfiles:
      return "PROFILES";
    case MessageType::kGradient:
      return "GRADIENT";
    case MessageType::kDone:
      return "DONE";
  }
  return "?";
}

inline MessageType parse_message_type(std::string_view s) {
  if (s == "PUBKEY") return MessageType::kPubKey;
  if (s == "SECKEY") return MessageType::kSecKey;
  if (s == "PROFILES") return MessageType::kProfiles;
  if (s == "GRADIENT") return MessageType::kGradient;
  if (s == "DONE") return MessageType::kDone;
  throw FormatError("unknown message type '" + std::string(s) + "'");
}

struct Message {
  MessageType type = MessageType::kDone;
  std::uint64_t round = 0;
  std::int64_t sender = kServerId;
  Json body = Json::object();

  friend bool operator==(const Message&, const Message&) = default;
};

// nlohmann::json keeps non-negative literals built in code as signed; parsed
// text comes back unsigned. Accept both.
inline bool is_count(const Json& v) {
  return v.is_number_unsigned() ||
         (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

inline void append_u32_be(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t read_u32_be(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
         (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

// Wraps an already-encoded JSON payload in a length prefix.
inline Bytes frame(std::string_view payload) {
  if (payload.size() >= kMaxFrameBytes) throw FormatError("frame too large");
  Bytes out;
  out.reserve(payload.size() + 4);
  append_u32_be(out, static_cast<std::uint32_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

inline Bytes serialize(const Message& m) {
  Json j = {{"type", to_string(m.type)},
            {"round", m.round},
            {"sender", m.sender},
            {"body", m.body}};
  return frame(j.dump());
}

inline Message message_from_json(const Json& j) {
  if (!j.is_object()) throw FormatError("message is not a JSON object");
  for (const char* key : {"type", "round", "sender", "body"}) {
    if (!j.contains(key)) {
      throw FormatError(std::string("message missing field '") + key + "'");
    }
  }
  if (!j["type"].is_string() || !is_count(j["round"]) ||
      !j["sender"].is_number_integer()) {
    throw FormatError("message header has wrong field types");
  }
  Message m;
  m.type = parse_message_type(j["type"].get<std::string>());
  m.round = j["round"].get<std::uint64_t>();
  m.sender = j["sender"].get<std::int64_t>();
  m.body = j["body"];
  return m;
}

// Parses exactly one frame; trailing or missing bytes are errors.
inline Message deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("truncated frame header");
  const std::uint32_t len = read_u32_be(bytes.data());
  if (bytes.size() - 4 != len) {
    throw FormatError("frame length " + std::to_string(len) + " but " +
                      std::to_string(bytes.size() - 4) + " payload bytes");
  }
  Json j;
  try {
    j = Json::parse(bytes.begin() + 4, bytes.end());
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed frame payload: ") + e.what());
  }
  return message_from_json(j);
}

// Splits a byte stream into frames.
inline std::vector<Bytes> split_frames(std::span<const std::uint8_t> stream) {
  std::vector<Bytes> out;
  std::size_t pos = 0;
  while (pos < stream.size()) {
    if (stream.size() - pos < 4) throw FormatError("truncated frame header");
    const std::uint32_t len = read_u32_be(stream.data() + pos);
    if (stream.size() - pos - 4 < len) throw FormatError("truncated frame");
    out.emplace_back(stream.begin() + pos, stream.begin() + pos + 4 + len);
    pos += 4 + len;
  }
  return out;
}

// JSON helpers for body fields.
namespace wire {

inline const Json& field(const Json& body, const char* key) {
  if (!body.is_object() || !body.contains(key)) {
    throw FormatError(std::string("body missing field '") + key + "'");
  }
  return body[key];
}

inline std::string get_string(const Json& body, const char* key) {
  const Json& v = field(body, key);
  if (!v.is_string()) throw FormatError(std::string(key) + " must be a string");
  return v.get<std::string>();
}

inline std::uint64_t get_uint(const Json& body, const char* key) {
  const Json& v = field(body, key);
  if (!is_count(v)) {
    throw FormatError(std::string(key) + " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

inline std::int64_t get_int(const Json& body, const char* key) {
  const Json& v = field(body, key);
  if (!v.is_number_integer()) {
    throw FormatError(std::string(key) + " must be an integer");
  }
  return v.get<std::int64_t>();
}

inline const Json& get_array(const Json& body, const char* key) {
  const Json& v = field(body, key);
  if (!v.is_array()) throw FormatError(std::string(key) + " must be an array");
  return v;
}

inline Json reals(std::span<const double> xs) {
  Json out = Json::array();
  for (double x : xs) out.push_back(format_double(x));
  return out;
}

inline std::vector<double> parse_reals(const Json& arr) {
  if (!arr.is_array()) throw FormatError("expected an array of reals");
  std::vector<double> out;
  out.reserve(arr.size());
  for (const Json& v : arr) {
    if (!v.is_string()) throw FormatError("reals are encoded as strings");
    out.push_back(parse_double(v.get_ref<const std::string&>()));
  }
  return out;
}

}  // namespace wire
}  // namespace fedmf

#endif  // FEDMF_WIRE_HPP_
