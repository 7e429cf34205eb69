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

#include "fedmf/wire.hpp"

#include <gtest/gtest.h>

#include <string>
#include <bit>
#include <thread>

#include "fedmf/paillier.hpp"
#include "fedmf/transport.hpp"

namespace fedmf {
namespace {

Message random_message(SplitMix64& rng) {
  Message m;
  m.type = static_cast<MessageType>(rng.below(5));
  m.round = rng.next() >> rng.below(64);
  m.sender = static_cast<std::int64_t>(rng.below(1000)) - 1;
  std::vector<double> xs(rng.below(20));
  for (double& x : xs) x = (rng.uniform() - 0.5) * std::ldexp(1.0, rng.below(80) - 40);
  m.body["values"] = wire::reals(xs);
  m.body["items"] = std::vector<std::uint64_t>(rng.below(5), rng.below(100));
  m.body["n"] = to_hex(BigInt(static_cast<unsigned long>(rng.next())));
  m.body["label"] = std::string(rng.below(10), 'a');
  return m;
}

TEST(Wire, RandomMessagesRoundTrip) {
  SplitMix64 rng(42);
  for (int i = 0; i < 1000; ++i) {
    const Message m = random_message(rng);
    const Bytes b = serialize(m);
    ASSERT_EQ(read_u32_be(b.data()), b.size() - 4);
    ASSERT_EQ(deserialize(b), m);
  }
}

TEST(Wire, RealsSurviveExactly) {
  SplitMix64 rng(7);
  std::vector<double> xs(500);
  for (double& x : xs) x = std::ldexp(rng.uniform() - 0.5, static_cast<int>(rng.below(200)) - 100);
  xs.push_back(0.1);
  xs.push_back(-0.0);
  xs.push_back(5e-324);
  Message m{MessageType::kProfiles, 3, 4, Json{{"values", wire::reals(xs)}}};
  const Message back = deserialize(serialize(m));
  const auto ys = wire::parse_reals(back.body["values"]);
  ASSERT_EQ(ys.size(), xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(xs[i]), std::bit_cast<std::uint64_t>(ys[i]));
  }
}

TEST(Wire, EmptyGradientRoundTrips) {
  Message m{MessageType::kGradient, 0, 5,
            Json{{"items", Json::array()}, {"values", Json::array()}}};
  EXPECT_EQ(deserialize(serialize(m)), m);
}

TEST(Wire, TruncatedFrameRejected) {
  const Bytes b = serialize({MessageType::kDone, 1, kServerId, Json::object()});
  EXPECT_THROW(deserialize(std::span(b).first(b.size() - 1)), FormatError);
  EXPECT_THROW(deserialize(std::span(b).first(3)), FormatError);
  Bytes longer = b;
  longer.push_back('x');
  EXPECT_THROW(deserialize(longer), FormatError);
}

TEST(Wire, MalformedPayloadsRejected) {
  EXPECT_THROW(deserialize(frame("not json")), FormatError);
  EXPECT_THROW(deserialize(frame("[1,2]")), FormatError);
  EXPECT_THROW(deserialize(frame(R"({"type":"HELLO","round":0,"sender":0,"body":{}})")),
               FormatError);
  EXPECT_THROW(deserialize(frame(R"({"type":"DONE","round":-1,"sender":0,"body":{}})")),
               FormatError);
  EXPECT_THROW(deserialize(frame(R"({"type":"DONE","round":0,"body":{}})")), FormatError);
}

TEST(Wire, BodyHelpersValidate) {
  const Json body{{"s", "x"}, {"u", 3}, {"i", -2}, {"a", {1, 2}}, {"r", {"1.5", 2}}};
  EXPECT_EQ(wire::get_string(body, "s"), "x");
  EXPECT_EQ(wire::get_uint(body, "u"), 3u);
  EXPECT_EQ(wire::get_int(body, "i"), -2);
  EXPECT_EQ(wire::get_array(body, "a").size(), 2u);
  EXPECT_THROW(wire::get_uint(body, "i"), FormatError);
  EXPECT_THROW(wire::get_string(body, "missing"), FormatError);
  EXPECT_THROW(wire::parse_reals(body["r"]), FormatError);
}

TEST(Wire, SplitFrames) {
  Bytes stream;
  std::vector<Message> msgs;
  SplitMix64 rng(3);
  for (int i = 0; i < 10; ++i) {
    msgs.push_back(random_message(rng));
    const Bytes b = serialize(msgs.back());
    stream.insert(stream.end(), b.begin(), b.end());
  }
  const auto frames = split_frames(stream);
  ASSERT_EQ(frames.size(), msgs.size());
  for (std::size_t i = 0; i < msgs.size(); ++i) EXPECT_EQ(deserialize(frames[i]), msgs[i]);
  stream.pop_back();
  EXPECT_THROW(split_frames(stream), FormatError);
}

void exchange(Transport& t) {
  Link link = t.connect();
  Endpoint a(std::move(link.first)), b(std::move(link.second));
  // Larger than typical socket buffers, sent before the peer reads.
  Message big{MessageType::kProfiles, 1, 0, Json{{"blob", std::string(8 << 20, 'z')}}};
  a.send(big);
  a.send({MessageType::kDone, 2, 0, Json::object()});
  EXPECT_EQ(b.receive(), big);
  EXPECT_EQ(b.receive().type, MessageType::kDone);
  b.send({MessageType::kGradient, 3, kServerId, Json{{"k", 1}}});
  EXPECT_EQ(a.receive().round, 3u);
  EXPECT_EQ(a.bytes_sent(), b.bytes_received());
  EXPECT_EQ(b.bytes_sent(), a.bytes_received());
}

TEST(Transport, InMemoryExchange) {
  InMemoryTransport t;
  exchange(t);
}

TEST(Transport, TcpExchange) {
  TcpTransport t;
  EXPECT_GT(t.port(), 0);
  exchange(t);
  exchange(t);
}

TEST(Transport, ClosedPeerRaises) {
  InMemoryTransport t;
  Link link = t.connect();
  Endpoint a(std::move(link.first));
  link.second.reset();
  EXPECT_THROW(a.receive(), TransportError);

  TcpTransport tcp;
  Link l2 = tcp.connect();
  Endpoint c(std::move(l2.first));
  l2.second.reset();
  EXPECT_THROW(c.receive(), TransportError);
}

TEST(Transport, CaptureSeesBothDirections) {
  InMemoryTransport t;
  Link link = t.connect();
  Endpoint a(std::move(link.first)), b(std::move(link.second));
  Bytes captured;
  b.set_capture(&captured);
  const Message m1{MessageType::kPubKey, 0, 0, Json{{"n", "ff"}}};
  const Message m2{MessageType::kDone, 0, kServerId, Json::object()};
  a.send(m1);
  b.receive();
  b.send(m2);
  const auto frames = split_frames(captured);
  ASSERT_EQ(frames.size(), 2u);
  EXPECT_EQ(deserialize(frames[0]), m1);
  EXPECT_EQ(deserialize(frames[1]), m2);
}

}  // namespace
}  // namespace fedmf
