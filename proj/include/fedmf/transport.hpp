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

// Point-to-point framed links between protocol parties.
//
// A Transport hands out Links; each Link is a bidirectional, ordered pair of
// FrameChannel endpoints. Two implementations: an in-process queue and a
// loopback TCP connection (one connection per link).
//
// Links carry plain frames. Channel security (TLS between parties) would be
// layered here by wrapping a FrameChannel; it is not implemented.

#ifndef FEDMF_TRANSPORT_HPP_
#define FEDMF_TRANSPORT_HPP_

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fedmf/wire.hpp"

namespace fedmf {

class TransportError : public Error {
 public:
  using Error::Error;
};

class FrameChannel {
 public:
  virtual ~FrameChannel() = default;
  virtual void send_frame(Bytes frame) = 0;
  // Blocks until a frame arrives.
  virtual Bytes receive_frame() = 0;
};

struct Link {
  std::unique_ptr<FrameChannel> first;
  std::unique_ptr<FrameChannel> second;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual Link connect() = 0;
  virtual std::string name() const = 0;
};

namespace internal {

class FrameQueue {
 public:
  void push(Bytes frame) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      frames_.push_back(std::move(frame));
    }
    cv_.notify_one();
  }

  void close() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  Bytes pop() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return !frames_.empty() || closed_; });
    if (frames_.empty()) throw TransportError("link closed");
    Bytes out = std::move(frames_.front());
    frames_.pop_front();
    return out;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Bytes> frames_;
  bool closed_ = false;
};

class QueueChannel : public FrameChannel {
 public:
  QueueChannel(std::shared_ptr<FrameQueue> in, std::shared_ptr<FrameQueue> out)
      : in_(std::move(in)), out_(std::move(out)) {}
  ~QueueChannel() override { out_->close(); }

  void send_frame(Bytes frame) override { out_->push(std::move(frame)); }
  Bytes receive_frame() override { return in_->pop(); }

 private:
  std::shared_ptr<FrameQueue> in_;
  std::shared_ptr<FrameQueue> out_;
};

inline void write_all(int fd, const std::uint8_t* data, std::size_t size) {
  while (size > 0) {
    const ssize_t n = ::send(fd, data, size, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("send failed: ") + std::strerror(errno));
    }
    data += n;
    size -= static_cast<std::size_t>(n);
  }
}

// False on orderly EOF before the first byte.
inline bool read_all(int fd, std::uint8_t* data, std::size_t size) {
  std::size_t got = 0;
  while (got < size) {
    const ssize_t n = ::recv(fd, data + got, size - got, 0);
    if (n == 0) {
      if (got == 0) return false;
      throw TransportError("connection closed mid-frame");
    }
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("recv failed: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(n);
  }
  return true;
}

// One end of a TCP connection. A reader thread drains the socket into a
// queue so a single-threaded driver can send large frames without deadlock.
class TcpChannel : public FrameChannel {
 public:
  explicit TcpChannel(int fd) : fd_(fd), inbox_(std::make_shared<FrameQueue>()) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    reader_ = std::thread([this] { read_loop(); });
  }

  ~TcpChannel() override {
    ::shutdown(fd_, SHUT_RDWR);
    if (reader_.joinable()) reader_.join();
    ::close(fd_);
  }

  TcpChannel(const TcpChannel&) = delete;
  TcpChannel& operator=(const TcpChannel&) = delete;

  void send_frame(Bytes frame) override {
    write_all(fd_, frame.data(), frame.size());
  }

  Bytes receive_frame() override { return inbox_->pop(); }

 private:
  void read_loop() {
    try {
      for (;;) {
        std::uint8_t header[4];
        if (!read_all(fd_, header, 4)) break;
        const std::uint32_t len = read_u32_be(header);
        Bytes frame(4 + std::size_t{len});
        std::memcpy(frame.data(), header, 4);
        if (len > 0 && !read_all(fd_, frame.data() + 4, len)) {
          throw TransportError("connection closed mid-frame");
        }
        inbox_->push(std::move(frame));
      }
    } catch (const TransportError&) {
    }
    inbox_->close();
  }

  int fd_;
  std::shared_ptr<FrameQueue> inbox_;
  std::thread reader_;
};

}  // namespace internal

class InMemoryTransport : public Transport {
 public:
  Link connect() override {
    auto ab = std::make_shared<internal::FrameQueue>();
    auto ba = std::make_shared<internal::FrameQueue>();
    return {std::make_unique<internal::QueueChannel>(ba, ab),
            std::make_unique<internal::QueueChannel>(ab, ba)};
  }
  std::string name() const override { return "memory"; }
};

// Loopback TCP. Every connect() opens a fresh connection through a listening
// socket on an ephemeral port.
class TcpTransport : public Transport {
 public:
  TcpTransport() {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw TransportError("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) <
            0 ||
        ::listen(listen_fd_, 16) < 0) {
      ::close(listen_fd_);
      throw TransportError(std::string("bind/listen failed: ") +
                           std::strerror(errno));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  ~TcpTransport() override { ::close(listen_fd_); }

  TcpTransport(const TcpTransport&) = delete;
  TcpTransport& operator=(const TcpTransport&) = delete;

  Link connect() override {
    const int client = ::socket(AF_INET, SOCK_STREAM, 0);
    if (client < 0) throw TransportError("socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port_);
    if (::connect(client, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) <
        0) {
      ::close(client);
      throw TransportError(std::string("connect failed: ") +
                           std::strerror(errno));
    }
    const int server = ::accept(listen_fd_, nullptr, nullptr);
    if (server < 0) {
      ::close(client);
      throw TransportError("accept failed");
    }
    return {std::make_unique<internal::TcpChannel>(client),
            std::make_unique<internal::TcpChannel>(server)};
  }

  std::string name() const override { return "tcp"; }
  std::uint16_t port() const { return port_; }

 private:
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
};

// Message-level endpoint: serializes, counts bytes and time, and optionally
// records every frame it sends or receives.
class Endpoint {
 public:
  Endpoint() = default;
  explicit Endpoint(std::unique_ptr<FrameChannel> channel)
      : channel_(std::move(channel)) {}

  void send(const Message& m) {
    const auto start = std::chrono::steady_clock::now();
    Bytes bytes = serialize(m);
    bytes_sent_ += bytes.size();
    if (capture_ != nullptr) {
      capture_->insert(capture_->end(), bytes.begin(), bytes.end());
    }
    channel_->send_frame(std::move(bytes));
    seconds_ += elapsed(start);
  }

  Message receive() {
    const auto start = std::chrono::steady_clock::now();
    Bytes bytes = channel_->receive_frame();
    bytes_received_ += bytes.size();
    if (capture_ != nullptr) {
      capture_->insert(capture_->end(), bytes.begin(), bytes.end());
    }
    Message m = deserialize(bytes);
    seconds_ += elapsed(start);
    return m;
  }

  // Appends every frame seen by this endpoint to `sink`.
  void set_capture(Bytes* sink) { capture_ = sink; }

  std::uint64_t bytes_sent() const { return bytes_sent_; }
  std::uint64_t bytes_received() const { return bytes_received_; }
  double seconds() const { return seconds_; }

 private:
  static double elapsed(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start)
        .count();
  }

  std::unique_ptr<FrameChannel> channel_;
  Bytes* capture_ = nullptr;
  std::uint64_t bytes_sent_ = 0;
  std::uint64_t bytes_received_ = 0;
  double seconds_ = 0.0;
};

}  // namespace fedmf

#endif  // FEDMF_TRANSPORT_HPP_
