#pragma once

// Framed binary messages between nodes:
//   "BFP1" | u16 type | 16-byte session id | u32 length (BE) | payload
// and the channel abstraction protocols run over.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "blindvault/bytes.hpp"

namespace blindvault::wire {

enum class MsgType : std::uint16_t {
  Error = 0x0001,

  CertFetch = 0x0100,
  CertResponse = 0x0101,
  IssueRequest = 0x0102,
  IssueResponse = 0x0103,

  IasVerify = 0x0200,
  IasReport = 0x0201,

  PckFetch = 0x0300,
  PckEntry = 0x0301,
  PckPublish = 0x0302,
  PckPublished = 0x0303,

  TransferHello = 0x0400,
  TransferResponderAuth = 0x0401,
  TransferInitiatorAuth = 0x0402,
  TransferReady = 0x0403,
  TransferKey = 0x0404,
  TransferDone = 0x0405,

  ProvisionHello = 0x0500,
  ProvisionHelloAck = 0x0501,
  ProvisionKeyShare = 0x0502,
  ProvisionReady = 0x0503,
  ProvisionPayload = 0x0504,
  ProvisionDone = 0x0505,

  CtlRequest = 0x0F00,
  CtlResponse = 0x0F01,
};

std::string_view to_string(MsgType t);
/// Every defined type, for exhaustive probing.
const std::vector<MsgType>& all_message_types();

using SessionId = FixedBytes<16>;

inline constexpr std::string_view kMagic = "BFP1";
inline constexpr std::size_t kHeaderSize = 4 + 2 + 16 + 4;
inline constexpr std::uint32_t kMaxPayload = 16u * 1024 * 1024;

struct Frame {
  MsgType type = MsgType::Error;
  SessionId session{};
  Bytes payload;

  Bytes encode() const;
};

struct FrameHeader {
  MsgType type;
  SessionId session;
  std::uint32_t length;
};

/// Throws Malformed on a bad magic and FrameTooLarge past kMaxPayload.
FrameHeader parse_header(ByteView header);
Frame decode(ByteView data);

struct ErrorBody {
  ErrorCode code = ErrorCode::Malformed;
  std::string message;
  std::string step;

  Bytes encode() const;
  static ErrorBody decode(ByteView data);
};

Frame error_frame(const SessionId& session, ErrorCode code, std::string message,
                  std::string step = {});

/// Bidirectional frame transport.
class MessageChannel {
 public:
  virtual ~MessageChannel() = default;
  virtual void send(const Frame& f) = 0;
  /// nullopt on orderly close by the peer.
  virtual std::optional<Frame> recv() = 0;
  virtual void close() {}
};

/// Frame transport over a connected stream socket. Owns the descriptor.
class SocketChannel : public MessageChannel {
 public:
  explicit SocketChannel(int fd);
  ~SocketChannel() override;
  SocketChannel(const SocketChannel&) = delete;
  SocketChannel& operator=(const SocketChannel&) = delete;

  /// Throws Unavailable when nothing listens at host:port.
  static std::unique_ptr<SocketChannel> connect(const std::string& host, std::uint16_t port,
                                                int timeout_ms = 30000);

  void send(const Frame& f) override;
  std::optional<Frame> recv() override;
  void close() override;

  /// Peer is a loopback address.
  bool peer_is_loopback() const;
  /// Sends raw bytes; tests use it to put malformed frames on the wire.
  void send_raw(ByteView data);

 private:
  int fd_;
};

/// In-process transport for tests: two connected endpoints.
std::pair<std::unique_ptr<MessageChannel>, std::unique_ptr<MessageChannel>> make_pipe();

/// Thread-safe record of encoded frames seen on a channel.
class Capture {
 public:
  void record(const Frame& f);
  std::vector<Bytes> frames() const;
  std::size_t size() const;
  /// Frame types in order of observation.
  std::vector<MsgType> types() const;

 private:
  mutable std::mutex mu_;
  std::vector<Bytes> frames_;
  std::vector<MsgType> types_;
};

/// Wraps a channel and records every frame in both directions.
class CapturingChannel : public MessageChannel {
 public:
  CapturingChannel(MessageChannel& inner, Capture& capture) : inner_(inner), capture_(capture) {}
  void send(const Frame& f) override;
  std::optional<Frame> recv() override;
  void close() override { inner_.close(); }

 private:
  MessageChannel& inner_;
  Capture& capture_;
};

/// Host and port parsed from "host:port".
std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& endpoint);

/// Listening TCP socket. Returns the fd; `port` 0 picks a free port.
int listen_tcp(const std::string& host, std::uint16_t port, std::uint16_t* bound_port = nullptr);

/// One request frame, one response frame, on a fresh connection. Peer
/// error frames are rethrown with the peer's code.
Frame round_trip(const std::string& endpoint, MsgType type, Bytes payload, MsgType expect);

/// Throws Error carrying the peer's code when `f` is an error frame.
void throw_if_error(const Frame& f);

}  // namespace blindvault::wire
