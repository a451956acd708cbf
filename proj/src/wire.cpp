#include "blindvault/wire.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <fcntl.h>

#include <cerrno>
#include <cstring>

namespace blindvault::wire {

std::string_view to_string(MsgType t) {
  switch (t) {
    case MsgType::Error: return "ERROR";
    case MsgType::CertFetch: return "CERT_FETCH";
    case MsgType::CertResponse: return "CERT_RESPONSE";
    case MsgType::IssueRequest: return "ISSUE_REQUEST";
    case MsgType::IssueResponse: return "ISSUE_RESPONSE";
    case MsgType::IasVerify: return "IAS_VERIFY";
    case MsgType::IasReport: return "IAS_REPORT";
    case MsgType::PckFetch: return "PCK_FETCH";
    case MsgType::PckEntry: return "PCK_ENTRY";
    case MsgType::PckPublish: return "PCK_PUBLISH";
    case MsgType::PckPublished: return "PCK_PUBLISHED";
    case MsgType::TransferHello: return "TRANSFER_HELLO";
    case MsgType::TransferResponderAuth: return "TRANSFER_RESPONDER_AUTH";
    case MsgType::TransferInitiatorAuth: return "TRANSFER_INITIATOR_AUTH";
    case MsgType::TransferReady: return "TRANSFER_READY";
    case MsgType::TransferKey: return "TRANSFER_KEY";
    case MsgType::TransferDone: return "TRANSFER_DONE";
    case MsgType::ProvisionHello: return "PROVISION_HELLO";
    case MsgType::ProvisionHelloAck: return "PROVISION_HELLO_ACK";
    case MsgType::ProvisionKeyShare: return "PROVISION_KEYSHARE";
    case MsgType::ProvisionReady: return "PROVISION_READY";
    case MsgType::ProvisionPayload: return "PROVISION_PAYLOAD";
    case MsgType::ProvisionDone: return "PROVISION_DONE";
    case MsgType::CtlRequest: return "CTL_REQUEST";
    case MsgType::CtlResponse: return "CTL_RESPONSE";
  }
  return "UNKNOWN";
}

const std::vector<MsgType>& all_message_types() {
  static const std::vector<MsgType> all = {
      MsgType::Error,          MsgType::CertFetch,
      MsgType::CertResponse,   MsgType::IssueRequest,
      MsgType::IssueResponse,  MsgType::IasVerify,
      MsgType::IasReport,      MsgType::PckFetch,
      MsgType::PckEntry,       MsgType::PckPublish,
      MsgType::PckPublished,   MsgType::TransferHello,
      MsgType::TransferResponderAuth, MsgType::TransferInitiatorAuth,
      MsgType::TransferReady,  MsgType::TransferKey,
      MsgType::TransferDone,   MsgType::ProvisionHello,
      MsgType::ProvisionHelloAck, MsgType::ProvisionKeyShare,
      MsgType::ProvisionReady, MsgType::ProvisionPayload,
      MsgType::ProvisionDone,  MsgType::CtlRequest,
      MsgType::CtlResponse,
  };
  return all;
}

Bytes Frame::encode() const {
  if (payload.size() > kMaxPayload) {
    throw Error(ErrorCode::FrameTooLarge, "payload of " + std::to_string(payload.size()) + " bytes");
  }
  ByteWriter w;
  w.raw(as_bytes(kMagic)).u16(static_cast<std::uint16_t>(type)).raw(session);
  w.u32(static_cast<std::uint32_t>(payload.size())).raw(payload);
  return std::move(w).bytes();
}

FrameHeader parse_header(ByteView header) {
  ByteReader r(header);
  if (r.raw(kMagic.size()) != to_bytes(kMagic)) throw Error(ErrorCode::Malformed, "bad frame magic");
  FrameHeader h;
  h.type = static_cast<MsgType>(r.u16());
  h.session = r.fixed<16>();
  h.length = r.u32();
  if (h.length > kMaxPayload) {
    throw Error(ErrorCode::FrameTooLarge, "frame announces " + std::to_string(h.length) + " bytes");
  }
  return h;
}

Frame decode(ByteView data) {
  if (data.size() < kHeaderSize) throw Error(ErrorCode::Malformed, "short frame");
  auto h = parse_header(data.first(kHeaderSize));
  if (data.size() - kHeaderSize != h.length) {
    throw Error(ErrorCode::Malformed, "frame length does not match its header");
  }
  auto body = data.subspan(kHeaderSize);
  return {h.type, h.session, Bytes(body.begin(), body.end())};
}

Bytes ErrorBody::encode() const {
  ByteWriter w;
  w.u16(static_cast<std::uint16_t>(code)).str(message).str(step);
  return std::move(w).bytes();
}

ErrorBody ErrorBody::decode(ByteView data) {
  ByteReader r(data);
  ErrorBody b;
  b.code = static_cast<ErrorCode>(r.u16());
  b.message = r.str();
  b.step = r.str();
  r.expect_end();
  return b;
}

Frame error_frame(const SessionId& session, ErrorCode code, std::string message,
                  std::string step) {
  return {MsgType::Error, session, ErrorBody{code, std::move(message), std::move(step)}.encode()};
}

void throw_if_error(const Frame& f) {
  if (f.type != MsgType::Error) return;
  ErrorBody b;
  try {
    b = ErrorBody::decode(f.payload);
  } catch (const Error&) {
    throw Error(ErrorCode::PeerAborted, "peer sent an unreadable error frame");
  }
  throw Error(b.code, "peer: " + b.message, b.step);
}

// ---- sockets -------------------------------------------------------------

namespace {

[[noreturn]] void sys_fail(ErrorCode code, const std::string& what) {
  throw Error(code, what + ": " + std::strerror(errno));
}

bool read_exact(int fd, std::uint8_t* p, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    ssize_t r = ::recv(fd, p + got, n - got, 0);
    if (r == 0) {
      if (got == 0) return false;
      throw Error(ErrorCode::Malformed, "connection closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) throw Error(ErrorCode::Unavailable, "read timed out");
      sys_fail(ErrorCode::Io, "recv");
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

}  // namespace

SocketChannel::SocketChannel(int fd) : fd_(fd) {
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  timeval tv{120, 0};
  ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
}

SocketChannel::~SocketChannel() { close(); }

void SocketChannel::close() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

std::unique_ptr<SocketChannel> SocketChannel::connect(const std::string& host, std::uint16_t port,
                                                      int timeout_ms) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  auto service = std::to_string(port);
  if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0 || res == nullptr) {
    throw Error(ErrorCode::Unavailable, "cannot resolve " + host);
  }
  std::string last = "no address";
  for (auto* ai = res; ai != nullptr; ai = ai->ai_next) {
    int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK, ai->ai_protocol);
    if (fd < 0) continue;
    int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd p{fd, POLLOUT, 0};
      rc = ::poll(&p, 1, timeout_ms) == 1 ? 0 : -1;
      int err = 0;
      socklen_t len = sizeof err;
      if (rc == 0 && (::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) != 0 || err != 0)) {
        errno = err;
        rc = -1;
      }
    }
    if (rc == 0) {
      int fl = ::fcntl(fd, F_GETFL);
      ::fcntl(fd, F_SETFL, fl & ~O_NONBLOCK);
      ::freeaddrinfo(res);
      return std::make_unique<SocketChannel>(fd);
    }
    last = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  throw Error(ErrorCode::Unavailable, host + ":" + service + ": " + last);
}

void SocketChannel::send_raw(ByteView data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      sys_fail(ErrorCode::Io, "send");
    }
    sent += static_cast<std::size_t>(n);
  }
}

void SocketChannel::send(const Frame& f) { send_raw(f.encode()); }

std::optional<Frame> SocketChannel::recv() {
  std::uint8_t header[kHeaderSize];
  if (!read_exact(fd_, header, kHeaderSize)) return std::nullopt;
  auto h = parse_header({header, kHeaderSize});
  Frame f{h.type, h.session, Bytes(h.length)};
  if (h.length > 0 && !read_exact(fd_, f.payload.data(), h.length)) {
    throw Error(ErrorCode::Malformed, "connection closed mid-frame");
  }
  return f;
}

bool SocketChannel::peer_is_loopback() const {
  sockaddr_storage ss{};
  socklen_t len = sizeof ss;
  if (::getpeername(fd_, reinterpret_cast<sockaddr*>(&ss), &len) != 0) return false;
  if (ss.ss_family == AF_INET) {
    auto* a = reinterpret_cast<sockaddr_in*>(&ss);
    return (ntohl(a->sin_addr.s_addr) >> 24) == 127;
  }
  if (ss.ss_family == AF_INET6) {
    auto* a = reinterpret_cast<sockaddr_in6*>(&ss);
    if (IN6_IS_ADDR_LOOPBACK(&a->sin6_addr)) return true;
    return IN6_IS_ADDR_V4MAPPED(&a->sin6_addr) && a->sin6_addr.s6_addr[12] == 127;
  }
  return false;
}

std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& endpoint) {
  auto colon = endpoint.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == endpoint.size()) {
    throw Error(ErrorCode::BadConfig, "endpoint '" + endpoint + "' is not host:port");
  }
  std::string host = endpoint.substr(0, colon);
  if (host.size() > 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
  unsigned long port = 0;
  try {
    std::size_t used = 0;
    port = std::stoul(endpoint.substr(colon + 1), &used);
    if (used != endpoint.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw Error(ErrorCode::BadConfig, "bad port in '" + endpoint + "'");
  }
  if (port > 65535) throw Error(ErrorCode::BadConfig, "port out of range in '" + endpoint + "'");
  return {host, static_cast<std::uint16_t>(port)};
}

int listen_tcp(const std::string& host, std::uint16_t port, std::uint16_t* bound_port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  auto service = std::to_string(port);
  if (::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res) != 0) {
    throw Error(ErrorCode::BadConfig, "cannot resolve listen address " + host);
  }
  int fd = ::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(res);
    sys_fail(ErrorCode::Io, "socket");
  }
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd, res->ai_addr, res->ai_addrlen) != 0 || ::listen(fd, 64) != 0) {
    int e = errno;
    ::freeaddrinfo(res);
    ::close(fd);
    errno = e;
    sys_fail(ErrorCode::BadConfig, "cannot listen on " + host + ":" + service);
  }
  ::freeaddrinfo(res);
  if (bound_port != nullptr) {
    sockaddr_storage ss{};
    socklen_t len = sizeof ss;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&ss), &len);
    *bound_port = ss.ss_family == AF_INET
                      ? ntohs(reinterpret_cast<sockaddr_in*>(&ss)->sin_port)
                      : ntohs(reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port);
  }
  return fd;
}

Frame round_trip(const std::string& endpoint, MsgType type, Bytes payload, MsgType expect) {
  auto [host, port] = parse_endpoint(endpoint);
  auto ch = SocketChannel::connect(host, port);
  SessionId sid{};
  ch->send({type, sid, std::move(payload)});
  auto reply = ch->recv();
  if (!reply) throw Error(ErrorCode::Unavailable, endpoint + " closed the connection");
  throw_if_error(*reply);
  if (reply->type != expect) {
    throw Error(ErrorCode::UnexpectedStep, std::string("expected ") + std::string(to_string(expect)) +
                                               ", got " + std::string(to_string(reply->type)));
  }
  return std::move(*reply);
}

// ---- in-process pipe -----------------------------------------------------

namespace {

struct Queue {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Frame> frames;
  bool closed = false;
};

class PipeEnd : public MessageChannel {
 public:
  PipeEnd(std::shared_ptr<Queue> in, std::shared_ptr<Queue> out)
      : in_(std::move(in)), out_(std::move(out)) {}
  ~PipeEnd() override { close(); }

  void send(const Frame& f) override {
    f.encode();  // same size limits as the socket path
    std::lock_guard g(out_->mu);
    if (out_->closed) throw Error(ErrorCode::Io, "pipe closed");
    out_->frames.push_back(f);
    out_->cv.notify_all();
  }

  std::optional<Frame> recv() override {
    std::unique_lock g(in_->mu);
    in_->cv.wait(g, [&] { return !in_->frames.empty() || in_->closed; });
    if (in_->frames.empty()) return std::nullopt;
    Frame f = std::move(in_->frames.front());
    in_->frames.pop_front();
    return f;
  }

  void close() override {
    for (auto* q : {in_.get(), out_.get()}) {
      std::lock_guard g(q->mu);
      q->closed = true;
      q->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<Queue> in_;
  std::shared_ptr<Queue> out_;
};

}  // namespace

std::pair<std::unique_ptr<MessageChannel>, std::unique_ptr<MessageChannel>> make_pipe() {
  auto a = std::make_shared<Queue>();
  auto b = std::make_shared<Queue>();
  return {std::make_unique<PipeEnd>(a, b), std::make_unique<PipeEnd>(b, a)};
}

void Capture::record(const Frame& f) {
  auto bytes = f.encode();
  std::lock_guard g(mu_);
  frames_.push_back(std::move(bytes));
  types_.push_back(f.type);
}

std::vector<Bytes> Capture::frames() const {
  std::lock_guard g(mu_);
  return frames_;
}

std::size_t Capture::size() const {
  std::lock_guard g(mu_);
  return frames_.size();
}

std::vector<MsgType> Capture::types() const {
  std::lock_guard g(mu_);
  return types_;
}

void CapturingChannel::send(const Frame& f) {
  capture_.record(f);
  inner_.send(f);
}

std::optional<Frame> CapturingChannel::recv() {
  auto f = inner_.recv();
  if (f) capture_.record(*f);
  return f;
}

}  // namespace blindvault::wire
