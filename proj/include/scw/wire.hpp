// Copyright 2026 The scw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Framed wire protocol shared by all services.
//
//   frame := u32 BE length | u8 message type | body
//
// Handshake frames (HELLO, CHALLENGE, CLIENT_PROOF, SERVER_PROOF) carry
// cleartext JSON. Everything after the handshake travels in ENC frames whose
// body is AES-256-GCM over (inner type | inner body) under keys derived from
// the pre-shared credential, giving mutual authentication and
// confidentiality. A connection that does not complete the handshake is
// refused; plaintext TCP never reaches a service handler.
//
// Binary blobs ride as a BLOB_HDR JSON frame {blob_id,total_len,digest}
// followed by BLOB_DATA frames of raw bytes, all inside the channel.

#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstring>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "scw/bytes.hpp"
#include "scw/crypto.hpp"
#include "scw/errors.hpp"

namespace scw {

using nlohmann::json;

namespace msg {
// Handshake (cleartext)
constexpr std::uint8_t HELLO = 0x01;
constexpr std::uint8_t CHALLENGE = 0x02;
constexpr std::uint8_t CLIENT_PROOF = 0x03;
constexpr std::uint8_t SERVER_PROOF = 0x04;
constexpr std::uint8_t REFUSED = 0x05;
// Encrypted envelope
constexpr std::uint8_t ENC = 0x06;
// Generic (inner)
constexpr std::uint8_t OK = 0x20;
constexpr std::uint8_t ERR = 0x21;
constexpr std::uint8_t BLOB_HDR = 0x11;
constexpr std::uint8_t BLOB_DATA = 0x10;
// Key service (inner)
constexpr std::uint8_t KEY_ISSUE = 0x30;
constexpr std::uint8_t KEY_GET_PUB = 0x31;
constexpr std::uint8_t NODE_REGISTER = 0x32;
constexpr std::uint8_t JOB_AUTHORIZE = 0x33;
constexpr std::uint8_t KEY_UNWRAP = 0x34;
constexpr std::uint8_t AUDIT_QUERY = 0x35;
constexpr std::uint8_t LEASE_REVOKE = 0x36;
constexpr std::uint8_t PRINCIPAL_CREATE = 0x37;
// Scheduler (inner)
constexpr std::uint8_t SUBMIT = 0x40;
constexpr std::uint8_t STATUS = 0x41;
constexpr std::uint8_t FETCH = 0x42;
constexpr std::uint8_t NODE_HELLO = 0x43;
constexpr std::uint8_t HEARTBEAT = 0x44;
constexpr std::uint8_t ASSIGN = 0x45;
constexpr std::uint8_t ASSIGN_ACK = 0x46;
constexpr std::uint8_t RESULT = 0x47;
constexpr std::uint8_t WORKER_ERR = 0x48;
}  // namespace msg

constexpr std::size_t kMaxFrameSize = 16 * 1024 * 1024;
constexpr std::size_t kBlobFrameSize = 4 * 1024 * 1024;

struct Frame {
    std::uint8_t type = 0;
    Bytes body;
};

// ---------------------------------------------------------------------------
// Sockets
// ---------------------------------------------------------------------------

class TcpStream {
public:
    TcpStream() = default;
    explicit TcpStream(int fd) : fd_(fd) {}
    TcpStream(const TcpStream&) = delete;
    TcpStream& operator=(const TcpStream&) = delete;
    TcpStream(TcpStream&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
    TcpStream& operator=(TcpStream&& o) noexcept {
        if (this != &o) {
            close();
            fd_ = o.fd_;
            o.fd_ = -1;
        }
        return *this;
    }
    ~TcpStream() { close(); }

    static TcpStream connect(const std::string& host, std::uint16_t port) {
        int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) throw IoError("socket() failed");
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
            ::close(fd);
            throw IoError("invalid address: " + host);
        }
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            int e = errno;
            ::close(fd);
            throw IoError("connect to " + host + ":" + std::to_string(port) +
                          " failed: " + std::strerror(e));
        }
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        return TcpStream(fd);
    }

    void set_recv_timeout(double seconds) {
        timeval tv{};
        tv.tv_sec = static_cast<time_t>(seconds);
        tv.tv_usec = static_cast<suseconds_t>((seconds - static_cast<double>(tv.tv_sec)) * 1e6);
        ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    }

    void write_all(ByteView data) {
        std::size_t done = 0;
        while (done < data.size()) {
            ssize_t n = ::send(fd_, data.data() + done, data.size() - done,
                               MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw IoError(std::string("socket write failed: ") + std::strerror(errno));
            }
            done += static_cast<std::size_t>(n);
        }
    }

    void read_exact(std::uint8_t* out, std::size_t len) {
        std::size_t done = 0;
        while (done < len) {
            ssize_t n = ::recv(fd_, out + done, len - done, 0);
            if (n < 0) {
                if (errno == EINTR) continue;
                if (errno == EAGAIN || errno == EWOULDBLOCK)
                    throw IoError("socket read timed out");
                throw IoError(std::string("socket read failed: ") + std::strerror(errno));
            }
            if (n == 0) throw IoError("connection closed by peer");
            done += static_cast<std::size_t>(n);
        }
    }

    void shutdown() {
        if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
    }

    void close() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

    bool valid() const { return fd_ >= 0; }
    int fd() const { return fd_; }

private:
    int fd_ = -1;
};

class TcpListener {
public:
    TcpListener() = default;
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;
    TcpListener(TcpListener&& o) noexcept : fd_(o.fd_), port_(o.port_) { o.fd_ = -1; }
    TcpListener& operator=(TcpListener&& o) noexcept {
        if (this != &o) {
            close();
            fd_ = o.fd_;
            port_ = o.port_;
            o.fd_ = -1;
        }
        return *this;
    }
    ~TcpListener() { close(); }

    static TcpListener bind(const std::string& host, std::uint16_t port) {
        TcpListener l;
        l.fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (l.fd_ < 0) throw IoError("socket() failed");
        int one = 1;
        ::setsockopt(l.fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
            throw IoError("invalid address: " + host);
        if (::bind(l.fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
            throw IoError("bind to " + host + ":" + std::to_string(port) +
                          " failed: " + std::strerror(errno));
        if (::listen(l.fd_, 64) != 0) throw IoError("listen failed");
        socklen_t len = sizeof(addr);
        ::getsockname(l.fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        l.port_ = ntohs(addr.sin_port);
        return l;
    }

    TcpStream accept() {
        int fd = ::accept(fd_, nullptr, nullptr);
        if (fd < 0) throw IoError(std::string("accept failed: ") + std::strerror(errno));
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        return TcpStream(fd);
    }

    std::uint16_t port() const { return port_; }

    void close() {
        if (fd_ >= 0) {
            ::shutdown(fd_, SHUT_RDWR);
            ::close(fd_);
            fd_ = -1;
        }
    }

    bool valid() const { return fd_ >= 0; }

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

// ---------------------------------------------------------------------------
// Framing
// ---------------------------------------------------------------------------

inline void write_frame(TcpStream& stream, std::uint8_t type, ByteView body) {
    if (body.size() + 1 > kMaxFrameSize) throw ValidationError("frame too large");
    Bytes header;
    put_u32_be(header, static_cast<std::uint32_t>(body.size() + 1));
    header.push_back(type);
    stream.write_all(header);
    stream.write_all(body);
}

inline Frame read_frame(TcpStream& stream) {
    std::uint8_t header[5];
    stream.read_exact(header, 5);
    std::uint32_t len = get_u32_be(header);
    if (len < 1 || len > kMaxFrameSize)
        throw FormatError("invalid frame length " + std::to_string(len));
    Frame f;
    f.type = header[4];
    f.body.resize(len - 1);
    if (!f.body.empty()) stream.read_exact(f.body.data(), f.body.size());
    return f;
}

// ---------------------------------------------------------------------------
// Secure channel
// ---------------------------------------------------------------------------

struct Message {
    std::uint8_t type = 0;
    Bytes body;

    json as_json() const {
        try {
            return json::parse(body.begin(), body.end());
        } catch (const json::exception& e) {
            throw FormatError(std::string("malformed message body: ") + e.what());
        }
    }
};

// Mutual-authentication channel over a pre-shared credential. Both ends
// prove knowledge of the credential via HMAC over the handshake transcript;
// traffic keys are derived per direction with per-frame counter nonces.
class SecureChannel {
public:
    using CredentialLookup =
        std::function<std::optional<Bytes>(const std::string& principal)>;

    SecureChannel() = default;

    static SecureChannel connect_client(TcpStream stream, const std::string& principal,
                                        ByteView credential) {
        SecureChannel ch;
        ch.stream_ = std::move(stream);
        Bytes nonce_c = random_bytes(32);
        json hello{{"principal", principal}, {"nonce", to_hex(nonce_c)}};
        ch.send_clear(msg::HELLO, hello.dump());

        Frame challenge = read_frame(ch.stream_);
        if (challenge.type == msg::REFUSED)
            throw AuthError("server refused handshake: " +
                            to_string(challenge.body));
        if (challenge.type != msg::CHALLENGE)
            throw AuthError("unexpected handshake frame from server");
        Bytes nonce_s;
        try {
            json j = json::parse(challenge.body.begin(), challenge.body.end());
            nonce_s = from_hex(j.at("nonce").get<std::string>());
        } catch (const json::exception&) {
            throw AuthError("malformed challenge frame");
        }

        ch.derive(principal, credential, nonce_c, nonce_s, /*is_client=*/true);
        ch.send_clear(msg::CLIENT_PROOF,
                      json{{"mac", to_hex(ch.client_proof_)}}.dump());

        Frame proof = read_frame(ch.stream_);
        if (proof.type == msg::REFUSED)
            throw AuthError("server rejected credential");
        if (proof.type != msg::SERVER_PROOF)
            throw AuthError("unexpected handshake frame from server");
        json j = json::parse(proof.body.begin(), proof.body.end(), nullptr, false);
        if (j.is_discarded() || !j.contains("mac") ||
            from_hex(j["mac"].get<std::string>()) != ch.server_proof_)
            throw IntegrityError(IntegrityError::Kind::channel,
                                 "server failed to prove credential knowledge");
        ch.principal_ = principal;
        return ch;
    }

    static SecureChannel accept_server(TcpStream stream,
                                       const CredentialLookup& lookup) {
        SecureChannel ch;
        ch.stream_ = std::move(stream);
        Frame hello;
        try {
            hello = read_frame(ch.stream_);
        } catch (const Error&) {
            throw AuthError("peer did not speak the framed protocol");
        }
        std::string principal;
        Bytes nonce_c;
        if (hello.type != msg::HELLO) {
            ch.refuse("expected HELLO");
            throw AuthError("plaintext or malformed connection refused");
        }
        try {
            json j = json::parse(hello.body.begin(), hello.body.end());
            principal = j.at("principal").get<std::string>();
            nonce_c = from_hex(j.at("nonce").get<std::string>());
        } catch (const std::exception&) {
            ch.refuse("malformed HELLO");
            throw AuthError("plaintext or malformed connection refused");
        }
        std::optional<Bytes> credential = lookup(principal);
        if (!credential) {
            ch.refuse("unknown principal");
            throw AuthError("unknown principal: " + principal);
        }

        Bytes nonce_s = random_bytes(32);
        ch.send_clear(msg::CHALLENGE, json{{"nonce", to_hex(nonce_s)}}.dump());
        ch.derive(principal, *credential, nonce_c, nonce_s, /*is_client=*/false);

        Frame proof = read_frame(ch.stream_);
        bool ok = proof.type == msg::CLIENT_PROOF;
        if (ok) {
            json j = json::parse(proof.body.begin(), proof.body.end(), nullptr, false);
            ok = !j.is_discarded() && j.contains("mac") &&
                 from_hex(j["mac"].get<std::string>()) == ch.client_proof_;
        }
        if (!ok) {
            ch.refuse("credential proof failed");
            throw AuthError("client failed credential proof for " + principal);
        }
        ch.send_clear(msg::SERVER_PROOF,
                      json{{"mac", to_hex(ch.server_proof_)}}.dump());
        ch.principal_ = principal;
        return ch;
    }

    const std::string& principal() const { return principal_; }

    void send(std::uint8_t inner_type, ByteView body) {
        Bytes inner;
        inner.reserve(body.size() + 1);
        inner.push_back(inner_type);
        inner.insert(inner.end(), body.begin(), body.end());

        Bytes nonce = next_nonce(send_salt_, send_counter_++);
        Bytes sealed = gcm_seal(send_key_.view(), nonce, {}, inner);
        OPENSSL_cleanse(inner.data(), inner.size());
        write_frame(stream_, msg::ENC, sealed);
    }

    void send_json(std::uint8_t inner_type, const json& j) {
        std::string s = j.dump();
        send(inner_type, as_bytes(s));
    }

    Message recv() {
        Frame f = read_frame(stream_);
        if (f.type != msg::ENC)
            throw IntegrityError(IntegrityError::Kind::channel,
                                 "unencrypted frame on established channel");
        Bytes nonce = next_nonce(recv_salt_, recv_counter_++);
        Bytes inner;
        try {
            inner = gcm_open(recv_key_.view(), nonce, {}, f.body);
        } catch (const IntegrityError&) {
            throw IntegrityError(IntegrityError::Kind::channel,
                                 "channel frame failed to authenticate");
        }
        if (inner.empty())
            throw FormatError("empty channel frame");
        Message m;
        m.type = inner[0];
        m.body.assign(inner.begin() + 1, inner.end());
        return m;
    }

    // Request/response helper: raises the peer's typed error on ERR.
    json call(std::uint8_t inner_type, const json& request) {
        send_json(inner_type, request);
        Message reply = recv();
        if (reply.type == msg::ERR) {
            json j = reply.as_json();
            throw_error(errc_from_name(j.value("code", "fatal")),
                        j.value("message", "remote error"));
        }
        if (reply.type != msg::OK)
            throw FormatError("unexpected reply type");
        return reply.as_json();
    }

    void send_blob(const std::string& blob_id, ByteView data) {
        json hdr{{"blob_id", blob_id},
                 {"total_len", data.size()},
                 {"digest", digest(data).hex()}};
        send_json(msg::BLOB_HDR, hdr);
        std::size_t off = 0;
        do {
            std::size_t len = std::min(kBlobFrameSize, data.size() - off);
            send(msg::BLOB_DATA, data.subspan(off, len));
            off += len;
        } while (off < data.size());
    }

    // Receives a blob whose header frame has already been read.
    Bytes recv_blob_body(const json& header) {
        std::uint64_t total = header.at("total_len").get<std::uint64_t>();
        Digest expected = Digest::from_hex(header.at("digest").get<std::string>());
        Bytes out;
        out.reserve(static_cast<std::size_t>(total));
        while (out.size() < total || (total == 0 && out.empty())) {
            Message m = recv();
            if (m.type != msg::BLOB_DATA)
                throw FormatError("expected blob data frame");
            out.insert(out.end(), m.body.begin(), m.body.end());
            if (total == 0) break;
        }
        if (out.size() != total || digest(out) != expected)
            throw IntegrityError(IntegrityError::Kind::channel,
                                 "blob transfer digest mismatch");
        return out;
    }

    Bytes recv_blob(std::string* blob_id = nullptr) {
        Message hdr = recv();
        if (hdr.type != msg::BLOB_HDR) throw FormatError("expected blob header");
        json j = hdr.as_json();
        if (blob_id != nullptr) *blob_id = j.value("blob_id", "");
        return recv_blob_body(j);
    }

    void set_recv_timeout(double seconds) { stream_.set_recv_timeout(seconds); }
    void shutdown() { stream_.shutdown(); }
    void close() { stream_.close(); }
    bool valid() const { return stream_.valid(); }
    TcpStream& stream() { return stream_; }

private:
    void send_clear(std::uint8_t type, const std::string& body) {
        write_frame(stream_, type, as_bytes(body));
    }

    void refuse(const std::string& reason) {
        try {
            send_clear(msg::REFUSED, reason);
        } catch (const Error&) {
        }
        stream_.close();
    }

    void derive(const std::string& principal, ByteView credential, ByteView nonce_c,
                ByteView nonce_s, bool is_client) {
        Bytes transcript;
        std::string label = "scw-handshake-v1";
        transcript.insert(transcript.end(), label.begin(), label.end());
        transcript.insert(transcript.end(), principal.begin(), principal.end());
        transcript.insert(transcript.end(), nonce_c.begin(), nonce_c.end());
        transcript.insert(transcript.end(), nonce_s.begin(), nonce_s.end());

        Bytes master = hmac_sha256(credential, transcript);
        Bytes salt;
        salt.insert(salt.end(), nonce_c.begin(), nonce_c.end());
        salt.insert(salt.end(), nonce_s.begin(), nonce_s.end());

        Bytes k_c2s = hkdf_sha256(master, salt, "c2s", 32);
        Bytes k_s2c = hkdf_sha256(master, salt, "s2c", 32);
        Bytes n_c2s = hkdf_sha256(master, salt, "n-c2s", 4);
        Bytes n_s2c = hkdf_sha256(master, salt, "n-s2c", 4);
        Bytes mac_c = hkdf_sha256(master, salt, "mac-c", 32);
        Bytes mac_s = hkdf_sha256(master, salt, "mac-s", 32);
        client_proof_ = hmac_sha256(mac_c, transcript);
        server_proof_ = hmac_sha256(mac_s, transcript);

        if (is_client) {
            send_key_ = SecureBuffer(std::move(k_c2s));
            recv_key_ = SecureBuffer(std::move(k_s2c));
            send_salt_ = n_c2s;
            recv_salt_ = n_s2c;
        } else {
            send_key_ = SecureBuffer(std::move(k_s2c));
            recv_key_ = SecureBuffer(std::move(k_c2s));
            send_salt_ = n_s2c;
            recv_salt_ = n_c2s;
        }
        OPENSSL_cleanse(master.data(), master.size());
    }

    static Bytes next_nonce(const Bytes& salt, std::uint64_t counter) {
        Bytes nonce = salt;
        auto ctr = u64_be(counter);
        nonce.insert(nonce.end(), ctr.begin(), ctr.end());
        return nonce;
    }

    TcpStream stream_;
    std::string principal_;
    SecureBuffer send_key_;
    SecureBuffer recv_key_;
    Bytes send_salt_;
    Bytes recv_salt_;
    std::uint64_t send_counter_ = 0;
    std::uint64_t recv_counter_ = 0;
    Bytes client_proof_;
    Bytes server_proof_;
};

// ---------------------------------------------------------------------------
// Server scaffold
// ---------------------------------------------------------------------------

// Accept loop with one service thread per connection. The handler owns the
// channel for the connection's lifetime; returning ends the session.
class RpcServer {
public:
    using Handler = std::function<void(SecureChannel&)>;

    RpcServer(const std::string& host, std::uint16_t port,
              SecureChannel::CredentialLookup lookup, Handler handler)
        : lookup_(std::move(lookup)), handler_(std::move(handler)) {
        listener_ = TcpListener::bind(host, port);
        accept_thread_ = std::thread([this] { accept_loop(); });
    }

    ~RpcServer() { stop(); }

    std::uint16_t port() const { return listener_.port(); }

    void stop() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true)) {
            if (accept_thread_.joinable()) accept_thread_.join();
            return;
        }
        listener_.close();
        if (accept_thread_.joinable()) accept_thread_.join();
        std::vector<std::thread> workers;
        {
            std::lock_guard lock(mutex_);
            for (auto& session : sessions_) session.channel->shutdown();
            workers.swap(threads_);
        }
        for (auto& t : workers)
            if (t.joinable()) t.join();
    }

private:
    struct Session {
        std::shared_ptr<SecureChannel> channel;
    };

    void accept_loop() {
        while (!stopping_.load()) {
            TcpStream stream;
            try {
                stream = listener_.accept();
            } catch (const Error&) {
                break;  // listener closed
            }
            std::lock_guard lock(mutex_);
            if (stopping_.load()) break;
            threads_.emplace_back(
                [this, s = std::make_shared<TcpStream>(std::move(stream))]() mutable {
                    serve(std::move(*s));
                });
        }
    }

    void serve(TcpStream stream) {
        std::shared_ptr<SecureChannel> channel;
        try {
            channel = std::make_shared<SecureChannel>(
                SecureChannel::accept_server(std::move(stream), lookup_));
        } catch (const Error&) {
            return;  // refused connections are not fatal to the server
        }
        {
            std::lock_guard lock(mutex_);
            sessions_.push_back(Session{channel});
        }
        try {
            handler_(*channel);
        } catch (const Error&) {
            // connection-scoped failure; session ends
        } catch (const std::exception&) {
        }
        channel->close();
    }

    TcpListener listener_;
    SecureChannel::CredentialLookup lookup_;
    Handler handler_;
    std::thread accept_thread_;
    std::atomic<bool> stopping_{false};
    std::mutex mutex_;
    std::vector<std::thread> threads_;
    std::vector<Session> sessions_;
};

// Port 0 is only meaningful for listen endpoints (ephemeral bind).
inline std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& ep,
                                                            bool allow_zero_port = false) {
    auto pos = ep.rfind(':');
    if (pos == std::string::npos)
        throw ValidationError("endpoint must be host:port, got " + ep);
    std::string host = ep.substr(0, pos);
    int port = 0;
    try {
        port = std::stoi(ep.substr(pos + 1));
    } catch (const std::exception&) {
        throw ValidationError("invalid port in endpoint " + ep);
    }
    if (port < (allow_zero_port ? 0 : 1) || port > 65535)
        throw ValidationError("port out of range in endpoint " + ep);
    if (host.empty()) host = "127.0.0.1";
    return {host, static_cast<std::uint16_t>(port)};
}

}  // namespace scw
