#include "memreduce/engine/transport.hpp"

#include <cstring>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include <boost/asio.hpp>

#include "memreduce/core/codec.hpp"
#include "memreduce/error.hpp"

namespace memreduce::engine {

namespace asio = boost::asio;
using asio::ip::tcp;

std::vector<std::uint8_t> encode_frame(FrameType type, std::span<const std::uint8_t> payload) {
  std::vector<std::uint8_t> out;
  out.reserve(kFrameHeaderSize + payload.size());
  ByteWriter w(out);
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.u8(static_cast<std::uint8_t>(type));
  w.bytes(payload);
  return out;
}

std::pair<FrameType, std::uint32_t> decode_frame_header(std::span<const std::uint8_t> header) {
  ByteReader r(header);
  const std::uint32_t len = r.u32();
  const std::uint8_t type = r.u8();
  if (type < 1 || type > 3) throw Error(ErrorCode::MalformedRecord, "unknown frame type " + std::to_string(type));
  return {static_cast<FrameType>(type), len};
}

namespace {

class InProcessTransport final : public Transport {
 public:
  InProcessTransport(std::size_t num_places, FrameHandler handler)
      : num_places_(num_places), handler_(std::move(handler)) {}

  void send(PlaceId from, PlaceId to, FrameType type, std::vector<std::uint8_t> payload) override {
    if (stopped_) throw Error(ErrorCode::TransportFailure, "transport stopped");
    if (from >= num_places_ || to >= num_places_) throw Error(ErrorCode::InvalidArgument, "place out of range");
    count(payload.size());
    handler_(to, type, std::move(payload));
  }

  void stop() override { stopped_ = true; }

 private:
  std::size_t num_places_;
  FrameHandler handler_;
  std::atomic<bool> stopped_{false};
};

class SocketTransport final : public Transport {
 public:
  SocketTransport(std::size_t num_places, std::uint16_t base_port, FrameHandler handler)
      : handler_(std::move(handler)), work_(asio::make_work_guard(io_)) {
    const auto loopback = asio::ip::make_address("127.0.0.1");
    for (std::size_t p = 0; p < num_places; ++p) {
      const std::uint16_t port = base_port == 0 ? 0 : static_cast<std::uint16_t>(base_port + p);
      auto acc = std::make_unique<tcp::acceptor>(io_);
      boost::system::error_code ec;
      acc->open(tcp::v4(), ec);
      if (!ec) acc->bind(tcp::endpoint(loopback, port), ec);
      if (!ec) acc->listen(asio::socket_base::max_listen_connections, ec);
      if (ec) {
        throw Error(ErrorCode::TransportInitFailure,
                    "place " + std::to_string(p) + " cannot listen on port " + std::to_string(port) + ": " +
                        ec.message());
      }
      endpoints_.push_back(acc->local_endpoint());
      acceptors_.push_back(std::move(acc));
    }
    for (std::size_t p = 0; p < num_places; ++p) accept(static_cast<PlaceId>(p));
    thread_ = std::thread([this] { io_.run(); });
  }

  ~SocketTransport() override { stop(); }

  void send(PlaceId from, PlaceId to, FrameType type, std::vector<std::uint8_t> payload) override {
    if (stopped_) throw Error(ErrorCode::TransportFailure, "transport stopped");
    if (from >= endpoints_.size() || to >= endpoints_.size()) {
      throw Error(ErrorCode::InvalidArgument, "place out of range");
    }
    Connection& conn = connection(from, to);
    std::uint8_t header[kFrameHeaderSize];
    const auto len = static_cast<std::uint32_t>(payload.size());
    for (int i = 0; i < 4; ++i) header[i] = static_cast<std::uint8_t>(len >> (8 * i));
    header[4] = static_cast<std::uint8_t>(type);
    std::array<asio::const_buffer, 2> bufs{asio::buffer(header), asio::buffer(payload)};
    std::lock_guard lk(conn.mu);
    boost::system::error_code ec;
    asio::write(conn.socket, bufs, ec);
    if (ec) throw Error(ErrorCode::TransportFailure, "send to place " + std::to_string(to) + ": " + ec.message());
    count(payload.size());
  }

  void stop() override {
    if (stopped_.exchange(true)) return;
    asio::post(io_, [this] {
      for (auto& a : acceptors_) {
        boost::system::error_code ec;
        a->close(ec);
      }
    });
    {
      std::lock_guard lk(conns_mu_);
      for (auto& [key, conn] : conns_) {
        std::lock_guard ck(conn->mu);
        boost::system::error_code ec;
        conn->socket.shutdown(tcp::socket::shutdown_both, ec);
        conn->socket.close(ec);
      }
    }
    work_.reset();
    io_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  struct Connection {
    explicit Connection(asio::io_context& io) : socket(io) {}
    std::mutex mu;
    tcp::socket socket;
  };

  struct Session : std::enable_shared_from_this<Session> {
    Session(tcp::socket s, PlaceId p, SocketTransport* t) : socket(std::move(s)), place(p), owner(t) {}
    tcp::socket socket;
    PlaceId place;
    SocketTransport* owner;
    std::array<std::uint8_t, kFrameHeaderSize> header{};
    std::vector<std::uint8_t> payload;

    void read_header() {
      asio::async_read(socket, asio::buffer(header),
                       [self = shared_from_this()](boost::system::error_code ec, std::size_t) {
                         if (!ec) self->read_payload();
                       });
    }

    void read_payload() {
      FrameType type;
      std::uint32_t len;
      try {
        std::tie(type, len) = decode_frame_header(header);
      } catch (const Error& e) {
        std::cerr << "memreduce: dropping connection to place " << place << ": " << e.what() << "\n";
        return;
      }
      payload.assign(len, 0);
      asio::async_read(socket, asio::buffer(payload),
                       [self = shared_from_this(), type](boost::system::error_code ec, std::size_t) {
                         if (ec) return;
                         try {
                           self->owner->handler_(self->place, type, std::move(self->payload));
                         } catch (const std::exception& e) {
                           std::cerr << "memreduce: frame handler at place " << self->place << ": " << e.what()
                                     << "\n";
                         }
                         self->payload = {};
                         self->read_header();
                       });
    }
  };

  void accept(PlaceId place) {
    acceptors_[place]->async_accept([this, place](boost::system::error_code ec, tcp::socket socket) {
      if (ec) return;
      socket.set_option(tcp::no_delay(true), ec);
      std::make_shared<Session>(std::move(socket), place, this)->read_header();
      accept(place);
    });
  }

  Connection& connection(PlaceId from, PlaceId to) {
    std::lock_guard lk(conns_mu_);
    auto& slot = conns_[{from, to}];
    if (!slot) {
      auto conn = std::make_unique<Connection>(io_);
      boost::system::error_code ec;
      conn->socket.connect(endpoints_[to], ec);
      if (ec) throw Error(ErrorCode::TransportFailure, "connect to place " + std::to_string(to) + ": " + ec.message());
      conn->socket.set_option(tcp::no_delay(true), ec);
      slot = std::move(conn);
    }
    return *slot;
  }

  FrameHandler handler_;
  asio::io_context io_;
  asio::executor_work_guard<asio::io_context::executor_type> work_;
  std::vector<std::unique_ptr<tcp::acceptor>> acceptors_;
  std::vector<tcp::endpoint> endpoints_;
  std::mutex conns_mu_;
  std::map<std::pair<PlaceId, PlaceId>, std::unique_ptr<Connection>> conns_;
  std::thread thread_;
  std::atomic<bool> stopped_{false};
};

}  // namespace

std::unique_ptr<Transport> make_inprocess_transport(std::size_t num_places, FrameHandler handler) {
  return std::make_unique<InProcessTransport>(num_places, std::move(handler));
}

std::unique_ptr<Transport> make_socket_transport(std::size_t num_places, std::uint16_t base_port,
                                                 FrameHandler handler) {
  return std::make_unique<SocketTransport>(num_places, base_port, std::move(handler));
}

}  // namespace memreduce::engine
