#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "memreduce/core/types.hpp"

namespace memreduce::engine {

enum class FrameType : std::uint8_t { ShuffleBatch = 1, Barrier = 2, Control = 3 };

enum class TransportKind : std::uint8_t { InProcess, Socket };

// Wire frame: [u32 payload length][u8 frame type][payload].
inline constexpr std::size_t kFrameHeaderSize = 5;
std::vector<std::uint8_t> encode_frame(FrameType type, std::span<const std::uint8_t> payload);
// Parses a header; throws MalformedRecord on an unknown type.
std::pair<FrameType, std::uint32_t> decode_frame_header(std::span<const std::uint8_t> header);

// Receives (destination place, frame type, payload). Frames between one
// (source, destination) pair are delivered in send order.
using FrameHandler = std::function<void(PlaceId, FrameType, std::vector<std::uint8_t>)>;

class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(PlaceId from, PlaceId to, FrameType type, std::vector<std::uint8_t> payload) = 0;
  virtual void stop() = 0;
  std::uint64_t bytes_sent() const noexcept { return bytes_sent_.load(); }
  std::uint64_t frames_sent() const noexcept { return frames_sent_.load(); }

 protected:
  void count(std::size_t payload) {
    bytes_sent_ += payload + kFrameHeaderSize;
    ++frames_sent_;
  }

 private:
  std::atomic<std::uint64_t> bytes_sent_{0};
  std::atomic<std::uint64_t> frames_sent_{0};
};

// Places share the process; payloads still cross as bytes only.
std::unique_ptr<Transport> make_inprocess_transport(std::size_t num_places, FrameHandler handler);

// One loopback TCP listener per place (base_port + place, or ephemeral ports
// when base_port is 0). Throws TransportInitFailure if a listener cannot bind.
std::unique_ptr<Transport> make_socket_transport(std::size_t num_places, std::uint16_t base_port,
                                                 FrameHandler handler);

}  // namespace memreduce::engine
