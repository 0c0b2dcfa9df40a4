#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "memreduce/error.hpp"
#include "memreduce/kvstore/store.hpp"

namespace memreduce::kvstore {

// Store request/response messages carried in CONTROL frames:
//   [u8 opcode][u32 len][canonical path UTF-8][op-specific payload]
// Requests carry payload [u64 request id][...]; responses use opcode | 0x80
// and payload [u64 request id][u8 status][result or error text].
enum class StoreOp : std::uint8_t { GetInfo = 1, Mkdirs = 2, Delete = 3, Rename = 4 };
inline constexpr std::uint8_t kResponseBit = 0x80;

struct StoreRequest {
  StoreOp op = StoreOp::GetInfo;
  StorePath path;
  std::uint64_t request_id = 0;
  std::optional<StorePath> dest;  // RENAME only

  friend bool operator==(const StoreRequest&, const StoreRequest&) = default;
};

struct StoreResponse {
  StoreOp op = StoreOp::GetInfo;
  StorePath path;
  std::uint64_t request_id = 0;
  std::optional<ErrorCode> error;
  std::string message;
  std::optional<PathInfo> info;  // GET_INFO success only
};

std::vector<std::uint8_t> encode_request(const StoreRequest& req);
StoreRequest decode_request(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_response(const StoreResponse& resp);
StoreResponse decode_response(std::span<const std::uint8_t> bytes);

// Runs a request against the store; failures become error responses.
StoreResponse execute(Store& store, const StoreRequest& req);

}  // namespace memreduce::kvstore
