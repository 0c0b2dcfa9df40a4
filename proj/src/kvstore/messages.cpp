#include "memreduce/kvstore/messages.hpp"

#include "memreduce/core/codec.hpp"

namespace memreduce::kvstore {

namespace {

std::string_view as_text(std::span<const std::uint8_t> s) {
  return {reinterpret_cast<const char*>(s.data()), s.size()};
}

void put_info(ByteWriter& w, const PathInfo& info) {
  w.u8(static_cast<std::uint8_t>(info.kind));
  w.u64(info.created_at);
  w.u32(static_cast<std::uint32_t>(info.blocks.size()));
  for (const auto& b : info.blocks) {
    w.u64(b.block_id);
    w.u32(b.home);
    w.u8(static_cast<std::uint8_t>(b.kind));
    w.u64(b.length);
    w.u8(b.partition.has_value() ? 1 : 0);
    w.u32(b.partition.value_or(0));
  }
}

PathInfo get_info_payload(ByteReader& r, const StorePath& path) {
  PathInfo info;
  info.path = path;
  const auto kind = r.u8();
  if (kind != 1 && kind != 2) throw Error(ErrorCode::MalformedRecord, "bad path kind");
  info.kind = static_cast<PathKind>(kind);
  info.created_at = r.u64();
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    BlockInfo b;
    b.block_id = r.u64();
    b.home = r.u32();
    b.kind = static_cast<BlockKind>(r.u8());
    b.length = r.u64();
    const bool has = r.u8() != 0;
    const auto part = r.u32();
    if (has) b.partition = part;
    info.blocks.push_back(b);
  }
  return info;
}

}  // namespace

std::vector<std::uint8_t> encode_request(const StoreRequest& req) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(req.op));
  w.length_prefixed(req.path.str());
  w.u64(req.request_id);
  if (req.op == StoreOp::Rename) w.length_prefixed(req.dest.value_or(StorePath()).str());
  return w.take();
}

StoreRequest decode_request(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  StoreRequest req;
  const auto op = r.u8();
  if (op < 1 || op > 4) throw Error(ErrorCode::MalformedRecord, "unknown store opcode " + std::to_string(op));
  req.op = static_cast<StoreOp>(op);
  req.path = StorePath::parse(as_text(r.length_prefixed()));
  req.request_id = r.u64();
  if (req.op == StoreOp::Rename) req.dest = StorePath::parse(as_text(r.length_prefixed()));
  return req;
}

std::vector<std::uint8_t> encode_response(const StoreResponse& resp) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(resp.op) | kResponseBit);
  w.length_prefixed(resp.path.str());
  w.u64(resp.request_id);
  if (resp.error) {
    w.u8(static_cast<std::uint8_t>(*resp.error) + 1);
    w.length_prefixed(resp.message);
  } else {
    w.u8(0);
    if (resp.op == StoreOp::GetInfo && resp.info) put_info(w, *resp.info);
  }
  return w.take();
}

StoreResponse decode_response(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  StoreResponse resp;
  const auto op = r.u8();
  if ((op & kResponseBit) == 0) throw Error(ErrorCode::MalformedRecord, "not a store response");
  resp.op = static_cast<StoreOp>(op & ~kResponseBit);
  resp.path = StorePath::parse(as_text(r.length_prefixed()));
  resp.request_id = r.u64();
  const auto status = r.u8();
  if (status != 0) {
    resp.error = static_cast<ErrorCode>(status - 1);
    resp.message = std::string(as_text(r.length_prefixed()));
  } else if (resp.op == StoreOp::GetInfo) {
    resp.info = get_info_payload(r, resp.path);
  }
  return resp;
}

StoreResponse execute(Store& store, const StoreRequest& req) {
  StoreResponse resp{req.op, req.path, req.request_id, std::nullopt, {}, std::nullopt};
  try {
    switch (req.op) {
      case StoreOp::GetInfo: resp.info = store.get_info(req.path); break;
      case StoreOp::Mkdirs: store.mkdirs(req.path); break;
      case StoreOp::Delete: store.remove(req.path); break;
      case StoreOp::Rename: store.rename(req.path, req.dest.value_or(StorePath())); break;
    }
  } catch (const Error& e) {
    resp.error = e.code();
    resp.message = e.what();
  }
  return resp;
}

}  // namespace memreduce::kvstore
