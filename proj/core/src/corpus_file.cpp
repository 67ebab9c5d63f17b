#include "mapfdt/corpus_file.hpp"

#include <cstring>
#include <stdexcept>

#include "mapfdt/util/binio.hpp"

namespace mapfdt {

std::string encode_chunk_record(const TrajectoryChunk& chunk) {
  if (int(chunk.slots.size()) != kContextLength || int(chunk.mask.size()) != kContextLength)
    throw std::invalid_argument("encode_chunk_record: chunk must have exactly 50 slots");
  std::string out;
  out.reserve(kCorpusRecordPayload);
  put_u64(out, chunk.episode_id);
  put_u32(out, chunk.agent_id);
  put_u32(out, chunk.chunk_index);
  put_u8(out, uint8_t(chunk.real_length));
  for (int k = 0; k < kContextLength; ++k) {
    const Transition& tr = chunk.slots[size_t(k)];
    put_f32(out, float(tr.rtg));
    put_u8(out, tr.action);
    put_u16(out, uint16_t(tr.timestep));
    auto bits = tr.obs.pack_bits();
    out.append(reinterpret_cast<const char*>(bits.data()), bits.size());
  }
  uint8_t mask_bits[7] = {};
  for (int k = 0; k < kContextLength; ++k)
    if (chunk.mask[size_t(k)]) mask_bits[k / 8] |= uint8_t(1u << (k % 8));
  out.append(reinterpret_cast<const char*>(mask_bits), sizeof(mask_bits));
  if (out.size() != kCorpusRecordPayload)
    throw std::logic_error("encode_chunk_record: payload size drifted from the format contract");
  return out;
}

TrajectoryChunk decode_chunk_record(const std::string& payload) {
  if (payload.size() != kCorpusRecordPayload)
    throw std::runtime_error("corpus record has wrong size");
  ByteReader r(payload);
  TrajectoryChunk chunk;
  chunk.episode_id = r.u64();
  chunk.agent_id = r.u32();
  chunk.chunk_index = r.u32();
  chunk.real_length = r.u8();
  chunk.slots.resize(kContextLength);
  for (int k = 0; k < kContextLength; ++k) {
    Transition& tr = chunk.slots[size_t(k)];
    tr.rtg = double(r.f32());
    tr.action = r.u8();
    tr.timestep = r.u16();
    tr.obs = Observation::unpack_bits(r.take(50));
    tr.reward = 0.0;  // audit rewards are not stored in the container
  }
  const uint8_t* mask_bits = r.take(7);
  chunk.mask.resize(kContextLength);
  for (int k = 0; k < kContextLength; ++k)
    chunk.mask[size_t(k)] = (mask_bits[k / 8] >> (k % 8)) & 1u;
  return chunk;
}

CorpusWriter::CorpusWriter(std::string path, std::string metadata_json) : path_(std::move(path)) {
  buffer_.append(kCorpusMagic, sizeof(kCorpusMagic));
  put_u32(buffer_, kCorpusVersion);
  put_u64(buffer_, metadata_json.size());
  buffer_ += metadata_json;
}

void CorpusWriter::write(const TrajectoryChunk& chunk) {
  if (closed_) throw std::logic_error("CorpusWriter: write after close");
  std::string payload = encode_chunk_record(chunk);
  put_u32(buffer_, uint32_t(payload.size()));
  buffer_ += payload;
  ++chunks_;
}

void CorpusWriter::close() {
  if (closed_) return;
  closed_ = true;
  write_file_bytes(path_, buffer_);
}

CorpusWriter::~CorpusWriter() {
  if (!closed_) {
    try {
      close();
    } catch (...) {
      // destructor must not throw; callers wanting the error call close()
    }
  }
}

CorpusReader::CorpusReader(const std::string& path) {
  std::string bytes = read_file_bytes(path);
  ByteReader r(bytes);
  if (std::memcmp(r.take(sizeof(kCorpusMagic)), kCorpusMagic, sizeof(kCorpusMagic)) != 0)
    throw std::runtime_error("not a corpus file: " + path);
  uint32_t version = r.u32();
  if (version != kCorpusVersion)
    throw std::runtime_error("unsupported corpus version " + std::to_string(version));
  uint64_t meta_len = r.u64();
  metadata_ = r.bytes(meta_len);
  while (r.remaining() > 0) {
    uint32_t len = r.u32();
    chunks_.push_back(decode_chunk_record(r.bytes(len)));
  }
}

}  // namespace mapfdt
