#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mapfdt/dataset.hpp"

namespace mapfdt {

// Corpus container, little-endian throughout:
//
//   bytes 0..11   magic "MAPFDTCORPUS"
//   bytes 12..15  format version, u32 (currently 1)
//   u64           metadata length, followed by that many bytes of JSON
//   records       u32 payload length, then the payload:
//                   episode id   u64
//                   agent id     u32
//                   chunk index  u32
//                   real length  u8
//                   50 slots of { rtg f32, action u8, timestep u16,
//                                 obs 400 bits packed LSB-first (50 bytes) }
//                   mask, 50 bits packed LSB-first (7 bytes)
//
// Slot payload is 57 bytes, record payload 2874 bytes. Padded slots and the
// mask's 6 trailing bits are zero. The layout is a compatibility contract;
// round-trips must be bit-exact.
inline constexpr char kCorpusMagic[12] = {'M', 'A', 'P', 'F', 'D', 'T',
                                          'C', 'O', 'R', 'P', 'U', 'S'};
inline constexpr uint32_t kCorpusVersion = 1;
inline constexpr size_t kCorpusRecordPayload = 2874;

std::string encode_chunk_record(const TrajectoryChunk& chunk);
TrajectoryChunk decode_chunk_record(const std::string& payload);

class CorpusWriter {
 public:
  CorpusWriter(std::string path, std::string metadata_json);
  void write(const TrajectoryChunk& chunk);
  // Flushes everything to disk; no writes allowed afterwards.
  void close();
  uint64_t chunks_written() const { return chunks_; }
  ~CorpusWriter();

 private:
  std::string path_;
  std::string buffer_;
  uint64_t chunks_ = 0;
  bool closed_ = false;
};

class CorpusReader {
 public:
  explicit CorpusReader(const std::string& path);
  const std::string& metadata_json() const { return metadata_; }
  const std::vector<TrajectoryChunk>& chunks() const { return chunks_; }

 private:
  std::string metadata_;
  std::vector<TrajectoryChunk> chunks_;
};

}  // namespace mapfdt
