#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vqos/frame.hpp"
#include "vqos/network_state.hpp"

namespace vqos::emu {

/// Maps data-rate classes onto the block quantizer and transport layout.
///
/// The quantization step follows a power law anchored at a reference rate:
///   q(rate) = round(q_ref * (rate_ref / rate)^gamma), clamped to [1, 255],
/// so lower rates always get a coarser step.
struct RateConfig {
  std::uint32_t q_ref = 12;
  double rate_ref_kbps = 1600.0;
  double gamma = 3.409;  // q(1200) = 32 with the defaults
  std::uint8_t block = 2;
  // Bytes per packet including kPacketHeaderBytes. The default payload of 11
  // bytes is the longest possible 2x2 block record, so no record fragments.
  std::size_t mtu = 27;

  std::uint16_t quant_step(int rate_kbps) const;
};

enum class LossKind { Bernoulli, GilbertElliott };

/// Per-packet drop process.
struct LossModel {
  LossKind kind = LossKind::Bernoulli;
  double p = 0.0;  // Bernoulli drop probability
  // Two-state Markov chain (good/bad).
  double p_good_to_bad = 0.0;
  double p_bad_to_good = 1.0;
  double loss_in_bad = 1.0;
  double loss_in_good = 0.0;

  static LossModel bernoulli(double p);
  /// Gilbert-Elliott chain with the given stationary loss rate and mean
  /// burst length (in packets) of the bad state; loss only in the bad state.
  static LossModel gilbert_elliott(double loss_rate, double mean_burst);

  double stationary_loss_rate() const;
  void validate() const;
};

struct EmulatorConfig {
  RateConfig rate;
  LossKind loss_kind = LossKind::Bernoulli;
  double mean_burst = 2.0;  // Gilbert-Elliott only
  /// Per-packet drop probability = loss_percent / 100 * loss_scale.
  double loss_scale = 100.0;

  LossModel loss_model(double loss_percent) const;
  /// Stable fingerprint of every field, for manifests and checkpoints.
  std::string fingerprint() const;
};

/// Errors from malformed streams or block indices.
class StreamError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint8_t kStreamVersion = 1;
inline constexpr std::size_t kStreamHeaderBytes = 17;
inline constexpr std::size_t kPacketHeaderBytes = 16;

/// Byte span of one block's record inside the encoded stream.
struct BlockSpan {
  std::uint32_t offset = 0;
  std::uint32_t length = 0;
};

/// Out-of-band layout of an encoded frame.
struct BlockIndex {
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::uint8_t channels = 1;
  std::uint8_t block = 8;
  std::uint16_t q = 1;
  std::vector<BlockSpan> blocks;  // channel, block row, block column order

  std::size_t blocks_x() const { return (width + block - 1) / block; }
  std::size_t blocks_y() const { return (height + block - 1) / block; }
  std::size_t expected_blocks() const { return blocks_x() * blocks_y() * channels; }
};

struct EncodedFrame {
  std::vector<std::uint8_t> bytes;
  BlockIndex index;
};

/// Uniform per-block quantizer with run-length coding.
///
/// Stream layout (little-endian): "VQEB", version u8, width u16, height u16,
/// channels u8, block u8, q u16, block count u32; then one record per block:
/// base u8, run count u16, runs of (length u8, level u8). A pixel decodes to
/// min(255, base + level * q) / 255. Frames whose sides are not multiples of
/// the block size are edge-padded; the header keeps the true size.
EncodedFrame encode_blocks(const Frame& frame, std::uint16_t q, std::uint8_t block);
EncodedFrame throttle_encode(const Frame& frame, int rate_kbps, const RateConfig& cfg,
                             const ClassSets& classes);

/// Full-stream decode; requires every byte.
Frame decode_stream(std::span<const std::uint8_t> bytes);
/// Parses the header and block spans of a complete stream.
BlockIndex read_index(std::span<const std::uint8_t> bytes);

struct Packet {
  std::uint32_t seq = 0;
  std::uint32_t frame_id = 0;
  std::uint32_t offset = 0;  // position of payload in the encoded stream
  std::vector<std::uint8_t> payload;
  std::uint32_t first_block = 0;  // [first_block, end_block) overlap the payload
  std::uint32_t end_block = 0;
  bool empty_marker = false;
};

/// Without an index, splits `encoded` into ceil(len / (mtu - header)) packets.
/// With an index, packets follow block boundaries: the stream header goes
/// alone, then each packet carries whole block records, and only a record
/// longer than the payload is fragmented. An empty input yields one packet
/// flagged as an empty marker.
std::vector<Packet> packetize(std::span<const std::uint8_t> encoded, std::size_t mtu,
                              std::uint32_t frame_id = 0, const BlockIndex* index = nullptr);
/// Concatenates payloads in sequence order. Requires a gap-free sequence.
std::vector<std::uint8_t> reassemble(std::span<const Packet> packets);

/// Drops packets according to `model`, using a stream seeded with `seed`.
std::vector<Packet> apply_loss(std::span<const Packet> packets, const LossModel& model,
                               std::uint64_t seed);

/// Value written into blocks that are lost and have no reference frame.
inline constexpr double kConcealGray = 0.5;

struct DecodeResult {
  Frame frame;
  std::size_t blocks_lost = 0;
};

/// Rebuilds a frame from whatever packets arrived. A block decodes only when
/// all of its bytes arrived; otherwise it is copied from `reference` or
/// filled with kConcealGray.
DecodeResult decode_conceal(std::span<const Packet> survivors, const BlockIndex& index,
                            const Frame* reference = nullptr);

struct DegradeResult {
  Frame frame;
  std::size_t packets_sent = 0;
  std::size_t packets_lost = 0;
  std::size_t blocks_lost = 0;
  std::size_t encoded_bytes = 0;
};

/// encode -> packetize -> lose -> decode with concealment.
DegradeResult degrade(const Frame& frame, const NetworkState& state, const EmulatorConfig& cfg,
                      const ClassSets& classes, std::uint64_t seed, std::uint32_t frame_id = 0,
                      const Frame* reference = nullptr);

}  // namespace vqos::emu
