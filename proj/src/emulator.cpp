#include "vqos/emulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "vqos/rng.hpp"

namespace vqos::emu {
namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[at + static_cast<std::size_t>(i)];
  return v;
}

// 8-bit samples of one block, edge-replicated past the frame border.
void gather_block(const Frame& f, std::size_t c, std::size_t by, std::size_t bx,
                  std::size_t block, std::vector<std::uint8_t>& out) {
  out.clear();
  for (std::size_t y = 0; y < block; ++y) {
    const std::size_t sy = std::min(by * block + y, f.height - 1);
    for (std::size_t x = 0; x < block; ++x) {
      const std::size_t sx = std::min(bx * block + x, f.width - 1);
      out.push_back(to_byte(f.at(c, sy, sx)));
    }
  }
}

// Parses one block record at `at`; returns the record length, or 0 when the
// record is malformed or does not fit in `avail` bytes.
std::size_t decode_block(std::span<const std::uint8_t> b, std::size_t at, std::size_t avail,
                         std::size_t block, std::uint16_t q, std::vector<std::uint8_t>& out) {
  if (avail < 3) return 0;
  const std::uint8_t base = b[at];
  const std::uint16_t runs = get_u16(b, at + 1);
  const std::size_t len = 3 + 2 * static_cast<std::size_t>(runs);
  if (avail < len) return 0;
  out.clear();
  for (std::size_t r = 0; r < runs; ++r) {
    const std::uint8_t count = b[at + 3 + 2 * r];
    const std::uint8_t level = b[at + 4 + 2 * r];
    const unsigned v = std::min(255u, base + static_cast<unsigned>(level) * q);
    out.insert(out.end(), count, static_cast<std::uint8_t>(v));
  }
  return out.size() == block * block ? len : 0;
}

void write_block(Frame& f, std::size_t c, std::size_t by, std::size_t bx, std::size_t block,
                 const std::vector<std::uint8_t>& samples) {
  for (std::size_t y = 0; y < block; ++y) {
    const std::size_t fy = by * block + y;
    if (fy >= f.height) break;
    for (std::size_t x = 0; x < block; ++x) {
      const std::size_t fx = bx * block + x;
      if (fx >= f.width) break;
      f.at(c, fy, fx) = from_byte(samples[y * block + x]);
    }
  }
}

void conceal_block(Frame& f, std::size_t c, std::size_t by, std::size_t bx, std::size_t block,
                   const Frame* reference) {
  for (std::size_t y = by * block; y < std::min(f.height, (by + 1) * block); ++y) {
    for (std::size_t x = bx * block; x < std::min(f.width, (bx + 1) * block); ++x) {
      f.at(c, y, x) = reference ? reference->at(c, y, x) : kConcealGray;
    }
  }
}

void validate_index(const BlockIndex& idx, std::size_t stream_len) {
  if (idx.width == 0 || idx.height == 0 || idx.channels == 0 || idx.block == 0 || idx.q == 0) {
    throw StreamError("block index has a zero dimension, block size or step");
  }
  if (idx.blocks.size() != idx.expected_blocks()) {
    throw StreamError("block index lists " + std::to_string(idx.blocks.size()) +
                      " blocks, layout needs " + std::to_string(idx.expected_blocks()));
  }
  std::size_t prev_end = kStreamHeaderBytes;
  for (const auto& span : idx.blocks) {
    if (span.offset < prev_end || span.length < 3 ||
        static_cast<std::size_t>(span.offset) + span.length > stream_len) {
      throw StreamError("block index spans overlap, are unordered, or exceed the stream");
    }
    prev_end = span.offset + span.length;
  }
}

}  // namespace

std::uint16_t RateConfig::quant_step(int rate_kbps) const {
  if (rate_kbps <= 0) throw LabelError("data rate must be positive");
  const double q = std::round(q_ref * std::pow(rate_ref_kbps / rate_kbps, gamma));
  return static_cast<std::uint16_t>(std::clamp(q, 1.0, 255.0));
}

LossModel LossModel::bernoulli(double p) {
  LossModel m;
  m.kind = LossKind::Bernoulli;
  m.p = p;
  m.validate();
  return m;
}

LossModel LossModel::gilbert_elliott(double loss_rate, double mean_burst) {
  if (!(mean_burst >= 1.0)) throw std::invalid_argument("mean burst length must be >= 1");
  if (!(loss_rate >= 0.0 && loss_rate < 1.0)) {
    throw std::invalid_argument("Gilbert-Elliott loss rate must be in [0,1)");
  }
  LossModel m;
  m.kind = LossKind::GilbertElliott;
  m.p_bad_to_good = 1.0 / mean_burst;
  // Stationary P(bad) = g / (g + b) = loss_rate with loss only in the bad state.
  m.p_good_to_bad = loss_rate * m.p_bad_to_good / (1.0 - loss_rate);
  m.loss_in_bad = 1.0;
  m.loss_in_good = 0.0;
  m.p = loss_rate;
  m.validate();
  return m;
}

double LossModel::stationary_loss_rate() const {
  if (kind == LossKind::Bernoulli) return p;
  const double denom = p_good_to_bad + p_bad_to_good;
  if (denom == 0.0) return loss_in_good;  // chain never leaves the good state
  const double bad = p_good_to_bad / denom;
  return bad * loss_in_bad + (1.0 - bad) * loss_in_good;
}

void LossModel::validate() const {
  for (double v : {p, p_good_to_bad, p_bad_to_good, loss_in_bad, loss_in_good}) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("loss probabilities must be in [0,1]");
  }
}

LossModel EmulatorConfig::loss_model(double loss_percent) const {
  const double p = std::min(1.0, loss_percent / 100.0 * loss_scale);
  if (loss_kind == LossKind::GilbertElliott && p < 1.0) return LossModel::gilbert_elliott(p, mean_burst);
  return LossModel::bernoulli(p);
}

std::string EmulatorConfig::fingerprint() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "q_ref=%u;rate_ref=%.6g;gamma=%.6g;block=%u;mtu=%zu;loss=%s;burst=%.6g;scale=%.6g",
                rate.q_ref, rate.rate_ref_kbps, rate.gamma, rate.block, rate.mtu,
                loss_kind == LossKind::Bernoulli ? "bernoulli" : "gilbert-elliott", mean_burst,
                loss_scale);
  return buf;
}

EncodedFrame encode_blocks(const Frame& frame, std::uint16_t q, std::uint8_t block) {
  validate_frame(frame);
  if (q == 0) throw std::invalid_argument("quantization step must be >= 1");
  if (block == 0) throw std::invalid_argument("block size must be >= 1");
  if (frame.width > 0xFFFF || frame.height > 0xFFFF || frame.channels > 0xFF) {
    throw std::invalid_argument("frame too large for the stream header");
  }
  EncodedFrame enc;
  auto& idx = enc.index;
  idx.width = static_cast<std::uint16_t>(frame.width);
  idx.height = static_cast<std::uint16_t>(frame.height);
  idx.channels = static_cast<std::uint8_t>(frame.channels);
  idx.block = block;
  idx.q = q;

  auto& out = enc.bytes;
  out = {'V', 'Q', 'E', 'B', kStreamVersion};
  put_u16(out, idx.width);
  put_u16(out, idx.height);
  out.push_back(idx.channels);
  out.push_back(block);
  put_u16(out, q);
  put_u32(out, static_cast<std::uint32_t>(idx.expected_blocks()));

  std::vector<std::uint8_t> samples;
  std::vector<std::pair<std::uint8_t, std::uint8_t>> runs;
  for (std::size_t c = 0; c < frame.channels; ++c) {
    for (std::size_t by = 0; by < idx.blocks_y(); ++by) {
      for (std::size_t bx = 0; bx < idx.blocks_x(); ++bx) {
        gather_block(frame, c, by, bx, block, samples);
        const std::uint8_t base = *std::min_element(samples.begin(), samples.end());
        runs.clear();
        for (std::uint8_t s : samples) {
          const auto level = static_cast<std::uint8_t>((s - base + q / 2) / q);
          if (!runs.empty() && runs.back().second == level && runs.back().first < 255) {
            ++runs.back().first;
          } else {
            runs.emplace_back(1, level);
          }
        }
        const auto offset = static_cast<std::uint32_t>(out.size());
        out.push_back(base);
        put_u16(out, static_cast<std::uint16_t>(runs.size()));
        for (auto [count, level] : runs) {
          out.push_back(count);
          out.push_back(level);
        }
        idx.blocks.push_back({offset, static_cast<std::uint32_t>(out.size() - offset)});
      }
    }
  }
  return enc;
}

EncodedFrame throttle_encode(const Frame& frame, int rate_kbps, const RateConfig& cfg,
                             const ClassSets& classes) {
  classes.rate_index(rate_kbps);  // rejects unknown classes
  return encode_blocks(frame, cfg.quant_step(rate_kbps), cfg.block);
}

BlockIndex read_index(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kStreamHeaderBytes || bytes[0] != 'V' || bytes[1] != 'Q' ||
      bytes[2] != 'E' || bytes[3] != 'B') {
    throw StreamError("missing VQEB stream header");
  }
  if (bytes[4] != kStreamVersion) {
    throw StreamError("unsupported stream version " + std::to_string(bytes[4]));
  }
  BlockIndex idx;
  idx.width = get_u16(bytes, 5);
  idx.height = get_u16(bytes, 7);
  idx.channels = bytes[9];
  idx.block = bytes[10];
  idx.q = get_u16(bytes, 11);
  const std::uint32_t count = get_u32(bytes, 13);
  if (idx.width == 0 || idx.height == 0 || idx.channels == 0 || idx.block == 0 || idx.q == 0 ||
      count != idx.expected_blocks()) {
    throw StreamError("inconsistent stream header");
  }
  std::size_t at = kStreamHeaderBytes;
  std::vector<std::uint8_t> scratch;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t len = decode_block(bytes, at, bytes.size() - at, idx.block, idx.q, scratch);
    if (len == 0) throw StreamError("corrupt block record " + std::to_string(i));
    idx.blocks.push_back({static_cast<std::uint32_t>(at), static_cast<std::uint32_t>(len)});
    at += len;
  }
  if (at != bytes.size()) throw StreamError("trailing bytes after last block");
  return idx;
}

Frame decode_stream(std::span<const std::uint8_t> bytes) {
  const BlockIndex idx = read_index(bytes);
  Packet whole;
  whole.payload.assign(bytes.begin(), bytes.end());
  return decode_conceal(std::span<const Packet>(&whole, 1), idx).frame;
}

namespace {

Packet make_packet(std::span<const std::uint8_t> encoded, std::size_t begin, std::size_t end,
                   std::uint32_t seq, std::uint32_t frame_id) {
  Packet p;
  p.seq = seq;
  p.frame_id = frame_id;
  p.offset = static_cast<std::uint32_t>(begin);
  p.payload.assign(encoded.begin() + static_cast<std::ptrdiff_t>(begin),
                   encoded.begin() + static_cast<std::ptrdiff_t>(end));
  return p;
}

}  // namespace

std::vector<Packet> packetize(std::span<const std::uint8_t> encoded, std::size_t mtu,
                              std::uint32_t frame_id, const BlockIndex* index) {
  if (mtu <= kPacketHeaderBytes) {
    throw std::invalid_argument("MTU " + std::to_string(mtu) + " does not exceed the " +
                                std::to_string(kPacketHeaderBytes) + "-byte packet header");
  }
  std::vector<Packet> packets;
  if (encoded.empty()) {
    Packet p;
    p.frame_id = frame_id;
    p.empty_marker = true;
    packets.push_back(std::move(p));
    return packets;
  }
  const std::size_t payload = mtu - kPacketHeaderBytes;
  if (!index) {
    for (std::size_t off = 0; off < encoded.size(); off += payload) {
      packets.push_back(make_packet(encoded, off, std::min(encoded.size(), off + payload),
                                    static_cast<std::uint32_t>(packets.size()), frame_id));
    }
    return packets;
  }

  // Block-aligned: the stream header travels alone, then each packet takes
  // as many whole block records as fit. A record longer than the payload
  // is fragmented over consecutive packets of its own.
  const auto& blocks = index->blocks;
  validate_index(*index, encoded.size());
  auto emit = [&](std::size_t begin, std::size_t end, std::size_t first, std::size_t last) {
    Packet p = make_packet(encoded, begin, end, static_cast<std::uint32_t>(packets.size()), frame_id);
    p.first_block = static_cast<std::uint32_t>(first);
    p.end_block = static_cast<std::uint32_t>(last);
    packets.push_back(std::move(p));
  };
  const std::size_t header_end = blocks.empty() ? encoded.size() : blocks.front().offset;
  for (std::size_t off = 0; off < header_end; off += payload) {
    emit(off, std::min(header_end, off + payload), 0, 0);
  }
  std::size_t b = 0;
  while (b < blocks.size()) {
    const std::size_t begin = blocks[b].offset;
    if (blocks[b].length > payload) {
      const std::size_t end = begin + blocks[b].length;
      for (std::size_t off = begin; off < end; off += payload) {
        emit(off, std::min(end, off + payload), b, b + 1);
      }
      ++b;
      continue;
    }
    std::size_t last = b;
    while (last < blocks.size() &&
           blocks[last].offset + blocks[last].length - begin <= payload) {
      ++last;
    }
    emit(begin, blocks[last - 1].offset + blocks[last - 1].length, b, last);
    b = last;
  }
  return packets;
}

std::vector<std::uint8_t> reassemble(std::span<const Packet> packets) {
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < packets.size(); ++i) {
    if (packets[i].seq != i || packets[i].offset != out.size()) {
      throw StreamError("cannot reassemble: packet sequence has a gap at " + std::to_string(i));
    }
    out.insert(out.end(), packets[i].payload.begin(), packets[i].payload.end());
  }
  return out;
}

std::vector<Packet> apply_loss(std::span<const Packet> packets, const LossModel& model,
                               std::uint64_t seed) {
  model.validate();
  Rng rng(seed);
  std::vector<Packet> survivors;
  survivors.reserve(packets.size());
  if (model.kind == LossKind::Bernoulli) {
    for (const auto& p : packets) {
      if (!rng.bernoulli(model.p)) survivors.push_back(p);
    }
    return survivors;
  }
  const double denom = model.p_good_to_bad + model.p_bad_to_good;
  bool bad = denom > 0.0 && rng.bernoulli(model.p_good_to_bad / denom);
  for (const auto& p : packets) {
    const bool lost = rng.bernoulli(bad ? model.loss_in_bad : model.loss_in_good);
    if (!lost) survivors.push_back(p);
    bad = bad ? !rng.bernoulli(model.p_bad_to_good) : rng.bernoulli(model.p_good_to_bad);
  }
  return survivors;
}

DecodeResult decode_conceal(std::span<const Packet> survivors, const BlockIndex& index,
                            const Frame* reference) {
  // Lay the surviving payloads out at their stream offsets.
  std::size_t stream_len = 0;
  for (const auto& p : survivors) stream_len = std::max(stream_len, p.offset + p.payload.size());
  if (!index.blocks.empty()) {
    const auto& last = index.blocks.back();
    stream_len = std::max<std::size_t>(stream_len, last.offset + last.length);
  }
  validate_index(index, stream_len);
  if (reference && (reference->width != index.width || reference->height != index.height ||
                    reference->channels != index.channels)) {
    throw StreamError("reference frame size does not match the block index");
  }
  std::vector<std::uint8_t> bytes(stream_len, 0);
  std::vector<std::uint8_t> have(stream_len, 0);
  for (const auto& p : survivors) {
    std::copy(p.payload.begin(), p.payload.end(), bytes.begin() + p.offset);
    std::fill_n(have.begin() + p.offset, p.payload.size(), std::uint8_t{1});
  }

  DecodeResult res{Frame(index.width, index.height, index.channels), 0};
  std::vector<std::uint8_t> samples;
  std::size_t b = 0;
  for (std::size_t c = 0; c < index.channels; ++c) {
    for (std::size_t by = 0; by < index.blocks_y(); ++by) {
      for (std::size_t bx = 0; bx < index.blocks_x(); ++bx, ++b) {
        const auto& span = index.blocks[b];
        const bool complete = std::all_of(have.begin() + span.offset,
                                          have.begin() + span.offset + span.length,
                                          [](std::uint8_t h) { return h != 0; });
        const std::size_t len =
            complete ? decode_block(bytes, span.offset, span.length, index.block, index.q, samples)
                     : 0;
        if (len == span.length) {
          write_block(res.frame, c, by, bx, index.block, samples);
        } else {
          conceal_block(res.frame, c, by, bx, index.block, reference);
          ++res.blocks_lost;
        }
      }
    }
  }
  return res;
}

DegradeResult degrade(const Frame& frame, const NetworkState& state, const EmulatorConfig& cfg,
                      const ClassSets& classes, std::uint64_t seed, std::uint32_t frame_id,
                      const Frame* reference) {
  classes.loss_index(state.loss_percent);
  auto enc = throttle_encode(frame, state.rate_kbps, cfg.rate, classes);
  auto packets = packetize(enc.bytes, cfg.rate.mtu, frame_id, &enc.index);
  auto survivors = apply_loss(packets, cfg.loss_model(state.loss_percent), seed);
  auto decoded = decode_conceal(survivors, enc.index, reference);
  DegradeResult res;
  res.frame = std::move(decoded.frame);
  res.blocks_lost = decoded.blocks_lost;
  res.packets_sent = packets.size();
  res.packets_lost = packets.size() - survivors.size();
  res.encoded_bytes = enc.bytes.size();
  return res;
}

}  // namespace vqos::emu
