#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vqos/emulator.hpp"
#include "vqos/frame.hpp"
#include "vqos/network_state.hpp"
#include "vqos/tensor.hpp"

namespace vqos::corpus {

enum class Motif { MovingRectangle, MovingDisc, GradientNoise, CheckerDrift };

Motif parse_motif(const std::string& name);
std::string motif_name(Motif m);
inline constexpr Motif kAllMotifs[] = {Motif::MovingRectangle, Motif::MovingDisc,
                                       Motif::GradientNoise, Motif::CheckerDrift};

/// Bumped whenever gen_video output changes for a given seed.
inline constexpr int kGeneratorVersion = 1;

/// Peak amplitude of the static fine texture laid over every motif.
inline constexpr double kTextureAmplitude = 0.04;

/// Motion parameters of the moving-rectangle motif, exposed for tests.
struct RectangleTrack {
  std::size_t rect_w = 0, rect_h = 0;
  int speed = 0;  // max per-frame displacement along either axis
};
RectangleTrack rectangle_track(std::uint64_t seed, std::size_t width, std::size_t height);

/// Deterministic synthetic clip. Consecutive frames differ by a small
/// motion; every pixel lies on the 8-bit grid.
std::vector<Frame> gen_video(std::uint64_t seed, std::size_t n_frames, std::size_t width,
                             std::size_t height, Motif motif, std::size_t channels = 1);

enum class Split { Train, Test };
std::string split_name(Split s);
Split parse_split(const std::string& s);

struct CorpusConfig {
  std::filesystem::path out_dir;
  std::size_t frames = 200;
  std::size_t frames_per_video = 10;
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t channels = 1;
  ClassSets classes;
  emu::EmulatorConfig emulator;
  std::uint64_t seed = 1;
  std::optional<Motif> motif;  // unset: cycle through every motif per video
  double train_fraction = 0.8;
};

struct Record {
  std::string degraded;  // relative to the corpus directory
  std::string original;
  NetworkState state;
  Split split = Split::Train;
  std::uint64_t seed = 0;
  std::uint32_t frame_id = 0;
};

struct Manifest {
  ClassSets classes;
  std::size_t width = 0, height = 0, channels = 1;
  std::string emulator_fingerprint;
  std::string emulator_hash;
  int generator_version = kGeneratorVersion;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  std::vector<Record> records;

  std::vector<std::size_t> indices(Split split) const;
};

inline constexpr const char* kManifestName = "manifest.jsonl";

/// Corpus problems: missing/invalid manifest, missing files, bad config.
class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// FNV-1a over the emulator fingerprint, as 16 hex digits.
std::string config_hash(const std::string& text);

/// Writes originals, degraded frames and (last) the manifest.
Manifest build_corpus(const CorpusConfig& config);

Manifest load_manifest(const std::filesystem::path& corpus_dir);
void save_manifest(const Manifest& m, const std::filesystem::path& corpus_dir);

struct VerifyReport {
  bool ok = true;
  std::vector<std::string> problems;
};
/// Checks manifest <-> disk consistency and split invariants in one pass.
VerifyReport verify_corpus(const std::filesystem::path& corpus_dir);

/// One training/evaluation batch; images are [N, C, H, W] in [0, 1].
struct Batch {
  Tensor received;
  Tensor original;
  std::vector<std::size_t> rate_idx;
  std::vector<std::size_t> loss_idx;
  std::vector<std::size_t> records;  // manifest record positions
  std::size_t size() const { return records.size(); }
};

/// Mirrors each sample (received and original alike) horizontally and/or
/// vertically at random. Labels and the codec block grid are unaffected
/// when the frame sides are multiples of the block size.
void random_flips(Batch& batch, std::uint64_t seed);

/// One-hot rows [N, classes].
Tensor one_hot(std::span<const std::size_t> idx, std::size_t classes);

/// In-memory view of one split of a corpus.
class Dataset {
 public:
  Dataset(const std::filesystem::path& corpus_dir, Split split);

  const Manifest& manifest() const { return manifest_; }
  std::size_t size() const { return members_.size(); }
  const Frame& received(std::size_t i) const { return received_[i]; }
  const Frame& original(std::size_t i) const { return original_[i]; }
  const Record& record(std::size_t i) const { return manifest_.records[members_[i]]; }

  /// Every member exactly once, shuffled by `epoch_seed`.
  std::vector<Batch> batches(std::size_t batch_size, std::uint64_t epoch_seed) const;
  /// Members in manifest order.
  std::vector<Batch> ordered_batches(std::size_t batch_size) const;
  Batch make_batch(std::span<const std::size_t> members) const;

 private:
  Manifest manifest_;
  std::vector<std::size_t> members_;
  std::vector<Frame> received_;
  std::vector<Frame> original_;
};

/// Stacks frames into a [N, C, H, W] tensor.
Tensor stack_frames(std::span<const Frame* const> frames);
Frame unstack_frame(const Tensor& images, std::size_t n);

}  // namespace vqos::corpus
