#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vqos/checkpoint.hpp"
#include "vqos/corpus.hpp"
#include "vqos/frame.hpp"
#include "vqos/network_state.hpp"
#include "vqos/ops.hpp"
#include "vqos/optim.hpp"
#include "vqos/tensor.hpp"

namespace vqos::model {

/// Layer sizes shared by the generator and discriminator.
struct GanArch {
  std::size_t width = 64, height = 64, channels = 1;
  std::size_t num_rates = 2, num_losses = 3;
  std::size_t latent_dim = 256;
  std::array<std::size_t, 3> g_widths{16, 32, 64};
  std::array<std::size_t, 4> d_widths{16, 32, 64, 64};
  /// Each decoder layer also sees the encoder output at its resolution.
  bool unet_skips = true;

  /// Frame sides must be multiples of 16 (four stride-2 stages).
  void validate() const;
  std::string signature() const;
  nlohmann::json to_json() const;
  static GanArch from_json(const nlohmann::json& j);
  bool operator==(const GanArch&) const = default;
};

/// Broadcast one-hot label planes, [N, rates + losses, H, W].
Tensor label_planes(std::span<const std::size_t> rate_idx, std::span<const std::size_t> loss_idx,
                    const GanArch& arch);

/// Encoder (3 strided convs, dense to the latent) and mirrored decoder
/// (dense, 3 transpose convs, sigmoid). Labels enter as extra input planes.
/// With unet_skips each decoder layer also takes the encoder features of
/// matching size, so lost blocks can be located at full detail.
class Generator {
 public:
  Generator(const GanArch& arch, Rng& rng);

  Tensor encode(const Tensor& received, const Tensor& planes) const;  // [N, latent_dim]
  /// Sigmoid of the decoder alone, without the input skip.
  Tensor decode(const Tensor& latent) const;
  Tensor forward(const Tensor& received, const Tensor& planes) const;
  Tensor forward(const Tensor& received, std::span<const std::size_t> rate_idx,
                 std::span<const std::size_t> loss_idx) const;

  std::vector<NamedTensor> named_params() const;
  std::vector<Tensor> params() const;

 private:
  struct Encoded {
    std::array<Tensor, 3> features;
    Tensor latent;
  };
  Encoded encode_all(const Tensor& received, const Tensor& planes) const;
  Tensor decode_logits(const Tensor& latent, const Encoded* skips) const;

  GanArch arch_;
  std::array<ops::LayerParams, 3> enc_;
  ops::LayerParams to_latent_, from_latent_;
  std::array<ops::LayerParams, 3> dec_;
};

/// Four stride-2 convs with leaky ReLU, then a global average pool.
/// The input is centred on mid-gray.
class ConvTrunk {
 public:
  ConvTrunk(std::size_t in_channels, const std::array<std::size_t, 4>& widths, std::size_t height,
            std::size_t width, std::string prefix, Rng& rng);
  Tensor forward(const Tensor& x) const;
  std::size_t features() const { return features_; }
  std::vector<NamedTensor> named_params() const;

 private:
  std::string prefix_;
  std::array<ops::LayerParams, 4> conv_;
  std::size_t features_ = 0;
};

inline constexpr double kLeakySlope = 0.2;

struct DiscOutput {
  Tensor rate_logits;  // [N, rates]
  Tensor loss_logits;  // [N, losses]
  Tensor validity;     // [N, 1], in (0, 1)
};

class Discriminator {
 public:
  Discriminator(const GanArch& arch, Rng& rng);
  DiscOutput forward(const Tensor& images) const;
  std::vector<NamedTensor> named_params() const;
  std::vector<Tensor> params() const;

 private:
  GanArch arch_;
  ConvTrunk trunk_;
  ops::LayerParams rate_head_, loss_head_, valid_head_;
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double lr_g = 1e-3;
  double lr_d = 1e-3;
  double beta1 = 0.5;
  // The L1 term is a mean over pixels, so its per-pixel pull is far weaker
  // than a per-sample BCE or CE; the other weights are small to match.
  double lambda_adv = 0.002;
  double lambda_rec = 1.0;
  double lambda_cls = 0.005;
  std::size_t latent_dim = 256;
  std::uint64_t seed = 1;
  std::size_t checkpoint_interval = 10;
  /// Also train the discriminator's class heads on generated frames.
  bool d_classify_generated = false;
  /// Random mirrors, the same for received and original.
  bool augment = true;
  /// Learning rates fall linearly to 1/(h+1) over the last h = epochs/2 epochs.
  bool lr_decay = true;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Raised when a loss turns non-finite; carries the failing batch.
class TrainingError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Sums over one step (or epoch); divide by `samples` for means.
struct StepMetrics {
  double disc_loss = 0, disc_real = 0, disc_fake = 0;
  double gen_loss = 0, gen_adv = 0, gen_rec = 0, gen_cls = 0;
  std::size_t samples = 0, rate_correct = 0, loss_correct = 0, joint_correct = 0;
  double psnr_sum = 0;

  void accumulate(const StepMetrics& step);
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double disc_loss = 0, disc_real = 0, disc_fake = 0;
  double gen_loss = 0, gen_adv = 0, gen_rec = 0, gen_cls = 0;
  double rate_acc = 0, loss_acc = 0, joint_acc = 0;
  double recon_psnr = 0;

  static EpochMetrics from_sums(std::size_t epoch, const StepMetrics& sums);
  static std::string csv_header();
  std::string csv_row() const;
};

/// Generator and discriminator with their label taxonomy.
struct Gan {
  GanArch arch;
  ClassSets classes;
  Generator generator;
  Discriminator discriminator;
  nlohmann::json provenance = nlohmann::json::object();  // corpus hash, seed, config

  Gan(const GanArch& arch, const ClassSets& classes, std::uint64_t seed);

  std::vector<NamedTensor> named_params() const;  // generator then discriminator
  Checkpoint to_checkpoint() const;
  static Gan from_checkpoint(const Checkpoint& ckpt);
};

inline constexpr const char* kGanKind = "vqosgan";

struct DiscLoss {
  Tensor total, real, fake;
  DiscOutput on_received;
};

struct GenLoss {
  Tensor total, adv, rec, cls;
  Tensor generated;
};

/// 1/2 [BCE(D(I_org), 1) + CE(rate | I_recv) + CE(loss | I_recv)] + 1/2 BCE(D(fake), 0).
DiscLoss discriminator_loss(const Gan& gan, const Tensor& received, const Tensor& original,
                            const Tensor& fake, std::span<const std::size_t> rate_idx,
                            std::span<const std::size_t> loss_idx, const TrainConfig& cfg);

/// l_adv BCE(D(G), 1) + l_rec L1(G, I_org) + l_cls [CE(rate | G) + CE(loss | G)].
GenLoss generator_loss(const Gan& gan, const Tensor& received, const Tensor& original,
                       std::span<const std::size_t> rate_idx, std::span<const std::size_t> loss_idx,
                       const TrainConfig& cfg);

struct GanOptimizers {
  AdamState generator;
  AdamState discriminator;
};
GanOptimizers make_optimizers(const Gan& gan, const TrainConfig& cfg);

/// One discriminator update followed by one generator update.
StepMetrics train_step(Gan& gan, GanOptimizers& opt, const corpus::Batch& batch,
                       const TrainConfig& cfg);

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::filesystem::path final_checkpoint;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Learning-rate factor for a 1-based epoch under the decay schedule.
double lr_factor(std::size_t epoch, std::size_t epochs, bool decay);

/// Trains on the corpus train split. Writes metrics.csv (flushed per epoch),
/// epoch_NNN.vqos every checkpoint_interval epochs and model.vqos at the end.
TrainResult train(const TrainConfig& cfg, const std::filesystem::path& corpus_dir,
                  const std::filesystem::path& out_dir, const EpochCallback& on_epoch = {});

struct Prediction {
  NetworkState state;
  std::size_t rate_idx = 0, loss_idx = 0;
  double validity = 0.0;
  std::vector<double> rate_probs, loss_probs;
};

std::vector<Prediction> predict_batch(const Gan& gan, const Tensor& images);
Prediction predict(const Gan& gan, const Frame& received);

Tensor reconstruct_batch(const Gan& gan, const Tensor& received,
                         std::span<const std::size_t> rate_idx,
                         std::span<const std::size_t> loss_idx);
/// Without labels, runs predict first and conditions on its output.
Frame reconstruct(const Gan& gan, const Frame& received,
                  const std::optional<NetworkState>& labels = std::nullopt);

/// Rejects frames that do not match the architecture, naming both shapes.
void check_frame(const GanArch& arch, const Frame& f);

/// Shared by both model kinds: class sets in checkpoint metadata.
nlohmann::json classes_to_json(const ClassSets& c);
ClassSets classes_from_json(const nlohmann::json& j);

/// Writes via a temporary file; throws IoError on failure.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace vqos::model
