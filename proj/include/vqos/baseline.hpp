#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "vqos/checkpoint.hpp"
#include "vqos/model.hpp"

namespace vqos::baseline {

/// Paired-input classifier: sees the original and the received frame
/// stacked as channels, then the discriminator's conv trunk and two heads.
class PairedCNN {
 public:
  PairedCNN(const model::GanArch& arch, const ClassSets& classes, std::uint64_t seed);

  /// Logits for rate and loss; inputs are [N, C, H, W] each.
  std::pair<Tensor, Tensor> forward(const Tensor& original, const Tensor& received) const;

  const model::GanArch& arch() const { return arch_; }
  const ClassSets& classes() const { return classes_; }
  std::vector<NamedTensor> named_params() const;
  std::vector<Tensor> params() const;
  std::size_t parameter_count() const;

  nlohmann::json provenance = nlohmann::json::object();
  Checkpoint to_checkpoint() const;
  static PairedCNN from_checkpoint(const Checkpoint& ckpt);

 private:
  model::GanArch arch_;
  ClassSets classes_;
  model::ConvTrunk trunk_;
  ops::LayerParams rate_head_, loss_head_;
};

inline constexpr const char* kBaselineKind = "baseline_cnn";

struct BaselineConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double beta1 = 0.9;
  std::uint64_t seed = 1;
  std::size_t checkpoint_interval = 10;
  bool augment = true;  // random mirror flips per sample
  bool lr_decay = true;  // same schedule as the GAN

  void validate() const;
  nlohmann::json to_json() const;
};

struct BaselineEpoch {
  std::size_t epoch = 0;
  double loss = 0, rate_acc = 0, loss_acc = 0, joint_acc = 0;

  static std::string csv_header();
  std::string csv_row() const;
};

struct BaselineResult {
  std::vector<BaselineEpoch> epochs;
  std::filesystem::path final_checkpoint;
};

/// Cross-entropy on both heads over the train split; same file layout as
/// model::train (metrics.csv, epoch_NNN.vqos, model.vqos).
BaselineResult baseline_train(const BaselineConfig& cfg, const std::filesystem::path& corpus_dir,
                              const std::filesystem::path& out_dir,
                              const std::function<void(const BaselineEpoch&)>& on_epoch = {});

struct PairPrediction {
  NetworkState state;
  std::size_t rate_idx = 0, loss_idx = 0;
};

std::vector<PairPrediction> predict_batch(const PairedCNN& net, const Tensor& original,
                                          const Tensor& received);
PairPrediction baseline_predict(const PairedCNN& net, const Frame& original, const Frame& received);

}  // namespace vqos::baseline
