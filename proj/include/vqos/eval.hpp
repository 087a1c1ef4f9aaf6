#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vqos/corpus.hpp"

namespace vqos::eval {

/// counts[t][p]: samples of true class t predicted as p.
struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> counts;

  std::size_t total() const;
  std::size_t correct() const;
  double accuracy() const;  // 0 when empty
  nlohmann::json to_json() const;
  std::string to_csv() const;  // header "true\\pred,<labels>", one row per true class
  std::string to_table(const std::string& title) const;
};

/// Index form; every index must be below labels.size().
ConfusionMatrix confusion(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                          std::vector<std::string> labels);

/// Value form over a class axis; a value not on the axis throws LabelError.
ConfusionMatrix confusion(std::span<const double> predicted, std::span<const double> truth,
                          std::span<const double> axis);

std::vector<std::string> rate_labels(const ClassSets& c);
std::vector<std::string> loss_labels(const ClassSets& c);
std::vector<std::string> condition_labels(const ClassSets& c);

struct Accuracy {
  double rate = 0, loss = 0, joint = 0;
  std::size_t samples = 0;
  nlohmann::json to_json() const;
};

struct ConditionQuality {
  NetworkState state;
  std::size_t samples = 0;
  double degraded_psnr = 0;       // mean PSNR(received, original)
  double reconstructed_psnr = 0;  // with the true labels
  double wrong_label_psnr = 0;    // with every label shifted one class
};

struct EvalReport {
  std::string model_kind;
  std::string inputs;  // "received" or "original+received"
  corpus::Split split = corpus::Split::Test;
  ConfusionMatrix rate, loss, joint;
  Accuracy accuracy;        // on `split`
  Accuracy train_accuracy;  // always on the train split
  bool has_reconstruction = false;
  std::vector<ConditionQuality> quality;
  double degraded_psnr = 0, reconstructed_psnr = 0, wrong_label_psnr = 0;  // split means
  nlohmann::json model;  // arch, classes and provenance from the checkpoint

  nlohmann::json to_json() const;
};

struct EvalOptions {
  corpus::Split split = corpus::Split::Test;
  std::size_t batch_size = 64;
  std::size_t samples_per_condition = 1;  // triptychs written per condition
};

/// Evaluates every checkpoint on the corpus and writes report.json,
/// confusion_{rate,loss,joint}.csv for the first checkpoint,
/// <kind>_confusion_*.csv for the rest, comparison.csv and samples/.
/// Throws LabelError when a checkpoint's class sets differ from the corpus.
std::vector<EvalReport> evaluate(std::span<const std::filesystem::path> checkpoints,
                                 const std::filesystem::path& corpus_dir,
                                 const std::filesystem::path& report_dir,
                                 const EvalOptions& options = {});

/// Header "model,inputs,rate_acc,loss_acc,joint_acc,train_joint_acc".
std::string comparison_csv(std::span<const EvalReport> reports);
std::string comparison_table(std::span<const EvalReport> reports);

}  // namespace vqos::eval
