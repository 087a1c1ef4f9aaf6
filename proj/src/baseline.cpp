#include "vqos/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "vqos/rng.hpp"

namespace vqos::baseline {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kInitTag = 0x42494e49;   // "BINI"
constexpr std::uint64_t kEpochTag = 0x4245504f;  // "BEPO"
constexpr std::uint64_t kFlipTag = 0x42464c50;   // "BFLP"

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

model::ConvTrunk make_trunk(const model::GanArch& arch, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kInitTag, 0));
  return model::ConvTrunk(2 * arch.channels, arch.d_widths, arch.height, arch.width, "b", rng);
}

ops::LayerParams head(std::size_t out, std::size_t in, Rng& rng) {
  ops::LayerParams p{Tensor::zeros({out, in}, true), Tensor::zeros({out}, true), 1, 0};
  xavier_uniform(p.weight, in, out, rng);
  return p;
}

}  // namespace

PairedCNN::PairedCNN(const model::GanArch& arch, const ClassSets& classes, std::uint64_t seed)
    : arch_(arch), classes_(classes), trunk_(make_trunk(arch, seed)) {
  arch_.validate();
  if (arch_.num_rates != classes_.num_rates() || arch_.num_losses != classes_.num_losses()) {
    throw LabelError("architecture head widths do not match the class sets");
  }
  Rng rng(derive_seed(seed, kInitTag, 1));
  rate_head_ = head(arch_.num_rates, trunk_.features(), rng);
  loss_head_ = head(arch_.num_losses, trunk_.features(), rng);
}

std::pair<Tensor, Tensor> PairedCNN::forward(const Tensor& original, const Tensor& received) const {
  if (original.shape() != received.shape()) {
    throw ShapeError("paired input shapes differ: " + shape_str(original.shape()) + " vs " +
                     shape_str(received.shape()));
  }
  if (original.rank() != 4 || original.dim(1) != arch_.channels || original.dim(2) != arch_.height ||
      original.dim(3) != arch_.width) {
    throw ShapeError("paired input " + shape_str(original.shape()) + " does not match " +
                     arch_.signature());
  }
  const Tensor parts[] = {original, received};
  const Tensor f = trunk_.forward(ops::concat(parts, 1));
  return {ops::dense(f, rate_head_), ops::dense(f, loss_head_)};
}

std::vector<NamedTensor> PairedCNN::named_params() const {
  auto out = trunk_.named_params();
  out.push_back({"b.rate.w", rate_head_.weight});
  out.push_back({"b.rate.b", rate_head_.bias});
  out.push_back({"b.loss.w", loss_head_.weight});
  out.push_back({"b.loss.b", loss_head_.bias});
  return out;
}

std::vector<Tensor> PairedCNN::params() const {
  std::vector<Tensor> out;
  for (auto& p : named_params()) out.push_back(p.tensor);
  return out;
}

std::size_t PairedCNN::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : named_params()) n += p.tensor.numel();
  return n;
}

Checkpoint PairedCNN::to_checkpoint() const {
  Checkpoint c;
  c.metadata = {{"model_kind", kBaselineKind},
                {"arch", arch_.to_json()},
                {"classes", model::classes_to_json(classes_)},
                {"provenance", provenance}};
  c.tensors = named_params();
  return c;
}

PairedCNN PairedCNN::from_checkpoint(const Checkpoint& ckpt) {
  const auto& m = ckpt.metadata;
  if (m.value("model_kind", "") != kBaselineKind) {
    throw CheckpointError("checkpoint holds model kind '" + m.value("model_kind", "?") +
                          "', expected '" + kBaselineKind + "'");
  }
  try {
    PairedCNN net(model::GanArch::from_json(m.at("arch")), model::classes_from_json(m.at("classes")), 0);
    net.provenance = m.value("provenance", json::object());
    auto params = net.named_params();
    assign_parameters(ckpt, params);
    return net;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata: ") + e.what());
  }
}

void BaselineConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("beta1 must be in [0,1)");
}

json BaselineConfig::to_json() const {
  return {{"epochs", epochs}, {"batch_size", batch_size}, {"lr", lr}, {"beta1", beta1},
          {"seed", seed},     {"checkpoint_interval", checkpoint_interval}, {"augment", augment},
          {"lr_decay", lr_decay}};
}

std::string BaselineEpoch::csv_header() { return "epoch,loss,rate_acc,loss_acc,joint_acc"; }

std::string BaselineEpoch::csv_row() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g", epoch, loss, rate_acc, loss_acc,
                joint_acc);
  return buf;
}

BaselineResult baseline_train(const BaselineConfig& cfg, const fs::path& corpus_dir,
                              const fs::path& out_dir,
                              const std::function<void(const BaselineEpoch&)>& on_epoch) {
  cfg.validate();
  const corpus::Dataset data(corpus_dir, corpus::Split::Train);
  if (data.size() == 0) throw corpus::CorpusError("corpus has an empty train split");
  const auto& man = data.manifest();

  model::GanArch arch;
  arch.width = man.width;
  arch.height = man.height;
  arch.channels = man.channels;
  arch.num_rates = man.classes.num_rates();
  arch.num_losses = man.classes.num_losses();
  PairedCNN net(arch, man.classes, cfg.seed);
  net.provenance = {{"corpus_emulator_hash", man.emulator_hash},
                    {"corpus_seed", man.seed},
                    {"train", cfg.to_json()},
                    {"epochs_completed", 0}};
  auto params = net.params();
  auto opt = make_adam_state(params, AdamConfig{cfg.lr, cfg.beta1, 0.999, 1e-8});

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::ofstream log(out_dir / "metrics.csv", std::ios::trunc);
  log << BaselineEpoch::csv_header() << '\n' << std::flush;
  if (!log) throw IoError("cannot write " + (out_dir / "metrics.csv").string());

  BaselineResult result;
  char name[32];
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t n = 0, rate_ok = 0, loss_ok = 0, joint_ok = 0;
    opt.config.lr = cfg.lr * model::lr_factor(epoch, cfg.epochs, cfg.lr_decay);
    auto batches = data.batches(cfg.batch_size, derive_seed(cfg.seed, kEpochTag, epoch));
    for (std::size_t b = 0; b < batches.size(); ++b) {
      auto& batch = batches[b];
      if (cfg.augment) corpus::random_flips(batch, derive_seed(derive_seed(cfg.seed, kFlipTag, epoch), kFlipTag, b));
      zero_grads(params);
      const auto [rl, ll] = net.forward(batch.original, batch.received);
      const Tensor loss = ops::add(ops::cross_entropy(rl, batch.rate_idx),
                                   ops::cross_entropy(ll, batch.loss_idx));
      if (!std::isfinite(loss.item())) {
        log << std::flush;
        throw model::TrainingError("epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(b) + " (lr " + std::to_string(cfg.lr) +
                                   "): baseline loss is not finite");
      }
      backward(loss);
      adam_step(params, opt);
      const std::size_t nr = arch.num_rates, nl = arch.num_losses;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const bool r = argmax_row(rl.data().subspan(i * nr, nr)) == batch.rate_idx[i];
        const bool l = argmax_row(ll.data().subspan(i * nl, nl)) == batch.loss_idx[i];
        rate_ok += r;
        loss_ok += l;
        joint_ok += r && l;
      }
      loss_sum += loss.item() * static_cast<double>(batch.size());
      n += batch.size();
    }
    BaselineEpoch m;
    m.epoch = epoch;
    m.loss = loss_sum / static_cast<double>(n);
    m.rate_acc = static_cast<double>(rate_ok) / static_cast<double>(n);
    m.loss_acc = static_cast<double>(loss_ok) / static_cast<double>(n);
    m.joint_acc = static_cast<double>(joint_ok) / static_cast<double>(n);
    log << m.csv_row() << '\n' << std::flush;
    if (!log) throw IoError("cannot write " + (out_dir / "metrics.csv").string());
    result.epochs.push_back(m);
    net.provenance["epochs_completed"] = epoch;
    if (cfg.checkpoint_interval > 0 && epoch % cfg.checkpoint_interval == 0) {
      std::snprintf(name, sizeof name, "epoch_%03zu.vqos", epoch);
      save_checkpoint(out_dir / name, net.to_checkpoint());
    }
    if (on_epoch) on_epoch(m);
  }
  result.final_checkpoint = out_dir / "model.vqos";
  save_checkpoint(result.final_checkpoint, net.to_checkpoint());
  return result;
}

std::vector<PairPrediction> predict_batch(const PairedCNN& net, const Tensor& original,
                                          const Tensor& received) {
  const auto [rl, ll] = net.forward(original, received);
  const std::size_t n = original.dim(0), nr = net.arch().num_rates, nl = net.arch().num_losses;
  std::vector<PairPrediction> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].rate_idx = argmax_row(rl.data().subspan(i * nr, nr));
    out[i].loss_idx = argmax_row(ll.data().subspan(i * nl, nl));
    out[i].state = net.classes().state(out[i].rate_idx, out[i].loss_idx);
  }
  return out;
}

PairPrediction baseline_predict(const PairedCNN& net, const Frame& original, const Frame& received) {
  model::check_frame(net.arch(), original);
  model::check_frame(net.arch(), received);
  const Frame* o = &original;
  const Frame* r = &received;
  return predict_batch(net, corpus::stack_frames(std::span(&o, 1)),
                       corpus::stack_frames(std::span(&r, 1)))
      .front();
}

}  // namespace vqos::baseline
