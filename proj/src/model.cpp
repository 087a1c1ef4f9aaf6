#include "vqos/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "vqos/quality.hpp"
#include "vqos/rng.hpp"

namespace vqos::model {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kInitTag = 0x494e4954;   // "INIT"
constexpr std::uint64_t kEpochTag = 0x45504f43;  // "EPOC"
constexpr std::uint64_t kFlipTag = 0x464c4950;   // "FLIP"
constexpr std::size_t kKernel = 4;
constexpr std::size_t kStemKernel = 2;

ops::LayerParams conv_layer(std::size_t out, std::size_t in, Rng& rng,
                            std::size_t kernel = kKernel) {
  ops::LayerParams p{Tensor::zeros({out, in, kernel, kernel}, true), Tensor::zeros({out}, true), 2,
                     kernel == kKernel ? std::size_t{1} : std::size_t{0}};
  he_uniform(p.weight, in * kernel * kernel, rng);
  return p;
}

// Transpose-conv weights are [in, out, k, k]; with stride 2 each output
// pixel sees a quarter of the kernel taps.
ops::LayerParams tconv_layer(std::size_t in, std::size_t out, Rng& rng, bool xavier) {
  ops::LayerParams p{Tensor::zeros({in, out, kKernel, kKernel}, true), Tensor::zeros({out}, true), 2, 1};
  const std::size_t fan_in = in * kKernel * kKernel / 4;
  if (xavier) {
    xavier_uniform(p.weight, fan_in, out * kKernel * kKernel / 4, rng);
  } else {
    he_uniform(p.weight, fan_in, rng);
  }
  return p;
}

ops::LayerParams dense_layer(std::size_t out, std::size_t in, Rng& rng, bool xavier) {
  ops::LayerParams p{Tensor::zeros({out, in}, true), Tensor::zeros({out}, true), 1, 0};
  if (xavier) {
    xavier_uniform(p.weight, in, out, rng);
  } else {
    he_uniform(p.weight, in, rng);
  }
  return p;
}

void push(std::vector<NamedTensor>& out, const std::string& name, const ops::LayerParams& p) {
  out.push_back({name + ".w", p.weight});
  out.push_back({name + ".b", p.bias});
}

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& n : named) out.push_back(n.tensor);
  return out;
}

// Disables gradient accumulation into a parameter set for one pass.
class FreezeGuard {
 public:
  explicit FreezeGuard(std::vector<Tensor> params) : params_(std::move(params)) {
    for (auto& p : params_) p.set_requires_grad(false);
  }
  ~FreezeGuard() {
    for (auto& p : params_) p.set_requires_grad(true);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<Tensor> params_;
};

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

void require_finite(const Tensor& loss, const char* what) {
  if (!std::isfinite(loss.item())) throw NumericError(std::string(what) + " is not finite");
}

}  // namespace

// ---------------------------------------------------------------------------

void GanArch::validate() const {
  if (width == 0 || height == 0 || width % 16 != 0 || height % 16 != 0) {
    throw ShapeError("frame sides must be positive multiples of 16, got " + std::to_string(width) +
                     "x" + std::to_string(height));
  }
  if (channels == 0 || num_rates == 0 || num_losses == 0 || latent_dim == 0) {
    throw ShapeError("architecture has a zero channel, class or latent count");
  }
  for (auto w : g_widths) {
    if (w == 0) throw ShapeError("generator layer width must be positive");
  }
  for (auto w : d_widths) {
    if (w == 0) throw ShapeError("discriminator layer width must be positive");
  }
}

std::string GanArch::signature() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width) +
         ", " + std::to_string(num_rates) + " rates x " + std::to_string(num_losses) +
         " losses, latent " + std::to_string(latent_dim) + (unet_skips ? ", unet skips" : "");
}

json GanArch::to_json() const {
  return {{"width", width},         {"height", height},         {"channels", channels},
          {"num_rates", num_rates}, {"num_losses", num_losses}, {"latent_dim", latent_dim},
          {"g_widths", g_widths},   {"d_widths", d_widths},     {"unet_skips", unet_skips}};
}

GanArch GanArch::from_json(const json& j) {
  GanArch a;
  a.width = j.at("width").get<std::size_t>();
  a.height = j.at("height").get<std::size_t>();
  a.channels = j.at("channels").get<std::size_t>();
  a.num_rates = j.at("num_rates").get<std::size_t>();
  a.num_losses = j.at("num_losses").get<std::size_t>();
  a.latent_dim = j.at("latent_dim").get<std::size_t>();
  a.g_widths = j.at("g_widths").get<std::array<std::size_t, 3>>();
  a.d_widths = j.at("d_widths").get<std::array<std::size_t, 4>>();
  a.unet_skips = j.value("unet_skips", false);
  a.validate();
  return a;
}

Tensor label_planes(std::span<const std::size_t> rate_idx, std::span<const std::size_t> loss_idx,
                    const GanArch& arch) {
  if (rate_idx.size() != loss_idx.size()) throw ShapeError("label_planes: label counts differ");
  const std::size_t n = rate_idx.size(), planes = arch.num_rates + arch.num_losses;
  const std::size_t hw = arch.height * arch.width;
  std::vector<double> v(n * planes * hw, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (rate_idx[i] >= arch.num_rates || loss_idx[i] >= arch.num_losses) {
      throw LabelError("label index outside the configured classes");
    }
    for (std::size_t p : {rate_idx[i], arch.num_rates + loss_idx[i]}) {
      std::fill_n(v.begin() + static_cast<std::ptrdiff_t>((i * planes + p) * hw), hw, 1.0);
    }
  }
  return Tensor::from({n, planes, arch.height, arch.width}, std::move(v));
}

// ---------------------------------------------------------------------------

Generator::Generator(const GanArch& arch, Rng& rng) : arch_(arch) {
  arch_.validate();
  const auto& w = arch_.g_widths;
  const std::size_t in = arch_.channels + arch_.num_rates + arch_.num_losses;
  enc_[0] = conv_layer(w[0], in, rng);
  enc_[1] = conv_layer(w[1], w[0], rng);
  enc_[2] = conv_layer(w[2], w[1], rng);
  const std::size_t flat = w[2] * (arch_.height / 8) * (arch_.width / 8);
  to_latent_ = dense_layer(arch_.latent_dim, flat, rng, true);
  from_latent_ = dense_layer(flat, arch_.latent_dim, rng, false);
  // Skip connections double each decoder input: own features plus the
  // encoder output at the same resolution.
  const std::size_t k = arch_.unet_skips ? 2 : 1;
  dec_[0] = tconv_layer(k * w[2], w[1], rng, false);
  dec_[1] = tconv_layer(k * w[1], w[0], rng, false);
  dec_[2] = tconv_layer(k * w[0], arch_.channels, rng, true);
}

Tensor Generator::encode(const Tensor& received, const Tensor& planes) const {
  return encode_all(received, planes).latent;
}

Generator::Encoded Generator::encode_all(const Tensor& received, const Tensor& planes) const {
  if (received.rank() != 4 || received.dim(1) != arch_.channels ||
      received.dim(2) != arch_.height || received.dim(3) != arch_.width) {
    throw ShapeError("generator input " + shape_str(received.shape()) + " does not match " +
                     arch_.signature());
  }
  const Tensor parts[] = {received, planes};
  Tensor h = ops::concat(parts, 1);
  Encoded e;
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    h = ops::relu(ops::conv2d(h, enc_[i]));
    e.features[i] = h;
  }
  const std::size_t n = h.dim(0);
  e.latent = ops::dense(ops::reshape(h, {n, h.numel() / n}), to_latent_);
  return e;
}

Tensor Generator::decode_logits(const Tensor& latent, const Encoded* skips) const {
  const std::size_t n = latent.dim(0);
  Tensor h = ops::relu(ops::dense(latent, from_latent_));
  h = ops::reshape(h, {n, arch_.g_widths[2], arch_.height / 8, arch_.width / 8});
  for (std::size_t i = 0; i < dec_.size(); ++i) {
    if (arch_.unet_skips) {
      // Without encoder features (plain decode) the skip half is zero.
      const Tensor skip = skips ? skips->features[2 - i] : Tensor::zeros(h.shape());
      const Tensor parts[] = {h, skip};
      h = ops::concat(parts, 1);
    }
    h = ops::conv_transpose2d(h, dec_[i]);
    if (i + 1 < dec_.size()) h = ops::relu(h);
  }
  return h;
}

Tensor Generator::decode(const Tensor& latent) const {
  return ops::sigmoid(decode_logits(latent, nullptr));
}

Tensor Generator::forward(const Tensor& received, const Tensor& planes) const {
  const Encoded e = encode_all(received, planes);
  const Tensor logits = decode_logits(e.latent, &e);
  return ops::sigmoid(logits);
}

Tensor Generator::forward(const Tensor& received, std::span<const std::size_t> rate_idx,
                          std::span<const std::size_t> loss_idx) const {
  return forward(received, label_planes(rate_idx, loss_idx, arch_));
}

std::vector<NamedTensor> Generator::named_params() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < enc_.size(); ++i) push(out, "g.enc" + std::to_string(i), enc_[i]);
  push(out, "g.latent", to_latent_);
  push(out, "g.unlatent", from_latent_);
  for (std::size_t i = 0; i < dec_.size(); ++i) push(out, "g.dec" + std::to_string(i), dec_[i]);
  return out;
}

std::vector<Tensor> Generator::params() const { return tensors_of(named_params()); }

// ---------------------------------------------------------------------------

ConvTrunk::ConvTrunk(std::size_t in_channels, const std::array<std::size_t, 4>& widths,
                     std::size_t height, std::size_t width, std::string prefix, Rng& rng)
    : prefix_(std::move(prefix)) {
  // The stem is 2x2 at stride 2, aligned with the codec's block grid.
  std::size_t in = in_channels;
  for (std::size_t i = 0; i < conv_.size(); ++i) {
    conv_[i] = conv_layer(widths[i], in, rng, i == 0 ? kStemKernel : kKernel);
    in = widths[i];
  }
  // Every other stem filter starts with zero mean, so it sees only texture
  // inside a block; the rest keep their response to the block level.
  auto w = conv_[0].weight.mutable_data();
  const std::size_t per = w.size() / widths[0];
  for (std::size_t f = 0; f < widths[0]; f += 2) {
    double mean = 0.0;
    for (std::size_t j = 0; j < per; ++j) mean += w[f * per + j];
    mean /= static_cast<double>(per);
    for (std::size_t j = 0; j < per; ++j) w[f * per + j] -= mean;
  }
  (void)height;
  (void)width;
  features_ = widths[3];
}

Tensor ConvTrunk::forward(const Tensor& x) const {
  // Centre pixels on mid-gray, so concealed blocks are zero.
  Tensor h = ops::add(x, Tensor::full(x.shape(), -0.5));
  for (const auto& layer : conv_) h = ops::leaky_relu(ops::conv2d(h, layer), kLeakySlope);
  return ops::global_avg_pool(h);
}

std::vector<NamedTensor> ConvTrunk::named_params() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < conv_.size(); ++i) push(out, prefix_ + ".conv" + std::to_string(i), conv_[i]);
  return out;
}

Discriminator::Discriminator(const GanArch& arch, Rng& rng)
    : arch_(arch), trunk_(arch.channels, arch.d_widths, arch.height, arch.width, "d", rng) {
  rate_head_ = dense_layer(arch_.num_rates, trunk_.features(), rng, true);
  loss_head_ = dense_layer(arch_.num_losses, trunk_.features(), rng, true);
  valid_head_ = dense_layer(1, trunk_.features(), rng, true);
}

DiscOutput Discriminator::forward(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != arch_.channels || images.dim(2) != arch_.height ||
      images.dim(3) != arch_.width) {
    throw ShapeError("discriminator input " + shape_str(images.shape()) + " does not match " +
                     arch_.signature());
  }
  const Tensor f = trunk_.forward(images);
  return {ops::dense(f, rate_head_), ops::dense(f, loss_head_),
          ops::sigmoid(ops::dense(f, valid_head_))};
}

std::vector<NamedTensor> Discriminator::named_params() const {
  auto out = trunk_.named_params();
  push(out, "d.rate", rate_head_);
  push(out, "d.loss", loss_head_);
  push(out, "d.valid", valid_head_);
  return out;
}

std::vector<Tensor> Discriminator::params() const { return tensors_of(named_params()); }

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (latent_dim == 0) throw std::invalid_argument("latent dimension must be >= 1");
  if (!(lr_g > 0.0) || !(lr_d > 0.0)) throw std::invalid_argument("learning rates must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("beta1 must be in [0,1)");
  if (!(lambda_adv >= 0.0) || !(lambda_cls >= 0.0)) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
  if (!(lambda_rec > 0.0)) throw std::invalid_argument("reconstruction weight must be positive");
}

json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr_g", lr_g},
          {"lr_d", lr_d},
          {"beta1", beta1},
          {"lambda_adv", lambda_adv},
          {"lambda_rec", lambda_rec},
          {"lambda_cls", lambda_cls},
          {"latent_dim", latent_dim},
          {"seed", seed},
          {"checkpoint_interval", checkpoint_interval},
          {"d_classify_generated", d_classify_generated},
          {"augment", augment},
          {"lr_decay", lr_decay}};
}

void StepMetrics::accumulate(const StepMetrics& s) {
  disc_loss += s.disc_loss;
  disc_real += s.disc_real;
  disc_fake += s.disc_fake;
  gen_loss += s.gen_loss;
  gen_adv += s.gen_adv;
  gen_rec += s.gen_rec;
  gen_cls += s.gen_cls;
  samples += s.samples;
  rate_correct += s.rate_correct;
  loss_correct += s.loss_correct;
  joint_correct += s.joint_correct;
  psnr_sum += s.psnr_sum;
}

EpochMetrics EpochMetrics::from_sums(std::size_t epoch, const StepMetrics& s) {
  EpochMetrics m;
  m.epoch = epoch;
  if (s.samples == 0) return m;
  const double n = static_cast<double>(s.samples);
  m.disc_loss = s.disc_loss / n;
  m.disc_real = s.disc_real / n;
  m.disc_fake = s.disc_fake / n;
  m.gen_adv = s.gen_adv / n;
  m.gen_rec = s.gen_rec / n;
  m.gen_cls = s.gen_cls / n;
  m.gen_loss = m.gen_adv + m.gen_rec + m.gen_cls;
  m.rate_acc = static_cast<double>(s.rate_correct) / n;
  m.loss_acc = static_cast<double>(s.loss_correct) / n;
  m.joint_acc = static_cast<double>(s.joint_correct) / n;
  m.recon_psnr = s.psnr_sum / n;
  return m;
}

std::string EpochMetrics::csv_header() {
  return "epoch,disc_loss,disc_real,disc_fake,gen_loss,gen_adv,gen_rec,gen_cls,rate_acc,loss_acc,"
         "joint_acc,recon_psnr";
}

std::string EpochMetrics::csv_row() const {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                epoch, disc_loss, disc_real, disc_fake, gen_loss, gen_adv, gen_rec, gen_cls,
                rate_acc, loss_acc, joint_acc, recon_psnr);
  return buf;
}

// ---------------------------------------------------------------------------

json classes_to_json(const ClassSets& c) {
  return {{"rates_kbps", c.rates()}, {"losses_percent", c.losses()}};
}

ClassSets classes_from_json(const json& j) {
  return ClassSets(j.at("rates_kbps").get<std::vector<int>>(),
                   j.at("losses_percent").get<std::vector<double>>());
}

Gan::Gan(const GanArch& a, const ClassSets& c, std::uint64_t seed)
    : arch(a),
      classes(c),
      generator([&] {
        if (a.num_rates != c.num_rates() || a.num_losses != c.num_losses()) {
          throw LabelError("architecture head widths do not match the class sets");
        }
        Rng rng(derive_seed(seed, kInitTag, 0));
        return Generator(a, rng);
      }()),
      discriminator([&] {
        Rng rng(derive_seed(seed, kInitTag, 1));
        return Discriminator(a, rng);
      }()) {}

std::vector<NamedTensor> Gan::named_params() const {
  auto out = generator.named_params();
  for (auto& p : discriminator.named_params()) out.push_back(std::move(p));
  return out;
}

Checkpoint Gan::to_checkpoint() const {
  Checkpoint c;
  c.metadata = {{"model_kind", kGanKind},
                {"arch", arch.to_json()},
                {"classes", classes_to_json(classes)},
                {"provenance", provenance}};
  c.tensors = named_params();
  return c;
}

Gan Gan::from_checkpoint(const Checkpoint& ckpt) {
  const auto& m = ckpt.metadata;
  if (m.value("model_kind", "") != kGanKind) {
    throw CheckpointError("checkpoint holds model kind '" + m.value("model_kind", "?") +
                          "', expected '" + kGanKind + "'");
  }
  try {
    Gan gan(GanArch::from_json(m.at("arch")), classes_from_json(m.at("classes")), 0);
    gan.provenance = m.value("provenance", json::object());
    auto params = gan.named_params();
    assign_parameters(ckpt, params);
    return gan;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

DiscLoss discriminator_loss(const Gan& gan, const Tensor& received, const Tensor& original,
                            const Tensor& fake, std::span<const std::size_t> rate_idx,
                            std::span<const std::size_t> loss_idx, const TrainConfig& cfg) {
  const auto& d = gan.discriminator;
  DiscLoss out;
  out.on_received = d.forward(received);
  const DiscOutput on_original = d.forward(original);
  const DiscOutput on_fake = d.forward(fake);
  out.real = ops::add(ops::bce(on_original.validity, 1.0),
                      ops::add(ops::cross_entropy(out.on_received.rate_logits, rate_idx),
                               ops::cross_entropy(out.on_received.loss_logits, loss_idx)));
  out.fake = ops::bce(on_fake.validity, 0.0);
  if (cfg.d_classify_generated) {
    out.fake = ops::add(out.fake, ops::add(ops::cross_entropy(on_fake.rate_logits, rate_idx),
                                           ops::cross_entropy(on_fake.loss_logits, loss_idx)));
  }
  out.total = ops::scale(ops::add(out.real, out.fake), 0.5);
  return out;
}

namespace {

GenLoss generator_terms(const Gan& gan, const Tensor& generated, const Tensor& original,
                        std::span<const std::size_t> rate_idx, std::span<const std::size_t> loss_idx,
                        const TrainConfig& cfg) {
  GenLoss out;
  out.generated = generated;
  const DiscOutput judged = gan.discriminator.forward(generated);
  out.adv = ops::scale(ops::bce(judged.validity, 1.0), cfg.lambda_adv);
  out.rec = ops::scale(ops::l1(generated, original), cfg.lambda_rec);
  out.cls = ops::scale(ops::add(ops::cross_entropy(judged.rate_logits, rate_idx),
                                ops::cross_entropy(judged.loss_logits, loss_idx)),
                       cfg.lambda_cls);
  out.total = ops::add(ops::add(out.adv, out.rec), out.cls);
  return out;
}

}  // namespace

GenLoss generator_loss(const Gan& gan, const Tensor& received, const Tensor& original,
                       std::span<const std::size_t> rate_idx, std::span<const std::size_t> loss_idx,
                       const TrainConfig& cfg) {
  return generator_terms(gan, gan.generator.forward(received, rate_idx, loss_idx), original,
                         rate_idx, loss_idx, cfg);
}

GanOptimizers make_optimizers(const Gan& gan, const TrainConfig& cfg) {
  AdamConfig g{cfg.lr_g, cfg.beta1, 0.999, 1e-8};
  AdamConfig d{cfg.lr_d, cfg.beta1, 0.999, 1e-8};
  const auto gp = gan.generator.params();
  const auto dp = gan.discriminator.params();
  return {make_adam_state(gp, g), make_adam_state(dp, d)};
}

StepMetrics train_step(Gan& gan, GanOptimizers& opt, const corpus::Batch& batch,
                       const TrainConfig& cfg) {
  auto gp = gan.generator.params();
  auto dp = gan.discriminator.params();
  const Tensor generated = gan.generator.forward(batch.received, batch.rate_idx, batch.loss_idx);

  zero_grads(dp);
  const DiscLoss dl = discriminator_loss(gan, batch.received, batch.original, generated.detach(),
                                         batch.rate_idx, batch.loss_idx, cfg);
  require_finite(dl.total, "discriminator loss");
  backward(dl.total);
  adam_step(dp, opt.discriminator);

  zero_grads(gp);
  GenLoss gl;
  {
    FreezeGuard frozen(dp);
    gl = generator_terms(gan, generated, batch.original, batch.rate_idx, batch.loss_idx, cfg);
    require_finite(gl.total, "generator loss");
    backward(gl.total);
  }
  adam_step(gp, opt.generator);

  StepMetrics m;
  const std::size_t n = batch.size();
  const double w = static_cast<double>(n);
  m.samples = n;
  m.disc_loss = dl.total.item() * w;
  m.disc_real = dl.real.item() * w;
  m.disc_fake = dl.fake.item() * w;
  m.gen_adv = gl.adv.item() * w;
  m.gen_rec = gl.rec.item() * w;
  m.gen_cls = gl.cls.item() * w;
  m.gen_loss = gl.total.item() * w;
  const auto rl = dl.on_received.rate_logits.data();
  const auto ll = dl.on_received.loss_logits.data();
  const std::size_t nr = gan.arch.num_rates, nl = gan.arch.num_losses;
  const std::size_t px = generated.numel() / n;
  for (std::size_t i = 0; i < n; ++i) {
    const bool rate_ok = argmax_row(rl.subspan(i * nr, nr)) == batch.rate_idx[i];
    const bool loss_ok = argmax_row(ll.subspan(i * nl, nl)) == batch.loss_idx[i];
    m.rate_correct += rate_ok;
    m.loss_correct += loss_ok;
    m.joint_correct += rate_ok && loss_ok;
    m.psnr_sum += psnr(generated.data().subspan(i * px, px), batch.original.data().subspan(i * px, px));
  }
  return m;
}

double lr_factor(std::size_t epoch, std::size_t epochs, bool decay) {
  const std::size_t half = epochs / 2;
  if (!decay || half == 0 || epoch <= epochs - half) return 1.0;
  return static_cast<double>(epochs - epoch + 1) / static_cast<double>(half + 1);
}

void write_text_file(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

TrainResult train(const TrainConfig& cfg, const fs::path& corpus_dir, const fs::path& out_dir,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  const corpus::Dataset data(corpus_dir, corpus::Split::Train);
  if (data.size() == 0) throw corpus::CorpusError("corpus has an empty train split");
  const auto& man = data.manifest();

  GanArch arch;
  arch.width = man.width;
  arch.height = man.height;
  arch.channels = man.channels;
  arch.num_rates = man.classes.num_rates();
  arch.num_losses = man.classes.num_losses();
  arch.latent_dim = cfg.latent_dim;
  Gan gan(arch, man.classes, cfg.seed);
  gan.provenance = {{"corpus_emulator_hash", man.emulator_hash},
                    {"corpus_seed", man.seed},
                    {"train", cfg.to_json()},
                    {"epochs_completed", 0}};
  auto opt = make_optimizers(gan, cfg);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::ofstream log(out_dir / "metrics.csv", std::ios::trunc);
  log << EpochMetrics::csv_header() << '\n' << std::flush;
  if (!log) throw IoError("cannot write " + (out_dir / "metrics.csv").string());

  TrainResult result;
  char name[32];
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    StepMetrics sums;
    const double f = lr_factor(epoch, cfg.epochs, cfg.lr_decay);
    opt.generator.config.lr = cfg.lr_g * f;
    opt.discriminator.config.lr = cfg.lr_d * f;
    auto batches = data.batches(cfg.batch_size, derive_seed(cfg.seed, kEpochTag, epoch));
    for (std::size_t b = 0; b < batches.size(); ++b) {
      if (cfg.augment) {
        corpus::random_flips(batches[b], derive_seed(derive_seed(cfg.seed, kFlipTag, epoch), kFlipTag, b));
      }
      try {
        sums.accumulate(train_step(gan, opt, batches[b], cfg));
      } catch (const NumericError& e) {
        log << std::flush;
        throw TrainingError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                            " (lr_g " + std::to_string(cfg.lr_g) + ", lr_d " +
                            std::to_string(cfg.lr_d) + "): " + e.what());
      }
    }
    const auto m = EpochMetrics::from_sums(epoch, sums);
    log << m.csv_row() << '\n' << std::flush;
    if (!log) throw IoError("cannot write " + (out_dir / "metrics.csv").string());
    result.epochs.push_back(m);
    gan.provenance["epochs_completed"] = epoch;
    if (cfg.checkpoint_interval > 0 && epoch % cfg.checkpoint_interval == 0) {
      std::snprintf(name, sizeof name, "epoch_%03zu.vqos", epoch);
      save_checkpoint(out_dir / name, gan.to_checkpoint());
    }
    if (on_epoch) on_epoch(m);
  }
  result.final_checkpoint = out_dir / "model.vqos";
  save_checkpoint(result.final_checkpoint, gan.to_checkpoint());
  return result;
}

// ---------------------------------------------------------------------------

void check_frame(const GanArch& arch, const Frame& f) {
  if (f.width != arch.width || f.height != arch.height || f.channels != arch.channels) {
    throw ShapeError("frame " + std::to_string(f.channels) + "x" + std::to_string(f.height) + "x" +
                     std::to_string(f.width) + " does not match model " + arch.signature());
  }
}

std::vector<Prediction> predict_batch(const Gan& gan, const Tensor& images) {
  const DiscOutput out = gan.discriminator.forward(images);
  const Tensor rp = ops::softmax(out.rate_logits, 1);
  const Tensor lp = ops::softmax(out.loss_logits, 1);
  const std::size_t n = images.dim(0), nr = gan.arch.num_rates, nl = gan.arch.num_losses;
  std::vector<Prediction> preds(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = preds[i];
    const auto r = rp.data().subspan(i * nr, nr);
    const auto l = lp.data().subspan(i * nl, nl);
    p.rate_probs.assign(r.begin(), r.end());
    p.loss_probs.assign(l.begin(), l.end());
    p.rate_idx = argmax_row(out.rate_logits.data().subspan(i * nr, nr));
    p.loss_idx = argmax_row(out.loss_logits.data().subspan(i * nl, nl));
    p.state = gan.classes.state(p.rate_idx, p.loss_idx);
    p.validity = out.validity.data()[i];
  }
  return preds;
}

Prediction predict(const Gan& gan, const Frame& received) {
  check_frame(gan.arch, received);
  const Frame* f = &received;
  return predict_batch(gan, corpus::stack_frames(std::span(&f, 1))).front();
}

Tensor reconstruct_batch(const Gan& gan, const Tensor& received,
                         std::span<const std::size_t> rate_idx,
                         std::span<const std::size_t> loss_idx) {
  return gan.generator.forward(received, rate_idx, loss_idx).detach();
}

Frame reconstruct(const Gan& gan, const Frame& received, const std::optional<NetworkState>& labels) {
  check_frame(gan.arch, received);
  const NetworkState state = labels ? *labels : predict(gan, received).state;
  const std::size_t r = gan.classes.rate_index(state.rate_kbps);
  const std::size_t l = gan.classes.loss_index(state.loss_percent);
  const Frame* f = &received;
  const Tensor out = reconstruct_batch(gan, corpus::stack_frames(std::span(&f, 1)),
                                       std::span(&r, 1), std::span(&l, 1));
  return corpus::unstack_frame(out, 0);
}

}  // namespace vqos::model
