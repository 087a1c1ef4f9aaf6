// Command-line entry point: corpus generation, training, evaluation,
// prediction and reconstruction.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vqos/baseline.hpp"
#include "vqos/checkpoint.hpp"
#include "vqos/corpus.hpp"
#include "vqos/eval.hpp"
#include "vqos/model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vqos;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4, kIo = 5 };

constexpr const char* kPredictSchema = "vqos.predict/1";

void log_config(const std::string& command, const json& resolved) {
  std::cerr << "[" << command << "] config " << resolved.dump() << '\n';
}

void print_json(const json& j) { std::cout << j.dump(2) << std::endl; }

// Turns a JSON object into "--key value" arguments placed ahead of the
// command line, so explicit flags (parsed later) win.
std::vector<std::string> config_args(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config " + path.string() + " is not a JSON object");
  std::vector<std::string> out;
  for (const auto& [key, value] : j.items()) {
    if (value.is_boolean()) {
      // Flags take their value inline.
      out.push_back("--" + key + (value.get<bool>() ? "=true" : "=false"));
      continue;
    }
    out.push_back("--" + key);
    if (value.is_string()) {
      out.push_back(value.get<std::string>());
    } else if (value.is_array()) {
      std::string s;
      for (const auto& v : value) s += (s.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
      out.push_back(s);
    } else {
      out.push_back(value.dump());
    }
  }
  return out;
}

struct GenCorpusArgs {
  std::string out;
  std::size_t frames = 200, frames_per_video = 10;
  std::string size = "64x64";
  std::string rates = "1200,1600", losses = "0.05,0.1,0.25";
  std::uint64_t seed = 1;
  std::string motif = "all";
  std::string loss_model = "bernoulli";
  double mean_burst = 2.0, loss_scale = 100.0, train_fraction = 0.8;
};

// Defaults come from the library configs.
inline const model::TrainConfig kGan{};
inline const baseline::BaselineConfig kBaseline{};

struct TrainArgs {
  std::string corpus, out, model = "gan";
  std::size_t epochs = kGan.epochs, batch = kGan.batch_size, latent = kGan.latent_dim;
  std::size_t checkpoint_interval = kGan.checkpoint_interval;
  std::uint64_t seed = kGan.seed;
  double lr_g = kGan.lr_g, lr_d = kGan.lr_d;
  double lambda_adv = kGan.lambda_adv, lambda_rec = kGan.lambda_rec, lambda_cls = kGan.lambda_cls;
  double lr_baseline = kBaseline.lr;
  bool no_augment = false, no_lr_decay = false;
};

struct EvalArgs {
  std::string model, baseline, corpus, split = "test", report;
  std::size_t samples = 1;
};

struct PredictArgs {
  std::string model, frame, original;
};

struct ReconstructArgs {
  std::string model, frame, out, labels;
};

corpus::CorpusConfig corpus_config(const GenCorpusArgs& a) {
  corpus::CorpusConfig c;
  c.out_dir = a.out;
  c.frames = a.frames;
  c.frames_per_video = a.frames_per_video;
  const auto x = a.size.find('x');
  if (x == std::string::npos) throw std::invalid_argument("--size must look like WxH, got '" + a.size + "'");
  try {
    c.width = std::stoul(a.size.substr(0, x));
    c.height = std::stoul(a.size.substr(x + 1));
  } catch (const std::exception&) {
    throw std::invalid_argument("--size must look like WxH, got '" + a.size + "'");
  }
  c.classes = ClassSets(parse_int_list(a.rates), parse_double_list(a.losses));
  c.seed = a.seed;
  if (a.motif != "all") c.motif = corpus::parse_motif(a.motif);
  if (a.loss_model == "bernoulli") {
    c.emulator.loss_kind = emu::LossKind::Bernoulli;
  } else if (a.loss_model == "gilbert-elliott") {
    c.emulator.loss_kind = emu::LossKind::GilbertElliott;
  } else {
    throw std::invalid_argument("--loss-model must be bernoulli or gilbert-elliott");
  }
  c.emulator.mean_burst = a.mean_burst;
  c.emulator.loss_scale = a.loss_scale;
  c.train_fraction = a.train_fraction;
  return c;
}

int run_gen_corpus(const GenCorpusArgs& a) {
  const auto cfg = corpus_config(a);
  log_config("gen-corpus", {{"out", a.out},
                            {"frames", cfg.frames},
                            {"frames_per_video", cfg.frames_per_video},
                            {"size", a.size},
                            {"rates", cfg.classes.rates()},
                            {"losses", cfg.classes.losses()},
                            {"seed", cfg.seed},
                            {"motif", a.motif},
                            {"emulator", cfg.emulator.fingerprint()},
                            {"train_fraction", cfg.train_fraction}});
  const auto man = corpus::build_corpus(cfg);
  print_json({{"corpus", a.out},
              {"records", man.records.size()},
              {"train", man.indices(corpus::Split::Train).size()},
              {"test", man.indices(corpus::Split::Test).size()},
              {"emulator_hash", man.emulator_hash}});
  return kOk;
}

model::TrainConfig gan_config(const TrainArgs& a) {
  model::TrainConfig c;
  c.epochs = a.epochs;
  c.batch_size = a.batch;
  c.seed = a.seed;
  c.latent_dim = a.latent;
  c.checkpoint_interval = a.checkpoint_interval;
  c.lr_g = a.lr_g;
  c.lr_d = a.lr_d;
  c.lambda_adv = a.lambda_adv;
  c.lambda_rec = a.lambda_rec;
  c.lambda_cls = a.lambda_cls;
  c.augment = !a.no_augment;
  c.lr_decay = !a.no_lr_decay;
  return c;
}

baseline::BaselineConfig baseline_config(const TrainArgs& a) {
  baseline::BaselineConfig c;
  c.epochs = a.epochs;
  c.batch_size = a.batch;
  c.seed = a.seed;
  c.lr = a.lr_baseline;
  c.checkpoint_interval = a.checkpoint_interval;
  c.augment = !a.no_augment;
  c.lr_decay = !a.no_lr_decay;
  return c;
}

fs::path train_gan(const TrainArgs& a, const fs::path& out) {
  const auto cfg = gan_config(a);
  cfg.validate();
  log_config("train", {{"model", "gan"}, {"corpus", a.corpus}, {"out", out.string()}, {"train", cfg.to_json()}});
  std::fprintf(stderr, "%6s %9s %9s %9s %9s %9s %9s\n", "epoch", "d_loss", "g_loss", "rate", "loss",
               "joint", "psnr");
  const auto res = model::train(cfg, a.corpus, out, [](const model::EpochMetrics& m) {
    std::fprintf(stderr, "%6zu %9.4f %9.4f %9.4f %9.4f %9.4f %9.3f\n", m.epoch, m.disc_loss,
                 m.gen_loss, m.rate_acc, m.loss_acc, m.joint_acc, m.recon_psnr);
  });
  return res.final_checkpoint;
}

fs::path train_baseline(const TrainArgs& a, const fs::path& out) {
  const auto cfg = baseline_config(a);
  cfg.validate();
  log_config("train", {{"model", "baseline"}, {"corpus", a.corpus}, {"out", out.string()}, {"train", cfg.to_json()}});
  std::fprintf(stderr, "%6s %9s %9s %9s %9s\n", "epoch", "loss", "rate", "loss", "joint");
  const auto res = baseline::baseline_train(cfg, a.corpus, out, [](const baseline::BaselineEpoch& m) {
    std::fprintf(stderr, "%6zu %9.4f %9.4f %9.4f %9.4f\n", m.epoch, m.loss, m.rate_acc, m.loss_acc,
                 m.joint_acc);
  });
  return res.final_checkpoint;
}

int run_train(const TrainArgs& a) {
  fs::path ckpt;
  if (a.model == "gan") {
    ckpt = train_gan(a, a.out);
  } else if (a.model == "baseline") {
    ckpt = train_baseline(a, a.out);
  } else {
    throw std::invalid_argument("--model must be gan or baseline, got '" + a.model + "'");
  }
  print_json({{"model", a.model}, {"checkpoint", ckpt.string()}, {"metrics", (fs::path(a.out) / "metrics.csv").string()}});
  return kOk;
}

json summarize(const std::vector<eval::EvalReport>& reports, const fs::path& dir) {
  json models = json::array();
  for (const auto& r : reports) {
    json m = {{"model", r.model_kind}, {"inputs", r.inputs}, {"accuracy", r.accuracy.to_json()},
              {"train_accuracy", r.train_accuracy.to_json()}};
    if (r.has_reconstruction) {
      m["degraded_psnr"] = r.degraded_psnr;
      m["reconstructed_psnr"] = r.reconstructed_psnr;
      m["wrong_label_psnr"] = r.wrong_label_psnr;
    }
    models.push_back(m);
  }
  return {{"report", (dir / "report.json").string()}, {"models", models}};
}

void print_tables(const std::vector<eval::EvalReport>& reports) {
  for (const auto& r : reports) {
    std::cerr << "== " << r.model_kind << " (" << corpus::split_name(r.split) << ")\n"
              << r.rate.to_table("rate") << r.loss.to_table("loss");
    if (r.has_reconstruction) {
      std::fprintf(stderr, "psnr degraded %.3f  reconstructed %.3f  wrong labels %.3f\n",
                   r.degraded_psnr, r.reconstructed_psnr, r.wrong_label_psnr);
    }
  }
  std::cerr << eval::comparison_table(reports);
}

int run_eval(const EvalArgs& a) {
  eval::EvalOptions opt;
  opt.split = corpus::parse_split(a.split);
  opt.samples_per_condition = a.samples;
  std::vector<fs::path> ckpts{a.model};
  if (!a.baseline.empty()) ckpts.emplace_back(a.baseline);
  log_config("eval", {{"model", a.model}, {"baseline", a.baseline}, {"corpus", a.corpus},
                      {"split", a.split}, {"report", a.report}, {"samples", a.samples}});
  const auto reports = eval::evaluate(ckpts, a.corpus, a.report, opt);
  print_tables(reports);
  print_json(summarize(reports, a.report));
  return kOk;
}

int run_compare(const TrainArgs& t, const std::string& split, std::size_t samples) {
  const fs::path out = t.out;
  const fs::path gan_ckpt = train_gan(t, out / "gan");
  const fs::path base_ckpt = train_baseline(t, out / "baseline");
  EvalArgs e;
  e.model = gan_ckpt.string();
  e.baseline = base_ckpt.string();
  e.corpus = t.corpus;
  e.split = split;
  e.report = (out / "report").string();
  e.samples = samples;
  return run_eval(e);
}

Checkpoint load_any(const std::string& path, std::string& kind) {
  Checkpoint c = load_checkpoint(path);
  kind = c.metadata.value("model_kind", "");
  return c;
}

int run_predict(const PredictArgs& a) {
  log_config("predict", {{"model", a.model}, {"frame", a.frame}, {"original", a.original}});
  std::string kind;
  const Checkpoint ckpt = load_any(a.model, kind);
  const Frame received = read_pnm(a.frame);
  json out = {{"schema", kPredictSchema}, {"model_kind", kind}, {"frame", a.frame}};
  if (kind == model::kGanKind) {
    const auto gan = model::Gan::from_checkpoint(ckpt);
    const auto p = model::predict(gan, received);
    out["rate_kbps"] = p.state.rate_kbps;
    out["loss_percent"] = p.state.loss_percent;
    out["validity"] = p.validity;
    out["rate_probs"] = p.rate_probs;
    out["loss_probs"] = p.loss_probs;
  } else if (kind == baseline::kBaselineKind) {
    if (a.original.empty()) throw std::invalid_argument("the baseline model needs --original");
    const auto net = baseline::PairedCNN::from_checkpoint(ckpt);
    const auto p = baseline::baseline_predict(net, read_pnm(a.original), received);
    out["rate_kbps"] = p.state.rate_kbps;
    out["loss_percent"] = p.state.loss_percent;
  } else {
    throw CheckpointError(a.model + ": unknown model kind '" + kind + "'");
  }
  print_json(out);
  return kOk;
}

int run_reconstruct(const ReconstructArgs& a) {
  log_config("reconstruct", {{"model", a.model}, {"frame", a.frame}, {"out", a.out}, {"labels", a.labels}});
  std::string kind;
  const Checkpoint ckpt = load_any(a.model, kind);
  if (kind != model::kGanKind) {
    throw CheckpointError(a.model + ": reconstruction needs a " + model::kGanKind + " checkpoint, got '" +
                          kind + "'");
  }
  const auto gan = model::Gan::from_checkpoint(ckpt);
  const Frame received = read_pnm(a.frame);
  std::optional<NetworkState> labels;
  if (!a.labels.empty()) {
    const auto comma = a.labels.find(',');
    if (comma == std::string::npos) throw std::invalid_argument("--labels must be RATE,LOSS");
    NetworkState s;
    try {
      s.rate_kbps = std::stoi(a.labels.substr(0, comma));
      s.loss_percent = std::stod(a.labels.substr(comma + 1));
    } catch (const std::exception&) {
      throw std::invalid_argument("--labels must be RATE,LOSS, got '" + a.labels + "'");
    }
    if (!gan.classes.contains(s)) throw LabelError("labels " + to_string(s) + " are not a model class");
    labels = s;
  }
  json out = {{"schema", "vqos.reconstruct/1"}, {"frame", a.frame}, {"out", a.out}};
  NetworkState used;
  if (labels) {
    used = *labels;
    out["labels_source"] = "given";
  } else {
    used = model::predict(gan, received).state;
    out["labels_source"] = "predicted";
  }
  write_pnm(a.out, model::reconstruct(gan, received, used));
  out["rate_kbps"] = used.rate_kbps;
  out["loss_percent"] = used.loss_percent;
  print_json(out);
  return kOk;
}

void add_train_options(CLI::App* cmd, TrainArgs& t) {
  cmd->add_option("--corpus", t.corpus, "Corpus directory")->required();
  cmd->add_option("--out", t.out, "Output directory")->required();
  cmd->add_option("--epochs", t.epochs, "Training epochs (0 writes the initial checkpoint)")->capture_default_str();
  cmd->add_option("--batch", t.batch, "Batch size")->capture_default_str();
  cmd->add_option("--seed", t.seed, "Seed for initialization and shuffling")->capture_default_str();
  cmd->add_option("--latent", t.latent, "Generator latent width")->capture_default_str();
  cmd->add_option("--checkpoint-interval", t.checkpoint_interval, "Epochs between checkpoints (0: final only)")
      ->capture_default_str();
  cmd->add_option("--lr-g", t.lr_g, "Generator learning rate")->capture_default_str();
  cmd->add_option("--lr-d", t.lr_d, "Discriminator learning rate")->capture_default_str();
  cmd->add_option("--lambda-adv", t.lambda_adv, "Adversarial loss weight")->capture_default_str();
  cmd->add_option("--lambda-rec", t.lambda_rec, "L1 reconstruction weight")->capture_default_str();
  cmd->add_option("--lambda-cls", t.lambda_cls, "Generator classification weight")->capture_default_str();
  cmd->add_option("--lr-baseline", t.lr_baseline, "Paired classifier learning rate")->capture_default_str();
  cmd->add_flag("--no-augment", t.no_augment, "Disable random mirror flips");
  cmd->add_flag("--no-lr-decay", t.no_lr_decay, "Keep learning rates constant");
}

// Finds "--config FILE" among the arguments after the subcommand.
std::vector<std::string> with_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  for (std::size_t i = 1; i + 1 < args.size(); ++i) {
    if (args[i] == "--config") {
      const auto extra = config_args(args[i + 1]);
      std::vector<std::string> out{args[0]};
      out.insert(out.end(), extra.begin(), extra.end());
      for (std::size_t k = 1; k < args.size(); ++k) {
        if (k == i || k == i + 1) continue;
        out.push_back(args[k]);
      }
      return out;
    }
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Network condition estimation and frame reconstruction from degraded video", "vqos"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config;
  auto add_config = [&config](CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON file of flag values; explicit flags win");
  };

  GenCorpusArgs g;
  auto* gen = app.add_subcommand("gen-corpus", "Render clips and degrade them under every condition");
  gen->add_option("--out", g.out, "Output directory")->required();
  gen->add_option("--frames", g.frames, "Source frames")->capture_default_str();
  gen->add_option("--frames-per-video", g.frames_per_video, "Frames per synthetic clip")->capture_default_str();
  gen->add_option("--size", g.size, "Frame size WxH")->capture_default_str();
  gen->add_option("--rates", g.rates, "Data-rate classes in kbps")->capture_default_str();
  gen->add_option("--losses", g.losses, "Packet-loss classes in percent")->capture_default_str();
  gen->add_option("--seed", g.seed, "Corpus seed")->capture_default_str();
  gen->add_option("--motif", g.motif, "moving-rectangle, moving-disc, gradient-noise, checker-drift or all")->capture_default_str();
  gen->add_option("--loss-model", g.loss_model, "bernoulli or gilbert-elliott")->capture_default_str();
  gen->add_option("--mean-burst", g.mean_burst, "Mean burst length in packets (gilbert-elliott)")
      ->capture_default_str();
  gen->add_option("--loss-scale", g.loss_scale, "Drop probability = loss percent / 100 * scale")
      ->capture_default_str();
  gen->add_option("--train-fraction", g.train_fraction, "Share of source frames in the train split")
      ->capture_default_str();
  add_config(gen);

  TrainArgs t;
  auto* train = app.add_subcommand("train", "Train the GAN or the paired baseline classifier");
  add_train_options(train, t);
  train->add_option("--model", t.model, "gan or baseline")->capture_default_str();
  add_config(train);

  TrainArgs ct;
  std::string compare_split = "test";
  std::size_t compare_samples = 1;
  auto* compare = app.add_subcommand("compare", "Train both models on one corpus and evaluate them");
  add_train_options(compare, ct);
  compare->add_option("--split", compare_split, "Split to evaluate")->capture_default_str();
  compare->add_option("--samples", compare_samples, "Triptychs written per condition")->capture_default_str();
  add_config(compare);

  EvalArgs e;
  auto* ev = app.add_subcommand("eval", "Confusion matrices, accuracy table and reconstruction PSNR");
  ev->add_option("--model", e.model, "Checkpoint to evaluate")->required();
  ev->add_option("--baseline", e.baseline, "Second checkpoint for the comparison table");
  ev->add_option("--corpus", e.corpus, "Corpus directory")->required();
  ev->add_option("--split", e.split, "train or test")->capture_default_str();
  ev->add_option("--report", e.report, "Report directory")->required();
  ev->add_option("--samples", e.samples, "Triptychs written per condition")->capture_default_str();
  add_config(ev);

  PredictArgs p;
  auto* pred = app.add_subcommand("predict", "Estimate the network condition of one received frame");
  pred->add_option("--model", p.model, "Checkpoint")->required();
  pred->add_option("--frame", p.frame, "Received frame (PGM)")->required();
  pred->add_option("--original", p.original, "Original frame, for the baseline model");
  add_config(pred);

  ReconstructArgs r;
  auto* rec = app.add_subcommand("reconstruct", "Restore a received frame with the generator");
  rec->add_option("--model", r.model, "GAN checkpoint")->required();
  rec->add_option("--frame", r.frame, "Received frame (PGM)")->required();
  rec->add_option("--out", r.out, "Output PGM")->required();
  rec->add_option("--labels", r.labels, "RATE,LOSS to condition on; predicted when omitted");
  add_config(rec);

  try {
    auto args = with_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  } catch (const IoError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kIo;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsage;
  }

  try {
    if (*gen) return run_gen_corpus(g);
    if (*train) return run_train(t);
    if (*compare) return run_compare(ct, compare_split, compare_samples);
    if (*ev) return run_eval(e);
    if (*pred) return run_predict(p);
    if (*rec) return run_reconstruct(r);
    return kUsage;
  } catch (const NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << '\n';
    return kNumeric;
  } catch (const IoError& err) {
    std::cerr << "i/o error: " << err.what() << '\n';
    return kIo;
  } catch (const CheckpointError& err) {
    std::cerr << "checkpoint error: " << err.what() << '\n';
    return kIo;
  } catch (const corpus::CorpusError& err) {
    std::cerr << "corpus error: " << err.what() << '\n';
    return kData;
  } catch (const FormatError& err) {
    std::cerr << "format error: " << err.what() << '\n';
    return kData;
  } catch (const LabelError& err) {
    std::cerr << "label error: " << err.what() << '\n';
    return kData;
  } catch (const ShapeError& err) {
    std::cerr << "shape error: " << err.what() << '\n';
    return kData;
  } catch (const emu::StreamError& err) {
    std::cerr << "stream error: " << err.what() << '\n';
    return kData;
  } catch (const std::invalid_argument& err) {
    std::cerr << "usage error: " << err.what() << '\n';
    return kUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kIo;
  }
}
