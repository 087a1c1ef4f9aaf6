// Acceptance run: one PASS/FAIL line per criterion. Criteria 4 to 7 drive
// the command-line tool end to end, so its path is the first argument.
#include <sys/resource.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "vqos/baseline.hpp"
#include "vqos/corpus.hpp"
#include "vqos/emulator.hpp"
#include "vqos/model.hpp"
#include "vqos/quality.hpp"

using namespace vqos;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradRelErr = 1e-4;
constexpr std::size_t kGradInstances = 20;
constexpr double kConvOracleErr = 1e-10;
constexpr double kAdjointErr = 1e-9;
constexpr double kOracleSeconds = 60.0;
constexpr double kBernoulliP = 0.1, kBernoulliLo = 0.091, kBernoulliHi = 0.109;
constexpr std::size_t kBernoulliPackets = 10000;
constexpr std::size_t kPsnrFrames = 100;
constexpr double kDiscJoint = 0.90;
constexpr double kTrainCpuSeconds = 30.0 * 60.0;
constexpr std::size_t kMaxEpochs = 50;
constexpr double kCompareJoint = 0.80;
constexpr double kPsnrUplift = 1.0;
constexpr std::size_t kReproEpochs = 2;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double child_cpu_seconds() {
  rusage u{};
  getrusage(RUSAGE_CHILDREN, &u);
  return static_cast<double>(u.ru_utime.tv_sec + u.ru_stime.tv_sec) +
         1e-6 * static_cast<double>(u.ru_utime.tv_usec + u.ru_stime.tv_usec);
}

// Runs the tool inside `dir`; output goes to `log`.
bool run_tool(const fs::path& tool, const fs::path& dir, const std::string& args, const fs::path& log) {
  const std::string cmd = "cd '" + dir.string() + "' && '" + tool.string() + "' " + args + " > '" +
                          log.string() + "' 2>&1";
  std::fprintf(stderr, "  $ vqos %s\n", args.c_str());
  return std::system(cmd.c_str()) == 0;
}

ops::LayerParams layer(Tensor w, Tensor b, std::size_t stride = 1, std::size_t pad = 0) {
  return {std::move(w), std::move(b), stride, pad};
}

// ---------------------------------------------------------------------------

Outcome criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  using oracle::random_tensor;
  double grad_worst = 0.0;
  std::size_t instances = 0, entries = 0;
  for (std::size_t i = 0; i < kGradInstances; ++i) {
    // conv -> leaky relu -> transpose conv -> dense -> cross entropy
    const std::size_t stride = 1 + rng.below(2);
    auto x = random_tensor({2, 2, 6, 6}, rng, true);
    auto w1 = random_tensor({3, 2, 3, 3}, rng, true);
    auto b1 = random_tensor({3}, rng, true);
    auto w2 = random_tensor({3, 2, 2, 2}, rng, true);
    auto b2 = random_tensor({2}, rng, true);
    const auto l1 = layer(w1, b1, stride, 1);
    const auto l2 = layer(w2, b2, 2, 0);
    const std::size_t feat = ops::conv_transpose2d(ops::conv2d(x, l1), l2).numel() / 2;
    auto w3 = random_tensor({3, feat}, rng, true);
    auto b3 = random_tensor({3}, rng, true);
    const std::vector<std::size_t> labels{rng.below(3), rng.below(3)};
    auto f = [&] {
      Tensor h = ops::leaky_relu(ops::conv2d(x, l1), 0.2);
      h = ops::sigmoid(ops::conv_transpose2d(h, l2));
      h = ops::reshape(h, {2, feat});
      return ops::cross_entropy(ops::dense(h, layer(w3, b3)), labels);
    };
    const auto r = oracle::grad_check(f, {x, w1, b1, w2, b2, w3, b3});
    grad_worst = std::max(grad_worst, r.max_rel_err);
    entries += r.checked;
    ++instances;
  }
  {
    // Full generator + discriminator composite at a tiny size.
    model::GanArch a;
    a.width = a.height = 16;
    a.latent_dim = 6;
    a.g_widths = {3, 4, 4};
    a.d_widths = {4, 4, 4, 4};
    model::Gan gan(a, ClassSets({1200, 1600}, {0.05, 0.1, 0.25}), 5);
    for (const auto& p : gan.named_params()) {
      if (p.name.ends_with(".b")) {
        for (auto& v : Tensor(p.tensor).mutable_data()) v = rng.uniform(-0.3, 0.3);
      }
    }
    const Tensor recv = random_tensor({2, 1, 16, 16}, rng, false, 0.0, 1.0);
    const Tensor orig = random_tensor({2, 1, 16, 16}, rng, false, 0.0, 1.0);
    const std::vector<std::size_t> ri{0, 1}, li{2, 0};
    model::TrainConfig cfg;
    cfg.lambda_adv = 0.3;
    cfg.lambda_cls = 0.7;
    auto f = [&] { return model::generator_loss(gan, recv, orig, ri, li, cfg).total; };
    std::vector<Tensor> ps = gan.generator.params();
    for (auto& p : gan.discriminator.params()) ps.push_back(p);
    const auto r = oracle::grad_check(f, ps, 1e-6, 10);
    grad_worst = std::max(grad_worst, r.max_rel_err);
    entries += r.checked;
    ++instances;
  }

  double conv_worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(3), k = 1 + rng.below(4);
    const std::size_t h = 5 + rng.below(6), w = 5 + rng.below(6);
    const std::size_t kh = 1 + rng.below(4), kw = 1 + rng.below(4);
    const std::size_t stride = 1 + rng.below(2), pad = rng.below(2);
    auto x = random_tensor({n, c, h, w}, rng);
    auto wt = random_tensor({k, c, kh, kw}, rng);
    auto b = random_tensor({k}, rng);
    std::size_t oh = 0, ow = 0;
    const auto expect = oracle::naive_conv2d({x.data().begin(), x.data().end()}, n, c, h, w,
                                             {wt.data().begin(), wt.data().end()}, k, kh, kw,
                                             {b.data().begin(), b.data().end()}, stride, pad, oh, ow);
    const auto y = ops::conv2d(x, layer(wt, b, stride, pad));
    for (std::size_t i = 0; i < expect.size(); ++i) {
      conv_worst = std::max(conv_worst, std::abs(y.data()[i] - expect[i]));
    }
  }

  double adj_worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t c = 1 + rng.below(3), k = 1 + rng.below(3);
    const std::size_t kh = 1 + rng.below(4), kw = 1 + rng.below(4);
    const std::size_t stride = 1 + rng.below(3), pad = rng.below(std::min(kh, kw));
    const std::size_t oh = 1 + rng.below(5), ow = 1 + rng.below(5);
    const long hl = static_cast<long>((oh - 1) * stride + kh) - 2 * static_cast<long>(pad);
    const long wl = static_cast<long>((ow - 1) * stride + kw) - 2 * static_cast<long>(pad);
    if (hl <= 0 || wl <= 0) continue;
    auto x = random_tensor({1, c, static_cast<std::size_t>(hl), static_cast<std::size_t>(wl)}, rng);
    auto wt = random_tensor({k, c, kh, kw}, rng);
    auto y = random_tensor({1, k, oh, ow}, rng);
    const auto fx = ops::conv2d(x, layer(wt, Tensor::zeros({k}), stride, pad));
    const auto ty = ops::conv_transpose2d(y, layer(wt, Tensor::zeros({c}), stride, pad));
    adj_worst = std::max(adj_worst, std::abs(oracle::dot(fx.data(), y.data()) -
                                             oracle::dot(x.data(), ty.data())));
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Outcome o;
  o.pass = instances >= kGradInstances && grad_worst < kGradRelErr && conv_worst <= kConvOracleErr &&
           adj_worst <= kAdjointErr && secs < kOracleSeconds;
  o.detail = std::to_string(instances) + " gradient instances (" + std::to_string(entries) +
             " entries), max rel err " + fmt("%.2e", grad_worst) + " < 1e-4; conv2d vs naive " +
             fmt("%.2e", conv_worst) + " <= 1e-10; adjoint gap " + fmt("%.2e", adj_worst) +
             " <= 1e-9; " + fmt("%.1f", secs) + " s < 60 s";
  return o;
}

Outcome criterion_emulator() {
  std::vector<emu::Packet> pk(kBernoulliPackets);
  for (std::size_t i = 0; i < pk.size(); ++i) pk[i].seq = static_cast<std::uint32_t>(i);
  const auto kept = emu::apply_loss(pk, emu::LossModel::bernoulli(kBernoulliP), 2024);
  const double rate = 1.0 - static_cast<double>(kept.size()) / static_cast<double>(pk.size());
  const bool rate_ok = rate >= kBernoulliLo && rate <= kBernoulliHi;

  const ClassSets classes;
  const emu::RateConfig rc;
  bool round_trip = true;
  double worst_ratio = 0.0;  // max |err| / (q/2)
  const auto frames = corpus::gen_video(77, 10, 64, 64, corpus::Motif::GradientNoise);
  std::size_t checked = 0;
  for (int rate_kbps : classes.rates()) {
    const double half_step = rc.quant_step(rate_kbps) / 2.0 / 255.0;
    for (const auto& f : frames) {
      const auto enc = emu::throttle_encode(f, rate_kbps, rc, classes);
      const auto plain = emu::packetize(enc.bytes, rc.mtu);
      const auto aligned = emu::packetize(enc.bytes, rc.mtu, 0, &enc.index);
      round_trip = round_trip && emu::reassemble(plain) == enc.bytes &&
                   emu::reassemble(aligned) == enc.bytes;
      const auto all = emu::apply_loss(aligned, emu::LossModel::bernoulli(0.0), 1);
      const auto dec = emu::decode_conceal(all, enc.index);
      for (std::size_t i = 0; i < f.pixels.size(); ++i) {
        worst_ratio = std::max(worst_ratio, std::abs(dec.frame.pixels[i] - f.pixels[i]) / half_step);
      }
      ++checked;
    }
  }
  Outcome o;
  o.pass = rate_ok && round_trip && worst_ratio <= 1.0 + 1e-12;
  o.detail = "Bernoulli 0.1 over 10000 packets: " + fmt("%.4f", rate) + " in [0.091, 0.109]; " +
             "packetize round trip " + (round_trip ? "exact" : "BROKEN") + " on " +
             std::to_string(checked) + " streams; zero-loss error " + fmt("%.3f", worst_ratio) +
             " x q/2";
  return o;
}

Outcome criterion_psnr_order() {
  const ClassSets classes;
  const emu::EmulatorConfig cfg;
  std::vector<Frame> frames;
  const std::size_t per_video = 10;
  for (std::size_t v = 0; frames.size() < kPsnrFrames; ++v) {
    const auto motif = static_cast<corpus::Motif>(v % 4);
    for (auto& f : corpus::gen_video(500 + v, per_video, 64, 64, motif)) frames.push_back(std::move(f));
  }
  frames.resize(kPsnrFrames);
  std::map<std::pair<int, double>, double> mean;
  for (int r : classes.rates()) {
    for (double l : classes.losses()) {
      double sum = 0.0;
      for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto d = emu::degrade(frames[i], {r, l}, cfg, classes, 9000 + i, static_cast<std::uint32_t>(i));
        sum += psnr(d.frame, frames[i]);
      }
      mean[{r, l}] = sum / static_cast<double>(frames.size());
    }
  }
  bool ok = mean[{1600, 0.05}] > mean[{1600, 0.25}];
  std::string detail = "PSNR(1600,0.05) " + fmt("%.2f", mean[{1600, 0.05}]) + " > PSNR(1600,0.25) " +
                       fmt("%.2f", mean[{1600, 0.25}]);
  for (double l : classes.losses()) {
    ok = ok && mean[{1600, l}] > mean[{1200, l}];
    detail += "; loss " + fmt("%g", l) + ": 1600 " + fmt("%.2f", mean[{1600, l}]) + " > 1200 " +
              fmt("%.2f", mean[{1200, l}]);
  }
  return {ok, detail};
}

struct CompareRun {
  bool ran = false;
  double cpu_seconds = 0.0;
  std::size_t gan_epochs = 0;
  json report;
  std::vector<std::vector<std::string>> comparison;  // rows without the header
  fs::path report_dir;
};

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

CompareRun run_compare(const fs::path& tool, const fs::path& work) {
  CompareRun run;
  fs::remove_all(work);
  fs::create_directories(work);
  if (!run_tool(tool, work, "gen-corpus --out corpus", work / "gen.log")) return run;
  const double cpu0 = child_cpu_seconds();
  const auto t0 = std::chrono::steady_clock::now();
  if (!run_tool(tool, work, "compare --corpus corpus --out run", work / "compare.log")) return run;
  run.cpu_seconds = child_cpu_seconds() - cpu0;
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::fprintf(stderr, "  compare: %.0f s cpu, %.0f s wall\n", run.cpu_seconds, wall);
  run.gan_epochs = read_csv_rows(work / "run" / "gan" / "metrics.csv").size();
  run.report_dir = work / "run" / "report";
  run.report = json::parse(slurp(run.report_dir / "report.json"));
  run.comparison = read_csv_rows(run.report_dir / "comparison.csv");
  run.ran = true;
  return run;
}

const json* find_model(const json& report, const std::string& kind) {
  for (const auto& m : report.at("models")) {
    if (m.value("model_kind", "") == kind) return &m;
  }
  return nullptr;
}

Outcome criterion_discriminator(const CompareRun& run) {
  if (!run.ran) return {false, "compare run failed; see compare.log"};
  const json* gan = find_model(run.report, model::kGanKind);
  if (!gan) return {false, "no GAN entry in report.json"};
  const double joint = gan->at("accuracy").at("joint").get<double>();
  bool persisted = true;
  for (const char* f : {"confusion_rate.csv", "confusion_loss.csv", "confusion_joint.csv"}) {
    persisted = persisted && fs::exists(run.report_dir / f);
  }
  Outcome o;
  o.pass = joint >= kDiscJoint && run.cpu_seconds <= kTrainCpuSeconds &&
           run.gan_epochs <= kMaxEpochs && run.gan_epochs > 0 && persisted;
  o.detail = "test joint accuracy " + fmt("%.4f", joint) + " >= 0.90 after " +
             std::to_string(run.gan_epochs) + " epochs (<= 50); " + fmt("%.0f", run.cpu_seconds) +
             " s CPU for both models (<= 1800); confusion matrices " +
             (persisted ? "written" : "MISSING");
  return o;
}

Outcome criterion_comparison(const CompareRun& run) {
  if (!run.ran) return {false, "compare run failed; see compare.log"};
  std::set<std::string> kinds;
  bool ok = run.comparison.size() == 2;
  std::string detail;
  for (const auto& row : run.comparison) {
    if (row.size() < 5) return {false, "malformed comparison.csv row"};
    kinds.insert(row[0]);
    const double joint = std::stod(row[4]);
    ok = ok && joint >= kCompareJoint;
    if (row[0] == model::kGanKind) ok = ok && row[1] == "received";
    detail += (detail.empty() ? "" : "; ") + row[0] + " (" + row[1] + ") joint " + fmt("%.4f", joint);
  }
  ok = ok && kinds == std::set<std::string>{model::kGanKind, baseline::kBaselineKind};
  return {ok, std::to_string(run.comparison.size()) + " rows: " + detail + "; each >= 0.80"};
}

Outcome criterion_reconstruction(const CompareRun& run) {
  if (!run.ran) return {false, "compare run failed; see compare.log"};
  const json* gan = find_model(run.report, model::kGanKind);
  if (!gan) return {false, "no GAN entry in report.json"};
  const json& r = gan->at("reconstruction");
  const double deg = r.at("degraded_psnr").get<double>();
  const double rec = r.at("reconstructed_psnr").get<double>();
  const double wrong = r.at("wrong_label_psnr").get<double>();
  Outcome o;
  o.pass = rec >= deg + kPsnrUplift && wrong < rec;
  o.detail = "test PSNR reconstructed " + fmt("%.3f", rec) + " >= degraded " + fmt("%.3f", deg) +
             " + 1 dB; wrong labels " + fmt("%.3f", wrong) + " < true labels";
  return o;
}

// Every file under `a` exists under `b` with the same bytes, and vice versa.
bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files, std::string& first_diff) {
  std::set<fs::path> seen;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    seen.insert(rel);
    ++files;
    if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) {
      if (first_diff.empty()) first_diff = rel.string();
      return false;
    }
  }
  for (const auto& e : fs::recursive_directory_iterator(b)) {
    if (e.is_regular_file() && !seen.count(fs::relative(e.path(), b))) {
      if (first_diff.empty()) first_diff = fs::relative(e.path(), b).string();
      return false;
    }
  }
  return true;
}

Outcome criterion_reproducibility(const fs::path& tool, const fs::path& work) {
  const std::string epochs = std::to_string(kReproEpochs);
  for (const char* name : {"a", "b"}) {
    const fs::path dir = work / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    if (!run_tool(tool, dir, "gen-corpus --out corpus --seed 7", dir / "gen.log") ||
        !run_tool(tool, dir, "compare --corpus corpus --out run --seed 3 --epochs " + epochs,
                  dir / "compare.log")) {
      return {false, std::string("tool failed in ") + name};
    }
  }
  std::size_t corpus_files = 0, run_files = 0;
  std::string diff;
  const bool corpus_same = same_tree(work / "a" / "corpus", work / "b" / "corpus", corpus_files, diff);
  const bool run_same = same_tree(work / "a" / "run", work / "b" / "run", run_files, diff);

  // Save and reload the trained checkpoints; forward outputs must match bit for bit.
  const corpus::Dataset test(work / "a" / "corpus", corpus::Split::Test);
  const auto batch = test.ordered_batches(32).front();
  const auto gan = model::Gan::from_checkpoint(load_checkpoint(work / "a" / "run" / "gan" / "model.vqos"));
  const fs::path resaved = work / "resaved_gan.vqos";
  save_checkpoint(resaved, gan.to_checkpoint());
  const auto gan2 = model::Gan::from_checkpoint(load_checkpoint(resaved));
  auto equal = [](const Tensor& x, const Tensor& y) {
    return x.shape() == y.shape() && std::ranges::equal(x.data(), y.data());
  };
  bool forward_same =
      equal(gan.generator.forward(batch.received, batch.rate_idx, batch.loss_idx),
            gan2.generator.forward(batch.received, batch.rate_idx, batch.loss_idx)) &&
      equal(gan.discriminator.forward(batch.received).loss_logits,
            gan2.discriminator.forward(batch.received).loss_logits) &&
      slurp(resaved) == slurp(work / "a" / "run" / "gan" / "model.vqos");
  const auto net = baseline::PairedCNN::from_checkpoint(
      load_checkpoint(work / "a" / "run" / "baseline" / "model.vqos"));
  const auto net2 = baseline::PairedCNN::from_checkpoint(decode_checkpoint(encode_checkpoint(net.to_checkpoint())));
  forward_same = forward_same && equal(net.forward(batch.original, batch.received).first,
                                       net2.forward(batch.original, batch.received).first);
  Outcome o;
  o.pass = corpus_same && run_same && forward_same;
  o.detail = "two seeded runs: corpus " + std::string(corpus_same ? "identical" : "DIFFERS") + " (" +
             std::to_string(corpus_files) + " files), metrics, checkpoints and reports " +
             (run_same ? "identical" : "DIFFER") + " (" + std::to_string(run_files) + " files)" +
             (diff.empty() ? "" : ", first difference " + diff) + "; reloaded checkpoints " +
             (forward_same ? "give bit-identical outputs" : "CHANGE outputs");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string tool, work = "acceptance_work";
  std::vector<int> only;
  app.add_option("tool", tool, "Path to the vqos executable")->required();
  app.add_option("--work", work, "Scratch directory for the end-to-end runs")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);
  const fs::path tool_path = fs::absolute(tool), work_dir = fs::absolute(work);

  auto wanted = [&](int id) { return only.empty() || std::ranges::find(only, id) != only.end(); };
  int failed = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("%s  criterion %d  %-34s %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  };

  report(1, "autograd oracles", criterion_gradients);
  report(2, "emulator loss and codec", criterion_emulator);
  report(3, "PSNR ordering over conditions", criterion_psnr_order);
  CompareRun run;
  if (wanted(4) || wanted(5) || wanted(6)) {
    try {
      run = run_compare(tool_path, work_dir / "desk");
    } catch (const std::exception& e) {
      std::fprintf(stderr, "compare run: %s\n", e.what());
    }
  }
  report(4, "discriminator accuracy and budget", [&] { return criterion_discriminator(run); });
  report(5, "GAN vs paired CNN comparison", [&] { return criterion_comparison(run); });
  report(6, "reconstruction uplift", [&] { return criterion_reconstruction(run); });
  report(7, "reproducibility", [&] { return criterion_reproducibility(tool_path, work_dir / "repro"); });
  return failed == 0 ? 0 : 1;
}
