#include "vqos/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "vqos/baseline.hpp"
#include "vqos/checkpoint.hpp"
#include "vqos/model.hpp"
#include "vqos/quality.hpp"

namespace vqos::eval {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kReportVersion = 1;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string fmt_fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Non-finite values (identical frames) become null.
json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

struct Tally {
  std::vector<std::size_t> rate_pred, rate_true, loss_pred, loss_true, cond_pred, cond_true;
  std::size_t rate_ok = 0, loss_ok = 0, joint_ok = 0;

  void add(const ClassSets& c, std::size_t rp, std::size_t rt, std::size_t lp, std::size_t lt) {
    rate_pred.push_back(rp);
    rate_true.push_back(rt);
    loss_pred.push_back(lp);
    loss_true.push_back(lt);
    cond_pred.push_back(rp * c.num_losses() + lp);
    cond_true.push_back(rt * c.num_losses() + lt);
    rate_ok += rp == rt;
    loss_ok += lp == lt;
    joint_ok += rp == rt && lp == lt;
  }

  Accuracy accuracy() const {
    Accuracy a;
    a.samples = rate_true.size();
    if (a.samples == 0) return a;
    const double n = static_cast<double>(a.samples);
    a.rate = static_cast<double>(rate_ok) / n;
    a.loss = static_cast<double>(loss_ok) / n;
    a.joint = static_cast<double>(joint_ok) / n;
    return a;
  }
};

// Predicted (rate, loss) indices for one batch, whichever the model kind.
struct AnyModel {
  std::string kind;
  std::optional<model::Gan> gan;
  std::optional<baseline::PairedCNN> paired;

  const ClassSets& classes() const { return gan ? gan->classes : paired->classes(); }
  const model::GanArch& arch() const { return gan ? gan->arch : paired->arch(); }
  json metadata() const {
    return {{"arch", arch().to_json()},
            {"classes", model::classes_to_json(classes())},
            {"provenance", gan ? gan->provenance : paired->provenance}};
  }

  std::vector<std::pair<std::size_t, std::size_t>> predict(const corpus::Batch& b) const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    if (gan) {
      for (const auto& p : model::predict_batch(*gan, b.received)) out.emplace_back(p.rate_idx, p.loss_idx);
    } else {
      for (const auto& p : baseline::predict_batch(*paired, b.original, b.received)) {
        out.emplace_back(p.rate_idx, p.loss_idx);
      }
    }
    return out;
  }
};

AnyModel load_model(const fs::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  AnyModel m;
  m.kind = ckpt.metadata.value("model_kind", "");
  if (m.kind == model::kGanKind) {
    m.gan.emplace(model::Gan::from_checkpoint(ckpt));
  } else if (m.kind == baseline::kBaselineKind) {
    m.paired.emplace(baseline::PairedCNN::from_checkpoint(ckpt));
  } else {
    throw CheckpointError(path.string() + ": unknown model kind '" + m.kind + "'");
  }
  return m;
}

void check_compatible(const AnyModel& m, const corpus::Manifest& man, const fs::path& path) {
  if (!(m.classes() == man.classes)) {
    throw LabelError(path.string() + ": checkpoint class sets " +
                     model::classes_to_json(m.classes()).dump() + " differ from the corpus " +
                     model::classes_to_json(man.classes).dump());
  }
  const auto& a = m.arch();
  if (a.width != man.width || a.height != man.height || a.channels != man.channels) {
    throw ShapeError(path.string() + ": checkpoint expects " + a.signature() + ", corpus frames are " +
                     std::to_string(man.width) + "x" + std::to_string(man.height) + "x" +
                     std::to_string(man.channels));
  }
}

Tally classify(const AnyModel& m, const corpus::Dataset& data, std::size_t batch_size) {
  Tally t;
  for (const auto& b : data.ordered_batches(batch_size)) {
    const auto pred = m.predict(b);
    for (std::size_t i = 0; i < b.size(); ++i) {
      t.add(m.classes(), pred[i].first, b.rate_idx[i], pred[i].second, b.loss_idx[i]);
    }
  }
  return t;
}

Frame triptych(const Frame& a, const Frame& b, const Frame& c) {
  Frame out(3 * a.width, a.height, a.channels);
  const Frame* parts[] = {&a, &b, &c};
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t ch = 0; ch < a.channels; ++ch) {
      for (std::size_t y = 0; y < a.height; ++y) {
        for (std::size_t x = 0; x < a.width; ++x) {
          out.at(ch, y, k * a.width + x) = parts[k]->at(ch, y, x);
        }
      }
    }
  }
  return out;
}

// Per-condition PSNR of degraded, true-label and wrong-label reconstructions;
// writes triptychs for the first samples of each condition.
void reconstruction_quality(const model::Gan& gan, const corpus::Dataset& data,
                            const EvalOptions& opt, const fs::path& sample_dir, EvalReport& r) {
  const ClassSets& c = gan.classes;
  std::vector<std::vector<double>> deg(c.num_conditions()), rec(c.num_conditions()),
      wrong(c.num_conditions());
  std::vector<double> all_deg, all_rec, all_wrong;
  std::vector<std::size_t> written(c.num_conditions(), 0);
  for (const auto& b : data.ordered_batches(opt.batch_size)) {
    std::vector<std::size_t> wr(b.size()), wl(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) {
      wr[i] = (b.rate_idx[i] + 1) % c.num_rates();
      wl[i] = (b.loss_idx[i] + 1) % c.num_losses();
    }
    const Tensor good = model::reconstruct_batch(gan, b.received, b.rate_idx, b.loss_idx);
    const Tensor bad = model::reconstruct_batch(gan, b.received, wr, wl);
    for (std::size_t i = 0; i < b.size(); ++i) {
      const auto& rec_i = data.manifest().records[b.records[i]];
      const std::size_t cond = c.condition_index(rec_i.state);
      const Frame orig = corpus::unstack_frame(b.original, i);
      const Frame recv = corpus::unstack_frame(b.received, i);
      const Frame g = corpus::unstack_frame(good, i);
      const double pd = psnr(recv, orig), pg = psnr(g, orig),
                   pw = psnr(corpus::unstack_frame(bad, i), orig);
      deg[cond].push_back(pd);
      rec[cond].push_back(pg);
      wrong[cond].push_back(pw);
      all_deg.push_back(pd);
      all_rec.push_back(pg);
      all_wrong.push_back(pw);
      if (written[cond] < opt.samples_per_condition) {
        ++written[cond];
        char name[64];
        std::snprintf(name, sizeof name, "c%02zu_f%05u.pgm", cond, rec_i.frame_id);
        write_pnm(sample_dir / name, triptych(orig, recv, g));
      }
    }
  }
  r.has_reconstruction = true;
  for (std::size_t k = 0; k < c.num_conditions(); ++k) {
    ConditionQuality q;
    q.state = c.condition(k);
    q.samples = deg[k].size();
    q.degraded_psnr = mean(deg[k]);
    q.reconstructed_psnr = mean(rec[k]);
    q.wrong_label_psnr = mean(wrong[k]);
    r.quality.push_back(q);
  }
  r.degraded_psnr = mean(all_deg);
  r.reconstructed_psnr = mean(all_rec);
  r.wrong_label_psnr = mean(all_wrong);
}

void write_confusions(const fs::path& dir, const std::string& prefix, const EvalReport& r) {
  model::write_text_file(dir / (prefix + "confusion_rate.csv"), r.rate.to_csv());
  model::write_text_file(dir / (prefix + "confusion_loss.csv"), r.loss.to_csv());
  model::write_text_file(dir / (prefix + "confusion_joint.csv"), r.joint.to_csv());
}

}  // namespace

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (const auto& row : counts) {
    for (std::size_t v : row) n += v;
  }
  return n;
}

std::size_t ConfusionMatrix::correct() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) n += counts[i][i];
  return n;
}

double ConfusionMatrix::accuracy() const {
  const std::size_t n = total();
  return n == 0 ? 0.0 : static_cast<double>(correct()) / static_cast<double>(n);
}

json ConfusionMatrix::to_json() const {
  return {{"labels", labels}, {"counts", counts}, {"accuracy", accuracy()}};
}

std::string ConfusionMatrix::to_csv() const {
  std::ostringstream os;
  os << "true\\pred";
  for (const auto& l : labels) os << ',' << l;
  os << '\n';
  for (std::size_t t = 0; t < counts.size(); ++t) {
    os << labels[t];
    for (std::size_t v : counts[t]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

std::string ConfusionMatrix::to_table(const std::string& title) const {
  std::size_t w = 9;
  for (const auto& l : labels) w = std::max(w, l.size());
  for (const auto& row : counts) {
    for (std::size_t v : row) w = std::max(w, std::to_string(v).size());
  }
  auto cell = [w](const std::string& s) { return std::string(w + 2 - s.size(), ' ') + s; };
  std::ostringstream os;
  os << title << " (accuracy " << fmt_fixed(accuracy(), 4) << ")\n" << cell("true\\pred");
  for (const auto& l : labels) os << cell(l);
  os << '\n';
  for (std::size_t t = 0; t < counts.size(); ++t) {
    os << cell(labels[t]);
    for (std::size_t v : counts[t]) os << cell(std::to_string(v));
    os << '\n';
  }
  return os.str();
}

ConfusionMatrix confusion(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                          std::vector<std::string> labels) {
  if (predicted.size() != truth.size()) {
    throw ShapeError("confusion: " + std::to_string(predicted.size()) + " predictions for " +
                     std::to_string(truth.size()) + " labels");
  }
  ConfusionMatrix m;
  const std::size_t k = labels.size();
  m.labels = std::move(labels);
  m.counts.assign(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] >= k || truth[i] >= k) {
      throw LabelError("confusion: class index " + std::to_string(std::max(predicted[i], truth[i])) +
                       " outside " + std::to_string(k) + " classes");
    }
    ++m.counts[truth[i]][predicted[i]];
  }
  return m;
}

ConfusionMatrix confusion(std::span<const double> predicted, std::span<const double> truth,
                          std::span<const double> axis) {
  auto index = [&](double v) {
    const auto it = std::find(axis.begin(), axis.end(), v);
    if (it == axis.end()) throw LabelError("confusion: value " + fmt(v) + " is not a class");
    return static_cast<std::size_t>(it - axis.begin());
  };
  std::vector<std::size_t> p, t;
  for (double v : predicted) p.push_back(index(v));
  for (double v : truth) t.push_back(index(v));
  std::vector<std::string> labels;
  for (double v : axis) labels.push_back(fmt(v));
  return confusion(p, t, std::move(labels));
}

std::vector<std::string> rate_labels(const ClassSets& c) {
  std::vector<std::string> out;
  for (int r : c.rates()) out.push_back(std::to_string(r));
  return out;
}

std::vector<std::string> loss_labels(const ClassSets& c) {
  std::vector<std::string> out;
  for (double l : c.losses()) out.push_back(fmt(l));
  return out;
}

std::vector<std::string> condition_labels(const ClassSets& c) {
  std::vector<std::string> out;
  for (int r : c.rates()) {
    for (double l : c.losses()) out.push_back(std::to_string(r) + "/" + fmt(l));
  }
  return out;
}

json Accuracy::to_json() const {
  return {{"rate", rate}, {"loss", loss}, {"joint", joint}, {"samples", samples}};
}

json EvalReport::to_json() const {
  json j = {{"model_kind", model_kind},
            {"inputs", inputs},
            {"split", corpus::split_name(split)},
            {"accuracy", accuracy.to_json()},
            {"train_accuracy", train_accuracy.to_json()},
            {"confusion", {{"rate", rate.to_json()}, {"loss", loss.to_json()}, {"joint", joint.to_json()}}},
            {"model", model}};
  if (has_reconstruction) {
    json per = json::array();
    for (const auto& q : quality) {
      per.push_back({{"rate_kbps", q.state.rate_kbps},
                     {"loss_percent", q.state.loss_percent},
                     {"samples", q.samples},
                     {"degraded_psnr", number(q.degraded_psnr)},
                     {"reconstructed_psnr", number(q.reconstructed_psnr)},
                     {"wrong_label_psnr", number(q.wrong_label_psnr)}});
    }
    j["reconstruction"] = {{"degraded_psnr", number(degraded_psnr)},
                           {"reconstructed_psnr", number(reconstructed_psnr)},
                           {"wrong_label_psnr", number(wrong_label_psnr)},
                           {"per_condition", per}};
  }
  return j;
}

std::string comparison_csv(std::span<const EvalReport> reports) {
  std::ostringstream os;
  os << "model,inputs,rate_acc,loss_acc,joint_acc,train_joint_acc\n";
  char buf[160];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%.17g\n", r.accuracy.rate, r.accuracy.loss,
                  r.accuracy.joint, r.train_accuracy.joint);
    os << r.model_kind << ',' << r.inputs << buf;
  }
  return os.str();
}

std::string comparison_table(std::span<const EvalReport> reports) {
  std::ostringstream os;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-14s %-18s %9s %9s %9s %11s\n", "model", "inputs", "rate", "loss",
                "joint", "train joint");
  os << buf;
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%-14s %-18s %9.4f %9.4f %9.4f %11.4f\n", r.model_kind.c_str(),
                  r.inputs.c_str(), r.accuracy.rate, r.accuracy.loss, r.accuracy.joint,
                  r.train_accuracy.joint);
    os << buf;
  }
  return os.str();
}

std::vector<EvalReport> evaluate(std::span<const fs::path> checkpoints, const fs::path& corpus_dir,
                                 const fs::path& report_dir, const EvalOptions& options) {
  if (checkpoints.empty()) throw std::invalid_argument("evaluate: no checkpoints given");
  if (options.batch_size == 0) throw std::invalid_argument("evaluate: batch size must be >= 1");
  std::vector<AnyModel> models;
  for (const auto& p : checkpoints) models.push_back(load_model(p));

  const corpus::Dataset data(corpus_dir, options.split);
  const corpus::Dataset train(corpus_dir, corpus::Split::Train);
  for (std::size_t i = 0; i < models.size(); ++i) check_compatible(models[i], data.manifest(), checkpoints[i]);

  std::error_code ec;
  fs::create_directories(report_dir / "samples", ec);
  if (ec) throw IoError("cannot create " + report_dir.string() + ": " + ec.message());

  std::vector<EvalReport> reports;
  for (const auto& m : models) {
    const ClassSets& c = m.classes();
    EvalReport r;
    r.model_kind = m.kind;
    r.inputs = m.gan ? "received" : "original+received";
    r.split = options.split;
    r.model = m.metadata();
    const Tally t = classify(m, data, options.batch_size);
    r.rate = confusion(t.rate_pred, t.rate_true, rate_labels(c));
    r.loss = confusion(t.loss_pred, t.loss_true, loss_labels(c));
    r.joint = confusion(t.cond_pred, t.cond_true, condition_labels(c));
    r.accuracy = t.accuracy();
    r.train_accuracy = options.split == corpus::Split::Train
                           ? r.accuracy
                           : classify(m, train, options.batch_size).accuracy();
    if (m.gan) reconstruction_quality(*m.gan, data, options, report_dir / "samples", r);
    reports.push_back(std::move(r));
  }

  json all = {{"version", kReportVersion},
              {"corpus_emulator_hash", data.manifest().emulator_hash},
              {"split", corpus::split_name(options.split)},
              {"models", json::array()}};
  std::vector<std::string> seen;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    all["models"].push_back(reports[i].to_json());
    std::string prefix;
    if (i > 0) {
      prefix = reports[i].model_kind + "_";
      if (std::count(seen.begin(), seen.end(), reports[i].model_kind) > 0) {
        prefix = reports[i].model_kind + std::to_string(i) + "_";
      }
    }
    seen.push_back(reports[i].model_kind);
    write_confusions(report_dir, prefix, reports[i]);
  }
  model::write_text_file(report_dir / "report.json", all.dump(2) + "\n");
  model::write_text_file(report_dir / "comparison.csv", comparison_csv(reports));
  return reports;
}

}  // namespace vqos::eval
