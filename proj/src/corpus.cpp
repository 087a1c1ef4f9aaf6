#include "vqos/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>

#include "json.hpp"
#include "vqos/rng.hpp"

namespace vqos::corpus {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kVideoTag = 0x5649444FULL;  // "VIDO"
constexpr std::uint64_t kSplitTag = 0x53504C54ULL;  // "SPLT"

struct Motion {
  double x, y;
  int vx, vy;

  // Moves by (vx, vy); a component that would leave [0, limit] is reflected.
  void step(double limit_x, double limit_y) {
    if (x + vx < 0 || x + vx > limit_x) vx = -vx;
    if (y + vy < 0 || y + vy > limit_y) vy = -vy;
    x += vx;
    y += vy;
  }
};

int nonzero_velocity(Rng& rng, int max_speed) {
  const int v = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_speed)));
  return rng.bernoulli(0.5) ? v : -v;
}

// Shared scene description; parameters are drawn in a fixed order so that
// rectangle_track() can reproduce them.
struct Scene {
  double c0, gx, gy;        // background plane
  double fg;                // object intensity
  std::size_t obj_w, obj_h; // rectangle size, or disc diameter
  Motion motion;
  int speed;
  // gradient-noise
  double wave_amp, fx, fy, phase, dphase;
  // checker-drift
  std::size_t cell;
  double ink0, ink1;
  int cvx, cvy;
};

Scene draw_scene(Rng& rng, std::size_t width, std::size_t height) {
  Scene s{};
  const double scale = static_cast<double>(std::min(width, height)) / 64.0;
  s.c0 = rng.uniform(0.25, 0.75);
  s.gx = rng.uniform(-0.3, 0.3);
  s.gy = rng.uniform(-0.3, 0.3);
  s.fg = s.c0 > 0.5 ? rng.uniform(0.05, 0.3) : rng.uniform(0.7, 0.95);
  s.obj_w = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(rng.uniform(12, 28) * scale)));
  s.obj_h = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(rng.uniform(12, 28) * scale)));
  s.obj_w = std::min(s.obj_w, width);
  s.obj_h = std::min(s.obj_h, height);
  s.speed = 1 + static_cast<int>(rng.below(2));
  s.motion.vx = nonzero_velocity(rng, s.speed);
  s.motion.vy = nonzero_velocity(rng, s.speed);
  s.motion.x = std::floor(rng.uniform(0.0, static_cast<double>(width - s.obj_w) + 1.0));
  s.motion.y = std::floor(rng.uniform(0.0, static_cast<double>(height - s.obj_h) + 1.0));
  s.wave_amp = rng.uniform(0.1, 0.25);
  s.fx = 1.0 + static_cast<double>(rng.below(3));
  s.fy = static_cast<double>(rng.below(3));
  s.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  s.dphase = rng.uniform(0.08, 0.2);
  s.cell = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround((6 + rng.below(9)) * scale)));
  s.ink0 = rng.uniform(0.1, 0.4);
  s.ink1 = rng.uniform(0.6, 0.9);
  s.cvx = static_cast<int>(rng.below(3)) - 1;
  s.cvy = s.cvx == 0 ? (rng.bernoulli(0.5) ? 1 : -1) : static_cast<int>(rng.below(3)) - 1;
  return s;
}

double background(const Scene& s, std::size_t x, std::size_t y, std::size_t w, std::size_t h) {
  const double u = w > 1 ? static_cast<double>(x) / static_cast<double>(w - 1) - 0.5 : 0.0;
  const double v = h > 1 ? static_cast<double>(y) / static_cast<double>(h - 1) - 0.5 : 0.0;
  return s.c0 + s.gx * u + s.gy * v;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}

}  // namespace

Motif parse_motif(const std::string& name) {
  if (name == "moving-rectangle") return Motif::MovingRectangle;
  if (name == "moving-disc") return Motif::MovingDisc;
  if (name == "gradient-noise") return Motif::GradientNoise;
  if (name == "checker-drift") return Motif::CheckerDrift;
  throw std::invalid_argument("unknown motif '" + name +
                              "' (expected moving-rectangle, moving-disc, gradient-noise, "
                              "checker-drift)");
}

std::string motif_name(Motif m) {
  switch (m) {
    case Motif::MovingRectangle: return "moving-rectangle";
    case Motif::MovingDisc: return "moving-disc";
    case Motif::GradientNoise: return "gradient-noise";
    case Motif::CheckerDrift: return "checker-drift";
  }
  return "?";
}

RectangleTrack rectangle_track(std::uint64_t seed, std::size_t width, std::size_t height) {
  Rng rng(mix64(seed));
  const Scene s = draw_scene(rng, width, height);
  return {s.obj_w, s.obj_h, s.speed};
}

std::vector<Frame> gen_video(std::uint64_t seed, std::size_t n_frames, std::size_t width,
                             std::size_t height, Motif motif, std::size_t channels) {
  if (n_frames == 0) throw std::invalid_argument("gen_video needs at least one frame");
  if (width == 0 || height == 0 || channels == 0) {
    throw std::invalid_argument("gen_video: zero frame dimension");
  }
  Rng rng(mix64(seed));
  Scene s = draw_scene(rng, width, height);

  // Static fine texture, one field per channel.
  std::vector<double> texture(width * height * channels);
  for (auto& t : texture) t = rng.uniform(-kTextureAmplitude, kTextureAmplitude);

  std::vector<Frame> frames;
  frames.reserve(n_frames);
  const double tau = 2.0 * std::numbers::pi;
  for (std::size_t t = 0; t < n_frames; ++t) {
    Frame f(width, height, channels);
    for (std::size_t c = 0; c < channels; ++c) {
      const double tint = 0.05 * (static_cast<double>(c) - 0.5 * static_cast<double>(channels - 1));
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          double v = background(s, x, y, width, height);
          bool flat = false;
          switch (motif) {
            case Motif::MovingRectangle:
              if (x >= s.motion.x && x < s.motion.x + static_cast<double>(s.obj_w) &&
                  y >= s.motion.y && y < s.motion.y + static_cast<double>(s.obj_h)) {
                v = s.fg;
                flat = true;
              }
              break;
            case Motif::MovingDisc: {
              const double r = 0.5 * static_cast<double>(std::min(s.obj_w, s.obj_h));
              const double dx = static_cast<double>(x) + 0.5 - (s.motion.x + r);
              const double dy = static_cast<double>(y) + 0.5 - (s.motion.y + r);
              if (dx * dx + dy * dy <= r * r) {
                v = s.fg;
                flat = true;
              }
              break;
            }
            case Motif::GradientNoise:
              v += s.wave_amp * std::sin(tau * (s.fx * static_cast<double>(x) / static_cast<double>(width) +
                                                s.fy * static_cast<double>(y) / static_cast<double>(height)) +
                                         s.phase + s.dphase * static_cast<double>(t));
              break;
            case Motif::CheckerDrift: {
              const auto cell = static_cast<std::int64_t>(s.cell);
              const std::int64_t cx = floor_div(static_cast<std::int64_t>(x) - s.cvx * static_cast<std::int64_t>(t), cell);
              const std::int64_t cy = floor_div(static_cast<std::int64_t>(y) - s.cvy * static_cast<std::int64_t>(t), cell);
              v = ((cx + cy) & 1) ? s.ink1 : s.ink0;
              break;
            }
          }
          if (!flat) v += texture[(c * height + y) * width + x];
          f.at(c, y, x) = from_byte(to_byte(std::clamp(v + tint, 0.0, 1.0)));
        }
      }
    }
    frames.push_back(std::move(f));
    const double rd = static_cast<double>(std::min(s.obj_w, s.obj_h));
    if (motif == Motif::MovingRectangle) {
      s.motion.step(static_cast<double>(width - s.obj_w), static_cast<double>(height - s.obj_h));
    } else if (motif == Motif::MovingDisc) {
      s.motion.step(static_cast<double>(width) - rd, static_cast<double>(height) - rd);
    }
  }
  return frames;
}

std::string split_name(Split s) { return s == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + s + "' (expected train or test)");
}

std::vector<std::size_t> Manifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split) out.push_back(i);
  }
  return out;
}

std::string config_hash(const std::string& text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

json header_json(const Manifest& m) {
  return {{"kind", "vqos-corpus"},
          {"version", 1},
          {"classes", {{"rates_kbps", m.classes.rates()}, {"losses_percent", m.classes.losses()}}},
          {"frame", {{"width", m.width}, {"height", m.height}, {"channels", m.channels}}},
          {"emulator", m.emulator_fingerprint},
          {"emulator_hash", m.emulator_hash},
          {"generator_version", m.generator_version},
          {"seed", m.seed},
          {"train_fraction", m.train_fraction},
          {"records", m.records.size()}};
}

json record_json(const Record& r) {
  return {{"degraded", r.degraded},         {"original", r.original},
          {"rate_kbps", r.state.rate_kbps}, {"loss_percent", r.state.loss_percent},
          {"split", split_name(r.split)},   {"seed", r.seed},
          {"frame_id", r.frame_id}};
}

}  // namespace

void save_manifest(const Manifest& m, const fs::path& corpus_dir) {
  const fs::path final_path = corpus_dir / kManifestName;
  const fs::path tmp = corpus_dir / (std::string(kManifestName) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CorpusError("cannot write " + tmp.string());
    out << header_json(m).dump() << '\n';
    for (const auto& r : m.records) out << record_json(r).dump() << '\n';
    out.flush();
    if (!out) throw CorpusError("write failed: " + tmp.string());
  }
  fs::rename(tmp, final_path);
}

Manifest load_manifest(const fs::path& corpus_dir) {
  const fs::path path = corpus_dir / kManifestName;
  std::ifstream in(path);
  if (!in) throw CorpusError("no manifest at " + path.string() + " (corpus missing or incomplete)");
  Manifest m;
  std::string line;
  std::size_t line_no = 0;
  std::size_t expected = 0;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const json j = json::parse(line);
      if (line_no == 1) {
        if (j.value("kind", "") != "vqos-corpus") throw CorpusError("not a vqos corpus manifest");
        m.classes = ClassSets(j.at("classes").at("rates_kbps").get<std::vector<int>>(),
                              j.at("classes").at("losses_percent").get<std::vector<double>>());
        m.width = j.at("frame").at("width").get<std::size_t>();
        m.height = j.at("frame").at("height").get<std::size_t>();
        m.channels = j.at("frame").at("channels").get<std::size_t>();
        m.emulator_fingerprint = j.at("emulator").get<std::string>();
        m.emulator_hash = j.at("emulator_hash").get<std::string>();
        m.generator_version = j.at("generator_version").get<int>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.train_fraction = j.at("train_fraction").get<double>();
        expected = j.at("records").get<std::size_t>();
        continue;
      }
      Record r;
      r.degraded = j.at("degraded").get<std::string>();
      r.original = j.at("original").get<std::string>();
      r.state = {j.at("rate_kbps").get<int>(), j.at("loss_percent").get<double>()};
      r.split = parse_split(j.at("split").get<std::string>());
      r.seed = j.at("seed").get<std::uint64_t>();
      r.frame_id = j.at("frame_id").get<std::uint32_t>();
      if (!m.classes.contains(r.state)) {
        throw CorpusError("record label " + to_string(r.state) + " outside the class sets");
      }
      m.records.push_back(std::move(r));
    }
  } catch (const CorpusError& e) {
    throw CorpusError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
  } catch (const std::exception& e) {
    throw CorpusError(path.string() + ":" + std::to_string(line_no) + ": malformed manifest: " +
                      e.what());
  }
  if (line_no == 0) throw CorpusError(path.string() + ": empty manifest");
  if (m.records.size() != expected) {
    throw CorpusError(path.string() + ": header announces " + std::to_string(expected) +
                      " records, found " + std::to_string(m.records.size()));
  }
  return m;
}

Manifest build_corpus(const CorpusConfig& cfg) {
  if (cfg.frames == 0) throw CorpusError("corpus needs at least one frame");
  if (cfg.frames_per_video == 0) throw CorpusError("frames per video must be >= 1");
  if (!(cfg.train_fraction >= 0.0 && cfg.train_fraction <= 1.0)) {
    throw CorpusError("train fraction must be in [0,1]");
  }
  for (int r : cfg.classes.rates()) cfg.emulator.rate.quant_step(r);
  {
    // Lower rates must map to strictly coarser steps.
    std::set<std::uint16_t> steps;
    for (int r : cfg.classes.rates()) steps.insert(cfg.emulator.rate.quant_step(r));
    if (steps.size() != cfg.classes.num_rates()) {
      throw CorpusError("two data-rate classes map to the same quantization step");
    }
  }

  fs::create_directories(cfg.out_dir / "original");
  fs::create_directories(cfg.out_dir / "degraded");
  fs::remove(cfg.out_dir / kManifestName);

  Manifest m;
  m.classes = cfg.classes;
  m.width = cfg.width;
  m.height = cfg.height;
  m.channels = cfg.channels;
  m.emulator_fingerprint = cfg.emulator.fingerprint();
  m.emulator_hash = config_hash(m.emulator_fingerprint);
  m.seed = cfg.seed;
  m.train_fraction = cfg.train_fraction;

  // Frame-level split: shuffle ids, first n_train go to training.
  std::vector<std::uint32_t> order(cfg.frames);
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(derive_seed(cfg.seed, kSplitTag));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[split_rng.below(i)]);
  auto n_train = static_cast<std::size_t>(std::lround(cfg.train_fraction * static_cast<double>(cfg.frames)));
  if (cfg.frames >= 2 && cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
    n_train = std::clamp<std::size_t>(n_train, 1, cfg.frames - 1);
  }
  std::vector<Split> split_of(cfg.frames, Split::Test);
  for (std::size_t i = 0; i < n_train; ++i) split_of[order[i]] = Split::Train;

  const std::size_t videos = (cfg.frames + cfg.frames_per_video - 1) / cfg.frames_per_video;
  char name[64];
  for (std::size_t v = 0; v < videos; ++v) {
    const Motif motif = cfg.motif.value_or(kAllMotifs[v % std::size(kAllMotifs)]);
    const std::size_t first = v * cfg.frames_per_video;
    const std::size_t count = std::min(cfg.frames_per_video, cfg.frames - first);
    const auto clip = gen_video(derive_seed(cfg.seed, kVideoTag, v), count, cfg.width, cfg.height,
                                motif, cfg.channels);
    for (std::size_t k = 0; k < count; ++k) {
      const auto frame_id = static_cast<std::uint32_t>(first + k);
      std::snprintf(name, sizeof name, "original/f%05u.pgm", frame_id);
      const std::string original = name;
      write_pnm(cfg.out_dir / original, clip[k]);
      for (std::size_t c = 0; c < cfg.classes.num_conditions(); ++c) {
        const NetworkState state = cfg.classes.condition(c);
        const std::uint64_t seed = derive_seed(cfg.seed, frame_id, c + 1);
        const auto result = emu::degrade(clip[k], state, cfg.emulator, cfg.classes, seed, frame_id);
        std::snprintf(name, sizeof name, "degraded/f%05u_c%02zu.pgm", frame_id, c);
        write_pnm(cfg.out_dir / name, result.frame);
        m.records.push_back({name, original, state, split_of[frame_id], seed, frame_id});
      }
    }
  }
  save_manifest(m, cfg.out_dir);
  return m;
}

VerifyReport verify_corpus(const fs::path& corpus_dir) {
  VerifyReport rep;
  auto fail = [&](std::string msg) {
    rep.ok = false;
    rep.problems.push_back(std::move(msg));
  };
  Manifest m;
  try {
    m = load_manifest(corpus_dir);
  } catch (const std::exception& e) {
    fail(e.what());
    return rep;
  }
  std::set<std::uint32_t> train_ids, test_ids;
  std::vector<std::array<std::size_t, 2>> per_condition(m.classes.num_conditions(), {0, 0});
  for (const auto& r : m.records) {
    for (const auto& rel : {r.degraded, r.original}) {
      const fs::path p = corpus_dir / rel;
      if (!fs::exists(p)) {
        fail("missing file " + p.string());
        continue;
      }
      try {
        const Frame f = read_pnm(p);
        if (f.width != m.width || f.height != m.height || f.channels != m.channels) {
          fail("wrong frame size in " + p.string());
        }
      } catch (const std::exception& e) {
        fail(e.what());
      }
    }
    (r.split == Split::Train ? train_ids : test_ids).insert(r.frame_id);
    ++per_condition[m.classes.condition_index(r.state)][r.split == Split::Train ? 0 : 1];
  }
  for (auto id : train_ids) {
    if (test_ids.count(id)) fail("frame " + std::to_string(id) + " appears in both splits");
  }
  for (std::size_t c = 0; c < per_condition.size(); ++c) {
    const auto [train, test] = per_condition[c];
    const auto total = static_cast<double>(train + test);
    if (m.train_fraction > 0.0 && m.train_fraction < 1.0 && (train == 0 || test == 0)) {
      fail("condition " + to_string(m.classes.condition(c)) + " missing from a split");
    }
    if (std::abs(static_cast<double>(train) - m.train_fraction * total) > 1.0) {
      fail("condition " + to_string(m.classes.condition(c)) + " split ratio off by more than one record");
    }
  }
  return rep;
}

Tensor one_hot(std::span<const std::size_t> idx, std::size_t classes) {
  std::vector<double> v(idx.size() * classes, 0.0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= classes) throw LabelError("class index out of range for one-hot encoding");
    v[i * classes + idx[i]] = 1.0;
  }
  return Tensor::from({idx.size(), classes}, std::move(v));
}

void random_flips(Batch& batch, std::uint64_t seed) {
  if (batch.size() == 0) return;
  const auto& shape = batch.received.shape();
  const std::size_t c = shape[1], h = shape[2], w = shape[3], px = c * h * w;
  Rng rng(mix64(seed));
  std::vector<double> tmp(px);
  auto recv = batch.received.mutable_data();
  auto orig = batch.original.mutable_data();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto mode = rng.below(4);
    if (mode == 0) continue;
    for (auto data : {recv, orig}) {
      double* s = data.data() + i * px;
      std::copy(s, s + px, tmp.begin());
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < h; ++y) {
          const std::size_t sy = (mode & 1) ? h - 1 - y : y;
          for (std::size_t x = 0; x < w; ++x) {
            const std::size_t sx = (mode & 2) ? w - 1 - x : x;
            s[(ch * h + y) * w + x] = tmp[(ch * h + sy) * w + sx];
          }
        }
      }
    }
  }
}

Tensor stack_frames(std::span<const Frame* const> frames) {
  if (frames.empty()) throw ShapeError("cannot stack zero frames");
  const Frame& f0 = *frames[0];
  std::vector<double> data;
  data.reserve(frames.size() * f0.size());
  for (const Frame* f : frames) {
    if (!f->same_shape(f0)) throw ShapeError("cannot stack frames of different sizes");
    data.insert(data.end(), f->pixels.begin(), f->pixels.end());
  }
  return Tensor::from({frames.size(), f0.channels, f0.height, f0.width}, std::move(data));
}

Frame unstack_frame(const Tensor& images, std::size_t n) {
  if (images.rank() != 4 || n >= images.dim(0)) throw ShapeError("unstack_frame: bad index or shape");
  Frame f(images.dim(3), images.dim(2), images.dim(1));
  const auto d = images.data();
  std::copy(d.begin() + static_cast<std::ptrdiff_t>(n * f.size()),
            d.begin() + static_cast<std::ptrdiff_t>((n + 1) * f.size()), f.pixels.begin());
  return f;
}

Dataset::Dataset(const fs::path& corpus_dir, Split split)
    : manifest_(load_manifest(corpus_dir)), members_(manifest_.indices(split)) {
  auto load = [&](const std::string& rel) {
    const fs::path p = corpus_dir / rel;
    if (!fs::exists(p)) throw CorpusError("missing corpus file " + p.string());
    Frame f = read_pnm(p);
    if (f.width != manifest_.width || f.height != manifest_.height || f.channels != manifest_.channels) {
      throw CorpusError("frame size mismatch in " + p.string());
    }
    return f;
  };
  for (auto i : members_) {
    received_.push_back(load(manifest_.records[i].degraded));
    original_.push_back(load(manifest_.records[i].original));
  }
}

Batch Dataset::make_batch(std::span<const std::size_t> members) const {
  Batch b;
  std::vector<const Frame*> recv, orig;
  for (auto i : members) {
    recv.push_back(&received_.at(i));
    orig.push_back(&original_.at(i));
    const Record& r = record(i);
    b.rate_idx.push_back(manifest_.classes.rate_index(r.state.rate_kbps));
    b.loss_idx.push_back(manifest_.classes.loss_index(r.state.loss_percent));
    b.records.push_back(members_[i]);
  }
  b.received = stack_frames(recv);
  b.original = stack_frames(orig);
  return b;
}

std::vector<Batch> Dataset::batches(std::size_t batch_size, std::uint64_t epoch_seed) const {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  std::vector<std::size_t> order(size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix64(epoch_seed));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.push_back(make_batch(std::span(order).subspan(start, end - start)));
  }
  return out;
}

std::vector<Batch> Dataset::ordered_batches(std::size_t batch_size) const {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  std::vector<std::size_t> order(size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.push_back(make_batch(std::span(order).subspan(start, end - start)));
  }
  return out;
}

}  // namespace vqos::corpus
