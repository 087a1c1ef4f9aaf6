#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"
#include "vqos/baseline.hpp"
#include "vqos/checkpoint.hpp"
#include "vqos/eval.hpp"
#include "vqos/model.hpp"
#include "vqos/quality.hpp"

using namespace vqos;
namespace fs = std::filesystem;
using testutil::slurp;
using testutil::TempDir;

namespace {

model::GanArch tiny_arch() {
  model::GanArch a;
  a.width = 16;
  a.height = 16;
  a.latent_dim = 8;
  a.g_widths = {4, 4, 4};
  a.d_widths = {4, 4, 4, 4};
  return a;
}

corpus::CorpusConfig tiny_corpus(const fs::path& dir) {
  corpus::CorpusConfig c;
  c.out_dir = dir;
  c.frames = 10;
  c.width = 16;
  c.height = 16;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_SUITE("confusion") {
  TEST_CASE("all correct gives a diagonal matrix") {
    const std::vector<std::size_t> t{0, 1, 2, 2, 1, 0, 0};
    const auto m = eval::confusion(t, t, {"a", "b", "c"});
    CHECK(m.total() == t.size());
    CHECK(m.correct() == t.size());
    CHECK(m.accuracy() == 1.0);
    CHECK(m.counts == std::vector<std::vector<std::size_t>>{{3, 0, 0}, {0, 2, 0}, {0, 0, 2}});
  }

  TEST_CASE("a constant prediction fills a single column") {
    const std::vector<std::size_t> t{0, 1, 2, 2, 1};
    const std::vector<std::size_t> p(t.size(), 1);
    const auto m = eval::confusion(p, t, {"a", "b", "c"});
    for (std::size_t r = 0; r < 3; ++r) {
      CHECK(m.counts[r][0] == 0);
      CHECK(m.counts[r][2] == 0);
    }
    CHECK(m.counts[0][1] + m.counts[1][1] + m.counts[2][1] == t.size());
  }

  TEST_CASE("random 20-sample cases match a brute-force tally") {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<std::size_t> p(20), t(20);
      for (auto& v : p) v = rng.below(3);
      for (auto& v : t) v = rng.below(3);
      const auto m = eval::confusion(p, t, {"x", "y", "z"});
      std::size_t streaming = 0;
      for (std::size_t i = 0; i < 20; ++i) streaming += p[i] == t[i];
      for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = 0; b < 3; ++b) {
          std::size_t n = 0;
          for (std::size_t i = 0; i < 20; ++i) n += t[i] == a && p[i] == b;
          CHECK(m.counts[a][b] == n);
        }
      }
      CHECK(m.total() == 20);
      CHECK(m.correct() == streaming);
      CHECK(m.accuracy() == static_cast<double>(streaming) / 20.0);
    }
  }

  TEST_CASE("value form maps values onto the axis and rejects unknown ones") {
    const std::vector<double> axis{0.05, 0.1, 0.25};
    const std::vector<double> t{0.05, 0.25, 0.1}, p{0.05, 0.1, 0.1};
    const auto m = eval::confusion(p, t, axis);
    CHECK(m.labels == std::vector<std::string>{"0.05", "0.1", "0.25"});
    CHECK(m.counts[2][1] == 1);
    CHECK(m.correct() == 2);
    const std::vector<double> bad{0.05, 0.3, 0.1};
    CHECK_THROWS_AS(eval::confusion(bad, t, axis), LabelError);
    CHECK_THROWS_AS(eval::confusion(std::vector<std::size_t>{0, 3}, std::vector<std::size_t>{0, 1},
                                    {"a", "b", "c"}),
                    LabelError);
    CHECK_THROWS_AS(eval::confusion(std::vector<std::size_t>{0}, std::vector<std::size_t>{0, 1},
                                    {"a", "b"}),
                    ShapeError);
  }

  TEST_CASE("csv and table render every count") {
    const auto m = eval::confusion(std::vector<std::size_t>{0, 1, 1}, std::vector<std::size_t>{0, 0, 1},
                                   {"1200", "1600"});
    CHECK(m.to_csv() == "true\\pred,1200,1600\n1200,1,1\n1600,0,1\n");
    const auto table = m.to_table("rate");
    CHECK(table.find("accuracy 0.6667") != std::string::npos);
    CHECK(table.find("1600") != std::string::npos);
  }
}

TEST_SUITE("psnr") {
  TEST_CASE("closed forms") {
    Frame a(4, 4, 1, 0.3);
    CHECK(psnr(a, a) == kPsnrIdentical);
    CHECK(std::isinf(psnr(a, a)));
    Frame zero(8, 8, 1, 0.0), half(8, 8, 1, 0.5);
    CHECK(psnr(zero, half) == doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-12));
    CHECK(psnr(zero, half) == doctest::Approx(6.0206).epsilon(1e-5));
    Frame tenth(8, 8, 1, 0.1);
    CHECK(psnr(zero, tenth) == doctest::Approx(20.0).epsilon(1e-12));
  }

  TEST_CASE("symmetric, and lower under added noise") {
    Rng rng(8);
    Frame a(16, 16);
    for (auto& p : a.pixels) p = rng.uniform(0.2, 0.8);
    Frame b = a, c = a;
    for (auto& p : b.pixels) p += rng.uniform(-0.02, 0.02);
    for (auto& p : c.pixels) p += rng.uniform(-0.1, 0.1);
    CHECK(psnr(a, b) == psnr(b, a));
    CHECK(psnr(a, b) > psnr(a, c));
    CHECK_THROWS_AS(psnr(a, Frame(8, 8)), ShapeError);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("encode and decode round-trip names, shapes, metadata and f32 values") {
    Rng rng(2);
    Checkpoint c;
    c.metadata = {{"model_kind", "test"}, {"x", 3}};
    c.tensors.push_back({"w", oracle::random_tensor({2, 3, 1}, rng)});
    c.tensors.push_back({"b", oracle::random_tensor({4}, rng)});
    const auto bytes = encode_checkpoint(c);
    const auto back = decode_checkpoint(bytes);
    CHECK(back.metadata == c.metadata);
    REQUIRE(back.tensors.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(back.tensors[i].name == c.tensors[i].name);
      CHECK(back.tensors[i].tensor.shape() == c.tensors[i].tensor.shape());
      for (std::size_t k = 0; k < c.tensors[i].tensor.numel(); ++k) {
        CHECK(back.tensors[i].tensor.data()[k] ==
              static_cast<double>(static_cast<float>(c.tensors[i].tensor.data()[k])));
      }
    }
    CHECK(encode_checkpoint(back) == bytes);
  }

  TEST_CASE("any flipped byte is detected") {
    Rng rng(3);
    Checkpoint c;
    c.metadata = {{"k", 1}};
    c.tensors.push_back({"w", oracle::random_tensor({3, 3}, rng)});
    const auto bytes = encode_checkpoint(c);
    for (std::size_t i = 0; i < bytes.size(); i += 5) {
      auto bad = bytes;
      bad[i] ^= 0x10;
      CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
    }
    auto cut = bytes;
    cut.resize(bytes.size() / 2);
    CHECK_THROWS_AS(decode_checkpoint(cut), CheckpointError);
  }

  TEST_CASE("assign_parameters rejects missing names and wrong shapes") {
    Checkpoint c;
    c.tensors.push_back({"a", Tensor::zeros({2})});
    std::vector<NamedTensor> ok{{"a", Tensor::zeros({2}, true)}};
    CHECK_NOTHROW(assign_parameters(c, ok));
    std::vector<NamedTensor> shape{{"a", Tensor::zeros({3}, true)}};
    CHECK_THROWS_AS(assign_parameters(c, shape), CheckpointError);
    std::vector<NamedTensor> name{{"b", Tensor::zeros({2}, true)}};
    CHECK_THROWS_AS(assign_parameters(c, name), CheckpointError);
  }

  TEST_CASE("missing file is an error") {
    CHECK_THROWS(load_checkpoint("/nonexistent/dir/model.vqos"));
  }
}

TEST_SUITE("evaluate") {
  TEST_CASE("reports, csv files and triptychs for both model kinds, deterministically") {
    TempDir d("eval");
    const auto man = corpus::build_corpus(tiny_corpus(d.path / "corpus"));
    model::Gan gan(tiny_arch(), man.classes, 1);
    baseline::PairedCNN net(tiny_arch(), man.classes, 2);
    save_checkpoint(d.path / "gan.vqos", gan.to_checkpoint());
    save_checkpoint(d.path / "base.vqos", net.to_checkpoint());
    const std::vector<fs::path> ckpts{d.path / "gan.vqos", d.path / "base.vqos"};

    const auto reports = eval::evaluate(ckpts, d.path / "corpus", d.path / "r1");
    REQUIRE(reports.size() == 2);
    for (const auto& r : reports) {
      CHECK(r.accuracy.samples == man.indices(corpus::Split::Test).size());
      CHECK(r.rate.total() == r.accuracy.samples);
      CHECK(r.joint.total() == r.accuracy.samples);
      CHECK(r.accuracy.joint <= std::min(r.accuracy.rate, r.accuracy.loss));
      CHECK(r.rate.accuracy() == r.accuracy.rate);
      CHECK(r.loss.accuracy() == r.accuracy.loss);
      CHECK(r.joint.accuracy() == r.accuracy.joint);
      CHECK(r.train_accuracy.samples == man.indices(corpus::Split::Train).size());
    }
    CHECK(reports[0].model_kind == model::kGanKind);
    CHECK(reports[0].inputs == "received");
    CHECK(reports[0].has_reconstruction);
    CHECK(reports[0].quality.size() == 6);
    CHECK_FALSE(reports[1].has_reconstruction);

    for (const char* f : {"report.json", "comparison.csv", "confusion_rate.csv", "confusion_loss.csv",
                          "confusion_joint.csv", "baseline_cnn_confusion_rate.csv"}) {
      CHECK(fs::exists(d.path / "r1" / f));
    }
    std::size_t samples = 0;
    for (const auto& e : fs::directory_iterator(d.path / "r1" / "samples")) {
      const Frame t = read_pnm(e.path());
      CHECK(t.width == 48);
      CHECK(t.height == 16);
      ++samples;
    }
    CHECK(samples == 6);
    const auto csv = slurp(d.path / "r1" / "comparison.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(csv.rfind("model,inputs,rate_acc,loss_acc,joint_acc,train_joint_acc\n", 0) == 0);

    eval::evaluate(ckpts, d.path / "corpus", d.path / "r2");
    for (const char* f : {"report.json", "comparison.csv", "confusion_rate.csv"}) {
      CHECK(slurp(d.path / "r1" / f) == slurp(d.path / "r2" / f));
    }
  }

  TEST_CASE("class sets that differ from the corpus are rejected") {
    TempDir d("eval_classes");
    corpus::build_corpus(tiny_corpus(d.path / "corpus"));
    auto arch = tiny_arch();
    arch.num_losses = 2;
    model::Gan gan(arch, ClassSets({1200, 1600}, {0.05, 0.25}), 1);
    save_checkpoint(d.path / "gan.vqos", gan.to_checkpoint());
    const std::vector<fs::path> ckpts{d.path / "gan.vqos"};
    CHECK_THROWS_AS(eval::evaluate(ckpts, d.path / "corpus", d.path / "r"), LabelError);
  }
}
