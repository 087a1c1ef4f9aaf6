#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "doctest.h"
#include "vqos/corpus.hpp"
#include "vqos/rng.hpp"
#include "test_util.hpp"

using namespace vqos;
namespace fs = std::filesystem;

namespace {

using testutil::slurp;
using testutil::TempDir;

corpus::CorpusConfig small_config(const fs::path& dir, std::size_t frames) {
  corpus::CorpusConfig cfg;
  cfg.out_dir = dir;
  cfg.frames = frames;
  cfg.width = 16;
  cfg.height = 16;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_SUITE("frame io") {
  TEST_CASE("PGM round trip is bit exact on the 8-bit grid") {
    Rng rng(1);
    Frame f(7, 5);
    for (auto& p : f.pixels) p = from_byte(static_cast<std::uint8_t>(rng.below(256)));
    CHECK(decode_pnm(encode_pnm(f)) == f);
    Frame c(4, 3, 3);
    for (auto& p : c.pixels) p = from_byte(static_cast<std::uint8_t>(rng.below(256)));
    CHECK(decode_pnm(encode_pnm(c)) == c);
  }

  TEST_CASE("rounding is floor(p*255 + 0.5)") {
    CHECK(to_byte(0.0) == 0);
    CHECK(to_byte(1.0) == 255);
    CHECK(to_byte(0.5) == 128);
    CHECK(to_byte(2.0 / 510.0) == 1);
  }

  TEST_CASE("malformed images are rejected") {
    std::vector<std::uint8_t> junk{'P', '5', '\n', '2', ' ', '2', '\n', '2', '5', '5', '\n', 1};
    CHECK_THROWS_AS(decode_pnm(junk), FormatError);
    Frame bad(2, 2, 1, 1.5);
    CHECK_THROWS(validate_frame(bad));
  }
}

TEST_SUITE("labels") {
  TEST_CASE("default class sets and sorted one-hot positions") {
    ClassSets c;
    CHECK(c.rates() == std::vector<int>{1200, 1600});
    CHECK(c.losses() == std::vector<double>{0.05, 0.10, 0.25});
    CHECK(c.rate_index(1600) == 1);
    CHECK(c.loss_index(0.25) == 2);
    CHECK(c.loss_index(0.1) == 1);
    CHECK_THROWS_AS(c.rate_index(1000), LabelError);
    ClassSets shuffled({1600, 1200}, {0.25, 0.05, 0.10});
    CHECK(shuffled == c);
  }

  TEST_CASE("one-hot for (1600, 0.25)") {
    ClassSets c;
    std::vector<std::size_t> r{c.rate_index(1600)}, l{c.loss_index(0.25)};
    auto rt = corpus::one_hot(r, c.num_rates());
    auto lt = corpus::one_hot(l, c.num_losses());
    CHECK(std::vector<double>(rt.data().begin(), rt.data().end()) == std::vector<double>{0, 1});
    CHECK(std::vector<double>(lt.data().begin(), lt.data().end()) == std::vector<double>{0, 0, 1});
  }

  TEST_CASE("list parsing") {
    CHECK(parse_int_list("1200,1600") == std::vector<int>{1200, 1600});
    CHECK(parse_double_list("0.05, 0.1") == std::vector<double>{0.05, 0.1});
    CHECK_THROWS(parse_int_list("12x"));
  }
}

TEST_SUITE("gen_video") {
  TEST_CASE("same seed gives identical clips for every motif") {
    for (auto m : corpus::kAllMotifs) {
      auto a = corpus::gen_video(9, 5, 32, 24, m);
      auto b = corpus::gen_video(9, 5, 32, 24, m);
      CHECK(a == b);
      for (const auto& f : a) {
        CHECK(f.width == 32);
        CHECK(f.height == 24);
        for (double p : f.pixels) CHECK(from_byte(to_byte(p)) == p);
      }
    }
  }

  TEST_CASE("single frame clip") {
    auto v = corpus::gen_video(1, 1, 16, 16, corpus::Motif::CheckerDrift);
    REQUIRE(v.size() == 1);
    CHECK_NOTHROW(validate_frame(v[0]));
  }

  TEST_CASE("unknown motif is rejected") {
    CHECK_THROWS(corpus::parse_motif("spiral"));
    CHECK(corpus::parse_motif("moving-disc") == corpus::Motif::MovingDisc);
  }

  TEST_CASE("moving rectangle changes at most 2 * perimeter * speed pixels per step") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto track = corpus::rectangle_track(seed, 64, 48);
      const std::size_t bound = 2 * (2 * (track.rect_w + track.rect_h)) * track.speed;
      auto v = corpus::gen_video(seed, 12, 64, 48, corpus::Motif::MovingRectangle);
      for (std::size_t t = 0; t + 1 < v.size(); ++t) {
        std::size_t diff = 0;
        for (std::size_t i = 0; i < v[t].size(); ++i) diff += v[t].pixels[i] != v[t + 1].pixels[i];
        CHECK(diff <= bound);
        CHECK(diff > 0);
      }
    }
  }
}

TEST_SUITE("build_corpus") {
  TEST_CASE("100 frames x 6 conditions, verified, reproducible") {
    TempDir a("corpus_a"), b("corpus_b");
    auto m = corpus::build_corpus(small_config(a.path, 100));
    CHECK(m.records.size() == 600);
    std::size_t degraded_files = 0;
    for (const auto& e : fs::directory_iterator(a.path / "degraded")) degraded_files += e.is_regular_file();
    CHECK(degraded_files == 600);

    auto loaded = corpus::load_manifest(a.path);
    CHECK(loaded.records.size() == 600);
    CHECK(loaded.classes == ClassSets{});
    CHECK(loaded.emulator_hash == m.emulator_hash);

    auto rep = corpus::verify_corpus(a.path);
    CHECK(rep.ok);

    // Split is per frame and each condition sits at 80/20 within one record.
    std::set<std::uint32_t> train, test;
    for (const auto& r : m.records) (r.split == corpus::Split::Train ? train : test).insert(r.frame_id);
    for (auto id : train) CHECK(test.count(id) == 0);
    CHECK(train.size() == 80);
    for (std::size_t c = 0; c < 6; ++c) {
      std::size_t n_train = 0, n = 0;
      for (const auto& r : m.records) {
        if (m.classes.condition_index(r.state) != c) continue;
        ++n;
        n_train += r.split == corpus::Split::Train;
      }
      CHECK(std::abs(static_cast<double>(n_train) - 0.8 * n) <= 1.0);
    }

    corpus::build_corpus(small_config(b.path, 100));
    CHECK(slurp(a.path / corpus::kManifestName) == slurp(b.path / corpus::kManifestName));
    for (const auto& r : m.records) {
      CHECK(slurp(a.path / r.degraded) == slurp(b.path / r.degraded));
    }
    CHECK(slurp(a.path / m.records[0].original) == slurp(b.path / m.records[0].original));
  }

  TEST_CASE("degraded frames differ from their originals") {
    TempDir d("corpus_diff");
    auto m = corpus::build_corpus(small_config(d.path, 10));
    for (const auto& r : m.records) {
      CHECK(read_pnm(d.path / r.degraded) != read_pnm(d.path / r.original));
    }
  }

  TEST_CASE("missing manifest or file is diagnosed") {
    TempDir d("corpus_missing");
    CHECK_THROWS_AS(corpus::load_manifest(d.path), corpus::CorpusError);
    CHECK_FALSE(corpus::verify_corpus(d.path).ok);
    auto m = corpus::build_corpus(small_config(d.path, 5));
    fs::remove(d.path / m.records[3].degraded);
    auto rep = corpus::verify_corpus(d.path);
    CHECK_FALSE(rep.ok);
    REQUIRE_FALSE(rep.problems.empty());
    CHECK(rep.problems[0].find(m.records[3].degraded) != std::string::npos);
    const auto split = m.records[3].split;
    try {
      corpus::Dataset ds(d.path, split);
      FAIL("expected a missing-file error");
    } catch (const corpus::CorpusError& e) {
      CHECK(std::string(e.what()).find(m.records[3].degraded) != std::string::npos);
    }
  }
}

TEST_SUITE("batches") {
  TEST_CASE("epoch shuffles visit every record once") {
    TempDir d("corpus_batches");
    corpus::build_corpus(small_config(d.path, 20));
    corpus::Dataset ds(d.path, corpus::Split::Train);
    REQUIRE(ds.size() == 16 * 6);

    auto whole = ds.batches(1000, 1);
    REQUIRE(whole.size() == 1);
    CHECK(whole[0].size() == ds.size());
    CHECK(whole[0].received.shape() == Shape{ds.size(), 1, 16, 16});

    auto collect = [](const std::vector<corpus::Batch>& bs) {
      std::vector<std::size_t> ids;
      for (const auto& b : bs) ids.insert(ids.end(), b.records.begin(), b.records.end());
      return ids;
    };
    auto e1 = collect(ds.batches(7, 1));
    auto e2 = collect(ds.batches(7, 2));
    CHECK(e1 != e2);
    CHECK(e1 == collect(ds.batches(7, 1)));
    std::sort(e1.begin(), e1.end());
    std::sort(e2.begin(), e2.end());
    CHECK(e1 == e2);
    CHECK(std::adjacent_find(e1.begin(), e1.end()) == e1.end());

    for (const auto& b : ds.batches(10, 3)) {
      for (double v : b.received.data()) CHECK((v >= 0.0 && v <= 1.0));
      for (std::size_t i = 0; i < b.size(); ++i) {
        const auto& r = ds.manifest().records[b.records[i]];
        CHECK(b.rate_idx[i] == ds.manifest().classes.rate_index(r.state.rate_kbps));
        CHECK(b.loss_idx[i] == ds.manifest().classes.loss_index(r.state.loss_percent));
      }
    }
  }

  TEST_CASE("random_flips mirrors both images alike and keeps labels") {
    TempDir d("corpus_flips");
    corpus::build_corpus(small_config(d.path, 5));
    corpus::Dataset ds(d.path, corpus::Split::Train);
    const auto plain = ds.ordered_batches(64).front();
    auto flipped = plain;
    flipped.received = Tensor::from(plain.received.shape(),
                                    std::vector<double>(plain.received.data().begin(),
                                                        plain.received.data().end()));
    flipped.original = Tensor::from(plain.original.shape(),
                                    std::vector<double>(plain.original.data().begin(),
                                                        plain.original.data().end()));
    corpus::random_flips(flipped, 9);
    CHECK(flipped.rate_idx == plain.rate_idx);
    CHECK(flipped.loss_idx == plain.loss_idx);
    CHECK(flipped.records == plain.records);
    const std::size_t w = 16, px = w * w;
    std::set<int> modes;
    for (std::size_t i = 0; i < plain.size(); ++i) {
      // Identify the mode from the original, then require the received
      // frame to match under the same mapping.
      int found = -1;
      for (int m = 0; m < 4 && found < 0; ++m) {
        bool ok = true;
        for (std::size_t y = 0; y < w && ok; ++y) {
          for (std::size_t x = 0; x < w && ok; ++x) {
            const std::size_t sy = (m & 1) ? w - 1 - y : y, sx = (m & 2) ? w - 1 - x : x;
            ok = flipped.original.data()[i * px + y * w + x] == plain.original.data()[i * px + sy * w + sx] &&
                 flipped.received.data()[i * px + y * w + x] == plain.received.data()[i * px + sy * w + sx];
          }
        }
        if (ok) found = m;
      }
      CHECK(found >= 0);
      modes.insert(found);
    }
    CHECK(modes.size() > 1);

    auto again = plain;
    again.received = Tensor::from(plain.received.shape(),
                                  std::vector<double>(plain.received.data().begin(),
                                                      plain.received.data().end()));
    again.original = Tensor::from(plain.original.shape(),
                                  std::vector<double>(plain.original.data().begin(),
                                                      plain.original.data().end()));
    corpus::random_flips(again, 9);
    CHECK(std::equal(again.received.data().begin(), again.received.data().end(),
                     flipped.received.data().begin()));
  }
}
