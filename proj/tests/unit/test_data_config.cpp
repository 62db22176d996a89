#include <doctest.h>

#include <fstream>

#include "config.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "helpers.hpp"
#include "io.hpp"

using namespace soiguard;

namespace {

void put_be32(std::string& s, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) s.push_back(static_cast<char>((v >> shift) & 0xff));
}

std::string idx_images(std::uint32_t magic, std::uint32_t n, std::uint32_t h, std::uint32_t w) {
  std::string s;
  put_be32(s, magic);
  put_be32(s, n);
  put_be32(s, h);
  put_be32(s, w);
  for (std::uint32_t i = 0; i < n * h * w; ++i) s.push_back(static_cast<char>(i % 256));
  return s;
}

std::string idx_labels(std::uint32_t n) {
  std::string s;
  put_be32(s, 0x801);
  put_be32(s, n);
  for (std::uint32_t i = 0; i < n; ++i) s.push_back(static_cast<char>(i % 10));
  return s;
}

}  // namespace

TEST_CASE("IDX parsing: shapes, scaling and format errors") {
  const auto dir = testutil::temp_dir("idx");
  write_file_atomic(dir / "img", idx_images(0x803, 3, 4, 5));
  const auto t = read_idx_images(dir / "img");
  CHECK(t.shape == Shape{3, 1, 4, 5});
  CHECK(t.data[1] == 1.0 / 255.0);
  CHECK(t.data[59] == 59.0 / 255.0);
  write_file_atomic(dir / "lbl", idx_labels(3));
  CHECK(read_idx_labels(dir / "lbl") == std::vector<int>{0, 1, 2});

  write_file_atomic(dir / "bad", idx_images(0x804, 3, 4, 5));
  try {
    read_idx_images(dir / "bad");
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("bad") != std::string::npos);
  }
  auto truncated = idx_images(0x803, 3, 4, 5);
  truncated.resize(truncated.size() - 1);
  write_file_atomic(dir / "short", truncated);
  CHECK_THROWS_AS(read_idx_images(dir / "short"), FormatError);
  CHECK_THROWS_AS(read_idx_labels(dir / "img"), FormatError);
}

TEST_CASE("MNIST-style directory loading and count mismatch") {
  const auto dir = testutil::temp_dir("mnistdir");
  write_file_atomic(dir / "train-images-idx3-ubyte", idx_images(0x803, 6, 28, 28));
  write_file_atomic(dir / "train-labels-idx1-ubyte", idx_labels(6));
  write_file_atomic(dir / "t10k-images-idx3-ubyte", idx_images(0x803, 4, 28, 28));
  write_file_atomic(dir / "t10k-labels-idx1-ubyte", idx_labels(3));
  DatasetOptions opt;
  opt.dir = dir;
  CHECK_THROWS_AS(load_dataset(opt), FormatError);
  write_file_atomic(dir / "t10k-labels-idx1-ubyte", idx_labels(4));
  const auto d = load_dataset(opt);
  CHECK(d.train.size() == 6);
  CHECK(d.test.images.shape == Shape{4, 1, 28, 28});
  opt.n_train = 2;
  CHECK(load_dataset(opt).train.size() == 2);
  opt.dir = dir / "nope";
  CHECK_THROWS(load_dataset(opt));
}

TEST_CASE("synthetic data is seed-deterministic") {
  SyntheticOptions so;
  so.classes = 3;
  const auto a = make_synthetic(so, 5, false), b = make_synthetic(so, 5, false);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK(make_synthetic(so, 6, false).images != a.images);
  for (double v : a.images.data) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("config parsing, defaults, strict keys and hashing") {
  const nlohmann::json j = {
      {"dataset", {{"name", "synthetic"}}},
      {"seeds", {1, 2}},
      {"phase1", {{"epochs", 2}, {"attack", {{"family", "pgd"}, {"eps", "32/255"}, {"alpha", "8/255"}, {"n", 10}}}}},
      {"output_dir", "out"}};
  const auto cfg = config_from_json(j, "/base");
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2});
  CHECK(cfg.phase1.attack.eps.value == 32.0 / 255.0);
  CHECK(cfg.phase1.lambda_a == 0.6);
  CHECK(cfg.phase2.attack.eps.text == "4/255");
  CHECK(cfg.lut.attack.alpha.text == "4/255");
  CHECK(cfg.output_dir == std::filesystem::path("/base/out"));

  auto moved = j;
  moved["output_dir"] = "elsewhere";
  CHECK(config_hash(config_from_json(moved, "/base")) == config_hash(cfg));
  auto changed = j;
  changed["phase1"]["epochs"] = 3;
  CHECK(config_hash(config_from_json(changed, "/base")) != config_hash(cfg));
  CHECK(config_hash(config_from_json(config_to_json(cfg), "/base")) == config_hash(cfg));

  auto unknown = j;
  unknown["phase1"]["lamda_a"] = 0.5;
  CHECK_THROWS_AS(config_from_json(unknown), ConfigError);
  auto no_dir = j;
  no_dir["dataset"] = {{"name", "mnist"}};
  CHECK_THROWS_AS(config_from_json(no_dir), ConfigError);
  auto no_seeds = j;
  no_seeds["seeds"] = nlohmann::json::array();
  CHECK_THROWS_AS(config_from_json(no_seeds), ConfigError);
}

TEST_CASE("shipped configs parse") {
  for (const char* name : {"mnist.json", "synthetic_minimal.json"}) {
    CHECK_NOTHROW(load_config(std::filesystem::path(SOIGUARD_SOURCE_DIR) / "configs" / name));
  }
}

TEST_CASE("hash helpers") {
  CHECK(git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(git_blob_sha1("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(fnv1a64_hex("") == "cbf29ce484222325");
  CHECK(fnv1a64_hex("a") == "af63dc4c8601ec8c");
}
