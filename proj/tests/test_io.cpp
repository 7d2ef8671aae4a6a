#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "oracles.hpp"
#include "smart/io.hpp"
#include "smart/synthdata.hpp"

using namespace smart;
namespace fs = std::filesystem;

namespace {
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};
}  // namespace

TEST_CASE("crc32 matches the standard check value") {
  const char* s = "123456789";
  CHECK(crc32(s, 9) == 0xCBF43926u);
}

TEST_CASE("pgm round-trips quantized intensities bit-exactly") {
  TempDir dir("smart_io_pgm");
  Rng rng(1);
  Grid img(16, 20);
  for (double& v : img.v) v = std::round(rng.uniform() * 255.0) / 255.0;
  std::string path = (dir.path / "f.pgm").string();
  write_pgm(path, img);
  Grid back = read_pgm(path);
  REQUIRE(back.h == 16);
  REQUIRE(back.w == 20);
  CHECK(back.v == img.v);
}

TEST_CASE("pbm round-trips masks bit-exactly, including non-multiple-of-8 widths") {
  TempDir dir("smart_io_pbm");
  Rng rng(2);
  BinaryMask m = oracle::random_mask(rng, 11, 13);
  std::string path = (dir.path / "m.pbm").string();
  write_pbm(path, m);
  BinaryMask back = read_pbm(path);
  REQUIRE(back.h == 11);
  REQUIRE(back.w == 13);
  CHECK(back.v == m.v);
}

TEST_CASE("video clips round-trip through the dataset directory bit-exactly") {
  TempDir dir("smart_io_clip");
  Dataset ds = make_dataset(2, 1, 2, 99, 32, 32, 4);
  write_dataset(dir.path.string(), ds);
  Dataset back = read_dataset(dir.path.string());

  REQUIRE(back.labeled.size() == 2);
  REQUIRE(back.unlabeled.size() == 1);
  REQUIRE(back.test.size() == 1);

  auto check_clip = [](const VideoClip& a, const VideoClip& b) {
    REQUIRE(a.clip_id == b.clip_id);
    REQUIRE(a.frames.size() == b.frames.size());
    for (size_t i = 0; i < a.frames.size(); ++i) {
      CHECK(a.frames[i].frame_index == b.frames[i].frame_index);
      CHECK(a.frames[i].pixels.v == b.frames[i].pixels.v);
    }
    REQUIRE(a.masks.size() == b.masks.size());
    for (size_t i = 0; i < a.masks.size(); ++i) {
      CHECK(a.masks[i].first == b.masks[i].first);
      CHECK(a.masks[i].second.v == b.masks[i].second.v);
    }
    REQUIRE(a.flows.size() == b.flows.size());
    for (size_t i = 0; i < a.flows.size(); ++i) {
      CHECK(a.flows[i].forward.u.v == b.flows[i].forward.u.v);
      CHECK(a.flows[i].forward.v.v == b.flows[i].forward.v.v);
      CHECK(a.flows[i].backward.u.v == b.flows[i].backward.u.v);
      CHECK(a.flows[i].backward.v.v == b.flows[i].backward.v.v);
    }
  };
  for (size_t i = 0; i < ds.labeled.size(); ++i) check_clip(ds.labeled[i], back.labeled[i]);
  for (size_t i = 0; i < ds.test.size(); ++i) check_clip(ds.test[i], back.test[i]);
  CHECK(back.unlabeled[0].masks.empty());
}

TEST_CASE("dataset checksum is stable across regeneration") {
  TempDir a("smart_io_ck_a"), b("smart_io_ck_b");
  write_dataset(a.path.string(), make_dataset(1, 1, 1, 4242, 32, 32, 3));
  write_dataset(b.path.string(), make_dataset(1, 1, 1, 4242, 32, 32, 3));
  CHECK(dataset_checksum(a.path.string()) == dataset_checksum(b.path.string()));

  TempDir c("smart_io_ck_c");
  write_dataset(c.path.string(), make_dataset(1, 1, 1, 4243, 32, 32, 3));
  CHECK(dataset_checksum(a.path.string()) != dataset_checksum(c.path.string()));
}

TEST_CASE("config text parses key = value lines") {
  auto kv = parse_config_text("# comment\n lr = 0.001 \n\nweak.noise_sigma=0.02\n");
  REQUIRE(kv.size() == 2);
  CHECK(kv.at("lr") == "0.001");
  CHECK(kv.at("weak.noise_sigma") == "0.02");

  CHECK_THROWS(parse_config_text("not a kv line\n"));
  CHECK_THROWS(parse_config_text("= value\n"));
}

TEST_CASE("csv writer layout") {
  TempDir dir("smart_io_csv");
  std::string path = (dir.path / "t.csv").string();
  write_csv(path, {"a", "b"}, {{"1", "2"}, {"3", "4"}});
  std::ifstream in(path);
  std::string l1, l2, l3;
  std::getline(in, l1);
  std::getline(in, l2);
  std::getline(in, l3);
  CHECK(l1 == "a,b");
  CHECK(l2 == "1,2");
  CHECK(l3 == "3,4");
}

TEST_CASE("overlay and curve renderings have the right shapes") {
  Grid frame(8, 8, 0.5);
  BinaryMask pb(8, 8), gb(8, 8);
  pb.at(2, 2) = 1;
  gb.at(3, 3) = 1;
  RgbImage img = render_overlay(frame, pb, gb);
  CHECK(img.v.size() == 8 * 8 * 3);
  CHECK(img.v[(2 * 8 + 2) * 3] == 230);      // pred boundary in red
  CHECK(img.v[(3 * 8 + 3) * 3 + 1] == 200);  // gt boundary in green

  RgbImage curves = render_curves({{0.0, 1.0, 0.5}, {1.0, 0.2, 0.1}}, 60, 120);
  CHECK(curves.v.size() == 60 * 120 * 3);
  TempDir dir("smart_io_ppm");
  CHECK_NOTHROW(write_ppm((dir.path / "c.ppm").string(), curves));
}
