#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "oracles.hpp"
#include "smart/core.hpp"
#include "smart/flow.hpp"
#include "smart/synthdata.hpp"

using namespace smart;
namespace fs = std::filesystem;

namespace {
FlowField const_flow(int h, int w, double u, double v,
                     FlowDirection dir = FlowDirection::kForward) {
  return FlowField{Grid(h, w, u), Grid(h, w, v), dir};
}
}  // namespace

TEST_CASE("warp with zero flow is the identity, exactly") {
  Rng rng(1);
  Grid m = oracle::random_grid(rng, 6, 7);
  Grid out = warp(m, const_flow(6, 7, 0.0, 0.0));
  for (size_t i = 0; i < m.size(); ++i) CHECK(out.v[i] == m.v[i]);
}

TEST_CASE("warp leaves constant maps unchanged under any flow") {
  Rng rng(2);
  Grid m(5, 5, 0.73);
  FlowField f = oracle::random_flow(rng, 5, 5, 3.0);
  Grid out = warp(m, f);
  for (double v : out.v) CHECK(v == Catch::Approx(0.73).margin(1e-15));
}

TEST_CASE("warp matches the brute-force bilinear oracle") {
  SECTION("single hot pixel, unit horizontal flow") {
    Grid m(4, 4);
    m.at(1, 1) = 1.0;
    FlowField f = const_flow(4, 4, 1.0, 0.0);
    Grid got = warp(m, f);
    Grid want = oracle::warp(m, f);
    for (size_t i = 0; i < m.size(); ++i) CHECK(got.v[i] == want.v[i]);
    // the hot value is read from (x+1, y): it shows up at x = 0, y = 1
    CHECK(got.at(1, 0) == 1.0);
    CHECK(got.at(1, 1) == 0.0);
  }
  SECTION("random maps and flows") {
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
      Grid m = oracle::random_grid(rng, 6, 6);
      FlowField f = oracle::random_flow(rng, 6, 6, 2.5);
      Grid got = warp(m, f);
      Grid want = oracle::warp(m, f);
      for (size_t i = 0; i < m.size(); ++i)
        CHECK(got.v[i] == Catch::Approx(want.v[i]).margin(1e-12));
    }
  }
}

TEST_CASE("warp is linear in the map") {
  Rng rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    Grid a = oracle::random_grid(rng, 5, 6), b = oracle::random_grid(rng, 5, 6);
    FlowField f = oracle::random_flow(rng, 5, 6, 2.0);
    double ca = rng.uniform(-2, 2), cb = rng.uniform(-2, 2);
    Grid lhs = warp(ca * a + cb * b, f);
    Grid wa = warp(a, f), wb = warp(b, f);
    for (size_t i = 0; i < lhs.size(); ++i)
      CHECK(lhs.v[i] == Catch::Approx(ca * wa.v[i] + cb * wb.v[i]).margin(1e-12));
  }
}

TEST_CASE("forward-backward warp round trip on synthetic rigid flow") {
  MotionSpec motion;
  motion.translation_amp_px = 1.0;
  motion.rotation_amp_deg = 3.0;
  motion.period_frames = 8;
  motion.phase = 0.15;
  FlowPair pair = analytic_flow_pair(motion, 2, 32, 32);

  // smooth test map
  Grid m(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      m.at(y, x) = 0.5 + 0.4 * std::sin(0.3 * x) * std::cos(0.25 * y);

  Grid rt = warp(warp(m, pair.forward), pair.backward);
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < m.size(); ++i) {
    num += (rt.v[i] - m.v[i]) * (rt.v[i] - m.v[i]);
    den += m.v[i] * m.v[i];
  }
  CHECK(std::sqrt(num / den) < 0.05);
}

TEST_CASE("warp gradient matches central finite differences") {
  Rng rng(5);
  Grid m = oracle::random_grid(rng, 6, 6);
  FlowField f = oracle::random_flow(rng, 6, 6, 1.5);
  // d(sum of warped map)/d(map)
  Grid analytic(6, 6);
  warp_backward(f, Grid(6, 6, 1.0), analytic);
  Grid fd = oracle::fd_grad([&](const Grid& x) { return warp(x, f).sum(); }, m);
  CHECK(oracle::grad_rel_err(analytic, fd) < 1e-4);
}

TEST_CASE("classical estimator: identical frames give near-zero flow") {
  VideoClip clip = generate_clip(VesselTreeSpec{3, 3.0, 0.5, 11}, MotionSpec{0, 0, 8, 0},
                                 DegradationSpec{0.6, 0.0, 0.7, 1.0}, 2, 64, 64);
  FlowField f = estimate_flow_classical(clip.frames[0].pixels, clip.frames[1].pixels,
                                        ClassicalFlowParams{}, FlowDirection::kForward);
  double linf = 0.0;
  for (size_t i = 0; i < f.u.size(); ++i)
    linf = std::max({linf, std::abs(f.u.v[i]), std::abs(f.v.v[i])});
  CHECK(linf < 0.1);
}

TEST_CASE("classical estimator recovers a known 2px shift on structured content") {
  // a clip with rich texture, then shift it by 2 px horizontally
  VideoClip clip = generate_clip(VesselTreeSpec{4, 4.0, 0.6, 13}, MotionSpec{0, 0, 8, 0},
                                 DegradationSpec{0.8, 0.0, 0.6, 1.0}, 2, 64, 64);
  const Grid& i0 = clip.frames[0].pixels;
  Grid i1(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      i1.at(y, x) = i0.at(y, std::clamp(x - 2, 0, 63));

  FlowField f =
      estimate_flow_classical(i0, i1, ClassicalFlowParams{}, FlowDirection::kForward);
  // structured region: pixels near the vessels, away from the border
  const BinaryMask& mask = clip.masks[0].second;
  double sum_u = 0.0;
  int n = 0;
  for (int y = 8; y < 56; ++y)
    for (int x = 8; x < 56; ++x)
      if (mask.at(y, x)) {
        sum_u += f.u.at(y, x);
        ++n;
      }
  REQUIRE(n > 0);
  double mean_u = sum_u / n;
  CHECK(mean_u > 1.5);
  CHECK(mean_u < 2.5);
}

TEST_CASE("ground-truth provider passes the clip flow through exactly") {
  VideoClip clip = generate_clip(VesselTreeSpec{2, 3.0, 0.4, 17}, MotionSpec{1.0, 2.0, 8, 0.2},
                                 DegradationSpec{}, 4, 32, 32);
  FlowProvider provider = FlowProvider::ground_truth(clip);
  FlowPair pair = provider.estimate_pair(clip.frames[1], clip.frames[2]);
  for (size_t i = 0; i < pair.forward.u.size(); ++i) {
    CHECK(pair.forward.u.v[i] == clip.flows[1].forward.u.v[i]);
    CHECK(pair.backward.v.v[i] == clip.flows[1].backward.v.v[i]);
  }
  CHECK(pair.forward.direction == FlowDirection::kForward);
  CHECK(pair.backward.direction == FlowDirection::kBackward);
}

TEST_CASE("flo32 sidecar files round-trip and validate") {
  auto dir = fs::temp_directory_path() / "smart_flow_test";
  fs::create_directories(dir);
  Rng rng(6);
  FlowField f = oracle::random_flow(rng, 8, 8, 3.0);
  // quantize to float32 so the round trip is bit-exact
  for (double& v : f.u.v) v = double(float(v));
  for (double& v : f.v.v) v = double(float(v));
  std::string path = (dir / flo32_name("clipX", 3, FlowDirection::kForward)).string();
  write_flo32(path, f);
  FlowField g = read_flo32(path, 8, 8, FlowDirection::kForward);
  for (size_t i = 0; i < f.u.size(); ++i) {
    CHECK(f.u.v[i] == g.u.v[i]);
    CHECK(f.v.v[i] == g.v.v[i]);
  }

  SECTION("missing sidecar raises") {
    CHECK_THROWS(read_flo32((dir / "nope.flo32").string(), 8, 8, FlowDirection::kForward));
  }
  SECTION("shape mismatch raises") {
    CHECK_THROWS(read_flo32(path, 16, 16, FlowDirection::kForward));
  }
  SECTION("precomputed provider reads the sidecar pair") {
    write_flo32((dir / flo32_name("clipX", 3, FlowDirection::kBackward)).string(), f);
    FlowProvider p = FlowProvider::precomputed(dir.string(), "clipX");
    ImageFrame frame{Grid(8, 8, 0.5), 3};
    FlowPair pair = p.estimate_pair(frame, ImageFrame{Grid(8, 8, 0.5), 4});
    CHECK(pair.forward.u.v[5] == f.u.v[5]);
  }
  fs::remove_all(dir);
}
