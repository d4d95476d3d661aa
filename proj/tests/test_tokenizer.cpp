#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <functional>

#include "doctest.h"
#include "phaseformer/rng.hpp"
#include "phaseformer/tokenizer.hpp"

using namespace phaseformer;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error to be thrown");
  return ErrorKind::io;
}

// Inverse of patchify, test-side only: scatter patch rows back into frames.
FrameVolume unpatchify(const Tensor& patches, const PatchConfig& cfg,
                       const FrameVolume& like) {
  FrameVolume vol = like;
  size_t gh = cfg.H / cfg.P, gw = cfg.W / cfg.P, K = gh * gw;
  size_t plen = cfg.patch_len();
  for (size_t t = 0; t < cfg.T; ++t)
    for (size_t gr = 0; gr < gh; ++gr)
      for (size_t gc = 0; gc < gw; ++gc) {
        size_t k = gr * gw + gc, o = 0;
        for (size_t c = 0; c < cfg.C_in; ++c)
          for (size_t py = 0; py < cfg.P; ++py)
            for (size_t px = 0; px < cfg.P; ++px)
              vol.frames[((t * cfg.C_in + c) * cfg.H + gr * cfg.P + py) * cfg.W +
                         gc * cfg.P + px] = patches.data[(t * K + k) * plen + o++];
      }
  return vol;
}

FrameVolume make_volume(const PatchConfig& cfg, uint64_t target, Rng& rng) {
  FrameVolume vol;
  vol.T = cfg.T;
  vol.C_in = cfg.C_in;
  vol.H = cfg.H;
  vol.W = cfg.W;
  vol.frames.resize(cfg.T * cfg.C_in * cfg.H * cfg.W);
  for (double& v : vol.frames) v = rng.gauss();
  vol.source_indices = sample_window(target + 1, target, cfg);
  vol.target_index = target;
  return vol;
}

}  // namespace

TEST_CASE("sample_window arithmetic and clamping") {
  PatchConfig cfg;
  cfg.T = 4;
  cfg.R = 4;
  cfg.H = cfg.W = cfg.P = 1;
  cfg.C_in = 1;
  cfg.D = 1;

  CHECK(sample_window(200, 100, cfg) == std::vector<uint64_t>{88, 92, 96, 100});
  CHECK(sample_window(200, 4, cfg) == std::vector<uint64_t>{0, 0, 0, 4});
  CHECK(sample_window(200, 0, cfg) == std::vector<uint64_t>{0, 0, 0, 0});
  CHECK(kind_of([&] { sample_window(100, 100, cfg); }) == ErrorKind::index);

  // causality + spacing, random configurations
  Rng rng(11);
  for (int rep = 0; rep < 200; ++rep) {
    cfg.T = 1 + rng.uniform_int(12);
    cfg.R = 1 + rng.uniform_int(6);
    uint64_t len = 1 + rng.uniform_int(500);
    uint64_t target = rng.uniform_int(len);
    std::vector<uint64_t> w = sample_window(len, target, cfg);
    CHECK(w.size() == cfg.T);
    CHECK(w.back() == target);
    for (size_t j = 0; j < w.size(); ++j) {
      CHECK(w[j] <= target);
      if (j > 0) {
        CHECK(w[j] >= w[j - 1]);
        // spaced by exactly R unless the earlier index clamped to 0
        if (w[j - 1] != 0) CHECK(w[j] - w[j - 1] == cfg.R);
      }
    }
  }
}

TEST_CASE("patchify layout") {
  PatchConfig big;
  big.T = 1;
  big.H = big.W = 224;
  big.P = 16;
  big.C_in = 3;
  big.D = 8;
  CHECK(big.K() == 196);
  Rng rng(21);
  FrameVolume bv = make_volume(big, 0, rng);
  Tensor bp = patchify(bv, big);
  CHECK(bp.rows() == 196);
  CHECK(bp.cols() == 3 * 16 * 16);

  // whole frame as a single patch
  PatchConfig one;
  one.T = 2;
  one.H = one.W = one.P = 3;
  one.C_in = 2;
  one.D = 4;
  CHECK(one.K() == 1);
  FrameVolume ov = make_volume(one, 5, rng);
  Tensor op = patchify(ov, one);
  CHECK(op.rows() == 2);
  for (size_t t = 0; t < 2; ++t)
    for (size_t i = 0; i < one.patch_len(); ++i)
      CHECK(op.data[t * one.patch_len() + i] == ov.frames[t * one.patch_len() + i]);

  // constant frame: every patch row identical
  PatchConfig pc;
  pc.T = 1;
  pc.H = pc.W = 4;
  pc.P = 2;
  pc.C_in = 1;
  pc.D = 4;
  FrameVolume cv = make_volume(pc, 0, rng);
  for (double& v : cv.frames) v = 2.5;
  Tensor cp = patchify(cv, pc);
  CHECK(cp.rows() == 4);
  for (size_t i = 0; i < cp.size(); ++i) CHECK(cp.data[i] == 2.5);

  // round trip recovers the exact volume
  PatchConfig rc;
  rc.T = 3;
  rc.H = 6;
  rc.W = 4;
  rc.P = 2;
  rc.C_in = 2;
  rc.D = 4;
  FrameVolume rv = make_volume(rc, 9, rng);
  Tensor rp = patchify(rv, rc);
  CHECK(unpatchify(rp, rc, rv).frames == rv.frames);

  FrameVolume wrong = rv;
  wrong.H = 4;
  wrong.W = 6;
  CHECK(kind_of([&] { patchify(wrong, rc); }) == ErrorKind::dimension);
}

TEST_CASE("temporal position resizing") {
  // ramp per channel
  Tensor ramp(std::vector<size_t>{4, 2});
  for (size_t t = 0; t < 4; ++t) {
    ramp.at(t, 0) = static_cast<double>(t);
    ramp.at(t, 1) = 10.0 * static_cast<double>(t);
  }
  Tensor up = resize_temporal_positions(ramp, 7);
  std::vector<double> want = {0, 0.5, 1, 1.5, 2, 2.5, 3};
  for (size_t i = 0; i < 7; ++i) {
    CHECK(up.at(i, 0) == doctest::Approx(want[i]).epsilon(1e-14));
    CHECK(up.at(i, 1) == doctest::Approx(10 * want[i]).epsilon(1e-14));
  }

  // identity resize returns the very same values
  Rng rng(31);
  Tensor table = Tensor::randn({16, 3}, rng);
  CHECK(resize_temporal_positions(table, 16).data == table.data);

  // ramps survive a 16 -> 24 -> 16 round trip
  Tensor ramp16(std::vector<size_t>{16, 1});
  for (size_t t = 0; t < 16; ++t) ramp16[t] = 3.0 * static_cast<double>(t) - 5.0;
  Tensor back = resize_temporal_positions(resize_temporal_positions(ramp16, 24), 16);
  for (size_t t = 0; t < 16; ++t) CHECK(back[t] == doctest::Approx(ramp16[t]).epsilon(1e-12));

  CHECK(kind_of([&] { resize_temporal_positions(table, 0); }) == ErrorKind::argument);
  CHECK(kind_of([&] {
          resize_temporal_positions(Tensor::matrix(1, 3, {1, 2, 3}), 4);
        }) == ErrorKind::argument);
}

TEST_CASE("embedding assembles projections and positions") {
  PatchConfig cfg;
  cfg.T = 2;
  cfg.R = 1;
  cfg.H = 1;
  cfg.W = 2;
  cfg.P = 1;
  cfg.C_in = 1;
  cfg.D = 2;
  REQUIRE(cfg.K() == 2);

  FrameVolume vol;
  vol.T = 2;
  vol.C_in = 1;
  vol.H = 1;
  vol.W = 2;
  vol.frames = {1, 2, 3, 4};
  vol.source_indices = {6, 7};
  vol.target_index = 7;

  EmbeddingParams p;
  p.patch_w = Tensor::matrix(1, 2, {1, 2});
  p.patch_b = Tensor::vec({0.5, -1});
  p.cls_token = Tensor::vec({7, 8});
  p.pos_spatial = Tensor::matrix(2, 2, {0.1, 0.2, 0.3, 0.4});
  p.pos_temporal = Tensor::matrix(2, 2, {10, 20, 30, 40});
  p.pos_cls = Tensor::vec({0.01, 0.02});

  TokenGrid grid = embed(vol, p, cfg);
  REQUIRE(grid.tokens.rows() == 5);
  std::vector<double> want = {7.01, 8.02,  11.6, 21.2, 12.8, 23.4,
                              33.6, 45.2,  34.8, 47.4};
  for (size_t i = 0; i < want.size(); ++i)
    CHECK(grid.tokens.data[i] == doctest::Approx(want[i]).epsilon(1e-14));

  // zero pixels and zero projection leave only the position sums
  FrameVolume zv = vol;
  zv.frames = {0, 0, 0, 0};
  EmbeddingParams zp = p;
  zp.patch_w = Tensor::matrix(1, 2, {0, 0});
  zp.patch_b = Tensor::vec({0, 0});
  TokenGrid zgrid = embed(zv, zp, cfg);
  for (size_t t = 0; t < 2; ++t)
    for (size_t k = 0; k < 2; ++k)
      for (size_t d = 0; d < 2; ++d)
        CHECK(zgrid.tokens.at(1 + t * 2 + k, d) ==
              doctest::Approx(p.pos_spatial.at(k, d) + p.pos_temporal.at(t, d)));

  // row count for the published window sizes
  Rng rng(41);
  for (size_t T : {8u, 12u, 16u}) {
    PatchConfig c2;
    c2.T = T;
    c2.R = 4;
    c2.H = c2.W = 2;
    c2.P = 1;
    c2.C_in = 1;
    c2.D = 4;
    FrameVolume v2 = make_volume(c2, 100, rng);
    EmbeddingParams p2;
    p2.patch_w = Tensor::randn({1, 4}, rng);
    p2.patch_b = Tensor::randn({1, 4}, rng);
    p2.cls_token = Tensor::randn({1, 4}, rng);
    p2.pos_spatial = Tensor::randn({4, 4}, rng);
    p2.pos_temporal = Tensor::randn({T, 4}, rng);
    p2.pos_cls = Tensor::randn({1, 4}, rng);
    CHECK(embed(v2, p2, c2).tokens.rows() == T * 4 + 1);

    // table of the wrong temporal length is rejected (resize is explicit)
    EmbeddingParams bad = p2;
    bad.pos_temporal = Tensor::randn({T + 1, 4}, rng);
    CHECK(kind_of([&] { embed(v2, bad, c2); }) == ErrorKind::input);
  }
}

TEST_CASE("frame volume files round-trip and reject corruption") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "pf_tokenizer_test";
  fs::create_directories(dir);
  std::string path = (dir / "vol.fvol").string();

  PatchConfig cfg;
  cfg.T = 3;
  cfg.R = 2;
  cfg.H = 2;
  cfg.W = 2;
  cfg.P = 1;
  cfg.C_in = 2;
  cfg.D = 4;
  FrameVolume vol;
  vol.T = 3;
  vol.C_in = 2;
  vol.H = 2;
  vol.W = 2;
  vol.frames.resize(3 * 2 * 2 * 2);
  for (size_t i = 0; i < vol.frames.size(); ++i)
    vol.frames[i] = 0.25 * static_cast<double>(i) - 1.5;  // exactly representable in f32
  vol.source_indices = {4, 6, 8};
  vol.target_index = 8;

  save_frame_volume(path, vol);
  FrameVolume back = load_frame_volume(path);
  CHECK(back.T == vol.T);
  CHECK(back.C_in == vol.C_in);
  CHECK(back.H == vol.H);
  CHECK(back.W == vol.W);
  CHECK(back.source_indices == vol.source_indices);
  CHECK(back.target_index == 8);
  CHECK(back.frames == vol.frames);

  CHECK(kind_of([&] { load_frame_volume((dir / "missing.fvol").string()); }) ==
        ErrorKind::io);

  // truncation anywhere is a format error
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  for (size_t cut : {size_t{3}, size_t{18}, size_t{40}, bytes.size() - 1}) {
    std::string trunc_path = (dir / "trunc.fvol").string();
    std::ofstream out(trunc_path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(cut));
    out.close();
    CHECK(kind_of([&] { load_frame_volume(trunc_path); }) == ErrorKind::format);
  }

  // header target word must agree with the last source index
  {
    std::string mangled = bytes;
    mangled[16] = static_cast<char>(mangled[16] + 1);
    std::string bad_path = (dir / "bad_target.fvol").string();
    std::ofstream out(bad_path, std::ios::binary | std::ios::trunc);
    out.write(mangled.data(), static_cast<std::streamsize>(mangled.size()));
    out.close();
    CHECK(kind_of([&] { load_frame_volume(bad_path); }) == ErrorKind::format);
  }

  // extra trailing bytes are rejected too
  {
    std::string padded = bytes + std::string(4, '\0');
    std::string pad_path = (dir / "padded.fvol").string();
    std::ofstream out(pad_path, std::ios::binary | std::ios::trunc);
    out.write(padded.data(), static_cast<std::streamsize>(padded.size()));
    out.close();
    CHECK(kind_of([&] { load_frame_volume(pad_path); }) == ErrorKind::format);
  }

  // descending source indices are rejected
  {
    FrameVolume bad = vol;
    bad.source_indices = {6, 4, 8};
    CHECK(kind_of([&] { save_frame_volume(path, bad); }) == ErrorKind::input);
  }

  fs::remove_all(dir);
}
