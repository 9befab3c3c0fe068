// Copyright 2026 The ngsc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "ngsc/cli.hpp"

using namespace ngsc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ngsc_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  const auto b = read_file(p.string());
  return {b.begin(), b.end()};
}

RunConfig tiny_config(const fs::path& data) {
  RunConfig c;
  for (const auto& [k, v] : std::vector<std::pair<std::string, std::string>>{{"channels", "8"},
                                                                           {"latent_channels", "16"},
                                                                           {"hyper_channels", "8"},
                                                                           {"heads", "2"},
                                                                           {"blocks_per_atm", "1"},
                                                                           {"token_hidden", "8"}})
    EXPECT_TRUE(c.set(k, v));
  c.desk_scale = 400;
  c.val_fraction = 0;
  c.data_dir = data.string();
  c.validate();
  return c;
}

// One tiny trained model shared by the command tests.
struct Fixture {
  fs::path root, data, model;
  Fixture() {
    root = temp_dir("fixture");
    data = root / "data";
    std::ostringstream log;
    cmd_synth(data.string(), 3, 64, 64, 2, log);
    model = cmd_train(tiny_config(data), (root / "run").string(), "", log).model_path;
  }
  static Fixture& get() {
    static Fixture f;
    return f;
  }
};

}  // namespace

TEST(QList, ParseAndFormat) {
  EXPECT_EQ(parse_q_list("0.1,0.5, 0.9"), (std::vector<double>{0.1, 0.5, 0.9}));
  EXPECT_EQ(parse_q_list(format_q_list({0, 0.25, 1})), (std::vector<double>{0, 0.25, 1}));
  EXPECT_THROW(parse_q_list("0.5,0.3"), ConfigError);
  EXPECT_THROW(parse_q_list("0.1,1.5"), ConfigError);
  EXPECT_THROW(parse_q_list("0.1,x"), ConfigError);
  EXPECT_THROW(parse_q_list(""), ConfigError);
}

TEST(RunConfig, TextRoundTripAndErrors) {
  RunConfig c;
  c.set("lr", "0.0005");
  c.set("q_list", "0.2,0.4");
  c.set("latent_channels", "64");
  c.data_dir = "/some/dir";
  const RunConfig back = RunConfig::parse(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.lr, 0.0005);
  EXPECT_EQ(back.model.latent_channels, 64);
  EXPECT_EQ(back.q_list, (std::vector<double>{0.2, 0.4}));
  EXPECT_THROW(RunConfig::parse("bogus = 1\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("lr = fast\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("batch = 1.5\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("alpha = 1\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("crop = 100\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("w_roi = 0\n"), ConfigError);
}

TEST(Commands, TrainWritesModelLogAndConfig) {
  auto& f = Fixture::get();
  ASSERT_TRUE(fs::exists(f.model));
  const auto hash = fnv1a64(read_file(f.model.string()));
  const std::string cfg = slurp(f.model.string() + ".config.txt");
  EXPECT_NE(cfg.find("model_hash = " + hash_hex(hash)), std::string::npos);
  EXPECT_NE(cfg.find("latent_channels = 16"), std::string::npos);
  for (const char* name : {"train_log.csv", "phase1.ngwt", "phase3.ngwt", "phase3.state"})
    EXPECT_TRUE(fs::exists(f.root / "run" / name)) << name;
}

TEST(Commands, EncodeDecodeEvalRoundTrip) {
  auto& f = Fixture::get();
  auto dir = temp_dir("codec");
  const auto img = (dir / "in.png").string();
  write_png(img, synthesize_image(9, 64, 128));
  std::ostringstream out;
  EncodeArgs a{f.model.string(), img, (dir / "in.ngsc").string(), 0.7, "", "", (dir / "enc.png").string()};
  const auto enc = cmd_encode(a, out);
  const auto dec = cmd_decode(f.model.string(), a.out, (dir / "dec.png").string(), out);
  ASSERT_EQ(dec.x_hat.shape(), enc.x_hat.shape());
  for (int64_t i = 0; i < enc.x_hat.numel(); ++i) ASSERT_EQ(dec.x_hat[i], enc.x_hat[i]);
  EXPECT_EQ(read_file((dir / "enc.png").string()), read_file((dir / "dec.png").string()));

  const auto hash = hash_hex(fnv1a64(read_file(f.model.string())));
  for (const char* art : {"in.ngsc.config.txt", "dec.png.config.txt"})
    EXPECT_NE(slurp(dir / art).find("model_hash = " + hash), std::string::npos) << art;

  std::ostringstream eval_out;
  auto rows = cmd_eval({{img, (dir / "dec.png").string(), a.out}}, "", kDefaultWeightRoi, eval_out);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_NEAR(rows[0].psnr, psnr(read_image(img), read_image((dir / "dec.png").string())), 1e-9);
  EXPECT_NEAR(rows[0].bpp, 8.0 * static_cast<double>(read_file(a.out).size()) / (64 * 128), 1e-12);

  // Encoding twice yields identical bytes.
  a.out = (dir / "again.ngsc").string();
  cmd_encode(a, out);
  EXPECT_EQ(read_file(a.out), read_file((dir / "in.ngsc").string()));
  fs::remove_all(dir);
}

TEST(Commands, RoiAndQMapInputsAreChecked) {
  auto& f = Fixture::get();
  auto dir = temp_dir("masks");
  const auto img = (dir / "in.png").string();
  write_png(img, synthesize_image(10, 64, 64));
  Tensor<float> half({1, 1, 64, 64}, 0.0f);
  for (int64_t y = 0; y < 64; ++y)
    for (int64_t x = 32; x < 64; ++x) half[y * 64 + x] = 1.0f;
  write_png((dir / "roi.png").string(), half);
  write_png((dir / "small.png").string(), Tensor<float>({1, 1, 32, 32}, 1.0f));
  std::ostringstream out;
  EncodeArgs a{f.model.string(), img, (dir / "a.ngsc").string(), 0.5, (dir / "roi.png").string(), "", ""};
  EXPECT_NO_THROW(cmd_encode(a, out));
  a.q_map = (dir / "roi.png").string();
  EXPECT_NO_THROW(cmd_encode(a, out));
  EXPECT_NEAR(parse_bitstream(read_file(a.out)).q(), 0.5, 1e-4);
  a.roi = (dir / "small.png").string();
  EXPECT_THROW(cmd_encode(a, out), ShapeError);
  a.roi.clear();
  a.q_map.clear();
  a.q = 1.5;
  EXPECT_THROW(cmd_encode(a, out), ConfigError);

  std::ostringstream eval_out;
  auto rows = cmd_eval({{img, img, ""}}, (dir / "roi.png").string(), 0.8, eval_out);
  EXPECT_EQ(rows[0].psnr, kPsnrCap);
  EXPECT_EQ(rows[0].bpp, -1);
  fs::remove_all(dir);
}

TEST(Commands, SweepBdrateAndBitmap) {
  auto& f = Fixture::get();
  auto dir = temp_dir("sweep");
  std::ostringstream out;
  const auto csv = (dir / "rd.csv").string();
  auto curve = cmd_sweep(f.model.string(), f.data.string(), {0.1, 0.5, 0.9}, csv, out);
  EXPECT_EQ(curve.points.size(), 3u);
  EXPECT_TRUE(fs::exists(csv + ".dat"));
  EXPECT_NE(slurp(csv + ".config.txt").find("model_hash = "), std::string::npos);

  // The sweep is reproducible byte for byte.
  const auto csv2 = (dir / "rd2.csv").string();
  cmd_sweep(f.model.string(), f.data.string(), {0.1, 0.5, 0.9}, csv2, out);
  EXPECT_EQ(slurp(csv), slurp(csv2));

  // Identical curves: zero BD-rate. Needs a PSNR span of at least 1 dB.
  const auto ident = (dir / "ident.csv").string();
  write_text(ident, "q,bpp,psnr,psnr_roi,psnr_nroi\n0.1,0.2,28,28,28\n0.4,0.4,30,30,30\n0.7,0.8,32.5,32.5,32.5\n"
                    "0.9,1.3,34,34,34\n");
  std::ostringstream bd;
  EXPECT_NEAR(cmd_bdrate(ident, ident, (dir / "bd.txt").string(), bd), 0.0, 1e-12);
  EXPECT_NE(bd.str().find("0.00%"), std::string::npos);
  EXPECT_EQ(slurp(dir / "bd.txt"), bd.str());

  const auto pgm = (dir / "bits.pgm").string();
  auto m = cmd_bitmap(f.model.string(), (f.data / "synth_0000.png").string(), 0.5, pgm, out);
  EXPECT_EQ(m.height, 4);
  EXPECT_EQ(m.width, 4);
  EXPECT_EQ(read_image(pgm, true).dim(2), 64);
  EXPECT_TRUE(fs::exists(pgm + ".csv"));
  fs::remove_all(dir);
}

TEST(Commands, TrainIsReproducibleAndResumes) {
  auto& f = Fixture::get();
  std::ostringstream log;
  auto cfg = tiny_config(f.data);
  const auto again = cmd_train(cfg, (f.root / "rerun").string(), "", log);
  EXPECT_EQ(read_file(again.model_path), read_file(f.model.string()));
  const auto resumed = cmd_train(cfg, (f.root / "resumed").string(), (f.root / "run" / "phase1.state").string(), log);
  EXPECT_EQ(read_file(resumed.model_path), read_file(f.model.string()));
  EXPECT_THROW(cmd_train(cfg, (f.root / "bad").string(), (f.data / "synth_0000.png").string(), log), std::exception);
}
