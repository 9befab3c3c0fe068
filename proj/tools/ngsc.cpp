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

// ngsc: train, encode, decode and evaluate the variable-rate image codec.

#include <CLI11.hpp>

#include <iostream>

#include "ngsc/cli.hpp"

namespace {

using namespace ngsc;

/// Flags override the config file, which overrides built-in defaults.
struct ConfigFlags {
  std::string config;
  std::vector<std::string> sets;
  uint64_t seed = 0;
  double desk_scale = 0, alpha = -1, w_roi = -1, lr = 0;
  std::string q_list;

  void add_to(CLI::App* app, bool training) {
    app->add_option("--config", config, "key = value configuration file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override one configuration key (key=value); repeatable");
    app->add_option("--seed", seed, "random seed");
    if (training) {
      app->add_option("--desk-scale", desk_scale, "divide the 400/350/100 epoch schedule by this factor");
      app->add_option("--alpha", alpha, "ROI emphasis in the distortion weight, [0, 1)");
      app->add_option("--lr", lr, "Adam learning rate");
    }
    app->add_option("--w-roi", w_roi, "ROI weight of the combined PSNR, (0, 1)");
    app->add_option("--q-list", q_list, "comma-separated QIndex values");
  }

  RunConfig resolve() const {
    RunConfig c;
    if (!config.empty()) c = RunConfig::load(config);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      if (!c.set(s.substr(0, eq), s.substr(eq + 1))) throw ConfigError("unknown configuration key '" + s.substr(0, eq) + "'");
    }
    if (seed) c.seed = seed;
    if (desk_scale > 0) c.desk_scale = desk_scale;
    if (alpha >= 0) c.alpha = alpha;
    if (w_roi >= 0) c.w_roi = w_roi;
    if (lr > 0) c.lr = lr;
    if (!q_list.empty()) c.q_list = parse_q_list(q_list);
    c.validate();
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ngsc: N-gram Swin-Transformer variable-rate image codec"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "write procedural training images");
  std::string synth_out;
  int synth_count = 64;
  int64_t synth_size = 96;
  uint64_t synth_seed = 1;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--count", synth_count, "number of images");
  synth->add_option("--size", synth_size, "image width and height");
  synth->add_option("--seed", synth_seed, "random seed");

  // train
  auto* train = app.add_subcommand("train", "three-phase rate-distortion training");
  ConfigFlags train_flags;
  train_flags.add_to(train, true);
  std::string train_data, train_out, train_resume;
  train->add_option("--data", train_data, "image directory (PNG or PPM)");
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--resume", train_resume, "training state (.state) to continue from")->check(CLI::ExistingFile);

  // encode
  auto* encode = app.add_subcommand("encode", "compress an image to a .ngsc stream");
  EncodeArgs enc;
  encode->add_option("--model", enc.model, "model checkpoint")->required()->check(CLI::ExistingFile);
  encode->add_option("input", enc.input, "input image")->required()->check(CLI::ExistingFile);
  encode->add_option("--out", enc.out, "output stream")->required();
  encode->add_option("--q", enc.q, "QIndex in [0, 1]");
  encode->add_option("--q-map", enc.q_map, "grayscale QIndex map image (overrides --q)")->check(CLI::ExistingFile);
  encode->add_option("--roi", enc.roi, "grayscale ROI mask image")->check(CLI::ExistingFile);
  encode->add_option("--recon", enc.recon, "also write the encoder-side reconstruction");

  // decode
  auto* decode = app.add_subcommand("decode", "reconstruct an image from a .ngsc stream");
  std::string dec_model, dec_in, dec_out;
  decode->add_option("--model", dec_model, "model checkpoint")->required()->check(CLI::ExistingFile);
  decode->add_option("input", dec_in, "input stream")->required()->check(CLI::ExistingFile);
  decode->add_option("--out", dec_out, "output image (.png or .ppm)")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "PSNR of reference/reconstruction pairs");
  std::vector<std::string> eval_pairs;
  std::vector<std::string> eval_streams;
  std::string eval_roi;
  double eval_w_roi = kDefaultWeightRoi;
  eval->add_option("pairs", eval_pairs, "reference reconstruction [reference reconstruction ...]")->required();
  eval->add_option("--stream", eval_streams, "stream per pair, for bpp (repeat in pair order)");
  eval->add_option("--roi", eval_roi, "ROI mask image")->check(CLI::ExistingFile);
  eval->add_option("--w-roi", eval_w_roi, "ROI weight of the combined PSNR");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "rate-distortion sweep over QIndex values");
  ConfigFlags sweep_flags;
  sweep_flags.add_to(sweep, false);
  std::string sweep_model, sweep_dir, sweep_out;
  sweep->add_option("--model", sweep_model, "model checkpoint")->required()->check(CLI::ExistingFile);
  sweep->add_option("--images", sweep_dir, "image directory")->required();
  sweep->add_option("--out", sweep_out, "output CSV")->required();

  // bdrate
  auto* bdrate = app.add_subcommand("bdrate", "Bjontegaard delta rate between two RD CSV files");
  std::string bd_anchor, bd_test, bd_out;
  bdrate->add_option("anchor", bd_anchor, "anchor CSV")->required()->check(CLI::ExistingFile);
  bdrate->add_option("test", bd_test, "test CSV")->required()->check(CLI::ExistingFile);
  bdrate->add_option("--out", bd_out, "also write the report here");

  // bitmap
  auto* bitmap = app.add_subcommand("bitmap", "bit-allocation map of the highest-entropy latent channel");
  std::string bm_model, bm_in, bm_out;
  double bm_q = 0.5;
  bitmap->add_option("--model", bm_model, "model checkpoint")->required()->check(CLI::ExistingFile);
  bitmap->add_option("input", bm_in, "input image")->required()->check(CLI::ExistingFile);
  bitmap->add_option("--q", bm_q, "QIndex in [0, 1]");
  bitmap->add_option("--out", bm_out, "output PGM")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      cmd_synth(synth_out, synth_count, synth_size, synth_size, synth_seed, std::cout);
    } else if (train->parsed()) {
      RunConfig cfg = train_flags.resolve();
      if (!train_data.empty()) cfg.data_dir = train_data;
      if (cfg.data_dir.empty()) throw ConfigError("train: no data directory (--data or data_dir in --config)");
      cmd_train(cfg, train_out, train_resume, std::cout);
    } else if (encode->parsed()) {
      cmd_encode(enc, std::cout);
    } else if (decode->parsed()) {
      cmd_decode(dec_model, dec_in, dec_out, std::cout);
    } else if (eval->parsed()) {
      if (eval_pairs.size() % 2) throw ConfigError("eval: pairs must come as reference reconstruction");
      if (!eval_streams.empty() && eval_streams.size() * 2 != eval_pairs.size())
        throw ConfigError("eval: give one --stream per pair or none");
      std::vector<EvalPair> pairs;
      for (size_t i = 0; i < eval_pairs.size(); i += 2)
        pairs.push_back({eval_pairs[i], eval_pairs[i + 1], eval_streams.empty() ? "" : eval_streams[i / 2]});
      cmd_eval(pairs, eval_roi, eval_w_roi, std::cout);
    } else if (sweep->parsed()) {
      cmd_sweep(sweep_model, sweep_dir, sweep_flags.resolve().q_list, sweep_out, std::cout);
    } else if (bdrate->parsed()) {
      cmd_bdrate(bd_anchor, bd_test, bd_out, std::cout);
    } else if (bitmap->parsed()) {
      if (!(bm_q >= 0 && bm_q <= 1)) throw ConfigError("--q must lie in [0, 1]");
      cmd_bitmap(bm_model, bm_in, bm_q, bm_out, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "ngsc: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
